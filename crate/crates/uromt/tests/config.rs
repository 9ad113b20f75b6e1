use uromt::config::{parse_config, parse_config_str, IndicatorMode, Preset};
use uromt_core::DiffusionBackend;

const FULL: &str = r#"
n1 = 8
n2 = 6
n3 = 4
q = 3
m = 4
dt = 0.25
dx = 1.0
dy = 0.5
dz = 2.0
sigma = 0.01
alpha = 100.0
beta = 20.0
indicator = "none"

[solver]
max_outer_iters = 7
cg_tol = 1e-3
diffusion = "cg"
diffusion_cg_tol = 1e-8

[post]
window = [1, 2]
seed_stride = 3
"#;

#[test]
fn full_file_parses() {
    let c = parse_config_str(FULL, None).unwrap();
    assert_eq!(c.dims, [8, 6, 4]);
    assert_eq!(c.spacing, [1.0, 0.5, 2.0]);
    assert_eq!((c.frames, c.solver.steps, c.solver.dt), (3, 4, 0.25));
    assert_eq!(c.indicator, IndicatorMode::None);
    assert_eq!(c.solver.max_outer_iters, 7);
    assert_eq!(c.solver.cg_max_iters, 20);
    assert_eq!(
        c.solver.diffusion,
        DiffusionBackend::ConjugateGradient {
            tol: 1e-8,
            max_iter: 1000
        }
    );
    assert_eq!(c.window(), [1, 2]);
    assert_eq!(c.post.seed_stride, 3);
}

#[test]
fn preset_fills_unset_keys() {
    let c = parse_config_str("preset = \"gauss-test-1\"\nalpha = 1234.0\n", None).unwrap();
    assert_eq!((c.solver.alpha, c.solver.beta), (1234.0, 5000.0));
    assert_eq!(c.dims, [50, 50, 50]);
    let c = parse_config_str("beta = 7.0\n", Some(Preset::RatBrain)).unwrap();
    assert_eq!((c.dims, c.frames, c.solver.beta), ([56, 106, 51], 15, 7.0));
    assert_eq!(c.indicator, IndicatorMode::AllOnes);
}

#[test]
fn table_presets() {
    let g1 = Preset::GaussTest1.config();
    assert_eq!((g1.solver.alpha, g1.solver.beta), (9000.0, 5000.0));
    let rat = Preset::RatBrain.config();
    assert_eq!((rat.dims, rat.frames, rat.solver.beta), ([56, 106, 51], 15, 50.0));
    assert_eq!("gauss-test-2".parse::<Preset>().unwrap(), Preset::GaussTest2);
    assert!("gauss-test-3".parse::<Preset>().is_err());
}

#[test]
fn invalid_values_name_their_key() {
    let cases = [
        (FULL.replace("sigma = 0.01", "sigma = -0.01"), "`sigma`"),
        (FULL.replace("alpha = 100.0", "alpha = 0.0"), "`alpha`"),
        (FULL.replace("q = 3", "q = 1"), "`q`"),
        (FULL.replace("n2 = 6", "n2 = 0"), "`n2`"),
        (FULL.replace("window = [1, 2]", "window = [1, 3]"), "`post.window`"),
        (FULL.replace("diffusion = \"cg\"", "diffusion = \"fft\""), "`solver.diffusion`"),
        (FULL.replace("cg_tol = 1e-3", "cg_tol = 0.0"), "`solver.cg_tol`"),
        (FULL.replace("m = 4", "m = 0"), "`m`"),
        (format!("{FULL}\n[extra]\n"), "extra"),
        (FULL.replace("seed_stride", "seed_strides"), "seed_strides"),
        (FULL.replace("indicator = \"none\"", "indicator = \"some\""), "some"),
        (FULL.replace("dt = 0.25\n", ""), "`dt`"),
    ];
    for (text, key) in cases {
        let err = parse_config_str(&text, None).unwrap_err().to_string();
        assert!(err.contains(key), "expected {key} in: {err}");
    }
}

#[test]
fn file_errors_carry_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "sigma = -1.0\n").unwrap();
    let err = parse_config(&p, Some(Preset::GaussTest2)).unwrap_err().to_string();
    assert!(err.contains("bad.toml") && err.contains("`sigma`"), "{err}");
}

#[test]
fn resolution_override_keeps_the_domain() {
    let c = Preset::GaussTest1.config().with_resolution(24).unwrap();
    assert_eq!(c.dims, [24; 3]);
    assert!((c.spacing[0] - 50.0 / 24.0).abs() < 1e-15);
    let back = parse_config_str(&c.to_toml(), None).unwrap();
    assert_eq!(back, c);
}
