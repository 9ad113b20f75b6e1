use uromt_core::analysis::{
    eulerian_maps_from, flux_vectors, masked_mean, metrics_from, nmse, pctm, peclet, seed_points, PathlineTracer,
};
use uromt_core::{Grid, ScalarField, VectorField};

fn swirl(grid: Grid, t: f64) -> VectorField {
    let c = grid.extent().map(|e| e / 2.0);
    VectorField::from_fn(grid, |i, j, k| {
        let p = grid.center(grid.index(i, j, k));
        let (x, y) = (p[0] - c[0], p[1] - c[1]);
        [-0.3 * y * (1.0 + t), 0.3 * x, 0.05 * (p[2] - c[2])]
    })
}

fn tracer(grid: Grid, velocities: Vec<VectorField>, substeps: usize) -> PathlineTracer {
    let rho = vec![ScalarField::constant(grid, 1.0); velocities.len()];
    PathlineTracer::new(velocities, &rho, 0.4, 0.002, substeps).unwrap()
}

#[test]
fn uniform_field_moves_particles_by_v_t() {
    let grid = Grid::new([12, 10, 9], [1.0, 0.5, 2.0]).unwrap();
    let v = [0.7, -0.3, 0.45];
    let intervals = 6;
    let t = tracer(grid, vec![VectorField::uniform(grid, v); intervals], 10);
    let total_time = 0.4 * intervals as f64;
    let vnorm = (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let seed = [3.0, 2.0, 6.0];
    let line = t.trace(seed);
    assert_eq!(line.points.len(), intervals + 1);
    for a in 0..3 {
        let err = (line.displacement()[a] - v[a] * total_time).abs();
        assert!(err <= 1e-6 * vnorm * total_time, "axis {a}: error {err}");
    }
    assert_eq!(line.displacement(), {
        let last = line.points.last().unwrap();
        [last[0] - line.points[0][0], last[1] - line.points[0][1], last[2] - line.points[0][2]]
    });
    assert!(line.speed.iter().all(|s| (s - vnorm).abs() < 1e-12));
}

#[test]
fn flux_is_invariant_to_refinement_for_uniform_fields() {
    let grid = Grid::unit([10, 10, 10]).unwrap();
    let fields = vec![VectorField::uniform(grid, [0.5, 0.25, -0.5]); 4];
    let seeds = [[2.0, 2.0, 7.0], [4.0, 5.0, 6.0]];
    let coarse = flux_vectors(&tracer(grid, fields.clone(), 1).trace_all(&seeds));
    let fine = flux_vectors(&tracer(grid, fields, 40).trace_all(&seeds));
    for (a, b) in coarse.iter().zip(&fine) {
        for ax in 0..3 {
            assert!((a.displacement[ax] - b.displacement[ax]).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_field_leaves_particles_in_place() {
    let grid = Grid::unit([6, 6, 6]).unwrap();
    let t = tracer(grid, vec![VectorField::zeros(grid); 5], 10);
    let line = t.trace([1.3, 2.7, 4.1]);
    assert!(line.points.iter().all(|p| *p == [1.3, 2.7, 4.1]));
    assert_eq!(line.displacement(), [0.0; 3]);
    assert!(line.peclet.iter().all(|&p| p == 0.0));
    assert_eq!(flux_vectors(&[line])[0].displacement, [0.0; 3]);
}

#[test]
fn euler_integration_converges_at_first_order() {
    let grid = Grid::unit([16, 16, 16]).unwrap();
    let fields: Vec<_> = (0..5).map(|i| swirl(grid, i as f64 * 0.1)).collect();
    let seed = [9.5, 7.0, 8.0];
    let endpoint = |s| *tracer(grid, fields.clone(), s).trace(seed).points.last().unwrap();
    let (p1, p2, p4) = (endpoint(4), endpoint(8), endpoint(16));
    let dist = |a: [f64; 3], b: [f64; 3]| ((0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>()).sqrt();
    let (e1, e2) = (dist(p1, p2), dist(p2, p4));
    let ratio = e1 / e2;
    assert!(e2 > 0.0);
    assert!((1.6..2.5).contains(&ratio), "self-convergence ratio {ratio}");
}

#[test]
fn pathlines_do_not_depend_on_seed_order() {
    let grid = Grid::unit([10, 10, 10]).unwrap();
    let t = tracer(grid, (0..3).map(|i| swirl(grid, i as f64)).collect(), 10);
    let seeds = vec![[2.0, 3.0, 4.0], [7.5, 1.0, 2.0], [5.0, 5.0, 5.0], [0.0, 9.0, 9.0]];
    let forward = t.trace_all(&seeds);
    let mut reversed_seeds = seeds.clone();
    reversed_seeds.reverse();
    let mut backward = t.trace_all(&reversed_seeds);
    backward.reverse();
    assert_eq!(forward, backward);
}

#[test]
fn particles_stay_inside_the_domain() {
    let grid = Grid::unit([6, 6, 6]).unwrap();
    let t = tracer(grid, vec![VectorField::uniform(grid, [10.0, -10.0, 0.0]); 3], 5);
    let line = t.trace([2.0, 2.0, 2.0]);
    let last = line.points.last().unwrap();
    assert_eq!(*last, [5.0, 0.0, 2.0]);
}

#[test]
fn peclet_scales_inversely_with_sigma() {
    let grid = Grid::unit([8, 8, 8]).unwrap();
    let rho = ScalarField::from_fn(grid, |i, j, k| 1.0 + (i as f64 * 0.7).sin() + 0.1 * (j * k) as f64);
    let v = swirl(grid, 0.0);
    let a = peclet(&rho, &v, 0.01, 0.0).unwrap();
    let b = peclet(&rho, &v, 0.02, 0.0).unwrap();
    for (x, y) in a.values.values().iter().zip(b.values.values()) {
        if x.is_finite() && *x > 0.0 {
            assert!((x / y - 2.0).abs() < 1e-12);
        }
    }
}

#[test]
fn window_average_is_the_mean_of_its_maps() {
    let grid = Grid::unit([3, 3, 3]).unwrap();
    let v: Vec<Vec<VectorField>> = (0..3)
        .map(|k| (0..2).map(|j| VectorField::uniform(grid, [(k * 2 + j) as f64, 0.0, 0.0])).collect())
        .collect();
    let r: Vec<Vec<ScalarField>> = (0..3)
        .map(|k| (0..2).map(|j| ScalarField::constant(grid, k as f64 - j as f64)).collect())
        .collect();
    let vr: Vec<&[VectorField]> = v.iter().map(|x| x.as_slice()).collect();
    let rr: Vec<&[ScalarField]> = r.iter().map(|x| x.as_slice()).collect();
    let maps = eulerian_maps_from(&vr, &rr, 1..3).unwrap();
    assert!(maps.mean_speed.values().iter().all(|&s| (s - 3.5).abs() < 1e-12));
    assert!(maps.mean_source.values().iter().all(|&s| (s - 1.0).abs() < 1e-12));
    let single = eulerian_maps_from(&vr[..1], &rr[..1], 0..1).unwrap();
    assert_eq!(single.mean_speed.values()[0], 0.5);
    assert!(eulerian_maps_from(&vr, &rr, 2..2).is_err());
    assert_eq!(masked_mean(&maps.mean_source, |i| i < 3), Some(1.0));
    assert_eq!(masked_mean(&maps.mean_source, |_| false), None);
}

#[test]
fn metrics_are_scale_invariant() {
    let a = [1.0, 2.5, 0.3, 4.0];
    let b = [1.2, 2.0, 0.0, 4.5];
    let scaled = |x: &[f64], c: f64| x.iter().map(|v| v * c).collect::<Vec<_>>();
    for c in [0.001, 3.0, 1e6] {
        let (sa, sb) = (scaled(&a, c), scaled(&b, c));
        assert!((nmse(&sa, &sb).unwrap() - nmse(&a, &b).unwrap()).abs() < 1e-10);
        assert!((pctm(&sa, &sb).unwrap() - pctm(&a, &b).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn metrics_report_on_perfect_fit() {
    let grid = Grid::unit([2, 2, 2]).unwrap();
    let images: Vec<_> = (1..4).map(|k| ScalarField::constant(grid, k as f64)).collect();
    let interps: Vec<Vec<ScalarField>> = images[1..].iter().map(|im| vec![im.clone(), im.clone()]).collect();
    let refs: Vec<&[ScalarField]> = interps.iter().map(|x| x.as_slice()).collect();
    let report = metrics_from(&images, &refs).unwrap();
    assert_eq!(report.nmse, vec![0.0, 0.0]);
    assert_eq!(report.pctm, vec![0.0, 0.0]);
    assert_eq!(report.input_mass, vec![8.0, 16.0, 24.0]);
}

#[test]
fn seeds_respect_threshold_and_stride() {
    let grid = Grid::unit([6, 6, 6]).unwrap();
    let rho = ScalarField::from_fn(grid, |i, _, _| i as f64);
    let seeds = seed_points(&rho, 0.5, 2);
    assert_eq!(seeds.len(), 9);
    assert!(seeds.iter().all(|p| p[0] == 4.0));
}
