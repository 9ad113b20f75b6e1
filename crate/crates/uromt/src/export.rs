//! CSV tables and legacy VTK polylines. Every CSV starts with a header row and
//! has a fixed column count per file type.

use std::fmt::Write as _;
use std::path::Path;

use uromt_core::analysis::{FluxVector, MetricsReport, Pathline};
use uromt_core::CostBreakdown;

use crate::error::{Error, Result};
use crate::volume::write_atomic;

pub const PATHLINE_COLUMNS: [&str; 7] = ["line_id", "step", "x", "y", "z", "speed", "peclet"];
pub const FLUX_COLUMNS: [&str; 7] = ["line_id", "seed_x", "seed_y", "seed_z", "dx", "dy", "dz"];
pub const COST_COLUMNS: [&str; 5] = ["iteration", "gamma1", "gamma2", "gamma3", "total"];
pub const METRICS_COLUMNS: [&str; 3] = ["loop", "nmse_percent", "pctm_percent"];
pub const INTENSITY_COLUMNS: [&str; 5] = ["kind", "loop", "step", "time", "total_intensity"];

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn write_csv<const N: usize>(path: &Path, columns: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    write_atomic(path, &bytes)
}

pub fn write_pathlines_csv(path: &Path, lines: &[Pathline]) -> Result<()> {
    let rows = lines.iter().enumerate().flat_map(|(id, line)| {
        line.points.iter().enumerate().map(move |(step, p)| {
            [
                id.to_string(),
                step.to_string(),
                num(p[0]),
                num(p[1]),
                num(p[2]),
                num(line.speed[step]),
                num(line.peclet[step]),
            ]
        })
    });
    write_csv(path, PATHLINE_COLUMNS, rows)
}

pub fn write_flux_csv(path: &Path, vectors: &[FluxVector]) -> Result<()> {
    let rows = vectors.iter().enumerate().map(|(id, f)| {
        [
            id.to_string(),
            num(f.seed[0]),
            num(f.seed[1]),
            num(f.seed[2]),
            num(f.displacement[0]),
            num(f.displacement[1]),
            num(f.displacement[2]),
        ]
    });
    write_csv(path, FLUX_COLUMNS, rows)
}

pub fn write_cost_trace_csv(path: &Path, trace: &[CostBreakdown]) -> Result<()> {
    let rows = trace
        .iter()
        .enumerate()
        .map(|(i, c)| [i.to_string(), num(c.gamma1), num(c.gamma2), num(c.gamma3), num(c.total)]);
    write_csv(path, COST_COLUMNS, rows)
}

/// Loops are numbered from 1.
pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let rows = report
        .nmse
        .iter()
        .zip(&report.pctm)
        .enumerate()
        .map(|(k, (n, p))| [(k + 1).to_string(), num(*n), num(*p)]);
    write_csv(path, METRICS_COLUMNS, rows)
}

/// Total-intensity curves on a common time axis: image `k` sits at `t = k`,
/// interpolation `j` of loop `k` at `t = k + j/m` (`j = 1..m`).
pub fn write_intensity_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let inputs = report
        .input_mass
        .iter()
        .enumerate()
        .map(|(k, mass)| ["input".to_string(), k.to_string(), "0".into(), num(k as f64), num(*mass)]);
    let interps = report.interpolation_mass.iter().enumerate().flat_map(|(k, masses)| {
        let m = masses.len() as f64;
        masses.iter().enumerate().map(move |(j, mass)| {
            [
                "interpolation".to_string(),
                (k + 1).to_string(),
                (j + 1).to_string(),
                num(k as f64 + (j + 1) as f64 / m),
                num(*mass),
            ]
        })
    });
    write_csv(path, INTENSITY_COLUMNS, inputs.chain(interps))
}

/// Legacy ASCII VTK polydata: one polyline per pathline with `speed` and
/// `peclet` point attributes.
pub fn write_pathlines_vtk(path: &Path, lines: &[Pathline]) -> Result<()> {
    let total: usize = lines.iter().map(|l| l.points.len()).sum();
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nuromt pathlines\nASCII\nDATASET POLYDATA\n");
    writeln!(s, "POINTS {total} double").unwrap();
    for p in lines.iter().flat_map(|l| &l.points) {
        writeln!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]).unwrap();
    }
    writeln!(s, "LINES {} {}", lines.len(), total + lines.len()).unwrap();
    let mut offset = 0;
    for l in lines {
        write!(s, "{}", l.points.len()).unwrap();
        for i in offset..offset + l.points.len() {
            write!(s, " {i}").unwrap();
        }
        s.push('\n');
        offset += l.points.len();
    }
    writeln!(s, "POINT_DATA {total}").unwrap();
    for (name, values) in [("speed", lines.iter().flat_map(|l| &l.speed).collect::<Vec<_>>()), (
        "peclet",
        lines.iter().flat_map(|l| &l.peclet).collect(),
    )] {
        writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
        for v in values {
            // VTK readers reject `inf`.
            let v = if v.is_finite() { *v } else { f64::MAX.copysign(*v) };
            writeln!(s, "{v:?}").unwrap();
        }
    }
    write_atomic(path, s.as_bytes())
}
