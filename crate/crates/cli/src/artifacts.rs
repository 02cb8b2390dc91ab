//! CSV artifacts. Every real number is written with 17 significant digits so a
//! parse of the file reproduces the in-memory value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use tdid::appset::EllipsoidPair;
use tdid::cyclic::SampleDiagnostics;
use tdid::MonteCarloReport;

use crate::CliError;

/// Points per ellipse boundary in `ellipsoids.csv`.
pub const SLICE_POINTS: usize = 100;

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

pub fn write(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Designed experiment: `t, u1.., y1..` with `t` one-based.
pub fn design_csv(inputs: &DMatrix<f64>, outputs: &DMatrix<f64>) -> String {
    let mut header = vec!["t".to_string()];
    header.extend(names("u", inputs.nrows()));
    header.extend(names("y", outputs.nrows()));
    let mut s = header.join(",") + "\n";
    for t in 0..inputs.ncols() {
        let mut row = vec![(t + 1).to_string()];
        row.extend(inputs.column(t).iter().map(|v| num(*v)));
        row.extend(outputs.column(t).iter().map(|v| num(*v)));
        s += &(row.join(",") + "\n");
    }
    s
}

/// Inverse of [`design_csv`].
pub fn parse_design_csv(path: &Path, text: &str) -> Result<(DMatrix<f64>, DMatrix<f64>), CliError> {
    let bad = |line: usize, message: String| CliError::Config { path: path.to_path_buf(), line, column: 1, message };
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.split(',').collect(),
        None => return Err(bad(1, "empty design file".into())),
    };
    if header.first() != Some(&"t") {
        return Err(bad(1, "header must start with `t`".into()));
    }
    let n_u = header.iter().filter(|h| h.starts_with('u')).count();
    let n_y = header.iter().filter(|h| h.starts_with('y')).count();
    let expected = [names("u", n_u), names("y", n_y)].concat();
    if header[1..].iter().map(|h| h.to_string()).collect::<Vec<_>>() != expected {
        return Err(bad(1, format!("unexpected header `{}`", header.join(","))));
    }
    let mut u = Vec::new();
    let mut y = Vec::new();
    let mut samples = 0;
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(bad(i + 1, format!("expected {} fields, found {}", header.len(), fields.len())));
        }
        if fields[0].parse::<usize>().ok() != Some(samples + 1) {
            return Err(bad(i + 1, format!("expected t = {}", samples + 1)));
        }
        for (k, f) in fields[1..].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| bad(i + 1, format!("`{f}` is not a number")))?;
            if k < n_u {
                u.push(v);
            } else {
                y.push(v);
            }
        }
        samples += 1;
    }
    Ok((DMatrix::from_vec(n_u, samples, u), DMatrix::from_vec(n_y, samples, y)))
}

/// One row per outer sample.
pub fn trace_csv(diagnostics: &[SampleDiagnostics]) -> String {
    let n_u = diagnostics.first().map_or(0, |d| d.first_input.len());
    let mut header = ["t", "cost", "margin", "inner_cycles", "converged", "rejected"].join(",");
    for name in names("u", n_u) {
        header += &format!(",{name}");
    }
    let mut s = header + "\n";
    for d in diagnostics {
        let _ = write!(
            s,
            "{},{},{},{},{},{}",
            d.t,
            num(d.cost),
            num(d.margin),
            d.inner_cycles,
            d.converged as u8,
            d.rejected as u8
        );
        for v in d.first_input.iter() {
            let _ = write!(s, ",{}", num(*v));
        }
        s.push('\n');
    }
    s
}

/// Square matrix with a `theta1..` header.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = names("theta", m.ncols()).join(",") + "\n";
    for r in 0..m.nrows() {
        s += &(m.row(r).iter().map(|v| num(*v)).collect::<Vec<_>>().join(",") + "\n");
    }
    s
}

/// Boundary samples of both ellipsoids on every coordinate plane `(θ_i, θ_j)`, the
/// other coordinates fixed at the centre. Unbounded slices are omitted.
pub fn ellipsoids_csv(pair: &EllipsoidPair) -> String {
    let mut s = String::from("set,i,j,x,y\n");
    let p = pair.center.len();
    for i in 0..p {
        for j in i + 1..p {
            for (set, slice) in [("app", pair.app_slice(i, j, SLICE_POINTS)), ("id", pair.id_slice(i, j, SLICE_POINTS))] {
                for (x, y) in slice.points.unwrap_or_default() {
                    let _ = writeln!(s, "{set},{},{},{},{}", i + 1, j + 1, num(x), num(y));
                }
            }
        }
    }
    s
}

/// One row per run: estimate, memberships and whether the estimator was flagged.
pub fn montecarlo_csv(report: &MonteCarloReport, n_theta: usize) -> String {
    let mut s = ["run", "seed", "stream"].join(",");
    for name in names("theta", n_theta) {
        s += &format!(",{name}");
    }
    s += ",in_id,in_app,flagged\n";
    for (k, est) in report.estimates.iter().enumerate() {
        let _ = write!(s, "{},{},{}", k + 1, report.seeds[k].base, report.seeds[k].stream);
        for v in est.iter() {
            let _ = write!(s, ",{}", num(*v));
        }
        let _ = writeln!(
            s,
            ",{},{},{}",
            report.inside_id[k] as u8,
            report.inside_app[k] as u8,
            report.flagged.contains(&k) as u8
        );
    }
    s
}
