use std::io::Write;
use std::time::Instant;

use metrise3d_core::expr::Expr;
use metrise3d_core::projective::{verify_metrisability_equation, ConnectionSpec, ResidualReport};
use metrise3d_core::solver::{decide, Options, SolverError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::document::CliError;
use crate::report::{Report, ScanRow};

pub const TOL_ENV: &str = "METRISE3D_TOL";
pub const DEFAULT_POINT: [f64; 3] = [1.0, 1.0, 1.0];

/// `--tol`, else `METRISE3D_TOL`, else the library default.
pub fn resolve_tol(flag: Option<f64>) -> Result<f64, CliError> {
    let tol = match flag {
        Some(t) => t,
        None => match std::env::var(TOL_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Argument(format!("{TOL_ENV}={v} is not a number")))?,
            Err(_) => Options::default().tol,
        },
    };
    if !(tol.is_finite() && tol > 0.0) {
        return Err(CliError::Argument(format!("tolerance must be positive, got {tol}")));
    }
    Ok(tol)
}

pub fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected X,Y,Z, got {s:?}"));
    }
    let mut p = [0.0f64; 3];
    for (x, part) in p.iter_mut().zip(&parts) {
        *x = part.parse().map_err(|_| format!("{part:?} is not a number"))?;
        if !x.is_finite() {
            return Err(format!("{part:?} is not finite"));
        }
    }
    Ok(p)
}

/// One axis of a scan box, `min:max:n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    /// Grid values; a single-sample axis sits at `min`.
    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.min];
        }
        (0..self.n)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.n - 1) as f64)
            .collect()
    }
}

pub fn parse_box(s: &str) -> Result<[Axis; 3], String> {
    let axes: Vec<&str> = s.split(',').collect();
    if axes.len() != 3 {
        return Err(format!("expected three axes xmin:xmax:n,..., got {s:?}"));
    }
    let mut out = [Axis { min: 0.0, max: 0.0, n: 1 }; 3];
    for (axis, spec) in out.iter_mut().zip(&axes) {
        let f: Vec<&str> = spec.split(':').map(str::trim).collect();
        if f.len() != 3 {
            return Err(format!("axis {spec:?} is not min:max:n"));
        }
        let num = |t: &str| t.parse::<f64>().ok().filter(|x| x.is_finite());
        let (Some(min), Some(max), Ok(n)) = (num(f[0]), num(f[1]), f[2].parse::<usize>()) else {
            return Err(format!("axis {spec:?} is not min:max:n"));
        };
        if n == 0 {
            return Err(format!("axis {spec:?} has no samples"));
        }
        *axis = Axis { min, max, n };
    }
    Ok(out)
}

pub fn analyze(
    spec: &ConnectionSpec,
    name: Option<String>,
    point: [f64; 3],
    options: &Options,
) -> Result<Report, CliError> {
    let start = Instant::now();
    let decision = decide(spec, point, options)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(Report::from_decision(name, &decision, ms))
}

/// Grid points in lexicographic `(x, y, z)` order.
pub fn grid(axes: &[Axis; 3]) -> Vec<[f64; 3]> {
    let [xs, ys, zs] = axes.map(|a| a.values());
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &x in &xs {
        for &y in &ys {
            for &z in &zs {
                out.push([x, y, z]);
            }
        }
    }
    out
}

/// Full reports over the grid, in grid order.
pub fn scan_reports(
    spec: &ConnectionSpec,
    name: Option<String>,
    axes: &[Axis; 3],
    options: &Options,
) -> Vec<([f64; 3], Result<Report, SolverError>)> {
    let run = || -> Vec<_> {
        grid(axes)
            .into_par_iter()
            .map(|p| {
                let r = analyze(spec, name.clone(), p, options).map_err(|e| match e {
                    CliError::Solver(e) => e,
                    other => unreachable!("analyze only fails in the solver: {other}"),
                });
                (p, r)
            })
            .collect()
    };
    // jet tensors live on the stack; the default worker stack is too small
    match rayon::ThreadPoolBuilder::new().stack_size(WORKER_STACK).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

const WORKER_STACK: usize = 64 << 20;

pub fn scan_rows(results: &[([f64; 3], Result<Report, SolverError>)]) -> Vec<ScanRow> {
    results
        .iter()
        .map(|(p, r)| match r {
            Ok(report) => ScanRow::from_report(report),
            Err(_) => ScanRow::failed(*p, "DomainError"),
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[ScanRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: "<csv>".into(),
        source,
    })?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerifyStatus {
    Pass,
    Fail,
    /// `σ` is degenerate everywhere sampled; the residual means nothing.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub status: VerifyStatus,
    pub tol: f64,
    pub points: Vec<[f64; 3]>,
    pub max_absolute: f64,
    pub max_relative: f64,
    pub warning: Option<String>,
}

impl VerifyReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        if let Some(w) = &self.warning {
            s.push_str(&format!("warning: {w}\n"));
        }
        s.push_str(&format!(
            "{:?}: max residual {:e} absolute, {:e} relative over {} points (tol {:e})\n",
            self.status,
            self.max_absolute,
            self.max_relative,
            self.points.len(),
            self.tol
        ));
        s
    }
}

const VERIFY_SEED: u64 = 0x5eed_0f_5167a;
const VERIFY_HALF_WIDTH: f64 = 0.5;

/// Deterministic sample of `n` points around `center` at which the
/// connection and `σ` both evaluate.
pub fn verify_points(spec: &ConnectionSpec, sigma: &[Expr; 6], center: [f64; 3], n: usize) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(VERIFY_SEED);
    let mut out = Vec::with_capacity(n);
    let regular = |q: [f64; 3]| {
        spec.normalized_jets(q, 1).is_ok() && sigma.iter().all(|s| s.eval_jet(q, 1).is_ok())
    };
    if regular(center) {
        out.push(center);
    }
    let mut attempts = 0;
    while out.len() < n && attempts < 100 * n.max(1) {
        attempts += 1;
        let q = center.map(|c| c + rng.gen_range(-VERIFY_HALF_WIDTH..VERIFY_HALF_WIDTH));
        if regular(q) {
            out.push(q);
        }
    }
    out.truncate(n);
    out
}

pub fn verify(
    spec: &ConnectionSpec,
    sigma: &[Expr; 6],
    center: [f64; 3],
    n: usize,
    tol: f64,
) -> Result<VerifyReport, CliError> {
    let points = verify_points(spec, sigma, center, n);
    if points.is_empty() {
        return Err(CliError::Argument(format!(
            "no regular sample points near ({}, {}, {})",
            center[0], center[1], center[2]
        )));
    }
    let degenerate = points.iter().all(|&q| {
        let v: Vec<f64> = sigma.iter().map(|s| s.eval(q).unwrap_or(0.0)).collect();
        let m = metrise3d_core::tensor::Sym2Contra([v[0], v[1], v[2], v[3], v[4], v[5]]);
        m.det().abs() <= tol * m.frobenius_sq().powf(1.5)
    });
    let residual: ResidualReport =
        verify_metrisability_equation(spec, sigma, &points).map_err(|e| CliError::Argument(e.to_string()))?;
    let (status, warning) = if degenerate {
        (
            VerifyStatus::Rejected,
            Some("REJECTED: sigma is degenerate at every sample point; the residual is not meaningful".to_string()),
        )
    } else if residual.max_relative < tol {
        (VerifyStatus::Pass, None)
    } else {
        (VerifyStatus::Fail, None)
    };
    Ok(VerifyReport {
        status,
        tol,
        points,
        max_absolute: residual.max_absolute,
        max_relative: residual.max_relative,
        warning,
    })
}
