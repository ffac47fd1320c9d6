use std::fmt::Write as _;

use metrise3d_core::solver::{metric_signature, BranchOutcome, Decision, Verdict};
use metrise3d_core::tensor::Sym2Cov;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gates {
    /// Largest component of `V`.
    pub weyl_max: f64,
    /// `|Q| / (|ε_{123}| |V|²)`.
    pub q_relative: Option<f64>,
    /// Discriminant of the unit-normalized pencil cubic.
    pub discriminant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRow {
    pub index: usize,
    pub phi: Option<f64>,
    pub psi: Option<f64>,
    pub omega: Option<[f64; 3]>,
    pub exactness: Option<f64>,
    pub residual: Option<f64>,
    pub probe_points: usize,
    pub skipped_points: usize,
    pub outcome: String,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub point: [f64; 3],
    pub h: f64,
    /// `g_{ab}` as `11, 12, 13, 22, 23, 33`.
    pub g: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// The metric is determined up to one overall constant; `h(p) = 1`.
    pub samples: Vec<MetricRow>,
    /// Numbers of positive and negative eigenvalues of `g` at the base point.
    pub signature: [usize; 2],
    pub levi_civita_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub decide_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub name: Option<String>,
    pub point: [f64; 3],
    pub order: usize,
    pub tol: f64,
    pub verdict: String,
    pub reason: Option<String>,
    pub mobility: Option<String>,
    pub gates: Gates,
    pub branches: Vec<BranchRow>,
    pub winning_branch: Option<usize>,
    pub metric: Option<MetricReport>,
    pub trace: Vec<String>,
    pub timings: Timings,
}

impl Report {
    pub fn from_decision(name: Option<String>, decision: &Decision, decide_ms: f64) -> Self {
        let d = &decision.diagnostics;
        let branches = d
            .branches
            .iter()
            .map(|b| BranchRow {
                index: b.index,
                phi: finite(b.phi),
                psi: finite(b.psi),
                omega: b.omega,
                exactness: b.exactness,
                residual: b.residual,
                probe_points: b.probe_points,
                skipped_points: b.skipped_points,
                outcome: match &b.outcome {
                    BranchOutcome::Metrisable => "Metrisable".to_string(),
                    BranchOutcome::NotMetrisable(r) => format!("NotMetrisable({r})"),
                    BranchOutcome::Indeterminate(r) => format!("Indeterminate({r})"),
                },
                note: b.note.clone(),
            })
            .collect();
        let (winning_branch, metric) = match &decision.verdict {
            Verdict::Metrisable { branch, solution } => {
                let samples: Vec<MetricRow> = solution
                    .metric
                    .iter()
                    .map(|m| MetricRow {
                        point: m.point,
                        h: m.h,
                        g: m.g,
                    })
                    .collect();
                let (pos, neg) = metric_signature(&Sym2Cov(samples[0].g));
                (
                    Some(*branch),
                    Some(MetricReport {
                        samples,
                        signature: [pos, neg],
                        levi_civita_residual: solution.levi_civita_residual,
                    }),
                )
            }
            _ => (None, None),
        };
        Report {
            schema_version: SCHEMA_VERSION,
            name,
            point: d.point,
            order: d.order,
            tol: d.tol,
            verdict: decision.verdict.name().to_string(),
            reason: decision.verdict.reason(),
            mobility: decision.mobility.map(|m| m.to_string()),
            gates: Gates {
                weyl_max: d.weyl_max,
                q_relative: d.q_relative.and_then(finite),
                discriminant: d.discriminant.and_then(finite),
            },
            branches,
            winning_branch,
            metric,
            trace: d.trace.clone(),
            timings: Timings { decide_ms },
        }
    }

    /// The report with timings zeroed, for comparisons across runs.
    pub fn without_timings(&self) -> Self {
        Report {
            timings: Timings { decide_ms: 0.0 },
            ..self.clone()
        }
    }

    /// The branch that decided the verdict: the winner, else the first.
    pub fn deciding_branch(&self) -> Option<&BranchRow> {
        match self.winning_branch {
            Some(i) => self.branches.iter().find(|b| b.index == i),
            None => self.branches.first(),
        }
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let p = self.point;
        if let Some(name) = &self.name {
            let _ = writeln!(s, "connection: {name}");
        }
        let _ = writeln!(s, "point: ({}, {}, {})  order: {}  tol: {:e}", p[0], p[1], p[2], self.order, self.tol);
        let _ = write!(s, "verdict: {}", self.verdict);
        if let Some(r) = &self.reason {
            let _ = write!(s, " ({r})");
        }
        s.push('\n');
        if let Some(m) = &self.mobility {
            let _ = writeln!(s, "degree of mobility: {m}");
        }
        let _ = writeln!(s, "max |V|: {:e}", self.gates.weyl_max);
        if let Some(q) = self.gates.q_relative {
            let _ = writeln!(s, "|Q| (relative): {q:e}");
        }
        if let Some(d) = self.gates.discriminant {
            let _ = writeln!(s, "pencil discriminant: {d:e}");
        }
        let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6e}"));
        for b in &self.branches {
            let _ = writeln!(
                s,
                "branch {}: {}  phi={} psi={} |dω|={} residual={}",
                b.index,
                b.outcome,
                opt(b.phi),
                opt(b.psi),
                opt(b.exactness),
                opt(b.residual)
            );
            if let Some(n) = &b.note {
                let _ = writeln!(s, "  {n}");
            }
        }
        if let Some(m) = &self.metric {
            let _ = writeln!(
                s,
                "metric (up to an overall constant, h = 1 at the base point), signature (+{}, -{}):",
                m.signature[0], m.signature[1]
            );
            for row in &m.samples {
                let g = row.g;
                let _ = writeln!(
                    s,
                    "  at ({}, {}, {}): h={:.9e} g11={:.9e} g12={:.3e} g13={:.3e} g22={:.9e} g23={:.3e} g33={:.9e}",
                    row.point[0], row.point[1], row.point[2], row.h, g[0], g[1], g[2], g[3], g[4], g[5]
                );
            }
            let _ = writeln!(s, "Levi-Civita check (relative): {:e}", m.levi_civita_residual);
        }
        let _ = writeln!(s, "time: {:.1} ms", self.timings.decide_ms);
        s
    }
}

/// One line of the scan CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub verdict: String,
    #[serde(rename = "|Q|")]
    pub q: Option<f64>,
    pub discriminant: Option<f64>,
    #[serde(rename = "φ")]
    pub phi: Option<f64>,
    #[serde(rename = "ψ")]
    pub psi: Option<f64>,
    pub residual: Option<f64>,
}

impl ScanRow {
    pub fn from_report(r: &Report) -> Self {
        let b = r.deciding_branch();
        let verdict = match &r.reason {
            Some(reason) => format!("{}({reason})", r.verdict),
            None => r.verdict.clone(),
        };
        ScanRow {
            x: r.point[0],
            y: r.point[1],
            z: r.point[2],
            verdict,
            q: r.gates.q_relative,
            discriminant: r.gates.discriminant,
            phi: b.and_then(|b| b.phi),
            psi: b.and_then(|b| b.psi),
            residual: b.and_then(|b| b.residual),
        }
    }

    pub fn failed(point: [f64; 3], verdict: &str) -> Self {
        ScanRow {
            x: point[0],
            y: point[1],
            z: point[2],
            verdict: verdict.to_string(),
            q: None,
            discriminant: None,
            phi: None,
            psi: None,
            residual: None,
        }
    }
}
