//! Projective invariants of a torsion-free connection at a point.
//!
//! Conventions: `∇_a X^c = ∂_a X^c + Γ_{ab}{}^c X^b`, stored as
//! `gamma[a][b][c]`. Curvature is
//! `R_{de}{}^b{}_c = ∂_dΓ_{ec}{}^b − ∂_eΓ_{dc}{}^b + Γ_{df}{}^bΓ_{ec}{}^f − Γ_{ef}{}^bΓ_{dc}{}^f`
//! and the Weyl tensor is the trace-free part of
//! `W^{ab}{}_c = ε^{de(a}R_{de}{}^{b)}{}_c`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{DomainError, Expr, Var};
use crate::jet::Jet;
use crate::tensor::{
    delta, sum, Epsilon, Scalar, Sym2Contra, Sym2ContraGrad, Sym2Cov, Tensor3Mixed, Tensor3MixedCov,
    SYM_PAIRS,
};

/// `Γ_{ab}{}^c` indexed `[a][b][c]`.
pub type Christoffel<S> = [[[S; 3]; 3]; 3];

/// `R_{de}{}^b{}_c` indexed `[d][e][b][c]`.
pub type Riemann<S> = [[[[S; 3]; 3]; 3]; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectiveError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("connection is not symmetric: Γ_{{{a}{b}}}^{c} differs from Γ_{{{b}{a}}}^{c}")]
    Asymmetric { a: usize, b: usize, c: usize },
    #[error("volume form vanishes at ({}, {}, {})", point[0], point[1], point[2])]
    EpsilonVanishes { point: [f64; 3] },
    #[error("normalized connection does not preserve the volume form (residual {0:e})")]
    NotParallel(f64),
    #[error("Weyl tensor vanishes; no pencil to extract")]
    WeylVanishes,
    #[error("probe outputs have rank < 2 after {0} probes")]
    RankDeficient(usize),
    #[error("rebuilt Weyl tensor is not proportional to the original (residual {0:e})")]
    Inconsistent(f64),
}

/// A connection given by closed-form Christoffel symbols and a volume form.
///
/// The projectively equivalent connection `Γ̂` preserving `ε` and its first
/// partials are prepared symbolically once, at construction.
#[derive(Debug, Clone)]
pub struct ConnectionSpec {
    gamma: Christoffel<Expr>,
    epsilon: Expr,
    hat: Christoffel<Expr>,
    hat_partials: [Christoffel<Expr>; 3],
    eps_partials: [Expr; 3],
}

/// Deterministic sample points used to compare `Γ_{ab}` with `Γ_{ba}`.
const SYMMETRY_POINTS: [[f64; 3]; 5] = [
    [0.713, 1.127, 0.934],
    [1.301, 0.587, 1.219],
    [-0.442, 0.871, 1.513],
    [0.257, -1.093, 0.618],
    [2.113, 1.771, -0.389],
];

impl ConnectionSpec {
    /// Builds a spec, checking `Γ_{ab}{}^c = Γ_{ba}{}^c` structurally or, failing
    /// that, by agreement to 1e-12 at fixed sample points.
    pub fn new(gamma: Christoffel<Expr>, epsilon: Option<Expr>) -> Result<Self, ProjectiveError> {
        for a in 0..3 {
            for b in a + 1..3 {
                for c in 0..3 {
                    let (l, r) = (&gamma[a][b][c], &gamma[b][a][c]);
                    if l != r && !agree_numerically(l, r) {
                        return Err(ProjectiveError::Asymmetric { a, b, c });
                    }
                }
            }
        }
        let epsilon = epsilon.unwrap_or_else(|| Expr::constant(1.0));
        let eps_partials = Var::ALL.map(|v| epsilon.differentiate(v));
        // Υ_a = (∂_a ε / ε − Γ_{ad}{}^d) / 4
        let upsilon: [Expr; 3] = std::array::from_fn(|a| {
            let trace = (1..3).fold(gamma[a][0][0].clone(), |acc, d| Expr::add(&acc, &gamma[a][d][d]));
            Expr::mul(
                &Expr::constant(0.25),
                &Expr::sub(&Expr::div(&eps_partials[a], &epsilon), &trace),
            )
        });
        let hat: Christoffel<Expr> = std::array::from_fn(|a| {
            std::array::from_fn(|b| {
                std::array::from_fn(|c| {
                    let mut e = gamma[a.min(b)][a.max(b)][c].clone();
                    if a == c {
                        e = Expr::add(&e, &upsilon[b]);
                    }
                    if b == c {
                        e = Expr::add(&e, &upsilon[a]);
                    }
                    e
                })
            })
        });
        let hat_partials = Var::ALL.map(|v| {
            std::array::from_fn(|a| {
                std::array::from_fn(|b| std::array::from_fn(|c| hat[a][b][c].differentiate(v)))
            })
        });
        Ok(ConnectionSpec {
            gamma,
            epsilon,
            hat,
            hat_partials,
            eps_partials,
        })
    }

    /// Parses 27 Christoffel strings `[a][b][c]` and an optional volume form.
    pub fn parse(gamma: &[[[&str; 3]; 3]; 3], epsilon: Option<&str>) -> Result<Self, SpecParseError> {
        let mut parsed: Vec<Expr> = Vec::with_capacity(27);
        for (a, plane) in gamma.iter().enumerate() {
            for (b, row) in plane.iter().enumerate() {
                for (c, src) in row.iter().enumerate() {
                    parsed.push(
                        Expr::parse(src).map_err(|e| SpecParseError::Gamma { a, b, c, source: e })?,
                    );
                }
            }
        }
        let gamma = std::array::from_fn(|a| {
            std::array::from_fn(|b| std::array::from_fn(|c| parsed[9 * a + 3 * b + c].clone()))
        });
        let epsilon = epsilon
            .map(Expr::parse)
            .transpose()
            .map_err(SpecParseError::Epsilon)?;
        ConnectionSpec::new(gamma, epsilon).map_err(SpecParseError::Invalid)
    }

    pub fn gamma(&self) -> &Christoffel<Expr> {
        &self.gamma
    }

    pub fn epsilon(&self) -> &Expr {
        &self.epsilon
    }

    /// The `ε`-preserving representative `Γ̂` as expressions.
    pub fn normalized(&self) -> &Christoffel<Expr> {
        &self.hat
    }

    /// Jets of `Γ̂` at `p`. Symmetric pairs are evaluated once.
    pub fn normalized_jets(&self, p: [f64; 3], order: usize) -> Result<Christoffel<Jet>, DomainError> {
        christoffel_jets(&self.hat, p, order)
    }

    /// Value-level `Γ̂` at `p`.
    pub fn normalized_values(&self, p: [f64; 3]) -> Result<Christoffel<f64>, DomainError> {
        let mut out = [[[0.0; 3]; 3]; 3];
        for (a, b) in SYM_PAIRS {
            for c in 0..3 {
                let v = self.hat[a][b][c].eval(p)?;
                out[a][b][c] = v;
                out[b][a][c] = v;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecParseError {
    #[error("gamma[{a}][{b}][{c}]: {source}")]
    Gamma {
        a: usize,
        b: usize,
        c: usize,
        source: crate::expr::ParseError,
    },
    #[error("epsilon: {0}")]
    Epsilon(crate::expr::ParseError),
    #[error(transparent)]
    Invalid(ProjectiveError),
}

fn agree_numerically(l: &Expr, r: &Expr) -> bool {
    let mut compared = 0;
    for p in SYMMETRY_POINTS {
        match (l.eval(p), r.eval(p)) {
            (Ok(x), Ok(y)) => {
                if (x - y).abs() > 1e-12 * x.abs().max(y.abs()).max(1.0) {
                    return false;
                }
                compared += 1;
            }
            (Err(_), Err(_)) => {}
            _ => return false,
        }
    }
    compared > 0
}

fn christoffel_jets(
    exprs: &Christoffel<Expr>,
    p: [f64; 3],
    order: usize,
) -> Result<Christoffel<Jet>, DomainError> {
    let mut out = [[[Jet::zero(order); 3]; 3]; 3];
    for (a, b) in SYM_PAIRS {
        for c in 0..3 {
            let j = exprs[a][b][c].eval_jet(p, order)?;
            out[a][b][c] = j;
            out[b][a][c] = j;
        }
    }
    Ok(out)
}

/// Everything projective-geometric known at one base point, as jets.
#[derive(Debug, Clone)]
pub struct PointFrame {
    pub point: [f64; 3],
    pub order: usize,
    /// `Γ̂_{ab}{}^c`.
    pub gamma: Christoffel<Jet>,
    /// `∂_d Γ̂_{ab}{}^c` indexed `[d][a][b][c]`.
    pub gamma_partials: [Christoffel<Jet>; 3],
    pub epsilon: Epsilon<Jet>,
    /// `R_{de}{}^b{}_c` indexed `[d][e][b][c]`.
    pub curvature: Riemann<Jet>,
    pub weyl: Tensor3Mixed<Jet>,
    pub q: Tensor3MixedCov<Jet>,
    /// Largest absolute jet coefficient of `Γ̂`, the scale for flatness.
    pub gamma_scale: f64,
}

impl PointFrame {
    /// Flatness at value level: `|V| ≤ tol·|ε^{123}|·max(m, m²)`, `m` the
    /// `Γ̂` scale.
    pub fn is_flat(&self, tol: f64) -> bool {
        let m = self.gamma_scale;
        self.weyl.max_abs_value() <= tol * self.epsilon.upper().value().abs() * m.max(m * m)
    }

    /// `|Q|` relative to `|ε_{123}|·|V|²` at value level.
    pub fn q_relative(&self) -> f64 {
        let v = self.weyl.max_abs_value();
        let scale = self.epsilon.lower.value().abs() * v * v;
        if scale == 0.0 {
            0.0
        } else {
            self.q.max_abs_value() / scale
        }
    }
}

/// Normalizes the connection against `ε` at `p` and computes `R`, `V`, `Q`
/// as order-`order` jets.
pub fn normalize_connection(
    spec: &ConnectionSpec,
    p: [f64; 3],
    order: usize,
) -> Result<PointFrame, ProjectiveError> {
    let eps = spec.epsilon.eval_jet(p, order)?;
    if eps.value() == 0.0 {
        return Err(ProjectiveError::EpsilonVanishes { point: p });
    }
    let gamma = spec.normalized_jets(p, order)?;
    let mut gamma_partials = [gamma; 3];
    for (d, slot) in gamma_partials.iter_mut().enumerate() {
        *slot = christoffel_jets(&spec.hat_partials[d], p, order)?;
    }

    // ∇̂_a ε_{123} = ∂_a ε − Γ̂_{ad}{}^d ε
    let mut parallel = 0.0f64;
    let mut parallel_scale = 0.0f64;
    for a in 0..3 {
        let de = spec.eps_partials[a].eval_jet(p, order)?;
        let trace = gamma[a][0][0] + gamma[a][1][1] + gamma[a][2][2];
        let te = trace * eps;
        parallel = parallel.max((de - te).max_abs());
        parallel_scale = parallel_scale.max(de.max_abs()).max(te.max_abs());
    }
    if parallel > 1e-10 * parallel_scale.max(f64::MIN_POSITIVE) && parallel > 1e-300 {
        return Err(ProjectiveError::NotParallel(parallel / parallel_scale.max(f64::MIN_POSITIVE)));
    }

    let epsilon = Epsilon::new(eps);
    let curvature = curvature(&gamma, &gamma_partials);
    let weyl = weyl_tensor(&curvature, &epsilon);
    let q = q_obstruction(&weyl, &epsilon);
    let gamma_scale = gamma
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |m, j| m.max(j.max_abs()));
    Ok(PointFrame {
        point: p,
        order,
        gamma,
        gamma_partials,
        epsilon,
        curvature,
        weyl,
        q,
        gamma_scale,
    })
}

/// `R_{de}{}^b{}_c` from `Γ` and its partials `[d][a][b][c]`.
pub fn curvature<S: Scalar>(gamma: &Christoffel<S>, partials: &[Christoffel<S>; 3]) -> Riemann<S> {
    std::array::from_fn(|d| {
        std::array::from_fn(|e| {
            std::array::from_fn(|b| {
                std::array::from_fn(|c| {
                    let lin = partials[d][e][c][b] - partials[e][d][c][b];
                    let quad = sum((0..3).map(|f| gamma[d][f][b] * gamma[e][c][f] - gamma[e][f][b] * gamma[d][c][f]));
                    lin + quad
                })
            })
        })
    })
}

/// The projective Weyl tensor `V^{ab}{}_c` from the curvature.
pub fn weyl_tensor<S: Scalar>(r: &Riemann<S>, eps: &Epsilon<S>) -> Tensor3Mixed<S> {
    let u = eps.upper();
    // ε^{dea} R_{de} summed over the two orderings of (d, e)
    let contract = |a: usize, b: usize, c: usize| {
        let (d, e) = ((a + 1) % 3, (a + 2) % 3);
        (r[d][e][b][c] - r[e][d][b][c]) * u
    };
    let w = Tensor3Mixed::from_fn(|a, b, c| (contract(a, b, c) + contract(b, a, c)).scale(0.5));
    w.remove_trace()
}

/// `Q_{ab}{}^c = ε_{pq(a}V^{pr}{}_{b)}V^{qc}{}_r`.
pub fn q_obstruction<S: Scalar>(v: &Tensor3Mixed<S>, eps: &Epsilon<S>) -> Tensor3MixedCov<S> {
    v.plucker_square(eps)
}

/// Two jet-valued symmetric tensors spanning the pencil of `V = ρ ∧ σ`.
#[derive(Debug, Clone)]
pub struct PencilSpan {
    pub rho_raw: Sym2Contra<Jet>,
    pub sigma_raw: Sym2Contra<Jet>,
    /// Normalized Gram determinant of the pair at value level, in `(0, 1]`.
    pub gram: f64,
    /// Indices of the two probes used.
    pub probes: (usize, usize),
    /// Relative residual of the rebuilt `Ṽ ∝ V` check.
    pub consistency: f64,
}

const PROBE_SEED: u64 = 0x5eed_0f_9e_0c11;
const MAX_PROBES: usize = 20;
const GRAM_ACCEPT: f64 = 1e-3;

/// The deterministic probe list: the six elementary symmetric matrices
/// followed by seeded pseudorandom ones.
pub fn probe_list() -> Vec<Sym2Cov<f64>> {
    let mut out: Vec<Sym2Cov<f64>> = SYM_PAIRS
        .iter()
        .map(|&(i, j)| Sym2Cov::from_fn(|a, b| if (a, b) == (i, j) || (b, a) == (i, j) { 1.0 } else { 0.0 }))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    while out.len() < MAX_PROBES {
        let vals: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        out.push(Sym2Cov(vals));
    }
    out
}

/// Gram determinant of `(a, b)` relative to the largest squared norm among
/// all probe outputs, so that round-off outputs never score.
fn gram_ratio(a: &Sym2Contra<f64>, b: &Sym2Contra<f64>, max_sq: f64) -> f64 {
    let (aa, bb, ab) = (a.frobenius_sq(), b.frobenius_sq(), a.frobenius_dot(b));
    if max_sq == 0.0 {
        return 0.0;
    }
    (aa * bb - ab * ab) / (max_sq * max_sq)
}

/// Recovers `span{ρ, σ}` from `V` through the probe map
/// `T ↦ 2T_{ad}V^{a(b}{}_e ε^{c)de} = (T·σ)ρ − (T·ρ)σ`.
pub fn extract_pencil(frame: &PointFrame) -> Result<PencilSpan, ProjectiveError> {
    extract_pencil_from(&frame.weyl, &frame.epsilon)
}

pub fn extract_pencil_from(v: &Tensor3Mixed<Jet>, eps: &Epsilon<Jet>) -> Result<PencilSpan, ProjectiveError> {
    if v.max_abs_value() == 0.0 {
        return Err(ProjectiveError::WeylVanishes);
    }
    let order = eps.lower.order();
    let probes = probe_list();
    let mut outputs: Vec<Sym2Contra<Jet>> = Vec::new();
    let mut best = (0.0, 0, 0);
    for (k, t) in probes.iter().enumerate() {
        let t = Sym2Cov(t.0.map(|x| Jet::constant(order, x)));
        outputs.push(v.probe(&t, eps));
        // all six elementary probes are always tried; random ones only as needed
        if k < 5 {
            continue;
        }
        let values: Vec<Sym2Contra<f64>> = outputs.iter().map(|s| s.values()).collect();
        let max_sq = values.iter().fold(0.0f64, |m, s| m.max(s.frobenius_sq()));
        best = (0.0, 0, 0);
        for i in 0..values.len() {
            for j in i + 1..values.len() {
                let g = gram_ratio(&values[i], &values[j], max_sq);
                if g > best.0 {
                    best = (g, i, j);
                }
            }
        }
        if best.0 >= GRAM_ACCEPT {
            break;
        }
    }
    if best.0 < 1e-10 {
        return Err(ProjectiveError::RankDeficient(outputs.len()));
    }
    let (gram, i, k) = best;
    let (rho_raw, sigma_raw) = (outputs[i], outputs[k]);

    let rebuilt = Tensor3Mixed::wedge(&rho_raw, &sigma_raw, eps).values();
    let vv = v.values();
    let dot: f64 = rebuilt.components().zip(vv.components()).map(|(a, b)| a * b).sum();
    let norm: f64 = vv.components().map(|b| b * b).sum();
    let ratio = dot / norm;
    let residual = rebuilt
        .components()
        .zip(vv.components())
        .fold(0.0f64, |m, (a, b)| m.max((a - ratio * b).abs()))
        / rebuilt.max_abs_value().max(f64::MIN_POSITIVE);
    if !(residual < 1e-8) {
        return Err(ProjectiveError::Inconsistent(residual));
    }
    Ok(PencilSpan {
        rho_raw,
        sigma_raw,
        gram,
        probes: (i, k),
        consistency: residual,
    })
}

/// `∇_a σ^{bc} = ∂_aσ^{bc} + Γ_{ad}{}^bσ^{dc} + Γ_{ad}{}^cσ^{bd}` as jets one
/// order below `sigma`.
pub fn covariant_derivative(sigma: &Sym2Contra<Jet>, gamma: &Christoffel<Jet>) -> Sym2ContraGrad<Jet> {
    let order = sigma.0[0].order();
    assert!(order >= 1, "covariant derivative needs jets of order at least 1");
    let lower = order - 1;
    let s = sigma.map(|j| j.truncate(lower));
    Sym2ContraGrad::from_fn(|a, b, c| {
        let g = |x: usize, y: usize, z: usize| gamma[x][y][z].truncate(lower);
        let partial = sigma.get(b, c).derivative(a);
        partial + sum((0..3).map(|d| g(a, d, b) * s.get(d, c) + g(a, d, c) * s.get(b, d)))
    })
}

/// Value-level residual of the metrisability equation at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResidual {
    pub point: [f64; 3],
    /// `max |(∇_aσ^{bc})_∘|`.
    pub absolute: f64,
    /// `absolute` divided by the largest term entering `∇σ`.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub points: Vec<PointResidual>,
    pub max_absolute: f64,
    pub max_relative: f64,
}

/// Evaluates `(∇_aσ^{bc})_∘` for a closed-form `σ` (six components in
/// storage order `11, 12, 13, 22, 23, 33`) at each point.
pub fn verify_metrisability_equation(
    spec: &ConnectionSpec,
    sigma: &[Expr; 6],
    points: &[[f64; 3]],
) -> Result<ResidualReport, DomainError> {
    let mut out = Vec::with_capacity(points.len());
    for &p in points {
        let gamma = spec.normalized_jets(p, 1)?;
        let mut comps = [Jet::zero(1); 6];
        for (slot, e) in comps.iter_mut().zip(sigma) {
            *slot = e.eval_jet(p, 1)?;
        }
        let s = Sym2Contra(comps);
        let d = covariant_derivative(&s, &gamma);
        let absolute = d.tracefree().max_abs_value();
        let sv = s.values();
        let scale = comps
            .iter()
            .flat_map(|j| j.gradient())
            .fold(0.0f64, |m, g| m.max(g.abs()))
            .max(
                gamma
                    .iter()
                    .flatten()
                    .flatten()
                    .fold(0.0f64, |m, g| m.max(g.value().abs()))
                    * sv.max_abs_value(),
            );
        out.push(PointResidual {
            point: p,
            absolute,
            relative: if scale > 0.0 { absolute / scale } else { absolute },
        });
    }
    Ok(ResidualReport {
        max_absolute: out.iter().fold(0.0, |m, r| m.max(r.absolute)),
        max_relative: out.iter().fold(0.0, |m, r| m.max(r.relative)),
        points: out,
    })
}

/// Adds `δ_a{}^cΥ_b + δ_b{}^cΥ_a` to `Γ`.
pub fn projective_change(gamma: &Christoffel<Expr>, upsilon: &[Expr; 3]) -> Christoffel<Expr> {
    std::array::from_fn(|a| {
        std::array::from_fn(|b| {
            std::array::from_fn(|c| {
                let mut e = gamma[a][b][c].clone();
                if delta(a, c) == 1.0 {
                    e = Expr::add(&e, &upsilon[b]);
                }
                if delta(b, c) == 1.0 {
                    e = Expr::add(&e, &upsilon[a]);
                }
                e
            })
        })
    })
}
