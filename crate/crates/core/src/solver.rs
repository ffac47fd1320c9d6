//! The metrisability decision at a base point.
//!
//! Gates, in order: flatness of the Weyl tensor, the quadratic obstruction
//! `Q`, the pencil (entirely degenerate or irregular pencils stop here), and
//! then, per real degenerate branch, the `φ/ψ` candidate, exactness of the
//! scale form `ω`, the final trace-free residual and the reconstruction of
//! the scale `h`. The first branch that survives every gate gives the metric.

use std::fmt;

use thiserror::Error;

use crate::expr::{DomainError, Expr};
use crate::jet::{Jet, JetError};
use crate::pencil::{pencil_frames, Pencil, PencilError, PencilFrame};
use crate::projective::{
    covariant_derivative, extract_pencil_from, normalize_connection, Christoffel, ConnectionSpec,
    PointFrame, ProjectiveError,
};
use crate::tensor::{delta, Covector, Epsilon, Scalar, Sym2Contra, Sym2ContraGrad, Sym2Cov, Tensor3Mixed};

/// Smooth nonvanishing factors applied to `ρ` and `σ` of every pencil frame.
/// The verdict and the metric (up to a constant) do not depend on them.
#[derive(Debug, Clone)]
pub struct Gauge {
    pub rho: Expr,
    pub sigma: Expr,
}

#[derive(Debug, Clone)]
pub struct Options {
    /// Jet order `K` of the connection; at least 3.
    pub order: usize,
    /// Base tolerance for every scale-aware gate.
    pub tol: f64,
    /// Relative tolerance of the final residual gate.
    pub residual_tol: f64,
    /// Half-width of the probe box around the base point.
    pub half_width: f64,
    /// Absolute tolerance of the `log h` quadrature.
    pub quadrature_tol: f64,
    /// Extra points at which to report the metric.
    pub metric_points: Vec<[f64; 3]>,
    pub gauge: Option<Gauge>,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            order: 3,
            tol: 1e-9,
            residual_tol: 1e-8,
            half_width: 0.25,
            quadrature_tol: 1e-10,
            metric_points: Vec::new(),
            gauge: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("volume form vanishes at ({}, {}, {})", .0[0], .0[1], .0[2])]
    EpsilonVanishes([f64; 3]),
    #[error("jet order {0} is outside the supported range 3..=4")]
    InvalidOrder(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NotMetrisableReason {
    QNonzero,
    PencilEntirelyDegenerate,
    SingularCandidate,
    OmegaNotExact,
    FinalResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndeterminateReason {
    IrregularPencil,
    PhiPsiBothZero,
    NumericalDegeneracy,
}

impl fmt::Display for NotMetrisableReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for IndeterminateReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Dimension of the solution space, as far as the pipeline can tell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mobility {
    Ten,
    AtLeastOne,
}

impl fmt::Display for Mobility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mobility::Ten => "10",
            Mobility::AtLeastOne => ">=1",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    pub point: [f64; 3],
    pub h: f64,
    /// `g_{ab}` in storage order `11, 12, 13, 22, 23, 33`.
    pub g: [f64; 6],
}

#[derive(Debug, Clone)]
pub struct CandidateSolution {
    /// `σ̂ = σ − (ψ/φ)ρ` at the base point, order `K − 1`.
    pub sigma_hat: Sym2Contra<Jet>,
    /// `ω_a = σ̂_{bc}(∇_aσ̂^{bc})_∘`, order `K − 2`.
    pub omega: Covector<Jet>,
    /// `g_{ab}` at the base point as jets of order `K − 1`, with `h(p) = 1`.
    pub metric_jet: Sym2Cov<Jet>,
    pub metric: Vec<MetricSample>,
    /// Trace-free part of `Γ^{LC}(g) − Γ̂`, relative; zero iff `g` lies in
    /// the projective class at the base point.
    pub levi_civita_residual: f64,
}

#[derive(Debug, Clone)]
pub enum Verdict {
    ProjectivelyFlat,
    Metrisable {
        branch: usize,
        solution: Box<CandidateSolution>,
    },
    NotMetrisable(NotMetrisableReason),
    Indeterminate(IndeterminateReason),
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::ProjectivelyFlat => "ProjectivelyFlat",
            Verdict::Metrisable { .. } => "Metrisable",
            Verdict::NotMetrisable(_) => "NotMetrisable",
            Verdict::Indeterminate(_) => "Indeterminate",
        }
    }

    /// The failing gate, for non-metrisable and indeterminate outcomes.
    pub fn reason(&self) -> Option<String> {
        match self {
            Verdict::NotMetrisable(r) => Some(r.to_string()),
            Verdict::Indeterminate(r) => Some(r.to_string()),
            _ => None,
        }
    }

    pub fn is_metrisable(&self) -> bool {
        matches!(self, Verdict::Metrisable { .. })
    }
}

/// Outcome of a single branch.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchOutcome {
    Metrisable,
    NotMetrisable(NotMetrisableReason),
    Indeterminate(IndeterminateReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchReport {
    pub index: usize,
    pub phi: f64,
    pub psi: f64,
    pub omega: Option<[f64; 3]>,
    /// Largest relative `|dω|` over the probe points.
    pub exactness: Option<f64>,
    /// Largest relative final residual over the probe points.
    pub residual: Option<f64>,
    pub probe_points: usize,
    pub skipped_points: usize,
    pub outcome: BranchOutcome,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub point: [f64; 3],
    pub order: usize,
    pub tol: f64,
    pub weyl_max: f64,
    pub q_relative: Option<f64>,
    pub discriminant: Option<f64>,
    pub branches: Vec<BranchReport>,
    pub trace: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Decision {
    pub verdict: Verdict,
    pub mobility: Option<Mobility>,
    pub diagnostics: Diagnostics,
}

// ---------------------------------------------------------------------------
// φ, ψ and the candidate

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiPsi {
    pub phi: Jet,
    pub psi: Jet,
    /// Magnitude of the individual terms entering `φ` and `ψ`, for
    /// deciding whether they vanish.
    pub phi_scale: f64,
    pub psi_scale: f64,
}

fn contraction_scale(t: &Sym2Cov<Jet>, xi_up: &[Jet; 3], x: &Sym2Contra<Jet>, gamma: &Christoffel<Jet>) -> f64 {
    let xm = x.max_magnitude();
    let dx = x.0.iter().flat_map(|j| j.gradient()).fold(0.0f64, |m, g| m.max(g.abs()));
    let gm = gamma.iter().flatten().flatten().fold(0.0f64, |m, g| m.max(g.value().abs()));
    let xi = xi_up.iter().fold(0.0f64, |m, j| m.max(j.value().abs()));
    t.max_abs_value() * xi * dx.max(gm * xm)
}

/// `φ = (ξ^dξ_dσ_{bc} − 5ξ_bξ_c)ξ^a(∇_aρ^{bc})_∘` and the same with `σ` in
/// place of `ρ`; `ξ^a = σ^{ab}ξ_b` and `σ_{bc}` is the inverse of `σ`.
pub fn compute_phi_psi(frame: &PencilFrame, gamma: &Christoffel<Jet>) -> Result<PhiPsi, JetError> {
    let k = frame.sigma.0[0].order();
    let lower = k - 1;
    let sigma_inv = frame
        .sigma
        .inverse()
        .map_err(|e| match e {
            crate::tensor::TensorError::Singular(d) => JetError::NotInvertible(d),
        })?
        .map(|j| j.truncate(lower));
    let xi = Covector(frame.xi.0.map(|j| j.truncate(lower)));
    let sig = frame.sigma.map(|j| j.truncate(lower));
    let xi_up = sig.raise(&xi);
    let xx = xi_up.pair(&xi);
    let t = Sym2Cov::from_fn(|b, c| xx * sigma_inv.get(b, c) - (xi.0[b] * xi.0[c]).scale(5.0));
    let contract = |x: &Sym2Contra<Jet>| {
        let d = covariant_derivative(x, gamma).tracefree();
        d.contract_pair(&t).0.iter().zip(xi_up.0.iter()).fold(Jet::zero(lower), |acc, (c, u)| acc + *c * *u)
    };
    Ok(PhiPsi {
        phi: contract(&frame.rho),
        psi: contract(&frame.sigma),
        phi_scale: contraction_scale(&t, &xi_up.0, &frame.rho, gamma),
        psi_scale: contraction_scale(&t, &xi_up.0, &frame.sigma, gamma),
    })
}

/// Why a branch produced no candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateFailure {
    Singular,
    BothZero,
}

/// `σ̂ = σ − (ψ/φ)ρ` at order `K − 1`, or the reason it does not exist.
pub fn candidate(frame: &PencilFrame, pp: &PhiPsi, tol: f64) -> Result<Sym2Contra<Jet>, CandidateFailure> {
    let phi_zero = pp.phi.value().abs() <= tol * pp.phi_scale;
    let psi_zero = pp.psi.value().abs() <= tol * pp.psi_scale;
    match (phi_zero, psi_zero) {
        (true, true) => Err(CandidateFailure::BothZero),
        (true, false) => Err(CandidateFailure::Singular),
        (false, _) => {
            let lower = pp.phi.order();
            let ratio = pp.psi / pp.phi;
            let s = frame.sigma.map(|j| j.truncate(lower));
            let r = frame.rho.map(|j| j.truncate(lower));
            let hat = s - r.map(|j| j * ratio);
            let v = hat.values();
            if v.det().abs() <= tol * v.frobenius_sq().powf(1.5) {
                return Err(CandidateFailure::Singular);
            }
            Ok(hat)
        }
    }
}

/// `ω_a = σ̂_{bc}(∇_aσ̂^{bc})_∘`, one jet order below `sigma_hat`.
pub fn scale_form(sigma_hat: &Sym2Contra<Jet>, gamma: &Christoffel<Jet>) -> Option<Covector<Jet>> {
    let lower = sigma_hat.0[0].order() - 1;
    let inv = sigma_hat.inverse().ok()?.map(|j| j.truncate(lower));
    Some(covariant_derivative(sigma_hat, gamma).tracefree().contract_pair(&inv))
}

/// `max_{a<b} |∂_aω_b − ∂_bω_a|` and the largest `|∂_aω_b|`.
pub fn exterior_derivative(omega: &Covector<Jet>) -> (f64, f64) {
    let grads = omega.0.map(|j| j.gradient());
    let mut curl = 0.0f64;
    let mut scale = 0.0f64;
    for a in 0..3 {
        for b in 0..3 {
            scale = scale.max(grads[b][a].abs());
            curl = curl.max((grads[b][a] - grads[a][b]).abs());
        }
    }
    (curl, scale)
}

/// Relative value-level `(∇_aσ̂^{bc} − (2/5)ω_aσ̂^{bc})_∘`.
pub fn final_residual(sigma_hat: &Sym2Contra<Jet>, omega: &Covector<Jet>, gamma: &Christoffel<Jet>) -> f64 {
    let d = covariant_derivative(sigma_hat, gamma);
    let sv = sigma_hat.values();
    let w = omega.0.map(|j| j.value());
    let dv = d.values();
    let expr = Sym2ContraGrad::from_fn(|a, b, c| dv.get(a, b, c) - 0.4 * w[a] * sv.get(b, c)).tracefree();
    let scale = dv
        .max_abs_value()
        .max(w.iter().fold(0.0f64, |m, x| m.max(x.abs())) * sv.max_abs_value());
    let r = expr.max_abs_value();
    if scale > 0.0 {
        r / scale
    } else {
        r
    }
}

// ---------------------------------------------------------------------------
// Candidate fields

#[derive(Debug, Clone, PartialEq)]
pub enum FieldError {
    /// The point lies outside the regular domain of the input.
    Domain(DomainError),
    /// The pipeline broke down at the point.
    Failed(String),
}

/// Jets at one point of a candidate field `σ̂`, the connection it is
/// measured against, and the volume form.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub sigma_hat: Sym2Contra<Jet>,
    pub gamma: Christoffel<Jet>,
    pub epsilon: Jet,
}

/// A smooth field `σ̂` with its connection, queried pointwise.
pub trait CandidateField {
    /// Order-`order` jets at `q`; `order ≥ 1`.
    fn sample(&self, q: [f64; 3], order: usize) -> Result<FieldSample, FieldError>;

    fn omega(&self, q: [f64; 3], order: usize) -> Result<(FieldSample, Covector<Jet>), FieldError> {
        let s = self.sample(q, order + 1)?;
        let w = scale_form(&s.sigma_hat, &s.gamma).ok_or_else(|| FieldError::Failed("σ̂ is singular".into()))?;
        Ok((s, w))
    }
}

/// A candidate given by closed-form `σ̂`, `Γ` and `ε`.
#[derive(Debug, Clone)]
pub struct ExprField {
    pub gamma: Christoffel<Expr>,
    pub sigma: [Expr; 6],
    pub epsilon: Expr,
}

impl CandidateField for ExprField {
    fn sample(&self, q: [f64; 3], order: usize) -> Result<FieldSample, FieldError> {
        let ev = |e: &Expr| e.eval_jet(q, order).map_err(FieldError::Domain);
        let mut sigma = [Jet::zero(order); 6];
        for (s, e) in sigma.iter_mut().zip(&self.sigma) {
            *s = ev(e)?;
        }
        let mut gamma = [[[Jet::zero(order); 3]; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    gamma[a][b][c] = ev(&self.gamma[a][b][c])?;
                }
            }
        }
        Ok(FieldSample {
            sigma_hat: Sym2Contra(sigma),
            gamma,
            epsilon: ev(&self.epsilon)?,
        })
    }
}

const RAY_TIE: f64 = 1e-6;

/// Rescales `σ̂` to unit Frobenius norm with its largest diagonal entry
/// positive, so that every branch producing the same ray yields the same
/// field and hence the same `ω`.
pub fn normalize_candidate(sigma_hat: &Sym2Contra<Jet>) -> Option<Sym2Contra<Jet>> {
    let norm = sigma_hat.frobenius_sq().sqrt().ok()?;
    let v = sigma_hat.values();
    let lead = (0..3).map(|i| v.get(i, i)).fold(0.0f64, |m, d| if d.abs() > m.abs() { d } else { m });
    let sign = if lead < 0.0 { -1.0 } else { 1.0 };
    Some(sigma_hat.map(|j| (j / norm).scale(sign)))
}

/// The pipeline's own candidate: at each point, rebuild the pencil, form the
/// normalized `σ̂` of every branch, and keep the one closest to `reference`.
pub struct PipelineField<'a> {
    pub spec: &'a ConnectionSpec,
    /// Normalized `σ̂` at the base point.
    pub reference: Sym2Contra<f64>,
    pub tol: f64,
    pub gauge: Option<&'a Gauge>,
}

impl CandidateField for PipelineField<'_> {
    fn sample(&self, q: [f64; 3], order: usize) -> Result<FieldSample, FieldError> {
        let stage = match point_stage(self.spec, q, order + 1, self.tol) {
            Ok(s) => s,
            Err(StageFailure::Domain(e)) => return Err(FieldError::Domain(e)),
            Err(other) => return Err(FieldError::Failed(other.describe())),
        };
        // (overlap with the reference, conditioning of φ, σ̂)
        let mut found: Vec<(f64, f64, Sym2Contra<Jet>)> = Vec::new();
        let mut last_error = String::from("no usable branch");
        for frame in &stage.frames {
            let frame = apply_gauge(frame, self.gauge, q).map_err(FieldError::Domain)?;
            let hat = compute_phi_psi(&frame, &stage.frame.gamma)
                .map_err(|e| e.to_string())
                .and_then(|pp| {
                    let h = candidate(&frame, &pp, self.tol).map_err(|e| format!("candidate: {e:?}"))?;
                    let h = normalize_candidate(&h).ok_or_else(|| "candidate: zero".to_string())?;
                    Ok((pp.phi.value().abs() / pp.phi_scale, h))
                });
            match hat {
                Ok((cond, h)) => found.push((h.values().frobenius_dot(&self.reference).abs(), cond, h)),
                Err(e) => last_error = e,
            }
        }
        // branches on the same ray tie on overlap; prefer the best-conditioned φ
        let top = found.iter().fold(0.0f64, |m, f| m.max(f.0));
        let (_, _, sigma_hat) = found
            .into_iter()
            .filter(|f| f.0 >= top - RAY_TIE)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or(FieldError::Failed(last_error))?;
        let lower = sigma_hat.0[0].order();
        Ok(FieldSample {
            sigma_hat,
            gamma: stage.frame.gamma.map(|p| p.map(|r| r.map(|j| j.truncate(lower)))),
            epsilon: stage.frame.epsilon.lower.truncate(lower),
        })
    }
}

fn apply_gauge(frame: &PencilFrame, gauge: Option<&Gauge>, q: [f64; 3]) -> Result<PencilFrame, DomainError> {
    let Some(g) = gauge else {
        return Ok(frame.clone());
    };
    let order = frame.rho.0[0].order();
    let a = g.rho.eval_jet(q, order)?;
    let b = g.sigma.eval_jet(q, order)?;
    Ok(PencilFrame {
        rho: frame.rho.map(|j| j * a),
        sigma: frame.sigma.map(|j| j * b),
        xi: frame.xi,
        branch: frame.branch,
    })
}

// ---------------------------------------------------------------------------
// Scale reconstruction

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("quadrature did not converge")]
    NotConverged,
    #[error("integrand failed: {0:?}")]
    Integrand(FieldError),
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

const GL_POINTS: usize = 8;
const MAX_BISECTIONS: usize = 12;

/// Adaptive Gauss–Legendre quadrature of `f` over `[a, b]` to absolute `tol`.
pub fn integrate<E>(
    f: &mut impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, Result<(), E>> {
    let (nodes, weights) = gauss_legendre(GL_POINTS);
    let rule = |f: &mut dyn FnMut(f64) -> Result<f64, E>, lo: f64, hi: f64| -> Result<f64, E> {
        let (m, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let mut s = 0.0;
        for (x, w) in nodes.iter().zip(&weights) {
            s += w * f(m + r * x)?;
        }
        Ok(s * r)
    };
    let whole = rule(f, a, b).map_err(Err)?;
    // explicit stack: (lo, hi, estimate, tol, depth)
    let mut stack = vec![(a, b, whole, tol, 0usize)];
    let mut total = 0.0;
    while let Some((lo, hi, est, t, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = rule(f, lo, mid).map_err(Err)?;
        let right = rule(f, mid, hi).map_err(Err)?;
        if (left + right - est).abs() <= t {
            total += left + right;
        } else if depth >= MAX_BISECTIONS {
            return Err(Ok(()));
        } else {
            stack.push((mid, hi, right, 0.5 * t, depth + 1));
            stack.push((lo, mid, left, 0.5 * t, depth + 1));
        }
    }
    Ok(total)
}

/// `h(q)` from `∇ log h = −(2/5)ω` along the straight segment from `p`,
/// with `h(p) = 1`.
pub fn reconstruct_h(
    omega: &mut impl FnMut([f64; 3]) -> Result<[f64; 3], FieldError>,
    p: [f64; 3],
    q: [f64; 3],
    tol: f64,
) -> Result<f64, QuadratureError> {
    let d = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
    if d == [0.0; 3] {
        return Ok(1.0);
    }
    let mut integrand = |t: f64| {
        let w = omega([p[0] + t * d[0], p[1] + t * d[1], p[2] + t * d[2]])?;
        Ok(w[0] * d[0] + w[1] * d[1] + w[2] * d[2])
    };
    match integrate(&mut integrand, 0.0, 1.0, tol) {
        Ok(i) => Ok((-0.4 * i).exp()),
        Err(Ok(())) => Err(QuadratureError::NotConverged),
        Err(Err(e)) => Err(QuadratureError::Integrand(e)),
    }
}

/// `g_{ab} = (hσ̂)_{ab} / det_ε(hσ̂)`.
pub fn metric_from<S: Scalar>(sigma_hat: &Sym2Contra<S>, h: S, eps: &Epsilon<S>) -> Option<Sym2Cov<S>> {
    let hs = sigma_hat.map(|s| s * h);
    let inv = hs.inverse().ok()?;
    let det = hs.det_eps(eps);
    Some(inv.map(|x| x / det))
}

/// Numbers of positive and negative eigenvalues of `g`.
pub fn metric_signature(g: &Sym2Cov<f64>) -> (usize, usize) {
    let m = nalgebra::Matrix3::from_fn(|a, b| g.get(a, b));
    let ev = m.symmetric_eigen().eigenvalues;
    let scale = ev.amax();
    let pos = ev.iter().filter(|&&x| x > 1e-12 * scale).count();
    let neg = ev.iter().filter(|&&x| x < -1e-12 * scale).count();
    (pos, neg)
}

/// Trace-free part of `Γ^{LC}(g) − Γ̂` at value level, relative to the
/// larger of the two connections. Needs `g` at jet order at least 1.
pub fn levi_civita_residual(g: &Sym2Cov<Jet>, gamma: &Christoffel<Jet>) -> f64 {
    let gv = g.values();
    let Ok(ginv) = gv.inverse() else {
        return f64::INFINITY;
    };
    let dg = |a: usize, b: usize, d: usize| g.get(b, d).gradient()[a];
    let lc: Christoffel<f64> = std::array::from_fn(|a| {
        std::array::from_fn(|b| {
            std::array::from_fn(|c| {
                0.5 * (0..3)
                    .map(|d| ginv.get(c, d) * (dg(a, b, d) + dg(b, a, d) - dg(d, a, b)))
                    .sum::<f64>()
            })
        })
    });
    let diff: Christoffel<f64> =
        std::array::from_fn(|a| std::array::from_fn(|b| std::array::from_fn(|c| lc[a][b][c] - gamma[a][b][c].value())));
    let beta: [f64; 3] = std::array::from_fn(|b| (0..3).map(|a| diff[a][b][a]).sum::<f64>() / 4.0);
    let mut r = 0.0f64;
    let mut scale = 0.0f64;
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                let proj = diff[a][b][c] - delta(a, c) * beta[b] - delta(b, c) * beta[a];
                r = r.max(proj.abs());
                scale = scale.max(lc[a][b][c].abs()).max(gamma[a][b][c].value().abs());
            }
        }
    }
    if scale > 0.0 {
        r / scale
    } else {
        r
    }
}

// ---------------------------------------------------------------------------
// Point stage: everything up to the pencil frames

struct PointStage {
    frame: PointFrame,
    frames: Vec<PencilFrame>,
    skipped: Vec<PencilError>,
    discriminant: f64,
}

enum StageFailure {
    Domain(DomainError),
    EpsilonVanishes([f64; 3]),
    Flat(PointFrame),
    QNonzero(Box<PointFrame>, f64),
    EntirelyDegenerate(Box<PointFrame>),
    Irregular(Box<PointFrame>, f64),
    Degenerate(Option<Box<PointFrame>>, String),
}

impl StageFailure {
    fn describe(&self) -> String {
        match self {
            StageFailure::Domain(e) => e.to_string(),
            StageFailure::EpsilonVanishes(_) => "volume form vanishes".into(),
            StageFailure::Flat(_) => "Weyl tensor vanishes".into(),
            StageFailure::QNonzero(_, q) => format!("Q nonzero (relative {q:e})"),
            StageFailure::EntirelyDegenerate(_) => "pencil entirely degenerate".into(),
            StageFailure::Irregular(_, d) => format!("pencil irregular (discriminant {d:e})"),
            StageFailure::Degenerate(_, s) => s.clone(),
        }
    }
}

/// Gate applied to a pencil extracted from `V`.
#[derive(Debug, Clone)]
pub enum PencilGate {
    Pencil(Pencil),
    EntirelyDegenerate,
    Irregular(f64),
    Degenerate(String),
}

/// Extracts and vets the pencil of a simple Weyl tensor.
pub fn pencil_gate(weyl: &Tensor3Mixed<Jet>, eps: &Epsilon<Jet>, tol: f64) -> PencilGate {
    let span = match extract_pencil_from(weyl, eps) {
        Ok(s) => s,
        Err(e) => return PencilGate::Degenerate(e.to_string()),
    };
    match Pencil::from_span(&span, tol) {
        Ok(p) => PencilGate::Pencil(p),
        Err(PencilError::EntirelyDegenerate) => PencilGate::EntirelyDegenerate,
        Err(PencilError::Irregular { discriminant }) => PencilGate::Irregular(discriminant),
        Err(e) => PencilGate::Degenerate(e.to_string()),
    }
}

fn point_stage(spec: &ConnectionSpec, q: [f64; 3], order: usize, tol: f64) -> Result<PointStage, StageFailure> {
    let frame = match normalize_connection(spec, q, order) {
        Ok(f) => f,
        Err(ProjectiveError::Domain(e)) => return Err(StageFailure::Domain(e)),
        Err(ProjectiveError::EpsilonVanishes { point }) => return Err(StageFailure::EpsilonVanishes(point)),
        Err(e) => return Err(StageFailure::Degenerate(None, e.to_string())),
    };
    if frame.is_flat(tol) {
        return Err(StageFailure::Flat(frame));
    }
    let qr = frame.q_relative();
    if qr > tol {
        return Err(StageFailure::QNonzero(Box::new(frame), qr));
    }
    let pencil = match pencil_gate(&frame.weyl, &frame.epsilon, tol) {
        PencilGate::Pencil(p) => p,
        PencilGate::EntirelyDegenerate => return Err(StageFailure::EntirelyDegenerate(Box::new(frame))),
        PencilGate::Irregular(d) => return Err(StageFailure::Irregular(Box::new(frame), d)),
        PencilGate::Degenerate(s) => return Err(StageFailure::Degenerate(Some(Box::new(frame)), s)),
    };
    let discriminant = pencil.raw_cubic.discriminant();
    let (frames, skipped) = match pencil_frames(&pencil) {
        Ok(x) => x,
        Err(e) => return Err(StageFailure::Degenerate(Some(Box::new(frame)), e.to_string())),
    };
    Ok(PointStage {
        frame,
        frames,
        skipped,
        discriminant,
    })
}

/// The eight vertices of the probe box around `p`.
pub fn probe_stencil(p: [f64; 3], half_width: f64) -> Vec<[f64; 3]> {
    (0..8)
        .map(|k| {
            let s = |bit: usize| if k >> bit & 1 == 1 { half_width } else { -half_width };
            [p[0] + s(0), p[1] + s(1), p[2] + s(2)]
        })
        .collect()
}

/// Results of the exactness and residual gates over a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTest {
    /// `(point, ω value, relative |dω|, relative final residual)`.
    pub points: Vec<([f64; 3], [f64; 3], f64, f64)>,
    pub skipped: Vec<[f64; 3]>,
}

impl ScaleTest {
    pub fn max_exactness(&self) -> f64 {
        self.points.iter().fold(0.0, |m, p| m.max(p.2))
    }

    pub fn max_residual(&self) -> f64 {
        self.points.iter().fold(0.0, |m, p| m.max(p.3))
    }
}

/// Runs `ω`, `dω` and the final residual at each point. Points outside the
/// regular domain are skipped; any other failure is returned.
pub fn scale_test(
    field: &impl CandidateField,
    points: &[[f64; 3]],
    order: usize,
) -> Result<ScaleTest, FieldError> {
    let mut out = ScaleTest {
        points: Vec::new(),
        skipped: Vec::new(),
    };
    for &q in points {
        match field.omega(q, order) {
            Ok((s, w)) => {
                let (curl, scale) = exterior_derivative(&w);
                let exact = if scale > 0.0 { curl / scale } else { curl };
                let res = final_residual(&s.sigma_hat, &w, &s.gamma);
                out.points.push((q, w.0.map(|j| j.value()), exact, res));
            }
            Err(FieldError::Domain(_)) => out.skipped.push(q),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// decide

/// Decides local metrisability of `spec` at `p`.
pub fn decide(spec: &ConnectionSpec, p: [f64; 3], options: &Options) -> Result<Decision, SolverError> {
    let k = options.order;
    if !(3..=crate::jet::MAX_ORDER).contains(&k) {
        return Err(SolverError::InvalidOrder(k));
    }
    let tol = options.tol;
    let mut diag = Diagnostics {
        point: p,
        order: k,
        tol,
        ..Default::default()
    };
    let done = |verdict: Verdict, mobility, diag: Diagnostics| Ok(Decision {
        verdict,
        mobility,
        diagnostics: diag,
    });

    let stage = match point_stage(spec, p, k, tol) {
        Ok(s) => s,
        Err(failure) => {
            let (verdict, mobility) = match failure {
                StageFailure::Domain(e) => return Err(SolverError::Domain(e)),
                StageFailure::EpsilonVanishes(pt) => return Err(SolverError::EpsilonVanishes(pt)),
                StageFailure::Flat(frame) => {
                    diag.weyl_max = frame.weyl.max_abs_value();
                    diag.trace.push(format!("V vanishes (max |V| = {:e})", diag.weyl_max));
                    (Verdict::ProjectivelyFlat, Some(Mobility::Ten))
                }
                StageFailure::QNonzero(frame, q) => {
                    diag.weyl_max = frame.weyl.max_abs_value();
                    diag.q_relative = Some(q);
                    diag.trace.push(format!("Q nonzero (relative {q:e})"));
                    (Verdict::NotMetrisable(NotMetrisableReason::QNonzero), None)
                }
                StageFailure::EntirelyDegenerate(frame) => {
                    diag.weyl_max = frame.weyl.max_abs_value();
                    diag.q_relative = Some(frame.q_relative());
                    diag.discriminant = Some(0.0);
                    diag.trace.push("every pencil element is singular".into());
                    (Verdict::NotMetrisable(NotMetrisableReason::PencilEntirelyDegenerate), None)
                }
                StageFailure::Irregular(frame, d) => {
                    diag.weyl_max = frame.weyl.max_abs_value();
                    diag.q_relative = Some(frame.q_relative());
                    diag.discriminant = Some(d);
                    diag.trace.push(format!("pencil irregular (discriminant {d:e})"));
                    (Verdict::Indeterminate(IndeterminateReason::IrregularPencil), None)
                }
                StageFailure::Degenerate(frame, msg) => {
                    if let Some(frame) = frame {
                        diag.weyl_max = frame.weyl.max_abs_value();
                        diag.q_relative = Some(frame.q_relative());
                    }
                    diag.trace.push(msg);
                    (Verdict::Indeterminate(IndeterminateReason::NumericalDegeneracy), None)
                }
            };
            return done(verdict, mobility, diag);
        }
    };
    diag.weyl_max = stage.frame.weyl.max_abs_value();
    diag.q_relative = Some(stage.frame.q_relative());
    diag.discriminant = Some(stage.discriminant);
    diag.trace.push(format!(
        "V nonzero (max {:e}); Q/|V|² = {:e}; discriminant {:e}; {} real branch(es)",
        diag.weyl_max,
        stage.frame.q_relative(),
        stage.discriminant,
        stage.frames.len()
    ));
    for s in &stage.skipped {
        diag.trace.push(format!("branch skipped: {s}"));
    }
    if stage.frames.is_empty() {
        return done(Verdict::Indeterminate(IndeterminateReason::NumericalDegeneracy), None, diag);
    }

    let mut first_failure: Option<Verdict> = None;
    for frame in &stage.frames {
        let (report, solution) = run_branch(spec, &stage.frame, frame, p, options);
        diag.trace.push(format!("branch {}: {:?}", report.index, report.outcome));
        let outcome = report.outcome.clone();
        diag.branches.push(report);
        match (outcome, solution) {
            (BranchOutcome::Metrisable, Some(solution)) => {
                return done(
                    Verdict::Metrisable {
                        branch: frame.branch,
                        solution: Box::new(solution),
                    },
                    Some(Mobility::AtLeastOne),
                    diag,
                );
            }
            (BranchOutcome::NotMetrisable(r), _) => {
                if !matches!(first_failure, Some(Verdict::NotMetrisable(_))) {
                    first_failure = Some(Verdict::NotMetrisable(r));
                }
            }
            (BranchOutcome::Indeterminate(r), _) => {
                first_failure.get_or_insert(Verdict::Indeterminate(r));
            }
            (BranchOutcome::Metrisable, None) => {
                first_failure.get_or_insert(Verdict::Indeterminate(IndeterminateReason::NumericalDegeneracy));
            }
        }
    }
    let verdict = first_failure.unwrap_or(Verdict::Indeterminate(IndeterminateReason::NumericalDegeneracy));
    done(verdict, None, diag)
}

fn run_branch(
    spec: &ConnectionSpec,
    point_frame: &PointFrame,
    frame: &PencilFrame,
    p: [f64; 3],
    options: &Options,
) -> (BranchReport, Option<CandidateSolution>) {
    let tol = options.tol;
    let k = options.order;
    let mut report = BranchReport {
        index: frame.branch,
        phi: f64::NAN,
        psi: f64::NAN,
        omega: None,
        exactness: None,
        residual: None,
        probe_points: 0,
        skipped_points: 0,
        outcome: BranchOutcome::Indeterminate(IndeterminateReason::NumericalDegeneracy),
        note: None,
    };
    let fail = |mut report: BranchReport, outcome: BranchOutcome, note: String| {
        report.outcome = outcome;
        report.note = Some(note);
        (report, None)
    };

    let gauged = match apply_gauge(frame, options.gauge.as_ref(), p) {
        Ok(f) => f,
        Err(e) => {
            return fail(report, BranchOutcome::Indeterminate(IndeterminateReason::NumericalDegeneracy), e.to_string())
        }
    };
    let pp = match compute_phi_psi(&gauged, &point_frame.gamma) {
        Ok(pp) => pp,
        Err(e) => {
            return fail(report, BranchOutcome::Indeterminate(IndeterminateReason::NumericalDegeneracy), e.to_string())
        }
    };
    report.phi = pp.phi.value();
    report.psi = pp.psi.value();
    let sigma_hat = match candidate(&gauged, &pp, tol) {
        Ok(s) => s,
        Err(CandidateFailure::Singular) => {
            return fail(
                report,
                BranchOutcome::NotMetrisable(NotMetrisableReason::SingularCandidate),
                "candidate σ̂ is singular".into(),
            )
        }
        Err(CandidateFailure::BothZero) => {
            return fail(
                report,
                BranchOutcome::Indeterminate(IndeterminateReason::PhiPsiBothZero),
                "φ and ψ both vanish".into(),
            )
        }
    };

    let Some(sigma_hat) = normalize_candidate(&sigma_hat) else {
        return fail(
            report,
            BranchOutcome::NotMetrisable(NotMetrisableReason::SingularCandidate),
            "candidate σ̂ vanishes".into(),
        );
    };
    let field = PipelineField {
        spec,
        reference: sigma_hat.values(),
        tol,
        gauge: options.gauge.as_ref(),
    };
    let sigma_hat = match field.sample(p, k - 1) {
        Ok(s) => s.sigma_hat,
        Err(e) => {
            return fail(
                report,
                BranchOutcome::Indeterminate(IndeterminateReason::NumericalDegeneracy),
                format!("candidate field unavailable at the base point: {e:?}"),
            )
        }
    };
    let mut probes = vec![p];
    probes.extend(probe_stencil(p, options.half_width));
    let test = match scale_test(&field, &probes, k - 2) {
        Ok(t) => t,
        Err(e) => {
            return fail(
                report,
                BranchOutcome::Indeterminate(IndeterminateReason::NumericalDegeneracy),
                format!("probe pipeline failed: {e:?}"),
            )
        }
    };
    report.probe_points = test.points.len();
    report.skipped_points = test.skipped.len();
    report.omega = test.points.first().filter(|t| t.0 == p).map(|t| t.1);
    report.exactness = Some(test.max_exactness());
    report.residual = Some(test.max_residual());
    if test.points.first().map(|t| t.0) != Some(p) {
        return fail(
            report,
            BranchOutcome::Indeterminate(IndeterminateReason::NumericalDegeneracy),
            "candidate field unavailable at the base point".into(),
        );
    }
    if test.max_exactness() > tol {
        return fail(
            report,
            BranchOutcome::NotMetrisable(NotMetrisableReason::OmegaNotExact),
            format!("|dω| relative {:e}", test.max_exactness()),
        );
    }
    if test.max_residual() > options.residual_tol {
        return fail(
            report,
            BranchOutcome::NotMetrisable(NotMetrisableReason::FinalResidual),
            format!("final residual {:e}", test.max_residual()),
        );
    }

    // the metric at p, as jets, with h(p) = 1
    let Some(omega) = scale_form(&sigma_hat, &point_frame.gamma) else {
        return fail(
            report,
            BranchOutcome::Indeterminate(IndeterminateReason::NumericalDegeneracy),
            "σ̂ singular at the base point".into(),
        );
    };
    let log_h = Jet::from_gradient(&omega.0.map(|j| j.scale(-0.4)), 0.0);
    let lower = sigma_hat.0[0].order();
    let eps = Epsilon::new(point_frame.epsilon.lower.truncate(lower));
    let metric_jet = log_h
        .ok()
        .and_then(|lh| metric_from(&sigma_hat, lh.exp(), &eps));
    let Some(metric_jet) = metric_jet else {
        return fail(
            report,
            BranchOutcome::Indeterminate(IndeterminateReason::NumericalDegeneracy),
            "metric at the base point is singular".into(),
        );
    };
    let lc = levi_civita_residual(&metric_jet, &point_frame.gamma.map(|p| p.map(|r| r.map(|j| j.truncate(lower)))));

    // h and the metric at the probe points and any requested extras
    let mut omega_value = |q: [f64; 3]| field.omega(q, 0).map(|(_, w)| w.0.map(|j| j.value()));
    let mut targets: Vec<[f64; 3]> = test.points.iter().map(|t| t.0).collect();
    targets.extend(options.metric_points.iter().copied());
    let mut samples = Vec::with_capacity(targets.len());
    for q in targets {
        let h = match reconstruct_h(&mut omega_value, p, q, options.quadrature_tol) {
            Ok(h) => h,
            Err(e) => {
                return fail(
                    report,
                    BranchOutcome::Indeterminate(IndeterminateReason::NumericalDegeneracy),
                    format!("scale reconstruction to {q:?}: {e}"),
                )
            }
        };
        let g = match field.sample(q, 1) {
            Ok(s) => metric_from(&s.sigma_hat.values(), h, &Epsilon::new(s.epsilon.value())),
            Err(_) => None,
        };
        let Some(g) = g else {
            return fail(
                report,
                BranchOutcome::Indeterminate(IndeterminateReason::NumericalDegeneracy),
                format!("metric unavailable at {q:?}"),
            );
        };
        samples.push(MetricSample { point: q, h, g: g.0 });
    }

    report.outcome = BranchOutcome::Metrisable;
    let solution = CandidateSolution {
        sigma_hat,
        omega,
        metric_jet,
        metric: samples,
        levi_civita_residual: lc,
    };
    (report, Some(solution))
}
