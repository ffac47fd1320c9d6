//! Pencils `{sA + tB}` of symmetric 3×3 tensors.
//!
//! A pencil is regular when its characteristic binary cubic `det(sA + tB)`
//! has three distinct projective roots. For a regular pencil with a
//! nonsingular element, every real root gives a rank-2 element `N` with a
//! kernel covector `ξ`, and a unique (up to scale) nonsingular `H` in the
//! pencil with `trace(H⁻¹N) = 0`. [`PencilFrame`] packages `(N, H, ξ)` after
//! fixing scales and signs.

use nalgebra::{Matrix3, SMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::jet::{lift_root_with_tol, Jet, JetError};
use crate::projective::PencilSpan;
use crate::tensor::{Covector, Scalar, Sym2Contra, SYM_PAIRS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PencilError {
    #[error("every element of the pencil is singular")]
    EntirelyDegenerate,
    #[error("pencil is not regular (discriminant {discriminant:e})")]
    Irregular { discriminant: f64 },
    #[error("degenerate element at root {root} has rank below 2")]
    RankTooLow { root: f64 },
    #[error("no nonsingular trace-orthogonal partner exists")]
    NoPartner,
    #[error("trace-orthogonal partner is not unique")]
    NonUniquePartner,
    #[error("normal form conditions violated (residuals {0:?})")]
    NormalFormViolated([f64; 3]),
    #[error(transparent)]
    Jet(#[from] JetError),
}

/// `det(sN + tH) = Σ_k coeffs[k] s^{3−k} t^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryCubic<S> {
    pub coeffs: [S; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularity {
    Regular,
    Irregular,
}

impl<S: Scalar> BinaryCubic<S> {
    pub fn eval(&self, s: S, t: S) -> S {
        let [a, b, c, d] = self.coeffs;
        a * s * s * s + b * s * s * t + c * s * t * t + d * t * t * t
    }

    pub fn values(&self) -> BinaryCubic<f64> {
        BinaryCubic {
            coeffs: self.coeffs.map(|c| c.value()),
        }
    }
}

impl BinaryCubic<f64> {
    /// `b²c² − 4ac³ − 4b³d − 27a²d² + 18abcd`; positive iff three distinct real
    /// roots, negative iff one real and two complex.
    pub fn discriminant(&self) -> f64 {
        let [a, b, c, d] = self.coeffs;
        b * b * c * c - 4.0 * a * c * c * c - 4.0 * b * b * b * d - 27.0 * a * a * d * d
            + 18.0 * a * b * c * d
    }

    pub fn scale(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Regular iff `|Δ| > tol·max|c_k|⁴`.
    pub fn regularity(&self, tol: f64) -> Regularity {
        let s = self.scale();
        if s > 0.0 && self.discriminant().abs() > tol * s.powi(4) {
            Regularity::Regular
        } else {
            Regularity::Irregular
        }
    }
}

/// `det(sN + tH)` expanded exactly.
pub fn characteristic_cubic<S: Scalar>(n: &Sym2Contra<S>, h: &Sym2Contra<S>) -> BinaryCubic<S> {
    BinaryCubic {
        coeffs: [n.det(), n.adjugate().contract(h), h.adjugate().contract(n), h.det()],
    }
}

/// Real roots of `c0 + c1 t + c2 t² + c3 t³` (`c3 ≠ 0`), ascending.
pub fn real_cubic_roots(c: [f64; 4]) -> Vec<f64> {
    let [c0, c1, c2, c3] = c;
    let (a, b, cc) = (c2 / c3, c1 / c3, c0 / c3);
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + cc;
    let shift = -a / 3.0;
    let disc = -(4.0 * p * p * p + 27.0 * q * q);
    let mut roots = if disc > 0.0 && p < 0.0 {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
            .collect::<Vec<_>>()
    } else {
        let r = (q * q / 4.0 + p * p * p / 27.0).max(0.0).sqrt();
        vec![(-q / 2.0 + r).cbrt() + (-q / 2.0 - r).cbrt() + shift]
    };
    let f = |t: f64| ((c3 * t + c2) * t + c1) * t + c0;
    let df = |t: f64| (3.0 * c3 * t + 2.0 * c2) * t + c1;
    for r in roots.iter_mut() {
        for _ in 0..4 {
            let d = df(*r);
            if d == 0.0 {
                break;
            }
            let step = f(*r) / d;
            if !step.is_finite() {
                break;
            }
            *r -= step;
        }
    }
    roots.sort_by(f64::total_cmp);
    roots
}

fn frobenius_norm_value(m: &Sym2Contra<Jet>) -> f64 {
    m.values().frobenius_sq().sqrt()
}

fn scale_const(m: &Sym2Contra<Jet>, k: f64) -> Sym2Contra<Jet> {
    m.map(|j| j.scale(k))
}

/// A pencil in a basis `(A, B)` that is Frobenius-orthonormal at value level
/// and has `B` well away from singular.
#[derive(Debug, Clone)]
pub struct Pencil {
    pub a: Sym2Contra<Jet>,
    pub b: Sym2Contra<Jet>,
    /// Characteristic cubic of the orthonormalized raw pair (before the
    /// rotation that makes `B` nonsingular), at value level.
    pub raw_cubic: BinaryCubic<f64>,
    pub tol: f64,
}

/// A real degenerate element `N = A + tB` with its kernel covector.
#[derive(Debug, Clone)]
pub struct DegenerateElement {
    pub root: f64,
    pub t: Jet,
    pub n: Sym2Contra<Jet>,
    pub xi: Covector<Jet>,
}

impl Pencil {
    /// Orthonormalizes the span, rejects entirely degenerate and irregular
    /// pencils, and rotates so that `B` is as nonsingular as the fixed
    /// angle grid allows.
    pub fn new(rho: &Sym2Contra<Jet>, sigma: &Sym2Contra<Jet>, tol: f64) -> Result<Pencil, PencilError> {
        let na = frobenius_norm_value(rho);
        let a = scale_const(rho, 1.0 / na);
        let ab = a.values().frobenius_dot(&sigma.values());
        let b = *sigma - scale_const(&a, ab);
        let nb = frobenius_norm_value(&b);
        let b = scale_const(&b, 1.0 / nb);

        let raw_cubic = characteristic_cubic(&a, &b).values();
        if raw_cubic.scale() <= tol {
            return Err(PencilError::EntirelyDegenerate);
        }
        if raw_cubic.regularity(tol) == Regularity::Irregular {
            return Err(PencilError::Irregular {
                discriminant: raw_cubic.discriminant(),
            });
        }

        let (av, bv) = (a.values(), b.values());
        let best = (0..12)
            .map(|k| {
                let th = k as f64 * std::f64::consts::PI / 12.0;
                let m = av.scale_by(th.cos()) + bv.scale_by(th.sin());
                (th, m.det().abs() / m.frobenius_sq().powf(1.5))
            })
            .fold((0.0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let (c, s) = (best.0.cos(), best.0.sin());
        Ok(Pencil {
            a: scale_const(&a, -s) + scale_const(&b, c),
            b: scale_const(&a, c) + scale_const(&b, s),
            raw_cubic,
            tol,
        })
    }

    pub fn from_span(span: &PencilSpan, tol: f64) -> Result<Pencil, PencilError> {
        Pencil::new(&span.rho_raw, &span.sigma_raw, tol)
    }

    /// `det(A + tB)` as a polynomial in `t`, coefficients ascending.
    pub fn chart_polynomial(&self) -> [Jet; 4] {
        characteristic_cubic(&self.a, &self.b).coeffs
    }

    /// All real degenerate elements, ordered by ascending chart root.
    /// Elements of rank below 2 are returned in the second list.
    pub fn degenerate_elements(&self) -> Result<(Vec<DegenerateElement>, Vec<PencilError>), PencilError> {
        let coeffs = self.chart_polynomial();
        let values = coeffs.map(|c| c.value());
        let mut found = Vec::new();
        let mut skipped = Vec::new();
        for r in real_cubic_roots(values) {
            let t = lift_root_with_tol(&coeffs, r, self.tol)?;
            let n = self.a + self.b.map(|j| j * t);
            match kernel_covector(&n, self.tol) {
                Some(xi) => found.push(DegenerateElement { root: r, t, n, xi }),
                None => skipped.push(PencilError::RankTooLow { root: r }),
            }
        }
        Ok((found, skipped))
    }

    /// The nonsingular `H = B + uN` with `trace(H⁻¹N) = 0`.
    pub fn orthogonal_partner(&self, n: &Sym2Contra<Jet>) -> Result<Sym2Contra<Jet>, PencilError> {
        orthogonal_partner(&self.b, n, self.tol)
    }
}

/// Unit kernel covector of a rank-2 symmetric `N` from the dominant column of
/// `adj(N)`, with its largest component made positive.
pub fn kernel_covector(n: &Sym2Contra<Jet>, tol: f64) -> Option<Covector<Jet>> {
    let adj = n.adjugate();
    let av = adj.values();
    let nn = n.values().frobenius_sq();
    let col = (0..3)
        .map(|j| (j, (0..3).map(|i| av.get(i, j).powi(2)).sum::<f64>()))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if col.1.sqrt() <= tol * nn {
        return None;
    }
    let v: [Jet; 3] = std::array::from_fn(|i| adj.get(i, col.0));
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().ok()?;
    let mut xi = v.map(|c| c / norm);
    let lead = (0..3)
        .max_by(|&i, &j| xi[i].value().abs().total_cmp(&xi[j].value().abs()))
        .unwrap_or(0);
    if xi[lead].value() < 0.0 {
        xi = xi.map(|c| -c);
    }
    Some(Covector(xi))
}

fn sign_fix_by_diagonal(h: Sym2Contra<Jet>) -> Sym2Contra<Jet> {
    let hv = h.values();
    let lead = (0..3)
        .max_by(|&i, &j| hv.get(i, i).abs().total_cmp(&hv.get(j, j).abs()))
        .unwrap_or(0);
    if hv.get(lead, lead) < 0.0 {
        -h
    } else {
        h
    }
}

fn sign_fix_by_component(m: Sym2Contra<Jet>) -> Sym2Contra<Jet> {
    let mv = m.values();
    let lead = (0..6)
        .max_by(|&i, &j| mv.0[i].abs().total_cmp(&mv.0[j].abs()))
        .unwrap_or(0);
    if mv.0[lead] < 0.0 {
        -m
    } else {
        m
    }
}

fn unit_frobenius(m: &Sym2Contra<Jet>) -> Result<Sym2Contra<Jet>, PencilError> {
    let norm = m.frobenius_sq().sqrt()?;
    Ok(m.map(|j| j / norm))
}

/// Solves `p(u) = trace(adj(M + uN)·N) = 0` (interpolated from `u = 0, 1, 2`)
/// for the unique nonsingular `H = M + uN`, normalized to unit Frobenius norm
/// with its largest diagonal entry positive.
pub fn orthogonal_partner(
    m: &Sym2Contra<Jet>,
    n: &Sym2Contra<Jet>,
    tol: f64,
) -> Result<Sym2Contra<Jet>, PencilError> {
    let p = |u: f64| (*m + n.map(|j| j.scale(u))).adjugate().contract(n);
    let (p0, p1, p2) = (p(0.0), p(1.0), p(2.0));
    let a2 = (p2 - p1.scale(2.0) + p0).scale(0.5);
    let a1 = p1 - p0 - a2;
    let a0 = p0;
    let scale = a0.value().abs().max(a1.value().abs()).max(a2.value().abs());
    if scale == 0.0 {
        return Err(PencilError::NoPartner);
    }
    let nonsingular = |h: &Sym2Contra<f64>| h.det().abs() > tol * h.frobenius_sq().powf(1.5);

    // candidate value-level roots
    let roots: Vec<f64> = if a2.value().abs() <= tol * scale {
        if a1.value().abs() <= tol * scale {
            return Err(PencilError::NoPartner);
        }
        vec![-a0.value() / a1.value()]
    } else {
        let (qa, qb, qc) = (a2.value(), a1.value(), a0.value());
        let d = qb * qb - 4.0 * qa * qc;
        if d < 0.0 {
            vec![]
        } else {
            let s = d.sqrt();
            let q = -0.5 * (qb + qb.signum() * s);
            let mut r = vec![q / qa];
            if q != 0.0 {
                r.push(qc / q);
            }
            r
        }
    };
    let valid: Vec<f64> = roots
        .into_iter()
        .filter(|&u| nonsingular(&(m.values() + n.values().scale_by(u))))
        .collect();
    let u0 = match valid.as_slice() {
        [] => return Err(PencilError::NoPartner),
        [u] => *u,
        [u, v] if (u - v).abs() <= tol.sqrt() * u.abs().max(1.0) => *u,
        _ => return Err(PencilError::NonUniquePartner),
    };
    let u = if a2.value().abs() <= tol * scale {
        (-a0) / a1
    } else {
        lift_root_with_tol(&[a0, a1, a2], u0, tol)?
    };
    let h = *m + n.map(|j| j * u);
    let h = sign_fix_by_diagonal(unit_frobenius(&h)?);

    let hi = h.values().inverse().map_err(|_| PencilError::NoPartner)?;
    let tr = hi.contract(&n.values());
    let tr_scale = hi.frobenius_sq().sqrt() * n.values().frobenius_sq().sqrt();
    if tr.abs() > 1e-10 * tr_scale {
        return Err(PencilError::NormalFormViolated([0.0, tr / tr_scale, 0.0]));
    }
    Ok(h)
}

/// `ρ` degenerate, `σ` nonsingular with `σ_{bc}ρ^{bc} = 0`, `ρ^{bc}ξ_b = 0`.
#[derive(Debug, Clone)]
pub struct PencilFrame {
    pub rho: Sym2Contra<Jet>,
    pub sigma: Sym2Contra<Jet>,
    pub xi: Covector<Jet>,
    pub branch: usize,
}

impl PencilFrame {
    /// Value-level residuals of the three normal-form conditions:
    /// `1/|det σ̄|` (σ̄ the unit-normalized σ), `|σ_{bc}ρ^{bc}|`, `max_c |ρ^{bc}ξ_b|`,
    /// each relative to the sizes involved.
    pub fn normal_form_residuals(&self) -> [f64; 3] {
        let s = self.sigma.values();
        let r = self.rho.values();
        let x = self.xi.0.map(|j| j.value());
        let sn = s.frobenius_sq().sqrt();
        let rn = r.frobenius_sq().sqrt();
        let det = s.det() / sn.powi(3);
        let inv = match s.inverse() {
            Ok(i) => i,
            Err(_) => return [f64::INFINITY, f64::INFINITY, f64::INFINITY],
        };
        let tr = inv.contract(&r).abs() / (inv.frobenius_sq().sqrt() * rn);
        let xn = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let kernel = (0..3)
            .map(|c| (0..3).map(|b| r.get(b, c) * x[b]).sum::<f64>().abs())
            .fold(0.0, f64::max)
            / (rn * xn);
        [1.0 / det.abs(), tr, kernel]
    }

    /// True when `σ` is nonsingular (relative determinant above `tol`) and the
    /// two orthogonality conditions hold to `cond_tol`.
    pub fn satisfies_normal_form(&self, tol: f64, cond_tol: f64) -> bool {
        let [d, t, k] = self.normal_form_residuals();
        d < 1.0 / tol && t < cond_tol && k < cond_tol
    }
}

/// Gauge-fixes `(N, ξ, H)`: `ρ = N/‖N‖_F` with its largest component
/// positive, `σ = H`, `ξ` as given.
pub fn normalize_frame(
    n: &Sym2Contra<Jet>,
    xi: &Covector<Jet>,
    h: &Sym2Contra<Jet>,
    branch: usize,
) -> Result<PencilFrame, PencilError> {
    let rho = sign_fix_by_component(unit_frobenius(n)?);
    let frame = PencilFrame {
        rho,
        sigma: *h,
        xi: *xi,
        branch,
    };
    if !frame.satisfies_normal_form(1e-12, 1e-10) {
        return Err(PencilError::NormalFormViolated(frame.normal_form_residuals()));
    }
    Ok(frame)
}

/// All normal-form frames of a pencil, one per usable real root.
pub fn pencil_frames(pencil: &Pencil) -> Result<(Vec<PencilFrame>, Vec<PencilError>), PencilError> {
    let (elements, mut skipped) = pencil.degenerate_elements()?;
    let mut frames = Vec::new();
    for (k, e) in elements.iter().enumerate() {
        match pencil
            .orthogonal_partner(&e.n)
            .and_then(|h| normalize_frame(&e.n, &e.xi, &h, k))
        {
            Ok(f) => frames.push(f),
            Err(err) => skipped.push(err),
        }
    }
    Ok((frames, skipped))
}

/// Distance between the planes spanned by two pairs of symmetric tensors:
/// Frobenius norm of the difference of their orthogonal projectors in the
/// Frobenius inner product.
pub fn span_distance(u: (&Sym2Contra<f64>, &Sym2Contra<f64>), v: (&Sym2Contra<f64>, &Sym2Contra<f64>)) -> f64 {
    let flat = |m: &Sym2Contra<f64>| {
        let w = std::f64::consts::SQRT_2;
        SYM_PAIRS.map(|(a, b)| m.get(a, b) * if a == b { 1.0 } else { w })
    };
    let proj = |p: &Sym2Contra<f64>, q: &Sym2Contra<f64>| {
        let basis = SMatrix::<f64, 6, 2>::from_columns(&[flat(p).into(), flat(q).into()]);
        let qr = basis.qr();
        let q = qr.q();
        q * q.transpose()
    };
    (proj(u.0, u.1) - proj(v.0, v.1)).norm()
}

/// Loewy–Radwan type of a three-dimensional space of symmetric matrices.
#[derive(Debug, Clone, PartialEq)]
pub enum SubspaceClass {
    /// Some element is nonsingular.
    NotDegenerate,
    /// All elements annihilate this covector.
    W1([f64; 3]),
    /// All elements have the form `θ ⊙ φ` for this `θ`.
    W2([f64; 3]),
    /// Entirely degenerate but of neither type.
    Other,
}

fn to_matrix3(m: &Sym2Contra<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m.get(i, j))
}

fn sign_fixed_unit(v: Vector3<f64>) -> [f64; 3] {
    let v = v.normalize();
    let lead = v.iamax();
    let v = if v[lead] < 0.0 { -v } else { v };
    [v[0], v[1], v[2]]
}

const CLASSIFY_SEED: u64 = 0x10e3_7ad1;

/// Classifies `span(basis)`.
pub fn classify_subspace(basis: &[Sym2Contra<f64>; 3], tol: f64) -> SubspaceClass {
    let mats = basis.map(|m| to_matrix3(&m));
    let scale = mats.iter().fold(0.0f64, |s, m| s.max(m.norm()));
    if scale == 0.0 {
        return SubspaceClass::Other;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(CLASSIFY_SEED);
    let mut samples = Vec::with_capacity(20);
    for _ in 0..20 {
        let w: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let m = mats[0] * w[0] + mats[1] * w[1] + mats[2] * w[2];
        let n = m.norm();
        if n > 0.0 && m.determinant().abs() > tol * n.powi(3) {
            return SubspaceClass::NotDegenerate;
        }
        samples.push(m);
    }

    // W1: a covector killed by every basis element
    let stacked = SMatrix::<f64, 9, 3>::from_fn(|r, c| mats[r / 3][(r % 3, c)]);
    let svd = stacked.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let (imin, smin) = svd.singular_values.argmin();
    if smin <= tol.sqrt() * svd.singular_values.max() {
        return SubspaceClass::W1(sign_fixed_unit(vt.row(imin).transpose()));
    }

    // W2: θ is orthogonal to every kernel vector of every element
    let mut kernels: Vec<Vector3<f64>> = Vec::new();
    for m in mats.iter().chain(samples.iter()) {
        let n = m.norm();
        if n == 0.0 {
            continue;
        }
        let e = m.symmetric_eigen();
        for i in 0..3 {
            if e.eigenvalues[i].abs() <= tol.sqrt() * n {
                kernels.push(e.eigenvectors.column(i).into_owned());
            }
        }
    }
    if kernels.is_empty() {
        return SubspaceClass::Other;
    }
    let k = nalgebra::DMatrix::from_fn(kernels.len(), 3, |r, c| kernels[r][c]);
    let ksvd = k.svd(false, true);
    let kvt = ksvd.v_t.expect("requested V^T");
    let (imin, _) = ksvd.singular_values.argmin();
    // with fewer kernel rows than 3 the null direction is the missing row
    let theta = if kernels.len() < 3 {
        let cross = if kernels.len() == 2 {
            kernels[0].cross(&kernels[1])
        } else {
            let e = kernels[0];
            let other = if e.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            e.cross(&other)
        };
        cross.normalize()
    } else {
        Vector3::new(kvt[(imin, 0)], kvt[(imin, 1)], kvt[(imin, 2)]).normalize()
    };
    let p = Matrix3::identity() - theta * theta.transpose();
    if mats.iter().all(|m| (p * m * p).norm() <= tol.sqrt() * scale) {
        return SubspaceClass::W2(sign_fixed_unit(theta));
    }
    SubspaceClass::Other
}
