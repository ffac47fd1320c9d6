//! Fixed-size tensor algebra in three dimensions.
//!
//! Every type is generic over a [`Scalar`], so the same code runs on plain
//! `f64` values and on [`Jet`]s. Upper and lower index positions are part of
//! the type: a [`Sym2Contra`] (`σ^{ab}`) can only be paired with a
//! [`Sym2Cov`] (`T_{ab}`), a [`Vector`] with a [`Covector`], and so on.
//!
//! Index conventions: `Tensor3Mixed` is `A^{ab}{}_c` (symmetric in `ab`),
//! `Sym2ContraGrad` is `D_a{}^{bc}` (symmetric in `bc`, the shape of
//! `∇_a σ^{bc}`), and `Tensor3MixedCov` is `Q_{ab}{}^c` (symmetric in `ab`).
//!
//! Two determinants are provided. [`Sym2Contra::det`] is the ordinary matrix
//! determinant. [`Sym2Contra::det_eps`] is the volume-form contraction
//! `τ^{ab}τ^{cd}τ^{ef}ε_{ace}ε_{bdf}`, which equals `6·s²·det(τ)` when
//! `ε_{123} = s` (and `6·det(τ)/s²` for the covariant flavour).

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

use crate::jet::Jet;

/// Scalar field over which the tensors are built.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant with the same shape (jet order) as `self`.
    fn constant_like(&self, c: f64) -> Self;
    /// Value part.
    fn value(&self) -> f64;
    fn scale(&self, c: f64) -> Self;
    /// Largest absolute coefficient, used for scale-aware tolerances.
    fn magnitude(&self) -> f64;
}

impl Scalar for f64 {
    fn constant_like(&self, c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl Scalar for Jet {
    fn constant_like(&self, c: f64) -> Self {
        Jet::constant(self.order(), c)
    }
    fn value(&self) -> f64 {
        Jet::value(self)
    }
    fn scale(&self, c: f64) -> Self {
        Jet::scale(self, c)
    }
    fn magnitude(&self) -> f64 {
        self.max_abs()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor is singular (determinant value {0:e})")]
    Singular(f64),
}

/// Storage slot of the symmetric pair `(a, b)`: `00, 01, 02, 11, 12, 22`.
#[inline]
pub const fn sym(a: usize, b: usize) -> usize {
    const SLOT: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
    SLOT[a][b]
}

/// Index pairs in storage order.
pub const SYM_PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Even and odd permutations of `(0, 1, 2)` with their signs.
pub const PERMUTATIONS: [([usize; 3], f64); 6] = [
    ([0, 1, 2], 1.0),
    ([1, 2, 0], 1.0),
    ([2, 0, 1], 1.0),
    ([0, 2, 1], -1.0),
    ([2, 1, 0], -1.0),
    ([1, 0, 2], -1.0),
];

/// Levi-Civita symbol with `[123] = 1`.
pub fn levi_civita(a: usize, b: usize, c: usize) -> f64 {
    PERMUTATIONS
        .iter()
        .find(|(p, _)| *p == [a, b, c])
        .map_or(0.0, |(_, s)| *s)
}

#[inline]
pub const fn delta(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// Sums a nonempty iterator of scalars.
pub fn sum<S: Scalar>(iter: impl IntoIterator<Item = S>) -> S {
    iter.into_iter()
        .reduce(|a, b| a + b)
        .expect("sum over an empty index range")
}

fn max_value<S: Scalar>(items: &[S]) -> f64 {
    items.iter().fold(0.0, |m, s| m.max(s.value().abs()))
}

fn max_magnitude<S: Scalar>(items: &[S]) -> f64 {
    items.iter().fold(0.0, |m, s| m.max(s.magnitude()))
}

macro_rules! impl_linear {
    ($name:ident) => {
        impl<S: Scalar> Add for $name<S> {
            type Output = Self;
            fn add(self, rhs: Self) -> Self {
                self.zip_with(&rhs, |a, b| a + b)
            }
        }
        impl<S: Scalar> Sub for $name<S> {
            type Output = Self;
            fn sub(self, rhs: Self) -> Self {
                self.zip_with(&rhs, |a, b| a - b)
            }
        }
        impl<S: Scalar> Neg for $name<S> {
            type Output = Self;
            fn neg(self) -> Self {
                self.map(|a| -a)
            }
        }
    };
}

macro_rules! array_tensor {
    ($(#[$doc:meta])* $name:ident, $n:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $name<S>(pub [S; $n]);

        impl<S: Scalar> $name<S> {
            pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> $name<T> {
                $name(self.0.map(f))
            }
            pub fn zip_with(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
                $name(std::array::from_fn(|i| f(self.0[i], other.0[i])))
            }
            pub fn scale_by(&self, s: S) -> Self {
                self.map(|a| a * s)
            }
            pub fn values(&self) -> $name<f64> {
                self.map(|a| a.value())
            }
            /// Largest absolute value part.
            pub fn max_abs_value(&self) -> f64 {
                max_value(&self.0)
            }
            /// Largest absolute coefficient over all components.
            pub fn max_magnitude(&self) -> f64 {
                max_magnitude(&self.0)
            }
        }

        impl_linear!($name);
    };
}

array_tensor!(
    /// Contravariant vector `X^a`.
    Vector, 3
);
array_tensor!(
    /// Covector `ξ_a`.
    Covector, 3
);
array_tensor!(
    /// Symmetric contravariant 2-tensor `σ^{ab}`.
    Sym2Contra, 6
);
array_tensor!(
    /// Symmetric covariant 2-tensor `T_{ab}`.
    Sym2Cov, 6
);

impl<S: Scalar> Vector<S> {
    /// `X^a ξ_a`.
    pub fn pair(&self, xi: &Covector<S>) -> S {
        sum((0..3).map(|a| self.0[a] * xi.0[a]))
    }
}

impl<S: Scalar> Covector<S> {
    pub fn pair(&self, x: &Vector<S>) -> S {
        x.pair(self)
    }
    pub fn euclidean_norm_sq(&self) -> S {
        sum(self.0.iter().map(|&a| a * a))
    }
}

macro_rules! sym2_common {
    ($name:ident, $dual:ident) => {
        impl<S: Scalar> $name<S> {
            pub fn from_fn(f: impl Fn(usize, usize) -> S) -> Self {
                $name(SYM_PAIRS.map(|(a, b)| f(a, b)))
            }
            #[inline]
            pub fn get(&self, a: usize, b: usize) -> S {
                self.0[sym(a, b)]
            }
            pub fn to_matrix(&self) -> [[S; 3]; 3] {
                std::array::from_fn(|a| std::array::from_fn(|b| self.get(a, b)))
            }
            pub fn diagonal(d: [S; 3]) -> Self {
                let z = d[0].constant_like(0.0);
                Self::from_fn(|a, b| if a == b { d[a] } else { z })
            }
            pub fn identity_like(template: S) -> Self {
                let one = template.constant_like(1.0);
                Self::diagonal([one, one, one])
            }
            /// Ordinary matrix determinant.
            pub fn det(&self) -> S {
                let m = self.to_matrix();
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
            /// Classical adjugate; `self · adj = det · δ`.
            pub fn adjugate(&self) -> $dual<S> {
                let m = self.to_matrix();
                let cof = |i: usize, j: usize| {
                    let r = [(i + 1) % 3, (i + 2) % 3];
                    let c = [(j + 1) % 3, (j + 2) % 3];
                    m[r[0]][c[0]] * m[r[1]][c[1]] - m[r[0]][c[1]] * m[r[1]][c[0]]
                };
                $dual::from_fn(|a, b| cof(b, a))
            }
            /// Inverse via adjugate over determinant.
            pub fn inverse(&self) -> Result<$dual<S>, TensorError> {
                let det = self.det();
                let scale = self.max_abs_value();
                if det.value() == 0.0
                    || !det.value().is_finite()
                    || det.value().abs() <= 1e-14 * scale * scale * scale
                {
                    return Err(TensorError::Singular(det.value()));
                }
                let inv_det = det.constant_like(1.0) / det;
                Ok(self.adjugate().scale_by(inv_det))
            }
            /// Full contraction with the dual flavour, `σ^{ab} T_{ab}`.
            pub fn contract(&self, other: &$dual<S>) -> S {
                sum((0..3).flat_map(|a| (0..3).map(move |b| (a, b)))
                    .map(|(a, b)| self.get(a, b) * other.get(a, b)))
            }
            /// Squared Frobenius norm of the full 3×3 matrix.
            pub fn frobenius_sq(&self) -> S {
                sum((0..3).flat_map(|a| (0..3).map(move |b| (a, b)))
                    .map(|(a, b)| self.get(a, b) * self.get(a, b)))
            }
            /// Euclidean (Frobenius) inner product of the full matrices.
            pub fn frobenius_dot(&self, other: &Self) -> S {
                sum((0..3).flat_map(|a| (0..3).map(move |b| (a, b)))
                    .map(|(a, b)| self.get(a, b) * other.get(a, b)))
            }
            /// Trace of the matrix (as a plain array, ignoring index position).
            pub fn matrix_trace(&self) -> S {
                self.get(0, 0) + self.get(1, 1) + self.get(2, 2)
            }
        }
    };
}

sym2_common!(Sym2Contra, Sym2Cov);
sym2_common!(Sym2Cov, Sym2Contra);

impl<S: Scalar> Sym2Contra<S> {
    /// `τ^{ab}τ^{cd}τ^{ef}ε_{ace}ε_{bdf}`, equal to `6 s² det τ`.
    pub fn det_eps(&self, eps: &Epsilon<S>) -> S {
        let s = eps.lower;
        triple_contraction(self) * s * s
    }

    /// `σ^{ab} ξ_b`.
    pub fn raise(&self, xi: &Covector<S>) -> Vector<S> {
        Vector(std::array::from_fn(|a| {
            sum((0..3).map(|b| self.get(a, b) * xi.0[b]))
        }))
    }

    /// `σ^{ab}ξ_a ξ_b`.
    pub fn quadratic(&self, xi: &Covector<S>) -> S {
        self.raise(xi).pair(xi)
    }
}

impl<S: Scalar> Sym2Cov<S> {
    /// `τ_{ab}τ_{cd}τ_{ef}ε^{ace}ε^{bdf}`, equal to `6 det τ / s²`.
    pub fn det_eps(&self, eps: &Epsilon<S>) -> S {
        let u = eps.upper();
        triple_contraction(self) * u * u
    }

    /// `T_{ab} X^b`.
    pub fn lower(&self, x: &Vector<S>) -> Covector<S> {
        Covector(std::array::from_fn(|a| {
            sum((0..3).map(|b| self.get(a, b) * x.0[b]))
        }))
    }
}

/// `Σ sgn(π) sgn(τ) m[π₀][τ₀] m[π₁][τ₁] m[π₂][τ₂]` over permutation pairs.
fn triple_contraction<S: Scalar, T: SymAccess<S>>(m: &T) -> S {
    sum(PERMUTATIONS.iter().flat_map(|(p, sp)| {
        PERMUTATIONS.iter().map(move |(q, sq)| {
            (m.at(p[0], q[0]) * m.at(p[1], q[1]) * m.at(p[2], q[2])).scale(sp * sq)
        })
    }))
}

trait SymAccess<S> {
    fn at(&self, a: usize, b: usize) -> S;
}

impl<S: Scalar> SymAccess<S> for Sym2Contra<S> {
    fn at(&self, a: usize, b: usize) -> S {
        self.get(a, b)
    }
}

impl<S: Scalar> SymAccess<S> for Sym2Cov<S> {
    fn at(&self, a: usize, b: usize) -> S {
        self.get(a, b)
    }
}

/// Volume form with `ε_{123} = lower` and dual `ε^{123} = 1/lower`, so that
/// `ε^{abc}ε_{abc} = 6`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epsilon<S> {
    pub lower: S,
}

impl<S: Scalar> Epsilon<S> {
    pub fn new(lower: S) -> Self {
        Epsilon { lower }
    }

    pub fn upper(&self) -> S {
        self.lower.constant_like(1.0) / self.lower
    }

    /// `ε_{abc}`.
    pub fn lower_at(&self, a: usize, b: usize, c: usize) -> Option<S> {
        let s = levi_civita(a, b, c);
        (s != 0.0).then(|| self.lower.scale(s))
    }

    /// `ε^{abc}`.
    pub fn upper_at(&self, a: usize, b: usize, c: usize) -> Option<S> {
        let s = levi_civita(a, b, c);
        (s != 0.0).then(|| self.upper().scale(s))
    }

    /// `ε^{abc}ε_{abc}`.
    pub fn self_contraction(&self) -> S {
        let u = self.upper();
        sum(PERMUTATIONS
            .iter()
            .map(|(p, _)| self.lower_at(p[0], p[1], p[2]).unwrap() * u.scale(levi_civita(p[0], p[1], p[2]))))
    }
}

/// `A^{ab}{}_c`, symmetric in `ab`. Houses the projective Weyl tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor3Mixed<S>(pub [[S; 3]; 6]);

/// `Q_{ab}{}^c`, symmetric in `ab`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor3MixedCov<S>(pub [[S; 3]; 6]);

/// `D_a{}^{bc}`, symmetric in `bc`: the shape of `∇_a σ^{bc}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2ContraGrad<S>(pub [[S; 6]; 3]);

macro_rules! pair_then_single {
    ($name:ident) => {
        impl<S: Scalar> $name<S> {
            pub fn from_fn(f: impl Fn(usize, usize, usize) -> S) -> Self {
                $name(SYM_PAIRS.map(|(a, b)| std::array::from_fn(|c| f(a, b, c))))
            }
            #[inline]
            pub fn get(&self, a: usize, b: usize, c: usize) -> S {
                self.0[sym(a, b)][c]
            }
            pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> $name<T> {
                $name(self.0.map(|row| row.map(&f)))
            }
            pub fn zip_with(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
                $name(std::array::from_fn(|i| {
                    std::array::from_fn(|c| f(self.0[i][c], other.0[i][c]))
                }))
            }
            pub fn scale_by(&self, s: S) -> Self {
                self.map(|a| a * s)
            }
            pub fn values(&self) -> $name<f64> {
                self.map(|a| a.value())
            }
            pub fn components(&self) -> impl Iterator<Item = &S> {
                self.0.iter().flatten()
            }
            pub fn max_abs_value(&self) -> f64 {
                self.components().fold(0.0, |m, s| m.max(s.value().abs()))
            }
            pub fn max_magnitude(&self) -> f64 {
                self.components().fold(0.0, |m, s| m.max(s.magnitude()))
            }
        }
        impl_linear!($name);
    };
}

pair_then_single!(Tensor3Mixed);
pair_then_single!(Tensor3MixedCov);

impl<S: Scalar> Tensor3Mixed<S> {
    /// `A^{ab}{}_b`.
    pub fn trace(&self) -> Vector<S> {
        Vector(std::array::from_fn(|a| sum((0..3).map(|b| self.get(a, b, b)))))
    }

    /// `A^{ab}{}_c − ¼(δ_c{}^a t^b + δ_c{}^b t^a)` with `t^a = A^{ab}{}_b`.
    pub fn remove_trace(&self) -> Self {
        let t = self.trace();
        Self::from_fn(|a, b, c| {
            self.get(a, b, c) - (t.0[b].scale(delta(a, c)) + t.0[a].scale(delta(b, c))).scale(0.25)
        })
    }

    /// `ρ^{d(a}σ^{b)e}ε_{cde}`: the simple element `ρ ∧ σ`.
    pub fn wedge(rho: &Sym2Contra<S>, sigma: &Sym2Contra<S>, eps: &Epsilon<S>) -> Self {
        Self::from_fn(|a, b, c| {
            let terms = PERMUTATIONS.iter().filter(|(p, _)| p[0] == c).map(|(p, s)| {
                let (d, e) = (p[1], p[2]);
                ((rho.get(d, a) * sigma.get(b, e) + rho.get(d, b) * sigma.get(a, e)) * eps.lower)
                    .scale(0.5 * s)
            });
            sum(terms)
        })
    }

    /// The probe map `2 T_{ad} A^{a(b}{}_e ε^{c)de}`.
    pub fn probe(&self, t: &Sym2Cov<S>, eps: &Epsilon<S>) -> Sym2Contra<S> {
        let u = eps.upper();
        Sym2Contra::from_fn(|b, c| {
            let half = |b: usize, c: usize| {
                sum(PERMUTATIONS.iter().filter(|(p, _)| p[0] == c).flat_map(|(p, s)| {
                    let (d, e) = (p[1], p[2]);
                    (0..3).map(move |a| (t.get(a, d) * self.get(a, b, e)).scale(*s))
                }))
            };
            (half(b, c) + half(c, b)) * u
        })
    }

    /// `Q_{ab}{}^c = ε_{pq(a} A^{pr}{}_{b)} A^{qc}{}_r`.
    pub fn plucker_square(&self, eps: &Epsilon<S>) -> Tensor3MixedCov<S> {
        let s = eps.lower;
        Tensor3MixedCov::from_fn(|a, b, c| {
            let half = |a: usize, b: usize| {
                sum(PERMUTATIONS.iter().filter(|(p, _)| p[2] == a).flat_map(|(p, sg)| {
                    let (pp, q) = (p[0], p[1]);
                    (0..3).map(move |r| (self.get(pp, r, b) * self.get(q, c, r)).scale(*sg))
                }))
            };
            (half(a, b) + half(b, a)).scale(0.5) * s
        })
    }
}

impl<S: Scalar> Sym2ContraGrad<S> {
    pub fn from_fn(f: impl Fn(usize, usize, usize) -> S) -> Self {
        Sym2ContraGrad(std::array::from_fn(|a| SYM_PAIRS.map(|(b, c)| f(a, b, c))))
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> S {
        self.0[a][sym(b, c)]
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> Sym2ContraGrad<T> {
        Sym2ContraGrad(self.0.map(|row| row.map(&f)))
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        Sym2ContraGrad(std::array::from_fn(|a| {
            std::array::from_fn(|i| f(self.0[a][i], other.0[a][i]))
        }))
    }

    pub fn values(&self) -> Sym2ContraGrad<f64> {
        self.map(|a| a.value())
    }

    pub fn components(&self) -> impl Iterator<Item = &S> {
        self.0.iter().flatten()
    }

    pub fn max_abs_value(&self) -> f64 {
        self.components().fold(0.0, |m, s| m.max(s.value().abs()))
    }

    /// `θ_a σ^{bc}`.
    pub fn outer(theta: &Covector<S>, sigma: &Sym2Contra<S>) -> Self {
        Self::from_fn(|a, b, c| theta.0[a] * sigma.get(b, c))
    }

    /// `D_d{}^{cd}`.
    pub fn divergence(&self) -> Vector<S> {
        Vector(std::array::from_fn(|c| sum((0..3).map(|d| self.get(d, c, d)))))
    }

    /// The trace-free part `D_a{}^{bc} − ½δ_a{}^{(b}D_d{}^{c)d}`.
    pub fn tracefree(&self) -> Self {
        let k = self.divergence();
        Self::from_fn(|a, b, c| {
            self.get(a, b, c) - (k.0[c].scale(delta(a, b)) + k.0[b].scale(delta(a, c))).scale(0.25)
        })
    }

    /// `D_a{}^{bc} T_{bc}`.
    pub fn contract_pair(&self, t: &Sym2Cov<S>) -> Covector<S> {
        Covector(std::array::from_fn(|a| {
            sum((0..3).flat_map(|b| (0..3).map(move |c| (b, c)))
                .map(|(b, c)| self.get(a, b, c) * t.get(b, c)))
        }))
    }
}

impl_linear!(Sym2ContraGrad);

/// The trace-free projector on `∇_a σ^{bc}`-shaped tensors.
pub fn tracefree_project<S: Scalar>(d: &Sym2ContraGrad<S>) -> Sym2ContraGrad<S> {
    d.tracefree()
}
