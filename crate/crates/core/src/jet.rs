//! Truncated Taylor jets in three variables.
//!
//! A [`Jet`] of order `K` stores the Taylor coefficients of a smooth scalar
//! at a base point for every multi-index `α ∈ N³` with `|α| ≤ K`, densely,
//! in graded-lex order (`1, x, y, z, x², xy, xz, y², yz, z², …`). The
//! coefficient of `α` is `∂^α f(p) / α!`. Products drop every monomial of
//! degree above `K`, so jet arithmetic is exact truncated polynomial
//! arithmetic and carries exact derivatives through any composition.
//!
//! Differentiation lowers the order by one: the derivative of an order-`K`
//! jet only knows the derivative up to order `K - 1`. Binary operations
//! refuse to mix orders; use [`Jet::truncate`] to bring operands together.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::sync::LazyLock;

use thiserror::Error;

/// Highest supported jet order.
pub const MAX_ORDER: usize = 4;
/// Number of coefficients of a jet of order [`MAX_ORDER`].
pub const MAX_LEN: usize = coeff_count(MAX_ORDER);

/// Number of coefficients of an order-`order` jet, `C(order + 3, 3)`.
pub const fn coeff_count(order: usize) -> usize {
    (order + 1) * (order + 2) * (order + 3) / 6
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("jet order mismatch: {left} vs {right}")]
    OrderMismatch { left: usize, right: usize },
    #[error("jet order {0} exceeds the maximum of {MAX_ORDER}")]
    OrderTooHigh(usize),
    #[error("expected {expected} coefficients, got {got}")]
    CoefficientCount { expected: usize, got: usize },
    #[error("jet is not invertible (value part {0:e})")]
    NotInvertible(f64),
    #[error("{function} is undefined at value {value:e}")]
    Domain { function: &'static str, value: f64 },
    #[error("root {root} is not simple: |p'(r)| = {derivative:e} is below tolerance")]
    RootNotSimple { root: f64, derivative: f64 },
    #[error("{root} is not a root: |p(r)| = {residual:e}")]
    NotARoot { root: f64, residual: f64 },
}

struct Tables {
    monomials: Vec<[u8; 3]>,
    lookup: [[[u8; MAX_ORDER + 1]; MAX_ORDER + 1]; MAX_ORDER + 1],
    /// `(i, j, k)` with `mono(i) + mono(j) = mono(k)`, grouped by ascending `k`.
    products: Vec<(u8, u8, u8)>,
    /// `product_ends[K]` is the number of leading triples with `deg(k) <= K`.
    product_ends: [usize; MAX_ORDER + 1],
    factorial: [f64; MAX_ORDER + 1],
}

const NONE: u8 = u8::MAX;

static TABLES: LazyLock<Tables> = LazyLock::new(|| {
    let mut monomials = Vec::with_capacity(MAX_LEN);
    let mut lookup = [[[NONE; MAX_ORDER + 1]; MAX_ORDER + 1]; MAX_ORDER + 1];
    for d in 0..=MAX_ORDER {
        for a in (0..=d).rev() {
            for b in (0..=d - a).rev() {
                let c = d - a - b;
                lookup[a][b][c] = monomials.len() as u8;
                monomials.push([a as u8, b as u8, c as u8]);
            }
        }
    }
    let mut products = Vec::new();
    let mut product_ends = [0; MAX_ORDER + 1];
    for (k, mk) in monomials.iter().enumerate() {
        for (i, mi) in monomials.iter().enumerate() {
            if (0..3).all(|v| mi[v] <= mk[v]) {
                let mj = [mk[0] - mi[0], mk[1] - mi[1], mk[2] - mi[2]];
                let j = lookup[mj[0] as usize][mj[1] as usize][mj[2] as usize];
                products.push((i as u8, j, k as u8));
            }
        }
        let deg = mk.iter().map(|&e| e as usize).sum::<usize>();
        product_ends[deg] = products.len();
    }
    let mut factorial = [1.0; MAX_ORDER + 1];
    for n in 1..=MAX_ORDER {
        factorial[n] = factorial[n - 1] * n as f64;
    }
    Tables {
        monomials,
        lookup,
        products,
        product_ends,
        factorial,
    }
});

/// Multi-index of the coefficient stored at position `index`.
pub fn monomial(index: usize) -> [u8; 3] {
    TABLES.monomials[index]
}

/// Position of multi-index `alpha` in the dense layout, if `|alpha| <= MAX_ORDER`.
pub fn monomial_index(alpha: [u8; 3]) -> Option<usize> {
    if alpha.iter().map(|&a| a as usize).sum::<usize>() > MAX_ORDER {
        return None;
    }
    let i = TABLES.lookup[alpha[0] as usize][alpha[1] as usize][alpha[2] as usize];
    (i != NONE).then_some(i as usize)
}

fn alpha_factorial(alpha: [u8; 3]) -> f64 {
    alpha
        .iter()
        .map(|&a| TABLES.factorial[a as usize])
        .product()
}

/// Truncated Taylor expansion of a scalar in three variables.
#[derive(Clone, Copy)]
pub struct Jet {
    order: u8,
    c: [f64; MAX_LEN],
}

impl Jet {
    fn raw(order: usize) -> Self {
        assert!(order <= MAX_ORDER, "jet order {order} exceeds {MAX_ORDER}");
        Jet {
            order: order as u8,
            c: [0.0; MAX_LEN],
        }
    }

    pub fn zero(order: usize) -> Self {
        Self::raw(order)
    }

    pub fn constant(order: usize, value: f64) -> Self {
        let mut j = Self::raw(order);
        j.c[0] = value;
        j
    }

    /// The coordinate function `x_var` expanded at a point whose `var`-th
    /// coordinate is `base`.
    pub fn variable(order: usize, var: usize, base: f64) -> Self {
        let mut j = Self::constant(order, base);
        if order >= 1 {
            j.c[1 + var] = 1.0;
        }
        j
    }

    /// The nilpotent coordinate jet `x̂_var` (value zero, unit gradient along `var`).
    pub fn coordinate(order: usize, var: usize) -> Self {
        Self::variable(order, var, 0.0)
    }

    pub fn from_coeffs(order: usize, coeffs: &[f64]) -> Result<Self, JetError> {
        if order > MAX_ORDER {
            return Err(JetError::OrderTooHigh(order));
        }
        let n = coeff_count(order);
        if coeffs.len() != n {
            return Err(JetError::CoefficientCount {
                expected: n,
                got: coeffs.len(),
            });
        }
        let mut j = Self::raw(order);
        j.c[..n].copy_from_slice(coeffs);
        Ok(j)
    }

    /// Builds a jet from a callback returning the partial derivative `∂^α f(p)`.
    pub fn from_partials(
        order: usize,
        mut partial: impl FnMut([u8; 3]) -> f64,
    ) -> Self {
        let mut j = Self::raw(order);
        for i in 0..coeff_count(order) {
            let alpha = monomial(i);
            j.c[i] = partial(alpha) / alpha_factorial(alpha);
        }
        j
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order as usize
    }

    #[inline]
    pub fn len(&self) -> usize {
        coeff_count(self.order())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn coeffs(&self) -> &[f64] {
        &self.c[..self.len()]
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Taylor coefficient of `alpha`; zero when `|alpha|` exceeds the order.
    pub fn coeff(&self, alpha: [u8; 3]) -> f64 {
        match monomial_index(alpha) {
            Some(i) if i < self.len() => self.c[i],
            _ => 0.0,
        }
    }

    /// The partial derivative `∂^α f(p)` recorded by the jet.
    pub fn partial(&self, alpha: [u8; 3]) -> f64 {
        self.coeff(alpha) * alpha_factorial(alpha)
    }

    pub fn gradient(&self) -> [f64; 3] {
        if self.order == 0 {
            return [0.0; 3];
        }
        [self.c[1], self.c[2], self.c[3]]
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs().iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs().iter().all(|c| c.is_finite())
    }

    /// Drops every coefficient above `order`.
    pub fn truncate(&self, order: usize) -> Self {
        assert!(
            order <= self.order(),
            "cannot truncate an order-{} jet to order {order}",
            self.order
        );
        let mut j = Self::raw(order);
        let n = coeff_count(order);
        j.c[..n].copy_from_slice(&self.c[..n]);
        j
    }

    /// `∂/∂x_var`; the result has order one lower.
    pub fn derivative(&self, var: usize) -> Self {
        assert!(self.order > 0, "cannot differentiate an order-0 jet");
        let order = self.order() - 1;
        let mut j = Self::raw(order);
        for i in 0..coeff_count(order) {
            let mut alpha = monomial(i);
            alpha[var] += 1;
            let k = monomial_index(alpha).expect("raised monomial within table");
            j.c[i] = alpha[var] as f64 * self.c[k];
        }
        j
    }

    /// Value of the Taylor polynomial at displacement `d` from the base point.
    pub fn taylor_eval(&self, d: [f64; 3]) -> f64 {
        self.coeffs()
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let a = monomial(i);
                c * d[0].powi(a[0] as i32) * d[1].powi(a[1] as i32) * d[2].powi(a[2] as i32)
            })
            .sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut j = *self;
        for c in &mut j.c[..self.len()] {
            *c *= s;
        }
        j
    }

    fn check_order(&self, other: &Jet) -> Result<(), JetError> {
        if self.order != other.order {
            return Err(JetError::OrderMismatch {
                left: self.order(),
                right: other.order(),
            });
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check_order(other)?;
        let mut j = *self;
        for (a, b) in j.c[..self.len()].iter_mut().zip(other.coeffs()) {
            *a += b;
        }
        Ok(j)
    }

    pub fn checked_sub(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check_order(other)?;
        let mut j = *self;
        for (a, b) in j.c[..self.len()].iter_mut().zip(other.coeffs()) {
            *a -= b;
        }
        Ok(j)
    }

    pub fn checked_mul(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check_order(other)?;
        let t = &*TABLES;
        let mut j = Self::raw(self.order());
        for &(a, b, k) in &t.products[..t.product_ends[self.order()]] {
            j.c[k as usize] += self.c[a as usize] * other.c[b as usize];
        }
        Ok(j)
    }

    pub fn checked_div(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check_order(other)?;
        Ok(*self * other.recip()?)
    }

    /// Multiplicative inverse by Newton iteration `x ← x(2 − b·x)`, which
    /// doubles the number of correct orders per step.
    pub fn recip(&self) -> Result<Jet, JetError> {
        let b0 = self.value();
        if b0 == 0.0 || !b0.is_finite() {
            return Err(JetError::NotInvertible(b0));
        }
        let two = Jet::constant(self.order(), 2.0);
        let mut x = Jet::constant(self.order(), 1.0 / b0);
        for _ in 0..newton_steps(self.order()) {
            x = x * (two - *self * x);
        }
        Ok(x)
    }

    /// Composition `f ∘ self` from the Taylor coefficients
    /// `taylor[k] = f^(k)(a₀)/k!` of `f` at the value part `a₀`.
    pub fn compose(&self, taylor: &[f64]) -> Jet {
        let k = self.order();
        assert!(taylor.len() > k, "need {} Taylor coefficients", k + 1);
        let mut nil = *self;
        nil.c[0] = 0.0;
        let mut r = Jet::constant(k, taylor[k]);
        for t in taylor[..k].iter().rev() {
            r = r * nil;
            r.c[0] += t;
        }
        r
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        let t: Vec<f64> = (0..=self.order())
            .map(|k| e / TABLES.factorial[k])
            .collect();
        self.compose(&t)
    }

    pub fn ln(&self) -> Result<Jet, JetError> {
        let a = self.value();
        if a <= 0.0 {
            return Err(JetError::Domain {
                function: "log",
                value: a,
            });
        }
        let mut t = vec![a.ln()];
        for k in 1..=self.order() {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            t.push(sign / (k as f64 * a.powi(k as i32)));
        }
        Ok(self.compose(&t))
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [s, c, -s, -c];
        let t: Vec<f64> = (0..=self.order())
            .map(|k| cycle[k % 4] / TABLES.factorial[k])
            .collect();
        self.compose(&t)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [c, -s, -c, s];
        let t: Vec<f64> = (0..=self.order())
            .map(|k| cycle[k % 4] / TABLES.factorial[k])
            .collect();
        self.compose(&t)
    }

    pub fn sqrt(&self) -> Result<Jet, JetError> {
        let a = self.value();
        if a < 0.0 || (a == 0.0 && self.order() > 0) {
            return Err(JetError::Domain {
                function: "sqrt",
                value: a,
            });
        }
        if self.order() == 0 {
            return Ok(Jet::constant(0, a.sqrt()));
        }
        Ok(self.compose(&binomial_series(a, 0.5, self.order())))
    }

    pub fn powi(&self, n: i32) -> Result<Jet, JetError> {
        if n < 0 {
            return self.powi(-n)?.recip();
        }
        let mut result = Jet::constant(self.order(), 1.0);
        let mut base = *self;
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                result = result * base;
            }
            base = base * base;
            e >>= 1;
        }
        Ok(result)
    }

    /// Builds `f` with `∂_a f = grad[a]` and `f(p) = value`, for a closed
    /// gradient jet. The result has order one higher than `grad`.
    pub fn from_gradient(grad: &[Jet; 3], value: f64) -> Result<Jet, JetError> {
        let order = grad[0].order() + 1;
        grad[0].check_order(&grad[1])?;
        grad[0].check_order(&grad[2])?;
        if order > MAX_ORDER {
            return Err(JetError::OrderTooHigh(order));
        }
        let mut j = Jet::constant(order, value);
        for i in 1..coeff_count(order) {
            let alpha = monomial(i);
            let v = (0..3).find(|&v| alpha[v] > 0).expect("nonconstant monomial");
            let mut lower = alpha;
            lower[v] -= 1;
            j.c[i] = grad[v].coeff(lower) / alpha[v] as f64;
        }
        Ok(j)
    }
}

/// Taylor coefficients of `t ↦ t^r` at `a`.
fn binomial_series(a: f64, r: f64, order: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(order + 1);
    let mut binom = 1.0;
    for k in 0..=order {
        t.push(binom * a.powf(r - k as f64));
        binom *= (r - k as f64) / (k as f64 + 1.0);
    }
    t
}

/// Newton steps needed to reach truncation order `order` from a correct value part.
fn newton_steps(order: usize) -> usize {
    let mut steps = 0;
    while (1usize << steps) < order + 1 {
        steps += 1;
    }
    steps + 1
}

impl PartialEq for Jet {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.coeffs() == other.coeffs()
    }
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Jet<{}>{:?}", self.order, self.coeffs())
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        self.checked_add(&rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl AddAssign for Jet {
    fn add_assign(&mut self, rhs: Jet) {
        *self = *self + rhs;
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        self.checked_sub(&rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        self.checked_mul(&rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        self.checked_div(&rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.c[0] += rhs;
        self
    }
}

/// Evaluates `Σ coeffs[k] t^k` in jet arithmetic.
fn poly_eval(coeffs: &[Jet], t: Jet) -> Jet {
    let mut r = *coeffs.last().expect("nonempty polynomial");
    for c in coeffs[..coeffs.len() - 1].iter().rev() {
        r = r * t + *c;
    }
    r
}

fn poly_derivative(coeffs: &[Jet]) -> Vec<Jet> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| c.scale(k as f64))
        .collect()
}

fn poly_eval_f64(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

/// Lifts a simple root `r0` of the value-level polynomial to a jet root of
/// `Σ coeffs[k] t^k` using the default tolerance `1e-9`.
pub fn lift_root(coeffs: &[Jet], r0: f64) -> Result<Jet, JetError> {
    lift_root_with_tol(coeffs, r0, 1e-9)
}

/// As [`lift_root`], with an explicit relative tolerance for the
/// root and simplicity tests.
pub fn lift_root_with_tol(coeffs: &[Jet], r0: f64, tol: f64) -> Result<Jet, JetError> {
    assert!(!coeffs.is_empty(), "polynomial needs coefficients");
    let order = coeffs[0].order();
    for c in coeffs {
        coeffs[0].check_order(c)?;
    }
    if coeffs.len() == 1 {
        return Err(JetError::RootNotSimple {
            root: r0,
            derivative: 0.0,
        });
    }
    let values: Vec<f64> = coeffs.iter().map(Jet::value).collect();
    let dvalues: Vec<f64> = values
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| k as f64 * c)
        .collect();
    // scale of the individual terms at r0, for relative tests
    let term_scale = |r: f64| {
        values
            .iter()
            .enumerate()
            .map(|(k, c)| (c * r.powi(k as i32)).abs())
            .fold(0.0, f64::max)
    };
    let scale = term_scale(r0).max(f64::MIN_POSITIVE);
    let d0 = poly_eval_f64(&dvalues, r0);
    if d0.abs() * r0.abs().max(1.0) <= tol * scale {
        return Err(JetError::RootNotSimple {
            root: r0,
            derivative: d0,
        });
    }
    let mut r = r0;
    for _ in 0..8 {
        let d = poly_eval_f64(&dvalues, r);
        let step = poly_eval_f64(&values, r) / d;
        if !step.is_finite() {
            break;
        }
        r -= step;
        if step.abs() <= 1e-16 * r.abs().max(1.0) {
            break;
        }
    }
    let residual = poly_eval_f64(&values, r);
    // polishing may only refine the seed, never relocate it
    let drift = (r - r0).abs() > tol.sqrt() * r0.abs().max(1.0);
    if drift || residual.abs() > tol * term_scale(r).max(f64::MIN_POSITIVE) {
        return Err(JetError::NotARoot {
            root: r0,
            residual: poly_eval_f64(&values, r0),
        });
    }
    let dcoeffs = poly_derivative(coeffs);
    let mut root = Jet::constant(order, r);
    for _ in 0..newton_steps(order) {
        let p = poly_eval(coeffs, root);
        let dp = poly_eval(&dcoeffs, root);
        root = root - p * dp.recip()?;
    }
    Ok(root)
}
