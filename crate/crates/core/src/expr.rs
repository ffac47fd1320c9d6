//! Closed-form scalar expressions in the coordinates `x, y, z`.
//!
//! Grammar (whitespace is ignored):
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := ('-')? power
//! power  := atom ('^' integer)?
//! atom   := number | 'x' | 'y' | 'z' | func '(' expr ')' | '(' expr ')'
//! func   := 'sin' | 'cos' | 'exp' | 'log' | 'sqrt'
//! ```
//!
//! Exponents are integer literals and may carry a leading minus sign
//! (`x^-2`). Numbers are decimal literals with an optional exponent part.
//! There is no implicit multiplication and `**` is not an operator.
//!
//! Parsing preserves the written tree exactly. Symbolic differentiation
//! builds new trees through folding constructors that drop trivial `0` and
//! `1` factors; no other simplification is attempted.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::jet::{coeff_count, monomial, Jet, JetError, MAX_ORDER};

/// Coordinate variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
    Z,
}

impl Var {
    pub const ALL: [Var; 3] = [Var::X, Var::Y, Var::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Var {
        Var::ALL[i]
    }

    fn name(self) -> &'static str {
        ["x", "y", "z"][self.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Neg(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, i32),
    Func(Func, Expr),
}

/// Immutable, cheaply clonable expression tree.
#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        offset: usize,
        expected: Vec<&'static str>,
        found: String,
    },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("invalid number literal `{text}` at byte {offset}")]
    InvalidNumber { offset: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    DivisionByZero,
    LogNonPositive,
    SqrtNegative,
    NonFinite,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainKind::DivisionByZero => "division by zero",
            DomainKind::LogNonPositive => "log of a non-positive value",
            DomainKind::SqrtNegative => "sqrt outside its smooth domain",
            DomainKind::NonFinite => "non-finite value",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{kind} in `{subexpression}` at ({}, {}, {})", point[0], point[1], point[2])]
pub struct DomainError {
    pub kind: DomainKind,
    pub subexpression: String,
    pub point: [f64; 3],
}

impl Expr {
    fn new(n: Node) -> Expr {
        Expr(Arc::new(n))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(c: f64) -> Expr {
        Expr::new(Node::Const(c))
    }

    pub fn var(v: Var) -> Expr {
        Expr::new(Node::Var(v))
    }

    pub fn parse(source: &str) -> Result<Expr, ParseError> {
        parse(source)
    }

    fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    fn is_const(&self, v: f64) -> bool {
        self.as_const() == Some(v)
    }

    // Folding constructors used by differentiation and by callers that
    // assemble expressions programmatically.

    pub fn neg(a: &Expr) -> Expr {
        match a.node() {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(inner) => inner.clone(),
            _ => Expr::new(Node::Neg(a.clone())),
        }
    }

    pub fn add(a: &Expr, b: &Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x + y),
            (Some(x), _) if x == 0.0 => b.clone(),
            (_, Some(y)) if y == 0.0 => a.clone(),
            _ => Expr::new(Node::Add(a.clone(), b.clone())),
        }
    }

    pub fn sub(a: &Expr, b: &Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x - y),
            (Some(x), _) if x == 0.0 => Expr::neg(b),
            (_, Some(y)) if y == 0.0 => a.clone(),
            _ => Expr::new(Node::Sub(a.clone(), b.clone())),
        }
    }

    pub fn mul(a: &Expr, b: &Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::constant(0.0),
            (Some(x), _) if x == 1.0 => b.clone(),
            (_, Some(y)) if y == 1.0 => a.clone(),
            (Some(x), _) if x == -1.0 => Expr::neg(b),
            (_, Some(y)) if y == -1.0 => Expr::neg(a),
            _ => Expr::new(Node::Mul(a.clone(), b.clone())),
        }
    }

    pub fn div(a: &Expr, b: &Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), _) if x == 0.0 => Expr::constant(0.0),
            (_, Some(y)) if y == 1.0 => a.clone(),
            _ => Expr::new(Node::Div(a.clone(), b.clone())),
        }
    }

    pub fn powi(a: &Expr, n: i32) -> Expr {
        match n {
            0 => Expr::constant(1.0),
            1 => a.clone(),
            _ => match a.as_const() {
                Some(c) if n > 0 => Expr::constant(c.powi(n)),
                _ => Expr::new(Node::Pow(a.clone(), n)),
            },
        }
    }

    pub fn func(f: Func, a: &Expr) -> Expr {
        Expr::new(Node::Func(f, a.clone()))
    }

    /// Exact symbolic partial derivative `∂self/∂v`.
    pub fn differentiate(&self, v: Var) -> Expr {
        match self.node() {
            Node::Const(_) => Expr::constant(0.0),
            Node::Var(w) => Expr::constant(if *w == v { 1.0 } else { 0.0 }),
            Node::Neg(a) => Expr::neg(&a.differentiate(v)),
            Node::Add(a, b) => Expr::add(&a.differentiate(v), &b.differentiate(v)),
            Node::Sub(a, b) => Expr::sub(&a.differentiate(v), &b.differentiate(v)),
            Node::Mul(a, b) => Expr::add(
                &Expr::mul(&a.differentiate(v), b),
                &Expr::mul(a, &b.differentiate(v)),
            ),
            Node::Div(a, b) => {
                let da = a.differentiate(v);
                let db = b.differentiate(v);
                let first = Expr::div(&da, b);
                if db.is_const(0.0) {
                    first
                } else {
                    Expr::sub(&first, &Expr::div(&Expr::mul(a, &db), &Expr::powi(b, 2)))
                }
            }
            Node::Pow(a, n) => Expr::mul(
                &Expr::mul(&Expr::constant(*n as f64), &Expr::powi(a, n - 1)),
                &a.differentiate(v),
            ),
            Node::Func(f, a) => {
                let da = a.differentiate(v);
                if da.is_const(0.0) {
                    return da;
                }
                let outer = match f {
                    Func::Sin => Expr::func(Func::Cos, a),
                    Func::Cos => Expr::neg(&Expr::func(Func::Sin, a)),
                    Func::Exp => self.clone(),
                    Func::Log => return Expr::div(&da, a),
                    Func::Sqrt => {
                        return Expr::div(&da, &Expr::mul(&Expr::constant(2.0), self))
                    }
                };
                Expr::mul(&outer, &da)
            }
        }
    }

    /// Numerical value at `p`.
    pub fn eval(&self, p: [f64; 3]) -> Result<f64, DomainError> {
        let err = |kind| DomainError {
            kind,
            subexpression: self.to_string(),
            point: p,
        };
        let v = match self.node() {
            Node::Const(c) => *c,
            Node::Var(v) => p[v.index()],
            Node::Neg(a) => -a.eval(p)?,
            Node::Add(a, b) => a.eval(p)? + b.eval(p)?,
            Node::Sub(a, b) => a.eval(p)? - b.eval(p)?,
            Node::Mul(a, b) => a.eval(p)? * b.eval(p)?,
            Node::Div(a, b) => {
                let num = a.eval(p)?;
                let den = b.eval(p)?;
                if den == 0.0 {
                    return Err(err(DomainKind::DivisionByZero));
                }
                num / den
            }
            Node::Pow(a, n) => {
                let base = a.eval(p)?;
                if base == 0.0 && *n < 0 {
                    return Err(err(DomainKind::DivisionByZero));
                }
                base.powi(*n)
            }
            Node::Func(f, a) => {
                let x = a.eval(p)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Log if x <= 0.0 => return Err(err(DomainKind::LogNonPositive)),
                    Func::Log => x.ln(),
                    Func::Sqrt if x < 0.0 => return Err(err(DomainKind::SqrtNegative)),
                    Func::Sqrt => x.sqrt(),
                }
            }
        };
        if !v.is_finite() {
            return Err(err(DomainKind::NonFinite));
        }
        Ok(v)
    }

    /// Taylor jet of order `order` at `p`, computed by jet arithmetic over
    /// the tree. Agrees with [`jet_of`] up to rounding.
    pub fn eval_jet(&self, p: [f64; 3], order: usize) -> Result<Jet, DomainError> {
        assert!(order <= MAX_ORDER, "jet order {order} exceeds {MAX_ORDER}");
        let err = |kind| DomainError {
            kind,
            subexpression: self.to_string(),
            point: p,
        };
        let map_jet = |r: Result<Jet, JetError>, kind| r.map_err(|_| err(kind));
        let j = match self.node() {
            Node::Const(c) => Jet::constant(order, *c),
            Node::Var(v) => Jet::variable(order, v.index(), p[v.index()]),
            Node::Neg(a) => -a.eval_jet(p, order)?,
            Node::Add(a, b) => a.eval_jet(p, order)? + b.eval_jet(p, order)?,
            Node::Sub(a, b) => a.eval_jet(p, order)? - b.eval_jet(p, order)?,
            Node::Mul(a, b) => a.eval_jet(p, order)? * b.eval_jet(p, order)?,
            Node::Div(a, b) => {
                let num = a.eval_jet(p, order)?;
                let den = b.eval_jet(p, order)?;
                map_jet(num.checked_div(&den), DomainKind::DivisionByZero)?
            }
            Node::Pow(a, n) => map_jet(a.eval_jet(p, order)?.powi(*n), DomainKind::DivisionByZero)?,
            Node::Func(f, a) => {
                let x = a.eval_jet(p, order)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Log => map_jet(x.ln(), DomainKind::LogNonPositive)?,
                    Func::Sqrt => map_jet(x.sqrt(), DomainKind::SqrtNegative)?,
                }
            }
        };
        if !j.is_finite() {
            return Err(err(DomainKind::NonFinite));
        }
        Ok(j)
    }

    /// Number of nodes in the tree (shared subtrees counted each time).
    pub fn size(&self) -> usize {
        match self.node() {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Neg(a) | Node::Pow(a, _) | Node::Func(_, a) => 1 + a.size(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self.node() {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(_) => 3,
            Node::Const(c) if c.is_sign_negative() => 3,
            Node::Pow(..) => 4,
            _ => 5,
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Canonical printer; its output parses back to an equal tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) if c.is_sign_negative() => write!(f, "-{}", -c),
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(v) => f.write_str(v.name()),
            Node::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, 4)
            }
            Node::Add(a, b) | Node::Sub(a, b) => {
                write_child(f, a, 1)?;
                f.write_str(if matches!(self.node(), Node::Add(..)) { " + " } else { " - " })?;
                write_child(f, b, 2)
            }
            Node::Mul(a, b) | Node::Div(a, b) => {
                write_child(f, a, 2)?;
                f.write_str(if matches!(self.node(), Node::Mul(..)) { "*" } else { "/" })?;
                write_child(f, b, 3)
            }
            Node::Pow(a, n) => {
                write_child(f, a, 5)?;
                write!(f, "^{n}")
            }
            Node::Func(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Memoized table of symbolic partial derivatives of one expression.
///
/// The cache is keyed by multi-index and guarded by a mutex, so a single
/// table may be shared across threads.
pub struct Partials {
    base: Expr,
    cache: Mutex<HashMap<[u8; 3], Expr>>,
}

impl Partials {
    pub fn new(base: Expr) -> Self {
        let mut cache = HashMap::new();
        cache.insert([0, 0, 0], base.clone());
        Partials {
            base,
            cache: Mutex::new(cache),
        }
    }

    pub fn base(&self) -> &Expr {
        &self.base
    }

    /// `∂^α base`, built from the cached lower partial.
    pub fn partial(&self, alpha: [u8; 3]) -> Expr {
        if let Some(e) = self.cache.lock().expect("partials cache poisoned").get(&alpha) {
            return e.clone();
        }
        let v = (0..3).rev().find(|&v| alpha[v] > 0).expect("nonzero multi-index");
        let mut lower = alpha;
        lower[v] -= 1;
        let d = self.partial(lower).differentiate(Var::from_index(v));
        self.cache
            .lock()
            .expect("partials cache poisoned")
            .entry(alpha)
            .or_insert(d)
            .clone()
    }

    /// Taylor jet at `p` from the symbolic partials: coefficient of `α` is
    /// `∂^α e(p) / α!`.
    pub fn jet_at(&self, p: [f64; 3], order: usize) -> Result<Jet, DomainError> {
        assert!(order <= MAX_ORDER, "jet order {order} exceeds {MAX_ORDER}");
        let mut values = Vec::with_capacity(coeff_count(order));
        for i in 0..coeff_count(order) {
            values.push(self.partial(monomial(i)).eval(p)?);
        }
        let mut k = 0;
        Ok(Jet::from_partials(order, |_| {
            k += 1;
            values[k - 1]
        }))
    }
}

/// Degree-`order` Taylor jet of `e` at `p` from symbolic partial derivatives.
pub fn jet_of(e: &Expr, p: [f64; 3], order: usize) -> Result<Jet, DomainError> {
    Partials::new(e.clone()).jet_at(p, order)
}

// ---------------------------------------------------------------------------
// Lexer and recursive-descent parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num { value: f64, integral: bool },
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num { value, .. } => format!("number {value}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                let mut integral = true;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    integral = false;
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let save = i;
                    i += 1;
                    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                        i += 1;
                    }
                    if i < bytes.len() && bytes[i].is_ascii_digit() {
                        integral = false;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    } else {
                        i = save;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError::InvalidNumber {
                    offset: start,
                    text: text.to_string(),
                })?;
                out.push((Tok::Num { value, integral }, start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    expected: vec!["an expression token"],
                    found: format!("character `{ch}`"),
                });
            }
        };
        i += 1;
        out.push((tok, start));
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

const ATOM_START: &[&str] = &["number", "`x`, `y` or `z`", "function name", "`(`"];

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: Vec<&'static str>) -> ParseError {
        ParseError::Syntax {
            offset: self.offset(),
            expected,
            found: self.peek().describe(),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let ctor: fn(Expr, Expr) -> Node = match self.peek() {
                Tok::Plus => Node::Add,
                Tok::Minus => Node::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::new(ctor(lhs, rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let ctor: fn(Expr, Expr) -> Node = match self.peek() {
                Tok::Star => Node::Mul,
                Tok::Slash => Node::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::new(ctor(lhs, rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            let inner = self.power()?;
            return Ok(Expr::new(Node::Neg(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let negative = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match self.peek().clone() {
            Tok::Num {
                value,
                integral: true,
            } if value <= i32::MAX as f64 => {
                self.bump();
                let n = value as i32;
                Ok(Expr::new(Node::Pow(base, if negative { -n } else { n })))
            }
            _ => Err(self.error(vec!["integer exponent"])),
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let (tok, offset) = match self.peek() {
            Tok::Num { .. } | Tok::Ident(_) | Tok::LParen => self.bump(),
            _ => {
                let mut expected = ATOM_START.to_vec();
                if self.pos > 0 && !matches!(self.toks[self.pos - 1].0, Tok::Minus) {
                    expected.push("`-`");
                }
                return Err(self.error(expected));
            }
        };
        match tok {
            Tok::Num { value, .. } => Ok(Expr::constant(value)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => match name.as_str() {
                "x" => Ok(Expr::var(Var::X)),
                "y" => Ok(Expr::var(Var::Y)),
                "z" => Ok(Expr::var(Var::Z)),
                other => match Func::from_name(other) {
                    Some(func) => {
                        if *self.peek() != Tok::LParen {
                            return Err(self.error(vec!["`(`"]));
                        }
                        self.bump();
                        let arg = self.expr()?;
                        self.expect_rparen()?;
                        Ok(Expr::func(func, &arg))
                    }
                    None => Err(ParseError::UnknownIdentifier { offset, name }),
                },
            },
            _ => unreachable!("atom start tokens are filtered above"),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if *self.peek() == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            Err(self.error(vec!["`)`", "operator"]))
        }
    }
}

/// Parses `source` according to the module grammar.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let toks = lex(source)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.error(vec!["operator", "end of input"]));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn parses_with_precedence() {
        let e = p("x*y + z");
        match e.node() {
            Node::Add(a, b) => {
                assert!(matches!(a.node(), Node::Mul(..)));
                assert_eq!(b.node(), &Node::Var(Var::Z));
            }
            other => panic!("unexpected tree {other:?}"),
        }
        assert_eq!(p("(x*y+z)*z^2").eval([1.0, 1.0, 1.0]).unwrap(), 2.0);
        // ^ binds tighter than unary minus
        assert_eq!(p("-x^2").eval([3.0, 0.0, 0.0]).unwrap(), -9.0);
        // left associativity
        assert_eq!(p("8/4/2").eval([0.0; 3]).unwrap(), 1.0);
        assert_eq!(p("8-4-2").eval([0.0; 3]).unwrap(), 2.0);
        assert_eq!(p("x^-2").eval([2.0, 0.0, 0.0]).unwrap(), 0.25);
        assert_eq!(p("2*-x").eval([2.0, 0.0, 0.0]).unwrap(), -4.0);
        assert_eq!(p("1.5e1").eval([0.0; 3]).unwrap(), 15.0);
    }

    #[test]
    fn double_star_is_rejected() {
        match parse("x**2") {
            Err(ParseError::Syntax { offset, expected, .. }) => {
                assert_eq!(offset, 2);
                assert!(expected.contains(&"number"));
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        assert!(matches!(parse("x^1.5"), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(parse("(x+y"), Err(ParseError::Syntax { offset: 4, .. })));
        assert!(matches!(parse("x y"), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(parse(""), Err(ParseError::Syntax { offset: 0, .. })));
        assert!(matches!(parse("--x"), Err(ParseError::Syntax { offset: 1, .. })));
        assert!(matches!(parse("x # y"), Err(ParseError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn unknown_identifiers() {
        assert_eq!(
            parse("tan(x)"),
            Err(ParseError::UnknownIdentifier {
                offset: 0,
                name: "tan".into()
            })
        );
        assert!(matches!(parse("x + w"), Err(ParseError::UnknownIdentifier { offset: 4, .. })));
    }

    #[test]
    fn derivative_examples() {
        let e = p("x*y+z");
        assert_eq!(e.differentiate(Var::X).eval([0.3, 1.7, 2.0]).unwrap(), 1.7);
        let sq = p("(x*y+z)^2").differentiate(Var::Z);
        assert_eq!(sq.eval([1.0, 1.0, 1.0]).unwrap(), 4.0);
        let s = p("sin(x)").differentiate(Var::Y);
        assert_eq!(s.node(), &Node::Const(0.0));
    }

    #[test]
    fn eval_examples() {
        let eps = p("(1+x^2)^4*(x*y+z)*z");
        assert_eq!(eps.eval([1.0, 1.0, 1.0]).unwrap(), 32.0);
        assert_eq!(p("x").eval([0.0; 3]).unwrap(), 0.0);
        let err = p("1/z").eval([1.0, 1.0, 0.0]).unwrap_err();
        assert_eq!(err.kind, DomainKind::DivisionByZero);
        assert_eq!(err.subexpression, "1/z");
        assert_eq!(p("log(x)").eval([0.0; 3]).unwrap_err().kind, DomainKind::LogNonPositive);
        assert_eq!(p("sqrt(x)").eval([-1.0, 0.0, 0.0]).unwrap_err().kind, DomainKind::SqrtNegative);
        assert_eq!(p("x^-1").eval([0.0; 3]).unwrap_err().kind, DomainKind::DivisionByZero);
    }

    #[test]
    fn jet_examples() {
        let j = jet_of(&p("x*y"), [1.0, 1.0, 1.0], 1).unwrap();
        assert_eq!(j.value(), 1.0);
        assert_eq!(j.gradient(), [1.0, 1.0, 0.0]);
        let j = jet_of(&p("z^2"), [1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(j.coeff([0, 0, 2]), 1.0);
    }

    #[test]
    fn jet_matches_central_differences() {
        // oracle: second-order central differences of the value-level evaluator
        let e = p("(x*y+z)*z");
        let base = [1.0, 1.0, 1.0];
        let j = jet_of(&e, base, 2).unwrap();
        let h = 1e-4;
        let f = |d: [f64; 3]| e.eval([base[0] + d[0], base[1] + d[1], base[2] + d[2]]).unwrap();
        for a in 0..3 {
            let mut ea = [0.0; 3];
            ea[a] = h;
            let neg = [-ea[0], -ea[1], -ea[2]];
            let fd = (f(ea) - f(neg)) / (2.0 * h);
            assert_relative_eq!(j.gradient()[a], fd, max_relative = 1e-6);
            for b in 0..3 {
                let mut eb = [0.0; 3];
                eb[b] = h;
                let add = |u: [f64; 3], v: [f64; 3], s: f64| [u[0] + s * v[0], u[1] + s * v[1], u[2] + s * v[2]];
                let fd2 = (f(add(ea, eb, 1.0)) - f(add(ea, eb, -1.0)) - f(add(neg, eb, 1.0)) + f(add(neg, eb, -1.0)))
                    / (4.0 * h * h);
                let mut alpha = [0u8; 3];
                alpha[a] += 1;
                alpha[b] += 1;
                let exact = j.partial(alpha);
                assert!((exact - fd2).abs() <= 1e-6 * exact.abs().max(1.0), "{a}{b}: {exact} vs {fd2}");
            }
        }
    }

    #[test]
    fn reciprocal_jet_against_symbolic_partials() {
        let base = [1.0, 1.0, 1.0];
        let symbolic = jet_of(&p("1/(x*y+z)"), base, 2).unwrap();
        let arith = Jet::constant(2, 1.0) / jet_of(&p("x*y+z"), base, 2).unwrap();
        for (a, b) in symbolic.coeffs().iter().zip(arith.coeffs()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn sqrt_lift_against_symbolic_partials() {
        let base = [1.0, 1.0, 1.0];
        let w = jet_of(&p("x*y+z"), base, 3).unwrap();
        let coeffs = [-w, Jet::constant(3, 0.0), Jet::constant(3, 1.0)];
        let r = crate::jet::lift_root(&coeffs, 2f64.sqrt()).unwrap();
        let oracle = jet_of(&p("sqrt(x*y+z)"), base, 3).unwrap();
        for (a, b) in r.coeffs().iter().zip(oracle.coeffs()) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn partials_are_memoized() {
        let table = Partials::new(p("x^3*y"));
        let a = table.partial([2, 1, 0]);
        let b = table.partial([2, 1, 0]);
        assert!(Arc::ptr_eq(&a.0, &b.0));
        assert_eq!(a.eval([1.0, 5.0, 0.0]).unwrap(), 6.0);
    }

    #[test]
    fn product_jet_identity() {
        let base = [0.7, 1.3, 0.9];
        let xy = jet_of(&p("x*y"), base, 3).unwrap();
        let z = jet_of(&p("z"), base, 3).unwrap();
        let xyz = jet_of(&p("x*y*z"), base, 3).unwrap();
        for (a, b) in (xy * z).coeffs().iter().zip(xyz.coeffs()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    /// Random trees whose every subexpression is regular everywhere.
    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.1..3.0f64).prop_map(Expr::constant),
            (0usize..3).prop_map(|i| Expr::var(Var::from_index(i))),
        ];
        leaf.prop_recursive(4, 32, 2, |inner| {
            let positive = |e: Expr| {
                Expr::new(Node::Add(Expr::constant(1.0), Expr::new(Node::Mul(e.clone(), e))))
            };
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::new(Node::Add(a, b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::new(Node::Sub(a, b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::new(Node::Mul(a, b))),
                (inner.clone(), inner.clone()).prop_map(move |(a, b)| Expr::new(Node::Div(a, positive(b)))),
                inner.clone().prop_map(|a| Expr::new(Node::Neg(a))),
                (inner.clone(), -2i32..4).prop_map(move |(a, n)| {
                    let base = if n < 0 { positive(a) } else { a };
                    Expr::new(Node::Pow(base, n))
                }),
                inner.clone().prop_map(|a| Expr::func(Func::Sin, &a)),
                inner.clone().prop_map(|a| Expr::func(Func::Cos, &a)),
                inner.clone().prop_map(move |a| Expr::func(Func::Log, &positive(a))),
                inner.clone().prop_map(move |a| Expr::func(Func::Sqrt, &positive(a))),
                inner.prop_map(|a| Expr::func(Func::Exp, &Expr::func(Func::Sin, &a))),
            ]
        })
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn print_parse_round_trip(e in arb_expr(), pt in proptest::array::uniform3(-1.5..1.5f64)) {
            let printed = e.to_string();
            let back = parse(&printed).unwrap();
            prop_assert_eq!(&back, &e, "printed as {}", printed);
            prop_assert_eq!(back.eval(pt).unwrap(), e.eval(pt).unwrap());
        }

        #[test]
        fn mixed_partials_commute(e in arb_expr(), pt in proptest::array::uniform3(-1.5..1.5f64), u in 0usize..3, v in 0usize..3) {
            let (u, v) = (Var::from_index(u), Var::from_index(v));
            let uv = e.differentiate(u).differentiate(v).eval(pt).unwrap();
            let vu = e.differentiate(v).differentiate(u).eval(pt).unwrap();
            prop_assert!(close(uv, vu, 1e-12), "{} vs {}", uv, vu);
        }

        #[test]
        fn jet_of_product_is_product_of_jets(
            e in arb_expr(), f in arb_expr(), pt in proptest::array::uniform3(-1.5..1.5f64)
        ) {
            let prod = Expr::new(Node::Mul(e.clone(), f.clone()));
            let lhs = jet_of(&prod, pt, 2).unwrap();
            let rhs = jet_of(&e, pt, 2).unwrap() * jet_of(&f, pt, 2).unwrap();
            let scale = lhs.max_abs().max(rhs.max_abs()).max(1.0);
            for (a, b) in lhs.coeffs().iter().zip(rhs.coeffs()) {
                prop_assert!((a - b).abs() <= 1e-12 * scale, "{:?} vs {:?}", lhs, rhs);
            }
        }

        #[test]
        fn jet_arithmetic_matches_symbolic_partials(e in arb_expr(), pt in proptest::array::uniform3(-1.5..1.5f64)) {
            let symbolic = jet_of(&e, pt, 3).unwrap();
            let arith = e.eval_jet(pt, 3).unwrap();
            let scale = symbolic.max_abs().max(1.0);
            for (a, b) in symbolic.coeffs().iter().zip(arith.coeffs()) {
                prop_assert!((a - b).abs() <= 1e-12 * scale, "{:?} vs {:?}", symbolic, arith);
            }
        }
    }
}
