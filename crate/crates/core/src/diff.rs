//! Tape-based reverse-mode differentiation.
//!
//! Every worker thread owns one tape. A [`Var`] is a value plus an index into
//! the current thread's tape; constants carry no index and record nothing.
//! Operations on variables append a node holding its parents and the local
//! partial derivatives, so the backward sweep is a single reverse pass of
//! multiply-accumulates.
//!
//! ```
//! use mckg::diff::{self, Var};
//!
//! diff::clear();
//! let x = Var::leaf(3.0);
//! let y = x * x + x;
//! let grads = diff::backward(y).unwrap();
//! assert_eq!(grads.wrt(x), 7.0);
//! ```
//!
//! `Var` implements [`num_traits::Float`] and [`Real`], so all generic kernels
//! differentiate through composition, including with respect to curvature.

use crate::scalar::Real;
use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};
use std::cell::RefCell;
use std::cmp::Ordering;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, Sub, SubAssign};
use thiserror::Error;

const CONST: u32 = u32::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("primitive {op:?} expects {expected} inputs, got {got}")]
    Arity {
        op: Primitive,
        expected: usize,
        got: usize,
    },
    #[error("non-finite adjoint at node {node} ({op:?})")]
    NonFinite { node: usize, op: Primitive },
    #[error("loss is not recorded on the current tape")]
    NotOnTape,
}

/// The recorded primitive set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sqrt,
    Exp,
    Ln,
    Tanh,
    Tan,
    Atan,
    Atanh,
    Sin,
    Cos,
    Sinh,
    Cosh,
    Asin,
    Acos,
    Asinh,
    Acosh,
    Abs,
    Max,
    Min,
    Powi(i32),
    Powf,
    Rem,
    Atan2,
    Sigmoid,
    LeakyRelu(f64),
    /// `inputs = a ++ b`, value `<a, b>`.
    Dot,
    Norm,
}

impl Primitive {
    fn arity(self) -> Option<usize> {
        use Primitive::*;
        match self {
            Leaf => Some(0),
            Add | Sub | Mul | Div | Max | Min | Powf | Rem | Atan2 => Some(2),
            Dot | Norm => None,
            _ => Some(1),
        }
    }
}

#[derive(Default)]
struct Tape {
    ops: Vec<Primitive>,
    starts: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
}

impl Tape {
    fn push(&mut self, op: Primitive, edges: impl IntoIterator<Item = (Var, f64)>) -> u32 {
        let idx = self.ops.len() as u32;
        self.ops.push(op);
        self.starts.push(self.parents.len() as u32);
        for (p, d) in edges {
            if p.idx != CONST {
                self.parents.push(p.idx);
                self.partials.push(d);
            }
        }
        idx
    }
}

thread_local! {
    static TAPE: RefCell<Tape> = RefCell::new(Tape::default());
}

/// Clears the current thread's tape. Variables created before the call must
/// not be used afterwards.
pub fn clear() {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        t.ops.clear();
        t.starts.clear();
        t.parents.clear();
        t.partials.clear();
    });
}

/// Number of nodes on the current thread's tape.
pub fn len() -> usize {
    TAPE.with(|t| t.borrow().ops.len())
}

/// A scalar that records its derivatives on the thread-local tape.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    val: f64,
    idx: u32,
}

impl Var {
    pub fn constant(val: f64) -> Self {
        Var { val, idx: CONST }
    }

    /// A new independent variable.
    pub fn leaf(val: f64) -> Self {
        let idx = TAPE.with(|t| t.borrow_mut().push(Primitive::Leaf, []));
        Var { val, idx }
    }

    pub fn val(self) -> f64 {
        self.val
    }

    pub fn is_constant(self) -> bool {
        self.idx == CONST
    }

    /// Tape node id, `None` for constants.
    pub fn node(self) -> Option<usize> {
        (self.idx != CONST).then_some(self.idx as usize)
    }

    /// Same value, cut from the graph.
    pub fn detach(self) -> Self {
        Var::constant(self.val)
    }

    fn unary(self, op: Primitive, val: f64, d: f64) -> Var {
        if self.idx == CONST {
            return Var::constant(val);
        }
        let idx = TAPE.with(|t| t.borrow_mut().push(op, [(self, d)]));
        Var { val, idx }
    }

    fn binary(self, other: Var, op: Primitive, val: f64, da: f64, db: f64) -> Var {
        if self.idx == CONST && other.idx == CONST {
            return Var::constant(val);
        }
        let idx = TAPE.with(|t| t.borrow_mut().push(op, [(self, da), (other, db)]));
        Var { val, idx }
    }
}

/// Records `op` applied to `inputs` and returns its output.
pub fn record(op: Primitive, inputs: &[Var]) -> Result<Var, DiffError> {
    use Primitive::*;
    let check = |n: usize| {
        if inputs.len() == n {
            Ok(())
        } else {
            Err(DiffError::Arity {
                op,
                expected: n,
                got: inputs.len(),
            })
        }
    };
    match op.arity() {
        Some(n) => check(n)?,
        None if op == Dot && !inputs.len().is_multiple_of(2) => {
            return Err(DiffError::Arity {
                op,
                expected: inputs.len() + 1,
                got: inputs.len(),
            })
        }
        None => {}
    }
    let x = inputs.first().copied().unwrap_or(Var::constant(0.0));
    let y = inputs.get(1).copied().unwrap_or(Var::constant(0.0));
    Ok(match op {
        Leaf => Var::leaf(0.0),
        Add => x + y,
        Sub => x - y,
        Mul => x * y,
        Div => x / y,
        Neg => -x,
        Sqrt => x.sqrt(),
        Exp => x.exp(),
        Ln => x.ln(),
        Tanh => x.tanh(),
        Tan => x.tan(),
        Atan => x.atan(),
        Atanh => x.atanh(),
        Sin => x.sin(),
        Cos => x.cos(),
        Sinh => x.sinh(),
        Cosh => x.cosh(),
        Asin => x.asin(),
        Acos => x.acos(),
        Asinh => x.asinh(),
        Acosh => x.acosh(),
        Abs => x.abs(),
        Max => x.max(y),
        Min => x.min(y),
        Powi(n) => x.powi(n),
        Powf => x.powf(y),
        Rem => x % y,
        Atan2 => x.atan2(y),
        Sigmoid => x.sigmoid(),
        LeakyRelu(s) => x.leaky_relu(s),
        Dot => {
            let (a, b) = inputs.split_at(inputs.len() / 2);
            Var::dot(a, b)
        }
        Norm => Var::norm(inputs),
    })
}

/// Adjoints of every node of the tape with respect to one scalar output.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    /// `d output / d v`; zero for constants and for nodes the output does
    /// not depend on.
    pub fn wrt(&self, v: Var) -> f64 {
        v.node()
            .and_then(|i| self.adjoints.get(i).copied())
            .unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vs: &[Var]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }
}

/// Reverse sweep from `output`. A constant output yields all-zero gradients.
pub fn backward(output: Var) -> Result<Gradients, DiffError> {
    TAPE.with(|t| {
        let t = t.borrow();
        let n = t.ops.len();
        let mut adj = vec![0.0; n];
        let Some(root) = output.node() else {
            return Ok(Gradients { adjoints: adj });
        };
        if root >= n {
            return Err(DiffError::NotOnTape);
        }
        adj[root] = 1.0;
        for i in (0..=root).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let lo = t.starts[i] as usize;
            let hi = t.starts.get(i + 1).map_or(t.parents.len(), |&s| s as usize);
            for e in lo..hi {
                let c = a * t.partials[e];
                if !c.is_finite() {
                    return Err(DiffError::NonFinite {
                        node: i,
                        op: t.ops[i],
                    });
                }
                adj[t.parents[e] as usize] += c;
            }
        }
        Ok(Gradients { adjoints: adj })
    })
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

/// Relative error floor: gradients smaller than this are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

/// Compares reverse-mode gradients of `f` at `x` against central finite
/// differences with the given step. Passes iff the max relative error is
/// below `tol`.
pub fn grad_check<F>(f: F, x: &[f64], step: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&[Var]) -> Var,
{
    clear();
    let vars: Vec<Var> = x.iter().map(|&v| Var::leaf(v)).collect();
    let out = f(&vars);
    let analytic = match backward(out) {
        Ok(g) => g.wrt_all(&vars),
        Err(_) => vec![f64::NAN; x.len()],
    };
    clear();

    let eval = |p: &[f64]| {
        let c: Vec<Var> = p.iter().map(|&v| Var::constant(v)).collect();
        f(&c).val()
    };
    let mut probe = x.to_vec();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let hi = eval(&probe);
            probe[i] = orig - step;
            let lo = eval(&probe);
            probe[i] = orig;
            (hi - lo) / (2.0 * step)
        })
        .collect();

    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(GRAD_CHECK_FLOOR);
        let err = (a - n).abs() / denom;
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if err > max_rel_error {
            max_rel_error = err;
            worst_index = i;
        }
    }
    GradCheckReport {
        analytic,
        numeric,
        max_rel_error,
        worst_index,
        passed: max_rel_error < tol,
    }
}

// ---------------------------------------------------------------------------
// arithmetic

impl Add for Var {
    type Output = Var;
    fn add(self, o: Var) -> Var {
        self.binary(o, Primitive::Add, self.val + o.val, 1.0, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    fn sub(self, o: Var) -> Var {
        self.binary(o, Primitive::Sub, self.val - o.val, 1.0, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    fn mul(self, o: Var) -> Var {
        self.binary(o, Primitive::Mul, self.val * o.val, o.val, self.val)
    }
}

impl Div for Var {
    type Output = Var;
    fn div(self, o: Var) -> Var {
        let q = self.val / o.val;
        self.binary(o, Primitive::Div, q, 1.0 / o.val, -q / o.val)
    }
}

impl Rem for Var {
    type Output = Var;
    fn rem(self, o: Var) -> Var {
        let t = (self.val / o.val).trunc();
        self.binary(o, Primitive::Rem, self.val % o.val, 1.0, -t)
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        self.unary(Primitive::Neg, -self.val, -1.0)
    }
}

macro_rules! assign_op {
    ($tr:ident, $m:ident, $op:tt) => {
        impl $tr for Var {
            fn $m(&mut self, o: Var) {
                *self = *self $op o;
            }
        }
    };
}
assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);

impl PartialEq for Var {
    fn eq(&self, o: &Var) -> bool {
        self.val == o.val
    }
}

impl PartialOrd for Var {
    fn partial_cmp(&self, o: &Var) -> Option<Ordering> {
        self.val.partial_cmp(&o.val)
    }
}

impl Zero for Var {
    fn zero() -> Var {
        Var::constant(0.0)
    }
    fn is_zero(&self) -> bool {
        self.val == 0.0
    }
}

impl One for Var {
    fn one() -> Var {
        Var::constant(1.0)
    }
}

impl Num for Var {
    type FromStrRadixErr = num_traits::ParseFloatError;
    fn from_str_radix(s: &str, radix: u32) -> Result<Var, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Var::constant)
    }
}

impl ToPrimitive for Var {
    fn to_i64(&self) -> Option<i64> {
        self.val.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.val.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.val)
    }
}

impl NumCast for Var {
    fn from<N: ToPrimitive>(n: N) -> Option<Var> {
        n.to_f64().map(Var::constant)
    }
}

impl FromPrimitive for Var {
    fn from_i64(n: i64) -> Option<Var> {
        Some(Var::constant(n as f64))
    }
    fn from_u64(n: u64) -> Option<Var> {
        Some(Var::constant(n as f64))
    }
    fn from_f64(n: f64) -> Option<Var> {
        Some(Var::constant(n))
    }
}

impl Float for Var {
    fn nan() -> Var {
        Var::constant(f64::NAN)
    }
    fn infinity() -> Var {
        Var::constant(f64::INFINITY)
    }
    fn neg_infinity() -> Var {
        Var::constant(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Var {
        Var::constant(-0.0)
    }
    fn min_value() -> Var {
        Var::constant(f64::MIN)
    }
    fn min_positive_value() -> Var {
        Var::constant(f64::MIN_POSITIVE)
    }
    fn max_value() -> Var {
        Var::constant(f64::MAX)
    }
    fn epsilon() -> Var {
        Var::constant(f64::EPSILON)
    }
    fn is_nan(self) -> bool {
        self.val.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.val.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.val.is_finite()
    }
    fn is_normal(self) -> bool {
        self.val.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.val.classify()
    }
    fn floor(self) -> Var {
        self.unary(Primitive::Abs, self.val.floor(), 0.0)
    }
    fn ceil(self) -> Var {
        self.unary(Primitive::Abs, self.val.ceil(), 0.0)
    }
    fn round(self) -> Var {
        self.unary(Primitive::Abs, self.val.round(), 0.0)
    }
    fn trunc(self) -> Var {
        self.unary(Primitive::Abs, self.val.trunc(), 0.0)
    }
    fn fract(self) -> Var {
        self.unary(Primitive::Abs, self.val.fract(), 1.0)
    }
    fn abs(self) -> Var {
        let d = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(Primitive::Abs, self.val.abs(), d)
    }
    fn signum(self) -> Var {
        Var::constant(self.val.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.val.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.val.is_sign_negative()
    }
    fn mul_add(self, a: Var, b: Var) -> Var {
        self * a + b
    }
    fn recip(self) -> Var {
        Var::one() / self
    }
    fn powi(self, n: i32) -> Var {
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * self.val.powi(n - 1)
        };
        self.unary(Primitive::Powi(n), self.val.powi(n), d)
    }
    fn powf(self, e: Var) -> Var {
        let v = self.val.powf(e.val);
        let da = if e.val == 0.0 {
            0.0
        } else {
            e.val * self.val.powf(e.val - 1.0)
        };
        let db = if self.val > 0.0 { v * self.val.ln() } else { 0.0 };
        self.binary(e, Primitive::Powf, v, da, db)
    }
    fn sqrt(self) -> Var {
        let s = self.val.sqrt();
        let d = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.unary(Primitive::Sqrt, s, d)
    }
    fn exp(self) -> Var {
        let e = self.val.exp();
        self.unary(Primitive::Exp, e, e)
    }
    fn exp2(self) -> Var {
        (self * Var::constant(std::f64::consts::LN_2)).exp()
    }
    fn ln(self) -> Var {
        self.unary(Primitive::Ln, self.val.ln(), 1.0 / self.val)
    }
    fn log(self, base: Var) -> Var {
        self.ln() / base.ln()
    }
    fn log2(self) -> Var {
        self.ln() / Var::constant(std::f64::consts::LN_2)
    }
    fn log10(self) -> Var {
        self.ln() / Var::constant(std::f64::consts::LN_10)
    }
    fn max(self, o: Var) -> Var {
        if self.val >= o.val || o.val.is_nan() {
            self.binary(o, Primitive::Max, self.val, 1.0, 0.0)
        } else {
            self.binary(o, Primitive::Max, o.val, 0.0, 1.0)
        }
    }
    fn min(self, o: Var) -> Var {
        if self.val <= o.val || o.val.is_nan() {
            self.binary(o, Primitive::Min, self.val, 1.0, 0.0)
        } else {
            self.binary(o, Primitive::Min, o.val, 0.0, 1.0)
        }
    }
    #[allow(deprecated)]
    fn abs_sub(self, o: Var) -> Var {
        (self - o).max(Var::zero())
    }
    fn cbrt(self) -> Var {
        let c = self.val.cbrt();
        let d = if c != 0.0 { 1.0 / (3.0 * c * c) } else { 0.0 };
        self.unary(Primitive::Powf, c, d)
    }
    fn hypot(self, o: Var) -> Var {
        Var::norm(&[self, o])
    }
    fn sin(self) -> Var {
        self.unary(Primitive::Sin, self.val.sin(), self.val.cos())
    }
    fn cos(self) -> Var {
        self.unary(Primitive::Cos, self.val.cos(), -self.val.sin())
    }
    fn tan(self) -> Var {
        let t = self.val.tan();
        self.unary(Primitive::Tan, t, 1.0 + t * t)
    }
    fn asin(self) -> Var {
        let d = 1.0 / (1.0 - self.val * self.val).sqrt();
        self.unary(Primitive::Asin, self.val.asin(), d)
    }
    fn acos(self) -> Var {
        let d = -1.0 / (1.0 - self.val * self.val).sqrt();
        self.unary(Primitive::Acos, self.val.acos(), d)
    }
    fn atan(self) -> Var {
        let d = 1.0 / (1.0 + self.val * self.val);
        self.unary(Primitive::Atan, self.val.atan(), d)
    }
    fn atan2(self, o: Var) -> Var {
        let r2 = self.val * self.val + o.val * o.val;
        let (da, db) = if r2 > 0.0 {
            (o.val / r2, -self.val / r2)
        } else {
            (0.0, 0.0)
        };
        self.binary(o, Primitive::Atan2, self.val.atan2(o.val), da, db)
    }
    fn sin_cos(self) -> (Var, Var) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Var {
        let e = self.val.exp();
        self.unary(Primitive::Exp, self.val.exp_m1(), e)
    }
    fn ln_1p(self) -> Var {
        self.unary(Primitive::Ln, self.val.ln_1p(), 1.0 / (1.0 + self.val))
    }
    fn sinh(self) -> Var {
        self.unary(Primitive::Sinh, self.val.sinh(), self.val.cosh())
    }
    fn cosh(self) -> Var {
        self.unary(Primitive::Cosh, self.val.cosh(), self.val.sinh())
    }
    fn tanh(self) -> Var {
        let t = self.val.tanh();
        self.unary(Primitive::Tanh, t, 1.0 - t * t)
    }
    fn asinh(self) -> Var {
        let d = 1.0 / (self.val * self.val + 1.0).sqrt();
        self.unary(Primitive::Asinh, self.val.asinh(), d)
    }
    fn acosh(self) -> Var {
        let d = 1.0 / (self.val * self.val - 1.0).sqrt();
        self.unary(Primitive::Acosh, self.val.acosh(), d)
    }
    fn atanh(self) -> Var {
        let d = 1.0 / (1.0 - self.val * self.val);
        self.unary(Primitive::Atanh, self.val.atanh(), d)
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.val.integer_decode()
    }
    fn to_degrees(self) -> Var {
        self * Var::constant(180.0 / std::f64::consts::PI)
    }
    fn to_radians(self) -> Var {
        self * Var::constant(std::f64::consts::PI / 180.0)
    }
}

impl Real for Var {
    fn dot(a: &[Var], b: &[Var]) -> Var {
        debug_assert_eq!(a.len(), b.len());
        let val: f64 = a.iter().zip(b).map(|(x, y)| x.val * y.val).sum();
        let all_const = a.iter().chain(b).all(|v| v.idx == CONST);
        if all_const {
            return Var::constant(val);
        }
        let edges = a
            .iter()
            .zip(b)
            .flat_map(|(&x, &y)| [(x, y.val), (y, x.val)]);
        let idx = TAPE.with(|t| t.borrow_mut().push(Primitive::Dot, edges));
        Var { val, idx }
    }

    fn norm(a: &[Var]) -> Var {
        let val = a.iter().map(|x| x.val * x.val).sum::<f64>().sqrt();
        if a.iter().all(|v| v.idx == CONST) {
            return Var::constant(val);
        }
        let inv = if val > 0.0 { 1.0 / val } else { 0.0 };
        let edges = a.iter().map(|&x| (x, x.val * inv));
        let idx = TAPE.with(|t| t.borrow_mut().push(Primitive::Norm, edges));
        Var { val, idx }
    }

    fn sigmoid(self) -> Var {
        let s = 1.0 / (1.0 + (-self.val).exp());
        self.unary(Primitive::Sigmoid, s, s * (1.0 - s))
    }

    fn leaky_relu(self, slope: f64) -> Var {
        if self.val >= 0.0 {
            self.unary(Primitive::LeakyRelu(slope), self.val, 1.0)
        } else {
            self.unary(Primitive::LeakyRelu(slope), self.val * slope, slope)
        }
    }

    fn value(self) -> f64 {
        self.val
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_seeds_unit_gradients() {
        clear();
        let a = Var::leaf(1.5);
        let b = Var::leaf(-2.0);
        let s = record(Primitive::Add, &[a, b]).unwrap();
        let g = backward(s).unwrap();
        assert_eq!(g.wrt(a), 1.0);
        assert_eq!(g.wrt(b), 1.0);
    }

    #[test]
    fn arity_is_checked() {
        clear();
        let a = Var::leaf(1.0);
        assert!(matches!(
            record(Primitive::Mul, &[a]),
            Err(DiffError::Arity { expected: 2, got: 1, .. })
        ));
        assert!(record(Primitive::Dot, &[a, a, a]).is_err());
    }

    #[test]
    fn constant_output_has_zero_gradients() {
        clear();
        let a = Var::leaf(2.0);
        let c = Var::constant(3.0) * Var::constant(4.0);
        let g = backward(c).unwrap();
        assert_eq!(g.wrt(a), 0.0);
        assert!(c.is_constant());
    }

    #[test]
    fn norm_at_zero_has_zero_subgradient() {
        clear();
        let xs = [Var::leaf(0.0), Var::leaf(0.0)];
        let n = Var::norm(&xs);
        let g = backward(n).unwrap();
        assert_eq!(g.wrt_all(&xs), vec![0.0, 0.0]);
        let x = Var::leaf(0.0);
        let r = x.sqrt();
        assert_eq!(backward(r).unwrap().wrt(x), 0.0);
    }

    #[test]
    fn nan_adjoint_is_reported_with_node() {
        clear();
        let x = Var::leaf(0.0);
        let y = x.ln() * Var::constant(2.0);
        match backward(y) {
            Err(DiffError::NonFinite { op, .. }) => assert_eq!(op, Primitive::Ln),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn fused_dot_matches_scalar_chain() {
        let f = |x: &[Var]| Var::dot(&x[..3], &x[3..]).tanh();
        let r = grad_check(f, &[0.1, -0.4, 0.7, 0.3, 0.2, -0.5], 1e-6, 1e-6);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn squared_norm_passes_grad_check() {
        let f = |x: &[Var]| Var::dot(x, x);
        let r = grad_check(f, &[0.3, -1.2, 2.5], 1e-6, 1e-4);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    type Probe = (&'static str, Box<dyn Fn(&[Var]) -> Var>);

    #[test]
    fn elementary_functions_pass_grad_check() {
        let fs: Vec<Probe> = vec![
            ("div", Box::new(|x| x[0] / x[1])),
            ("tan", Box::new(|x| x[0].tan())),
            ("atan", Box::new(|x| x[0].atan())),
            ("atanh", Box::new(|x| (x[0] * Var::constant(0.5)).atanh())),
            ("sigmoid", Box::new(|x| x[0].sigmoid() * x[1])),
            ("leaky", Box::new(|x| x[0].leaky_relu(0.2) + (-x[1]).leaky_relu(0.2))),
            ("powf", Box::new(|x| x[0].abs().powf(x[1]))),
            ("max", Box::new(|x| x[0].max(x[1]) * x[0])),
            ("sqrt", Box::new(|x| (x[0] * x[0] + x[1]).sqrt())),
            ("exp_ln", Box::new(|x| x[0].exp().ln_1p())),
        ];
        for (name, f) in fs {
            let r = grad_check(f, &[0.37, 1.21], 1e-6, 1e-6);
            assert!(r.passed, "{name}: {r:?}");
        }
    }
}
