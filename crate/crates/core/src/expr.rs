//! Small expression trees for the coordinate-dependent coefficients of a
//! mechanical system (metric entries, potentials, shaping one-forms).
//!
//! An [`Expr`] can be evaluated over any [`Scalar`] and differentiated
//! exactly, so partial derivatives of every field are available at every
//! order without finite differences.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use crate::scalar::Scalar;

/// A univariate function with derivatives of every order it supports.
///
/// Orders beyond what an implementation supports should return `f64::NAN`.
pub trait Univariate: Send + Sync + fmt::Debug {
    fn derivative(&self, order: usize, x: f64) -> f64;
}

#[derive(Debug)]
enum Node {
    Const(f64),
    Var(usize),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Neg(Expr),
    Sin(Expr),
    Cos(Expr),
    Sqrt(Expr),
    Exp(Expr),
    Ln(Expr),
    Powi(Expr, i32),
    Apply { f: Arc<dyn Univariate>, order: usize, arg: Expr },
}

/// Immutable, cheaply clonable expression over indexed variables.
#[derive(Clone)]
pub struct Expr(Arc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(i) => write!(f, "x{i}"),
            Node::Add(a, b) => write!(f, "({a:?} + {b:?})"),
            Node::Sub(a, b) => write!(f, "({a:?} - {b:?})"),
            Node::Mul(a, b) => write!(f, "{a:?}*{b:?}"),
            Node::Div(a, b) => write!(f, "{a:?}/{b:?}"),
            Node::Neg(a) => write!(f, "-{a:?}"),
            Node::Sin(a) => write!(f, "sin({a:?})"),
            Node::Cos(a) => write!(f, "cos({a:?})"),
            Node::Sqrt(a) => write!(f, "sqrt({a:?})"),
            Node::Exp(a) => write!(f, "exp({a:?})"),
            Node::Ln(a) => write!(f, "ln({a:?})"),
            Node::Powi(a, n) => write!(f, "{a:?}^{n}"),
            Node::Apply { f: func, order, arg } => write!(f, "{func:?}^({order})({arg:?})"),
        }
    }
}

impl Expr {
    fn node(n: Node) -> Expr {
        Expr(Arc::new(n))
    }

    pub fn constant(c: f64) -> Expr {
        Expr::node(Node::Const(c))
    }

    pub fn var(i: usize) -> Expr {
        Expr::node(Node::Var(i))
    }

    /// `f^(order)(arg)` for a user-supplied univariate function.
    pub fn apply(f: Arc<dyn Univariate>, arg: Expr) -> Expr {
        Expr::node(Node::Apply { f, order: 0, arg })
    }

    pub fn as_const(&self) -> Option<f64> {
        match &*self.0 {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match &*self.0 {
            Node::Const(_) => None,
            Node::Var(i) => Some(*i),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
            Node::Neg(a)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Sqrt(a)
            | Node::Exp(a)
            | Node::Ln(a)
            | Node::Powi(a, _) => a.max_var(),
            Node::Apply { arg, .. } => arg.max_var(),
        }
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        match &*self.0 {
            Node::Const(c) => S::cst(*c),
            Node::Var(i) => x[*i].clone(),
            Node::Add(a, b) => a.eval(x) + b.eval(x),
            Node::Sub(a, b) => a.eval(x) - b.eval(x),
            Node::Mul(a, b) => {
                if let Some(c) = a.as_const() {
                    b.eval(x) * c
                } else if let Some(c) = b.as_const() {
                    a.eval(x) * c
                } else {
                    a.eval(x) * b.eval(x)
                }
            }
            Node::Div(a, b) => {
                if let Some(c) = b.as_const() {
                    a.eval(x) / c
                } else {
                    a.eval(x) / b.eval(x)
                }
            }
            Node::Neg(a) => -a.eval(x),
            Node::Sin(a) => a.eval(x).sin(),
            Node::Cos(a) => a.eval(x).cos(),
            Node::Sqrt(a) => a.eval(x).sqrt(),
            Node::Exp(a) => a.eval(x).exp(),
            Node::Ln(a) => a.eval(x).ln(),
            Node::Powi(a, n) => a.eval(x).powi(*n),
            Node::Apply { f, order, arg } => S::apply(f, *order, &arg.eval(x)),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    /// Exact partial derivative with respect to variable `i`.
    pub fn diff(&self, i: usize) -> Expr {
        match &*self.0 {
            Node::Const(_) => Expr::constant(0.0),
            Node::Var(j) => Expr::constant(if *j == i { 1.0 } else { 0.0 }),
            Node::Add(a, b) => a.diff(i) + b.diff(i),
            Node::Sub(a, b) => a.diff(i) - b.diff(i),
            Node::Mul(a, b) => a.diff(i) * b.clone() + a.clone() * b.diff(i),
            Node::Div(a, b) => {
                let db = b.diff(i);
                if db.is_zero() {
                    a.diff(i) / b.clone()
                } else {
                    a.diff(i) / b.clone() - a.clone() * db / (b.clone() * b.clone())
                }
            }
            Node::Neg(a) => -a.diff(i),
            Node::Sin(a) => a.cos() * a.diff(i),
            Node::Cos(a) => -(a.sin() * a.diff(i)),
            Node::Sqrt(a) => a.diff(i) / (self.clone() * 2.0),
            Node::Exp(a) => self.clone() * a.diff(i),
            Node::Ln(a) => a.diff(i) / a.clone(),
            Node::Powi(a, n) => match *n {
                0 => Expr::constant(0.0),
                1 => a.diff(i),
                n => a.powi(n - 1) * (n as f64) * a.diff(i),
            },
            Node::Apply { f, order, arg } => {
                let da = arg.diff(i);
                if da.is_zero() {
                    return Expr::constant(0.0);
                }
                Expr::node(Node::Apply { f: f.clone(), order: order + 1, arg: arg.clone() }) * da
            }
        }
    }

    pub fn sin(&self) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(c.sin()),
            None => Expr::node(Node::Sin(self.clone())),
        }
    }

    pub fn cos(&self) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(c.cos()),
            None => Expr::node(Node::Cos(self.clone())),
        }
    }

    pub fn sqrt(&self) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(c.sqrt()),
            None => Expr::node(Node::Sqrt(self.clone())),
        }
    }

    pub fn exp(&self) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(c.exp()),
            None => Expr::node(Node::Exp(self.clone())),
        }
    }

    pub fn ln(&self) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(c.ln()),
            None => Expr::node(Node::Ln(self.clone())),
        }
    }

    pub fn powi(&self, n: i32) -> Expr {
        match (self.as_const(), n) {
            (Some(c), _) => Expr::constant(c.powi(n)),
            (_, 0) => Expr::constant(1.0),
            (_, 1) => self.clone(),
            _ => Expr::node(Node::Powi(self.clone(), n)),
        }
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Expr {
        Expr::constant(c)
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a + b),
            (Some(a), _) if a == 0.0 => rhs,
            (_, Some(b)) if b == 0.0 => self,
            _ => Expr::node(Node::Add(self, rhs)),
        }
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a - b),
            (Some(a), _) if a == 0.0 => -rhs,
            (_, Some(b)) if b == 0.0 => self,
            _ => Expr::node(Node::Sub(self, rhs)),
        }
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a * b),
            (Some(a), _) if a == 0.0 => self,
            (_, Some(b)) if b == 0.0 => rhs,
            (Some(a), _) if a == 1.0 => rhs,
            (_, Some(b)) if b == 1.0 => self,
            _ => Expr::node(Node::Mul(self, rhs)),
        }
    }
}

impl Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a / b),
            (Some(a), _) if a == 0.0 => self,
            (_, Some(b)) if b == 1.0 => self,
            _ => Expr::node(Node::Div(self, rhs)),
        }
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match &*self.0 {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(a) => a.clone(),
            _ => Expr::node(Node::Neg(self)),
        }
    }
}

impl Add<f64> for Expr {
    type Output = Expr;
    fn add(self, rhs: f64) -> Expr {
        self + Expr::constant(rhs)
    }
}

impl Sub<f64> for Expr {
    type Output = Expr;
    fn sub(self, rhs: f64) -> Expr {
        self - Expr::constant(rhs)
    }
}

impl Mul<f64> for Expr {
    type Output = Expr;
    fn mul(self, rhs: f64) -> Expr {
        self * Expr::constant(rhs)
    }
}

impl Div<f64> for Expr {
    type Output = Expr;
    fn div(self, rhs: f64) -> Expr {
        self / Expr::constant(rhs)
    }
}

impl Scalar for Expr {
    fn cst(c: f64) -> Self {
        Expr::constant(c)
    }
    fn sin(&self) -> Self {
        Expr::sin(self)
    }
    fn cos(&self) -> Self {
        Expr::cos(self)
    }
    fn sqrt(&self) -> Self {
        Expr::sqrt(self)
    }
    fn exp(&self) -> Self {
        Expr::exp(self)
    }
    fn ln(&self) -> Self {
        Expr::ln(self)
    }
    fn powi(&self, n: i32) -> Self {
        Expr::powi(self, n)
    }
    fn apply(f: &Arc<dyn Univariate>, order: usize, arg: &Self) -> Self {
        Expr::node(Node::Apply { f: f.clone(), order, arg: arg.clone() })
    }
}

/// A univariate view of a single-variable expression, with derivative
/// expressions cached up to `max_order`.
#[derive(Debug)]
pub struct ExprFunction {
    derivs: Vec<Expr>,
}

impl ExprFunction {
    pub fn new(expr: Expr, max_order: usize) -> Self {
        let mut derivs = vec![expr];
        for _ in 0..max_order {
            let next = derivs.last().expect("nonempty").diff(0);
            derivs.push(next);
        }
        ExprFunction { derivs }
    }
}

impl Univariate for ExprFunction {
    fn derivative(&self, order: usize, x: f64) -> f64 {
        self.derivs.get(order).map_or(f64::NAN, |e| e.value(&[x]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{Jet2, Real};
    use approx::assert_relative_eq;

    #[test]
    fn derivative_of_trig_sqrt_matches_hand_formula() {
        // k sqrt(a - b cos^2 x)
        let x = Expr::var(0);
        let e = (Expr::constant(2.0) - x.cos().powi(2) * 0.5).sqrt() * 3.0;
        let d = e.diff(0);
        let xv: f64 = 0.4;
        let inner = 2.0 - 0.5 * xv.cos().powi(2);
        let expected = 3.0 * (0.5 * 2.0 * xv.cos() * xv.sin()) / (2.0 * inner.sqrt());
        assert_relative_eq!(d.value(&[xv]), expected, epsilon = 1e-14);
    }

    #[test]
    fn jet_evaluation_agrees_with_symbolic_derivatives() {
        let (x, y) = (Expr::var(0), Expr::var(1));
        let e = x.sin() * y.clone() / (y.clone() * y.clone() + 1.0) + (x.clone() * y).exp();
        let p = [0.3, -0.8];
        let j = e.eval(&Jet2::seed_all(&p));
        assert_relative_eq!(j.value(), e.value(&p), epsilon = 1e-14);
        for i in 0..2 {
            assert_relative_eq!(j.grad(i), e.diff(i).value(&p), epsilon = 1e-13);
            for k in 0..2 {
                assert_relative_eq!(j.hess(i, k), e.diff(i).diff(k).value(&p), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn simplification_keeps_constants_constant() {
        let x = Expr::var(0);
        let e = Expr::constant(0.0) * x.sin() + Expr::constant(2.5);
        assert_eq!(e.as_const(), Some(2.5));
        assert!(e.diff(0).is_zero());
        assert_eq!(x.diff(1).as_const(), Some(0.0));
        assert_eq!((x.clone() * 2.0).max_var(), Some(0));
    }

    #[test]
    fn univariate_composition_chain_rule() {
        let f = Arc::new(ExprFunction::new(Expr::var(0).powi(3), 4));
        // g(x) = f(2x) = 8 x^3
        let g = Expr::apply(f, Expr::var(0) * 2.0);
        assert_relative_eq!(g.value(&[0.5]), 1.0, epsilon = 1e-14);
        assert_relative_eq!(g.diff(0).value(&[0.5]), 24.0 * 0.25, epsilon = 1e-14);
        assert_relative_eq!(g.diff(0).diff(0).value(&[0.5]), 48.0 * 0.5, epsilon = 1e-14);
        let j = g.eval(&Jet2::seed_all(&[0.5]));
        assert_relative_eq!(j.hess(0, 0), 24.0, epsilon = 1e-13);
    }
}
