//! Scalar abstraction shared by plain `f64` evaluation, second-order forward
//! mode differentiation ([`Jet2`]) and symbolic field construction
//! ([`crate::expr::Expr`]).
//!
//! Every quantity in the crate (Lagrangians, Legendre maps, implicit SODEs) is
//! written once, generically over [`Scalar`]. Evaluating with `f64` gives
//! values; evaluating with seeded [`Jet2`] variables gives exact gradients and
//! Hessians with respect to the seeds.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use crate::expr::Univariate;

/// Arithmetic and elementary functions needed by the field formulas.
pub trait Scalar:
    Clone
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(c: f64) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn powi(&self, n: i32) -> Self;
    /// Applies the `order`-th derivative of a univariate function.
    fn apply(f: &Arc<dyn Univariate>, order: usize, arg: &Self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
}

/// A scalar with a readable primal value (needed for pivoting and branching).
pub trait Real: Scalar {
    fn value(&self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn cst(c: f64) -> Self {
        c
    }
    #[inline]
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    #[inline]
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    #[inline]
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    #[inline]
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    #[inline]
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    #[inline]
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn apply(f: &Arc<dyn Univariate>, order: usize, arg: &Self) -> Self {
        f.derivative(order, *arg)
    }
}

impl Real for f64 {
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
}

/// Truncated second-order multivariate Taylor expansion: value, gradient and
/// (dense, symmetric) Hessian with respect to a fixed set of seed variables.
///
/// An empty gradient denotes a constant, so constants can be created without
/// knowing the number of seeds.
#[derive(Clone, PartialEq)]
pub struct Jet2 {
    v: f64,
    g: Vec<f64>,
    h: Vec<f64>,
}

impl fmt::Debug for Jet2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Jet2({}, grad={:?})", self.v, self.g)
    }
}

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        Jet2 { v, g: Vec::new(), h: Vec::new() }
    }

    /// Seed variable `index` out of `n` with primal value `v`.
    pub fn variable(v: f64, index: usize, n: usize) -> Self {
        let mut g = vec![0.0; n];
        g[index] = 1.0;
        Jet2 { v, g, h: vec![0.0; n * n] }
    }

    /// Seeds every entry of `values` as an independent variable.
    pub fn seed_all(values: &[f64]) -> Vec<Jet2> {
        let n = values.len();
        values.iter().enumerate().map(|(i, &v)| Jet2::variable(v, i, n)).collect()
    }

    pub fn nvars(&self) -> usize {
        self.g.len()
    }

    pub fn grad(&self, i: usize) -> f64 {
        self.g.get(i).copied().unwrap_or(0.0)
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        let n = self.g.len();
        if n == 0 {
            0.0
        } else {
            self.h[i * n + j]
        }
    }

    pub fn gradient(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.grad(i)).collect()
    }

    /// Chain rule for a univariate map with derivatives `f0, f1, f2` at the primal value.
    fn lift(&self, f0: f64, f1: f64, f2: f64) -> Jet2 {
        let n = self.g.len();
        if n == 0 {
            return Jet2::constant(f0);
        }
        let g: Vec<f64> = self.g.iter().map(|gi| f1 * gi).collect();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = f1 * self.h[i * n + j] + f2 * self.g[i] * self.g[j];
            }
        }
        Jet2 { v: f0, g, h }
    }

    fn combine(a: &Jet2, b: &Jet2, ca: f64, cb: f64) -> Jet2 {
        // ca*a + cb*b
        let n = a.g.len().max(b.g.len());
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        if !a.g.is_empty() {
            for i in 0..n {
                g[i] += ca * a.g[i];
            }
            for k in 0..n * n {
                h[k] += ca * a.h[k];
            }
        }
        if !b.g.is_empty() {
            for i in 0..n {
                g[i] += cb * b.g[i];
            }
            for k in 0..n * n {
                h[k] += cb * b.h[k];
            }
        }
        Jet2 { v: ca * a.v + cb * b.v, g, h }
    }

    fn product(a: &Jet2, b: &Jet2) -> Jet2 {
        if a.g.is_empty() {
            return b.scaled(a.v);
        }
        if b.g.is_empty() {
            return a.scaled(b.v);
        }
        let n = a.g.len();
        debug_assert_eq!(n, b.g.len(), "jets seeded with different variable counts");
        let g: Vec<f64> = (0..n).map(|i| a.v * b.g[i] + b.v * a.g[i]).collect();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                h[k] = a.v * b.h[k] + b.v * a.h[k] + a.g[i] * b.g[j] + b.g[i] * a.g[j];
            }
        }
        Jet2 { v: a.v * b.v, g, h }
    }

    fn scaled(&self, c: f64) -> Jet2 {
        Jet2 {
            v: self.v * c,
            g: self.g.iter().map(|x| x * c).collect(),
            h: self.h.iter().map(|x| x * c).collect(),
        }
    }

    fn recip(&self) -> Jet2 {
        let v = self.v;
        self.lift(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        Jet2::combine(&self, &rhs, 1.0, 1.0)
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        Jet2::combine(&self, &rhs, 1.0, -1.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        Jet2::product(&self, &rhs)
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    fn div(self, rhs: Jet2) -> Jet2 {
        if rhs.g.is_empty() {
            return self.scaled(1.0 / rhs.v);
        }
        Jet2::product(&self, &rhs.recip())
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scaled(-1.0)
    }
}

impl Add<f64> for Jet2 {
    type Output = Jet2;
    fn add(mut self, rhs: f64) -> Jet2 {
        self.v += rhs;
        self
    }
}

impl Sub<f64> for Jet2 {
    type Output = Jet2;
    fn sub(mut self, rhs: f64) -> Jet2 {
        self.v -= rhs;
        self
    }
}

impl Mul<f64> for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: f64) -> Jet2 {
        self.scaled(rhs)
    }
}

impl Div<f64> for Jet2 {
    type Output = Jet2;
    fn div(self, rhs: f64) -> Jet2 {
        self.scaled(1.0 / rhs)
    }
}

impl Scalar for Jet2 {
    fn cst(c: f64) -> Self {
        Jet2::constant(c)
    }
    fn sin(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.lift(s, c, -s)
    }
    fn cos(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.lift(c, -s, -c)
    }
    fn sqrt(&self) -> Self {
        let r = self.v.sqrt();
        self.lift(r, 0.5 / r, -0.25 / (r * self.v))
    }
    fn exp(&self) -> Self {
        let e = self.v.exp();
        self.lift(e, e, e)
    }
    fn ln(&self) -> Self {
        let v = self.v;
        self.lift(v.ln(), 1.0 / v, -1.0 / (v * v))
    }
    fn powi(&self, n: i32) -> Self {
        let v = self.v;
        let nf = n as f64;
        let f1 = if n == 0 { 0.0 } else { nf * v.powi(n - 1) };
        let f2 = if n == 0 || n == 1 { 0.0 } else { nf * (nf - 1.0) * v.powi(n - 2) };
        self.lift(v.powi(n), f1, f2)
    }
    fn apply(f: &Arc<dyn Univariate>, order: usize, arg: &Self) -> Self {
        let x = arg.v;
        let f0 = f.derivative(order, x);
        if arg.g.is_empty() {
            return Jet2::constant(f0);
        }
        arg.lift(f0, f.derivative(order + 1, x), f.derivative(order + 2, x))
    }
}

impl Real for Jet2 {
    fn value(&self) -> f64 {
        self.v
    }
}
