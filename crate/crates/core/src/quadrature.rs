//! Adaptive Gauss–Kronrod (7/15) quadrature and cached antiderivatives.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Univariate;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol` by recursive
/// bisection.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut stack = vec![(a, b, tol, 0usize)];
    let mut total = 0.0;
    while let Some((lo, hi, t, depth)) = stack.pop() {
        let (val, err) = gk15(f, lo, hi);
        if !val.is_finite() {
            return Err(Error::Quadrature { a: lo, b: hi });
        }
        if err <= t.max(1e-15 * val.abs()) {
            total += val;
        } else if depth >= 40 {
            return Err(Error::Quadrature { a: lo, b: hi });
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * t, depth + 1));
            stack.push((mid, hi, 0.5 * t, depth + 1));
        }
    }
    Ok(total)
}

/// `H(x) = ∫_{origin}^x f(r) dr` tabulated on a uniform grid and interpolated
/// with quintic Hermite pieces built from `H`, `f` and `f'`.
///
/// Derivatives of order `k ≥ 1` delegate to the integrand, so the cached
/// function and its derivatives are consistent to quadrature accuracy.
#[derive(Debug)]
pub struct Antiderivative {
    integrand: Arc<dyn Univariate>,
    origin: f64,
    lo: f64,
    step: f64,
    nodes: Vec<[f64; 3]>,
    tol: f64,
}

impl Antiderivative {
    pub fn new(
        integrand: Arc<dyn Univariate>,
        origin: f64,
        lo: f64,
        hi: f64,
        cells: usize,
        tol: f64,
    ) -> Result<Self> {
        if !(lo <= origin && origin <= hi) || cells == 0 {
            return Err(Error::InvalidParameter(format!(
                "antiderivative grid [{lo}, {hi}] must contain {origin}"
            )));
        }
        let step = (hi - lo) / cells as f64;
        let f = |x: f64| integrand.derivative(0, x);
        let xs: Vec<f64> = (0..=cells).map(|i| lo + step * i as f64).collect();
        // Integrate cell by cell outward from the node nearest the origin.
        let k0 = ((origin - lo) / step).round() as usize;
        let mut h = vec![0.0; cells + 1];
        h[k0] = integrate(&f, origin, xs[k0], tol)?;
        let cell_tol = tol / cells as f64;
        for k in k0 + 1..=cells {
            h[k] = h[k - 1] + integrate(&f, xs[k - 1], xs[k], cell_tol)?;
        }
        for k in (0..k0).rev() {
            h[k] = h[k + 1] - integrate(&f, xs[k], xs[k + 1], cell_tol)?;
        }
        let nodes = xs
            .iter()
            .zip(&h)
            .map(|(&x, &hv)| [hv, integrand.derivative(0, x), integrand.derivative(1, x)])
            .collect();
        Ok(Antiderivative { integrand, origin, lo, step, nodes, tol })
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.step * (self.nodes.len() - 1) as f64
    }

    pub fn value(&self, x: f64) -> f64 {
        let n = self.nodes.len() - 1;
        if !(x >= self.lo && x <= self.hi()) {
            let f = |r: f64| self.integrand.derivative(0, r);
            return integrate(&f, self.origin, x, self.tol).unwrap_or(f64::NAN);
        }
        let k = (((x - self.lo) / self.step).floor() as usize).min(n - 1);
        let h = self.step;
        let t = (x - self.lo - h * k as f64) / h;
        let [p0, d0, s0] = self.nodes[k];
        let [p1, d1, s1] = self.nodes[k + 1];
        quintic_hermite(t, h, [p0, d0, s0], [p1, d1, s1])
    }
}

fn quintic_hermite(t: f64, h: f64, a: [f64; 3], b: [f64; 3]) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let h00 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h10 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h20 = 0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5;
    let h01 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h11 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h21 = 0.5 * t3 - t4 + 0.5 * t5;
    h00 * a[0] + h * h10 * a[1] + h * h * h20 * a[2] + h01 * b[0] + h * h11 * b[1] + h * h * h21 * b[2]
}

impl Univariate for Antiderivative {
    fn derivative(&self, order: usize, x: f64) -> f64 {
        match order {
            0 => self.value(x),
            k => self.integrand.derivative(k - 1, x),
        }
    }
}

/// Piecewise cubic Hermite interpolant through `(x_i, y_i, y'_i)`.
#[derive(Clone, Debug)]
pub struct HermiteSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl HermiteSpline {
    /// `xs` must be strictly increasing with at least two points.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, ds: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() || xs.len() != ds.len() {
            return Err(Error::DimensionMismatch("spline samples".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("spline nodes must increase".into()));
        }
        Ok(HermiteSpline { xs, ys, ds })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    pub fn node_values(&self) -> &[f64] {
        &self.ys
    }

    fn cell(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }
}

impl Univariate for HermiteSpline {
    fn derivative(&self, order: usize, x: f64) -> f64 {
        let k = self.cell(x);
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let (p0, p1, m0, m1) = (self.ys[k], self.ys[k + 1], self.ds[k] * h, self.ds[k + 1] * h);
        match order {
            0 => {
                let t2 = t * t;
                let t3 = t2 * t;
                (2.0 * t3 - 3.0 * t2 + 1.0) * p0
                    + (t3 - 2.0 * t2 + t) * m0
                    + (-2.0 * t3 + 3.0 * t2) * p1
                    + (t3 - t2) * m1
            }
            1 => {
                let t2 = t * t;
                ((6.0 * t2 - 6.0 * t) * p0
                    + (3.0 * t2 - 4.0 * t + 1.0) * m0
                    + (-6.0 * t2 + 6.0 * t) * p1
                    + (3.0 * t2 - 2.0 * t) * m1)
                    / h
            }
            2 => {
                ((12.0 * t - 6.0) * p0 + (6.0 * t - 4.0) * m0 + (-12.0 * t + 6.0) * p1
                    + (6.0 * t - 2.0) * m1)
                    / (h * h)
            }
            3 => (12.0 * p0 + 6.0 * m0 - 12.0 * p1 + 6.0 * m1) / (h * h * h),
            _ => 0.0,
        }
    }
}
