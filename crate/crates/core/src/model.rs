//! Mechanical systems with an Abelian symmetry: shape coordinates `x^α`
//! followed by group coordinates `θ^a`, a block kinetic metric depending on
//! `x` only, and a potential.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::{self, Mat};
use crate::report::ResidualReport;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_shape: usize,
    pub n_group: usize,
}

impl Dims {
    pub fn new(n_shape: usize, n_group: usize) -> Result<Self> {
        if n_shape == 0 || n_group == 0 {
            return Err(Error::InvalidParameter(format!(
                "need at least one shape and one group coordinate, got ({n_shape}, {n_group})"
            )));
        }
        Ok(Dims { n_shape, n_group })
    }

    pub fn total(&self) -> usize {
        self.n_shape + self.n_group
    }
}

/// A smooth scalar field with exact first and second partials.
#[derive(Clone, Debug)]
pub struct SmoothField {
    arity: usize,
    expr: Expr,
    grad: Vec<Expr>,
    hess: Vec<Vec<Expr>>,
}

impl SmoothField {
    pub fn new(arity: usize, expr: Expr) -> Result<Self> {
        if let Some(i) = expr.max_var() {
            if i >= arity {
                return Err(Error::DimensionMismatch(format!(
                    "field uses variable {i} but has arity {arity}"
                )));
            }
        }
        let grad: Vec<Expr> = (0..arity).map(|i| expr.diff(i)).collect();
        let hess = grad.iter().map(|g| (0..arity).map(|j| g.diff(j)).collect()).collect();
        Ok(SmoothField { arity, expr, grad, hess })
    }

    pub fn constant(arity: usize, c: f64) -> Self {
        SmoothField::new(arity, Expr::constant(c)).expect("constant field")
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn is_constant(&self) -> bool {
        self.expr.as_const().is_some()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.expr.value(x)
    }

    pub fn d1(&self, x: &[f64]) -> Vec<f64> {
        self.grad.iter().map(|g| g.value(x)).collect()
    }

    pub fn d2(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.hess.iter().map(|r| r.iter().map(|h| h.value(x)).collect()).collect()
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        self.expr.eval(x)
    }

    /// `∂f/∂x^i` evaluated over any scalar.
    pub fn partial<S: Scalar>(&self, i: usize, x: &[S]) -> S {
        self.grad[i].eval(x)
    }

    pub fn partial2<S: Scalar>(&self, i: usize, j: usize, x: &[S]) -> S {
        self.hess[i][j].eval(x)
    }
}

/// Metric blocks `g_{αβ}` (shape×shape), `g_{αa}` (shape×group) and `g_{ab}`
/// (group×group), each a field of the shape coordinates.
#[derive(Clone, Debug)]
pub struct MetricBlocks {
    pub g_ss: Vec<Vec<SmoothField>>,
    pub g_sg: Vec<Vec<SmoothField>>,
    pub g_gg: Vec<Vec<SmoothField>>,
}

#[derive(Clone, Debug)]
pub struct MechanicalSystem {
    pub dims: Dims,
    pub g_ss: Vec<Vec<SmoothField>>,
    pub g_sg: Vec<Vec<SmoothField>>,
    pub g_gg: Vec<Vec<SmoothField>>,
    /// Potential as a field of all coordinates.
    pub potential: SmoothField,
    pub breaks_group_symmetry: bool,
    /// Sampling box for the shape coordinates.
    pub domain: Vec<(f64, f64)>,
}

/// Coordinates (shape block first) and velocities in the same ordering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
}

impl State {
    pub fn new(q: Vec<f64>, qdot: Vec<f64>) -> Result<Self> {
        if q.len() != qdot.len() {
            return Err(Error::DimensionMismatch("q and qdot lengths differ".into()));
        }
        Ok(State { q, qdot })
    }
}

fn check_shape(block: &[Vec<SmoothField>], rows: usize, cols: usize, arity: usize, name: &str) -> Result<()> {
    if block.len() != rows || block.iter().any(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch(format!("{name} must be {rows}x{cols}")));
    }
    if block.iter().flatten().any(|f| f.arity() != arity) {
        return Err(Error::DimensionMismatch(format!("{name} entries must be fields of {arity} shape coordinates")));
    }
    Ok(())
}

fn probe_points(n: usize) -> Vec<Vec<f64>> {
    let raw = [0.0, 0.37, -0.81, 1.13, -0.29];
    (0..raw.len())
        .map(|k| (0..n).map(|i| raw[(k + i) % raw.len()] + 0.07 * i as f64).collect())
        .collect()
}

pub fn build_mechanical_system(
    dims: Dims,
    blocks: MetricBlocks,
    potential: SmoothField,
    breaks_group_symmetry: bool,
) -> Result<MechanicalSystem> {
    let (ns, ng) = (dims.n_shape, dims.n_group);
    check_shape(&blocks.g_ss, ns, ns, ns, "g_ss")?;
    check_shape(&blocks.g_sg, ns, ng, ns, "g_sg")?;
    check_shape(&blocks.g_gg, ng, ng, ns, "g_gg")?;
    if potential.arity() != dims.total() {
        return Err(Error::DimensionMismatch(format!(
            "potential must depend on {} coordinates",
            dims.total()
        )));
    }
    for (name, block) in [("g_ss", &blocks.g_ss), ("g_gg", &blocks.g_gg)] {
        for x in probe_points(ns) {
            let m: Mat<f64> = block.iter().map(|r| r.iter().map(|f| f.value(&x)).collect()).collect();
            let scale = linalg::max_abs(&m).max(1.0);
            if linalg::max_asymmetry(&m) > 1e-14 * scale {
                return Err(Error::NonSymmetric { block: name.into() });
            }
        }
    }
    if !breaks_group_symmetry {
        for q in probe_points(dims.total()) {
            for a in 0..ng {
                if potential.partial(ns + a, &q).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(
                        "potential depends on group coordinates but symmetry breaking is not declared".into(),
                    ));
                }
            }
        }
    }
    Ok(MechanicalSystem {
        dims,
        g_ss: blocks.g_ss,
        g_sg: blocks.g_sg,
        g_gg: blocks.g_gg,
        potential,
        breaks_group_symmetry,
        domain: vec![(-1.0, 1.0); ns],
    })
}

fn eval_block<S: Scalar>(block: &[Vec<SmoothField>], x: &[S]) -> Mat<S> {
    block.iter().map(|r| r.iter().map(|f| f.eval(x)).collect()).collect()
}

fn eval_block_partial<S: Scalar>(block: &[Vec<SmoothField>], k: usize, x: &[S]) -> Mat<S> {
    block.iter().map(|r| r.iter().map(|f| f.partial(k, x)).collect()).collect()
}

impl MechanicalSystem {
    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> Self {
        self.domain = domain;
        self
    }

    pub fn n(&self) -> usize {
        self.dims.total()
    }

    pub fn shape<'a, S>(&self, q: &'a [S]) -> &'a [S] {
        &q[..self.dims.n_shape]
    }

    pub fn g_ss_at<S: Scalar>(&self, q: &[S]) -> Mat<S> {
        eval_block(&self.g_ss, self.shape(q))
    }

    pub fn g_sg_at<S: Scalar>(&self, q: &[S]) -> Mat<S> {
        eval_block(&self.g_sg, self.shape(q))
    }

    pub fn g_gg_at<S: Scalar>(&self, q: &[S]) -> Mat<S> {
        eval_block(&self.g_gg, self.shape(q))
    }

    pub fn g_sg_partial<S: Scalar>(&self, k: usize, q: &[S]) -> Mat<S> {
        eval_block_partial(&self.g_sg, k, self.shape(q))
    }

    pub fn g_gg_partial<S: Scalar>(&self, k: usize, q: &[S]) -> Mat<S> {
        eval_block_partial(&self.g_gg, k, self.shape(q))
    }

    fn assemble<S: Scalar>(&self, ss: Mat<S>, sg: Mat<S>, gg: Mat<S>) -> Mat<S> {
        let (ns, n) = (self.dims.n_shape, self.n());
        let mut g = linalg::zeros(n, n);
        for i in 0..ns {
            for j in 0..ns {
                g[i][j] = ss[i][j].clone();
            }
            for a in 0..self.dims.n_group {
                g[i][ns + a] = sg[i][a].clone();
                g[ns + a][i] = sg[i][a].clone();
            }
        }
        for a in 0..self.dims.n_group {
            for b in 0..self.dims.n_group {
                g[ns + a][ns + b] = gg[a][b].clone();
            }
        }
        g
    }

    /// Full kinetic metric at `q`.
    pub fn metric<S: Scalar>(&self, q: &[S]) -> Mat<S> {
        let x = self.shape(q);
        self.assemble(eval_block(&self.g_ss, x), eval_block(&self.g_sg, x), eval_block(&self.g_gg, x))
    }

    /// `∂g/∂q^k`; zero for group coordinates.
    pub fn metric_partial<S: Scalar>(&self, q: &[S], k: usize) -> Mat<S> {
        let n = self.n();
        if k >= self.dims.n_shape {
            return linalg::zeros(n, n);
        }
        let x = self.shape(q);
        self.assemble(
            eval_block_partial(&self.g_ss, k, x),
            eval_block_partial(&self.g_sg, k, x),
            eval_block_partial(&self.g_gg, k, x),
        )
    }

    pub fn potential_at<S: Scalar>(&self, q: &[S]) -> S {
        self.potential.eval(q)
    }

    pub fn potential_gradient<S: Scalar>(&self, q: &[S]) -> Vec<S> {
        (0..self.n()).map(|i| self.potential.partial(i, q)).collect()
    }

    /// Whether the group block is constant (the SM2 situation).
    pub fn g_gg_is_constant(&self) -> bool {
        self.g_gg.iter().flatten().all(SmoothField::is_constant)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartpoleParams {
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub l: f64,
    pub grav: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        CartpoleParams { m: 0.14, big_m: 0.44, l: 0.215, grav: 9.81 }
    }
}

impl CartpoleParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("m", self.m), ("M", self.big_m), ("l", self.l), ("grav", self.grav)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.m * self.l * self.l
    }

    pub fn beta(&self) -> f64 {
        self.m * self.l
    }

    pub fn gamma(&self) -> f64 {
        self.m + self.big_m
    }

    pub fn d(&self) -> f64 {
        -self.m * self.grav * self.l
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclineParams {
    pub cart: CartpoleParams,
    pub psi: f64,
}

impl InclineParams {
    pub fn validate(&self) -> Result<()> {
        self.cart.validate()?;
        if !(self.psi.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParameter(format!("|psi| must be below pi/2, got {}", self.psi)));
        }
        Ok(())
    }
}

pub fn cartpole_system(p: &CartpoleParams) -> Result<MechanicalSystem> {
    incline_system(&InclineParams { cart: *p, psi: 0.0 })
}

/// Cart-pole on an incline of angle `psi`; coordinates `(x, s)` with `x` the
/// pendulum angle from upright and `s` the cart position along the incline.
pub fn incline_system(p: &InclineParams) -> Result<MechanicalSystem> {
    p.validate()?;
    let c = &p.cart;
    let x = Expr::var(0);
    let s = Expr::var(1);
    let blocks = MetricBlocks {
        g_ss: vec![vec![SmoothField::constant(1, c.alpha())]],
        g_sg: vec![vec![SmoothField::new(1, (x.clone() - p.psi).cos() * c.beta())?]],
        g_gg: vec![vec![SmoothField::constant(1, c.gamma())]],
    };
    let mut v = -(x.cos() * c.d());
    if p.psi != 0.0 {
        v = v - s * (c.gamma() * c.grav * p.psi.sin());
    }
    let sys = build_mechanical_system(Dims::new(1, 1)?, blocks, SmoothField::new(2, v)?, p.psi != 0.0)?;
    Ok(sys.with_domain(vec![(-1.3, 1.3)]))
}

/// Checks symmetry, positive-definiteness and derivative consistency at
/// `n_samples` seeded points of the system's domain.
pub fn validate_system(sys: &MechanicalSystem, n_samples: usize) -> Result<ResidualReport> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let n = sys.n();
    let mut asym: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    let mut mismatch: f64 = 0.0;
    for _ in 0..n_samples {
        let mut q: Vec<f64> = sys.domain.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect();
        q.extend((0..sys.dims.n_group).map(|_| rng.gen_range(-1.0..=1.0)));
        let g = sys.metric(&q);
        asym = asym.max(linalg::max_asymmetry(&g));
        min_eig = min_eig.min(linalg::min_eigenvalue(&g));
        let x = &q[..sys.dims.n_shape];
        for f in sys.g_ss.iter().chain(&sys.g_sg).chain(&sys.g_gg).flatten() {
            mismatch = mismatch.max(derivative_mismatch(f, x));
        }
        mismatch = mismatch.max(derivative_mismatch(&sys.potential, &q));
    }
    debug_assert_eq!(n, sys.dims.total());
    let mut r = ResidualReport::new();
    r.residual("symmetry", asym, 0.0);
    r.lower_bound("min_eigenvalue", min_eig, 0.0);
    r.residual("derivative_mismatch", mismatch, 1e-5);
    Ok(r)
}

/// Largest relative disagreement between a field's analytic partials and
/// central differences (first partials from values, second from first).
pub fn derivative_mismatch(f: &SmoothField, x: &[f64]) -> f64 {
    let h1 = f64::EPSILON.cbrt();
    let d1 = f.d1(x);
    let d2 = f.d2(x);
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = h1 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f.value(&xp);
        let gp = f.d1(&xp);
        xp[i] = x[i] - h;
        let fm = f.value(&xp);
        let gm = f.d1(&xp);
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - d1[i]).abs() / d1[i].abs().max(1.0));
        for j in 0..x.len() {
            let fd2 = (gp[j] - gm[j]) / (2.0 * h);
            worst = worst.max((fd2 - d2[j][i]).abs() / d2[j][i].abs().max(1.0));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cartpole_block_values() {
        let p = CartpoleParams::default();
        assert_relative_eq!(p.alpha(), 0.0064715, epsilon = 1e-12);
        assert_relative_eq!(p.beta(), 0.0301, epsilon = 1e-12);
        assert_relative_eq!(p.gamma(), 0.58, epsilon = 1e-12);
        assert_relative_eq!(p.d(), -0.295281, epsilon = 1e-9);
        let sys = cartpole_system(&p).unwrap();
        let g = sys.metric(&[0.0, 3.0]);
        assert_relative_eq!(g[0][1], p.beta(), epsilon = 1e-15);
        assert_relative_eq!(g[0][0] * g[1][1] - g[0][1] * g[1][0], 0.00284746, epsilon = 1e-9);
        assert!(!sys.breaks_group_symmetry);
    }

    #[test]
    fn incline_potential_slope() {
        let p = InclineParams { cart: CartpoleParams::default(), psi: 0.3 };
        let sys = incline_system(&p).unwrap();
        assert!(sys.breaks_group_symmetry);
        let grad = sys.potential_gradient(&[0.2, 1.0]);
        assert_relative_eq!(grad[1], -0.58 * 9.81 * 0.3f64.sin(), epsilon = 1e-14);
        assert!((grad[1] + 1.68147).abs() < 5e-5);
        assert!(sys.g_gg_is_constant());
    }

    #[test]
    fn zero_incline_matches_cartpole() {
        let c = CartpoleParams::default();
        let a = cartpole_system(&c).unwrap();
        let b = incline_system(&InclineParams { cart: c, psi: 0.0 }).unwrap();
        for q in [[0.4, -1.0], [-1.1, 2.0]] {
            assert_eq!(a.metric(&q), b.metric(&q));
            assert_eq!(a.potential_at(&q), b.potential_at(&q));
        }
    }

    #[test]
    fn rejects_bad_blocks() {
        let one = || SmoothField::constant(1, 1.0);
        let blocks = MetricBlocks {
            g_ss: vec![vec![one()]],
            g_sg: vec![vec![one(), one()]],
            g_gg: vec![vec![one()]],
        };
        let v = SmoothField::constant(2, 0.0);
        assert!(matches!(
            build_mechanical_system(Dims::new(1, 1).unwrap(), blocks, v, false),
            Err(Error::DimensionMismatch(_))
        ));
        let x = Expr::var(0);
        let blocks = MetricBlocks {
            g_ss: vec![vec![SmoothField::constant(1, 2.0)]],
            g_sg: vec![vec![SmoothField::constant(1, 0.0), SmoothField::constant(1, 0.0)]],
            g_gg: vec![
                vec![one(), SmoothField::new(1, x.sin()).unwrap()],
                vec![SmoothField::new(1, x.cos()).unwrap(), one()],
            ],
        };
        let v = SmoothField::constant(3, 0.0);
        assert!(matches!(
            build_mechanical_system(Dims::new(1, 2).unwrap(), blocks, v, false),
            Err(Error::NonSymmetric { .. })
        ));
        assert!(CartpoleParams { m: 0.0, ..Default::default() }.validate().is_err());
        assert!(InclineParams { cart: Default::default(), psi: 1.6 }.validate().is_err());
    }

    #[test]
    fn undeclared_symmetry_breaking_is_rejected() {
        let blocks = MetricBlocks {
            g_ss: vec![vec![SmoothField::constant(1, 1.0)]],
            g_sg: vec![vec![SmoothField::constant(1, 0.0)]],
            g_gg: vec![vec![SmoothField::constant(1, 1.0)]],
        };
        let v = SmoothField::new(2, Expr::var(1) * 2.0).unwrap();
        assert!(build_mechanical_system(Dims::new(1, 1).unwrap(), blocks.clone(), v.clone(), false).is_err());
        assert!(build_mechanical_system(Dims::new(1, 1).unwrap(), blocks, v, true).is_ok());
    }

    #[test]
    fn validation_reports() {
        let p = CartpoleParams::default();
        let r = validate_system(&cartpole_system(&p).unwrap(), 50).unwrap();
        assert!(r.pass(), "{r}");
        let blocks = MetricBlocks {
            g_ss: vec![vec![SmoothField::constant(1, -1.0)]],
            g_sg: vec![vec![SmoothField::constant(1, 0.0)]],
            g_gg: vec![vec![SmoothField::constant(1, 1.0)]],
        };
        let sys = build_mechanical_system(Dims::new(1, 1).unwrap(), blocks, SmoothField::constant(2, 0.0), false).unwrap();
        let r = validate_system(&sys, 5).unwrap();
        assert!(!r.get("min_eigenvalue").unwrap().pass);
        assert_eq!(r.value("symmetry"), Some(0.0));
    }
}
