//! Pointwise residuals of the three families of Helmholtz conditions:
//! multiplier conditions for an explicit system, exactness conditions for
//! an implicit one, and the implicit conditions on candidate Legendre
//! components `F_i(q, q̇)`.
//!
//! Partial derivatives come from second-order jets by default; central
//! differences are available as an independent path.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{singular, Result};
use crate::lagrangian::{legendre_transform, shaped_metric, ExplicitSode, ImplicitSode, ShapingParams};
use crate::linalg::{self, Mat};
use crate::model::MechanicalSystem;
use crate::report::{normalized, ResidualReport};
use crate::scalar::{Jet2, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffMode {
    #[default]
    Dual,
    FiniteDifference,
}

#[derive(Clone, Copy, Debug)]
pub struct HelmholtzOptions {
    pub mode: DiffMode,
    pub tol: f64,
    pub det_floor: f64,
}

impl Default for HelmholtzOptions {
    fn default() -> Self {
        HelmholtzOptions { mode: DiffMode::Dual, tol: 1e-8, det_floor: 1e-12 }
    }
}

/// A vector-valued function of a flat argument, evaluable over any [`Real`].
pub trait VectorFunction {
    fn n_in(&self) -> usize;
    fn eval<S: Real>(&self, z: &[S]) -> Result<Vec<S>>;
}

/// A function of `(q, q̇)`: multipliers (flattened row-major) or Legendre
/// components.
pub trait PhaseFunction {
    fn dim(&self) -> usize;
    fn eval<S: Real>(&self, q: &[S], qd: &[S]) -> Result<Vec<S>>;
}

/// Value, Jacobian `jac[i][k]` and Hessians `hess[i][k][l]`.
#[derive(Clone, Debug)]
pub struct Taylor {
    pub value: Vec<f64>,
    pub jac: Vec<Vec<f64>>,
    pub hess: Vec<Vec<Vec<f64>>>,
}

pub fn taylor<F: VectorFunction>(f: &F, z: &[f64], mode: DiffMode) -> Result<Taylor> {
    let m = z.len();
    match mode {
        DiffMode::Dual => {
            let out = f.eval(&Jet2::seed_all(z))?;
            Ok(Taylor {
                value: out.iter().map(|j| j.value()).collect(),
                jac: out.iter().map(|j| j.gradient(m)).collect(),
                hess: out
                    .iter()
                    .map(|j| (0..m).map(|k| (0..m).map(|l| j.hess(k, l)).collect()).collect())
                    .collect(),
            })
        }
        DiffMode::FiniteDifference => {
            let value = f.eval(z)?;
            let p = value.len();
            let mut jac = vec![vec![0.0; m]; p];
            let mut hess = vec![vec![vec![0.0; m]; m]; p];
            let h1: Vec<f64> = z.iter().map(|v| f64::EPSILON.cbrt() * v.abs().max(1.0)).collect();
            let h2: Vec<f64> = z.iter().map(|v| f64::EPSILON.powf(0.25) * v.abs().max(1.0)).collect();
            let mut w = z.to_vec();
            for k in 0..m {
                w[k] = z[k] + h1[k];
                let fp = f.eval(&w)?;
                w[k] = z[k] - h1[k];
                let fm = f.eval(&w)?;
                w[k] = z[k];
                for i in 0..p {
                    jac[i][k] = (fp[i] - fm[i]) / (2.0 * h1[k]);
                }
            }
            for k in 0..m {
                for l in 0..=k {
                    let corner = |sk: f64, sl: f64| -> Result<Vec<f64>> {
                        let mut w = z.to_vec();
                        w[k] += sk * h2[k];
                        w[l] += sl * h2[l];
                        f.eval(&w)
                    };
                    let (pp, pm, mp, mm) = (corner(1.0, 1.0)?, corner(1.0, -1.0)?, corner(-1.0, 1.0)?, corner(-1.0, -1.0)?);
                    for i in 0..p {
                        let v = (pp[i] - pm[i] - mp[i] + mm[i]) / (4.0 * h2[k] * h2[l]);
                        hess[i][k][l] = v;
                        hess[i][l][k] = v;
                    }
                }
            }
            Ok(Taylor { value, jac, hess })
        }
    }
}

/// Largest disagreement between the jet and finite-difference derivative
/// paths, relative to `max(1, |jet value|)`.
pub fn derivative_agreement<F: VectorFunction>(f: &F, z: &[f64]) -> Result<f64> {
    let a = taylor(f, z, DiffMode::Dual)?;
    let b = taylor(f, z, DiffMode::FiniteDifference)?;
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..a.value.len() {
        for k in 0..z.len() {
            worst = worst.max(rel(a.jac[i][k], b.jac[i][k]));
            for l in 0..z.len() {
                worst = worst.max(rel(a.hess[i][k][l], b.hess[i][k][l]));
            }
        }
    }
    Ok(worst)
}

/// `z = (q, q̇) ↦ Γ(q, q̇)`.
pub struct GammaFn<'a, E>(pub &'a E);

impl<E: ExplicitSode> VectorFunction for GammaFn<'_, E> {
    fn n_in(&self) -> usize {
        2 * self.0.dim()
    }
    fn eval<S: Real>(&self, z: &[S]) -> Result<Vec<S>> {
        let (q, qd) = z.split_at(self.0.dim());
        self.0.gamma(q, qd)
    }
}

/// `z = (q, q̇) ↦ P(q, q̇)`.
pub struct PhaseFn<'a, P>(pub &'a P);

impl<P: PhaseFunction> VectorFunction for PhaseFn<'_, P> {
    fn n_in(&self) -> usize {
        2 * self.0.dim()
    }
    fn eval<S: Real>(&self, z: &[S]) -> Result<Vec<S>> {
        let (q, qd) = z.split_at(self.0.dim());
        self.0.eval(q, qd)
    }
}

/// `w = (q, q̇, q̈) ↦ Φ(q, q̇, q̈)`.
pub struct JetPhi<'a, T>(pub &'a T);

impl<T: ImplicitSode> VectorFunction for JetPhi<'_, T> {
    fn n_in(&self) -> usize {
        3 * self.0.dim()
    }
    fn eval<S: Real>(&self, w: &[S]) -> Result<Vec<S>> {
        let n = self.0.dim();
        self.0.phi(&w[..n], &w[n..2 * n], &w[2 * n..])
    }
}

/// `z = (q, q̇) ↦ Φ(q, q̇, q̈₀)` at a fixed acceleration.
pub struct PhiAt<'a, T> {
    pub field: &'a T,
    pub qdd: Vec<f64>,
}

impl<T: ImplicitSode> VectorFunction for PhiAt<'_, T> {
    fn n_in(&self) -> usize {
        2 * self.field.dim()
    }
    fn eval<S: Real>(&self, z: &[S]) -> Result<Vec<S>> {
        let n = self.field.dim();
        let qdd: Vec<S> = self.qdd.iter().map(|&v| S::cst(v)).collect();
        self.field.phi(&z[..n], &z[n..], &qdd)
    }
}

/// Velocity Hessian of the controlled Lagrangian as a multiplier.
pub struct ShapedMultiplier<'a> {
    pub sys: &'a MechanicalSystem,
    pub shaping: &'a ShapingParams,
}

impl PhaseFunction for ShapedMultiplier<'_> {
    fn dim(&self) -> usize {
        self.sys.n()
    }
    fn eval<S: Real>(&self, q: &[S], _qd: &[S]) -> Result<Vec<S>> {
        Ok(shaped_metric(self.sys, self.shaping, q)?.into_iter().flatten().collect())
    }
}

/// Legendre components of the controlled Lagrangian.
pub struct ShapedMomentum<'a> {
    pub sys: &'a MechanicalSystem,
    pub shaping: &'a ShapingParams,
}

impl PhaseFunction for ShapedMomentum<'_> {
    fn dim(&self) -> usize {
        self.sys.n()
    }
    fn eval<S: Real>(&self, q: &[S], qd: &[S]) -> Result<Vec<S>> {
        legendre_transform(self.sys, self.shaping, q, qd)
    }
}

/// Constant identity multiplier.
pub struct IdentityMultiplier(pub usize);

impl PhaseFunction for IdentityMultiplier {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval<S: Real>(&self, _q: &[S], _qd: &[S]) -> Result<Vec<S>> {
        let n = self.0;
        Ok((0..n * n).map(|k| S::cst(if k / n == k % n { 1.0 } else { 0.0 })).collect())
    }
}

/// Tensors of an explicit system at one state.
#[derive(Clone, Debug)]
pub struct SodeTensors {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `∂Γ^i/∂q^j`
    pub dq: Mat<f64>,
    /// `∂Γ^i/∂q̇^j`
    pub dqd: Mat<f64>,
    /// `∇^i_j = −½ ∂Γ^i/∂q̇^j`
    pub nabla: Mat<f64>,
    /// Jacobi endomorphism `Φ^k_j`, stored `[k][j]`.
    pub jacobi: Mat<f64>,
    /// Normalisation scale of each Jacobi entry (largest summand, at least 1).
    pub jacobi_scale: Mat<f64>,
}

impl SodeTensors {
    /// `Γ(f) = q̇·∂f/∂q + Γ·∂f/∂q̇` from a gradient over `(q, q̇)`.
    pub fn derivative_along(&self, grad: &[f64]) -> f64 {
        let n = self.q.len();
        (0..n).map(|l| self.qd[l] * grad[l] + self.gamma[l] * grad[n + l]).sum()
    }
}

pub fn sode_tensors<E: ExplicitSode>(field: &E, q: &[f64], qd: &[f64], mode: DiffMode) -> Result<SodeTensors> {
    let n = field.dim();
    let z: Vec<f64> = q.iter().chain(qd).copied().collect();
    let t = taylor(&GammaFn(field), &z, mode)?;
    let gamma = t.value.clone();
    let dq: Mat<f64> = (0..n).map(|i| t.jac[i][..n].to_vec()).collect();
    let dqd: Mat<f64> = (0..n).map(|i| t.jac[i][n..].to_vec()).collect();
    let nabla = linalg::scale(&dqd, -0.5);
    let mut jacobi = linalg::zeros(n, n);
    let mut jacobi_scale = linalg::zeros(n, n);
    for k in 0..n {
        for j in 0..n {
            let mut terms = Vec::with_capacity(3 * n + 1);
            for l in 0..n {
                terms.push(qd[l] * t.hess[k][n + j][l]);
                terms.push(gamma[l] * t.hess[k][n + j][n + l]);
                terms.push(-0.5 * dqd[l][j] * dqd[k][l]);
            }
            terms.push(-2.0 * dq[k][j]);
            jacobi[k][j] = terms.iter().sum();
            jacobi_scale[k][j] = terms.iter().map(|v| v.abs()).fold(1.0, f64::max);
        }
    }
    Ok(SodeTensors { q: q.to_vec(), qd: qd.to_vec(), gamma, dq, dqd, nabla, jacobi, jacobi_scale })
}

/// Multiplier (Douglas) conditions for `q̈ = Γ` with candidate `g_{ij}(q, q̇)`.
pub fn explicit_helmholtz_residuals<E: ExplicitSode, M: PhaseFunction>(
    field: &E,
    multiplier: &M,
    q: &[f64],
    qd: &[f64],
    opts: &HelmholtzOptions,
) -> Result<ResidualReport> {
    let n = field.dim();
    let st = sode_tensors(field, q, qd, opts.mode)?;
    let z: Vec<f64> = q.iter().chain(qd).copied().collect();
    let tg = taylor(&PhaseFn(multiplier), &z, opts.mode)?;
    let g = |i: usize, j: usize| tg.value[i * n + j];
    let dg = |i: usize, j: usize| &tg.jac[i * n + j];
    let (mut sym, mut vsym, mut geq, mut jsym) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        for j in 0..n {
            sym = sym.max(normalized(&[g(i, j), -g(j, i)]));
            for k in 0..n {
                vsym = vsym.max(normalized(&[dg(i, j)[n + k], -dg(i, k)[n + j]]));
            }
            let mut terms = Vec::new();
            for l in 0..n {
                terms.push(qd[l] * dg(i, j)[l]);
                terms.push(st.gamma[l] * dg(i, j)[n + l]);
            }
            for k in 0..n {
                terms.push(-st.nabla[k][j] * g(i, k));
                terms.push(-st.nabla[k][i] * g(k, j));
            }
            geq = geq.max(normalized(&terms));
            let mut terms = Vec::new();
            for k in 0..n {
                terms.push(g(i, k) * st.jacobi[k][j]);
                terms.push(-g(j, k) * st.jacobi[k][i]);
            }
            jsym = jsym.max(normalized(&terms));
        }
    }
    let gm: Mat<f64> = (0..n).map(|i| (0..n).map(|j| g(i, j)).collect()).collect();
    let mut r = ResidualReport::new();
    r.residual("H1.symmetry", sym, opts.tol);
    r.residual("H1.velocity_symmetry", vsym, opts.tol);
    r.residual("H2.gamma_equation", geq, opts.tol);
    r.residual("H2.jacobi_symmetry", jsym, opts.tol);
    r.lower_bound("regularity |det g|", linalg::det(&gm).abs(), opts.det_floor);
    Ok(r)
}

/// Exactness conditions for `Φ(q, q̇, q̈)` at a supplied acceleration; the
/// jerk entering the total time derivatives is `Γ_q q̇ + Γ_q̇ q̈`.
pub fn exactness_residuals<T: ImplicitSode + Clone>(
    field: &T,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
    opts: &HelmholtzOptions,
) -> Result<ResidualReport> {
    let n = field.dim();
    let st = sode_tensors(&crate::lagrangian::Solved(field.clone()), q, qd, opts.mode)?;
    let jerk: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|k| st.dq[i][k] * qd[k] + st.dqd[i][k] * qdd[k]).sum())
        .collect();
    let w: Vec<f64> = q.iter().chain(qd).chain(qdd).copied().collect();
    let t = taylor(&JetPhi(field), &w, opts.mode)?;
    // summands of d/dt (∂Φ_i/∂w_m)
    let ddt = |i: usize, m: usize| -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * n);
        for k in 0..n {
            v.push(t.hess[i][m][k] * qd[k]);
            v.push(t.hess[i][m][n + k] * qdd[k]);
            v.push(t.hess[i][m][2 * n + k] * jerk[k]);
        }
        v
    };
    let (mut hc1, mut hc2, mut hc3) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        for j in 0..n {
            hc1 = hc1.max(normalized(&[t.jac[i][2 * n + j], -t.jac[j][2 * n + i]]));
            let mut terms = vec![t.jac[i][j], -t.jac[j][i]];
            terms.extend(ddt(i, n + j).into_iter().map(|v| -0.5 * v));
            terms.extend(ddt(j, n + i).into_iter().map(|v| 0.5 * v));
            hc2 = hc2.max(normalized(&terms));
            let mut terms = vec![t.jac[i][n + j], t.jac[j][n + i]];
            terms.extend(ddt(i, 2 * n + j).into_iter().map(|v| -v));
            terms.extend(ddt(j, 2 * n + i).into_iter().map(|v| -v));
            hc3 = hc3.max(normalized(&terms));
        }
    }
    let mut r = ResidualReport::new();
    r.residual("HC1", hc1, opts.tol);
    r.residual("HC2", hc2, opts.tol);
    r.residual("HC3", hc3, opts.tol);
    Ok(r)
}

fn class_name(family: &str, i: usize, j: usize, n_shape: usize) -> String {
    let ci = if i < n_shape { "alpha" } else { "a" };
    let cj = if j < n_shape { "beta" } else { "b" };
    format!("{family}[{ci},{cj}]")
}

/// Implicit conditions (BB), (AB), (AA) on-shell: `q̈` is first obtained from
/// the system itself.
pub fn implicit_helmholtz_residuals<T: ImplicitSode, P: PhaseFunction>(
    field: &T,
    legendre: &P,
    n_shape: usize,
    q: &[f64],
    qd: &[f64],
    opts: &HelmholtzOptions,
) -> Result<ResidualReport> {
    let qdd = field.accel(q, qd)?;
    implicit_helmholtz_residuals_at(field, legendre, n_shape, q, qd, &qdd, opts)
}

/// Implicit conditions at an arbitrary (possibly off-shell) acceleration.
/// Residuals are reported per index class: `[a,b]`, `[a,beta]`,
/// `[alpha,b]`, `[alpha,beta]` with the first index Latin for group rows.
pub fn implicit_helmholtz_residuals_at<T: ImplicitSode, P: PhaseFunction>(
    field: &T,
    legendre: &P,
    n_shape: usize,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
    opts: &HelmholtzOptions,
) -> Result<ResidualReport> {
    let n = field.dim();
    let z: Vec<f64> = q.iter().chain(qd).copied().collect();
    let tf = taylor(&PhaseFn(legendre), &z, opts.mode)?;
    let tp = taylor(&PhiAt { field, qdd: qdd.to_vec() }, &z, opts.mode)?;
    let (c, _) = field.affine_parts(q, qd)?;
    let cinv = linalg::to_dmatrix(&c).try_inverse().ok_or_else(|| singular("C"))?;
    let jf = &tf.jac;
    let hf = &tf.hess;
    let jp = &tp.jac;
    // Σ_{k,r} ∂F_i/∂q̇^k (C⁻¹)^{kr} ∂Φ_r/∂w_m, one summand per (k, r)
    let coupling = |i: usize, m: usize, cinv: &DMatrix<f64>| -> Vec<f64> {
        let mut v = Vec::with_capacity(n * n);
        for k in 0..n {
            for r in 0..n {
                v.push(jf[i][n + k] * cinv[(k, r)] * jp[r][m]);
            }
        }
        v
    };
    let aa_half = |i: usize, j: usize| -> Vec<f64> {
        let mut v = Vec::new();
        for k in 0..n {
            v.push(hf[i][j][k] * qd[k]);
            v.push(hf[i][j][n + k] * qdd[k]);
        }
        v.extend(coupling(i, j, &cinv).into_iter().map(|x| -x));
        v
    };
    let mut r = ResidualReport::new();
    let mut bb = std::collections::BTreeMap::<String, f64>::new();
    let mut ab = std::collections::BTreeMap::<String, f64>::new();
    let mut aa = std::collections::BTreeMap::<String, f64>::new();
    for i in 0..n {
        for j in 0..n {
            let e = bb.entry(class_name("BB", i, j, n_shape)).or_insert(0.0);
            *e = e.max(normalized(&[jf[i][n + j], -jf[j][n + i]]));

            let mut terms = Vec::new();
            for k in 0..n {
                terms.push(hf[i][n + j][k] * qd[k]);
                terms.push(hf[i][n + j][n + k] * qdd[k]);
            }
            terms.push(jf[i][j]);
            terms.push(-jf[j][i]);
            terms.extend(coupling(i, n + j, &cinv).into_iter().map(|x| -x));
            let e = ab.entry(class_name("AB", i, j, n_shape)).or_insert(0.0);
            *e = e.max(normalized(&terms));

            let mut terms = aa_half(i, j);
            terms.extend(aa_half(j, i).into_iter().map(|x| -x));
            let e = aa.entry(class_name("AA", i, j, n_shape)).or_insert(0.0);
            *e = e.max(normalized(&terms));
        }
    }
    for map in [bb, ab, aa] {
        for (name, v) in map {
            r.residual(&name, v, opts.tol);
        }
    }
    r.lower_bound("regularity |det C|", linalg::det(&c).abs(), opts.det_floor);
    Ok(r)
}

/// Seeded random states with shape coordinates in `|x| < x_max` and
/// velocities in `|v| < v_max`; group coordinates in `[-1, 1]`.
pub fn random_states(
    n_shape: usize,
    n: usize,
    count: usize,
    seed: u64,
    x_max: f64,
    v_max: f64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let q = (0..n)
                .map(|i| if i < n_shape { rng.gen_range(-x_max..x_max) } else { rng.gen_range(-1.0..1.0) })
                .collect();
            let qd = (0..n).map(|_| rng.gen_range(-v_max..v_max)).collect();
            (q, qd)
        })
        .collect()
}
