//! Euler–Lagrange residuals, controlled Lagrangians, their Legendre maps and
//! the controlled second-order system with its feedback control.
//!
//! Everything is generic over [`Real`], so evaluating with [`crate::scalar::Jet2`]
//! seeds gives exact partial derivatives.

use nalgebra::DMatrix;

use crate::error::{singular, Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{Dims, MechanicalSystem, SmoothField};
use crate::scalar::{Real, Scalar};

/// The group block `g_ρ` of the controlled Lagrangian.
#[derive(Clone, Debug, PartialEq)]
pub enum VerticalMetric {
    /// `g_ρ = g_{ab}`: the special matching assumption, `ϖ = 0`.
    Original,
    /// `g_ρ = ρ g_{ab}`.
    Scaled(f64),
    /// A constant symmetric matrix.
    Constant(DMatrix<f64>),
}

#[derive(Clone, Debug)]
pub struct ShapingParams {
    /// `tau[a][α]`, fields of the shape coordinates.
    pub tau: Vec<Vec<SmoothField>>,
    /// Constant symmetric `σ_{ab}`.
    pub sigma: DMatrix<f64>,
    pub vertical: VerticalMetric,
    /// Extra potential `V_ε(x, θ)` subtracted from the controlled Lagrangian.
    pub epsilon_potential: Option<SmoothField>,
}

impl ShapingParams {
    pub fn unshaped(dims: Dims) -> Self {
        ShapingParams {
            tau: vec![vec![SmoothField::constant(dims.n_shape, 0.0); dims.n_shape]; dims.n_group],
            sigma: DMatrix::zeros(dims.n_group, dims.n_group),
            vertical: VerticalMetric::Original,
            epsilon_potential: None,
        }
    }

    pub fn new(sys: &MechanicalSystem, tau: Vec<Vec<SmoothField>>, sigma: DMatrix<f64>) -> Result<Self> {
        let Dims { n_shape, n_group } = sys.dims;
        if tau.len() != n_group || tau.iter().any(|r| r.len() != n_shape) {
            return Err(Error::DimensionMismatch(format!("tau must be {n_group}x{n_shape}")));
        }
        if tau.iter().flatten().any(|f| f.arity() != n_shape) {
            return Err(Error::DimensionMismatch("tau entries must be fields of the shape coordinates".into()));
        }
        if sigma.nrows() != n_group || sigma.ncols() != n_group {
            return Err(Error::DimensionMismatch(format!("sigma must be {n_group}x{n_group}")));
        }
        if (&sigma - sigma.transpose()).amax() > 1e-14 * sigma.amax().max(1.0) {
            return Err(Error::NonSymmetric { block: "sigma".into() });
        }
        Ok(ShapingParams { tau, sigma, vertical: VerticalMetric::Original, epsilon_potential: None })
    }

    /// `σ_{ab} = σ g_{ab}` with the group block sampled at `x = 0`.
    pub fn with_scalar_sigma(sys: &MechanicalSystem, tau: Vec<Vec<SmoothField>>, sigma: f64) -> Result<Self> {
        let zero = vec![0.0; sys.n()];
        let g = linalg::to_dmatrix(&sys.g_gg_at(&zero));
        ShapingParams::new(sys, tau, g * sigma)
    }

    pub fn with_vertical(mut self, vertical: VerticalMetric) -> Result<Self> {
        match &vertical {
            VerticalMetric::Scaled(r) if !(r.is_finite() && *r != 0.0) => {
                return Err(Error::InvalidParameter(format!("rho must be finite and nonzero, got {r}")));
            }
            VerticalMetric::Constant(m) => {
                if m.nrows() != self.sigma.nrows() || m.ncols() != self.sigma.ncols() {
                    return Err(Error::DimensionMismatch("g_rho must match the group block".into()));
                }
                if (m - m.transpose()).amax() > 1e-14 * m.amax().max(1.0) {
                    return Err(Error::NonSymmetric { block: "g_rho".into() });
                }
            }
            _ => {}
        }
        self.vertical = vertical;
        Ok(self)
    }

    pub fn with_epsilon_potential(mut self, sys: &MechanicalSystem, v: SmoothField) -> Result<Self> {
        if v.arity() != sys.n() {
            return Err(Error::DimensionMismatch("V_eps must depend on all coordinates".into()));
        }
        self.epsilon_potential = Some(v);
        Ok(self)
    }

    pub fn n_group(&self) -> usize {
        self.tau.len()
    }

    /// Scalar `ρ` when `g_ρ` is a multiple of `g_{ab}`.
    pub fn rho(&self) -> Option<f64> {
        match &self.vertical {
            VerticalMetric::Original => Some(1.0),
            VerticalMetric::Scaled(r) => Some(*r),
            VerticalMetric::Constant(_) => None,
        }
    }

    pub fn tau_at<S: Scalar>(&self, x: &[S]) -> Mat<S> {
        self.tau.iter().map(|r| r.iter().map(|f| f.eval(x)).collect()).collect()
    }

    pub fn tau_partial<S: Scalar>(&self, k: usize, x: &[S]) -> Mat<S> {
        self.tau.iter().map(|r| r.iter().map(|f| f.partial(k, x)).collect()).collect()
    }

    pub fn g_rho<S: Scalar>(&self, sys: &MechanicalSystem, q: &[S]) -> Mat<S> {
        match &self.vertical {
            VerticalMetric::Original => sys.g_gg_at(q),
            VerticalMetric::Scaled(r) => linalg::scale(&sys.g_gg_at(q), *r),
            VerticalMetric::Constant(m) => {
                let ng = m.nrows();
                (0..ng).map(|a| (0..ng).map(|b| S::cst(m[(a, b)])).collect()).collect()
            }
        }
    }

    /// `ϖ = g_ρ − g_{ab}`.
    pub fn varpi<S: Scalar>(&self, sys: &MechanicalSystem, q: &[S]) -> Mat<S> {
        match &self.vertical {
            VerticalMetric::Original => linalg::zeros(self.n_group(), self.n_group()),
            VerticalMetric::Scaled(r) => linalg::scale(&sys.g_gg_at(q), *r - 1.0),
            VerticalMetric::Constant(_) => linalg::sub(&self.g_rho(sys, q), &sys.g_gg_at(q)),
        }
    }

    /// `∂ϖ/∂x^k`.
    pub fn varpi_partial<S: Scalar>(&self, sys: &MechanicalSystem, k: usize, q: &[S]) -> Mat<S> {
        let dg = sys.g_gg_partial(k, q);
        match &self.vertical {
            VerticalMetric::Original => linalg::zeros(self.n_group(), self.n_group()),
            VerticalMetric::Scaled(r) => linalg::scale(&dg, *r - 1.0),
            VerticalMetric::Constant(_) => linalg::scale(&dg, -1.0),
        }
    }

    /// `K = g_{ab} g_ρ^{-1}`, the factor multiplying the shaped potential
    /// gradient in the group equations; `None` means identity.
    fn vertical_gain<S: Real>(&self, sys: &MechanicalSystem, q: &[S]) -> Result<Option<Mat<S>>> {
        match &self.vertical {
            VerticalMetric::Original => Ok(None),
            VerticalMetric::Scaled(r) => Ok(Some(linalg::scale(&linalg::identity(self.n_group()), 1.0 / r))),
            VerticalMetric::Constant(_) => {
                let inv = linalg::inverse(&self.g_rho(sys, q)).ok_or_else(|| singular("g_rho"))?;
                Ok(Some(linalg::matmul(&sys.g_gg_at(q), &inv)))
            }
        }
    }
}

fn quad<S: Scalar>(m: &Mat<S>, u: &[S], v: &[S]) -> S {
    let mut acc = S::zero();
    for (i, row) in m.iter().enumerate() {
        for (j, mij) in row.iter().enumerate() {
            acc = acc + mij.clone() * u[i].clone() * v[j].clone();
        }
    }
    acc
}

/// `L = ½ q̇ᵀ g(q) q̇ − V(q)`.
pub fn lagrangian_value<S: Scalar>(sys: &MechanicalSystem, q: &[S], qd: &[S]) -> S {
    quad(&sys.metric(q), qd, qd) * 0.5 - sys.potential_at(q)
}

/// Euler–Lagrange expression written as `C q̈ + R` with `C = g(q)`.
pub fn el_parts<S: Scalar>(sys: &MechanicalSystem, q: &[S], qd: &[S]) -> (Mat<S>, Vec<S>) {
    let n = sys.n();
    let ns = sys.dims.n_shape;
    let g = sys.metric(q);
    let dg: Vec<Mat<S>> = (0..ns).map(|k| sys.metric_partial(q, k)).collect();
    let dv = sys.potential_gradient(q);
    let mut r = dv;
    for i in 0..n {
        let mut acc = S::zero();
        for (k, dgk) in dg.iter().enumerate() {
            for j in 0..n {
                acc = acc + dgk[i][j].clone() * qd[j].clone() * qd[k].clone();
            }
        }
        if i < ns {
            acc = acc - quad(&dg[i], qd, qd) * 0.5;
        }
        r[i] = r[i].clone() + acc;
    }
    (g, r)
}

/// `Φ_i = d/dt ∂L/∂q̇^i − ∂L/∂q^i` at the given acceleration.
pub fn el_residual<S: Scalar>(sys: &MechanicalSystem, q: &[S], qd: &[S], qdd: &[S]) -> Vec<S> {
    let (c, r) = el_parts(sys, q, qd);
    linalg::matvec(&c, qdd).into_iter().zip(r).map(|(a, b)| a + b).collect()
}

/// `ζ^a_α = g^{ac} g_{αc}` as `[a][α]`.
pub fn zeta<S: Real>(sys: &MechanicalSystem, q: &[S]) -> Result<Mat<S>> {
    let ginv = linalg::inverse(&sys.g_gg_at(q)).ok_or_else(|| singular("g_gg"))?;
    Ok(linalg::matmul(&ginv, &linalg::transpose(&sys.g_sg_at(q))))
}

/// Controlled Lagrangian evaluated term by term:
/// `L(ẋ, θ̇ + τẋ) + ½σ(τẋ, τẋ) + ½ϖ(w, w) − V_ε` with
/// `w = θ̇ + ζẋ + τẋ`.
pub fn controlled_lagrangian_value<S: Real>(
    sys: &MechanicalSystem,
    shaping: &ShapingParams,
    q: &[S],
    qd: &[S],
) -> Result<S> {
    let ns = sys.dims.n_shape;
    let ng = sys.dims.n_group;
    let (xd, thd) = qd.split_at(ns);
    let tau = shaping.tau_at(sys.shape(q));
    let tx = linalg::matvec(&tau, xd);
    let mut v = xd.to_vec();
    v.extend(thd.iter().zip(&tx).map(|(a, b)| a.clone() + b.clone()));
    let mut l = lagrangian_value(sys, q, &v);
    let sigma: Mat<S> =
        (0..ng).map(|a| (0..ng).map(|b| S::cst(shaping.sigma[(a, b)])).collect()).collect();
    l = l + quad(&sigma, &tx, &tx) * 0.5;
    if shaping.vertical != VerticalMetric::Original {
        let zx = linalg::matvec(&zeta(sys, q)?, xd);
        let w: Vec<S> = (0..ng).map(|a| thd[a].clone() + zx[a].clone() + tx[a].clone()).collect();
        l = l + quad(&shaping.varpi(sys, q), &w, &w) * 0.5;
    }
    if let Some(ve) = &shaping.epsilon_potential {
        l = l - ve.eval(q);
    }
    Ok(l)
}

/// Velocity Hessian of the controlled Lagrangian,
/// `TᵀgT + diag(τᵀστ, 0) + BᵀϖB` with `T = [[I,0],[τ,I]]`, `B = [ζ+τ | I]`.
pub fn shaped_metric<S: Real>(sys: &MechanicalSystem, shaping: &ShapingParams, q: &[S]) -> Result<Mat<S>> {
    let ns = sys.dims.n_shape;
    let ng = sys.dims.n_group;
    let n = ns + ng;
    let tau = shaping.tau_at(sys.shape(q));
    let mut t: Mat<S> = linalg::identity(n);
    for a in 0..ng {
        for al in 0..ns {
            t[ns + a][al] = tau[a][al].clone();
        }
    }
    let g = sys.metric(q);
    let mut m = linalg::matmul(&linalg::transpose(&t), &linalg::matmul(&g, &t));
    for al in 0..ns {
        for be in 0..ns {
            let mut acc = S::zero();
            for a in 0..ng {
                for b in 0..ng {
                    acc = acc + tau[a][al].clone() * tau[b][be].clone() * shaping.sigma[(a, b)];
                }
            }
            m[al][be] = m[al][be].clone() + acc;
        }
    }
    if shaping.vertical != VerticalMetric::Original {
        let z = zeta(sys, q)?;
        let mut b: Mat<S> = linalg::zeros(ng, n);
        for a in 0..ng {
            for al in 0..ns {
                b[a][al] = z[a][al].clone() + tau[a][al].clone();
            }
            b[a][ns + a] = S::cst(1.0);
        }
        let bwb = linalg::matmul(&linalg::transpose(&b), &linalg::matmul(&shaping.varpi(sys, q), &b));
        m = linalg::add(&m, &bwb);
    }
    Ok(m)
}

/// Fiber derivative `F̃ = ∂L̃/∂q̇` of the controlled Lagrangian.
pub fn legendre_transform<S: Real>(
    sys: &MechanicalSystem,
    shaping: &ShapingParams,
    q: &[S],
    qd: &[S],
) -> Result<Vec<S>> {
    Ok(linalg::matvec(&shaped_metric(sys, shaping, q)?, qd))
}

/// A second-order system `Φ(q, q̇, q̈) = C(q, q̇) q̈ + R(q, q̇) = 0`.
pub trait ImplicitSode {
    fn dim(&self) -> usize;

    fn affine_parts<S: Real>(&self, q: &[S], qd: &[S]) -> Result<(Mat<S>, Vec<S>)>;

    fn phi<S: Real>(&self, q: &[S], qd: &[S], qdd: &[S]) -> Result<Vec<S>> {
        let (c, r) = self.affine_parts(q, qd)?;
        Ok(linalg::matvec(&c, qdd).into_iter().zip(r).map(|(a, b)| a + b).collect())
    }

    /// `q̈ = −C⁻¹ R`.
    fn accel<S: Real>(&self, q: &[S], qd: &[S]) -> Result<Vec<S>> {
        let (c, r) = self.affine_parts(q, qd)?;
        let rhs: Vec<S> = r.into_iter().map(|x| -x).collect();
        linalg::solve(&c, &rhs).ok_or_else(|| singular("C"))
    }
}

/// An explicit system `q̈ = Γ(q, q̇)`.
pub trait ExplicitSode {
    fn dim(&self) -> usize;
    fn gamma<S: Real>(&self, q: &[S], qd: &[S]) -> Result<Vec<S>>;
}

/// Explicit form of an implicit system, obtained by solving for `q̈`.
#[derive(Clone, Copy, Debug)]
pub struct Solved<T>(pub T);

impl<T: ImplicitSode> ExplicitSode for Solved<T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn gamma<S: Real>(&self, q: &[S], qd: &[S]) -> Result<Vec<S>> {
        self.0.accel(q, qd)
    }
}

pub fn solve_accel<T: ImplicitSode>(field: &T, q: &[f64], qd: &[f64]) -> Result<Vec<f64>> {
    field.accel(q, qd)
}

/// Euler–Lagrange equations of the uncontrolled system.
#[derive(Clone, Copy, Debug)]
pub struct NaturalSode<'a> {
    pub sys: &'a MechanicalSystem,
}

impl ImplicitSode for NaturalSode<'_> {
    fn dim(&self) -> usize {
        self.sys.n()
    }
    fn affine_parts<S: Real>(&self, q: &[S], qd: &[S]) -> Result<(Mat<S>, Vec<S>)> {
        Ok(el_parts(self.sys, q, qd))
    }
}

/// The closed loop: unactuated shape equations unchanged, group equations
/// with the matching feedback `u_a` applied (`Φ̃_a = Φ_a − u_a`).
#[derive(Clone, Copy, Debug)]
pub struct ControlledSode<'a> {
    pub sys: &'a MechanicalSystem,
    pub shaping: &'a ShapingParams,
}

/// Pieces of the feedback law: `(g τ)_{aβ}`, the velocity-quadratic term
/// `(g_{ab}τ^b_β)_{,γ} ẋ^β ẋ^γ`, and the potential part
/// `V_{,a} − K_a^b (V + V_ε)_{,b}`.
struct ControlTerms<S> {
    gtau: Mat<S>,
    quadratic: Vec<S>,
    potential: Vec<S>,
}

fn control_terms<S: Real>(
    sys: &MechanicalSystem,
    shaping: &ShapingParams,
    q: &[S],
    qd: &[S],
) -> Result<ControlTerms<S>> {
    let ns = sys.dims.n_shape;
    let ng = sys.dims.n_group;
    let x = sys.shape(q);
    let xd = &qd[..ns];
    let g = sys.g_gg_at(q);
    let tau = shaping.tau_at(x);
    let gtau = linalg::matmul(&g, &tau);
    let mut quadratic = vec![S::zero(); ng];
    for k in 0..ns {
        let dgtau = linalg::add(
            &linalg::matmul(&sys.g_gg_partial(k, q), &tau),
            &linalg::matmul(&g, &shaping.tau_partial(k, x)),
        );
        let v = linalg::matvec(&dgtau, xd);
        for a in 0..ng {
            quadratic[a] = quadratic[a].clone() + v[a].clone() * xd[k].clone();
        }
    }
    let mut potential = vec![S::zero(); ng];
    let gain = shaping.vertical_gain(sys, q)?;
    if gain.is_some() || shaping.epsilon_potential.is_some() {
        let dv = sys.potential_gradient(q);
        let shaped: Vec<S> = (0..ng)
            .map(|b| {
                let mut s = dv[ns + b].clone();
                if let Some(ve) = &shaping.epsilon_potential {
                    s = s + ve.partial(ns + b, q);
                }
                s
            })
            .collect();
        let k_shaped = match &gain {
            None => shaped,
            Some(k) => linalg::matvec(k, &shaped),
        };
        for a in 0..ng {
            potential[a] = dv[ns + a].clone() - k_shaped[a].clone();
        }
    }
    Ok(ControlTerms { gtau, quadratic, potential })
}

impl ImplicitSode for ControlledSode<'_> {
    fn dim(&self) -> usize {
        self.sys.n()
    }
    fn affine_parts<S: Real>(&self, q: &[S], qd: &[S]) -> Result<(Mat<S>, Vec<S>)> {
        let ns = self.sys.dims.n_shape;
        let (mut c, mut r) = el_parts(self.sys, q, qd);
        let t = control_terms(self.sys, self.shaping, q, qd)?;
        for a in 0..self.sys.dims.n_group {
            for be in 0..ns {
                c[ns + a][be] = c[ns + a][be].clone() + t.gtau[a][be].clone();
            }
            r[ns + a] = r[ns + a].clone() + t.quadratic[a].clone() - t.potential[a].clone();
        }
        Ok((c, r))
    }
}

/// Matching feedback
/// `u_a = V_{,a} − K_a^b(V + V_ε)_{,b} − (g_{ab}τ^b_β)_{,γ}ẋ^βẋ^γ − g_{ab}τ^b_β ẍ^β`,
/// where `K = g g_ρ^{-1}` (identity under the special matching assumption).
pub fn feedback_control<S: Real>(
    sys: &MechanicalSystem,
    shaping: &ShapingParams,
    q: &[S],
    qd: &[S],
    qdd: &[S],
) -> Result<Vec<S>> {
    let ns = sys.dims.n_shape;
    let t = control_terms(sys, shaping, q, qd)?;
    let acc = linalg::matvec(&t.gtau, &qdd[..ns]);
    Ok((0..sys.dims.n_group)
        .map(|a| t.potential[a].clone() - t.quadratic[a].clone() - acc[a].clone())
        .collect())
}

/// `C̃ = ∂Φ̃/∂q̈`, its inverse from the block formulas, and the Schur block
/// `A_{αβ} = g_{αβ} − g_{αb}g^{ab}(g_{aβ} + g_{ad}τ^d_β)`.
#[derive(Clone, Debug)]
pub struct BlockInverse {
    pub c: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub a_ss: DMatrix<f64>,
    pub a_ss_inv: DMatrix<f64>,
    /// Largest entry of `W̃ − C̃⁻¹` against a dense inverse, relative to
    /// `max(1, |C̃⁻¹|)`.
    pub dense_discrepancy: f64,
}

pub fn ctilde_and_block_inverse(sys: &MechanicalSystem, shaping: &ShapingParams, q: &[f64]) -> Result<BlockInverse> {
    let ns = sys.dims.n_shape;
    let ng = sys.dims.n_group;
    let n = ns + ng;
    let gss = sys.g_ss_at(q);
    let gsg = sys.g_sg_at(q);
    let ggg = sys.g_gg_at(q);
    let ginv = linalg::inverse(&ggg).ok_or_else(|| singular("g_gg"))?;
    let tau = shaping.tau_at(sys.shape(q));
    // g_{cβ} + g_{cd} τ^d_β, indexed [c][β]
    let shifted = linalg::add(&linalg::transpose(&gsg), &linalg::matmul(&ggg, &tau));
    let a = linalg::sub(&gss, &linalg::matmul(&gsg, &linalg::matmul(&ginv, &shifted)));
    let ainv = linalg::inverse(&a).ok_or_else(|| singular("A_ss"))?;
    // g_{γd} g^{db}, [γ][b]
    let gsg_ginv = linalg::matmul(&gsg, &ginv);
    // g^{ab} g_{bγ} + τ^a_γ, [a][γ]
    let lift = linalg::add(&linalg::matmul(&ginv, &linalg::transpose(&gsg)), &tau);
    let w_ss = ainv.clone();
    let w_sg = linalg::scale(&linalg::matmul(&ainv, &gsg_ginv), -1.0);
    let w_gs = linalg::scale(&linalg::matmul(&lift, &ainv), -1.0);
    let w_gg = linalg::add(&ginv, &linalg::matmul(&lift, &linalg::matmul(&ainv, &gsg_ginv)));
    let mut w = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..ns {
        for j in 0..ns {
            w[(i, j)] = w_ss[i][j];
            c[(i, j)] = gss[i][j];
        }
        for b in 0..ng {
            w[(i, ns + b)] = w_sg[i][b];
            w[(ns + b, i)] = w_gs[b][i];
            c[(i, ns + b)] = gsg[i][b];
            c[(ns + b, i)] = shifted[b][i];
        }
    }
    for a in 0..ng {
        for b in 0..ng {
            w[(ns + a, ns + b)] = w_gg[a][b];
            c[(ns + a, ns + b)] = ggg[a][b];
        }
    }
    let dense = c.clone().try_inverse().ok_or_else(|| singular("C"))?;
    let dense_discrepancy = (&w - &dense).amax() / dense.amax().max(1.0);
    Ok(BlockInverse {
        c,
        w,
        a_ss: linalg::to_dmatrix(&a),
        a_ss_inv: linalg::to_dmatrix(&ainv),
        dense_discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::model::{cartpole_system, CartpoleParams};
    use crate::scalar::Jet2;
    use approx::assert_relative_eq;

    fn cartpole() -> MechanicalSystem {
        cartpole_system(&CartpoleParams::default()).unwrap()
    }

    fn const_tau(sys: &MechanicalSystem, t: f64, sigma: f64) -> ShapingParams {
        ShapingParams::with_scalar_sigma(sys, vec![vec![SmoothField::constant(1, t)]], sigma).unwrap()
    }

    #[test]
    fn lagrangian_values() {
        let sys = cartpole();
        let p = CartpoleParams::default();
        assert_relative_eq!(lagrangian_value(&sys, &[0.0, 0.0], &[0.0, 0.0]), p.d(), epsilon = 1e-15);
        assert_relative_eq!(lagrangian_value(&sys, &[0.0, 0.0], &[1.0, 0.0]), 0.5 * p.alpha() - (-p.d()), epsilon = 1e-15);
    }

    #[test]
    fn el_residual_matches_finite_difference_euler_lagrange() {
        let sys = cartpole();
        let p = CartpoleParams::default();
        let r = el_residual(&sys, &[0.1, 0.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert_relative_eq!(r[0], p.d() * 0.1f64.sin(), epsilon = 1e-15);
        assert_eq!(r[1], 0.0);
        // d/dt ∂L/∂q̇ − ∂L/∂q by jets of L at a moving state
        let (q, qd, qdd) = ([0.4, -0.3], [0.7, -1.2], [0.3, 0.9]);
        let phi = el_residual(&sys, &q, &qd, &qdd);
        let z: Vec<f64> = q.iter().chain(&qd).copied().collect();
        let zj = Jet2::seed_all(&z);
        let l = lagrangian_value(&sys, &zj[..2], &zj[2..]);
        for i in 0..2 {
            let mut ddt = 0.0;
            for k in 0..2 {
                ddt += l.hess(2 + i, k) * qd[k] + l.hess(2 + i, 2 + k) * qdd[k];
            }
            assert_relative_eq!(phi[i], ddt - l.grad(i), epsilon = 1e-13);
        }
    }

    #[test]
    fn unshaped_controlled_lagrangian_is_original() {
        let sys = cartpole();
        let sh = ShapingParams::unshaped(sys.dims);
        let (q, qd) = ([0.3, 1.0], [-0.4, 2.0]);
        assert_relative_eq!(
            controlled_lagrangian_value(&sys, &sh, &q, &qd).unwrap(),
            lagrangian_value(&sys, &q, &qd),
            epsilon = 1e-15
        );
        let f = legendre_transform(&sys, &sh, &q, &qd).unwrap();
        let p = linalg::matvec(&sys.metric(&q), &qd);
        assert_relative_eq!(f[0], p[0], epsilon = 1e-15);
        assert_relative_eq!(f[1], p[1], epsilon = 1e-15);
    }

    #[test]
    fn controlled_lagrangian_term_by_term() {
        let sys = cartpole();
        let p = CartpoleParams::default();
        let sh = const_tau(&sys, 1.0, 2.0);
        let v = controlled_lagrangian_value(&sys, &sh, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        // L(ẋ=1, ṡ=τ) + ½ σγ τ²
        let l = 0.5 * (p.alpha() + 2.0 * p.beta() + p.gamma()) - (-p.d());
        assert_relative_eq!(v, l + 0.5 * 2.0 * p.gamma(), epsilon = 1e-14);
        let v0 = controlled_lagrangian_value(&sys, &sh, &[0.5, 0.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(v0, -sys.potential_at(&[0.5, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn legendre_is_velocity_gradient() {
        let sys = cartpole();
        let x = Expr::var(0);
        let tau = SmoothField::new(1, x.cos() * 0.7 + 0.2).unwrap();
        let sh = ShapingParams::with_scalar_sigma(&sys, vec![vec![tau]], 1.5)
            .unwrap()
            .with_vertical(VerticalMetric::Scaled(2.0))
            .unwrap();
        let (q, qd) = ([0.3, 0.1], [0.5, -1.5]);
        let z: Vec<f64> = q.iter().chain(&qd).copied().collect();
        let zj = Jet2::seed_all(&z);
        let l = controlled_lagrangian_value(&sys, &sh, &zj[..2], &zj[2..]).unwrap();
        let f = legendre_transform(&sys, &sh, &q, &qd).unwrap();
        let m = shaped_metric(&sys, &sh, &q).unwrap();
        for i in 0..2 {
            assert_relative_eq!(f[i], l.grad(2 + i), epsilon = 1e-12);
            for j in 0..2 {
                assert_relative_eq!(m[i][j], l.hess(2 + i, 2 + j), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unshaped_block_inverse_is_metric_inverse() {
        let sys = cartpole();
        let sh = ShapingParams::unshaped(sys.dims);
        let bi = ctilde_and_block_inverse(&sys, &sh, &[0.4, 0.0]).unwrap();
        let g = linalg::to_dmatrix(&sys.metric(&[0.4, 0.0]));
        assert!((&bi.c - &g).amax() < 1e-15);
        assert!((&bi.w - g.try_inverse().unwrap()).amax() < 1e-10);
        assert!(bi.dense_discrepancy < 1e-12);
    }

    #[test]
    fn singular_blocks_are_named() {
        let sys = cartpole();
        let p = CartpoleParams::default();
        // A11 = α − (β/γ)(β + γτ) vanishes at τ = (αγ − β²)/(βγ)
        let t = (p.alpha() * p.gamma() - p.beta() * p.beta()) / (p.beta() * p.gamma());
        let sh = const_tau(&sys, t, 1.0);
        match ctilde_and_block_inverse(&sys, &sh, &[0.0, 0.0]) {
            Err(Error::Singular { block }) => assert_eq!(block, "A_ss"),
            other => panic!("expected singular A, got {other:?}"),
        }
    }

    #[test]
    fn unshaped_controlled_sode_is_natural() {
        let sys = cartpole();
        let sh = ShapingParams::unshaped(sys.dims);
        let (q, qd, qdd) = ([0.2, 0.3], [0.1, -0.4], [1.0, 2.0]);
        let a = ControlledSode { sys: &sys, shaping: &sh }.phi(&q, &qd, &qdd).unwrap();
        let b = NaturalSode { sys: &sys }.phi(&q, &qd, &qdd).unwrap();
        assert_eq!(a, b);
        let acc = solve_accel(&NaturalSode { sys: &sys }, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(acc, vec![0.0, 0.0]);
        let u = feedback_control(&sys, &sh, &q, &qd, &qdd).unwrap();
        assert_eq!(u, vec![0.0]);
    }

    #[test]
    fn on_shell_round_trip() {
        let sys = cartpole();
        let x = Expr::var(0);
        let sh = ShapingParams::with_scalar_sigma(&sys, vec![vec![SmoothField::new(1, x.sin() + 1.0).unwrap()]], 1.0).unwrap();
        let field = ControlledSode { sys: &sys, shaping: &sh };
        let (q, qd) = ([0.7, 0.0], [0.3, -2.0]);
        let acc = solve_accel(&field, &q, &qd).unwrap();
        let phi = field.phi(&q, &qd, &acc).unwrap();
        assert!(phi.iter().all(|v| v.abs() < 1e-12));
        // Φ̃_a = Φ_a − u_a
        let u = feedback_control(&sys, &sh, &q, &qd, &acc).unwrap();
        let phi0 = el_residual(&sys, &q, &qd, &acc);
        assert_relative_eq!(phi0[1] - u[0], phi[1], epsilon = 1e-12);
    }
}
