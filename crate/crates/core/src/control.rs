//! Stabilizing feedback for one degree of underactuation, parameter bounds,
//! shaped multipliers and potentials, and the two pendulum-on-a-cart
//! constructions (flat track and incline).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{singular, Error, Result};
use crate::expr::{Expr, ExprFunction, Univariate};
use crate::lagrangian::{
    controlled_lagrangian_value, shaped_metric, ControlledSode, ExplicitSode, ShapingParams, Solved,
    VerticalMetric,
};
use crate::linalg::{self, Mat};
use crate::matching::new_tau_field;
use crate::model::{CartpoleParams, InclineParams, MechanicalSystem, SmoothField};
use crate::quadrature::Antiderivative;
use crate::scalar::{Jet2, Real};

/// Free parameters of the two constructions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainSelection {
    pub k: f64,
    pub sigma: f64,
    pub rho: f64,
    pub c: f64,
    pub s0: f64,
}

impl Default for GainSelection {
    fn default() -> Self {
        GainSelection { k: 35.0, sigma: 1.0, rho: 1.0, c: 0.0, s0: 0.0 }
    }
}

/// `A_{11} = g_{11} − g_{1f} g^{ef}(g_{e1} + g_{ed}τ^d)` for one shape
/// coordinate and `τ^a` given per group coordinate.
pub fn a11<S: Real>(sys: &MechanicalSystem, tau: &[SmoothField], q: &[S]) -> Result<S> {
    if sys.dims.n_shape != 1 || tau.len() != sys.dims.n_group {
        return Err(Error::DimensionMismatch("A_11 needs one shape coordinate and one tau per group".into()));
    }
    let ng = sys.dims.n_group;
    let x = sys.shape(q);
    let g = sys.g_gg_at(q);
    let ginv = linalg::inverse(&g).ok_or_else(|| singular("g_gg"))?;
    let g1 = &sys.g_sg_at(q)[0];
    let t: Vec<S> = tau.iter().map(|f| f.eval(x)).collect();
    let mut a = sys.g_ss_at(q)[0][0].clone();
    for e in 0..ng {
        let mut shifted = g1[e].clone();
        for d in 0..ng {
            shifted = shifted + g[e][d].clone() * t[d].clone();
        }
        for f in 0..ng {
            a = a - g1[f].clone() * ginv[e][f].clone() * shifted.clone();
        }
    }
    Ok(a)
}

/// Velocity-independent feedback `u_a = g_{ab} τ^b A^{11} ∂V/∂x`.
pub fn position_feedback_control(sys: &MechanicalSystem, tau: &[SmoothField], q: &[f64]) -> Result<Vec<f64>> {
    let a = a11(sys, tau, q)?;
    if a == 0.0 || !a.is_finite() {
        return Err(singular("A_11"));
    }
    let dv = sys.potential.partial(0, q);
    let g = sys.g_gg_at(q);
    let t: Vec<f64> = tau.iter().map(|f| f.value(sys.shape(q))).collect();
    Ok(linalg::matvec(&g, &t).into_iter().map(|gt| gt * dv / a).collect())
}

/// Smallest gain keeping the shaped potential restoring at angle `x`:
/// `√(αγ − β²cos²x) / (βγ cos x)`.
pub fn gain_bound(p: &CartpoleParams, x: f64) -> Result<f64> {
    p.validate()?;
    let c = x.cos();
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("gain bound needs cos x > 0, got x = {x}")));
    }
    let det = p.alpha() * p.gamma() - (p.beta() * c).powi(2);
    Ok(det.sqrt() / (p.beta() * p.gamma() * c))
}

/// Shaping for the flat cart-pole: the new τ with gain `k` and
/// `σ_{ab} = σ g_{ab}`.
pub fn cartpole_shaping(sys: &MechanicalSystem, gains: &GainSelection) -> Result<ShapingParams> {
    ShapingParams::with_scalar_sigma(sys, vec![vec![new_tau_field(sys, gains.k)?]], gains.sigma)
}

#[derive(Clone, Debug, Serialize)]
pub struct ShapedMultipliers {
    /// Velocity Hessian of the controlled Lagrangian.
    pub g: Mat<f64>,
    /// `det g`
    pub d: f64,
    /// `det g̃`
    pub d_tilde: f64,
    /// `det(g_ρ) · det(S + τᵀστ)` with `S` the Schur complement of `g_{ab}`;
    /// for two degrees of freedom this is `ρ(D + σ(g₂₂τ)²)`.
    pub d_predicted: f64,
    pub min_eigenvalue: f64,
    pub positive_definite: bool,
}

pub fn shaped_multipliers(sys: &MechanicalSystem, sh: &ShapingParams, q: &[f64]) -> Result<ShapedMultipliers> {
    let n = sys.n();
    let ns = sys.dims.n_shape;
    let qd = vec![0.0; n];
    let seeds = Jet2::seed_all(&qd);
    let qj: Vec<Jet2> = q.iter().map(|&v| Jet2::constant(v)).collect();
    let l = controlled_lagrangian_value(sys, sh, &qj, &seeds)?;
    let g: Mat<f64> = (0..n).map(|i| (0..n).map(|j| l.hess(i, j)).collect()).collect();
    let d = linalg::det(&sys.metric(q));
    let d_tilde = linalg::det(&g);
    let ggg = sys.g_gg_at(q);
    let ginv = linalg::inverse(&ggg).ok_or_else(|| singular("g_gg"))?;
    let gsg = sys.g_sg_at(q);
    let schur = linalg::sub(&sys.g_ss_at(q), &linalg::matmul(&gsg, &linalg::matmul(&ginv, &linalg::transpose(&gsg))));
    let tau = sh.tau_at(sys.shape(q));
    let sigma = linalg::from_dmatrix(&sh.sigma);
    let tst = linalg::matmul(&linalg::transpose(&tau), &linalg::matmul(&sigma, &tau));
    let d_predicted = linalg::det(&linalg::add(&schur, &tst)) * linalg::det(&sh.g_rho(sys, q));
    debug_assert_eq!(schur.len(), ns);
    let min_eigenvalue = linalg::min_eigenvalue(&g);
    Ok(ShapedMultipliers { g, d, d_tilde, d_predicted, min_eigenvalue, positive_definite: min_eigenvalue > 0.0 })
}

/// `∂Ṽ/∂q_i = −g̃_{ij}Γ^j − (∂_k g̃_{ij} − ½∂_i g̃_{jk}) q̇^j q̇^k`, the
/// potential gradient for which the closed loop is the Euler–Lagrange system
/// of `½q̇ᵀg̃q̇ − Ṽ`.
fn gradient_from_closed_loop<E: ExplicitSode>(
    sys: &MechanicalSystem,
    sh: &ShapingParams,
    field: &E,
    q: &[f64],
    qd: &[f64],
) -> Result<Vec<f64>> {
    let n = sys.n();
    let gj = shaped_metric(sys, sh, &Jet2::seed_all(q))?;
    let gamma = field.gamma(q, qd)?;
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc -= gj[i][j].value() * gamma[j];
            for k in 0..n {
                acc -= (gj[i][j].grad(k) - 0.5 * gj[j][k].grad(i)) * qd[j] * qd[k];
            }
        }
        out[i] = acc;
    }
    Ok(out)
}

/// Potential gradient reconstructed from a closed loop and the shaped
/// multipliers; velocity independence is checked over `samples` seeded
/// random velocities of magnitude up to `v_max`, to relative tolerance 1e-10.
pub fn reconstruct_shaped_potential_gradient<E: ExplicitSode>(
    sys: &MechanicalSystem,
    sh: &ShapingParams,
    field: &E,
    q: &[f64],
    samples: usize,
    v_max: f64,
) -> Result<Vec<f64>> {
    let n = sys.n();
    let base = gradient_from_closed_loop(sys, sh, field, q, &vec![0.0; n])?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x7ade);
    for _ in 0..samples {
        let qd: Vec<f64> = (0..n).map(|_| rng.gen_range(-v_max..v_max)).collect();
        let other = gradient_from_closed_loop(sys, sh, field, q, &qd)?;
        let scale = other.iter().chain(&base).fold(1.0f64, |m, v| m.max(v.abs()));
        let gap = base.iter().zip(&other).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if gap > 1e-10 * scale {
            return Err(Error::Matching(format!(
                "reconstructed potential gradient depends on velocity (gap {gap:.3e} at q = {q:?})"
            )));
        }
    }
    Ok(base)
}

/// `x ↦ ∂Ṽ/∂x` at rest for a system with one shape coordinate; the first
/// derivative comes from a jet through the closed loop.
#[derive(Debug)]
struct RestGradient {
    sys: MechanicalSystem,
    shaping: ShapingParams,
}

impl RestGradient {
    fn eval<S: Real>(&self, x: S) -> Result<S> {
        let n = self.sys.n();
        let mut q = vec![S::zero(); n];
        q[0] = x;
        let zero = vec![S::zero(); n];
        let field = Solved(ControlledSode { sys: &self.sys, shaping: &self.shaping });
        let gamma = field.gamma(&q, &zero)?;
        let g = shaped_metric(&self.sys, &self.shaping, &q)?;
        let mut acc = S::zero();
        for j in 0..n {
            acc = acc - g[0][j].clone() * gamma[j].clone();
        }
        Ok(acc)
    }
}

impl Univariate for RestGradient {
    fn derivative(&self, order: usize, x: f64) -> f64 {
        match order {
            0 => self.eval(x).unwrap_or(f64::NAN),
            1 => self.eval(Jet2::variable(x, 0, 1)).map_or(f64::NAN, |j| j.grad(0)),
            2 => self.eval(Jet2::variable(x, 0, 1)).map_or(f64::NAN, |j| j.hess(0, 0)),
            _ => f64::NAN,
        }
    }
}

/// Shaped potential `Ṽ(x)` with `Ṽ(0) = 0`, by quadrature of the
/// reconstructed gradient over `range`. Requires one shape coordinate and a
/// group-invariant closed loop.
pub fn shaped_potential_by_quadrature(
    sys: &MechanicalSystem,
    sh: &ShapingParams,
    range: (f64, f64),
) -> Result<SmoothField> {
    if sys.dims.n_shape != 1 || sys.breaks_group_symmetry {
        return Err(Error::InvalidParameter(
            "quadrature of the shaped potential needs one shape coordinate and a group-invariant system".into(),
        ));
    }
    let n = sys.n();
    let mut probe = vec![0.0; n];
    probe[0] = 0.5 * (range.0 + range.1) + 0.1;
    let field = Solved(ControlledSode { sys, shaping: sh });
    let g = reconstruct_shaped_potential_gradient(sys, sh, &field, &probe, 4, 3.0)?;
    if g[1..].iter().any(|v| v.abs() > 1e-10 * g[0].abs().max(1.0)) {
        return Err(Error::Matching("reconstructed potential depends on the group coordinates".into()));
    }
    let integrand = Arc::new(RestGradient { sys: sys.clone(), shaping: sh.clone() });
    let cells = (((range.1 - range.0) / 0.005).ceil() as usize).max(1);
    let ad = Antiderivative::new(integrand, 0.0, range.0, range.1, cells, 1e-13)?;
    SmoothField::new(n, Expr::apply(Arc::new(ad), Expr::var(0)))
}

/// `E = ½ q̇ᵀ g̃(q) q̇ + potential(q)`.
pub fn shaped_energy(sys: &MechanicalSystem, sh: &ShapingParams, potential: &SmoothField, q: &[f64], qd: &[f64]) -> Result<f64> {
    let g = shaped_metric(sys, sh, q)?;
    let gq = linalg::matvec(&g, qd);
    let kinetic: f64 = 0.5 * gq.iter().zip(qd).map(|(a, b)| a * b).sum::<f64>();
    Ok(kinetic + potential.value(q))
}

/// Kinetic part, potential and their sum for a matched closed loop.
#[derive(Clone, Debug)]
pub struct ShapedEnergy {
    pub shaping: ShapingParams,
    pub potential: SmoothField,
}

impl ShapedEnergy {
    pub fn kinetic(&self, sys: &MechanicalSystem, q: &[f64], qd: &[f64]) -> Result<f64> {
        Ok(shaped_energy(sys, &self.shaping, &self.potential, q, qd)? - self.potential.value(q))
    }

    pub fn value(&self, sys: &MechanicalSystem, q: &[f64], qd: &[f64]) -> Result<f64> {
        shaped_energy(sys, &self.shaping, &self.potential, q, qd)
    }
}

/// Flat cart-pole: shaping and conserved energy for the new τ.
pub fn cartpole_energy(sys: &MechanicalSystem, gains: &GainSelection, range: (f64, f64)) -> Result<ShapedEnergy> {
    let shaping = cartpole_shaping(sys, gains)?;
    let potential = shaped_potential_by_quadrature(sys, &shaping, range)?;
    Ok(ShapedEnergy { shaping, potential })
}

/// Coefficient `A(x)` of the incline potential PDE as an expression in `x`,
/// for a τ field, scalar `σ` (with `σ_{ab} = σγ`) and `ρ`.
pub fn incline_a_expr(p: &InclineParams, tau: &SmoothField, sigma: f64, rho: f64) -> Expr {
    let c = &p.cart;
    let (al, be, ga) = (c.alpha(), c.beta(), c.gamma());
    let x = Expr::var(0);
    let t = tau.expr().clone();
    let cs = (Expr::constant(p.psi) - x.clone()).cos();
    let c2 = (Expr::constant(2.0 * p.psi) - x * 2.0).cos();
    let den = (Expr::constant(al * ga) - cs.powi(2) * (be * be) - t.clone() * cs.clone() * (be * ga)) * (ga * rho);
    let first = cs.clone() * (0.5 * be * (rho - 1.0)) * (c2 * (be * be) + (be * be - 2.0 * al * ga));
    let second = t.powi(2) * cs.clone() * (be * ga * ga * (rho + sigma))
        + t * (cs.powi(2) * (2.0 * be * be) - al * ga) * (ga * rho);
    (first + second) / den
}

fn incline_parts(p: &InclineParams, sh: &ShapingParams) -> Result<(f64, f64)> {
    if sh.tau.len() != 1 || sh.tau[0].len() != 1 {
        return Err(Error::DimensionMismatch("incline shaping has a single tau".into()));
    }
    let rho = sh.rho().ok_or_else(|| Error::InvalidParameter("incline needs g_rho = rho g".into()))?;
    Ok((sh.sigma[(0, 0)] / p.cart.gamma(), rho))
}

fn incline_denominator(p: &InclineParams, tau: f64, x: f64) -> f64 {
    let c = &p.cart;
    let cs = (p.psi - x).cos();
    c.alpha() * c.gamma() - (c.beta() * cs).powi(2) - c.beta() * c.gamma() * tau * cs
}

/// `A(x)` evaluated; fails where its denominator vanishes.
pub fn incline_a_coefficient(p: &InclineParams, sh: &ShapingParams, x: f64) -> Result<f64> {
    let (sigma, rho) = incline_parts(p, sh)?;
    let den = incline_denominator(p, sh.tau[0][0].value(&[x]), x);
    if den.abs() < 1e-14 {
        return Err(Error::Singular { block: format!("A(x) denominator at x = {x}") });
    }
    Ok(incline_a_expr(p, &sh.tau[0][0], sigma, rho).value(&[x]))
}

/// Shaping for the incline: new τ, `σ_{ab} = σγ`, `g_ρ = ρ g`.
pub fn incline_shaping(sys: &MechanicalSystem, gains: &GainSelection) -> Result<ShapingParams> {
    if !(gains.rho.is_finite() && gains.rho != 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be nonzero, got {}", gains.rho)));
    }
    ShapingParams::with_scalar_sigma(sys, vec![vec![new_tau_field(sys, gains.k)?]], gains.sigma)?
        .with_vertical(VerticalMetric::Scaled(gains.rho))
}

/// Extra potential `V_ε = γ g sinψ s + ½s² − s h(x) + c x² − s₀ s + s₀ h(x)`
/// with `h(x) = ∫₀ˣ A`.
#[derive(Clone, Debug)]
pub struct InclinePotential {
    pub a: Expr,
    pub h: Arc<Antiderivative>,
    pub veps: SmoothField,
    pub gains: GainSelection,
}

impl InclinePotential {
    /// `(V_ε, ∇V_ε, h(x))`
    pub fn at(&self, x: f64, s: f64) -> (f64, [f64; 2], f64) {
        let q = [x, s];
        let g = self.veps.d1(&q);
        (self.veps.value(&q), [g[0], g[1]], self.h.value(x))
    }

    /// `A ∂²V_ε/∂s² + ∂²V_ε/∂s∂x` from a jet through `V_ε`.
    pub fn pde_residual(&self, x: f64, s: f64) -> f64 {
        let v = self.veps.eval(&Jet2::seed_all(&[x, s]));
        let a = self.a.value(&[x]);
        a * v.hess(1, 1) + v.hess(0, 1)
    }
}

pub fn incline_veps(
    p: &InclineParams,
    sh: &ShapingParams,
    gains: &GainSelection,
    range: (f64, f64),
) -> Result<InclinePotential> {
    let (sigma, rho) = incline_parts(p, sh)?;
    let n_probe = 64;
    for i in 0..=n_probe {
        let x = range.0 + (range.1 - range.0) * i as f64 / n_probe as f64;
        incline_a_coefficient(p, sh, x)?;
    }
    let a = incline_a_expr(p, &sh.tau[0][0], sigma, rho);
    let af = Arc::new(ExprFunction::new(a.clone(), 3));
    let cells = (((range.1 - range.0) / 0.005).ceil() as usize).max(1);
    let h = Arc::new(Antiderivative::new(af, 0.0, range.0.min(0.0), range.1.max(0.0), cells, 1e-13)?);
    let c = &p.cart;
    let x = Expr::var(0);
    let s = Expr::var(1);
    let hx = Expr::apply(h.clone(), x.clone());
    let veps = s.clone() * (c.gamma() * c.grav * p.psi.sin()) + s.powi(2) * 0.5 - s.clone() * hx.clone()
        + x.powi(2) * gains.c
        - s * gains.s0
        + hx * gains.s0;
    Ok(InclinePotential { a, h, veps: SmoothField::new(2, veps)?, gains: *gains })
}

/// The SM3-branch extra potential `εdγ²y²/(2β²)` with
/// `y = s + (−1/σ + (ρ−1)/ρ)(β/γ)(sin(x−ψ) + sinψ)`.
pub fn incline_sm3_veps(p: &InclineParams, sigma: f64, rho: f64, eps: f64) -> Result<SmoothField> {
    let c = &p.cart;
    let x = Expr::var(0);
    let s = Expr::var(1);
    let coef = (-1.0 / sigma + (rho - 1.0) / rho) * c.beta() / c.gamma();
    let y = s + ((x - p.psi).sin() + p.psi.sin()) * coef;
    SmoothField::new(2, y.powi(2) * (eps * c.d() * c.gamma().powi(2) / (2.0 * c.beta().powi(2))))
}

#[derive(Clone, Debug, Serialize)]
pub struct HessianCheck {
    pub hessian: [[f64; 2]; 2],
    pub c_min: f64,
    pub positive_definite: bool,
    pub critical_gradient: [f64; 2],
}

/// Hessian of `V_T = V + V_ε` at `(0, s₀)`, the threshold
/// `c_min = (−d + A(0)²)/2` and whether `c > c_min`.
pub fn incline_hessian_check(
    sys: &MechanicalSystem,
    p: &InclineParams,
    pot: &InclinePotential,
) -> Result<HessianCheck> {
    let q = Jet2::seed_all(&[0.0, pot.gains.s0]);
    let vt = sys.potential.eval(&q) + pot.veps.eval(&q);
    let a0 = pot.a.value(&[0.0]);
    let c_min = (-p.cart.d() + a0 * a0) / 2.0;
    Ok(HessianCheck {
        hessian: [[vt.hess(0, 0), vt.hess(0, 1)], [vt.hess(1, 0), vt.hess(1, 1)]],
        c_min,
        positive_definite: pot.gains.c > c_min,
        critical_gradient: [vt.grad(0), vt.grad(1)],
    })
}

/// Incline: shaping with `V_ε` attached, and the conserved energy
/// `½q̇ᵀḡq̇ + V + V_ε`.
pub fn incline_energy(
    sys: &MechanicalSystem,
    p: &InclineParams,
    gains: &GainSelection,
    range: (f64, f64),
) -> Result<(ShapedEnergy, InclinePotential)> {
    let base = incline_shaping(sys, gains)?;
    let pot = incline_veps(p, &base, gains, range)?;
    let shaping = base.with_epsilon_potential(sys, pot.veps.clone())?;
    let potential = SmoothField::new(2, sys.potential.expr().clone() + pot.veps.expr().clone())?;
    Ok((ShapedEnergy { shaping, potential }, pot))
}

/// `x ↦ −(ḡΓ)_x − ∂(V + V_ε)/∂x` at rest on the line `s = 0`: the part of
/// the closed-loop potential gradient that `V + V_ε` does not account for.
#[derive(Debug)]
struct InclineDefect {
    sys: MechanicalSystem,
    shaping: ShapingParams,
    partial: Expr,
}

impl InclineDefect {
    fn eval<S: Real>(&self, x: S, s: S) -> Result<S> {
        let q = vec![x, s];
        let zero = vec![S::zero(); 2];
        let field = Solved(ControlledSode { sys: &self.sys, shaping: &self.shaping });
        let gamma = field.gamma(&q, &zero)?;
        let g = shaped_metric(&self.sys, &self.shaping, &q)?;
        let mut acc = S::zero() - self.partial.eval(&q);
        for j in 0..2 {
            acc = acc - g[0][j].clone() * gamma[j].clone();
        }
        Ok(acc)
    }
}

impl Univariate for InclineDefect {
    fn derivative(&self, order: usize, x: f64) -> f64 {
        let jet = || self.eval(Jet2::variable(x, 0, 1), Jet2::constant(0.0));
        match order {
            0 => self.eval(x, 0.0).unwrap_or(f64::NAN),
            1 => jet().map_or(f64::NAN, |j| j.grad(0)),
            2 => jet().map_or(f64::NAN, |j| j.hess(0, 0)),
            _ => f64::NAN,
        }
    }
}

/// Closed-loop energy of the incline with the `x`-only term of `V_ε` fixed
/// by the dynamics instead of `c x²`.
#[derive(Clone, Debug)]
pub struct ConsistentIncline {
    pub energy: ShapedEnergy,
    /// `G*(x)` with `G*(0) = 0`.
    pub g: Arc<Antiderivative>,
    /// `G*''(0)/2`, to compare with `c_min`.
    pub c_effective: f64,
    /// `G*'(0)`.
    pub slope_at_zero: f64,
}

/// Potential `V + V_ε|_{c=0} + G*(x)` whose `x`-gradient matches the closed
/// loop. `G*'` is the rest-gradient defect on `s = 0`; its independence of
/// `s` is checked on a few sample points.
pub fn incline_consistent_energy(
    sys: &MechanicalSystem,
    p: &InclineParams,
    gains: &GainSelection,
    range: (f64, f64),
) -> Result<ConsistentIncline> {
    let flat = GainSelection { c: 0.0, ..*gains };
    let (base, _) = incline_energy(sys, p, &flat, range)?;
    let defect = InclineDefect {
        sys: sys.clone(),
        shaping: base.shaping.clone(),
        partial: base.potential.expr().diff(0),
    };
    for i in 0..=4 {
        let x = range.0 + (range.1 - range.0) * (0.1 + 0.2 * i as f64);
        let d0 = defect.eval(x, 0.0)?;
        for s in [-2.0, 1.5] {
            let ds = defect.eval(x, s)?;
            if (ds - d0).abs() > 1e-9 * d0.abs().max(1.0) {
                return Err(Error::Matching(format!("potential defect depends on s at x = {x}, s = {s}")));
            }
        }
    }
    let defect = Arc::new(defect);
    let cells = (((range.1 - range.0) / 0.005).ceil() as usize).max(1);
    let g = Arc::new(Antiderivative::new(defect.clone(), 0.0, range.0.min(0.0), range.1.max(0.0), cells, 1e-13)?);
    let expr = base.potential.expr().clone() + Expr::apply(g.clone(), Expr::var(0));
    Ok(ConsistentIncline {
        energy: ShapedEnergy { shaping: base.shaping, potential: SmoothField::new(2, expr)? },
        g,
        c_effective: 0.5 * defect.derivative(1, 0.0),
        slope_at_zero: defect.derivative(0, 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::feedback_control;
    use crate::model::{cartpole_system, incline_system};
    use approx::assert_relative_eq;

    #[test]
    fn gain_bound_at_upright() {
        let p = CartpoleParams::default();
        assert_relative_eq!(gain_bound(&p, 0.0).unwrap(), 3.0566, epsilon = 1e-3);
        assert!(gain_bound(&p, 1.6).is_err());
        let weak = CartpoleParams { m: 1e-12, ..p };
        assert!(gain_bound(&weak, 0.0).unwrap() > 1e6);
    }

    #[test]
    fn position_control_is_general_control_on_shell() {
        let sys = cartpole_system(&CartpoleParams::default()).unwrap();
        let sh = cartpole_shaping(&sys, &GainSelection::default()).unwrap();
        let field = Solved(ControlledSode { sys: &sys, shaping: &sh });
        for (q, qd) in [([0.1, 0.3], [1.0, 2.0]), ([-0.7, 1.0], [-3.0, 0.5])] {
            let u = position_feedback_control(&sys, &sh.tau[0], &q).unwrap();
            let qdd = field.gamma(&q, &qd).unwrap();
            let v = feedback_control(&sys, &sh, &q, &qd, &qdd).unwrap();
            assert_relative_eq!(u[0], v[0], epsilon = 1e-10 * u[0].abs().max(1.0));
        }
        assert_eq!(position_feedback_control(&sys, &sh.tau[0], &[0.0, 0.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn unshaped_multipliers_are_the_metric() {
        let sys = cartpole_system(&CartpoleParams::default()).unwrap();
        let sh = ShapingParams::unshaped(sys.dims);
        let m = shaped_multipliers(&sys, &sh, &[0.4, 0.0]).unwrap();
        assert!(linalg::max_abs(&linalg::sub(&m.g, &sys.metric(&[0.4, 0.0]))) < 1e-15);
        assert_relative_eq!(m.d, m.d_tilde, epsilon = 1e-15);
    }

    #[test]
    fn reconstructed_gradient_vanishes_at_upright() {
        let sys = cartpole_system(&CartpoleParams::default()).unwrap();
        let sh = cartpole_shaping(&sys, &GainSelection::default()).unwrap();
        let field = Solved(ControlledSode { sys: &sys, shaping: &sh });
        let g = reconstruct_shaped_potential_gradient(&sys, &sh, &field, &[0.0, 0.4], 10, 5.0).unwrap();
        assert!(g[0].abs() < 1e-15 && g[1].abs() < 1e-15);
        // τ not solving the τ ODE leaves velocity dependence
        let bad = ShapingParams::with_scalar_sigma(&sys, vec![vec![SmoothField::new(1, Expr::var(0)).unwrap()]], 1.0)
            .unwrap();
        let field = Solved(ControlledSode { sys: &sys, shaping: &bad });
        assert!(matches!(
            reconstruct_shaped_potential_gradient(&sys, &bad, &field, &[0.3, 0.0], 5, 3.0),
            Err(Error::Matching(_))
        ));
    }

    #[test]
    fn incline_critical_point_and_hessian() {
        let p = InclineParams { cart: CartpoleParams::default(), psi: 0.1 };
        let sys = incline_system(&p).unwrap();
        let mut gains = GainSelection { k: 35.0, sigma: 1.0, rho: 2.0, c: 0.0, s0: 0.4 };
        let sh = incline_shaping(&sys, &gains).unwrap();
        let pot = incline_veps(&p, &sh, &gains, (-1.2, 1.2)).unwrap();
        let c_min = incline_hessian_check(&sys, &p, &pot).unwrap().c_min;
        gains.c = c_min + 1.0;
        let pot = incline_veps(&p, &sh, &gains, (-1.2, 1.2)).unwrap();
        let hc = incline_hessian_check(&sys, &p, &pot).unwrap();
        assert!(hc.positive_definite);
        assert!(hc.critical_gradient[0].abs() < 1e-10 && hc.critical_gradient[1].abs() < 1e-10);
        let a0 = pot.a.value(&[0.0]);
        assert_relative_eq!(hc.hessian[0][0], p.cart.d() + 2.0 * gains.c, epsilon = 1e-10);
        assert_relative_eq!(hc.hessian[0][1], -a0, epsilon = 1e-10);
        assert_relative_eq!(hc.hessian[1][1], 1.0, epsilon = 1e-12);
        assert!(pot.pde_residual(0.37, 1.1).abs() < 1e-8);
    }
}
