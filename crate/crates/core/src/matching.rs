//! Pointwise matching-condition residuals (M1–M3, SM1–SM5, GM1–GM4) and
//! synthesis of τ: the SM3 solution and the new one-degree-of-underactuation
//! solution, in closed form (two degrees of freedom) or by integrating its ODE.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{singular, Error, Result};
use crate::expr::Expr;
use crate::lagrangian::{zeta, ShapingParams};
use crate::linalg::{self, Mat};
use crate::model::{MechanicalSystem, SmoothField};
use crate::quadrature::HermiteSpline;
use crate::report::{normalized, MatchingReport};
use crate::scalar::Jet2;

fn full_q(sys: &MechanicalSystem, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != sys.dims.n_shape {
        return Err(Error::DimensionMismatch(format!(
            "expected {} shape coordinates, got {}",
            sys.dims.n_shape,
            x.len()
        )));
    }
    let mut q = x.to_vec();
    q.resize(sys.n(), 0.0);
    Ok(q)
}

fn ginv_at(sys: &MechanicalSystem, q: &[f64]) -> Result<Mat<f64>> {
    linalg::inverse(&sys.g_gg_at(q)).ok_or_else(|| singular("g_gg"))
}

fn m1(sys: &MechanicalSystem, sh: &ShapingParams, q: &[f64], sinv: &DMatrix<f64>) -> f64 {
    let (ns, ng) = (sys.dims.n_shape, sys.dims.n_group);
    let gsg = sys.g_sg_at(q);
    let tau = sh.tau_at(sys.shape(q));
    let mut worst: f64 = 0.0;
    for b in 0..ng {
        for al in 0..ns {
            let mut terms = vec![tau[b][al]];
            terms.extend((0..ng).map(|a| sinv[(a, b)] * gsg[al][a]));
            worst = worst.max(normalized(&terms));
        }
    }
    worst
}

fn m2(sys: &MechanicalSystem, q: &[f64], sinv: &DMatrix<f64>, ginv: &Mat<f64>) -> f64 {
    let (ns, ng) = (sys.dims.n_shape, sys.dims.n_group);
    let mut worst: f64 = 0.0;
    for al in 0..ns {
        let dg = sys.g_gg_partial(al, q);
        for a in 0..ng {
            for b in 0..ng {
                let mut terms = Vec::with_capacity(2 * ng);
                for d in 0..ng {
                    terms.push(sinv[(b, d)] * dg[a][d]);
                    terms.push(-2.0 * ginv[b][d] * dg[a][d]);
                }
                worst = worst.max(normalized(&terms));
            }
        }
    }
    worst
}

fn m3(sys: &MechanicalSystem, sh: &ShapingParams, q: &[f64], ginv: &Mat<f64>) -> f64 {
    let (ns, ng) = (sys.dims.n_shape, sys.dims.n_group);
    let x = sys.shape(q);
    let tau = sh.tau_at(x);
    let dtau: Vec<Mat<f64>> = (0..ns).map(|k| sh.tau_partial(k, x)).collect();
    let dg: Vec<Mat<f64>> = (0..ns).map(|k| sys.g_gg_partial(k, q)).collect();
    let mut worst: f64 = 0.0;
    for b in 0..ng {
        for al in 0..ns {
            for be in 0..ns {
                let mut terms = vec![dtau[be][b][al], -dtau[al][b][be]];
                for a in 0..ng {
                    for d in 0..ng {
                        terms.push(-ginv[d][b] * dg[al][a][d] * tau[a][be]);
                    }
                }
                worst = worst.max(normalized(&terms));
            }
        }
    }
    worst
}

/// Residuals of M1–M3 at shape point `x`.
pub fn matching_residuals(sys: &MechanicalSystem, sh: &ShapingParams, x: &[f64], tol: f64) -> Result<MatchingReport> {
    let q = full_q(sys, x)?;
    let sinv = sh.sigma.clone().try_inverse().ok_or_else(|| singular("sigma"))?;
    let ginv = ginv_at(sys, &q)?;
    let mut r = MatchingReport::new();
    r.residual("M1", m1(sys, sh, &q, &sinv), tol);
    r.residual("M2", m2(sys, &q, &sinv, &ginv), tol);
    r.residual("M3", m3(sys, sh, &q, &ginv), tol);
    Ok(r)
}

/// Least-squares scalar `s` with `σ ≈ s g_{ab}(x)`.
fn sigma_scalar(sigma: &DMatrix<f64>, g: &Mat<f64>) -> f64 {
    let g = linalg::to_dmatrix(g);
    sigma.dot(&g) / g.dot(&g)
}

/// Residuals of SM1–SM5 at shape point `x`. SM5 is evaluated at `θ = 0` and
/// only for systems whose potential breaks the group symmetry.
pub fn simplified_matching_residuals(
    sys: &MechanicalSystem,
    sh: &ShapingParams,
    x: &[f64],
    tol: f64,
) -> Result<MatchingReport> {
    let q = full_q(sys, x)?;
    let (ns, ng) = (sys.dims.n_shape, sys.dims.n_group);
    let g = sys.g_gg_at(&q);
    let ginv = ginv_at(sys, &q)?;
    let gsg = sys.g_sg_at(&q);
    let mut r = MatchingReport::new();

    let s = sigma_scalar(&sh.sigma, &g);
    let sm1 = (&sh.sigma - linalg::to_dmatrix(&g) * s).amax() / sh.sigma.amax().max(1.0);
    r.residual("SM1", sm1, tol);

    let mut sm2: f64 = 0.0;
    for al in 0..ns {
        sm2 = sm2.max(linalg::max_abs(&sys.g_gg_partial(al, &q)));
    }
    r.residual("SM2", sm2, tol);

    if sm1 > tol {
        r.skipped("SM3", "sigma is not a scalar multiple of g_ab");
    } else if s == 0.0 {
        r.skipped("SM3", "sigma is zero");
    } else {
        let tau = sh.tau_at(x);
        let mut sm3: f64 = 0.0;
        for b in 0..ng {
            for al in 0..ns {
                let mut terms = vec![tau[b][al]];
                terms.extend((0..ng).map(|a| ginv[a][b] * gsg[al][a] / s));
                sm3 = sm3.max(normalized(&terms));
            }
        }
        r.residual("SM3", sm3, tol);
    }

    let dsg: Vec<Mat<f64>> = (0..ns).map(|k| sys.g_sg_partial(k, &q)).collect();
    let mut sm4: f64 = 0.0;
    for a in 0..ng {
        for al in 0..ns {
            for de in 0..ns {
                sm4 = sm4.max(normalized(&[dsg[de][al][a], -dsg[al][de][a]]));
            }
        }
    }
    r.residual("SM4", sm4, tol);

    if sys.breaks_group_symmetry {
        // V_{,αa} g^{ad} g_{βd}
        let mixed = |al: usize, be: usize| -> Vec<f64> {
            let mut v = Vec::new();
            for a in 0..ng {
                for d in 0..ng {
                    v.push(sys.potential.partial2(al, ns + a, &q) * ginv[a][d] * gsg[be][d]);
                }
            }
            v
        };
        let mut sm5: f64 = 0.0;
        for al in 0..ns {
            for be in 0..ns {
                let mut terms = mixed(al, be);
                terms.extend(mixed(be, al).into_iter().map(|v| -v));
                sm5 = sm5.max(normalized(&terms));
            }
        }
        r.residual("SM5", sm5, tol);
    } else {
        r.skipped("SM5", "potential is group invariant");
    }
    Ok(r)
}

/// Residuals of GM1–GM4 at shape point `x`, with `ρ^{ab}` the inverse of the
/// vertical block `g_ρ` and `ζ^a_α = g^{ac} g_{αc}`.
pub fn generalized_matching_residuals(
    sys: &MechanicalSystem,
    sh: &ShapingParams,
    x: &[f64],
    tol: f64,
) -> Result<MatchingReport> {
    let q = full_q(sys, x)?;
    let (ns, ng) = (sys.dims.n_shape, sys.dims.n_group);
    let rho_inv = linalg::inverse(&sh.g_rho(sys, &q)).ok_or_else(|| singular("g_rho"))?;
    let sinv = sh.sigma.clone().try_inverse().ok_or_else(|| singular("sigma"))?;
    let ginv = ginv_at(sys, &q)?;
    let mut r = MatchingReport::new();
    r.residual("GM1", m1(sys, sh, &q, &sinv), tol);
    r.residual("GM2", m2(sys, &q, &sinv, &ginv), tol);

    let mut gm3: f64 = 0.0;
    for al in 0..ns {
        gm3 = gm3.max(linalg::max_abs(&sh.varpi_partial(sys, al, &q)));
    }
    r.residual("GM3", gm3, tol);

    let tau = sh.tau_at(x);
    let dtau: Vec<Mat<f64>> = (0..ns).map(|k| sh.tau_partial(k, x)).collect();
    let dg: Vec<Mat<f64>> = (0..ns).map(|k| sys.g_gg_partial(k, &q)).collect();
    let varpi = sh.varpi(sys, &q);
    let zj = zeta(sys, &Jet2::seed_all(&q))?;
    let z: Mat<f64> = linalg::values(&zj);
    // dz[k][a][α] = ∂ζ^a_α/∂x^k
    let dz: Vec<Mat<f64>> =
        (0..ns).map(|k| zj.iter().map(|row| row.iter().map(|v| v.grad(k)).collect()).collect()).collect();
    let mut gm4: f64 = 0.0;
    for b in 0..ng {
        for al in 0..ns {
            for de in 0..ns {
                let mut terms = vec![dtau[de][b][al], -dtau[al][b][de]];
                for a in 0..ng {
                    for d in 0..ng {
                        terms.push(varpi[a][d] * rho_inv[b][d] * (dz[de][a][al] - dz[al][a][de]));
                        for c in 0..ng {
                            for e in 0..ng {
                                terms.push(-varpi[a][d] * rho_inv[d][c] * dg[de][c][e] * rho_inv[e][b] * z[a][al]);
                            }
                        }
                        terms.push(-rho_inv[d][b] * dg[al][a][d] * tau[a][de]);
                    }
                }
                gm4 = gm4.max(normalized(&terms));
            }
        }
    }
    r.residual("GM4", gm4, tol);
    Ok(r)
}

/// Uniform grid of `n` points per shape coordinate over the system's domain.
pub fn shape_grid(sys: &MechanicalSystem, n: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = sys
        .domain
        .iter()
        .map(|&(lo, hi)| {
            if n <= 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
        })
        .collect();
    let mut grid = vec![Vec::new()];
    for axis in &axes {
        grid = grid
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                axis.iter().map(move |&v| {
                    let mut p = p.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    grid
}

/// Evaluates a pointwise check over a grid and merges the reports.
pub fn over_grid<F>(grid: &[Vec<f64>], check: F) -> Result<MatchingReport>
where
    F: Fn(&[f64]) -> Result<MatchingReport>,
{
    let mut out = MatchingReport::new();
    for x in grid {
        out.merge(&check(x)?);
    }
    Ok(out)
}

fn block_exprs(block: &[Vec<SmoothField>]) -> Mat<Expr> {
    block.iter().map(|r| r.iter().map(|f| f.expr().clone()).collect()).collect()
}

/// `τ^b_α = −(1/σ) g^{ab} g_{αa}` as exact fields, indexed `[b][α]`.
pub fn sm3_tau(sys: &MechanicalSystem, sigma: f64) -> Result<Vec<Vec<SmoothField>>> {
    if sigma == 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("SM3 tau needs a finite nonzero sigma, got {sigma}")));
    }
    let (ns, ng) = (sys.dims.n_shape, sys.dims.n_group);
    let ginv = linalg::cofactor_inverse(&block_exprs(&sys.g_gg));
    let gsg = block_exprs(&sys.g_sg);
    let mut tau = Vec::with_capacity(ng);
    for b in 0..ng {
        let mut row = Vec::with_capacity(ns);
        for al in 0..ns {
            let mut e = Expr::constant(0.0);
            for a in 0..ng {
                e = e + ginv[a][b].clone() * gsg[al][a].clone();
            }
            row.push(SmoothField::new(ns, e * (-1.0 / sigma))?);
        }
        tau.push(row);
    }
    Ok(tau)
}

fn require_two_dof(sys: &MechanicalSystem) -> Result<()> {
    if sys.dims.n_shape != 1 || sys.dims.n_group != 1 {
        return Err(Error::InvalidParameter("closed-form tau needs one shape and one group coordinate".into()));
    }
    Ok(())
}

/// `τ(x) = k √(g₁₁ g₂₂ − g₁₂²)` as an exact field.
pub fn new_tau_field(sys: &MechanicalSystem, k: f64) -> Result<SmoothField> {
    require_two_dof(sys)?;
    let det = sys.g_ss[0][0].expr().clone() * sys.g_gg[0][0].expr().clone() - sys.g_sg[0][0].expr().powi(2);
    SmoothField::new(1, det.sqrt() * k)
}

pub fn new_tau_closed_form(sys: &MechanicalSystem, k: f64, x: f64) -> Result<f64> {
    require_two_dof(sys)?;
    let q = [x, 0.0];
    let det = sys.g_ss_at(&q)[0][0] * sys.g_gg_at(&q)[0][0] - sys.g_sg_at(&q)[0][0].powi(2);
    if !(det > 0.0) {
        return Err(Error::NonPositive(format!("g11 g22 - g12^2 = {det} at x = {x}")));
    }
    Ok(k * det.sqrt())
}

fn require_single_shape(sys: &MechanicalSystem) -> Result<()> {
    if sys.dims.n_shape != 1 {
        return Err(Error::InvalidParameter("the tau ODE needs exactly one shape coordinate".into()));
    }
    if !sys.g_gg_is_constant() {
        return Err(Error::InvalidParameter("the tau ODE needs a constant group block".into()));
    }
    Ok(())
}

struct OdeCoefficients {
    g11: f64,
    dg11: f64,
    g1: Vec<f64>,
    dg1: Vec<f64>,
    ginv: Mat<f64>,
}

fn ode_coefficients(sys: &MechanicalSystem, x: f64) -> Result<OdeCoefficients> {
    let mut q = vec![0.0; sys.n()];
    q[0] = x;
    Ok(OdeCoefficients {
        g11: sys.g_ss_at(&q)[0][0],
        dg11: sys.g_ss[0][0].partial(0, &[x]),
        g1: sys.g_sg_at(&q)[0].clone(),
        dg1: sys.g_sg_partial(0, &q)[0].clone(),
        ginv: ginv_at(sys, &q)?,
    })
}

impl OdeCoefficients {
    /// `g_{1e} g^{ec} g'_{1c}` and `g_{1c} g^{dc} g_{d1}`.
    fn contractions(&self) -> (f64, f64) {
        let ng = self.g1.len();
        let (mut a, mut b) = (0.0, 0.0);
        for e in 0..ng {
            for c in 0..ng {
                a += self.g1[e] * self.ginv[e][c] * self.dg1[c];
                b += self.g1[c] * self.ginv[e][c] * self.g1[e];
            }
        }
        (a, b)
    }

    /// Linear system `M τ' = rhs` equivalent to the τ ODE.
    fn system(&self, tau: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
        let ng = tau.len();
        let (g1ginvdg1, g1ginvg1) = self.contractions();
        let g1tau: f64 = (0..ng).map(|c| self.g1[c] * tau[c]).sum();
        let diag = 2.0 * self.g11 - 2.0 * g1ginvg1 - 2.0 * g1tau;
        let m = DMatrix::from_fn(ng, ng, |a, e| if a == e { diag } else { 0.0 } + 2.0 * tau[a] * self.g1[e]);
        let rhs = (0..ng).map(|a| -(2.0 * tau[a] * g1ginvdg1 - tau[a] * self.dg11)).collect();
        (m, rhs)
    }
}

/// Residual of the τ ODE for `τ^a` given as fields of `x`, one per group
/// coordinate.
pub fn new_tau_ode_residual(sys: &MechanicalSystem, tau: &[SmoothField], x: f64) -> Result<Vec<f64>> {
    require_single_shape(sys)?;
    if tau.len() != sys.dims.n_group {
        return Err(Error::DimensionMismatch("one tau field per group coordinate".into()));
    }
    let c = ode_coefficients(sys, x)?;
    let t: Vec<f64> = tau.iter().map(|f| f.value(&[x])).collect();
    let dt: Vec<f64> = tau.iter().map(|f| f.partial(0, &[x])).collect();
    let (m, rhs) = c.system(&t);
    let lhs = &m * nalgebra::DVector::from_column_slice(&dt);
    Ok((0..t.len()).map(|a| lhs[a] - rhs[a]).collect())
}

fn tau_derivative(sys: &MechanicalSystem, x: f64, tau: &[f64]) -> Result<Vec<f64>> {
    let (m, rhs) = ode_coefficients(sys, x)?.system(tau);
    let scale = m.amax().max(1e-300);
    let lu = m.lu();
    let det = lu.determinant();
    if !(det.abs() > 1e-12 * scale.powi(tau.len() as i32)) || !det.is_finite() {
        return Err(Error::Integration { x, reason: "tau ODE coefficient matrix is singular".into() });
    }
    let sol = lu
        .solve(&nalgebra::DVector::from_vec(rhs))
        .ok_or_else(|| Error::Integration { x, reason: "tau ODE coefficient matrix is singular".into() })?;
    Ok(sol.iter().copied().collect())
}

/// Sampled solution of the τ ODE with cubic Hermite interpolation.
#[derive(Clone, Debug)]
pub struct TauCurve {
    pub xs: Vec<f64>,
    /// `values[a][i]`, `slopes[a][i]`
    pub values: Vec<Vec<f64>>,
    pub slopes: Vec<Vec<f64>>,
    splines: Vec<Arc<HermiteSpline>>,
}

impl TauCurve {
    pub fn eval(&self, a: usize, x: f64) -> f64 {
        use crate::expr::Univariate;
        self.splines[a].derivative(0, x)
    }

    /// The curve as shaping fields `[a][0]`.
    pub fn to_fields(&self) -> Result<Vec<Vec<SmoothField>>> {
        self.splines
            .iter()
            .map(|s| Ok(vec![SmoothField::new(1, Expr::apply(s.clone(), Expr::var(0)))?]))
            .collect()
    }
}

/// Integrates the τ ODE by classical RK4 from `x0` outward to both ends of
/// `range`, halting with the location of any coefficient singularity.
pub fn integrate_new_tau(
    sys: &MechanicalSystem,
    tau0: &[f64],
    x0: f64,
    range: (f64, f64),
    step: f64,
) -> Result<TauCurve> {
    require_single_shape(sys)?;
    let ng = sys.dims.n_group;
    if tau0.len() != ng {
        return Err(Error::DimensionMismatch("one initial tau per group coordinate".into()));
    }
    let (lo, hi) = range;
    if !(lo <= x0 && x0 <= hi && lo < hi && step > 0.0) {
        return Err(Error::InvalidParameter("need lo <= x0 <= hi, lo < hi and a positive step".into()));
    }
    let sweep = |end: f64| -> Result<Vec<(f64, Vec<f64>, Vec<f64>)>> {
        let span = end - x0;
        let n = (span.abs() / step).ceil() as usize;
        let mut out = Vec::with_capacity(n + 1);
        let mut x = x0;
        let mut t = tau0.to_vec();
        out.push((x, t.clone(), tau_derivative(sys, x, &t)?));
        if n == 0 {
            return Ok(out);
        }
        let h = span / n as f64;
        let axpy = |t: &[f64], k: &[f64], s: f64| -> Vec<f64> { t.iter().zip(k).map(|(a, b)| a + s * b).collect() };
        for i in 0..n {
            let k1 = out.last().expect("seeded").2.clone();
            let k2 = tau_derivative(sys, x + 0.5 * h, &axpy(&t, &k1, 0.5 * h))?;
            let k3 = tau_derivative(sys, x + 0.5 * h, &axpy(&t, &k2, 0.5 * h))?;
            let k4 = tau_derivative(sys, x + h, &axpy(&t, &k3, h))?;
            for a in 0..ng {
                t[a] += h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
            }
            x = if i + 1 == n { end } else { x0 + h * (i + 1) as f64 };
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integration { x, reason: "non-finite tau".into() });
            }
            let d = tau_derivative(sys, x, &t)?;
            out.push((x, t.clone(), d));
        }
        Ok(out)
    };
    let mut left = sweep(lo)?;
    let right = sweep(hi)?;
    left.reverse();
    left.pop();
    left.extend(right);
    let xs: Vec<f64> = left.iter().map(|p| p.0).collect();
    let values: Vec<Vec<f64>> = (0..ng).map(|a| left.iter().map(|p| p.1[a]).collect()).collect();
    let slopes: Vec<Vec<f64>> = (0..ng).map(|a| left.iter().map(|p| p.2[a]).collect()).collect();
    let splines = (0..ng)
        .map(|a| Ok(Arc::new(HermiteSpline::new(xs.clone(), values[a].clone(), slopes[a].clone())?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TauCurve { xs, values, slopes, splines })
}
