//! Closed-form oracles for the two cart examples and a generator of random
//! systems satisfying SM1, SM2 and SM4.
#![allow(dead_code)]

use matchctl_core::expr::Expr;
use matchctl_core::lagrangian::ShapingParams;
use matchctl_core::matching::sm3_tau;
use matchctl_core::model::{build_mechanical_system, CartpoleParams, Dims, MechanicalSystem, MetricBlocks, SmoothField};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hand-coded closed loop of the flat cart-pole with the new τ.
#[derive(Clone, Copy, Debug)]
pub struct Cart {
    pub a: f64,
    pub b: f64,
    pub g: f64,
    pub d: f64,
    pub k: f64,
    pub sigma: f64,
}

impl Cart {
    pub fn new(p: &CartpoleParams, k: f64, sigma: f64) -> Self {
        let (m, big_m, l, grav) = (p.m, p.big_m, p.l, p.grav);
        Cart { a: m * l * l, b: m * l, g: m + big_m, d: -m * grav * l, k, sigma }
    }

    pub fn root(&self, x: f64) -> f64 {
        (self.a * self.g - self.b * self.b * x.cos().powi(2)).sqrt()
    }

    pub fn tau(&self, x: f64) -> f64 {
        self.k * self.root(x)
    }

    /// `βγk cos x √(αγ − β²cos²x) − αγ + β²cos²x`
    fn den(&self, x: f64) -> f64 {
        let c2 = self.b * self.b * x.cos().powi(2);
        self.b * self.g * self.k * x.cos() * self.root(x) - self.a * self.g + c2
    }

    pub fn xdd(&self, x: f64, xd: f64) -> f64 {
        let c2 = self.b * self.b * x.cos().powi(2);
        let r2 = self.a * self.g - c2;
        x.sin() * (self.d * self.g * (c2 - self.a * self.g) / (-self.den(x)) - self.b * self.b * xd * xd * x.cos()) / r2
    }

    pub fn sdd(&self, x: f64, xd: f64) -> f64 {
        let r2 = self.a * self.g - self.b * self.b * x.cos().powi(2);
        x.sin()
            * (-self.a * self.d * self.g * self.g * self.k / (self.root(x) * self.den(x))
                + self.b * self.d * x.cos() / r2
                + self.a * self.b * xd * xd / r2)
    }

    pub fn control(&self, x: f64) -> f64 {
        -self.d * self.g * self.g * self.k * x.sin() * self.root(x) / self.den(x)
    }

    pub fn dvt_dx(&self, x: f64) -> f64 {
        let r2 = self.a * self.g - self.b * self.b * x.cos().powi(2);
        -self.d * (self.g * self.g * self.k * self.k * self.sigma + 1.0) * x.sin() * r2 / self.den(x)
    }

    pub fn metric(&self, x: f64) -> [[f64; 2]; 2] {
        let (k, r, c) = (self.k, self.root(x), x.cos());
        let g11 = self.g * k * k * (self.sigma + 1.0) * r * r + 2.0 * self.b * k * c * r + self.a;
        let g12 = self.g * k * r + self.b * c;
        [[g11, g12], [g12, self.g]]
    }

    /// `k` bound of the restoring condition at `x`.
    pub fn k_bound(&self, x: f64) -> f64 {
        self.root(x) / (self.b * self.g * x.cos())
    }
}

/// Hand-coded quantities of the incline construction with the new τ.
#[derive(Clone, Copy, Debug)]
pub struct Incline {
    pub cart: Cart,
    pub psi: f64,
    pub rho: f64,
    pub grav: f64,
}

impl Incline {
    fn cpsi(&self, x: f64) -> f64 {
        (self.psi - x).cos()
    }

    pub fn root(&self, x: f64) -> f64 {
        let c = &self.cart;
        (c.a * c.g - c.b * c.b * self.cpsi(x).powi(2)).sqrt()
    }

    pub fn tau(&self, x: f64) -> f64 {
        self.cart.k * self.root(x)
    }

    pub fn tau_prime(&self, x: f64) -> f64 {
        let c = &self.cart;
        // d/dx of −β²cos²(ψ−x) is −β² sin(2(ψ−x))
        -c.k * c.b * c.b * (2.0 * (self.psi - x)).sin() / (2.0 * self.root(x))
    }

    pub fn metric(&self, x: f64) -> [[f64; 2]; 2] {
        let c = &self.cart;
        let (t, cp, rho) = (self.tau(x), self.cpsi(x), self.rho);
        let g11 = c.a + c.b * c.b * (rho - 1.0) * cp * cp / c.g + 2.0 * c.b * rho * cp * t + c.g * (rho + c.sigma) * t * t;
        let g12 = rho * (c.b * cp + c.g * t);
        [[g11, g12], [g12, rho * c.g]]
    }

    pub fn momentum(&self, x: f64, xd: f64, sd: f64) -> [f64; 2] {
        let m = self.metric(x);
        [m[0][0] * xd + m[0][1] * sd, m[1][0] * xd + m[1][1] * sd]
    }

    /// General display of `A(x)` for a given τ value.
    pub fn a_general(&self, x: f64, tau: f64) -> f64 {
        let c = &self.cart;
        let (cp, rho, s) = (self.cpsi(x), self.rho, c.sigma);
        let den = c.g * rho * (c.a * c.g - c.b * c.b * cp * cp - c.b * c.g * tau * cp);
        let n1 = 0.5 * c.b * (rho - 1.0) * cp * (-2.0 * c.a * c.g + c.b * c.b * (2.0 * (self.psi - x)).cos() + c.b * c.b);
        let n2 = c.b * c.g * c.g * (rho + s) * tau * tau * cp + c.g * rho * tau * (2.0 * c.b * c.b * cp * cp - c.a * c.g);
        (n1 + n2) / den
    }

    /// Display of `A(x)` after substituting the new τ.
    pub fn a_new(&self, x: f64) -> f64 {
        let c = &self.cart;
        let (cp, rho, r) = (self.cpsi(x), self.rho, self.root(x));
        let r2 = c.a * c.g - c.b * c.b * cp * cp;
        let den = c.g * rho * (-c.b * c.g * c.k * cp * r + r2);
        let n1 = c.b * (c.g * c.g * c.k * c.k * (rho + c.sigma) - rho + 1.0) * cp * r2;
        let n2 = c.g * c.k * rho * r * (2.0 * c.b * c.b * cp * cp - c.a * c.g);
        (n1 + n2) / den
    }

    /// Closed-loop shape equation residual.
    pub fn x_equation(&self, x: f64, xdd: f64, sdd: f64) -> f64 {
        let c = &self.cart;
        c.a * xdd + c.b * sdd * self.cpsi(x) + c.d * x.sin()
    }

    /// Closed-loop cart equation residual, given `∂V_ε/∂s`.
    pub fn s_equation(&self, x: f64, xd: f64, xdd: f64, sdd: f64, dveps_ds: f64) -> f64 {
        let c = &self.cart;
        xd * xd * (c.b * (self.psi - x).sin() + c.g * self.tau_prime(x))
            + (c.b * self.cpsi(x) + c.g * self.tau(x)) * xdd
            + c.g * sdd
            + dveps_ds / self.rho
            - self.grav * c.g / self.rho * self.psi.sin()
    }
}

/// A random system with one or two shape and one or two group coordinates:
/// constant `g_ab`, `g_αa = ∂_α f_a` for random trigonometric `f_a`, and
/// `g_αβ = LLᵀ + δI + g_αa g^{ab} g_bβ`, so the metric is positive-definite
/// and SM2, SM4 hold.
pub struct RandomSystem {
    pub sys: MechanicalSystem,
    pub sigma: f64,
}

pub fn random_sm_system(seed: u64, n_shape: usize, n_group: usize) -> RandomSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, ng) = (n_shape, n_group);
    let lg = DMatrix::from_fn(ng, ng, |_, _| rng.gen_range(-1.0..1.0));
    let gg = &lg * lg.transpose() + DMatrix::identity(ng, ng) * 0.5;
    let ginv = gg.clone().try_inverse().expect("positive-definite");

    // f_a(x) = Σ_α c sin(w x_α + φ) + e x_α x_β-style cross term
    let mut f: Vec<Expr> = Vec::new();
    for _ in 0..ng {
        let mut e = Expr::constant(0.0);
        for al in 0..ns {
            let (c, w, ph) = (rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0));
            e = e + (Expr::var(al) * w + ph).sin() * c;
        }
        if ns == 2 {
            e = e + Expr::var(0) * Expr::var(1) * rng.gen_range(-0.5..0.5);
        }
        f.push(e);
    }
    let g_sg: Vec<Vec<Expr>> = (0..ns).map(|al| (0..ng).map(|a| f[a].diff(al)).collect()).collect();

    let ls = DMatrix::from_fn(ns, ns, |_, _| rng.gen_range(-1.0..1.0));
    let base = &ls * ls.transpose() + DMatrix::identity(ns, ns) * 0.3;
    let mut g_ss = vec![vec![Expr::constant(0.0); ns]; ns];
    for al in 0..ns {
        for be in 0..ns {
            let mut e = Expr::constant(base[(al, be)]);
            for a in 0..ng {
                for b in 0..ng {
                    e = e + g_sg[al][a].clone() * g_sg[be][b].clone() * ginv[(a, b)];
                }
            }
            g_ss[al][be] = e;
        }
    }
    let field = |e: Expr| SmoothField::new(ns, e).expect("shape field");
    let blocks = MetricBlocks {
        g_ss: g_ss.into_iter().map(|r| r.into_iter().map(field).collect()).collect(),
        g_sg: g_sg.into_iter().map(|r| r.into_iter().map(field).collect()).collect(),
        g_gg: (0..ng).map(|a| (0..ng).map(|b| SmoothField::constant(ns, gg[(a, b)])).collect()).collect(),
    };
    let mut v = Expr::constant(0.0);
    for al in 0..ns {
        v = v + Expr::var(al).cos() * rng.gen_range(-2.0..2.0) + Expr::var(al).powi(2) * rng.gen_range(0.0..1.0);
    }
    let sys = build_mechanical_system(Dims::new(ns, ng).unwrap(), blocks, SmoothField::new(ns + ng, v).unwrap(), false)
        .expect("random system");
    RandomSystem { sys, sigma: rng.gen_range(0.5..3.0) }
}

impl RandomSystem {
    pub fn sm3_shaping(&self) -> ShapingParams {
        let tau = sm3_tau(&self.sys, self.sigma).unwrap();
        ShapingParams::with_scalar_sigma(&self.sys, tau, self.sigma).unwrap()
    }

    /// An arbitrary smooth τ unrelated to the metric.
    pub fn arbitrary_shaping(&self, seed: u64) -> ShapingParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ns, ng) = (self.sys.dims.n_shape, self.sys.dims.n_group);
        let tau = (0..ng)
            .map(|_| {
                (0..ns)
                    .map(|al| {
                        let e = (Expr::var(al) * rng.gen_range(0.5..1.5)).cos() * rng.gen_range(-1.0..1.0)
                            + rng.gen_range(-0.5..0.5);
                        SmoothField::new(ns, e).unwrap()
                    })
                    .collect()
            })
            .collect();
        ShapingParams::with_scalar_sigma(&self.sys, tau, self.sigma).unwrap()
    }
}

/// Max relative difference `|a − b| / max(1, |b|)`.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
