mod common;

use common::random_sm_system;
use matchctl_core::error::Error;
use matchctl_core::helmholtz::*;
use matchctl_core::lagrangian::*;
use matchctl_core::matching::*;
use matchctl_core::model::*;

fn dims_for(seed: u64) -> (usize, usize) {
    match seed % 3 {
        0 => (1, 1),
        1 => (1, 2),
        _ => (2, 1),
    }
}

#[test]
fn sm3_random_systems_satisfy_m1_to_m3_and_simplified_conditions() {
    for seed in 0..20 {
        let (ns, ng) = dims_for(seed);
        let rs = random_sm_system(seed, ns, ng);
        let sh = rs.sm3_shaping();
        let grid = shape_grid(&rs.sys, 7);
        let m = over_grid(&grid, |x| matching_residuals(&rs.sys, &sh, x, 1e-10)).unwrap();
        assert!(m.pass(), "seed {seed}: {m}");
        let sm = over_grid(&grid, |x| simplified_matching_residuals(&rs.sys, &sh, x, 1e-10)).unwrap();
        assert!(sm.pass(), "seed {seed}: {sm}");
    }
}

#[test]
fn arbitrary_tau_breaks_m1() {
    let rs = random_sm_system(3, 1, 1);
    let sh = rs.arbitrary_shaping(9);
    let r = matching_residuals(&rs.sys, &sh, &[0.4], 1e-10).unwrap();
    assert!(r.value("M1").unwrap() > 1e-3, "{r}");
}

#[test]
fn sm3_controlled_sode_is_variational() {
    for seed in 0..6 {
        let (ns, ng) = dims_for(seed);
        let rs = random_sm_system(seed, ns, ng);
        let sh = rs.sm3_shaping();
        let field = ControlledSode { sys: &rs.sys, shaping: &sh };
        let mom = ShapedMomentum { sys: &rs.sys, shaping: &sh };
        for (q, qd) in random_states(ns, ns + ng, 5, seed, 1.0, 2.0) {
            let r = implicit_helmholtz_residuals(&field, &mom, ns, &q, &qd, &HelmholtzOptions::default()).unwrap();
            assert!(r.pass(), "seed {seed}: {r}");
        }
    }
}

#[test]
fn group_classes_vanish_for_arbitrary_tau() {
    for seed in 0..6 {
        let (ns, ng) = dims_for(seed);
        let rs = random_sm_system(seed, ns, ng);
        let sh = rs.arbitrary_shaping(seed + 100);
        let field = ControlledSode { sys: &rs.sys, shaping: &sh };
        let mom = ShapedMomentum { sys: &rs.sys, shaping: &sh };
        for (q, qd) in random_states(ns, ns + ng, 5, seed, 1.0, 2.0) {
            let r = implicit_helmholtz_residuals(&field, &mom, ns, &q, &qd, &HelmholtzOptions::default()).unwrap();
            for class in ["AB[a,b]", "AB[a,beta]", "AA[a,b]", "AA[alpha,b]"] {
                assert!(r.value(class).unwrap() <= 1e-9, "seed {seed} {class}: {r}");
            }
        }
    }
}

#[test]
fn generalized_conditions_hold_for_sm3_with_original_vertical_metric() {
    let rs = random_sm_system(4, 1, 2);
    let sh = rs.sm3_shaping();
    for x in [-0.7, 0.1, 0.8] {
        let r = generalized_matching_residuals(&rs.sys, &sh, &[x], 1e-9).unwrap();
        assert!(r.pass(), "{r}");
    }
}

#[test]
fn non_constant_group_metric_fails_sm2_by_its_slope() {
    let cart = CartpoleParams::default();
    let base = cartpole_system(&cart).unwrap();
    let x = matchctl_core::expr::Expr::var(0);
    let blocks = MetricBlocks {
        g_ss: base.g_ss.clone(),
        g_sg: base.g_sg.clone(),
        g_gg: vec![vec![SmoothField::new(1, x.sin() * 0.1 + cart.gamma()).unwrap()]],
    };
    let sys = build_mechanical_system(base.dims, blocks, base.potential.clone(), false).unwrap();
    let sh = ShapingParams::with_scalar_sigma(&sys, vec![vec![SmoothField::constant(1, 0.2)]], 1.0).unwrap();
    for xv in [0.0, 0.5] {
        let r = simplified_matching_residuals(&sys, &sh, &[xv], 1e-10).unwrap();
        assert!((r.value("SM2").unwrap() - 0.1 * xv.cos()).abs() < 1e-14);
    }
}

#[test]
fn sm3_tau_rejects_zero_sigma() {
    let sys = cartpole_system(&CartpoleParams::default()).unwrap();
    assert!(matches!(sm3_tau(&sys, 0.0), Err(Error::InvalidParameter(_)) | Err(Error::Singular { .. })));
}

#[test]
fn new_tau_integration_matches_closed_form() {
    let sys = cartpole_system(&CartpoleParams::default()).unwrap();
    let k = 35.0;
    let tau0 = new_tau_closed_form(&sys, k, 0.0).unwrap();
    let curve = integrate_new_tau(&sys, &[tau0], 0.0, (-1.3, 1.3), 1e-3).unwrap();
    let mut sup: f64 = 0.0;
    for i in 0..=260 {
        let x = -1.3 + 0.01 * i as f64;
        sup = sup.max((curve.eval(0, x) - new_tau_closed_form(&sys, k, x).unwrap()).abs());
    }
    assert!(sup < 1e-8, "{sup}");
    let field = new_tau_field(&sys, k).unwrap();
    for i in 0..=26 {
        let x = -1.3 + 0.1 * i as f64;
        let r = new_tau_ode_residual(&sys, &[field.clone()], x).unwrap();
        assert!(r[0].abs() < 1e-10, "x={x}: {r:?}");
    }
}

#[test]
fn new_tau_for_random_two_dof_systems() {
    for seed in [0, 3, 6] {
        let rs = random_sm_system(seed, 1, 1);
        let tau = new_tau_field(&rs.sys, 2.0).unwrap();
        let sh = ShapingParams::with_scalar_sigma(&rs.sys, vec![vec![tau.clone()]], rs.sigma).unwrap();
        for x in [-0.8, 0.0, 0.5] {
            assert!(new_tau_ode_residual(&rs.sys, &[tau.clone()], x).unwrap()[0].abs() < 1e-10);
            let q = [x, 0.3];
            let field = ControlledSode { sys: &rs.sys, shaping: &sh };
            let mom = ShapedMomentum { sys: &rs.sys, shaping: &sh };
            let r = implicit_helmholtz_residuals(&field, &mom, 1, &q, &[0.9, -0.4], &HelmholtzOptions::default()).unwrap();
            assert!(r.pass(), "seed {seed}: {r}");
        }
    }
}
