use matchctl_core::control::{cartpole_shaping, GainSelection};
use matchctl_core::error::Result;
use matchctl_core::helmholtz::*;
use matchctl_core::lagrangian::*;
use matchctl_core::model::*;
use matchctl_core::scalar::Real;

fn cartpole() -> (MechanicalSystem, ShapingParams) {
    let sys = cartpole_system(&CartpoleParams::default()).unwrap();
    let sh = cartpole_shaping(&sys, &GainSelection::default()).unwrap();
    (sys, sh)
}

#[test]
fn cartpole_closed_loop_passes_all_three_families() {
    let (sys, sh) = cartpole();
    let implicit = ControlledSode { sys: &sys, shaping: &sh };
    let explicit = Solved(implicit);
    let opts = HelmholtzOptions::default();
    for (q, qd) in random_states(1, 2, 30, 5, 1.3, 5.0) {
        let r = implicit_helmholtz_residuals(&implicit, &ShapedMomentum { sys: &sys, shaping: &sh }, 1, &q, &qd, &opts).unwrap();
        assert!(r.pass(), "{r}");
        let r = explicit_helmholtz_residuals(&explicit, &ShapedMultiplier { sys: &sys, shaping: &sh }, &q, &qd, &opts).unwrap();
        assert!(r.pass(), "{r}");
    }
}

#[test]
fn unshaped_multiplier_fails_for_the_closed_loop() {
    let (sys, sh) = cartpole();
    let explicit = Solved(ControlledSode { sys: &sys, shaping: &sh });
    let plain = ShapingParams::unshaped(sys.dims);
    let r = explicit_helmholtz_residuals(
        &explicit,
        &ShapedMultiplier { sys: &sys, shaping: &plain },
        &[0.4, 0.0],
        &[1.0, 0.5],
        &HelmholtzOptions::default(),
    )
    .unwrap();
    assert!(!r.pass(), "{r}");
}

#[test]
fn natural_system_is_exact_and_variational() {
    let (sys, _) = cartpole();
    let nat = NaturalSode { sys: &sys };
    let plain = ShapingParams::unshaped(sys.dims);
    for (q, qd) in random_states(1, 2, 10, 8, 1.3, 3.0) {
        let qdd = solve_accel(&nat, &q, &qd).unwrap();
        let r = exactness_residuals(&nat, &q, &qd, &qdd, &HelmholtzOptions::default()).unwrap();
        assert!(r.pass(), "{r}");
        let r = implicit_helmholtz_residuals(&nat, &ShapedMomentum { sys: &sys, shaping: &plain }, 1, &q, &qd, &Default::default())
            .unwrap();
        assert!(r.pass(), "{r}");
    }
}

#[test]
fn off_shell_entry_reproduces_on_shell_report() {
    let (sys, sh) = cartpole();
    let f = ControlledSode { sys: &sys, shaping: &sh };
    let mom = ShapedMomentum { sys: &sys, shaping: &sh };
    let (q, qd) = ([0.3, -0.2], [0.8, 1.7]);
    let qdd = solve_accel(&f, &q, &qd).unwrap();
    let a = implicit_helmholtz_residuals(&f, &mom, 1, &q, &qd, &Default::default()).unwrap();
    let b = implicit_helmholtz_residuals_at(&f, &mom, 1, &q, &qd, &qdd, &Default::default()).unwrap();
    for e in &a.entries {
        assert_eq!(b.value(&e.name), Some(e.value), "{}", e.name);
    }
}

#[test]
fn dual_and_finite_difference_paths_agree() {
    let (sys, sh) = cartpole();
    let implicit = ControlledSode { sys: &sys, shaping: &sh };
    let explicit = Solved(implicit);
    for (q, qd) in random_states(1, 2, 10, 21, 1.2, 3.0) {
        let z: Vec<f64> = q.iter().chain(&qd).copied().collect();
        let w: Vec<f64> = z.iter().copied().chain([0.3, -0.4]).collect();
        assert!(derivative_agreement(&GammaFn(&explicit), &z).unwrap() < 1e-5);
        assert!(derivative_agreement(&PhaseFn(&ShapedMomentum { sys: &sys, shaping: &sh }), &z).unwrap() < 1e-5);
        assert!(derivative_agreement(&PhaseFn(&ShapedMultiplier { sys: &sys, shaping: &sh }), &z).unwrap() < 1e-5);
        assert!(derivative_agreement(&JetPhi(&implicit), &w).unwrap() < 1e-5);
        let fd = HelmholtzOptions { mode: DiffMode::FiniteDifference, tol: 1e-5, ..Default::default() };
        let r = implicit_helmholtz_residuals(&implicit, &ShapedMomentum { sys: &sys, shaping: &sh }, 1, &q, &qd, &fd).unwrap();
        assert!(r.pass(), "{r}");
    }
}

#[test]
fn jacobi_endomorphism_structure() {
    let (sys, sh) = cartpole();
    let explicit = Solved(ControlledSode { sys: &sys, shaping: &sh });
    let t = sode_tensors(&explicit, &[0.2, 0.0], &[0.1, 0.0], DiffMode::Dual).unwrap();
    assert_eq!(t.jacobi[0][1], 0.0);
    assert_eq!(t.jacobi[1][1], 0.0);
    assert!(t.jacobi[0][0].abs() / t.jacobi_scale[0][0] > 1e-6);
    let fd = sode_tensors(&explicit, &[0.2, 0.0], &[0.1, 0.0], DiffMode::FiniteDifference).unwrap();
    assert!((fd.jacobi[0][0] - t.jacobi[0][0]).abs() < 1e-5 * t.jacobi[0][0].abs().max(1.0));
}

struct Damped;

impl ExplicitSode for Damped {
    fn dim(&self) -> usize {
        1
    }
    fn gamma<S: Real>(&self, q: &[S], qd: &[S]) -> Result<Vec<S>> {
        Ok(vec![S::zero() - q[0].clone() - qd[0].clone() * 0.5])
    }
}

#[test]
fn damping_fails_with_constant_multiplier() {
    let r = explicit_helmholtz_residuals(&Damped, &IdentityMultiplier(1), &[0.3], &[0.2], &Default::default()).unwrap();
    assert!(r.value("H2.gamma_equation").unwrap() > 0.1, "{r}");
}
