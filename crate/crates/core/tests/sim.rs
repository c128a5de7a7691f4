use matchctl_core::control::{cartpole_energy, GainSelection};
use matchctl_core::error::Result;
use matchctl_core::lagrangian::{ControlledSode, ExplicitSode, Solved};
use matchctl_core::model::{cartpole_system, CartpoleParams, State};
use matchctl_core::scalar::Real;
use matchctl_core::sim::*;

struct Oscillator;

impl ExplicitSode for Oscillator {
    fn dim(&self) -> usize {
        1
    }
    fn gamma<S: Real>(&self, q: &[S], _qd: &[S]) -> Result<Vec<S>> {
        Ok(vec![S::zero() - q[0].clone()])
    }
}

fn oscillator_error(dt: f64) -> f64 {
    let t_end = 2.0;
    let s = SimSettings { dt, t_end, guard: None, record_every: 1 };
    let tr = integrate(&Oscillator, 1, &[1.0], &[0.0], &s, None).unwrap();
    let last = tr.last().unwrap();
    ((last.q[0] - t_end.cos()).powi(2) + (last.qdot[0] + t_end.sin()).powi(2)).sqrt()
}

#[test]
fn rk4_is_fourth_order() {
    let e: Vec<f64> = [1e-2, 5e-3, 2.5e-3].iter().map(|&dt| oscillator_error(dt)).collect();
    for w in e.windows(2) {
        let ratio = w[0] / w[1];
        assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn oscillator_period_at_millisecond_step() {
    let s = SimSettings { dt: 1e-3, t_end: 2.0 * std::f64::consts::PI, guard: None, record_every: 100 };
    let tr = integrate(&Oscillator, 1, &[1.0], &[0.0], &s, None).unwrap();
    let last = tr.last().unwrap();
    // 2π/1e-3 is not an integer; compare at the reached time
    let t = *tr.times.last().unwrap();
    assert!((last.q[0] - t.cos()).abs() < 1e-9 && (last.qdot[0] + t.sin()).abs() < 1e-9);
    assert!((t - 2.0 * std::f64::consts::PI).abs() < 1e-3);
}

fn cartpole_run(dt: f64, t_end: f64) -> Trajectory {
    let p = CartpoleParams::default();
    let sys = cartpole_system(&p).unwrap();
    let en = cartpole_energy(&sys, &GainSelection::default(), (-1.45, 1.45)).unwrap();
    let field = Solved(ControlledSode { sys: &sys, shaping: &en.shaping });
    let obs = |q: &[f64], qd: &[f64], _: &[f64]| Ok((vec![], en.value(&sys, q, qd)?));
    let s = SimSettings { dt, t_end, ..Default::default() };
    integrate(&field, 1, &[std::f64::consts::FRAC_PI_2 - 0.2, 0.0], &[0.1, -3.0], &s, Some(&obs)).unwrap()
}

#[test]
fn halving_the_step_shrinks_drift_sixteenfold() {
    let coarse = energy_drift(&cartpole_run(4e-3, 1.0)).unwrap();
    let fine = energy_drift(&cartpole_run(2e-3, 1.0)).unwrap();
    let ratio = coarse / fine;
    assert!((8.0..=32.0).contains(&ratio), "{coarse} / {fine} = {ratio}");
}

#[test]
fn identical_inputs_are_bit_identical() {
    let a = cartpole_run(1e-3, 0.5);
    let b = cartpole_run(1e-3, 0.5);
    assert_eq!(a.states, b.states);
    assert_eq!(a.energies.iter().map(|e| e.to_bits()).collect::<Vec<_>>(), b.energies.iter().map(|e| e.to_bits()).collect::<Vec<_>>());
}

#[test]
fn csv_round_trip() {
    let tr = Trajectory {
        n_shape: 1,
        times: vec![0.0, 0.1, 0.2],
        states: vec![
            State { q: vec![0.1, -1.0 / 3.0], qdot: vec![1e-300, 2.0] },
            State { q: vec![std::f64::consts::PI, 0.0], qdot: vec![-0.0, 7.25e12] },
            State { q: vec![-2.5, 1.1], qdot: vec![0.3, 0.7] },
        ],
        controls: vec![vec![1.0], vec![0.1 + 0.2], vec![-4.0]],
        energies: vec![1.5, 1.5000000000000002, 1.4999999999999998],
        events: vec![Event { t: 0.2, kind: EventKind::DomainExit }],
    };
    let mut buf = Vec::new();
    assert_eq!(write_csv(&tr, 1, &mut buf).unwrap(), 3);
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,x1,theta1,xdot1,thetadot1,u1,E");
    for (i, line) in lines.by_ref().take(3).enumerate() {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let s = &tr.states[i];
        let expect = [tr.times[i], s.q[0], s.q[1], s.qdot[0], s.qdot[1], tr.controls[i][0], tr.energies[i]];
        for (a, b) in v.iter().zip(expect) {
            assert_eq!(a.to_bits(), b.to_bits(), "row {i}");
        }
    }
    assert_eq!(lines.next().unwrap(), "# event,2.0000000000000001e-1,domain_exit");
}

#[test]
fn non_finite_state_halts_with_event() {
    struct Blowup;
    impl ExplicitSode for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn gamma<S: Real>(&self, _q: &[S], qd: &[S]) -> Result<Vec<S>> {
            Ok(vec![qd[0].clone() * qd[0].clone() * qd[0].clone()])
        }
    }
    let s = SimSettings { dt: 0.1, t_end: 100.0, guard: None, record_every: 1 };
    let tr = integrate(&Blowup, 1, &[0.0], &[10.0], &s, None).unwrap();
    assert_eq!(tr.events.last().unwrap().kind, EventKind::NonFinite);
    assert!(tr.states.iter().all(|s| s.qdot[0].is_finite()));
}
