//! Fixed-step and adaptive RK4 integration of explicit closed loops with control and
//! energy observers, drift measurement and CSV output.

use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lagrangian::ExplicitSode;
use crate::model::State;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimSettings {
    pub dt: f64,
    pub t_end: f64,
    /// Halt when any shape coordinate reaches this magnitude.
    pub guard: Option<f64>,
    /// Record every `record_every`-th step (the last step is always kept).
    pub record_every: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings { dt: 1e-4, t_end: 10.0, guard: Some(std::f64::consts::FRAC_PI_2), record_every: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    DomainExit,
    NonFinite,
    SolverFailure,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::DomainExit => "domain_exit",
            EventKind::NonFinite => "non_finite",
            EventKind::SolverFailure => "solver_failure",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Trajectory {
    pub n_shape: usize,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub controls: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&State> {
        self.states.last()
    }

    /// Largest `|x^α|` over the recorded samples.
    pub fn max_shape_excursion(&self) -> f64 {
        self.states
            .iter()
            .flat_map(|s| s.q[..self.n_shape].iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Per-sample observations: control `u` and energy `E` at `(q, q̇, q̈)`.
pub type Observer<'a> = dyn Fn(&[f64], &[f64], &[f64]) -> Result<(Vec<f64>, f64)> + 'a;

fn rk4_step<E: ExplicitSode>(field: &E, q: &[f64], qd: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = q.len();
    let shift = |base: &[f64], d: &[f64], s: f64| -> Vec<f64> { base.iter().zip(d).map(|(a, b)| a + s * b).collect() };
    let k1v = qd.to_vec();
    let k1a = field.gamma(q, qd)?;
    let (q2, v2) = (shift(q, &k1v, 0.5 * dt), shift(qd, &k1a, 0.5 * dt));
    let k2a = field.gamma(&q2, &v2)?;
    let (q3, v3) = (shift(q, &v2, 0.5 * dt), shift(qd, &k2a, 0.5 * dt));
    let k3a = field.gamma(&q3, &v3)?;
    let (q4, v4) = (shift(q, &v3, dt), shift(qd, &k3a, dt));
    let k4a = field.gamma(&q4, &v4)?;
    let mut qn = vec![0.0; n];
    let mut vn = vec![0.0; n];
    for i in 0..n {
        qn[i] = q[i] + dt / 6.0 * (k1v[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
        vn[i] = qd[i] + dt / 6.0 * (k1a[i] + 2.0 * k2a[i] + 2.0 * k3a[i] + k4a[i]);
    }
    Ok((qn, vn))
}

/// Integrates `q̈ = Γ(q, q̇)` from `(q0, qd0)` at `t = 0` with classical RK4.
/// Integration stops early, with an event, on a guard crossing, a
/// non-finite state or a failed field evaluation.
pub fn integrate<E: ExplicitSode>(
    field: &E,
    n_shape: usize,
    q0: &[f64],
    qd0: &[f64],
    settings: &SimSettings,
    observer: Option<&Observer<'_>>,
) -> Result<Trajectory> {
    let n = field.dim();
    if q0.len() != n || qd0.len() != n {
        return Err(Error::DimensionMismatch(format!("initial state must have {n} coordinates")));
    }
    if !(settings.dt > 0.0 && settings.t_end > 0.0) {
        return Err(Error::InvalidParameter("dt and t_end must be positive".into()));
    }
    let every = settings.record_every.max(1);
    let steps = (settings.t_end / settings.dt).round() as usize;
    let mut traj = Trajectory { n_shape, ..Default::default() };
    let record = |traj: &mut Trajectory, t: f64, q: &[f64], qd: &[f64]| -> Result<()> {
        if let Some(obs) = observer {
            let qdd = field.gamma(q, qd)?;
            let (u, e) = obs(q, qd, &qdd)?;
            traj.controls.push(u);
            traj.energies.push(e);
        }
        traj.times.push(t);
        traj.states.push(State { q: q.to_vec(), qdot: qd.to_vec() });
        Ok(())
    };
    let outside = |q: &[f64]| settings.guard.is_some_and(|g| q[..n_shape].iter().any(|v| v.abs() >= g));
    let (mut q, mut qd) = (q0.to_vec(), qd0.to_vec());
    if outside(&q) {
        traj.events.push(Event { t: 0.0, kind: EventKind::DomainExit });
        return Ok(traj);
    }
    if record(&mut traj, 0.0, &q, &qd).is_err() {
        traj.events.push(Event { t: 0.0, kind: EventKind::SolverFailure });
        return Ok(traj);
    }
    for step in 1..=steps {
        let t = step as f64 * settings.dt;
        let (qn, vn) = match rk4_step(field, &q, &qd, settings.dt) {
            Ok(s) => s,
            Err(_) => {
                traj.events.push(Event { t, kind: EventKind::SolverFailure });
                break;
            }
        };
        if qn.iter().chain(&vn).any(|v| !v.is_finite()) {
            traj.events.push(Event { t, kind: EventKind::NonFinite });
            break;
        }
        q = qn;
        qd = vn;
        let exit = outside(&q);
        if step % every == 0 || step == steps || exit {
            if record(&mut traj, t, &q, &qd).is_err() {
                traj.events.push(Event { t, kind: EventKind::SolverFailure });
                break;
            }
        }
        if exit {
            traj.events.push(Event { t, kind: EventKind::DomainExit });
            break;
        }
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdaptiveSettings {
    /// Local error tolerance per step, mixed absolute/relative.
    pub tol: f64,
    pub dt_initial: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub t_end: f64,
    pub guard: Option<f64>,
}

impl Default for AdaptiveSettings {
    fn default() -> Self {
        AdaptiveSettings {
            tol: 1e-10,
            dt_initial: 1e-3,
            dt_min: 1e-9,
            dt_max: 0.05,
            t_end: 10.0,
            guard: Some(std::f64::consts::FRAC_PI_2),
        }
    }
}

/// Step-doubling RK4 with Richardson extrapolation; one sample per accepted
/// step. A step below `dt_min` ends the run with a solver-failure event.
pub fn integrate_adaptive<E: ExplicitSode>(
    field: &E,
    n_shape: usize,
    q0: &[f64],
    qd0: &[f64],
    settings: &AdaptiveSettings,
    observer: Option<&Observer<'_>>,
) -> Result<Trajectory> {
    let n = field.dim();
    if q0.len() != n || qd0.len() != n {
        return Err(Error::DimensionMismatch(format!("initial state must have {n} coordinates")));
    }
    let s = settings;
    if !(s.tol > 0.0 && s.t_end > 0.0 && s.dt_min > 0.0 && s.dt_min <= s.dt_initial && s.dt_initial <= s.dt_max) {
        return Err(Error::InvalidParameter("adaptive settings need tol, t_end > 0 and dt_min ≤ dt_initial ≤ dt_max".into()));
    }
    let mut traj = Trajectory { n_shape, ..Default::default() };
    let record = |traj: &mut Trajectory, t: f64, q: &[f64], qd: &[f64]| -> Result<()> {
        if let Some(obs) = observer {
            let (u, e) = obs(q, qd, &field.gamma(q, qd)?)?;
            traj.controls.push(u);
            traj.energies.push(e);
        }
        traj.times.push(t);
        traj.states.push(State { q: q.to_vec(), qdot: qd.to_vec() });
        Ok(())
    };
    let outside = |q: &[f64]| s.guard.is_some_and(|g| q[..n_shape].iter().any(|v| v.abs() >= g));
    let (mut q, mut qd) = (q0.to_vec(), qd0.to_vec());
    if outside(&q) {
        traj.events.push(Event { t: 0.0, kind: EventKind::DomainExit });
        return Ok(traj);
    }
    if record(&mut traj, 0.0, &q, &qd).is_err() {
        traj.events.push(Event { t: 0.0, kind: EventKind::SolverFailure });
        return Ok(traj);
    }
    let (mut t, mut dt) = (0.0, s.dt_initial);
    while t < s.t_end {
        let h = dt.min(s.t_end - t);
        let attempt = (|| -> Result<_> {
            let (q1, v1) = rk4_step(field, &q, &qd, h)?;
            let (qm, vm) = rk4_step(field, &q, &qd, 0.5 * h)?;
            let (q2, v2) = rk4_step(field, &qm, &vm, 0.5 * h)?;
            Ok((q1, v1, q2, v2))
        })();
        let Ok((q1, v1, q2, v2)) = attempt else {
            traj.events.push(Event { t, kind: EventKind::SolverFailure });
            break;
        };
        let mut err = 0.0f64;
        for (a, b) in q1.iter().chain(&v1).zip(q2.iter().chain(&v2)) {
            err = err.max((a - b).abs() / 15.0 / (1.0 + b.abs()));
        }
        if !err.is_finite() {
            traj.events.push(Event { t: t + h, kind: EventKind::NonFinite });
            break;
        }
        if err > s.tol {
            dt = h * (0.9 * (s.tol / err).powf(0.2)).max(0.2);
            if dt < s.dt_min {
                traj.events.push(Event { t, kind: EventKind::SolverFailure });
                break;
            }
            continue;
        }
        t += h;
        for i in 0..n {
            q[i] = q2[i] + (q2[i] - q1[i]) / 15.0;
            qd[i] = v2[i] + (v2[i] - v1[i]) / 15.0;
        }
        let exit = outside(&q);
        if record(&mut traj, t, &q, &qd).is_err() {
            traj.events.push(Event { t, kind: EventKind::SolverFailure });
            break;
        }
        if exit {
            traj.events.push(Event { t, kind: EventKind::DomainExit });
            break;
        }
        let grow = if err > 0.0 { 0.9 * (s.tol / err).powf(0.2) } else { 5.0 };
        dt = (h * grow.clamp(0.2, 5.0)).clamp(s.dt_min, s.dt_max);
    }
    Ok(traj)
}

/// `max_t |E(t) − E(0)| / max(1, |E(0)|)`.
pub fn energy_drift(traj: &Trajectory) -> Result<f64> {
    let e0 = *traj
        .energies
        .first()
        .ok_or_else(|| Error::InvalidParameter("trajectory has no recorded energies".into()))?;
    let scale = e0.abs().max(1.0);
    Ok(traj.energies.iter().fold(0.0, |m, e| m.max((e - e0).abs() / scale)))
}

/// CSV header for `n_shape` shape and `n_group` group coordinates and
/// `n_controls` control channels.
pub fn csv_header(n_shape: usize, n_group: usize, n_controls: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n_shape).map(|i| format!("x{i}")));
    cols.extend((1..=n_group).map(|i| format!("theta{i}")));
    cols.extend((1..=n_shape).map(|i| format!("xdot{i}")));
    cols.extend((1..=n_group).map(|i| format!("thetadot{i}")));
    cols.extend((1..=n_controls).map(|i| format!("u{i}")));
    cols.push("E".into());
    cols.join(",")
}

/// Writes the trajectory as CSV, values with 17 significant digits, then one
/// `# event,<t>,<kind>` line per event. Returns the number of data rows.
/// Missing observations are written as `nan`.
pub fn write_csv<W: Write>(traj: &Trajectory, n_group: usize, out: &mut W) -> Result<usize> {
    let n_controls = traj.controls.first().map_or(n_group, Vec::len);
    writeln!(out, "{}", csv_header(traj.n_shape, n_group, n_controls))?;
    for (i, t) in traj.times.iter().enumerate() {
        let s = &traj.states[i];
        let mut row = vec![*t];
        row.extend(&s.q);
        row.extend(&s.qdot);
        match traj.controls.get(i) {
            Some(u) => row.extend(u),
            None => row.extend(std::iter::repeat(f64::NAN).take(n_controls)),
        }
        row.push(traj.energies.get(i).copied().unwrap_or(f64::NAN));
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    for e in &traj.events {
        writeln!(out, "# event,{:.16e},{}", e.t, e.kind)?;
    }
    Ok(traj.times.len())
}
