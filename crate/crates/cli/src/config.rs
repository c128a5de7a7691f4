//! Flat `key = value` configuration files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use matchctl_core::control::GainSelection;
use matchctl_core::model::CartpoleParams;
use matchctl_core::sim::SimSettings;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Parses `key = value` lines. `#` starts a comment anywhere on a line;
/// blank lines are ignored; a repeated key is an error.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return err(format!("line {}: expected `key = value`", i + 1));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return err(format!("line {}: invalid key `{k}`", i + 1));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return err(format!("line {}: duplicate key `{k}`", i + 1));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    Cartpole,
    Incline,
    BuiltinTest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TauMode {
    Sm3,
    NewClosedForm,
    NewOde,
}

/// Which `x`-only term completes the incline `V_ε` in the reported energy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InclineG {
    Quadratic,
    ClosedLoop,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub system: SystemKind,
    pub params: CartpoleParams,
    pub psi: f64,
    pub gains: GainSelection,
    /// `c − c_min` when `gains.c = auto`.
    pub c_margin: Option<f64>,
    pub epsilon: f64,
    pub tau_mode: TauMode,
    pub tau_step: f64,
    pub sim: SimSettings,
    pub q0: Vec<f64>,
    pub qd0: Vec<f64>,
    pub drift_tol: f64,
    pub potential_range: (f64, f64),
    pub incline_g: InclineG,
    pub tol: f64,
    pub grid: usize,
    pub states: usize,
    pub seed: u64,
    pub x_max: f64,
    pub v_max: f64,
    pub out_dir: PathBuf,
    pub sweep_k: Vec<f64>,
    pub sweep_sigma: Vec<f64>,
    pub sweep_rho: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: SystemKind::Cartpole,
            params: CartpoleParams::default(),
            psi: 0.0,
            gains: GainSelection::default(),
            c_margin: None,
            epsilon: 1.0,
            tau_mode: TauMode::NewClosedForm,
            tau_step: 1e-3,
            sim: SimSettings::default(),
            q0: vec![std::f64::consts::FRAC_PI_2 - 0.2, 0.0],
            qd0: vec![0.1, -3.0],
            drift_tol: 1e-6,
            potential_range: (-1.45, 1.45),
            incline_g: InclineG::Quadratic,
            tol: 1e-8,
            grid: 41,
            states: 100,
            seed: 0,
            x_max: 1.3,
            v_max: 5.0,
            out_dir: PathBuf::from("matchctl-out"),
            sweep_k: vec![],
            sweep_sigma: vec![],
            sweep_rho: vec![],
        }
    }
}

struct Pairs(BTreeMap<String, String>);

impl Pairs {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).or_else(|_| err(format!("{key}: cannot parse `{v}`"))),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<(), ConfigError> {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>().or_else(|_| err(format!("{key}: cannot parse `{}`", s.trim()))))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut p = Pairs(parse_pairs(text)?);
        let mut c = RunConfig::default();
        let system = p.0.remove("system").unwrap_or_else(|| "cartpole".into());
        c.system = match system.as_str() {
            "cartpole" => SystemKind::Cartpole,
            "incline" => SystemKind::Incline,
            "builtin-test" => SystemKind::BuiltinTest,
            other => return err(format!("system: unknown selector `{other}`")),
        };
        if c.system == SystemKind::Incline {
            c.gains.rho = 2.0;
            c.gains.s0 = 0.5;
            c.c_margin = Some(1.0);
            c.psi = 0.1;
            c.q0 = vec![0.3, 0.0];
            c.qd0 = vec![0.1, -0.5];
            c.potential_range = (-1.3, 1.3);
        }
        if c.system == SystemKind::BuiltinTest {
            c.q0 = vec![0.2, 0.0, 0.0];
            c.qd0 = vec![0.0, 0.1, -0.1];
            c.x_max = 1.0;
            c.v_max = 2.0;
            c.tau_mode = TauMode::Sm3;
        }
        p.set("system.m", &mut c.params.m)?;
        p.set("system.M", &mut c.params.big_m)?;
        p.set("system.l", &mut c.params.l)?;
        p.set("system.grav", &mut c.params.grav)?;
        p.set("system.psi", &mut c.psi)?;
        p.set("gains.k", &mut c.gains.k)?;
        p.set("gains.sigma", &mut c.gains.sigma)?;
        p.set("gains.rho", &mut c.gains.rho)?;
        p.set("gains.s0", &mut c.gains.s0)?;
        p.set("gains.epsilon", &mut c.epsilon)?;
        if let Some(v) = p.0.remove("gains.c") {
            if v == "auto" {
                c.c_margin = Some(c.c_margin.unwrap_or(1.0));
            } else {
                c.gains.c = v.parse().or_else(|_| err(format!("gains.c: cannot parse `{v}`")))?;
                c.c_margin = None;
            }
        }
        if let Some(m) = p.take::<f64>("gains.c_margin")? {
            c.c_margin = Some(m);
        }
        if let Some(v) = p.0.remove("tau.mode") {
            c.tau_mode = match v.as_str() {
                "sm3" => TauMode::Sm3,
                "new-closed-form" => TauMode::NewClosedForm,
                "new-ode" => TauMode::NewOde,
                other => return err(format!("tau.mode: unknown mode `{other}`")),
            };
        }
        p.set("tau.step", &mut c.tau_step)?;
        p.set("sim.dt", &mut c.sim.dt)?;
        p.set("sim.t_end", &mut c.sim.t_end)?;
        p.set("sim.record_every", &mut c.sim.record_every)?;
        if let Some(v) = p.0.remove("sim.guard") {
            c.sim.guard = if v == "none" {
                None
            } else {
                Some(v.parse().or_else(|_| err(format!("sim.guard: cannot parse `{v}`")))?)
            };
        }
        p.set("sim.drift_tol", &mut c.drift_tol)?;
        if let Some(v) = p.list("init.q")? {
            c.q0 = v;
        }
        if let Some(v) = p.list("init.qdot")? {
            c.qd0 = v;
        }
        if let Some(v) = p.list("energy.range")? {
            if v.len() != 2 || v[0] >= 0.0 || v[1] <= 0.0 {
                return err("energy.range: expected `lo, hi` with lo < 0 < hi");
            }
            c.potential_range = (v[0], v[1]);
        }
        if let Some(v) = p.0.remove("energy.incline_g") {
            c.incline_g = match v.as_str() {
                "quadratic" => InclineG::Quadratic,
                "closed-loop" => InclineG::ClosedLoop,
                other => return err(format!("energy.incline_g: unknown choice `{other}`")),
            };
        }
        p.set("check.tol", &mut c.tol)?;
        p.set("check.grid", &mut c.grid)?;
        p.set("check.states", &mut c.states)?;
        p.set("check.seed", &mut c.seed)?;
        p.set("check.x_max", &mut c.x_max)?;
        p.set("check.v_max", &mut c.v_max)?;
        if let Some(v) = p.0.remove("output.dir") {
            c.out_dir = PathBuf::from(v);
        }
        for (key, slot) in [("sweep.k", &mut c.sweep_k), ("sweep.sigma", &mut c.sweep_sigma), ("sweep.rho", &mut c.sweep_rho)] {
            if let Some(v) = p.list(key)? {
                *slot = v;
            }
        }
        if let Some(k) = p.0.keys().next() {
            return err(format!("unknown key `{k}`"));
        }
        Ok(c)
    }

    /// Checks that apply whatever the subcommand.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tol > 0.0) {
            return err("tolerance must be positive");
        }
        if self.grid < 2 {
            return err("grid needs at least 2 points");
        }
        if !(self.sim.dt > 0.0 && self.sim.t_end > 0.0) {
            return err("sim.dt and sim.t_end must be positive");
        }
        if self.tau_mode == TauMode::Sm3 && self.gains.sigma == 0.0 {
            return err("tau.mode = sm3 needs gains.sigma ≠ 0");
        }
        if self.system != SystemKind::BuiltinTest && self.tau_mode != TauMode::Sm3 && self.gains.k == 0.0 {
            return err("the new τ needs gains.k ≠ 0");
        }
        if self.system == SystemKind::Incline && self.gains.rho <= 0.0 {
            return err("gains.rho must be positive");
        }
        if self.system == SystemKind::BuiltinTest && self.tau_mode != TauMode::Sm3 {
            return err("builtin-test has two group coordinates; only tau.mode = sm3 applies");
        }
        let n = if self.system == SystemKind::BuiltinTest { 3 } else { 2 };
        if self.q0.len() != n || self.qd0.len() != n {
            return err(format!("init.q and init.qdot need {n} values"));
        }
        self.params.validate().map_err(|e| ConfigError(e.to_string()))
    }
}
