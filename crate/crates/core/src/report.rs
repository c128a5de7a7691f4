use std::fmt;

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Passes when the value does not exceed the tolerance.
    AtMost,
    /// Passes when the value is strictly above the threshold.
    Above,
    /// Reported only.
    Info,
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct Entry {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub check: Check,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Named residuals with tolerances; `pass` is the conjunction of every
/// non-informational entry.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ResidualReport {
    pub entries: Vec<Entry>,
}

pub type MatchingReport = ResidualReport;

impl ResidualReport {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, value: f64, tolerance: f64, check: Check) {
        let pass = match check {
            Check::AtMost => value <= tolerance,
            Check::Above => value > tolerance,
            Check::Info | Check::Skipped => true,
        };
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            tolerance,
            check,
            pass,
            note: None,
        });
    }

    pub fn residual(&mut self, name: &str, value: f64, tolerance: f64) {
        self.push(name, value, tolerance, Check::AtMost);
    }

    pub fn lower_bound(&mut self, name: &str, value: f64, floor: f64) {
        self.push(name, value, floor, Check::Above);
    }

    pub fn info(&mut self, name: &str, value: f64) {
        self.push(name, value, f64::NAN, Check::Info);
    }

    pub fn skipped(&mut self, name: &str, reason: &str) {
        self.push(name, f64::NAN, f64::NAN, Check::Skipped);
        if let Some(e) = self.entries.last_mut() {
            e.note = Some(reason.to_string());
        }
    }

    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).map(|e| e.value)
    }

    /// Worst value among entries whose names start with `prefix`.
    pub fn worst(&self, prefix: &str) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix) && e.check == Check::AtMost)
            .map(|e| e.value)
            .fold(0.0, f64::max)
    }

    /// Combines reports taken at different states: residuals by max, lower
    /// bounds by min.
    pub fn merge(&mut self, other: &ResidualReport) {
        for e in &other.entries {
            match self.entries.iter_mut().find(|x| x.name == e.name) {
                None => self.entries.push(e.clone()),
                Some(x) => {
                    let worse = match e.check {
                        Check::AtMost => !(e.value <= x.value),
                        Check::Above => e.value < x.value || e.value.is_nan(),
                        Check::Info => e.value.abs() > x.value.abs(),
                        Check::Skipped => false,
                    };
                    if worse || x.check == Check::Skipped {
                        x.value = e.value;
                        x.check = e.check;
                        x.tolerance = e.tolerance;
                        x.note = e.note.clone();
                    }
                    x.pass = x.pass && e.pass;
                }
            }
        }
    }
}

impl fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            let status = match (e.check, e.pass) {
                (Check::Skipped, _) => "skip",
                (Check::Info, _) => "info",
                (_, true) => "ok",
                (_, false) => "FAIL",
            };
            match e.check {
                Check::Skipped => writeln!(
                    f,
                    "{:<24} {:>4}  {}",
                    e.name,
                    status,
                    e.note.as_deref().unwrap_or("")
                )?,
                Check::Info => writeln!(f, "{:<24} {:>4}  {:.6e}", e.name, status, e.value)?,
                Check::AtMost => {
                    writeln!(f, "{:<24} {:>4}  {:.3e} <= {:.1e}", e.name, status, e.value, e.tolerance)?
                }
                Check::Above => {
                    writeln!(f, "{:<24} {:>4}  {:.6e} > {:.1e}", e.name, status, e.value, e.tolerance)?
                }
            }
        }
        write!(f, "overall: {}", if self.pass() { "pass" } else { "FAIL" })
    }
}

/// `|sum of terms| / max(1, largest |term|)`.
pub fn normalized(terms: &[f64]) -> f64 {
    let sum: f64 = terms.iter().sum();
    let scale = terms.iter().map(|t| t.abs()).fold(1.0, f64::max);
    sum.abs() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_keeps_worst() {
        let mut a = ResidualReport::new();
        a.residual("r", 1e-12, 1e-8);
        a.lower_bound("eig", 0.5, 0.0);
        let mut b = ResidualReport::new();
        b.residual("r", 1e-6, 1e-8);
        b.lower_bound("eig", 0.1, 0.0);
        a.merge(&b);
        assert_eq!(a.value("r"), Some(1e-6));
        assert_eq!(a.value("eig"), Some(0.1));
        assert!(!a.pass());
    }

    #[test]
    fn nan_fails_and_skips_pass() {
        let mut r = ResidualReport::new();
        r.skipped("SM5", "symmetry not broken");
        assert!(r.pass());
        r.residual("x", f64::NAN, 1.0);
        assert!(!r.pass());
    }

    #[test]
    fn normalization_uses_largest_term() {
        assert_eq!(normalized(&[0.5, -0.25]), 0.25);
        assert!((normalized(&[1e6, -1e6 + 1.0]) - 1e-6).abs() < 1e-15);
    }
}
