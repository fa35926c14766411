//! Discrete multipliers extracted from NLP solutions and residual reports
//! for the first-order necessary conditions.

mod nonregular;
mod regular;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use nonregular::{extract_nonregular, verify_nonregular, NonRegularCertificate, CLOSED_IMAGE_BANNER};
pub use regular::{extract_regular, verify_regular, RegularCertificate};

/// Tolerance profile applied after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub adjoint: f64,
    pub boundary: f64,
    pub condition5: f64,
    /// Stationarity, costate and slackness residuals of the non-regular route.
    pub stationarity: f64,
    /// Lower bound for the regular nontriviality value.
    pub nontriviality: f64,
    /// Threshold above which an atom or density counts as present.
    pub support: f64,
    /// Band `|psi| <= active_tol` treated as contact.
    pub active_tol: f64,
    /// Maximum-condition gap tolerance is `gap_factor * (1 + |p|_inf) * M_est`.
    pub gap_factor: f64,
    pub transversality: f64,
    pub z1_identity: f64,
    /// Sampled `M` bound; estimated from the problem when absent.
    pub m_est: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            adjoint: 1e-4,
            boundary: 1e-6,
            condition5: 1e-4,
            stationarity: 1e-3,
            nontriviality: 0.1,
            support: 1e-4,
            active_tol: 1e-6,
            gap_factor: 1e-4,
            transversality: 1e-8,
            z1_identity: 1e-6,
            m_est: None,
        }
    }
}

/// Whether a condition passes by staying below or by exceeding its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    AtMost,
    Exceeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition_id: String,
    pub residual: f64,
    pub tolerance: f64,
    pub sense: Sense,
    pub pass: bool,
    pub worst_node: Option<usize>,
}

impl ConditionResult {
    pub fn at_most(id: &str, residual: f64, tolerance: f64, worst_node: Option<usize>) -> Self {
        Self {
            condition_id: id.to_string(),
            residual,
            tolerance,
            sense: Sense::AtMost,
            pass: residual <= tolerance,
            worst_node,
        }
    }

    pub fn exceeds(id: &str, value: f64, threshold: f64) -> Self {
        Self {
            condition_id: id.to_string(),
            residual: value,
            tolerance: threshold,
            sense: Sense::Exceeds,
            pass: value > threshold,
            worst_node: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub principle: String,
    pub banner: Option<String>,
    pub conditions: Vec<ConditionResult>,
    /// Extra scalars that are reported but not judged.
    pub diagnostics: Vec<(String, f64)>,
}

impl ResidualReport {
    fn new(principle: &str) -> Self {
        Self {
            principle: principle.to_string(),
            banner: None,
            conditions: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    fn push(&mut self, c: ConditionResult) {
        self.conditions.push(c);
    }

    fn diag(&mut self, name: &str, v: f64) {
        self.diagnostics.push((name.to_string(), v));
    }

    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.conditions
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.condition_id.as_str())
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.condition_id == id)
    }

    pub fn diagnostic(&self, name: &str) -> Option<f64> {
        self.diagnostics.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    /// Condition-by-condition plain-text table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.principle);
        if let Some(b) = &self.banner {
            let _ = writeln!(s, "note: {b}");
        }
        let _ = writeln!(s, "{:<24} {:>12} {:>3} {:>12}  {:<4} worst", "condition", "value", "", "tolerance", "");
        for c in &self.conditions {
            let op = match c.sense {
                Sense::AtMost => "<=",
                Sense::Exceeds => ">",
            };
            let worst = c.worst_node.map_or("-".to_string(), |j| j.to_string());
            let _ = writeln!(
                s,
                "{:<24} {:>12.3e} {:>3} {:>12.3e}  {:<4} {}",
                c.condition_id,
                c.residual,
                op,
                c.tolerance,
                if c.pass { "ok" } else { "FAIL" },
                worst
            );
        }
        s
    }
}

/// Largest value and where it occurs; `(0, None)` for an empty sequence.
pub(crate) fn max_with_index(values: impl IntoIterator<Item = f64>) -> (f64, Option<usize>) {
    let mut best = (0.0, None);
    for (j, v) in values.into_iter().enumerate() {
        if best.1.is_none() || v > best.0 || v.is_nan() {
            best = (v, Some(j));
        }
    }
    best
}

/// Values above `10x` the median of the neighbours `j-2..=j+2` (and above
/// `floor`) are treated as atoms rather than densities.
pub(crate) fn is_spike(values: &[f64], j: usize, floor: f64) -> bool {
    let v = values[j];
    if !(v > floor) {
        return false;
    }
    let lo = j.saturating_sub(2);
    let hi = (j + 2).min(values.len() - 1);
    let mut nb: Vec<f64> = (lo..=hi).filter(|&k| k != j).map(|k| values[k].abs()).collect();
    if nb.is_empty() {
        return true;
    }
    nb.sort_by(f64::total_cmp);
    let mid = nb.len() / 2;
    let median = if nb.len() % 2 == 1 {
        nb[mid]
    } else {
        0.5 * (nb[mid - 1] + nb[mid])
    };
    v.abs() > 10.0 * median
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spike_detection() {
        let v = [0.0, 0.0, 1.0, 0.0, 0.0];
        assert!(is_spike(&v, 2, 1e-8));
        assert!(!is_spike(&v, 1, 1e-8));
        let flat = [1.0, 1.0, 1.2, 1.0, 1.0];
        assert!(!is_spike(&flat, 2, 1e-8));
        let end = [0.0, 0.0, 0.0, 0.5];
        assert!(is_spike(&end, 3, 1e-8));
    }

    #[test]
    fn report_table_and_flags() {
        let mut r = ResidualReport::new("test");
        r.push(ConditionResult::at_most("a", 1e-9, 1e-6, Some(3)));
        r.push(ConditionResult::exceeds("b", 0.05, 0.1));
        assert!(!r.passed());
        assert_eq!(r.failing(), vec!["b"]);
        assert!(r.table().contains("FAIL"));
        let s = serde_json::to_string(&r).unwrap();
        let back: ResidualReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn max_index() {
        assert_eq!(max_with_index([1.0, 3.0, 2.0]), (3.0, Some(1)));
        assert_eq!(max_with_index(std::iter::empty()), (0.0, None));
    }
}
