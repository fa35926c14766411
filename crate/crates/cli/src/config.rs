use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sweep_core::{Mode, Tolerances, DEFAULT_EPSILON_SCHEDULE};

use crate::CliError;

fn default_n() -> usize {
    100
}
fn default_mode() -> Mode {
    Mode::Penalty
}
fn default_substeps() -> usize {
    10
}
fn default_solver_tol() -> f64 {
    1e-8
}
fn default_max_outer() -> usize {
    50
}
fn default_schedule() -> Vec<f64> {
    DEFAULT_EPSILON_SCHEDULE.to_vec()
}

/// Run configuration read from a JSON file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Catalog problem name (required).
    pub problem: String,
    /// Number of grid intervals.
    #[serde(default = "default_n")]
    pub n: usize,
    /// `penalty` or `complementarity`.
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Penalty parameter for `simulate` and penalty-mode `solve`.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Implicit Euler substeps per interval for penalty simulation.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Mixed-constraint relaxation; derived from the reference control when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Penalty parameters for `converge`.
    #[serde(default)]
    pub gammas: Vec<f64>,
    /// Grid sizes for `converge`.
    #[serde(default)]
    pub grids: Vec<usize>,
    /// Complementarity relaxation levels, strictly decreasing.
    #[serde(default = "default_schedule")]
    pub epsilon_schedule: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Trajectory CSV for the regularity check of `check`.
    #[serde(default)]
    pub trajectory: Option<PathBuf>,
    /// Constant control; defaults to the catalog reference control (or zero)
    /// for simulation and to zero as the solver's initial guess.
    #[serde(default)]
    pub control: Option<Vec<f64>>,
    /// Seed the solver with the catalog reference control.
    #[serde(default)]
    pub reference_guess: bool,
    /// Derivative to corrupt in `check` (e.g. `psi.grad`), for testing the checker.
    #[serde(default)]
    pub inject_defect: Option<String>,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    pub fn out_dir(&self, cli: Option<&Path>) -> PathBuf {
        match (cli, &self.out_dir) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => p.clone(),
            (None, None) => {
                let mode = match self.mode {
                    Mode::Penalty => "penalty",
                    Mode::Complementarity => "complementarity",
                };
                PathBuf::from("runs").join(format!("{}-{mode}", self.problem))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_keys() {
        let c: RunConfig = serde_json::from_str(r#"{"problem": "disk-push"}"#).unwrap();
        assert_eq!(c.n, 100);
        assert_eq!(c.mode, Mode::Penalty);
        assert_eq!(c.epsilon_schedule, DEFAULT_EPSILON_SCHEDULE.to_vec());
        assert_eq!(c.tolerances, Tolerances::default());
        let err = serde_json::from_str::<RunConfig>(r#"{"problem": "disk-push", "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = serde_json::from_str::<RunConfig>(r#"{"n": 10}"#).unwrap_err();
        assert!(err.to_string().contains("problem"));
    }

    #[test]
    fn out_dir_precedence() {
        let mut c: RunConfig = serde_json::from_str(r#"{"problem": "interval-1d"}"#).unwrap();
        assert_eq!(c.out_dir(None), PathBuf::from("runs/interval-1d-penalty"));
        c.out_dir = Some("a".into());
        assert_eq!(c.out_dir(None), PathBuf::from("a"));
        assert_eq!(c.out_dir(Some(Path::new("b"))), PathBuf::from("b"));
    }
}
