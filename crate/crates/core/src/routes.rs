//! End-to-end solves of the control problem through either transcription.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::nlp::{KktResiduals, NlpProblem};
use crate::sim::{simulate_catchup_from, ControlSignal, Grid, StateTrajectory};
use crate::solver::{solve_with, SolveResult, SolveStatus, SolverOptions};
use crate::transcribe::{extract_trajectory, initial_guess, resolve_rho, transcribe, Mode, TranscriptionConfig};

pub const DEFAULT_EPSILON_SCHEDULE: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// Outcome of one relaxation level of the complementarity schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub epsilon: f64,
    pub status: SolveStatus,
    pub objective: f64,
    pub kkt: KktResiduals,
    pub iterations: usize,
    /// `max_j v_j * (-psi(x_j))`.
    pub max_complementarity: f64,
}

#[derive(Debug, Clone)]
pub struct RouteSolution {
    pub config: TranscriptionConfig,
    pub nlp: NlpProblem,
    pub result: SolveResult,
    pub trajectory: StateTrajectory,
    /// Objective of the transcribed program at its solution.
    pub nlp_objective: f64,
    /// Objective of the original problem along the catch-up trajectory
    /// driven by the computed controls.
    pub route_objective: f64,
    pub resimulated: StateTrajectory,
    pub stages: Vec<StageSummary>,
}

impl RouteSolution {
    pub fn converged(&self) -> bool {
        self.result.converged()
    }
}

/// `max_j v_j * (-psi(x_j))`, zero without slacks.
pub fn max_complementarity(problem: &ProblemSpec, traj: &StateTrajectory) -> f64 {
    traj.slacks.as_ref().map_or(0.0, |v| {
        v.iter()
            .enumerate()
            .map(|(j, s)| (s * -problem.psi.eval(&traj.states[j])).abs())
            .fold(0.0, f64::max)
    })
}

fn resimulate(problem: &ProblemSpec, traj: &StateTrajectory) -> Result<StateTrajectory> {
    let x0 = if problem.c0_is_singleton() {
        problem.initial_state()
    } else {
        traj.states[0].clone()
    };
    simulate_catchup_from(problem, &traj.control_signal(), &x0)
}

fn finish(
    problem: &ProblemSpec,
    config: TranscriptionConfig,
    nlp: NlpProblem,
    result: SolveResult,
    stages: Vec<StageSummary>,
) -> Result<RouteSolution> {
    let trajectory = extract_trajectory(&nlp, &result.z_star)?;
    let resimulated = resimulate(problem, &trajectory)?;
    Ok(RouteSolution {
        config,
        nlp_objective: result.objective,
        route_objective: resimulated.objective(problem),
        resimulated,
        nlp,
        result,
        trajectory,
        stages,
    })
}

fn guess_control(problem: &ProblemSpec, intervals: usize, guess: Option<&ControlSignal>) -> Result<ControlSignal> {
    let grid = Grid::new(intervals)?;
    Ok(match guess {
        Some(c) => c.resample(grid),
        None => ControlSignal::constant(grid, &vec![0.0; problem.control_dim()]),
    })
}

/// Penalty route: one solve of the backward-Euler penalty program.
pub fn solve_penalty_route(
    problem: &ProblemSpec,
    config: &TranscriptionConfig,
    guess: Option<&ControlSignal>,
    opts: &SolverOptions,
) -> Result<RouteSolution> {
    if config.mode != Mode::Penalty {
        return Err(Error::InvalidArgument("penalty route needs penalty mode".into()));
    }
    let nlp = transcribe(problem, config)?;
    let ctrl = guess_control(problem, config.intervals, guess)?;
    let z0 = initial_guess(problem, config, &ctrl, &nlp)?;
    let result = solve_with(&nlp, &z0, opts, None)?;
    finish(problem, *config, nlp, result, Vec::new())
}

/// Complementarity route: relaxation levels solved in order, each stage
/// warm-started from the previous solution and multipliers.
pub fn solve_complementarity_route(
    problem: &ProblemSpec,
    config: &TranscriptionConfig,
    schedule: &[f64],
    guess: Option<&ControlSignal>,
    opts: &SolverOptions,
) -> Result<RouteSolution> {
    if config.mode != Mode::Complementarity {
        return Err(Error::InvalidArgument("complementarity route needs complementarity mode".into()));
    }
    if schedule.is_empty() || schedule.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::InvalidArgument("epsilon schedule must be non-empty and non-negative".into()));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("epsilon schedule must be strictly decreasing".into()));
    }
    // resolve rho once so every stage shares it
    let mut cfg = *config;
    cfg.rho = Some(resolve_rho(problem, config)?);
    cfg.epsilon = schedule[0];
    let first = transcribe(problem, &cfg)?;
    let ctrl = guess_control(problem, cfg.intervals, guess)?;
    let mut z = initial_guess(problem, &cfg, &ctrl, &first)?;
    let mut warm = None;
    let mut stages = Vec::with_capacity(schedule.len());
    let mut last: Option<(NlpProblem, SolveResult)> = None;
    for (k, &eps) in schedule.iter().enumerate() {
        cfg.epsilon = eps;
        let nlp = if k == 0 { first.clone() } else { transcribe(problem, &cfg)? };
        let result = solve_with(&nlp, &z, opts, warm.as_ref())?;
        if result.status == SolveStatus::Infeasible {
            return Err(Error::IncompleteSchedule(format!("stage eps = {eps:e} is infeasible")));
        }
        let traj = extract_trajectory(&nlp, &result.z_star)?;
        stages.push(StageSummary {
            epsilon: eps,
            status: result.status,
            objective: result.objective,
            kkt: result.kkt,
            iterations: result.iterations,
            max_complementarity: max_complementarity(problem, &traj),
        });
        z.clone_from(&result.z_star);
        warm = Some(result.warm_start());
        last = Some((nlp, result));
    }
    let (nlp, result) = last.expect("non-empty schedule");
    finish(problem, cfg, nlp, result, stages)
}
