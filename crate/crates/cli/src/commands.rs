use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sweep_core::certify::{extract_nonregular, extract_regular, verify_nonregular, verify_regular, ResidualReport};
use sweep_core::model::regularity_margin;
use sweep_core::routes::{max_complementarity, solve_complementarity_route, solve_penalty_route, RouteSolution};
use sweep_core::sim::simulate_penalty_from;
use sweep_core::transcribe::transcribe;
use sweep_core::{
    check_assumptions, compute_delta, convergence_study, extract_trajectory, gradient_check, lookup_problem,
    simulate_catchup, CatalogEntry, ControlSignal, Error, Grid, KktResiduals, Mode, ProblemSpec, ScalarField,
    SolveResult, SolverOptions, StageSummary, StateTrajectory, TranscriptionConfig,
};

use crate::config::RunConfig;
use crate::CliError;

pub const SOLVE_FILE: &str = "solve.json";

/// Outcome of a command: `true` when every check passed.
pub type Outcome = Result<bool, CliError>;

fn core(e: Error) -> CliError {
    match e {
        Error::InvalidArgument(_) | Error::UnknownProblem(_) | Error::Parse(_) | Error::InitialStateNotInC0(_) => {
            CliError::Config(e.to_string())
        }
        _ => CliError::Numerical(e.to_string()),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Numerical(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Numerical(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    s.push('\n');
    write(dir, name, &s)
}

fn entry(cfg: &RunConfig) -> Result<CatalogEntry, CliError> {
    lookup_problem(&cfg.problem).map_err(core)
}

fn grid(n: usize) -> Result<Grid, CliError> {
    Grid::new(n).map_err(core)
}

/// Control used for simulation: the configured constant, else the catalog
/// reference, else zero.
fn sim_control(cfg: &RunConfig, entry: &CatalogEntry, n: usize) -> Result<ControlSignal, CliError> {
    let g = grid(n)?;
    let m = entry.spec.control_dim();
    if let Some(u) = &cfg.control {
        if u.len() != m {
            return Err(CliError::Config(format!("control: expected {m} components, got {}", u.len())));
        }
        return Ok(ControlSignal::constant(g, u));
    }
    match &entry.reference {
        Some(r) => ControlSignal::from_fn(g, |t| (r.control)(t)).map_err(core),
        None => Ok(ControlSignal::constant(g, &vec![0.0; m])),
    }
}

fn solver_guess(cfg: &RunConfig, entry: &CatalogEntry) -> Result<Option<ControlSignal>, CliError> {
    if cfg.control.is_some() || cfg.reference_guess {
        sim_control(cfg, entry, cfg.n).map(Some)
    } else {
        Ok(None)
    }
}

fn require_gamma(gamma: f64, problem: &ProblemSpec, seed: u64) -> Result<(), CliError> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(CliError::Config(format!("gamma must be positive and finite, got {gamma}")));
    }
    let min = check_assumptions(problem, 1000, seed).map_err(core)?.min_gamma();
    if gamma < min {
        return Err(CliError::Config(format!("gamma = {gamma} is below the required 2 M / eta = {min:.4}")));
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary {
    problem: String,
    intervals: usize,
    catchup_objective: f64,
    catchup_max_psi: f64,
    penalty: Option<PenaltySummary>,
}

#[derive(Serialize)]
struct PenaltySummary {
    gamma: f64,
    substeps: usize,
    objective: f64,
    max_psi: f64,
    sup_gap_to_catchup: f64,
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Outcome {
    let entry = entry(cfg)?;
    let p = &entry.spec;
    let ctrl = sim_control(cfg, &entry, cfg.n)?;
    let catchup = simulate_catchup(p, &ctrl).map_err(core)?;
    write(out, "catchup.csv", &catchup.to_csv_string())?;
    let penalty = match cfg.gamma {
        Some(gamma) => {
            if !(gamma > 0.0) {
                return Err(CliError::Config(format!("gamma must be positive, got {gamma}")));
            }
            let traj = simulate_penalty_from(p, &ctrl, gamma, cfg.substeps, &p.initial_state()).map_err(core)?;
            write(out, "penalty.csv", &traj.to_csv_string())?;
            Some(PenaltySummary {
                gamma,
                substeps: cfg.substeps,
                objective: traj.objective(p),
                max_psi: traj.feasibility(p).max_psi,
                sup_gap_to_catchup: traj.sup_gap(&catchup).map_err(core)?,
            })
        }
        None => None,
    };
    let summary = SimulateSummary {
        problem: cfg.problem.clone(),
        intervals: cfg.n,
        catchup_objective: catchup.objective(p),
        catchup_max_psi: catchup.feasibility(p).max_psi,
        penalty,
    };
    write_json(out, "summary.json", &summary)?;
    Ok(true)
}

/// Everything `certify` needs to rebuild a solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveRecord {
    pub problem: String,
    pub transcription: TranscriptionConfig,
    pub epsilon_schedule: Option<Vec<f64>>,
    pub converged: bool,
    pub nlp_objective: f64,
    pub route_objective: f64,
    pub max_complementarity: f64,
    pub kkt: KktResiduals,
    pub stages: Vec<StageSummary>,
    pub result: SolveResult,
}

fn run_solve(cfg: &RunConfig, entry: &CatalogEntry) -> Result<(RouteSolution, Option<Vec<f64>>), CliError> {
    let p = &entry.spec;
    if cfg.n == 0 {
        return Err(CliError::Config("n must be positive".into()));
    }
    let opts = SolverOptions {
        tol: cfg.solver_tol,
        max_outer: cfg.max_outer,
        ..SolverOptions::default()
    };
    let guess = solver_guess(cfg, entry)?;
    match cfg.mode {
        Mode::Penalty => {
            let gamma = cfg.gamma.ok_or_else(|| CliError::Config("gamma is required in penalty mode".into()))?;
            require_gamma(gamma, p, cfg.seed)?;
            let delta = match cfg.delta {
                Some(d) => d,
                None => {
                    let ctrl = sim_control(cfg, entry, cfg.n)?;
                    compute_delta(p, &ctrl, gamma, &p.initial_state()).map_err(core)?.max(0.0)
                }
            };
            let tc = TranscriptionConfig::penalty(cfg.n, gamma, delta);
            Ok((solve_penalty_route(p, &tc, guess.as_ref(), &opts).map_err(core)?, None))
        }
        Mode::Complementarity => {
            let tc = TranscriptionConfig::complementarity(cfg.n, cfg.epsilon_schedule.first().copied().unwrap_or(0.0));
            let sol = solve_complementarity_route(p, &tc, &cfg.epsilon_schedule, guess.as_ref(), &opts).map_err(core)?;
            Ok((sol, Some(cfg.epsilon_schedule.clone())))
        }
    }
}

pub fn solve(cfg: &RunConfig, out: &Path) -> Outcome {
    let entry = entry(cfg)?;
    let (sol, schedule) = run_solve(cfg, &entry)?;
    write(out, "trajectory.csv", &sol.trajectory.to_csv_string())?;
    write(out, "resimulated.csv", &sol.resimulated.to_csv_string())?;
    let record = SolveRecord {
        problem: cfg.problem.clone(),
        transcription: sol.config,
        epsilon_schedule: schedule,
        converged: sol.converged(),
        nlp_objective: sol.nlp_objective,
        route_objective: sol.route_objective,
        max_complementarity: max_complementarity(&entry.spec, &sol.trajectory),
        kkt: sol.result.kkt,
        stages: sol.stages.clone(),
        result: sol.result.clone(),
    };
    write_json(out, SOLVE_FILE, &record)?;
    println!(
        "status {:?}: objective {:.10} (original problem {:.10}), kkt {:.3e}",
        sol.result.status,
        sol.nlp_objective,
        sol.route_objective,
        sol.result.kkt.max()
    );
    if !sol.converged() {
        return Err(CliError::Numerical(format!("solver stopped with status {:?}", sol.result.status)));
    }
    Ok(true)
}

pub fn certify(cfg: &RunConfig, out: &Path) -> Outcome {
    let path = out.join(SOLVE_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|_| CliError::Config(format!("no solve output at {}; run `solve` first", path.display())))?;
    let record: SolveRecord =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if record.problem != cfg.problem {
        return Err(CliError::Config(format!(
            "{} holds a solve of '{}', config names '{}'",
            path.display(),
            record.problem,
            cfg.problem
        )));
    }
    let p = lookup_problem(&record.problem).map_err(core)?.spec;
    let nlp = transcribe(&p, &record.transcription).map_err(core)?;
    let traj = extract_trajectory(&nlp, &record.result.z_star).map_err(core)?;
    let report: ResidualReport = match record.transcription.mode {
        Mode::Penalty => {
            let cert = extract_regular(&p, &record.transcription, &nlp, &record.result).map_err(core)?;
            write_json(out, "certificate.json", &cert)?;
            verify_regular(&p, &traj, &cert, &cfg.tolerances, cfg.seed).map_err(core)?
        }
        Mode::Complementarity => {
            let cert = extract_nonregular(&p, &record.transcription, &nlp, &record.result).map_err(core)?;
            write_json(out, "certificate.json", &cert)?;
            verify_nonregular(&p, &traj, &cert, &cfg.tolerances).map_err(core)?
        }
    };
    write_json(out, "report.json", &report)?;
    print!("{}", report.table());
    Ok(report.passed())
}

#[derive(Serialize)]
struct ConvergeSummary {
    problem: String,
    gammas: Vec<f64>,
    grids: Vec<usize>,
    monotone: bool,
    decreasing_in_gamma: Vec<bool>,
    /// `None` where a gap vanished.
    refinement_ratios: Vec<Vec<Option<f64>>>,
}

pub fn converge(cfg: &RunConfig, out: &Path) -> Outcome {
    if cfg.gammas.is_empty() {
        return Err(CliError::Config("gammas must be a non-empty list".into()));
    }
    if cfg.grids.is_empty() {
        return Err(CliError::Config("grids must be a non-empty list".into()));
    }
    if let Some(g) = cfg.gammas.iter().find(|g| !(**g > 0.0)) {
        return Err(CliError::Config(format!("gammas must be positive, got {g}")));
    }
    let entry = entry(cfg)?;
    let n_max = *cfg.grids.iter().max().expect("non-empty");
    let ctrl = sim_control(cfg, &entry, n_max)?;
    let table = convergence_study(&entry.spec, &ctrl, &cfg.gammas, &cfg.grids, cfg.substeps).map_err(core)?;
    write(out, "convergence.csv", &table.to_csv_string())?;
    let monotone = table.decreasing_in_gamma.iter().all(|b| *b);
    let summary = ConvergeSummary {
        problem: cfg.problem.clone(),
        gammas: table.gammas.clone(),
        grids: table.grids.clone(),
        monotone,
        decreasing_in_gamma: table.decreasing_in_gamma.clone(),
        refinement_ratios: table
            .refinement_ratios
            .iter()
            .map(|r| r.iter().map(|v| v.is_finite().then_some(*v)).collect())
            .collect(),
    };
    write_json(out, "summary.json", &summary)?;
    for (a, g) in table.gammas.iter().enumerate() {
        for (b, n) in table.grids.iter().enumerate() {
            println!("gamma {g:>8} N {n:>6} gap {:.6e}", table.gaps[a][b]);
        }
    }
    println!("gaps decrease in gamma for every N: {monotone}");
    Ok(monotone)
}

/// Returns `problem` with one derivative scaled by 1.01.
fn inject(problem: &ProblemSpec, field: &str) -> Result<ProblemSpec, CliError> {
    let mut p = problem.clone();
    let corrupt = |s: &ScalarField| {
        let (a, b, c) = (s.clone(), s.clone(), s.clone());
        let out = ScalarField::new(s.dim, move |x| a.eval(x), move |x| b.grad(x).iter().map(|v| 1.01 * v).collect());
        if s.has_hess() {
            out.with_hess(move |x| c.hess(x))
        } else {
            out
        }
    };
    match field {
        "psi.grad" => p.psi = corrupt(&problem.psi),
        "g.grad" => p.g = corrupt(&problem.g),
        _ => {
            return Err(CliError::Config(format!(
                "inject_defect: unsupported field '{field}' (use psi.grad or g.grad)"
            )))
        }
    }
    Ok(p)
}

#[derive(Serialize)]
struct CheckReport {
    problem: String,
    assumptions: sweep_core::AssumptionReport,
    gradient_errors: sweep_core::GradientCheckReport,
    failing_fields: Vec<String>,
    regularity: Option<sweep_core::RegularityReport>,
    clean: bool,
}

pub fn check(cfg: &RunConfig, out: &Path) -> Outcome {
    let entry = entry(cfg)?;
    let problem = match &cfg.inject_defect {
        Some(f) => inject(&entry.spec, f)?,
        None => entry.spec.clone(),
    };
    let assumptions = check_assumptions(&problem, 1000, cfg.seed).map_err(core)?;
    let grads = gradient_check(&problem, 100, cfg.seed).map_err(core)?;
    let failing: Vec<String> = grads.failing(1e-6).iter().map(|(k, _)| k.to_string()).collect();
    let regularity = match &cfg.trajectory {
        Some(path) => {
            let file = fs::File::open(path)
                .map_err(|e| CliError::Config(format!("trajectory {}: {e}", path.display())))?;
            let traj = StateTrajectory::read_csv(std::io::BufReader::new(file)).map_err(core)?;
            Some(regularity_margin(&problem, &traj, None).map_err(core)?)
        }
        None => None,
    };

    println!("problem {}", cfg.problem);
    println!(
        "assumptions: M_est {:.4}, eta_est {:.4}, min gamma {:.4}, violations {}",
        assumptions.m_est,
        assumptions.eta_est,
        assumptions.min_gamma(),
        assumptions.violations.len()
    );
    for v in &assumptions.violations {
        println!("  violation {}: {} at {:?}", v.assumption, v.detail, v.witness);
    }
    println!("gradient check: max relative error {:.3e}", grads.max_error());
    for (k, e) in grads.failing(1e-6) {
        println!("  derivative mismatch in {k}: relative error {e:.3e}");
    }
    if let Some(r) = &regularity {
        let node = r.worst_node.map_or("-".to_string(), |j| j.to_string());
        match r.margin {
            Some(m) if r.is_regular() => println!("regularity margin {m:.6} at node {node}"),
            Some(m) => println!("warning: non-regular mixed constraint, margin {m:.3e} at node {node}"),
            None => println!("regularity: no active mixed constraint"),
        }
    }
    let clean = assumptions.is_clean() && failing.is_empty() && regularity.as_ref().map_or(true, |r| r.is_regular());
    let report = CheckReport {
        problem: cfg.problem.clone(),
        assumptions,
        gradient_errors: grads,
        failing_fields: failing,
        regularity,
        clean,
    };
    write_json(out, "check.json", &report)?;
    Ok(clean)
}
