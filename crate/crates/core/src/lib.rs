//! Numerical toolkit for optimal control of sweeping processes with mixed
//! state-control constraints.

pub mod certify;
pub mod error;
pub mod fd;
pub mod linalg;
pub mod model;
pub mod nlp;
pub mod problems;
pub mod routes;
pub mod sim;
pub mod solver;
pub mod transcribe;

pub use certify::{
    extract_nonregular, extract_regular, verify_nonregular, verify_regular, ConditionResult, NonRegularCertificate,
    RegularCertificate, ResidualReport, Tolerances,
};
pub use error::{Error, Result};
pub use model::{
    check_assumptions, gradient_check, normal_ray, regularity_margin, AssumptionReport, ControlledVectorField,
    GradientCheckReport, MixedConstraint, NormalRay, ProblemSpec, RegularityReport, RunningCost, ScalarField,
    Violation,
};
pub use problems::{get as get_problem, list_catalog, lookup as lookup_problem, CatalogEntry, Reference};
pub use sim::{
    compute_delta, convergence_study, project_onto_c, simulate_catchup, simulate_penalty, ControlSignal,
    ConvergenceTable, Grid, StateTrajectory,
};
pub use nlp::{kkt_residual, KktResiduals, Layout, NlpProblem};
pub use routes::{solve_complementarity_route, solve_penalty_route, RouteSolution, StageSummary, DEFAULT_EPSILON_SCHEDULE};
pub use solver::{multistart, solve, solve_with, InnerMethod, SolveResult, SolveStatus, SolverOptions, WarmStart};
pub use transcribe::{
    extract_trajectory, transcribe_complementarity, transcribe_penalty, Mode, TranscriptionConfig,
};
