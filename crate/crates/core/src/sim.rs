//! Forward simulation of the sweeping dynamics: Moreau catch-up and the
//! exponential penalty system, plus the relaxation level of the mixed
//! constraint along penalty trajectories.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::linalg::{dot, norm2, norm_inf, sub};
use crate::model::ProblemSpec;

pub const DEFAULT_FEAS_TOL: f64 = 1e-9;
pub const PROJECTION_TOL: f64 = 1e-12;
pub const PROJECTION_MAX_ITER: usize = 100;
pub const DEFAULT_SUBSTEPS: usize = 10;

/// Uniform grid `t_j = j / N` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub intervals: usize,
}

impl Grid {
    pub fn new(intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::InvalidArgument("grid needs at least one interval".into()));
        }
        Ok(Self { intervals })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        1.0 / self.intervals as f64
    }

    #[inline]
    pub fn t(&self, j: usize) -> f64 {
        j as f64 / self.intervals as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.intervals).map(|j| self.t(j)).collect()
    }
}

/// Piecewise-constant control, `values[j]` acting on `[t_j, t_{j+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    pub grid: Grid,
    pub values: Vec<Vec<f64>>,
}

impl ControlSignal {
    pub fn new(grid: Grid, values: Vec<Vec<f64>>) -> Result<Self> {
        ensure_dim("control samples", grid.intervals, values.len())?;
        let m = values[0].len();
        for u in &values {
            ensure_dim("control dimension", m, u.len())?;
            ensure_finite("control", u, u)?;
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, u: &[f64]) -> Self {
        Self {
            grid,
            values: vec![u.to_vec(); grid.intervals],
        }
    }

    /// Samples `u(t)` at the left end of every interval.
    pub fn from_fn(grid: Grid, u: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        Self::new(grid, (0..grid.intervals).map(|j| u(grid.t(j))).collect())
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Value of the piecewise-constant signal at time `t`.
    pub fn at(&self, t: f64) -> &[f64] {
        let n = self.grid.intervals;
        let j = ((t * n as f64).floor().max(0.0) as usize).min(n - 1);
        &self.values[j]
    }

    /// Re-samples on another grid at interval midpoints.
    pub fn resample(&self, grid: Grid) -> Self {
        let values = (0..grid.intervals)
            .map(|j| self.at((j as f64 + 0.5) * grid.dt()).to_vec())
            .collect();
        Self { grid, values }
    }
}

/// Node samples of states, controls and optional normal-cone slacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTrajectory {
    pub grid: Grid,
    /// `x_0, ..., x_N`.
    pub states: Vec<Vec<f64>>,
    /// `u_0, ..., u_{N-1}`.
    pub controls: Vec<Vec<f64>>,
    /// `v_0, ..., v_{N-1}` on the complementarity route.
    pub slacks: Option<Vec<f64>>,
}

/// Worst constraint values along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub max_psi: f64,
    /// `-inf` when there are no mixed constraints.
    pub max_h: f64,
    pub min_slack: Option<f64>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self, delta: f64, tol: f64) -> bool {
        self.max_psi <= tol && self.max_h <= delta + tol && self.min_slack.is_none_or(|v| v >= -tol)
    }
}

impl StateTrajectory {
    pub fn new(states: Vec<Vec<f64>>, controls: Vec<Vec<f64>>, slacks: Option<Vec<f64>>) -> Result<Self> {
        let grid = Grid::new(controls.len())?;
        ensure_dim("trajectory states", controls.len() + 1, states.len())?;
        if let Some(v) = &slacks {
            ensure_dim("trajectory slacks", controls.len(), v.len())?;
        }
        Ok(Self {
            grid,
            states,
            controls,
            slacks,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn control_dim(&self) -> usize {
        self.controls[0].len()
    }

    pub fn control_signal(&self) -> ControlSignal {
        ControlSignal {
            grid: self.grid,
            values: self.controls.clone(),
        }
    }

    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("non-empty")
    }

    pub fn check_dims(&self, problem: &ProblemSpec) -> Result<()> {
        ensure_dim("trajectory states", self.grid.intervals + 1, self.states.len())?;
        ensure_dim("trajectory controls", self.grid.intervals, self.controls.len())?;
        for x in &self.states {
            ensure_dim("trajectory state dimension", problem.state_dim(), x.len())?;
        }
        for u in &self.controls {
            ensure_dim("trajectory control dimension", problem.control_dim(), u.len())?;
        }
        Ok(())
    }

    pub fn feasibility(&self, problem: &ProblemSpec) -> FeasibilityReport {
        let max_psi = self
            .states
            .iter()
            .map(|x| problem.psi.eval(x))
            .fold(f64::NEG_INFINITY, f64::max);
        let max_h = self
            .controls
            .iter()
            .enumerate()
            .map(|(j, u)| problem.h_max(&self.states[j], u))
            .fold(f64::NEG_INFINITY, f64::max);
        let min_slack = self
            .slacks
            .as_ref()
            .map(|v| v.iter().copied().fold(f64::INFINITY, f64::min));
        FeasibilityReport {
            max_psi,
            max_h,
            min_slack,
        }
    }

    /// `g(x_N) + sum_j dt * L(t_j, x_j, u_j)`.
    pub fn objective(&self, problem: &ProblemSpec) -> f64 {
        let dt = self.grid.dt();
        let running: f64 = self
            .controls
            .iter()
            .enumerate()
            .map(|(j, u)| dt * problem.running_cost_value(self.grid.t(j), &self.states[j], u))
            .sum();
        problem.g.eval(self.terminal()) + running
    }

    /// `max_j |x_j - y_j|` over common nodes.
    pub fn sup_gap(&self, other: &StateTrajectory) -> Result<f64> {
        ensure_dim("trajectory length", self.states.len(), other.states.len())?;
        Ok(self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| norm2(&sub(a, b)))
            .fold(0.0, f64::max))
    }

    /// CSV with header `t,x1..xn,u1..um,v`; the final node leaves the
    /// control and slack fields empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.state_dim();
        let m = self.control_dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.push("v".into());
        writeln!(w, "{}", header.join(","))?;
        let fmt = |v: f64| format!("{v:.16e}");
        for j in 0..=self.grid.intervals {
            let mut row = vec![fmt(self.grid.t(j))];
            row.extend(self.states[j].iter().map(|&v| fmt(v)));
            if j < self.grid.intervals {
                row.extend(self.controls[j].iter().map(|&v| fmt(v)));
                row.push(self.slacks.as_ref().map_or(String::new(), |s| fmt(s[j])));
            } else {
                row.extend(std::iter::repeat_n(String::new(), m + 1));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        let n = cols.iter().filter(|c| c.starts_with('x')).count();
        let m = cols.iter().filter(|c| c.starts_with('u')).count();
        if cols.first() != Some(&"t") || cols.last() != Some(&"v") || cols.len() != n + m + 2 {
            return Err(Error::Parse(format!("unexpected header '{header}'")));
        }
        let parse = |s: &str| -> Result<f64> { s.trim().parse().map_err(|e| Error::Parse(format!("'{s}': {e}"))) };
        let mut states = Vec::new();
        let mut controls = Vec::new();
        let mut slacks = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != n + m + 2 {
                return Err(Error::Parse(format!("row has {} fields, expected {}", f.len(), n + m + 2)));
            }
            states.push(f[1..=n].iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?);
            if !f[n + 1].is_empty() {
                controls.push(f[n + 1..n + 1 + m].iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?);
                if !f[n + m + 1].is_empty() {
                    slacks.push(parse(f[n + m + 1])?);
                }
            }
        }
        let slacks = if slacks.is_empty() { None } else { Some(slacks) };
        Self::new(states, controls, slacks)
    }
}

/// Solves `y + lambda * grad psi(y) = x` for fixed `lambda` by damped Newton,
/// i.e. minimizes the strongly convex `|y - x|^2 / 2 + lambda * psi(y)`.
fn prox_point(problem: &ProblemSpec, x: &[f64], lambda: f64, start: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let merit = |y: &[f64]| 0.5 * norm2(&sub(y, x)).powi(2) + lambda * problem.psi.eval(y);
    let mut y = start.to_vec();
    let scale = 1.0 + norm_inf(x);
    for _ in 0..100 {
        let g = problem.psi.grad(&y);
        let r: Vec<f64> = (0..n).map(|i| y[i] + lambda * g[i] - x[i]).collect();
        ensure_finite("prox residual", &y, &r)?;
        if norm_inf(&r) <= 1e-15 * scale {
            return Ok(y);
        }
        let h = DMatrix::identity(n, n) + problem.psi.hess(&y) * lambda;
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&DVector::from_column_slice(&r)),
            None => DVector::from_column_slice(&r),
        };
        let phi0 = merit(&y);
        let slope = -dot(step.as_slice(), &r);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = (0..n).map(|i| y[i] - t * step[i]).collect();
            let v = merit(&trial);
            // near the solution the merit decrease drowns in roundoff, so a
            // shrinking residual is accepted as well
            let gt = problem.psi.grad(&trial);
            let rt = (0..n).map(|i| (trial[i] + lambda * gt[i] - x[i]).abs()).fold(0.0, f64::max);
            if v.is_finite() && (v <= phi0 + 1e-4 * t * slope || rt <= 0.5 * norm_inf(&r)) {
                y = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // merit flat at roundoff level: the current point is as good as it gets
            return Ok(y);
        }
    }
    Ok(y)
}

/// Euclidean projection onto `C = {psi <= 0}`.
///
/// The multiplier `lambda` is found by safeguarded Newton and bisection on
/// `phi(lambda) = psi(y(lambda))`, where `y(lambda)` solves
/// `y + lambda * grad psi(y) = x`.
pub fn project_onto_c(problem: &ProblemSpec, x: &[f64], tol: f64) -> Result<Vec<f64>> {
    ensure_dim("projection point", problem.state_dim(), x.len())?;
    ensure_finite("projection input", x, x)?;
    if problem.psi.eval(x) <= 0.0 {
        return Ok(x.to_vec());
    }
    let n = x.len();
    let kkt = |y: &[f64], lambda: f64| {
        let g = problem.psi.grad(y);
        let stat = (0..n).map(|i| (y[i] - x[i] + lambda * g[i]).abs()).fold(0.0, f64::max);
        stat.max(problem.psi.eval(y).abs())
    };

    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let g0 = problem.psi.grad(x);
    let gg = dot(&g0, &g0);
    // first-order guess psi(x) - lambda |grad psi|^2 = 0
    let mut lambda = if gg > 0.0 { problem.psi.eval(x) / gg } else { 1.0 };
    let mut y = x.to_vec();
    let mut residual = f64::INFINITY;
    for _ in 0..PROJECTION_MAX_ITER {
        y = prox_point(problem, x, lambda, &y)?;
        let phi = problem.psi.eval(&y);
        residual = kkt(&y, lambda);
        if residual <= tol {
            return Ok(y);
        }
        if phi > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        // phi'(lambda) = -grad psi^T (I + lambda H)^{-1} grad psi
        let g = problem.psi.grad(&y);
        let h = DMatrix::identity(n, n) + problem.psi.hess(&y) * lambda;
        let dphi = match h.cholesky() {
            Some(c) => -dot(&g, c.solve(&DVector::from_column_slice(&g)).as_slice()),
            None => -dot(&g, &g),
        };
        let newton = if dphi < 0.0 { lambda - phi / dphi } else { f64::NAN };
        lambda = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            2.0 * lambda.max(1e-12)
        };
        if hi.is_finite() && hi - lo <= 1e-17 * hi {
            break;
        }
    }
    residual = residual.min(kkt(&y, lambda));
    if residual <= tol {
        return Ok(y);
    }
    Err(Error::ProjectionNoConvergence {
        iterations: PROJECTION_MAX_ITER,
        residual,
        last: y,
    })
}

fn check_control(problem: &ProblemSpec, control: &ControlSignal) -> Result<()> {
    ensure_dim("control samples", control.grid.intervals, control.values.len())?;
    for u in &control.values {
        ensure_dim("control dimension", problem.control_dim(), u.len())?;
    }
    Ok(())
}

/// Moreau catch-up from the problem's initial state.
pub fn simulate_catchup(problem: &ProblemSpec, control: &ControlSignal) -> Result<StateTrajectory> {
    simulate_catchup_from(problem, control, &problem.initial_state())
}

/// `x_{j+1} = P_C(x_j + dt * f(x_j, u_j))`.
pub fn simulate_catchup_from(problem: &ProblemSpec, control: &ControlSignal, x0: &[f64]) -> Result<StateTrajectory> {
    check_control(problem, control)?;
    ensure_dim("initial state", problem.state_dim(), x0.len())?;
    if !problem.in_c0(x0, DEFAULT_FEAS_TOL) {
        return Err(Error::InitialStateNotInC0(x0.to_vec()));
    }
    let dt = control.grid.dt();
    let mut states = Vec::with_capacity(control.grid.intervals + 1);
    states.push(x0.to_vec());
    for u in &control.values {
        let x = states.last().expect("non-empty");
        let f = problem.f.eval(x, u);
        ensure_finite("f", x, &f)?;
        let pred: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + dt * b).collect();
        states.push(project_onto_c(problem, &pred, PROJECTION_TOL)?);
    }
    StateTrajectory::new(states, control.values.clone(), None)
}

/// Penalty field `gamma * exp(gamma * psi(x)) * grad psi(x)`.
pub fn penalty_force(problem: &ProblemSpec, x: &[f64], gamma: f64) -> Vec<f64> {
    let xi = gamma * (gamma * problem.psi.eval(x)).exp();
    problem.psi.grad(x).iter().map(|g| xi * g).collect()
}

/// Jacobian of [`penalty_force`]:
/// `xi * Hess psi + gamma^2 exp(gamma psi) grad psi grad psi^T`.
pub fn penalty_jacobian(problem: &ProblemSpec, x: &[f64], gamma: f64) -> DMatrix<f64> {
    let e = (gamma * problem.psi.eval(x)).exp();
    let g = DVector::from_vec(problem.psi.grad(x));
    problem.psi.hess(x) * (gamma * e) + (&g * g.transpose()) * (gamma * gamma * e)
}

fn implicit_substep(
    problem: &ProblemSpec,
    x: &[f64],
    u: &[f64],
    tau: f64,
    gamma: f64,
    step: usize,
) -> Result<Vec<f64>> {
    let n = x.len();
    let residual = |z: &[f64]| -> Vec<f64> {
        let f = problem.f.eval(z, u);
        let p = penalty_force(problem, z, gamma);
        (0..n).map(|i| z[i] - x[i] - tau * (f[i] - p[i])).collect()
    };
    let scale = 1.0 + norm_inf(x);
    let mut z = x.to_vec();
    let mut r = residual(&z);
    ensure_finite("penalty residual", &z, &r)?;
    for _ in 0..60 {
        let rn = norm_inf(&r);
        if rn <= 1e-13 * scale {
            return Ok(z);
        }
        let jac = DMatrix::identity(n, n) - (problem.f.jac_x(&z, u) - penalty_jacobian(problem, &z, gamma)) * tau;
        let d = jac
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or(Error::NewtonDivergence { gamma, step, residual: rn })?;
        let r2 = dot(&r, &r);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let trial: Vec<f64> = (0..n).map(|i| z[i] - t * d[i]).collect();
            let rt = residual(&trial);
            if rt.iter().all(|v| v.is_finite()) && dot(&rt, &rt) <= (1.0 - 1e-4 * t) * r2 {
                z = trial;
                r = rt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if rn <= 1e-10 * scale {
                return Ok(z);
            }
            return Err(Error::NewtonDivergence { gamma, step, residual: rn });
        }
    }
    let rn = norm_inf(&r);
    if rn <= 1e-10 * scale {
        Ok(z)
    } else {
        Err(Error::NewtonDivergence { gamma, step, residual: rn })
    }
}

/// Exponential penalty system from the problem's initial state.
pub fn simulate_penalty(
    problem: &ProblemSpec,
    control: &ControlSignal,
    gamma: f64,
    substeps: usize,
) -> Result<StateTrajectory> {
    simulate_penalty_from(problem, control, gamma, substeps, &problem.initial_state())
}

/// `x' = f(x, u) - gamma e^{gamma psi(x)} grad psi(x)` with `substeps`
/// implicit Euler steps per grid interval.
pub fn simulate_penalty_from(
    problem: &ProblemSpec,
    control: &ControlSignal,
    gamma: f64,
    substeps: usize,
    x0: &[f64],
) -> Result<StateTrajectory> {
    check_control(problem, control)?;
    ensure_dim("initial state", problem.state_dim(), x0.len())?;
    if !(gamma > 0.0) || substeps == 0 {
        return Err(Error::InvalidArgument("gamma > 0 and substeps >= 1 required".into()));
    }
    let tau = control.grid.dt() / substeps as f64;
    let mut states = Vec::with_capacity(control.grid.intervals + 1);
    states.push(x0.to_vec());
    for (j, u) in control.values.iter().enumerate() {
        let mut x = states.last().expect("non-empty").clone();
        for s in 0..substeps {
            x = implicit_substep(problem, &x, u, tau, gamma, j * substeps + s)?;
        }
        states.push(x);
    }
    StateTrajectory::new(states, control.values.clone(), None)
}

/// `max_j max_i h_i(x_j, u_j)` along the penalty trajectory from `x0`.
pub fn compute_delta(problem: &ProblemSpec, control: &ControlSignal, gamma: f64, x0: &[f64]) -> Result<f64> {
    compute_delta_with(problem, control, gamma, DEFAULT_SUBSTEPS, x0)
}

pub fn compute_delta_with(
    problem: &ProblemSpec,
    control: &ControlSignal,
    gamma: f64,
    substeps: usize,
    x0: &[f64],
) -> Result<f64> {
    let traj = simulate_penalty_from(problem, control, gamma, substeps, x0)?;
    Ok(traj.feasibility(problem).max_h)
}

/// Sup-norm gaps between penalty and catch-up trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub gammas: Vec<f64>,
    pub grids: Vec<usize>,
    /// `gaps[a][b]` for `gammas[a]` and `grids[b]`.
    pub gaps: Vec<Vec<f64>>,
    /// Per grid: gap strictly decreasing in gamma.
    pub decreasing_in_gamma: Vec<bool>,
    /// Per gamma: ratios of gaps between consecutive grids.
    pub refinement_ratios: Vec<Vec<f64>>,
}

pub fn convergence_study(
    problem: &ProblemSpec,
    control: &ControlSignal,
    gammas: &[f64],
    grids: &[usize],
    substeps: usize,
) -> Result<ConvergenceTable> {
    if gammas.is_empty() || grids.is_empty() {
        return Err(Error::InvalidArgument("gammas and grids must be non-empty".into()));
    }
    if gammas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("gammas must be increasing".into()));
    }
    let catchups: Vec<StateTrajectory> = grids
        .par_iter()
        .map(|&n| simulate_catchup(problem, &control.resample(Grid::new(n)?)))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..gammas.len())
        .flat_map(|a| (0..grids.len()).map(move |b| (a, b)))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(a, b)| {
            let ctrl = control.resample(Grid::new(grids[b])?);
            let pen = simulate_penalty(problem, &ctrl, gammas[a], substeps)?;
            pen.sup_gap(&catchups[b])
        })
        .collect::<Result<_>>()?;
    let gaps: Vec<Vec<f64>> = values.chunks(grids.len()).map(|c| c.to_vec()).collect();
    let decreasing_in_gamma = (0..grids.len())
        .map(|b| (1..gammas.len()).all(|a| gaps[a][b] < gaps[a - 1][b]))
        .collect();
    let refinement_ratios = gaps
        .iter()
        .map(|row| row.windows(2).map(|w| w[1] / w[0]).collect())
        .collect();
    Ok(ConvergenceTable {
        gammas: gammas.to_vec(),
        grids: grids.to_vec(),
        gaps,
        decreasing_in_gamma,
        refinement_ratios,
    })
}

impl ConvergenceTable {
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("gamma,N,gap\n");
        for (a, g) in self.gammas.iter().enumerate() {
            for (b, n) in self.grids.iter().enumerate() {
                s.push_str(&format!("{g},{n},{:.16e}\n", self.gaps[a][b]));
            }
        }
        s
    }
}
