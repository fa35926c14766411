//! Direct transcription of the control problem into an [`NlpProblem`].
//!
//! Penalty mode discretizes the exponential penalty system by backward Euler
//! and relaxes the mixed constraint by `delta`. Complementarity mode keeps
//! the normal-cone slack `v` as a decision variable, discretizes by forward
//! Euler and relaxes `v * psi(x) = 0` to `-v psi(x) <= eps`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{dot, SparseMatrix};
use crate::model::{check_assumptions, ProblemSpec};
use crate::nlp::{Block, Layout, NlpProblem};
use crate::sim::{simulate_catchup_from, simulate_penalty_from, ControlSignal, Grid, StateTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Penalty,
    Complementarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranscriptionConfig {
    pub intervals: usize,
    pub mode: Mode,
    /// Penalty parameter (penalty mode).
    pub gamma: f64,
    /// Relaxation of the mixed constraint (penalty mode).
    pub delta: f64,
    /// Complementarity relaxation (complementarity mode).
    pub epsilon: f64,
    /// Normal-cone truncation radius; `None` means `2 * M_est`.
    pub rho: Option<f64>,
}

impl TranscriptionConfig {
    pub fn penalty(intervals: usize, gamma: f64, delta: f64) -> Self {
        Self {
            intervals,
            mode: Mode::Penalty,
            gamma,
            delta,
            epsilon: 0.0,
            rho: None,
        }
    }

    pub fn complementarity(intervals: usize, epsilon: f64) -> Self {
        Self {
            intervals,
            mode: Mode::Complementarity,
            gamma: 0.0,
            delta: 0.0,
            epsilon,
            rho: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.intervals < 2 {
            return Err(Error::InvalidArgument("N must be at least 2".into()));
        }
        match self.mode {
            Mode::Penalty if !(self.gamma > 0.0 && self.gamma.is_finite()) => {
                Err(Error::InvalidArgument("gamma must be positive in penalty mode".into()))
            }
            Mode::Penalty if !self.delta.is_finite() => Err(Error::InvalidArgument("delta must be finite".into())),
            Mode::Complementarity if !(self.epsilon >= 0.0) => {
                Err(Error::InvalidArgument("epsilon must be non-negative".into()))
            }
            _ => match self.rho {
                Some(r) if !(r > 0.0) => Err(Error::InvalidArgument("rho must be positive".into())),
                _ => Ok(()),
            },
        }
    }
}

/// `2 * M_est` from a fixed-seed assumption sample.
pub fn default_rho(problem: &ProblemSpec) -> Result<f64> {
    Ok(2.0 * check_assumptions(problem, 1000, 0)?.m_est)
}

/// Radius actually used: the config value, else the problem's, else the default.
pub fn resolve_rho(problem: &ProblemSpec, cfg: &TranscriptionConfig) -> Result<f64> {
    match cfg.rho.or(problem.rho) {
        Some(r) => Ok(r),
        None => default_rho(problem),
    }
}

/// Index arithmetic shared by both transcriptions.
#[derive(Debug, Clone, Copy)]
struct Dims {
    n: usize,
    m: usize,
    nh: usize,
    nc0: usize,
    big_n: usize,
    dt: f64,
}

impl Dims {
    fn new(problem: &ProblemSpec, big_n: usize) -> Self {
        Self {
            n: problem.state_dim(),
            m: problem.control_dim(),
            nh: problem.n_mixed(),
            nc0: problem.c0.len(),
            big_n,
            dt: 1.0 / big_n as f64,
        }
    }
    fn x(&self, j: usize) -> usize {
        j * self.n
    }
    fn u(&self, j: usize) -> usize {
        self.n * (self.big_n + 1) + j * self.m
    }
    fn v(&self, j: usize) -> usize {
        (self.n + self.m) * self.big_n + self.n + j
    }
}

fn var_blocks(d: &Dims, with_v: bool) -> Vec<Block> {
    let mut b = vec![
        Block {
            name: "x".into(),
            start: 0,
            count: d.big_n + 1,
            width: d.n,
        },
        Block {
            name: "u".into(),
            start: d.u(0),
            count: d.big_n,
            width: d.m,
        },
    ];
    if with_v {
        b.push(Block {
            name: "v".into(),
            start: d.v(0),
            count: d.big_n,
            width: 1,
        });
    }
    b
}

fn row_blocks(spec: &[(&str, usize, usize)]) -> Vec<Block> {
    let mut start = 0;
    spec.iter()
        .map(|&(name, count, width)| {
            let b = Block {
                name: name.into(),
                start,
                count,
                width,
            };
            start += count * width;
            b
        })
        .collect()
}

fn bounds(problem: &ProblemSpec, d: &Dims, n_vars: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::NEG_INFINITY; n_vars];
    let mut hi = vec![f64::INFINITY; n_vars];
    if problem.c0_is_singleton() {
        let a = problem.anchor.as_ref().expect("validated");
        for k in 0..d.n {
            lo[d.x(0) + k] = a[k];
            hi[d.x(0) + k] = a[k];
        }
    }
    (lo, hi)
}

fn cliques(d: &Dims, with_v: bool) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(d.big_n + 1);
    for j in 0..d.big_n {
        let mut c: Vec<usize> = (d.x(j)..d.x(j) + 2 * d.n).chain(d.u(j)..d.u(j) + d.m).collect();
        if with_v {
            c.push(d.v(j));
        }
        out.push(c);
    }
    out.push((d.x(d.big_n)..d.x(d.big_n) + d.n).collect());
    out.push((d.x(0)..d.x(0) + d.n).collect());
    out
}

fn push_dense(m: &mut SparseMatrix, row0: usize, col0: usize, a: &DMatrix<f64>, scale: f64) {
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            let v = a[(r, c)];
            if v != 0.0 {
                m.push(row0 + r, col0 + c, scale * v);
            }
        }
    }
}

fn push_vec(m: &mut SparseMatrix, row: usize, col0: usize, a: &[f64], scale: f64) {
    for (c, &v) in a.iter().enumerate() {
        if v != 0.0 {
            m.push(row, col0 + c, scale * v);
        }
    }
}

fn objective_parts(p: Arc<ProblemSpec>, d: Dims) -> (impl Fn(&[f64]) -> f64, impl Fn(&[f64]) -> Vec<f64>) {
    let q = p.clone();
    let f = move |z: &[f64]| {
        let mut v = p.g.eval(&z[d.x(d.big_n)..d.x(d.big_n) + d.n]);
        if let Some(l) = &p.running_cost {
            for j in 0..d.big_n {
                v += d.dt * l.eval(j as f64 * d.dt, &z[d.x(j)..d.x(j) + d.n], &z[d.u(j)..d.u(j) + d.m]);
            }
        }
        v
    };
    let g = move |z: &[f64]| {
        let mut grad = vec![0.0; z.len()];
        let gx = q.g.grad(&z[d.x(d.big_n)..d.x(d.big_n) + d.n]);
        grad[d.x(d.big_n)..d.x(d.big_n) + d.n].copy_from_slice(&gx);
        if let Some(l) = &q.running_cost {
            for j in 0..d.big_n {
                let t = j as f64 * d.dt;
                let x = &z[d.x(j)..d.x(j) + d.n];
                let u = &z[d.u(j)..d.u(j) + d.m];
                for (k, v) in l.grad_x(t, x, u).iter().enumerate() {
                    grad[d.x(j) + k] += d.dt * v;
                }
                for (k, v) in l.grad_u(t, x, u).iter().enumerate() {
                    grad[d.u(j) + k] += d.dt * v;
                }
            }
        }
        grad
    };
    (f, g)
}

/// Backward-Euler transcription of the penalty system.
pub fn transcribe_penalty(problem: &ProblemSpec, cfg: &TranscriptionConfig) -> Result<NlpProblem> {
    cfg.validate()?;
    if cfg.mode != Mode::Penalty {
        return Err(Error::InvalidArgument("penalty transcription needs penalty mode".into()));
    }
    problem.validate()?;
    let d = Dims::new(problem, cfg.intervals);
    let n_vars = d.n * (d.big_n + 1) + d.m * d.big_n;
    let n_eq = d.n * d.big_n;
    let n_ineq = d.nh * d.big_n + d.nc0;
    let p = Arc::new(problem.clone());
    let (gamma, delta) = (cfg.gamma, cfg.delta);

    let pe = p.clone();
    let eq = move |z: &[f64]| {
        let mut out = Vec::with_capacity(n_eq);
        for j in 0..d.big_n {
            let x0 = &z[d.x(j)..d.x(j) + d.n];
            let x1 = &z[d.x(j + 1)..d.x(j + 1) + d.n];
            let u = &z[d.u(j)..d.u(j) + d.m];
            let f = pe.f.eval(x1, u);
            let xi = gamma * (gamma * pe.psi.eval(x1)).exp();
            let g = pe.psi.grad(x1);
            for k in 0..d.n {
                out.push(x1[k] - x0[k] - d.dt * (f[k] - xi * g[k]));
            }
        }
        out
    };
    let pj = p.clone();
    let eq_jac = move |z: &[f64]| {
        let mut m = SparseMatrix::new(n_eq, n_vars);
        for j in 0..d.big_n {
            let x1 = &z[d.x(j + 1)..d.x(j + 1) + d.n];
            let u = &z[d.u(j)..d.u(j) + d.m];
            let row = j * d.n;
            for k in 0..d.n {
                m.push(row + k, d.x(j) + k, -1.0);
            }
            let jx = DMatrix::identity(d.n, d.n)
                - (pj.f.jac_x(x1, u) - crate::sim::penalty_jacobian(&pj, x1, gamma)) * d.dt;
            push_dense(&mut m, row, d.x(j + 1), &jx, 1.0);
            push_dense(&mut m, row, d.u(j), &pj.f.jac_u(x1, u), -d.dt);
        }
        m
    };
    let pi = p.clone();
    let ineq = move |z: &[f64]| {
        let mut out = Vec::with_capacity(n_ineq);
        for j in 0..d.big_n {
            let x = &z[d.x(j)..d.x(j) + d.n];
            let u = &z[d.u(j)..d.u(j) + d.m];
            out.extend(pi.mixed.iter().map(|h| h.eval(x, u) - delta));
        }
        out.extend(pi.c0.iter().map(|c| c.eval(&z[..d.n])));
        out
    };
    let pij = p.clone();
    let ineq_jac = move |z: &[f64]| {
        let mut m = SparseMatrix::new(n_ineq, n_vars);
        for j in 0..d.big_n {
            let x = &z[d.x(j)..d.x(j) + d.n];
            let u = &z[d.u(j)..d.u(j) + d.m];
            for (i, h) in pij.mixed.iter().enumerate() {
                let row = j * d.nh + i;
                push_vec(&mut m, row, d.x(j), &h.grad_x(x, u), 1.0);
                push_vec(&mut m, row, d.u(j), &h.grad_u(x, u), 1.0);
            }
        }
        for (i, c) in pij.c0.iter().enumerate() {
            push_vec(&mut m, d.nh * d.big_n + i, 0, &c.grad(&z[..d.n]), 1.0);
        }
        m
    };
    let (obj, grad) = objective_parts(p, d);
    let (lo, hi) = bounds(problem, &d, n_vars);
    let layout = Layout {
        vars: var_blocks(&d, false),
        eq: row_blocks(&[("dynamics", d.big_n, d.n)]),
        ineq: row_blocks(&[("mixed", d.big_n, d.nh), ("c0", 1, d.nc0)]),
    };
    let nlp = NlpProblem::new(n_vars, obj, grad)
        .with_eq(n_eq, eq, eq_jac)
        .with_ineq(n_ineq, ineq, ineq_jac)
        .with_bounds(lo, hi)
        .with_layout(layout)
        .with_cliques(cliques(&d, false));
    nlp.validate()?;
    Ok(nlp)
}

/// Forward-Euler transcription with the normal-cone slack as a variable.
pub fn transcribe_complementarity(problem: &ProblemSpec, cfg: &TranscriptionConfig) -> Result<NlpProblem> {
    cfg.validate()?;
    if cfg.mode != Mode::Complementarity {
        return Err(Error::InvalidArgument("complementarity transcription needs complementarity mode".into()));
    }
    problem.validate()?;
    let rho = resolve_rho(problem, cfg)?;
    let eps = cfg.epsilon;
    let d = Dims::new(problem, cfg.intervals);
    let bn = d.big_n;
    let n_vars = d.n * (bn + 1) + (d.m + 1) * bn;
    let n_eq = d.n * bn;
    // psi at N+1 nodes, mixed, -v, relaxed complementarity, cap, c0
    let off_h = bn + 1;
    let off_sign = off_h + d.nh * bn;
    let off_comp = off_sign + bn;
    let off_cap = off_comp + bn;
    let off_c0 = off_cap + bn;
    let n_ineq = off_c0 + d.nc0;
    let p = Arc::new(problem.clone());

    let pe = p.clone();
    let eq = move |z: &[f64]| {
        let mut out = Vec::with_capacity(n_eq);
        for j in 0..bn {
            let x0 = &z[d.x(j)..d.x(j) + d.n];
            let x1 = &z[d.x(j + 1)..d.x(j + 1) + d.n];
            let u = &z[d.u(j)..d.u(j) + d.m];
            let v = z[d.v(j)];
            let f = pe.f.eval(x0, u);
            let g = pe.psi.grad(x0);
            for k in 0..d.n {
                out.push(x1[k] - x0[k] - d.dt * (f[k] - v * g[k]));
            }
        }
        out
    };
    let pj = p.clone();
    let eq_jac = move |z: &[f64]| {
        let mut m = SparseMatrix::new(n_eq, n_vars);
        for j in 0..bn {
            let x0 = &z[d.x(j)..d.x(j) + d.n];
            let u = &z[d.u(j)..d.u(j) + d.m];
            let v = z[d.v(j)];
            let row = j * d.n;
            for k in 0..d.n {
                m.push(row + k, d.x(j + 1) + k, 1.0);
            }
            let jx = -DMatrix::identity(d.n, d.n) - (pj.f.jac_x(x0, u) - pj.psi.hess(x0) * v) * d.dt;
            push_dense(&mut m, row, d.x(j), &jx, 1.0);
            push_dense(&mut m, row, d.u(j), &pj.f.jac_u(x0, u), -d.dt);
            let g = pj.psi.grad(x0);
            for k in 0..d.n {
                if g[k] != 0.0 {
                    m.push(row + k, d.v(j), d.dt * g[k]);
                }
            }
        }
        m
    };
    let pi = p.clone();
    let ineq = move |z: &[f64]| {
        let mut out = vec![0.0; n_ineq];
        for j in 0..=bn {
            out[j] = pi.psi.eval(&z[d.x(j)..d.x(j) + d.n]);
        }
        for j in 0..bn {
            let x = &z[d.x(j)..d.x(j) + d.n];
            let u = &z[d.u(j)..d.u(j) + d.m];
            let v = z[d.v(j)];
            for (i, h) in pi.mixed.iter().enumerate() {
                out[off_h + j * d.nh + i] = h.eval(x, u);
            }
            out[off_sign + j] = -v;
            out[off_comp + j] = -v * out[j] - eps;
            let g = pi.psi.grad(x);
            out[off_cap + j] = v * v * dot(&g, &g) - rho * rho;
        }
        for (i, c) in pi.c0.iter().enumerate() {
            out[off_c0 + i] = c.eval(&z[..d.n]);
        }
        out
    };
    let pij = p.clone();
    let ineq_jac = move |z: &[f64]| {
        let mut m = SparseMatrix::new(n_ineq, n_vars);
        for j in 0..=bn {
            push_vec(&mut m, j, d.x(j), &pij.psi.grad(&z[d.x(j)..d.x(j) + d.n]), 1.0);
        }
        for j in 0..bn {
            let x = &z[d.x(j)..d.x(j) + d.n];
            let u = &z[d.u(j)..d.u(j) + d.m];
            let v = z[d.v(j)];
            for (i, h) in pij.mixed.iter().enumerate() {
                let row = off_h + j * d.nh + i;
                push_vec(&mut m, row, d.x(j), &h.grad_x(x, u), 1.0);
                push_vec(&mut m, row, d.u(j), &h.grad_u(x, u), 1.0);
            }
            m.push(off_sign + j, d.v(j), -1.0);
            let psi = pij.psi.eval(x);
            let g = pij.psi.grad(x);
            push_vec(&mut m, off_comp + j, d.x(j), &g, -v);
            if psi != 0.0 {
                m.push(off_comp + j, d.v(j), -psi);
            }
            // d/dx |v grad psi|^2 = 2 v^2 Hess psi grad psi
            let hg = pij.psi.hess(x) * nalgebra::DVector::from_column_slice(&g);
            push_vec(&mut m, off_cap + j, d.x(j), hg.as_slice(), 2.0 * v * v);
            let gg = dot(&g, &g);
            if v != 0.0 && gg != 0.0 {
                m.push(off_cap + j, d.v(j), 2.0 * v * gg);
            }
        }
        for (i, c) in pij.c0.iter().enumerate() {
            push_vec(&mut m, off_c0 + i, 0, &c.grad(&z[..d.n]), 1.0);
        }
        m
    };
    let (obj, grad) = objective_parts(p, d);
    let (lo, hi) = bounds(problem, &d, n_vars);
    let layout = Layout {
        vars: var_blocks(&d, true),
        eq: row_blocks(&[("dynamics", bn, d.n)]),
        ineq: row_blocks(&[
            ("psi", bn + 1, 1),
            ("mixed", bn, d.nh),
            ("slack_sign", bn, 1),
            ("complementarity", bn, 1),
            ("cap", bn, 1),
            ("c0", 1, d.nc0),
        ]),
    };
    let nlp = NlpProblem::new(n_vars, obj, grad)
        .with_eq(n_eq, eq, eq_jac)
        .with_ineq(n_ineq, ineq, ineq_jac)
        .with_bounds(lo, hi)
        .with_layout(layout)
        .with_cliques(cliques(&d, true));
    nlp.validate()?;
    Ok(nlp)
}

pub fn transcribe(problem: &ProblemSpec, cfg: &TranscriptionConfig) -> Result<NlpProblem> {
    match cfg.mode {
        Mode::Penalty => transcribe_penalty(problem, cfg),
        Mode::Complementarity => transcribe_complementarity(problem, cfg),
    }
}

fn layout_block<'a>(nlp: &'a NlpProblem, name: &str) -> Result<&'a Block> {
    nlp.layout
        .var(name)
        .ok_or_else(|| Error::InvalidArgument(format!("NLP layout has no '{name}' block")))
}

/// Splits a variable vector into states, controls and slacks.
pub fn extract_trajectory(nlp: &NlpProblem, z: &[f64]) -> Result<StateTrajectory> {
    ensure_dim("NLP point", nlp.n_vars, z.len())?;
    let xb = layout_block(nlp, "x")?;
    let ub = layout_block(nlp, "u")?;
    let states = (0..xb.count).map(|j| xb.item(z, j).to_vec()).collect();
    let controls = (0..ub.count).map(|j| ub.item(z, j).to_vec()).collect();
    let slacks = nlp.layout.var("v").map(|vb| (0..vb.count).map(|j| z[vb.at(j, 0)]).collect());
    StateTrajectory::new(states, controls, slacks)
}

/// Inverse of [`extract_trajectory`].
pub fn flatten(nlp: &NlpProblem, traj: &StateTrajectory) -> Result<Vec<f64>> {
    let xb = layout_block(nlp, "x")?;
    let ub = layout_block(nlp, "u")?;
    ensure_dim("trajectory nodes", xb.count, traj.states.len())?;
    ensure_dim("trajectory controls", ub.count, traj.controls.len())?;
    let mut z = vec![0.0; nlp.n_vars];
    for (j, x) in traj.states.iter().enumerate() {
        ensure_dim("state dimension", xb.width, x.len())?;
        z[xb.at(j, 0)..xb.at(j, 0) + xb.width].copy_from_slice(x);
    }
    for (j, u) in traj.controls.iter().enumerate() {
        ensure_dim("control dimension", ub.width, u.len())?;
        z[ub.at(j, 0)..ub.at(j, 0) + ub.width].copy_from_slice(u);
    }
    if let Some(vb) = nlp.layout.var("v") {
        let v = traj
            .slacks
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("complementarity layout needs slacks".into()))?;
        ensure_dim("slacks", vb.count, v.len())?;
        for (j, s) in v.iter().enumerate() {
            z[vb.at(j, 0)] = *s;
        }
    }
    Ok(z)
}

/// Normal-cone slacks read off the catch-up projections:
/// `v_j = lambda_j / dt` where `x_{j+1} = x_j + dt f - lambda_j grad psi(x_{j+1})`.
pub fn catchup_slacks(problem: &ProblemSpec, traj: &StateTrajectory) -> Vec<f64> {
    let dt = traj.grid.dt();
    (0..traj.grid.intervals)
        .map(|j| {
            let x0 = &traj.states[j];
            let x1 = &traj.states[j + 1];
            let f = problem.f.eval(x0, &traj.controls[j]);
            let g = problem.psi.grad(x1);
            let gg = dot(&g, &g);
            if gg == 0.0 {
                return 0.0;
            }
            let disp: Vec<f64> = (0..x0.len()).map(|k| x0[k] + dt * f[k] - x1[k]).collect();
            (dot(&disp, &g) / (gg * dt)).max(0.0)
        })
        .collect()
}

/// Starting point for the NLP built by simulating `control`.
pub fn initial_guess(
    problem: &ProblemSpec,
    cfg: &TranscriptionConfig,
    control: &ControlSignal,
    nlp: &NlpProblem,
) -> Result<Vec<f64>> {
    let grid = Grid::new(cfg.intervals)?;
    let ctrl = if control.grid == grid {
        control.clone()
    } else {
        control.resample(grid)
    };
    let x0 = problem.initial_state();
    let traj = match cfg.mode {
        Mode::Penalty => simulate_penalty_from(problem, &ctrl, cfg.gamma, 4, &x0)?,
        Mode::Complementarity => {
            let mut t = simulate_catchup_from(problem, &ctrl, &x0)?;
            t.slacks = Some(catchup_slacks(problem, &t));
            t
        }
    };
    flatten(nlp, &traj)
}

/// Sizes and index map of a transcription, for debugging output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutDump {
    pub n_vars: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
    pub layout: Layout,
}

pub fn layout_dump(nlp: &NlpProblem) -> LayoutDump {
    LayoutDump {
        n_vars: nlp.n_vars,
        n_eq: nlp.n_eq,
        n_ineq: nlp.n_ineq,
        layout: nlp.layout.clone(),
    }
}
