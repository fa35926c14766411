use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{max_with_index, ConditionResult, ResidualReport, Tolerances};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{dot, nnls, norm2, norm_inf, vec_mat};
use crate::model::{check_assumptions, ProblemSpec};
use crate::nlp::NlpProblem;
use crate::sim::StateTrajectory;
use crate::solver::{SolveResult, SolveStatus};
use crate::transcribe::{extract_trajectory, Mode, TranscriptionConfig};

const MAX_DRAWS: usize = 200;
const ASCENT_STEPS: usize = 20;

/// Discrete multipliers for the regular case, indexed by grid node.
///
/// `p` has `N + 1` entries, `nu` one row per interval (one column per mixed
/// constraint). `xi` and `eta` are the penalty-generated factors
/// `gamma e^{gamma psi(x_j)}` and `dt gamma^2 e^{gamma psi(x_j)}`; they do not
/// scale with the multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularCertificate {
    pub gamma: f64,
    pub lambda0: f64,
    pub p: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    /// `eta_j <p_j, grad psi(x_j)> / dt`, the signed penalty measure density.
    pub eta_signed: Vec<f64>,
    /// Multipliers of the active `c0` constraints (inequality form of `C0`).
    pub c0: Vec<f64>,
    pub kappa_obs: f64,
    /// Factor the raw multipliers were divided by.
    pub scale: f64,
}

impl RegularCertificate {
    /// Builds a normalized certificate from raw multipliers along `traj`.
    pub fn from_multipliers(
        problem: &ProblemSpec,
        traj: &StateTrajectory,
        gamma: f64,
        lambda0: f64,
        p: Vec<Vec<f64>>,
        nu: Vec<Vec<f64>>,
        c0: Vec<f64>,
    ) -> Result<Self> {
        traj.check_dims(problem)?;
        let big_n = traj.grid.intervals;
        ensure_dim("costate nodes", big_n + 1, p.len())?;
        ensure_dim("mixed multiplier intervals", big_n, nu.len())?;
        ensure_dim("c0 multipliers", problem.c0.len(), c0.len())?;
        for pj in &p {
            ensure_dim("costate dimension", problem.state_dim(), pj.len())?;
        }
        for nj in &nu {
            ensure_dim("mixed multiplier width", problem.n_mixed(), nj.len())?;
        }
        if !(gamma > 0.0) || !(lambda0 >= 0.0) {
            return Err(Error::InvalidArgument("gamma must be positive and lambda0 non-negative".into()));
        }
        let dt = traj.grid.dt();
        let xi: Vec<f64> = traj
            .states
            .iter()
            .map(|x| gamma * (gamma * problem.psi.eval(x)).exp())
            .collect();
        let eta: Vec<f64> = xi.iter().map(|v| dt * gamma * v).collect();
        let mut cert = Self {
            gamma,
            lambda0,
            eta_signed: vec![0.0; big_n + 1],
            p,
            nu,
            xi,
            eta,
            c0,
            kappa_obs: 0.0,
            scale: 1.0,
        };
        let s = cert.lambda0 + cert.p.iter().map(|v| norm_inf(v)).fold(0.0, f64::max);
        let nu_max = cert.nu.iter().map(|v| norm_inf(v)).fold(0.0, f64::max);
        if s.max(nu_max) < 1e-14 || s < 1e-14 || !s.is_finite() {
            return Err(Error::DegenerateNormalization(1e-14));
        }
        cert.rescale(1.0 / s);
        cert.scale = s;
        cert.eta_signed = traj
            .states
            .iter()
            .enumerate()
            .map(|(j, x)| cert.eta[j] * dot(&cert.p[j], &problem.psi.grad(x)) / dt)
            .collect();
        cert.kappa_obs = (0..big_n)
            .map(|j| norm2(&cert.nu[j]) / (cert.lambda0 + norm2(&cert.p[j])))
            .fold(0.0, f64::max);
        Ok(cert)
    }

    fn rescale(&mut self, c: f64) {
        self.lambda0 *= c;
        for v in self.p.iter_mut().chain(self.nu.iter_mut()) {
            v.iter_mut().for_each(|a| *a *= c);
        }
        self.c0.iter_mut().for_each(|a| *a *= c);
    }

    /// Same multipliers multiplied by `c > 0`, without renormalizing.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.rescale(c);
        out.eta_signed.iter_mut().for_each(|a| *a *= c);
        out.scale /= c;
        out
    }

    /// Rescales so that `lambda0 + max_j |p_j|_inf = 1`.
    pub fn normalized(&self) -> Self {
        let s = self.lambda0 + self.p.iter().map(|v| norm_inf(v)).fold(0.0, f64::max);
        if s > 0.0 {
            self.scaled(1.0 / s)
        } else {
            self.clone()
        }
    }

    pub fn intervals(&self) -> usize {
        self.nu.len()
    }
}

/// Reads the regular certificate off a converged penalty-mode solve.
///
/// `p_j` is the multiplier of the dynamics block `j` (`j < N`) and
/// `p_N = -lambda0 grad g(x_N)`; `nu_j` is the mixed multiplier over `dt`.
pub fn extract_regular(
    problem: &ProblemSpec,
    cfg: &TranscriptionConfig,
    nlp: &NlpProblem,
    solve: &SolveResult,
) -> Result<RegularCertificate> {
    if cfg.mode != Mode::Penalty {
        return Err(Error::InvalidArgument("regular certificate needs a penalty-mode solve".into()));
    }
    if solve.status != SolveStatus::Converged {
        return Err(Error::NotConverged(format!("status {:?}, kkt {:e}", solve.status, solve.kkt.max())));
    }
    let traj = extract_trajectory(nlp, &solve.z_star)?;
    let big_n = cfg.intervals;
    ensure_dim("solve intervals", big_n, traj.grid.intervals)?;
    let dt = traj.grid.dt();
    let dyn_block = nlp.layout.eq_block("dynamics").ok_or_else(|| missing("dynamics"))?;
    let mixed = nlp.layout.ineq_block("mixed").ok_or_else(|| missing("mixed"))?;
    let c0b = nlp.layout.ineq_block("c0").ok_or_else(|| missing("c0"))?;
    let lambda0 = 1.0;
    let mut p: Vec<Vec<f64>> = (0..big_n).map(|j| dyn_block.item(&solve.mu_eq, j).to_vec()).collect();
    p.push(problem.g.grad(traj.terminal()).iter().map(|v| -lambda0 * v).collect());
    let nu = (0..big_n)
        .map(|j| mixed.item(&solve.mu_ineq, j).iter().map(|b| b / dt).collect())
        .collect();
    let c0 = solve.mu_ineq[c0b.start..c0b.end()].to_vec();
    RegularCertificate::from_multipliers(problem, &traj, cfg.gamma, lambda0, p, nu, c0)
}

fn missing(name: &str) -> Error {
    Error::InvalidArgument(format!("NLP layout has no '{name}' block"))
}

/// `max_u <p, f(x1, u)> - lambda0 L(t, x, u)` over sampled `u` in `Omega(x)`.
struct Hamiltonian<'a> {
    problem: &'a ProblemSpec,
    t: f64,
    x: &'a [f64],
    x1: &'a [f64],
    p: &'a [f64],
    lambda0: f64,
}

impl Hamiltonian<'_> {
    fn value(&self, u: &[f64]) -> f64 {
        dot(self.p, &self.problem.f.eval(self.x1, u)) - self.lambda0 * self.problem.running_cost_value(self.t, self.x, u)
    }

    fn grad(&self, u: &[f64]) -> Vec<f64> {
        let mut g = vec_mat(self.p, &self.problem.f.jac_u(self.x1, u));
        if let Some(l) = &self.problem.running_cost {
            for (a, b) in g.iter_mut().zip(l.grad_u(self.t, self.x, u)) {
                *a -= self.lambda0 * b;
            }
        }
        g
    }

    fn feasible(&self, u: &[f64]) -> bool {
        self.problem.mixed.iter().all(|h| h.eval(self.x, u) <= 0.0)
    }

    /// Best sampled value minus the value at `u_ref`.
    fn gap(&self, u_ref: &[f64], bound: f64, rng: &mut ChaCha8Rng) -> f64 {
        let m = u_ref.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..MAX_DRAWS {
            let u: Vec<f64> = (0..m).map(|_| rng.gen_range(-bound..=bound)).collect();
            if !self.feasible(&u) {
                continue;
            }
            let v = self.value(&u);
            if best.as_ref().map_or(true, |(b, _)| v > *b) {
                best = Some((v, u));
            }
        }
        let Some((mut hv, mut u)) = best else {
            return 0.0;
        };
        let mut step = 0.1 * bound;
        for _ in 0..ASCENT_STEPS {
            let g = self.grad(&u);
            let gn = norm2(&g);
            if gn == 0.0 {
                break;
            }
            let mut moved = false;
            while step > 1e-12 * bound {
                let trial: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a + step * b / gn).collect();
                if self.feasible(&trial) {
                    let tv = self.value(&trial);
                    if tv > hv {
                        hv = tv;
                        u = trial;
                        moved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        (hv - self.value(u_ref)).max(0.0)
    }
}

fn node_rng(seed: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    rng
}

/// Checks the six regular conditions plus the contact-support property.
pub fn verify_regular(
    problem: &ProblemSpec,
    traj: &StateTrajectory,
    cert: &RegularCertificate,
    tol: &Tolerances,
    seed: u64,
) -> Result<ResidualReport> {
    traj.check_dims(problem)?;
    let big_n = traj.grid.intervals;
    let (n, nh) = (problem.state_dim(), problem.n_mixed());
    ensure_dim("certificate intervals", big_n, cert.intervals())?;
    ensure_dim("costate nodes", big_n + 1, cert.p.len())?;
    ensure_dim("xi nodes", big_n + 1, cert.xi.len())?;
    ensure_dim("eta nodes", big_n + 1, cert.eta.len())?;
    ensure_dim("c0 multipliers", problem.c0.len(), cert.c0.len())?;
    for j in 0..=big_n {
        ensure_dim("costate dimension", n, cert.p[j].len())?;
        if j < big_n {
            ensure_dim("mixed multiplier width", nh, cert.nu[j].len())?;
        }
    }
    let dt = traj.grid.dt();
    let lam0 = cert.lambda0;
    let xs = &traj.states;
    let us = &traj.controls;
    let mut rep = ResidualReport::new("regular maximum principle");

    // (1)
    let p_max = cert.p.iter().map(|v| norm_inf(v)).fold(0.0, f64::max);
    let eta_sum: f64 = cert.eta[1..].iter().sum();
    rep.push(ConditionResult::exceeds("1-nontriviality", lam0 + p_max + eta_sum, tol.nontriviality));

    // (2) adjoint, j = 1..N
    let adjoint: Vec<(f64, f64)> = (1..=big_n)
        .into_par_iter()
        .map(|j| {
            let (pp, pj) = (&cert.p[j - 1], &cert.p[j]);
            let x = &xs[j];
            let grad = problem.psi.grad(x);
            let a = problem.f.jac_x(x, &us[j - 1]) - problem.psi.hess(x) * cert.xi[j];
            let pa = vec_mat(pp, &a);
            let pq = dot(pp, &grad) * cert.eta[j];
            let mut r: Vec<f64> = (0..n).map(|k| pp[k] - pj[k] - dt * pa[k] + pq * grad[k]).collect();
            if j < big_n {
                for (i, h) in problem.mixed.iter().enumerate() {
                    let hx = h.grad_x(x, &us[j]);
                    for k in 0..n {
                        r[k] += dt * cert.nu[j][i] * hx[k];
                    }
                }
                if let Some(l) = &problem.running_cost {
                    let lx = l.grad_x(traj.grid.t(j), x, &us[j]);
                    for k in 0..n {
                        r[k] += dt * lam0 * lx[k];
                    }
                }
            }
            (norm_inf(&r), r.iter().map(|v| v.abs()).sum())
        })
        .collect();
    let (adj_max, adj_at) = max_with_index(adjoint.iter().map(|r| r.0));
    rep.push(ConditionResult::at_most("2-adjoint", adj_max, tol.adjoint, adj_at.map(|i| i + 1)));
    rep.diag("adjoint_l1", adjoint.iter().map(|r| r.1).sum());

    // (3) terminal and initial boundary
    let gn = problem.g.grad(traj.terminal());
    let term: Vec<f64> = (0..n).map(|k| cert.p[big_n][k] + lam0 * gn[k]).collect();
    let terminal = norm_inf(&term);
    let initial = if problem.c0_is_singleton() || big_n == 0 {
        0.0
    } else {
        let x0 = &xs[0];
        let mut q = cert.p[0].clone();
        for (i, h) in problem.mixed.iter().enumerate() {
            let hx = h.grad_x(x0, &us[0]);
            for k in 0..n {
                q[k] -= dt * cert.nu[0][i] * hx[k];
            }
        }
        if let Some(l) = &problem.running_cost {
            for (k, v) in l.grad_x(0.0, x0, &us[0]).iter().enumerate() {
                q[k] -= dt * lam0 * v;
            }
        }
        let active: Vec<Vec<f64>> = problem
            .c0
            .iter()
            .filter(|c| c.eval(x0) >= -tol.active_tol)
            .map(|c| c.grad(x0))
            .collect();
        if active.is_empty() {
            norm2(&q)
        } else {
            let a = DMatrix::from_fn(n, active.len(), |r, c| active[c][r]);
            let w = nnls(&a, &q);
            let fit = a * nalgebra::DVector::from_vec(w);
            (0..n).map(|k| (fit[k] - q[k]).powi(2)).sum::<f64>().sqrt()
        }
    };
    let (bnd, bnd_at) = if initial >= terminal { (initial, 0) } else { (terminal, big_n) };
    rep.push(ConditionResult::at_most("3-boundary", bnd, tol.boundary, Some(bnd_at)));
    rep.diag("boundary_terminal", terminal);
    rep.diag("boundary_initial", initial);

    // (4) maximum condition
    let m_est = match tol.m_est {
        Some(m) => m,
        None => check_assumptions(problem, 1000, 0)?.m_est,
    };
    let u_max = us.iter().map(|u| norm_inf(u)).fold(0.0, f64::max);
    let bound = 2.0 * (1.0 + u_max);
    let gaps: Vec<f64> = (0..big_n)
        .into_par_iter()
        .map(|j| {
            let ham = Hamiltonian {
                problem,
                t: traj.grid.t(j),
                x: &xs[j],
                x1: &xs[j + 1],
                p: &cert.p[j],
                lambda0: lam0,
            };
            ham.gap(&us[j], bound, &mut node_rng(seed, j))
        })
        .collect();
    let (gap, gap_at) = max_with_index(gaps.iter().copied());
    rep.push(ConditionResult::at_most("4-maximum", gap, tol.gap_factor * (1.0 + p_max) * m_est, gap_at));

    // (5)
    let c5: Vec<f64> = (0..big_n)
        .into_par_iter()
        .map(|j| {
            let (x, u) = (&xs[j], &us[j]);
            let mut r: Vec<f64> = vec_mat(&cert.p[j], &problem.f.jac_u(&xs[j + 1], u)).iter().map(|v| -v).collect();
            for (i, h) in problem.mixed.iter().enumerate() {
                for (a, b) in r.iter_mut().zip(h.grad_u(x, u)) {
                    *a += cert.nu[j][i] * b;
                }
            }
            if let Some(l) = &problem.running_cost {
                for (a, b) in r.iter_mut().zip(l.grad_u(traj.grid.t(j), x, u)) {
                    *a += lam0 * b;
                }
            }
            norm_inf(&r)
        })
        .collect();
    let (c5_max, c5_at) = max_with_index(c5.iter().copied());
    rep.push(ConditionResult::at_most("5-control-gradient", c5_max, tol.condition5, c5_at));

    // (6)
    let kappa = (0..big_n)
        .map(|j| norm2(&cert.nu[j]) / (lam0 + norm2(&cert.p[j])))
        .fold(0.0, f64::max);
    let mut c6 = ConditionResult::at_most("6-kappa", kappa, f64::MAX, None);
    c6.pass = kappa.is_finite();
    rep.push(c6);
    let neg_nu = cert.nu.iter().flatten().fold(0.0, |a: f64, v| a.max(-v));
    rep.diag("nu_negative_part", neg_nu);

    // support of xi and eta: the penalty equilibrium sits a distance of
    // order ln(gamma)/gamma inside C, so the band is widened by that much
    let band = tol.active_tol + 3.0 * cert.gamma.ln().max(0.0) / cert.gamma;
    let support = |vals: &[f64], id: &str| {
        let off: Vec<f64> = (1..=big_n)
            .map(|j| {
                if vals[j] > tol.support && problem.psi.eval(&xs[j]) < -band {
                    vals[j]
                } else {
                    0.0
                }
            })
            .collect();
        let (v, at) = max_with_index(off);
        ConditionResult::at_most(id, v, tol.support, if v > 0.0 { at.map(|i| i + 1) } else { None })
    };
    rep.push(support(&cert.eta, "support-eta"));
    rep.push(support(&cert.xi, "support-xi"));
    rep.diag("contact_band", band);
    rep.diag("eta_sum", eta_sum);
    rep.diag("kappa_obs", kappa);
    rep.diag("m_est", m_est);
    Ok(rep)
}
