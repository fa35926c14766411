use serde::{Deserialize, Serialize};

use super::{is_spike, max_with_index, ConditionResult, ResidualReport, Tolerances};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{dot, mat_vec, norm_inf, vec_mat};
use crate::model::ProblemSpec;
use crate::nlp::NlpProblem;
use crate::sim::StateTrajectory;
use crate::solver::{SolveResult, SolveStatus};
use crate::transcribe::{extract_trajectory, Mode, TranscriptionConfig};

pub const CLOSED_IMAGE_BANNER: &str = "closed-image hypothesis not verified";

/// Multipliers below this are never promoted to atoms.
const SPIKE_FLOOR: f64 = 1e-8;

/// Discrete multipliers for the non-regular case.
///
/// The terminal cost is folded into the running cost by the constant shift
/// `c = lambda0 grad g(x_N)`, so `lambda` is the shifted costate and ends at
/// zero. Densities (`z*`, `w`) and atoms (`zeta*`, `varpi`) partition the raw
/// NLP multipliers: `a_j = zeta2_j + dt z2_j` and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonRegularCertificate {
    pub lambda0: f64,
    pub lift: Vec<f64>,
    /// Node values `0..N-1` (`z2`, `zeta2`: `0..N`).
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    pub zeta1: Vec<f64>,
    pub zeta2: Vec<f64>,
    pub zeta3: Vec<Vec<f64>>,
    pub varpi: Vec<f64>,
    /// Multipliers of the slack cap `v^2 |grad psi|^2 <= rho^2`.
    pub cap: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
}

impl NonRegularCertificate {
    pub fn intervals(&self) -> usize {
        self.z1.len()
    }

    /// Unshifted costate `lambda_j + c`.
    pub fn costate(&self, j: usize) -> Vec<f64> {
        self.lambda[j].iter().zip(&self.lift).map(|(a, b)| a + b).collect()
    }

    /// Recomputes `alpha` and `p` from the atoms along `traj`.
    pub fn rebuild_alpha(&mut self, problem: &ProblemSpec, traj: &StateTrajectory) -> Result<()> {
        let big_n = self.intervals();
        let n = problem.state_dim();
        let v = slacks(traj)?;
        let mut alpha = vec![vec![0.0; n]; big_n + 1];
        for j in (0..big_n).rev() {
            let th = theta(problem, traj, v, self, j + 1);
            alpha[j] = (0..n).map(|k| alpha[j + 1][k] - th[k]).collect();
        }
        self.p = (0..=big_n)
            .map(|j| (0..n).map(|k| self.lambda[j][k] + alpha[j][k]).collect())
            .collect();
        self.alpha = alpha;
        Ok(())
    }
}

fn slacks(traj: &StateTrajectory) -> Result<&[f64]> {
    traj.slacks
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("non-regular certificate needs a trajectory with slacks".into()))
}

/// Atomic increment at node `j`: `zeta2 grad psi + zeta3 h_x + v varpi grad psi`.
fn theta(problem: &ProblemSpec, traj: &StateTrajectory, v: &[f64], c: &NonRegularCertificate, j: usize) -> Vec<f64> {
    let x = &traj.states[j];
    let g = problem.psi.grad(x);
    let big_n = c.intervals();
    let mut out: Vec<f64> = g.iter().map(|gk| c.zeta2[j] * gk).collect();
    if j < big_n {
        for (i, h) in problem.mixed.iter().enumerate() {
            for (o, hx) in out.iter_mut().zip(h.grad_x(x, &traj.controls[j])) {
                *o += c.zeta3[j][i] * hx;
            }
        }
        for (o, gk) in out.iter_mut().zip(&g) {
            *o += v[j] * c.varpi[j] * gk;
        }
    }
    out
}

fn split(values: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
    let mut dens = vec![0.0; values.len()];
    let mut atoms = vec![0.0; values.len()];
    for j in 0..values.len() {
        if is_spike(values, j, SPIKE_FLOOR) {
            atoms[j] = values[j];
        } else {
            dens[j] = values[j] / dt;
        }
    }
    (dens, atoms)
}

fn missing(name: &str) -> Error {
    Error::InvalidArgument(format!("NLP layout has no '{name}' block"))
}

/// Reads the non-regular certificate off the final stage of a
/// complementarity-mode solve.
pub fn extract_nonregular(
    problem: &ProblemSpec,
    cfg: &TranscriptionConfig,
    nlp: &NlpProblem,
    solve: &SolveResult,
) -> Result<NonRegularCertificate> {
    if cfg.mode != Mode::Complementarity {
        return Err(Error::InvalidArgument("non-regular certificate needs a complementarity-mode solve".into()));
    }
    if solve.status != SolveStatus::Converged {
        return Err(Error::NotConverged(format!("status {:?}, kkt {:e}", solve.status, solve.kkt.max())));
    }
    let traj = extract_trajectory(nlp, &solve.z_star)?;
    let big_n = cfg.intervals;
    ensure_dim("solve intervals", big_n, traj.grid.intervals)?;
    let (n, nh) = (problem.state_dim(), problem.n_mixed());
    let dt = traj.grid.dt();
    let block = |name: &str| nlp.layout.ineq_block(name).ok_or_else(|| missing(name));
    let dyn_block = nlp.layout.eq_block("dynamics").ok_or_else(|| missing("dynamics"))?;
    let (pb, hb, sb, cb, capb) =
        (block("psi")?, block("mixed")?, block("slack_sign")?, block("complementarity")?, block("cap")?);
    let mu = &solve.mu_ineq;
    let a: Vec<f64> = (0..=big_n).map(|j| mu[pb.at(j, 0)]).collect();
    let b: Vec<Vec<f64>> = (0..big_n).map(|j| hb.item(mu, j).to_vec()).collect();
    let cs: Vec<f64> = (0..big_n).map(|j| mu[sb.at(j, 0)]).collect();
    let d: Vec<f64> = (0..big_n).map(|j| mu[cb.at(j, 0)]).collect();
    let cap: Vec<f64> = (0..big_n).map(|j| mu[capb.at(j, 0)]).collect();

    let lambda0 = 1.0;
    let lift: Vec<f64> = problem.g.grad(traj.terminal()).iter().map(|v| lambda0 * v).collect();
    let mut lambda: Vec<Vec<f64>> = (0..big_n)
        .map(|j| {
            dyn_block
                .item(&solve.mu_eq, j)
                .iter()
                .zip(&lift)
                .map(|(m, c)| -m - c)
                .collect()
        })
        .collect();
    lambda.push(vec![0.0; n]);

    let (z2, zeta2) = split(&a, dt);
    let mut z3 = vec![vec![0.0; nh]; big_n];
    let mut zeta3 = vec![vec![0.0; nh]; big_n];
    for i in 0..nh {
        let col: Vec<f64> = b.iter().map(|r| r[i]).collect();
        let (dens, atoms) = split(&col, dt);
        for j in 0..big_n {
            z3[j][i] = dens[j];
            zeta3[j][i] = atoms[j];
        }
    }
    let (wd, wa) = split(&d, dt);
    let w: Vec<f64> = wd.iter().map(|v| -v).collect();
    let varpi: Vec<f64> = wa.iter().map(|v| -v).collect();
    let zeta1: Vec<f64> = (0..big_n)
        .map(|j| cs[j].min(problem.psi.eval(&traj.states[j]) * varpi[j]).max(0.0))
        .collect();
    let z1: Vec<f64> = (0..big_n).map(|j| (cs[j] - zeta1[j]) / dt).collect();

    let mut cert = NonRegularCertificate {
        lambda0,
        lift,
        z1,
        z2,
        z3,
        w,
        zeta1,
        zeta2,
        zeta3,
        varpi,
        cap,
        lambda,
        alpha: Vec::new(),
        p: Vec::new(),
    };
    cert.rebuild_alpha(problem, &traj)?;
    Ok(cert)
}

fn check_dims(problem: &ProblemSpec, traj: &StateTrajectory, c: &NonRegularCertificate) -> Result<()> {
    traj.check_dims(problem)?;
    let big_n = traj.grid.intervals;
    let (n, nh) = (problem.state_dim(), problem.n_mixed());
    ensure_dim("certificate intervals", big_n, c.intervals())?;
    ensure_dim("slacks", big_n, slacks(traj)?.len())?;
    for (ctx, len) in [
        ("z2 nodes", c.z2.len()),
        ("zeta2 nodes", c.zeta2.len()),
        ("lambda nodes", c.lambda.len()),
        ("alpha nodes", c.alpha.len()),
        ("p nodes", c.p.len()),
    ] {
        ensure_dim(ctx, big_n + 1, len)?;
    }
    for (ctx, len) in [
        ("w", c.w.len()),
        ("zeta1", c.zeta1.len()),
        ("varpi", c.varpi.len()),
        ("cap", c.cap.len()),
        ("z3", c.z3.len()),
        ("zeta3", c.zeta3.len()),
    ] {
        ensure_dim(ctx, big_n, len)?;
    }
    ensure_dim("lift", n, c.lift.len())?;
    for j in 0..=big_n {
        ensure_dim("costate dimension", n, c.lambda[j].len())?;
        ensure_dim("alpha dimension", n, c.alpha[j].len())?;
        ensure_dim("p dimension", n, c.p[j].len())?;
        if j < big_n {
            ensure_dim("z3 width", nh, c.z3[j].len())?;
            ensure_dim("zeta3 width", nh, c.zeta3[j].len())?;
        }
    }
    Ok(())
}

/// Checks nontriviality, slackness, transversality with the costate
/// equation, and the four stationarity conditions.
pub fn verify_nonregular(
    problem: &ProblemSpec,
    traj: &StateTrajectory,
    cert: &NonRegularCertificate,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    check_dims(problem, traj, cert)?;
    let big_n = traj.grid.intervals;
    let n = problem.state_dim();
    let dt = traj.grid.dt();
    let v = slacks(traj)?;
    let (xs, us) = (&traj.states, &traj.controls);
    let lam0 = cert.lambda0;
    let c = &cert.lift;
    let mut rep = ResidualReport::new("non-regular maximum principle");
    rep.banner = Some(CLOSED_IMAGE_BANNER.to_string());

    // (a) z1 and zeta1 excluded
    let l1 = |vals: &[f64]| vals.iter().map(|a| dt * a.abs()).sum::<f64>();
    let nt = lam0
        + l1(&cert.z2)
        + cert.z3.iter().map(|r| l1(r)).sum::<f64>()
        + cert.zeta2.iter().map(|a| a.abs()).sum::<f64>()
        + cert.zeta3.iter().flatten().map(|a| a.abs()).sum::<f64>()
        + l1(&cert.w)
        + cert.varpi.iter().map(|a| a.abs()).sum::<f64>();
    rep.push(ConditionResult::exceeds("a-nontriviality", nt, 0.0));

    // (b) slackness of densities and placement of atoms
    let psi: Vec<f64> = xs.iter().map(|x| problem.psi.eval(x)).collect();
    let hval = |j: usize, i: usize| problem.mixed[i].eval(&xs[j], &us[j]);
    let mut slack = Vec::with_capacity(big_n + 1);
    let mut placement = Vec::with_capacity(big_n + 1);
    for j in 0..=big_n {
        let mut s = (cert.z2[j] * psi[j]).abs();
        let mut pl: f64 = if cert.zeta2[j] > tol.support { psi[j].abs() } else { 0.0 };
        if j < big_n {
            s = s.max((cert.z1[j] * v[j]).abs());
            if cert.zeta1[j] > tol.support {
                pl = pl.max(v[j].abs());
            }
            for i in 0..problem.n_mixed() {
                let hv = hval(j, i);
                s = s.max((cert.z3[j][i] * hv).abs());
                if cert.zeta3[j][i] > tol.support {
                    pl = pl.max(hv.abs());
                }
            }
        }
        slack.push(s);
        placement.push(pl);
    }
    let (s_max, s_at) = max_with_index(slack);
    rep.push(ConditionResult::at_most("b-slackness", s_max, tol.stationarity, s_at));
    let (p_max, p_at) = max_with_index(placement);
    rep.push(ConditionResult::at_most(
        "b-atom-placement",
        p_max,
        tol.active_tol,
        if p_max > 0.0 { p_at } else { None },
    ));

    // (c)
    rep.push(ConditionResult::at_most(
        "c-transversality",
        norm_inf(&cert.lambda[big_n]),
        tol.transversality,
        Some(big_n),
    ));
    let costate: Vec<f64> = (1..=big_n)
        .map(|j| {
            let x = &xs[j];
            let g = problem.psi.grad(x);
            let mut r: Vec<f64> = (0..n).map(|k| cert.p[j - 1][k] - cert.p[j][k]).collect();
            if j == big_n {
                for k in 0..n {
                    r[k] -= dt * cert.z2[j] * g[k];
                }
                return norm_inf(&r);
            }
            let u = &us[j];
            let hess = problem.psi.hess(x);
            let a = problem.f.jac_x(x, u) - &hess * v[j];
            let mut rhs = vec_mat(&cert.lambda[j], &a);
            for (o, q) in rhs.iter_mut().zip(vec_mat(c, &a)) {
                *o += q;
            }
            if let Some(l) = &problem.running_cost {
                for (o, q) in rhs.iter_mut().zip(l.grad_x(traj.grid.t(j), x, u)) {
                    *o += lam0 * q;
                }
            }
            let s = cert.z2[j] + cert.w[j] * v[j];
            for k in 0..n {
                rhs[k] += s * g[k];
            }
            for (i, h) in problem.mixed.iter().enumerate() {
                for (o, q) in rhs.iter_mut().zip(h.grad_x(x, u)) {
                    *o += cert.z3[j][i] * q;
                }
            }
            let hg = mat_vec(&hess, &g);
            for k in 0..n {
                r[k] -= dt * rhs[k] + 2.0 * cert.cap[j] * v[j] * v[j] * hg[k];
            }
            norm_inf(&r)
        })
        .collect();
    let (cr, cr_at) = max_with_index(costate);
    rep.push(ConditionResult::at_most("c-costate", cr, tol.stationarity, cr_at.map(|i| i + 1)));

    // (d)
    let mut s1 = Vec::with_capacity(big_n);
    let mut s2 = Vec::with_capacity(big_n);
    let mut s3 = Vec::with_capacity(big_n);
    let mut s4 = Vec::with_capacity(big_n);
    let mut z1_id = Vec::with_capacity(big_n);
    for j in 0..big_n {
        let (x, u) = (&xs[j], &us[j]);
        let g = problem.psi.grad(x);
        let fu = problem.f.jac_u(x, u);
        let mut r1 = vec_mat(&cert.costate(j), &fu);
        if let Some(l) = &problem.running_cost {
            for (o, q) in r1.iter_mut().zip(l.grad_u(traj.grid.t(j), x, u)) {
                *o += lam0 * q;
            }
        }
        let mut r3 = vec![0.0; r1.len()];
        for (i, h) in problem.mixed.iter().enumerate() {
            let hu = h.grad_u(x, u);
            for k in 0..r1.len() {
                r1[k] += cert.z3[j][i] * hu[k];
                r3[k] += cert.zeta3[j][i] * hu[k];
            }
        }
        s1.push(norm_inf(&r1));
        s3.push(norm_inf(&r3));
        let cap = 2.0 * cert.cap[j] * v[j] * dot(&g, &g) / dt;
        let lam_g = -dot(&cert.lambda[j], &g) - dot(c, &g);
        s2.push((lam_g - cert.z1[j] + cert.w[j] * psi[j] + cap).abs());
        s4.push((-cert.zeta1[j] + psi[j] * cert.varpi[j]).abs());
        z1_id.push((cert.z1[j] - (lam_g + cert.w[j] * psi[j] + cap)).abs());
    }
    for (id, vals) in [("d-s1", s1), ("d-s2", s2), ("d-s3", s3), ("d-s4", s4)] {
        let (m, at) = max_with_index(vals);
        rep.push(ConditionResult::at_most(id, m, tol.stationarity, at));
    }
    let (zi, zi_at) = max_with_index(z1_id);
    rep.push(ConditionResult::at_most("z1-identity", zi, tol.z1_identity, zi_at));
    rep.diag("cap_max", cert.cap.iter().fold(0.0, |a: f64, b| a.max(b.abs())));
    rep.diag("zeta2_total", cert.zeta2.iter().sum());
    rep.diag("nontriviality", nt);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;
    use crate::routes::{solve_complementarity_route, DEFAULT_EPSILON_SCHEDULE};
    use crate::sim::{ControlSignal, Grid};
    use crate::solver::SolverOptions;

    /// Interior trajectory with every multiplier except `z1` zero: running
    /// cost `|u|^2 / 2` and `g = -x1` give `u = (1, 0)` and a shifted costate
    /// that vanishes identically.
    fn classical(big_n: usize) -> (ProblemSpec, StateTrajectory, NonRegularCertificate) {
        let mut p = problems::get("interior-classical").unwrap().spec;
        p.mixed.clear();
        p.running_cost = Some(crate::model::RunningCost::new(
            |_, _, u| 0.5 * dot(u, u),
            |_, x, _| vec![0.0; x.len()],
            |_, _, u| u.to_vec(),
        ));
        let grid = Grid::new(big_n).unwrap();
        let ctrl = ControlSignal::constant(grid, &[1.0, 0.0]);
        let mut traj = crate::sim::simulate_catchup(&p, &ctrl).unwrap();
        traj.slacks = Some(vec![0.0; big_n]);
        // the sign constraint on v carries z1 = -<lambda, grad psi>
        let z1 = (0..big_n).map(|j| 2.0 * traj.states[j][0]).collect();
        let cert = NonRegularCertificate {
            lambda0: 1.0,
            lift: vec![-1.0, 0.0],
            z1,
            z2: vec![0.0; big_n + 1],
            z3: vec![vec![]; big_n],
            w: vec![0.0; big_n],
            zeta1: vec![0.0; big_n],
            zeta2: vec![0.0; big_n + 1],
            zeta3: vec![vec![]; big_n],
            varpi: vec![0.0; big_n],
            cap: vec![0.0; big_n],
            lambda: vec![vec![0.0; 2]; big_n + 1],
            alpha: vec![vec![0.0; 2]; big_n + 1],
            p: vec![vec![0.0; 2]; big_n + 1],
        };
        (p, traj, cert)
    }

    #[test]
    fn classical_reduction() {
        let (p, traj, cert) = classical(20);
        let rep = verify_nonregular(&p, &traj, &cert, &Tolerances::default()).unwrap();
        assert_eq!(rep.banner.as_deref(), Some(CLOSED_IMAGE_BANNER));
        assert!(rep.passed(), "{}", rep.table());
        for c in rep.conditions.iter().filter(|c| c.condition_id != "a-nontriviality") {
            assert!(c.residual <= 1e-8, "{}", rep.table());
        }
        let mut off = cert.clone();
        off.lambda[3][0] = 0.5;
        let rep = verify_nonregular(&p, &traj, &off, &Tolerances::default()).unwrap();
        assert!(rep.failing().contains(&"d-s1"));
    }

    #[test]
    fn interval_pipeline() {
        let p = problems::get("interval-1d").unwrap().spec;
        let cfg = TranscriptionConfig::complementarity(60, 0.0);
        let sol =
            solve_complementarity_route(&p, &cfg, &DEFAULT_EPSILON_SCHEDULE, None, &SolverOptions::default()).unwrap();
        let cert = extract_nonregular(&p, &sol.config, &sol.nlp, &sol.result).unwrap();
        let rep = verify_nonregular(&p, &sol.trajectory, &cert, &Tolerances::default()).unwrap();
        eprintln!("{}", rep.table());
        assert!(rep.passed(), "{}", rep.table());

        let mut doubled = cert.clone();
        doubled.w.iter_mut().for_each(|w| *w *= 2.0);
        let bad = verify_nonregular(&p, &sol.trajectory, &doubled, &Tolerances::default()).unwrap();
        let s2 = bad.get("d-s2").unwrap();
        let j = s2.worst_node.unwrap();
        let expect = (cert.w[j] * p.psi.eval(&sol.trajectory.states[j])).abs();
        assert!((s2.residual - expect).abs() <= 1e-9 + 1e-6 * expect);
    }

    #[test]
    fn extraction_rejects_penalty_mode() {
        let p = problems::get("interval-1d").unwrap().spec;
        let cfg = TranscriptionConfig::penalty(10, 50.0, 0.0);
        let nlp = crate::transcribe::transcribe(&p, &cfg).unwrap();
        let fake = crate::solver::solve(&nlp, &vec![0.5; nlp.n_vars], 1e-6, 1).unwrap();
        assert!(extract_nonregular(&p, &cfg, &nlp, &fake).is_err());
    }
}
