//! Augmented Lagrangian solver for [`NlpProblem`].
//!
//! The outer loop updates multipliers and the penalty parameter; the inner
//! loop minimizes the augmented Lagrangian over the free variables either by
//! a damped Newton method on a banded finite-difference Hessian or by
//! L-BFGS. Variables with `lower == upper` are eliminated, other finite
//! bounds are handled as extra inequality rows.

use std::collections::{BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::fd;
use crate::linalg::{dot, norm_inf, reverse_cuthill_mckee, BandMatrix, SparseMatrix};
use crate::nlp::{KktResiduals, NlpProblem};

const MULTIPLIER_CAP: f64 = 1e8;
const RHO_MAX: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    Newton,
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub inner: InnerMethod,
    pub rho0: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_outer: 50,
            max_inner: 500,
            inner: InnerMethod::Newton,
            rho0: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub z_star: Vec<f64>,
    pub mu_eq: Vec<f64>,
    pub mu_ineq: Vec<f64>,
    /// Signed bound multipliers: `grad F + J_E^T mu_eq + J_I^T mu_ineq +
    /// mu_bounds = 0` on every component.
    pub mu_bounds: Vec<f64>,
    pub status: SolveStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub objective: f64,
    pub rho: f64,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            mu_eq: self.mu_eq.clone(),
            mu_ineq: self.mu_ineq.clone(),
            rho: self.rho,
        }
    }
}

/// Multipliers and penalty parameter carried over from a previous solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub mu_eq: Vec<f64>,
    pub mu_ineq: Vec<f64>,
    pub rho: f64,
}

pub fn solve(nlp: &NlpProblem, z0: &[f64], tol: f64, max_outer: usize) -> Result<SolveResult> {
    let opts = SolverOptions {
        tol,
        max_outer,
        ..SolverOptions::default()
    };
    solve_with(nlp, z0, &opts, None)
}

/// Sparse rows with duplicate entries merged, restricted to free columns.
fn merged_rows(m: &SparseMatrix, col_map: &[Option<usize>]) -> Vec<Vec<(usize, f64)>> {
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m.nrows];
    for &(r, c, v) in &m.entries {
        if let Some(k) = col_map[c] {
            rows[r].push((k, v));
        }
    }
    for row in &mut rows {
        row.sort_by_key(|e| e.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for &(k, v) in row.iter() {
            match out.last_mut() {
                Some(last) if last.0 == k => last.1 += v,
                _ => out.push((k, v)),
            }
        }
        *row = out;
    }
    rows
}

/// One-sided bound turned into `sign * (z_i - bound) <= 0`.
#[derive(Debug, Clone, Copy)]
struct BoundRow {
    var: usize,
    bound: f64,
    sign: f64,
}

/// Sparsity structure of the augmented Lagrangian Hessian in free space.
struct Structure {
    adj: Vec<Vec<usize>>,
    colors: Vec<Vec<usize>>,
    /// `perm[new] = old`
    perm: Vec<usize>,
    pos: Vec<usize>,
    bandwidth: usize,
}

impl Structure {
    fn build(n: usize, cliques: &[Vec<usize>]) -> Self {
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for c in cliques {
            for &a in c {
                for &b in c {
                    if a != b {
                        sets[a].insert(b);
                    }
                }
            }
        }
        let adj: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        // greedy distance-2 coloring
        let mut color = vec![usize::MAX; n];
        let mut colors: Vec<Vec<usize>> = Vec::new();
        let mut forbidden = Vec::new();
        for i in 0..n {
            forbidden.clear();
            for &k in &adj[i] {
                forbidden.push(color[k]);
                for &l in &adj[k] {
                    forbidden.push(color[l]);
                }
            }
            let c = (0..).find(|c| !forbidden.contains(c)).expect("unbounded range");
            color[i] = c;
            if c == colors.len() {
                colors.push(Vec::new());
            }
            colors[c].push(i);
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut pos = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            pos[old] = new;
        }
        let bandwidth = (0..n)
            .flat_map(|i| adj[i].iter().map(move |&k| (i, k)))
            .map(|(i, k)| pos[i].abs_diff(pos[k]))
            .max()
            .unwrap_or(0);
        Self {
            adj,
            colors,
            perm,
            pos,
            bandwidth,
        }
    }
}

/// Values of everything the augmented Lagrangian needs at one point.
struct Eval {
    f: f64,
    ce: Vec<f64>,
    /// original inequalities followed by bound rows
    ci: Vec<f64>,
}

struct Work<'a> {
    nlp: &'a NlpProblem,
    free: Vec<usize>,
    col_map: Vec<Option<usize>>,
    base: Vec<f64>,
    bounds: Vec<BoundRow>,
    structure: Option<Structure>,
}

impl<'a> Work<'a> {
    fn new(nlp: &'a NlpProblem, z0: &[f64], newton: bool) -> Self {
        let n = nlp.n_vars;
        let mut base = z0.to_vec();
        nlp.clamp(&mut base);
        let free: Vec<usize> = (0..n).filter(|&i| !nlp.is_fixed(i)).collect();
        let mut col_map = vec![None; n];
        for (k, &i) in free.iter().enumerate() {
            col_map[i] = Some(k);
        }
        let mut bounds = Vec::new();
        for &i in &free {
            if nlp.lower[i].is_finite() {
                bounds.push(BoundRow {
                    var: i,
                    bound: nlp.lower[i],
                    sign: -1.0,
                });
            }
            if nlp.upper[i].is_finite() {
                bounds.push(BoundRow {
                    var: i,
                    bound: nlp.upper[i],
                    sign: 1.0,
                });
            }
        }
        let structure = newton.then(|| {
            let nf = free.len();
            let cliques: Vec<Vec<usize>> = match &nlp.hessian_cliques {
                Some(cs) => cs
                    .iter()
                    .map(|c| c.iter().filter_map(|&i| col_map[i]).collect())
                    .collect(),
                None => vec![(0..nf).collect()],
            };
            Structure::build(nf, &cliques)
        });
        Self {
            nlp,
            free,
            col_map,
            base,
            bounds,
            structure,
        }
    }

    fn n_free(&self) -> usize {
        self.free.len()
    }

    fn n_ineq_ext(&self) -> usize {
        self.nlp.n_ineq + self.bounds.len()
    }

    fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.base.clone();
        for (k, &i) in self.free.iter().enumerate() {
            z[i] = x[k];
        }
        z
    }

    fn gather(&self, g: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| g[i]).collect()
    }

    fn eval(&self, z: &[f64]) -> Eval {
        let mut ci = self.nlp.ineq(z);
        ci.extend(self.bounds.iter().map(|b| b.sign * (z[b.var] - b.bound)));
        Eval {
            f: self.nlp.objective(z),
            ce: self.nlp.eq(z),
            ci,
        }
    }

    fn finite(e: &Eval) -> bool {
        e.f.is_finite() && e.ce.iter().chain(&e.ci).all(|v| v.is_finite())
    }

    fn merit(e: &Eval, y: &[f64], mu: &[f64], rho: f64) -> f64 {
        let mut phi = e.f;
        for (c, yi) in e.ce.iter().zip(y) {
            phi += yi * c + 0.5 * rho * c * c;
        }
        for (c, m) in e.ci.iter().zip(mu) {
            let s = (m + rho * c).max(0.0);
            phi += (s * s - m * m) / (2.0 * rho);
        }
        phi
    }

    /// Full-space `grad F + J_E^T w_E + J_I^T w_I` (bound rows included).
    fn weighted_gradient(&self, z: &[f64], w_eq: &[f64], w_ineq: &[f64]) -> Vec<f64> {
        let nlp = self.nlp;
        let mut g = nlp.objective_grad(z);
        if nlp.n_eq > 0 {
            nlp.eq_jac(z).tmul_acc(w_eq, &mut g);
        }
        if nlp.n_ineq > 0 {
            nlp.ineq_jac(z).tmul_acc(&w_ineq[..nlp.n_ineq], &mut g);
        }
        for (b, w) in self.bounds.iter().zip(&w_ineq[nlp.n_ineq..]) {
            g[b.var] += b.sign * w;
        }
        g
    }

    fn al_weights(e: &Eval, y: &[f64], mu: &[f64], rho: f64) -> (Vec<f64>, Vec<f64>) {
        let we = e.ce.iter().zip(y).map(|(c, yi)| yi + rho * c).collect();
        let wi = e.ci.iter().zip(mu).map(|(c, m)| (m + rho * c).max(0.0)).collect();
        (we, wi)
    }

    /// Banded model Hessian of the augmented Lagrangian at `z` (free space,
    /// permuted ordering).
    fn hessian(&self, z: &[f64], e: &Eval, y: &[f64], mu: &[f64], rho: f64) -> BandMatrix {
        let st = self.structure.as_ref().expect("Newton structure");
        let nlp = self.nlp;
        let nf = self.n_free();
        let (we, wi) = Self::al_weights(e, y, mu, rho);
        let mut h = BandMatrix::zeros(nf, st.bandwidth);

        // second-order part by central differences of the Lagrangian gradient
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        for group in &st.colors {
            for &k in group {
                let i = self.free[k];
                let s = fd::step(z[i]);
                zp[i] = z[i] + s;
                zm[i] = z[i] - s;
            }
            let gp = self.weighted_gradient(&zp, &we, &wi);
            let gm = self.weighted_gradient(&zm, &we, &wi);
            for &k in group {
                let i = self.free[k];
                let s = fd::step(z[i]);
                let col = |r: usize| {
                    let v = (gp[self.free[r]] - gm[self.free[r]]) / (2.0 * s);
                    if v.is_finite() { v } else { 0.0 }
                };
                h.add(st.pos[k], st.pos[k], col(k));
                for &r in &st.adj[k] {
                    h.add(st.pos[r], st.pos[k], 0.5 * col(r));
                }
                zp[i] = z[i];
                zm[i] = z[i];
            }
        }

        // exact Gauss-Newton part on equality and active inequality rows
        let mut add_rows = |rows: &[Vec<(usize, f64)>], active: &dyn Fn(usize) -> bool| {
            for (r, row) in rows.iter().enumerate() {
                if !active(r) {
                    continue;
                }
                for (a, &(ka, va)) in row.iter().enumerate() {
                    for &(kb, vb) in &row[..=a] {
                        h.add(st.pos[ka], st.pos[kb], rho * va * vb);
                    }
                }
            }
        };
        if nlp.n_eq > 0 {
            add_rows(&merged_rows(&nlp.eq_jac(z), &self.col_map), &|_| true);
        }
        if nlp.n_ineq > 0 {
            add_rows(&merged_rows(&nlp.ineq_jac(z), &self.col_map), &|r| wi[r] > 0.0);
        }
        for (b, w) in self.bounds.iter().zip(&wi[nlp.n_ineq..]) {
            if *w > 0.0 {
                let k = self.col_map[b.var].expect("free");
                h.add(st.pos[k], st.pos[k], rho);
            }
        }
        h
    }
}

/// Backtracking Armijo search on the augmented Lagrangian along `dir`.
#[allow(clippy::too_many_arguments)]
fn line_search(
    work: &Work,
    x: &[f64],
    phi0: f64,
    g: &[f64],
    dir: &[f64],
    y: &[f64],
    mu: &[f64],
    rho: f64,
) -> Option<(Vec<f64>, f64, f64)> {
    let slope = dot(g, dir);
    let mut t = 1.0;
    for _ in 0..60 {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        let e = work.eval(&work.embed(&trial));
        if Work::finite(&e) {
            let phi = Work::merit(&e, y, mu, rho);
            if phi <= phi0 + 1e-4 * t * slope {
                return Some((trial, phi, t));
            }
        }
        t *= 0.5;
    }
    None
}

struct InnerOutcome {
    x: Vec<f64>,
    iterations: usize,
}

fn inner_newton(
    work: &Work,
    mut x: Vec<f64>,
    y: &[f64],
    mu: &[f64],
    rho: f64,
    omega: f64,
    max_inner: usize,
) -> Result<InnerOutcome> {
    let st = work.structure.as_ref().expect("Newton structure");
    let mut shift: f64 = 0.0;
    let mut it = 0;
    while it < max_inner {
        let z = work.embed(&x);
        let e = work.eval(&z);
        if !Work::finite(&e) {
            return Err(Error::NonFinite {
                what: "augmented Lagrangian".into(),
                point: z,
            });
        }
        let (we, wi) = Work::al_weights(&e, y, mu, rho);
        let g = work.gather(&work.weighted_gradient(&z, &we, &wi));
        if norm_inf(&g) <= omega {
            break;
        }
        it += 1;
        let h = work.hessian(&z, &e, y, mu, rho);
        let diag = h.max_abs_diagonal();
        let nf = work.n_free();
        let rhs: Vec<f64> = (0..nf).map(|p| -g[st.perm[p]]).collect();
        let mut trial_shift = shift / 10.0;
        if trial_shift < 1e-12 * (1.0 + diag) {
            trial_shift = 0.0;
        }
        let mut dir = None;
        for _ in 0..40 {
            let mut hs = h.clone();
            hs.add_diagonal(trial_shift);
            if let Some(chol) = hs.cholesky() {
                let dp = chol.solve(&rhs);
                let mut d = vec![0.0; nf];
                for p in 0..nf {
                    d[st.perm[p]] = dp[p];
                }
                dir = Some(d);
                break;
            }
            trial_shift = if trial_shift == 0.0 { 1e-8 * (1.0 + diag) } else { trial_shift * 10.0 };
        }
        shift = trial_shift;
        let mut d = dir.unwrap_or_else(|| g.iter().map(|v| -v).collect());
        if dot(&d, &g) >= 0.0 {
            d = g.iter().map(|v| -v).collect();
        }
        let phi0 = Work::merit(&e, y, mu, rho);
        match line_search(work, &x, phi0, &g, &d, y, mu, rho) {
            Some((xn, _, _)) => x = xn,
            None => {
                let sd: Vec<f64> = g.iter().map(|v| -v).collect();
                match line_search(work, &x, phi0, &g, &sd, y, mu, rho) {
                    Some((xn, _, _)) => x = xn,
                    None => break,
                }
            }
        }
    }
    Ok(InnerOutcome { x, iterations: it })
}

fn inner_lbfgs(
    work: &Work,
    mut x: Vec<f64>,
    y: &[f64],
    mu: &[f64],
    rho: f64,
    omega: f64,
    max_inner: usize,
) -> Result<InnerOutcome> {
    const MEMORY: usize = 10;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let grad_at = |x: &[f64]| -> Result<(Eval, Vec<f64>)> {
        let z = work.embed(x);
        let e = work.eval(&z);
        if !Work::finite(&e) {
            return Err(Error::NonFinite {
                what: "augmented Lagrangian".into(),
                point: z,
            });
        }
        let (we, wi) = Work::al_weights(&e, y, mu, rho);
        let g = work.gather(&work.weighted_gradient(&z, &we, &wi));
        Ok((e, g))
    };
    let (mut e, mut g) = grad_at(&x)?;
    let mut it = 0;
    while it < max_inner && norm_inf(&g) > omega {
        it += 1;
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, yv, r) in pairs.iter().rev() {
            let a = r * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(yv) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, yv, _)) = pairs.back() {
            let gamma = dot(s, yv) / dot(yv, yv);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, yv, r), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = r * dot(yv, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&d, &g) >= 0.0 {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
        }
        let phi0 = Work::merit(&e, y, mu, rho);
        let Some((xn, _, _)) = line_search(work, &x, phi0, &g, &d, y, mu, rho) else {
            if pairs.is_empty() {
                break;
            }
            pairs.clear();
            continue;
        };
        let (en, gn) = grad_at(&xn)?;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            if pairs.len() == MEMORY {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }
        x = xn;
        e = en;
        g = gn;
    }
    Ok(InnerOutcome { x, iterations: it })
}

/// Augmented Lagrangian solve with explicit options and optional warm start.
pub fn solve_with(nlp: &NlpProblem, z0: &[f64], opts: &SolverOptions, warm: Option<&WarmStart>) -> Result<SolveResult> {
    ensure_dim("initial point", nlp.n_vars, z0.len())?;
    nlp.validate()?;
    if !(opts.tol > 0.0 && opts.tol <= 1e-2) {
        return Err(Error::InvalidArgument("tol must lie in (0, 1e-2]".into()));
    }
    if !z0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            what: "initial point".into(),
            point: z0.to_vec(),
        });
    }
    let work = Work::new(nlp, z0, opts.inner == InnerMethod::Newton);
    let q = work.n_ineq_ext();
    let mut y = vec![0.0; nlp.n_eq];
    let mut mu = vec![0.0; q];
    let mut rho = opts.rho0;
    if let Some(w) = warm {
        ensure_dim("warm equality multipliers", nlp.n_eq, w.mu_eq.len())?;
        ensure_dim("warm inequality multipliers", nlp.n_ineq, w.mu_ineq.len())?;
        y.clone_from(&w.mu_eq);
        mu[..nlp.n_ineq].copy_from_slice(&w.mu_ineq);
        rho = w.rho.max(opts.rho0);
    }
    let mut x = work.gather(&work.base);
    let e0 = work.eval(&work.base);
    if !Work::finite(&e0) {
        return Err(Error::NonFinite {
            what: "objective or constraints at the initial point".into(),
            point: work.base.clone(),
        });
    }

    let mut omega: f64 = if q + nlp.n_eq == 0 { 0.1 * opts.tol } else { 1e-2f64.max(0.1 * opts.tol) };
    let mut prev_violation = f64::INFINITY;
    let mut inner_total = 0;
    let mut status = SolveStatus::MaxIter;
    let mut kkt = KktResiduals {
        stationarity: f64::INFINITY,
        primal_feas: f64::INFINITY,
        dual_feas: 0.0,
        complementarity: f64::INFINITY,
    };
    let mut outer = 0;
    while outer < opts.max_outer {
        outer += 1;
        let out = match opts.inner {
            InnerMethod::Newton => inner_newton(&work, x, &y, &mu, rho, omega, opts.max_inner)?,
            InnerMethod::Lbfgs => inner_lbfgs(&work, x, &y, &mu, rho, omega, opts.max_inner)?,
        };
        x = out.x;
        inner_total += out.iterations;
        let z = work.embed(&x);
        let e = work.eval(&z);
        for (yi, c) in y.iter_mut().zip(&e.ce) {
            *yi = (*yi + rho * c).clamp(-MULTIPLIER_CAP, MULTIPLIER_CAP);
        }
        for (m, c) in mu.iter_mut().zip(&e.ci) {
            *m = (*m + rho * c).clamp(0.0, MULTIPLIER_CAP);
        }
        kkt = internal_kkt(&work, &z, &e, &y, &mu);
        if kkt.all_below(opts.tol) {
            status = SolveStatus::Converged;
            break;
        }
        let violation = e
            .ce
            .iter()
            .map(|c| c.abs())
            .chain(e.ci.iter().zip(&mu).map(|(c, m)| c.max(-m / rho).abs()))
            .fold(0.0, f64::max);
        if violation > 0.25 * prev_violation {
            if rho >= RHO_MAX {
                if kkt.primal_feas > opts.tol {
                    status = SolveStatus::Infeasible;
                    break;
                }
            } else {
                rho = (rho * 10.0).min(RHO_MAX);
            }
        }
        prev_violation = violation;
        omega = (omega * 0.1).max(0.1 * opts.tol);
    }

    let z = work.embed(&x);
    let full_grad = work.weighted_gradient(&z, &y, &mu);
    // bound rows fold into the signed bound multipliers; fixed variables
    // absorb whatever remains of the Lagrangian gradient
    let mut mu_bounds = vec![0.0; nlp.n_vars];
    for (b, m) in work.bounds.iter().zip(&mu[nlp.n_ineq..]) {
        mu_bounds[b.var] += b.sign * m;
    }
    for i in 0..nlp.n_vars {
        if nlp.is_fixed(i) {
            mu_bounds[i] = -full_grad[i];
        }
    }
    Ok(SolveResult {
        objective: nlp.objective(&z),
        z_star: z,
        mu_eq: y,
        mu_ineq: mu[..nlp.n_ineq].to_vec(),
        mu_bounds,
        status,
        kkt,
        iterations: outer,
        inner_iterations: inner_total,
        rho,
    })
}

fn internal_kkt(work: &Work, z: &[f64], e: &Eval, y: &[f64], mu: &[f64]) -> KktResiduals {
    let g = work.gather(&work.weighted_gradient(z, y, mu));
    let primal = e
        .ce
        .iter()
        .map(|c| c.abs())
        .chain(e.ci.iter().map(|c| c.max(0.0)))
        .fold(0.0, f64::max);
    KktResiduals {
        stationarity: norm_inf(&g),
        primal_feas: primal,
        dual_feas: mu.iter().fold(0.0f64, |m, v| m.max(-v)),
        complementarity: mu.iter().zip(&e.ci).fold(0.0f64, |m, (a, b)| m.max((a * b).abs())),
    }
}

/// Runs `solve` from every start and keeps the best converged result:
/// lowest objective, then lowest stationarity residual, then start index.
pub fn multistart(nlp: &NlpProblem, starts: &[Vec<f64>], tol: f64) -> Result<SolveResult> {
    multistart_with(nlp, starts, &SolverOptions { tol, ..SolverOptions::default() })
}

pub fn multistart_with(nlp: &NlpProblem, starts: &[Vec<f64>], opts: &SolverOptions) -> Result<SolveResult> {
    if starts.is_empty() {
        return Err(Error::InvalidArgument("multistart needs at least one start".into()));
    }
    let results: Vec<Result<SolveResult>> = starts.par_iter().map(|z0| solve_with(nlp, z0, opts, None)).collect();
    let mut best: Option<SolveResult> = None;
    let mut statuses = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(res) if res.converged() => {
                statuses.push(format!("start {k}: converged"));
                let better = match &best {
                    None => true,
                    Some(b) => {
                        let tie = (res.objective - b.objective).abs() <= 1e-8 * (1.0 + b.objective.abs());
                        if !tie {
                            res.objective < b.objective
                        } else {
                            res.kkt.stationarity + opts.tol < b.kkt.stationarity
                        }
                    }
                };
                if better {
                    best = Some(res);
                }
            }
            Ok(res) => statuses.push(format!("start {k}: {:?}", res.status)),
            Err(e) => statuses.push(format!("start {k}: {e}")),
        }
    }
    best.ok_or(Error::AllStartsFailed(statuses))
}
