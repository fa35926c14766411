//! Problem data for controlled sweeping processes with mixed constraints,
//! the normal cone of the sweeping set, and sampled validation of the
//! standing assumptions.
//!
//! The sweeping set is `C = {x : psi(x) <= 0}` with `psi` convex and smooth,
//! the dynamics are `x' in f(x, u) - N_C(x)`, and the mixed constraints are
//! `h_i(x, u) <= 0`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::fd;
use crate::linalg::norm2;
use crate::sim::StateTrajectory;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type PairVectorFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type PairScalarFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type PairMatrixFn = Arc<dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync>;
pub type TimedScalarFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
pub type TimedVectorFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Smooth map `R^d -> R` with analytic derivatives.
#[derive(Clone)]
pub struct ScalarField {
    pub dim: usize,
    eval: ScalarFn,
    grad: VectorFn,
    hess: Option<MatrixFn>,
}

impl ScalarField {
    pub fn new(
        dim: usize,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            eval: Arc::new(eval),
            grad: Arc::new(grad),
            hess: None,
        }
    }

    pub fn with_hess(mut self, hess: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.hess = Some(Arc::new(hess));
        self
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    #[inline]
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }

    pub fn has_hess(&self) -> bool {
        self.hess.is_some()
    }

    /// Analytic Hessian, or central differences of the gradient when absent.
    pub fn hess(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.hess {
            Some(h) => h(x),
            None => {
                let j = fd::jacobian(|y| self.grad(y), x);
                (&j + j.transpose()) * 0.5
            }
        }
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("dim", &self.dim)
            .field("hess", &self.hess.is_some())
            .finish()
    }
}

/// Drift `f(x, u)` with its Jacobians.
#[derive(Clone)]
pub struct ControlledVectorField {
    pub state_dim: usize,
    pub control_dim: usize,
    eval: PairVectorFn,
    jac_x: PairMatrixFn,
    jac_u: PairMatrixFn,
}

impl ControlledVectorField {
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        eval: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        jac_x: impl Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        jac_u: impl Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            state_dim,
            control_dim,
            eval: Arc::new(eval),
            jac_x: Arc::new(jac_x),
            jac_u: Arc::new(jac_u),
        }
    }

    /// `f(x, u) = u` with `n = m`.
    pub fn identity_control(n: usize) -> Self {
        Self::new(
            n,
            n,
            |_x, u| u.to_vec(),
            move |_x, _u| DMatrix::zeros(n, n),
            move |_x, _u| DMatrix::identity(n, n),
        )
    }

    #[inline]
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.eval)(x, u)
    }
    #[inline]
    pub fn jac_x(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        (self.jac_x)(x, u)
    }
    #[inline]
    pub fn jac_u(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        (self.jac_u)(x, u)
    }
}

impl fmt::Debug for ControlledVectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ControlledVectorField({}x{})", self.state_dim, self.control_dim)
    }
}

/// Scalar mixed constraint `h(x, u) <= 0`.
#[derive(Clone)]
pub struct MixedConstraint {
    eval: PairScalarFn,
    grad_x: PairVectorFn,
    grad_u: PairVectorFn,
}

impl MixedConstraint {
    pub fn new(
        eval: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        grad_x: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        grad_u: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval: Arc::new(eval),
            grad_x: Arc::new(grad_x),
            grad_u: Arc::new(grad_u),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        (self.eval)(x, u)
    }
    #[inline]
    pub fn grad_x(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.grad_x)(x, u)
    }
    #[inline]
    pub fn grad_u(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.grad_u)(x, u)
    }
}

impl fmt::Debug for MixedConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MixedConstraint")
    }
}

/// Running cost `L(t, x, u)`.
#[derive(Clone)]
pub struct RunningCost {
    eval: TimedScalarFn,
    grad_x: TimedVectorFn,
    grad_u: TimedVectorFn,
}

impl RunningCost {
    pub fn new(
        eval: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
        grad_x: impl Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        grad_u: impl Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval: Arc::new(eval),
            grad_x: Arc::new(grad_x),
            grad_u: Arc::new(grad_u),
        }
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], u: &[f64]) -> f64 {
        (self.eval)(t, x, u)
    }
    #[inline]
    pub fn grad_x(&self, t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.grad_x)(t, x, u)
    }
    #[inline]
    pub fn grad_u(&self, t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.grad_u)(t, x, u)
    }
}

impl fmt::Debug for RunningCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RunningCost")
    }
}

/// Complete data of the control problem on the horizon `[0, 1]`.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub name: String,
    pub f: ControlledVectorField,
    /// Sweeping set `C = {psi <= 0}`; the Hessian is required.
    pub psi: ScalarField,
    /// Mixed constraints `h_i(x, u) <= 0`. Usually a single entry.
    pub mixed: Vec<MixedConstraint>,
    /// Terminal cost.
    pub g: ScalarField,
    pub running_cost: Option<RunningCost>,
    /// `C0 = {x : c0_i(x) <= 0}`; an empty list with an anchor is the
    /// singleton `{anchor}`.
    pub c0: Vec<ScalarField>,
    pub anchor: Option<Vec<f64>>,
    /// Truncation radius of the normal cone; defaults to `2 * M_est`.
    pub rho: Option<f64>,
    /// Half-width of the control box used for sampling.
    pub control_box: f64,
}

impl ProblemSpec {
    pub fn state_dim(&self) -> usize {
        self.f.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.f.control_dim
    }

    pub fn n_mixed(&self) -> usize {
        self.mixed.len()
    }

    /// Structural checks: dimensions, a Hessian for `psi`, `0 in int C`.
    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        ensure_dim("psi dimension", n, self.psi.dim)?;
        ensure_dim("g dimension", n, self.g.dim)?;
        for c in &self.c0 {
            ensure_dim("c0 dimension", n, c.dim)?;
        }
        if let Some(a) = &self.anchor {
            ensure_dim("anchor dimension", n, a.len())?;
        }
        if !self.psi.has_hess() {
            return Err(Error::InvalidArgument("psi requires an analytic Hessian".into()));
        }
        if self.c0.is_empty() && self.anchor.is_none() {
            return Err(Error::InvalidArgument("C0 needs constraints or an anchor point".into()));
        }
        if !(self.psi.eval(&vec![0.0; n]) < 0.0) {
            return Err(Error::InvalidArgument("0 must lie in the interior of C".into()));
        }
        if !(self.control_box > 0.0) {
            return Err(Error::InvalidArgument("control_box must be positive".into()));
        }
        Ok(())
    }

    /// The anchor if given, otherwise the origin.
    pub fn initial_state(&self) -> Vec<f64> {
        self.anchor.clone().unwrap_or_else(|| vec![0.0; self.state_dim()])
    }

    pub fn c0_is_singleton(&self) -> bool {
        self.c0.is_empty()
    }

    pub fn in_c0(&self, x: &[f64], tol: f64) -> bool {
        if self.c0_is_singleton() {
            let a = self.anchor.as_ref().expect("validated");
            a.iter().zip(x).all(|(p, q)| (p - q).abs() <= tol)
        } else {
            self.c0.iter().all(|c| c.eval(x) <= tol)
        }
    }

    /// Largest mixed-constraint value at `(x, u)`, `-inf` with no constraints.
    pub fn h_max(&self, x: &[f64], u: &[f64]) -> f64 {
        self.mixed
            .iter()
            .map(|h| h.eval(x, u))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Membership of `u` in `Omega(x) = {u : h_i(x, u) <= 0}`.
    pub fn in_omega(&self, x: &[f64], u: &[f64]) -> bool {
        self.mixed.iter().all(|h| h.eval(x, u) <= 0.0)
    }

    pub fn running_cost_value(&self, t: f64, x: &[f64], u: &[f64]) -> f64 {
        self.running_cost.as_ref().map_or(0.0, |l| l.eval(t, x, u))
    }
}

/// Classification of a point relative to `C` together with its normal cone.
#[derive(Debug, Clone, PartialEq)]
pub enum NormalRay {
    /// `psi(x) < -tol`; the cone is `{0}`.
    Interior,
    /// `|psi(x)| <= tol`; the cone is `{lambda * generator : lambda >= 0}`.
    Boundary { generator: Vec<f64> },
    /// `psi(x) > tol`; the cone is empty.
    Outside,
}

pub fn normal_ray(problem: &ProblemSpec, x: &[f64], tol: f64) -> Result<NormalRay> {
    ensure_dim("normal_ray state", problem.state_dim(), x.len())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let v = problem.psi.eval(x);
    if v < -tol {
        Ok(NormalRay::Interior)
    } else if v > tol {
        Ok(NormalRay::Outside)
    } else {
        let g = problem.psi.grad(x);
        let norm = norm2(&g);
        if norm < 1e-10 {
            return Err(Error::DegenerateGradient {
                point: x.to_vec(),
                norm,
            });
        }
        Ok(NormalRay::Boundary { generator: g })
    }
}

/// Radius `r > 0` with `psi(r * dir) = 0`, searched outward from the
/// interior anchor `0`. `None` when `psi` stays non-positive up to `r_max`.
pub fn radial_boundary(psi: &ScalarField, dir: &[f64], r_max: f64) -> Option<f64> {
    let at = |r: f64| psi.eval(&dir.iter().map(|d| d * r).collect::<Vec<_>>());
    let mut lo = 0.0;
    let mut hi = 1.0;
    while at(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > r_max {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = norm2(&v);
        if r > 1e-3 && r <= 1.0 {
            return v.iter().map(|c| c / r).collect();
        }
    }
}

fn random_box(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-half..half)).collect()
}

/// One failed sampled check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub assumption: String,
    pub witness: Vec<f64>,
    pub detail: String,
}

/// Sampled estimates of the constants of the standing assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Sampled sup of `|f|` and `|D_x f|` over `x` near `C`, `u in Omega(x)`.
    pub m_est: f64,
    /// Half of the sampled minimum of `|grad psi|` on the boundary of `C`.
    pub eta_est: f64,
    pub convexity_ok: bool,
    pub coercivity_ok: bool,
    pub h_bounded_ok: bool,
    pub c0_subset_ok: bool,
    pub g_lipschitz_est: f64,
    /// Largest sampled boundary radius of `C` seen from the origin.
    pub boundary_radius: f64,
    pub violations: Vec<Violation>,
}

impl AssumptionReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    /// Smallest penalty parameter allowed by `gamma >= 2 M / eta`.
    pub fn min_gamma(&self) -> f64 {
        2.0 * self.m_est / self.eta_est
    }
}

/// Samples the assumptions on the data. Deterministic in `seed`.
pub fn check_assumptions(problem: &ProblemSpec, sample_budget: usize, seed: u64) -> Result<AssumptionReport> {
    if sample_budget < 100 {
        return Err(Error::InvalidArgument("sample_budget must be at least 100".into()));
    }
    problem.validate()?;
    let n = problem.state_dim();
    let m = problem.control_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();

    // boundary of C by radial root finding from the interior anchor 0
    let mut coercivity_ok = true;
    let mut min_grad = f64::INFINITY;
    let mut r_bound: f64 = 0.0;
    for _ in 0..sample_budget {
        let d = random_unit(&mut rng, n);
        match radial_boundary(&problem.psi, &d, 1e6) {
            Some(r) => {
                r_bound = r_bound.max(r);
                let b: Vec<f64> = d.iter().map(|c| c * r).collect();
                min_grad = min_grad.min(norm2(&problem.psi.grad(&b)));
            }
            None => {
                if coercivity_ok {
                    violations.push(Violation {
                        assumption: "H3".into(),
                        witness: d.iter().map(|c| c * 1e6).collect(),
                        detail: "psi does not grow to +inf along this ray (coercivity probe)".into(),
                    });
                }
                coercivity_ok = false;
            }
        }
    }
    if r_bound == 0.0 {
        r_bound = 1.0;
    }
    let eta_est = if min_grad.is_finite() { 0.5 * min_grad } else { 0.0 };
    if min_grad.is_finite() && min_grad < 1e-8 {
        violations.push(Violation {
            assumption: "H3".into(),
            witness: vec![],
            detail: format!("|grad psi| on the boundary is {min_grad:e}"),
        });
    }

    // convexity: sampled Hessians are positive semidefinite
    let mut convexity_ok = true;
    let box_half = 1.5 * r_bound;
    for _ in 0..sample_budget {
        let x = random_box(&mut rng, n, box_half);
        let h = problem.psi.hess(&x);
        let sym = (&h + h.transpose()) * 0.5;
        let min_eig = sym.symmetric_eigenvalues().min();
        let scale = 1.0 + sym.abs().max();
        if min_eig < -1e-8 * scale {
            if convexity_ok {
                violations.push(Violation {
                    assumption: "H3".into(),
                    witness: x.clone(),
                    detail: format!("Hessian of psi has eigenvalue {min_eig:e}"),
                });
            }
            convexity_ok = false;
        }
    }

    // H1: bounds on f and D_x f over x near C and admissible controls
    let mut m_est: f64 = 0.0;
    let mut h_bounded_ok = true;
    let mut accepted = 0;
    let mut attempts = 0;
    let x_half = 1.2 * r_bound;
    let u_half = problem.control_box;
    while accepted < sample_budget && attempts < 200 * sample_budget {
        attempts += 1;
        let x = random_box(&mut rng, n, x_half);
        let u = random_box(&mut rng, m, u_half);
        // H4: h and its gradient finite on the sampling box
        for h in &problem.mixed {
            let vals = [h.eval(&x, &u)];
            let gx = h.grad_x(&x, &u);
            let gu = h.grad_u(&x, &u);
            if !vals.iter().chain(&gx).chain(&gu).all(|v| v.is_finite()) {
                if h_bounded_ok {
                    violations.push(Violation {
                        assumption: "H4".into(),
                        witness: x.iter().chain(&u).copied().collect(),
                        detail: "mixed constraint or gradient is not finite".into(),
                    });
                }
                h_bounded_ok = false;
            }
        }
        if !problem.in_omega(&x, &u) {
            continue;
        }
        accepted += 1;
        let fv = problem.f.eval(&x, &u);
        let jx = problem.f.jac_x(&x, &u);
        let jnorm = if jx.nrows() > 0 { jx.clone().svd(false, false).singular_values.max() } else { 0.0 };
        let val = norm2(&fv).max(jnorm);
        if !val.is_finite() {
            violations.push(Violation {
                assumption: "H1".into(),
                witness: x.iter().chain(&u).copied().collect(),
                detail: "f or D_x f not finite".into(),
            });
            continue;
        }
        m_est = m_est.max(val);
    }
    if accepted == 0 {
        violations.push(Violation {
            assumption: "H1".into(),
            witness: vec![],
            detail: "no admissible (x, u) found in the sampling box".into(),
        });
    }

    // H5: C0 inside C
    let mut c0_subset_ok = true;
    if problem.c0_is_singleton() {
        let a = problem.anchor.as_ref().expect("validated");
        if problem.psi.eval(a) > 0.0 {
            c0_subset_ok = false;
            violations.push(Violation {
                assumption: "H5".into(),
                witness: a.clone(),
                detail: "anchor lies outside C".into(),
            });
        }
    } else {
        let mut tries = 0;
        let mut found = 0;
        while found < sample_budget && tries < 100 * sample_budget {
            tries += 1;
            let x = random_box(&mut rng, n, x_half);
            if !problem.in_c0(&x, 0.0) {
                continue;
            }
            found += 1;
            if problem.psi.eval(&x) > 1e-12 {
                if c0_subset_ok {
                    violations.push(Violation {
                        assumption: "H5".into(),
                        witness: x.clone(),
                        detail: "point of C0 outside C".into(),
                    });
                }
                c0_subset_ok = false;
            }
        }
        if let Some(a) = &problem.anchor {
            if !problem.in_c0(a, 1e-12) {
                violations.push(Violation {
                    assumption: "H5".into(),
                    witness: a.clone(),
                    detail: "anchor violates the C0 inequalities".into(),
                });
                c0_subset_ok = false;
            }
        }
    }

    // H6: sampled Lipschitz constant of g
    let mut g_lip: f64 = 0.0;
    for _ in 0..sample_budget {
        let x = random_box(&mut rng, n, x_half);
        let gn = norm2(&problem.g.grad(&x));
        if !gn.is_finite() {
            violations.push(Violation {
                assumption: "H6".into(),
                witness: x.clone(),
                detail: "gradient of g not finite".into(),
            });
            break;
        }
        g_lip = g_lip.max(gn);
    }

    Ok(AssumptionReport {
        m_est,
        eta_est,
        convexity_ok,
        coercivity_ok,
        h_bounded_ok,
        c0_subset_ok,
        g_lipschitz_est: g_lip,
        boundary_radius: r_bound,
        violations,
    })
}

/// Worst relative discrepancy between analytic and central-difference
/// derivatives, keyed by field name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub errors: BTreeMap<String, f64>,
}

impl GradientCheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.values().fold(0.0, |m, &v| m.max(v))
    }

    /// Fields whose error exceeds `tol`, worst first.
    pub fn failing(&self, tol: f64) -> Vec<(&str, f64)> {
        let mut out: Vec<(&str, f64)> = self
            .errors
            .iter()
            .filter(|(_, &e)| e > tol)
            .map(|(k, &e)| (k.as_str(), e))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    fn record(&mut self, field: &str, err: f64) {
        let e = self.errors.entry(field.to_string()).or_insert(0.0);
        *e = e.max(err);
    }
}

pub fn gradient_check(problem: &ProblemSpec, n_points: usize, seed: u64) -> Result<GradientCheckReport> {
    if n_points == 0 {
        return Err(Error::InvalidArgument("n_points must be at least 1".into()));
    }
    let n = problem.state_dim();
    let m = problem.control_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // probe box around C from a few radial roots
    let mut radius: f64 = 0.0;
    for _ in 0..16 {
        let d = random_unit(&mut rng, n);
        if let Some(r) = radial_boundary(&problem.psi, &d, 1e6) {
            radius = radius.max(r);
        }
    }
    if radius == 0.0 {
        radius = 2.0;
    }
    let x_half = 1.5 * radius;
    let u_half = problem.control_box;

    let mut report = GradientCheckReport::default();
    for _ in 0..n_points {
        let x = random_box(&mut rng, n, x_half);
        let u = random_box(&mut rng, m, u_half);
        let t: f64 = rng.gen_range(0.0..1.0);
        let xu: Vec<f64> = x.iter().chain(&u).copied().collect();
        let finite = |what: &str, v: &[f64]| crate::error::ensure_finite(what, &xu, v);

        let fv = problem.f.eval(&x, &u);
        finite("f", &fv)?;
        let jx = problem.f.jac_x(&x, &u);
        let ju = problem.f.jac_u(&x, &u);
        finite("f.jac_x", jx.as_slice())?;
        finite("f.jac_u", ju.as_slice())?;
        report.record("f.jac_x", fd::relative_error_mat(&jx, &fd::jacobian(|y| problem.f.eval(y, &u), &x)));
        report.record("f.jac_u", fd::relative_error_mat(&ju, &fd::jacobian(|w| problem.f.eval(&x, w), &u)));

        finite("psi", &[problem.psi.eval(&x)])?;
        let pg = problem.psi.grad(&x);
        finite("psi.grad", &pg)?;
        report.record("psi.grad", fd::relative_error(&pg, &fd::gradient(|y| problem.psi.eval(y), &x)));
        let ph = problem.psi.hess(&x);
        finite("psi.hess", ph.as_slice())?;
        report.record("psi.hess", fd::relative_error_mat(&ph, &fd::jacobian(|y| problem.psi.grad(y), &x)));

        for (i, h) in problem.mixed.iter().enumerate() {
            finite("h", &[h.eval(&x, &u)])?;
            let gx = h.grad_x(&x, &u);
            let gu = h.grad_u(&x, &u);
            finite("h.grad", &[gx.clone(), gu.clone()].concat())?;
            let suffix = if problem.mixed.len() == 1 { String::new() } else { format!("[{i}]") };
            report.record(&format!("h{suffix}.grad_x"), fd::relative_error(&gx, &fd::gradient(|y| h.eval(y, &u), &x)));
            report.record(&format!("h{suffix}.grad_u"), fd::relative_error(&gu, &fd::gradient(|w| h.eval(&x, w), &u)));
        }

        finite("g", &[problem.g.eval(&x)])?;
        let gg = problem.g.grad(&x);
        finite("g.grad", &gg)?;
        report.record("g.grad", fd::relative_error(&gg, &fd::gradient(|y| problem.g.eval(y), &x)));

        if let Some(l) = &problem.running_cost {
            finite("L", &[l.eval(t, &x, &u)])?;
            let lx = l.grad_x(t, &x, &u);
            let lu = l.grad_u(t, &x, &u);
            finite("L.grad", &[lx.clone(), lu.clone()].concat())?;
            report.record("L.grad_x", fd::relative_error(&lx, &fd::gradient(|y| l.eval(t, y, &u), &x)));
            report.record("L.grad_u", fd::relative_error(&lu, &fd::gradient(|w| l.eval(t, &x, w), &u)));
        }

        for (i, c) in problem.c0.iter().enumerate() {
            let cg = c.grad(&x);
            finite("c0.grad", &cg)?;
            report.record(&format!("c0[{i}].grad"), fd::relative_error(&cg, &fd::gradient(|y| c.eval(y), &x)));
        }
    }
    Ok(report)
}

/// Margin of the regularity condition along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// Minimum over active nodes of the smallest singular value of the
    /// active control gradients (`|grad_u h|` for a scalar constraint).
    pub margin: Option<f64>,
    pub active_count: usize,
    pub worst_node: Option<usize>,
    pub active_tol: f64,
}

impl RegularityReport {
    pub const THRESHOLD: f64 = 1e-6;

    pub fn is_regular(&self) -> bool {
        self.margin.is_none_or(|m| m >= Self::THRESHOLD)
    }
}

/// Default activity band `1e-6 * (1 + max |h|)` over the trajectory.
pub fn default_active_tol(problem: &ProblemSpec, traj: &StateTrajectory) -> f64 {
    let mut hmax: f64 = 0.0;
    for j in 0..traj.controls.len() {
        for h in &problem.mixed {
            hmax = hmax.max(h.eval(&traj.states[j], &traj.controls[j]).abs());
        }
    }
    1e-6 * (1.0 + hmax)
}

pub fn regularity_margin(
    problem: &ProblemSpec,
    traj: &StateTrajectory,
    active_tol: Option<f64>,
) -> Result<RegularityReport> {
    traj.check_dims(problem)?;
    let tol = active_tol.unwrap_or_else(|| default_active_tol(problem, traj));
    let m = problem.control_dim();
    let mut margin: Option<f64> = None;
    let mut worst = None;
    let mut active_count = 0;
    for (j, (x, u)) in traj.states.iter().zip(&traj.controls).enumerate() {
        let rows: Vec<Vec<f64>> = problem
            .mixed
            .iter()
            .filter(|h| h.eval(x, u).abs() <= tol)
            .map(|h| h.grad_u(x, u))
            .collect();
        if rows.is_empty() {
            continue;
        }
        active_count += 1;
        let a = DMatrix::from_fn(rows.len(), m, |r, c| rows[r][c]);
        let sv = a.svd(false, false).singular_values;
        // more active constraints than controls means dependent gradients
        let s = if rows.len() > m { 0.0 } else { sv.min() };
        if margin.is_none_or(|cur| s < cur) {
            margin = Some(s);
            worst = Some(j);
        }
    }
    Ok(RegularityReport {
        margin,
        active_count,
        worst_node: worst,
        active_tol: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;
    use crate::sim::{ControlSignal, Grid};

    fn disk() -> ProblemSpec {
        problems::get("disk-push").unwrap().spec
    }

    #[test]
    fn normal_ray_examples() {
        let p = disk();
        assert_eq!(
            normal_ray(&p, &[1.0, 0.0], 1e-9).unwrap(),
            NormalRay::Boundary { generator: vec![2.0, 0.0] }
        );
        assert_eq!(normal_ray(&p, &[0.0, 0.0], 1e-9).unwrap(), NormalRay::Interior);
        assert_eq!(normal_ray(&p, &[2.0, 0.0], 1e-9).unwrap(), NormalRay::Outside);
        assert!(normal_ray(&p, &[1.0], 1e-9).is_err());
        assert!(normal_ray(&p, &[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn normal_ray_degenerate_gradient() {
        // psi(x) = |x|^4 - 0 has a flat minimum; shift so the flat point is on the boundary
        let mut p = disk();
        p.psi = ScalarField::new(2, |x| (x[0] * x[0] + x[1] * x[1]).powi(2) - 1e-12, |x| {
            let s = 4.0 * (x[0] * x[0] + x[1] * x[1]);
            vec![s * x[0], s * x[1]]
        })
        .with_hess(|_| DMatrix::zeros(2, 2));
        let r = normal_ray(&p, &[0.0, 0.0], 1e-9);
        assert!(matches!(r, Err(Error::DegenerateGradient { .. })));
    }

    #[test]
    fn assumption_report_disk() {
        let p = disk();
        let rep = check_assumptions(&p, 1000, 7).unwrap();
        assert!(rep.m_est >= 1.9 && rep.m_est <= 2.0, "{}", rep.m_est);
        assert!((rep.eta_est - 1.0).abs() < 1e-9);
        assert!(rep.convexity_ok && rep.is_clean(), "{:?}", rep.violations);
    }

    #[test]
    fn assumption_report_deterministic() {
        let p = disk();
        assert_eq!(check_assumptions(&p, 200, 3).unwrap(), check_assumptions(&p, 200, 3).unwrap());
    }

    #[test]
    fn non_coercive_psi_is_flagged() {
        let mut p = disk();
        p.psi = ScalarField::new(2, |x| x[0] - 1.0, |_| vec![1.0, 0.0]).with_hess(|_| DMatrix::zeros(2, 2));
        let rep = check_assumptions(&p, 100, 1).unwrap();
        assert!(!rep.coercivity_ok);
        assert!(rep.violations.iter().any(|v| v.assumption == "H3"));
    }

    #[test]
    fn budget_below_minimum_rejected() {
        assert!(check_assumptions(&disk(), 99, 0).is_err());
    }

    #[test]
    fn gradient_check_catches_defect() {
        let mut p = disk();
        let clean = gradient_check(&p, 20, 0).unwrap();
        assert!(clean.max_error() <= 1e-8, "{:?}", clean);
        p.psi = ScalarField::new(2, |x| x[0] * x[0] + x[1] * x[1] - 1.0, |x| vec![2.2 * x[0], 2.2 * x[1]])
            .with_hess(|_| DMatrix::identity(2, 2) * 2.0);
        let bad = gradient_check(&p, 20, 0).unwrap();
        assert!(bad.errors["psi.grad"] >= 0.05);
        assert!(bad.failing(1e-6).iter().any(|(k, _)| *k == "psi.grad"));
    }

    #[test]
    fn gradient_check_non_finite() {
        let mut p = disk();
        p.g = ScalarField::new(2, |_| f64::NAN, |_| vec![0.0, 0.0]);
        assert!(matches!(gradient_check(&p, 1, 0), Err(Error::NonFinite { .. })));
    }

    fn traj_with(u: f64, n: usize) -> StateTrajectory {
        let grid = Grid::new(n).unwrap();
        let controls = ControlSignal::constant(grid, &[u]);
        StateTrajectory::new(vec![vec![0.5]; n + 1], controls.values, None).unwrap()
    }

    #[test]
    fn regularity_margin_examples() {
        let p = problems::get("interval-1d").unwrap().spec;
        let rep = regularity_margin(&p, &traj_with(1.0, 10), None).unwrap();
        assert_eq!(rep.margin, Some(2.0));
        assert!(rep.is_regular());

        let rep = regularity_margin(&p, &traj_with(0.5f64.sqrt() * 0.0, 10), None).unwrap();
        assert_eq!(rep.margin, None);
        assert_eq!(rep.active_count, 0);

        let q = problems::lookup("nonregular-1d").unwrap().spec;
        let rep = regularity_margin(&q, &traj_with(0.0, 10), None).unwrap();
        assert_eq!(rep.margin, Some(0.0));
        assert!(!rep.is_regular());
    }

    #[test]
    fn regularity_dimension_mismatch() {
        let p = disk();
        assert!(matches!(
            regularity_margin(&p, &traj_with(1.0, 4), None),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
