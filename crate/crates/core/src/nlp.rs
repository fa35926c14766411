//! Smooth finite-dimensional programs
//! `min F(z) s.t. c_E(z) = 0, c_I(z) <= 0, lo <= z <= hi`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::fd;
use crate::linalg::SparseMatrix;

type ObjFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VecFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type JacFn = Arc<dyn Fn(&[f64]) -> SparseMatrix + Send + Sync>;

/// `count` consecutive items of `width` entries starting at `start`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub count: usize,
    pub width: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.count * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn end(&self) -> usize {
        self.start + self.len()
    }

    /// Index of entry `k` of item `j`.
    #[inline]
    pub fn at(&self, j: usize, k: usize) -> usize {
        debug_assert!(j < self.count && k < self.width);
        self.start + j * self.width + k
    }

    pub fn item<'a>(&self, z: &'a [f64], j: usize) -> &'a [f64] {
        &z[self.at(j, 0)..self.at(j, 0) + self.width]
    }
}

/// Names for variable and constraint index ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub vars: Vec<Block>,
    pub eq: Vec<Block>,
    pub ineq: Vec<Block>,
}

fn find<'a>(blocks: &'a [Block], name: &str) -> Option<&'a Block> {
    blocks.iter().find(|b| b.name == name)
}

impl Layout {
    pub fn var(&self, name: &str) -> Option<&Block> {
        find(&self.vars, name)
    }

    pub fn eq_block(&self, name: &str) -> Option<&Block> {
        find(&self.eq, name)
    }

    pub fn ineq_block(&self, name: &str) -> Option<&Block> {
        find(&self.ineq, name)
    }

    /// Blocks must tile `0..total` in order with no gaps.
    fn tiles(blocks: &[Block], total: usize) -> bool {
        let mut next = 0;
        for b in blocks {
            if b.start != next {
                return false;
            }
            next = b.end();
        }
        next == total
    }
}

/// Generic smooth program with analytic first derivatives.
#[derive(Clone)]
pub struct NlpProblem {
    pub n_vars: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
    objective: ObjFn,
    objective_grad: VecFn,
    eq: VecFn,
    eq_jac: JacFn,
    ineq: VecFn,
    ineq_jac: JacFn,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub layout: Layout,
    /// Groups of variables that appear together in a single term of the
    /// objective or a constraint; `None` means a dense Hessian.
    pub hessian_cliques: Option<Vec<Vec<usize>>>,
}

impl fmt::Debug for NlpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NlpProblem")
            .field("n_vars", &self.n_vars)
            .field("n_eq", &self.n_eq)
            .field("n_ineq", &self.n_ineq)
            .field("layout", &self.layout)
            .finish()
    }
}

impl NlpProblem {
    pub fn new(
        n_vars: usize,
        objective: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n_vars,
            n_eq: 0,
            n_ineq: 0,
            objective: Arc::new(objective),
            objective_grad: Arc::new(grad),
            eq: Arc::new(|_| Vec::new()),
            eq_jac: Arc::new(move |_| SparseMatrix::new(0, n_vars)),
            ineq: Arc::new(|_| Vec::new()),
            ineq_jac: Arc::new(move |_| SparseMatrix::new(0, n_vars)),
            lower: vec![f64::NEG_INFINITY; n_vars],
            upper: vec![f64::INFINITY; n_vars],
            layout: Layout::default(),
            hessian_cliques: None,
        }
    }

    pub fn with_eq(
        mut self,
        n_eq: usize,
        eval: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        jac: impl Fn(&[f64]) -> SparseMatrix + Send + Sync + 'static,
    ) -> Self {
        self.n_eq = n_eq;
        self.eq = Arc::new(eval);
        self.eq_jac = Arc::new(jac);
        self
    }

    pub fn with_ineq(
        mut self,
        n_ineq: usize,
        eval: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        jac: impl Fn(&[f64]) -> SparseMatrix + Send + Sync + 'static,
    ) -> Self {
        self.n_ineq = n_ineq;
        self.ineq = Arc::new(eval);
        self.ineq_jac = Arc::new(jac);
        self
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_layout(mut self, layout: Layout) -> Self {
        self.layout = layout;
        self
    }

    pub fn with_cliques(mut self, cliques: Vec<Vec<usize>>) -> Self {
        self.hessian_cliques = Some(cliques);
        self
    }

    #[inline]
    pub fn objective(&self, z: &[f64]) -> f64 {
        (self.objective)(z)
    }
    #[inline]
    pub fn objective_grad(&self, z: &[f64]) -> Vec<f64> {
        (self.objective_grad)(z)
    }
    #[inline]
    pub fn eq(&self, z: &[f64]) -> Vec<f64> {
        (self.eq)(z)
    }
    #[inline]
    pub fn eq_jac(&self, z: &[f64]) -> SparseMatrix {
        (self.eq_jac)(z)
    }
    #[inline]
    pub fn ineq(&self, z: &[f64]) -> Vec<f64> {
        (self.ineq)(z)
    }
    #[inline]
    pub fn ineq_jac(&self, z: &[f64]) -> SparseMatrix {
        (self.ineq_jac)(z)
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        self.lower[i] == self.upper[i]
    }

    /// Structural consistency of dimensions, bounds and layout.
    pub fn validate(&self) -> Result<()> {
        ensure_dim("lower bounds", self.n_vars, self.lower.len())?;
        ensure_dim("upper bounds", self.n_vars, self.upper.len())?;
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("lower bound above upper bound".into()));
        }
        let l = &self.layout;
        if !l.vars.is_empty() && !Layout::tiles(&l.vars, self.n_vars) {
            return Err(Error::InvalidArgument("variable layout does not cover every variable once".into()));
        }
        if !l.eq.is_empty() && !Layout::tiles(&l.eq, self.n_eq) {
            return Err(Error::InvalidArgument("equality layout mismatch".into()));
        }
        if !l.ineq.is_empty() && !Layout::tiles(&l.ineq, self.n_ineq) {
            return Err(Error::InvalidArgument("inequality layout mismatch".into()));
        }
        Ok(())
    }

    /// Clamps `z` into the variable box.
    pub fn clamp(&self, z: &mut [f64]) {
        for (i, v) in z.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Worst relative error of every derivative callback against central
    /// differences at `z`.
    pub fn derivative_errors(&self, z: &[f64]) -> DerivativeErrors {
        let grad = fd::relative_error(&self.objective_grad(z), &fd::gradient(|w| self.objective(w), z));
        let je = self.eq_jac(z).to_dense();
        let ji = self.ineq_jac(z).to_dense();
        let eq = if self.n_eq == 0 { 0.0 } else { fd::relative_error_mat(&je, &fd::jacobian(|w| self.eq(w), z)) };
        let ineq = if self.n_ineq == 0 {
            0.0
        } else {
            fd::relative_error_mat(&ji, &fd::jacobian(|w| self.ineq(w), z))
        };
        DerivativeErrors {
            objective: grad,
            eq_jacobian: eq,
            ineq_jacobian: ineq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeErrors {
    pub objective: f64,
    pub eq_jacobian: f64,
    pub ineq_jacobian: f64,
}

impl DerivativeErrors {
    pub fn max(&self) -> f64 {
        self.objective.max(self.eq_jacobian).max(self.ineq_jacobian)
    }
}

/// The four first-order optimality residuals, all in the max norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_feas: f64,
    pub dual_feas: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_feas)
            .max(self.dual_feas)
            .max(self.complementarity)
    }

    pub fn all_below(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// `grad F + J_E^T mu_eq + J_I^T mu_ineq`.
pub fn lagrangian_gradient(nlp: &NlpProblem, z: &[f64], mu_eq: &[f64], mu_ineq: &[f64]) -> Vec<f64> {
    let mut g = nlp.objective_grad(z);
    if nlp.n_eq > 0 {
        nlp.eq_jac(z).tmul_acc(mu_eq, &mut g);
    }
    if nlp.n_ineq > 0 {
        nlp.ineq_jac(z).tmul_acc(mu_ineq, &mut g);
    }
    g
}

/// Whether component `i` of `z` sits on one of its bounds.
pub(crate) fn at_bound(nlp: &NlpProblem, z: &[f64], i: usize) -> bool {
    let near = |b: f64| b.is_finite() && (z[i] - b).abs() <= 1e-10 * (1.0 + b.abs());
    nlp.is_fixed(i) || near(nlp.lower[i]) || near(nlp.upper[i])
}

/// Stationarity is measured on components not held by a bound; bound
/// violations count towards primal feasibility.
pub fn kkt_residual(nlp: &NlpProblem, z: &[f64], mu_eq: &[f64], mu_ineq: &[f64]) -> Result<KktResiduals> {
    ensure_dim("kkt point", nlp.n_vars, z.len())?;
    ensure_dim("equality multipliers", nlp.n_eq, mu_eq.len())?;
    ensure_dim("inequality multipliers", nlp.n_ineq, mu_ineq.len())?;
    let g = lagrangian_gradient(nlp, z, mu_eq, mu_ineq);
    let stationarity = (0..nlp.n_vars)
        .filter(|&i| !at_bound(nlp, z, i))
        .fold(0.0f64, |m, i| m.max(g[i].abs()));
    let ce = nlp.eq(z);
    let ci = nlp.ineq(z);
    let mut primal = ce.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    primal = ci.iter().fold(primal, |m, v| m.max(v.max(0.0)));
    for i in 0..nlp.n_vars {
        primal = primal.max(nlp.lower[i] - z[i]).max(z[i] - nlp.upper[i]);
    }
    let dual = mu_ineq.iter().fold(0.0f64, |m, v| m.max(-v));
    let comp = mu_ineq.iter().zip(&ci).fold(0.0f64, |m, (a, b)| m.max((a * b).abs()));
    Ok(KktResiduals {
        stationarity,
        primal_feas: primal,
        dual_feas: dual,
        complementarity: comp,
    })
}

/// Builds a sparse matrix from dense rows; convenient for small problems.
pub fn sparse_from_rows(rows: &[Vec<f64>], ncols: usize) -> SparseMatrix {
    let mut m = SparseMatrix::new(rows.len(), ncols);
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                m.push(r, c, v);
            }
        }
    }
    m
}
