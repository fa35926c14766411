//! Benchmark catalog.
//!
//! All instances use `f(x, u) = u` on the horizon `[0, 1]` with a singleton
//! initial set.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{ControlledVectorField, MixedConstraint, ProblemSpec, ScalarField};

pub const CATALOG: [&str; 4] = ["disk-push", "interval-1d", "interior-classical", "ellipse-steer"];

/// Auxiliary instances reachable through [`lookup`] but not listed in the
/// catalog.
pub const AUXILIARY: [&str; 1] = ["nonregular-1d"];

pub type TimeMap = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Analytic optimal process.
#[derive(Clone)]
pub struct Reference {
    pub state: TimeMap,
    pub control: TimeMap,
    pub control_description: String,
    pub objective: f64,
    /// Closed contact interval with the boundary of `C`, if any.
    pub contact: Option<(f64, f64)>,
    /// Density of the normal-cone multiplier on the contact interval.
    pub sliding_slack: Option<f64>,
}

impl fmt::Debug for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Reference")
            .field("control", &self.control_description)
            .field("objective", &self.objective)
            .field("contact", &self.contact)
            .field("sliding_slack", &self.sliding_slack)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub spec: ProblemSpec,
    pub reference: Option<Reference>,
}

pub fn list_catalog() -> Vec<&'static str> {
    CATALOG.to_vec()
}

/// Catalog entry by name.
pub fn get(name: &str) -> Result<CatalogEntry> {
    match name {
        "disk-push" => Ok(disk_push()),
        "interval-1d" => Ok(interval_1d()),
        "interior-classical" => Ok(interior_classical()),
        "ellipse-steer" => Ok(ellipse_steer()),
        _ => Err(Error::UnknownProblem(name.to_string())),
    }
}

/// Catalog or auxiliary entry by name.
pub fn lookup(name: &str) -> Result<CatalogEntry> {
    match name {
        "nonregular-1d" => Ok(nonregular_1d()),
        _ => get(name),
    }
}

/// `psi(x) = sum_i w_i x_i^2 + c`.
fn diag_quadratic(w: Vec<f64>, c: f64) -> ScalarField {
    let n = w.len();
    let (w1, w2, w3) = (w.clone(), w.clone(), w);
    ScalarField::new(
        n,
        move |x| x.iter().zip(&w1).map(|(xi, wi)| wi * xi * xi).sum::<f64>() + c,
        move |x| x.iter().zip(&w2).map(|(xi, wi)| 2.0 * wi * xi).collect(),
    )
    .with_hess(move |_| DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, w3.iter().map(|wi| 2.0 * wi))))
}

/// `g(x) = a . x`.
fn linear(a: Vec<f64>) -> ScalarField {
    let n = a.len();
    let a1 = a.clone();
    ScalarField::new(n, move |x| x.iter().zip(&a1).map(|(p, q)| p * q).sum(), move |_| a.clone())
        .with_hess(move |_| DMatrix::zeros(n, n))
}

/// `h(x, u) = |u|^2 - bound`.
fn control_ball(n: usize, bound: f64) -> MixedConstraint {
    MixedConstraint::new(
        move |_x, u| u.iter().map(|v| v * v).sum::<f64>() - bound,
        move |_x, _u| vec![0.0; n],
        |_x, u| u.iter().map(|v| 2.0 * v).collect(),
    )
}

fn base(name: &str, n: usize, psi: ScalarField, mixed: Vec<MixedConstraint>, g: ScalarField, x0: Vec<f64>) -> ProblemSpec {
    ProblemSpec {
        name: name.to_string(),
        f: ControlledVectorField::identity_control(n),
        psi,
        mixed,
        g,
        running_cost: None,
        c0: Vec::new(),
        anchor: Some(x0),
        rho: None,
        control_box: 10.0,
    }
}

fn disk_push() -> CatalogEntry {
    let spec = base(
        "disk-push",
        2,
        diag_quadratic(vec![1.0, 1.0], -1.0),
        vec![control_ball(2, 4.0)],
        linear(vec![-1.0, 0.0]),
        vec![0.0, 0.0],
    );
    CatalogEntry {
        spec,
        reference: Some(Reference {
            state: Arc::new(|t| vec![(2.0 * t).min(1.0), 0.0]),
            control: Arc::new(|_| vec![2.0, 0.0]),
            control_description: "u = (2, 0) on [0, 1]".into(),
            objective: -1.0,
            contact: Some((0.5, 1.0)),
            sliding_slack: Some(1.0),
        }),
    }
}

fn interval_1d() -> CatalogEntry {
    let spec = base(
        "interval-1d",
        1,
        diag_quadratic(vec![1.0], -1.0),
        vec![control_ball(1, 1.0)],
        linear(vec![-1.0]),
        vec![0.5],
    );
    CatalogEntry {
        spec,
        reference: Some(Reference {
            state: Arc::new(|t| vec![(0.5 + t).min(1.0)]),
            control: Arc::new(|_| vec![1.0]),
            control_description: "u = 1 on [0, 1]".into(),
            objective: -1.0,
            contact: Some((0.5, 1.0)),
            // 0 = u - xi * psi'(1) = 1 - 2 xi
            sliding_slack: Some(0.5),
        }),
    }
}

fn interior_classical() -> CatalogEntry {
    let spec = base(
        "interior-classical",
        2,
        diag_quadratic(vec![1.0, 1.0], -25.0),
        vec![control_ball(2, 1.0)],
        linear(vec![-1.0, 0.0]),
        vec![0.0, 0.0],
    );
    CatalogEntry {
        spec,
        reference: Some(Reference {
            state: Arc::new(|t| vec![t, 0.0]),
            control: Arc::new(|_| vec![1.0, 0.0]),
            control_description: "u = (1, 0) on [0, 1]".into(),
            objective: -1.0,
            contact: None,
            sliding_slack: None,
        }),
    }
}

fn ellipse_steer() -> CatalogEntry {
    let steer = MixedConstraint::new(
        |x, u| x[0] + u[0] - 2.0,
        |_x, _u| vec![1.0, 0.0],
        |_x, _u| vec![1.0, 0.0],
    );
    // the ball keeps the remaining control directions bounded
    let spec = base(
        "ellipse-steer",
        2,
        diag_quadratic(vec![0.25, 1.0], -1.0),
        vec![steer, control_ball(2, 4.0)],
        linear(vec![-1.0, -1.0]),
        vec![0.0, -0.5],
    );
    CatalogEntry { spec, reference: None }
}

fn nonregular_1d() -> CatalogEntry {
    let h = MixedConstraint::new(|_x, u| u[0] * u[0], |_x, _u| vec![0.0], |_x, u| vec![2.0 * u[0]]);
    let spec = base(
        "nonregular-1d",
        1,
        diag_quadratic(vec![1.0], -1.0),
        vec![h],
        linear(vec![-1.0]),
        vec![0.5],
    );
    CatalogEntry {
        spec,
        reference: Some(Reference {
            state: Arc::new(|_| vec![0.5]),
            control: Arc::new(|_| vec![0.0]),
            control_description: "u = 0 on [0, 1]".into(),
            objective: -0.5,
            contact: None,
            sliding_slack: None,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_assumptions, gradient_check};
    use crate::sim::{simulate_catchup, ControlSignal, Grid};

    #[test]
    fn catalog_names() {
        let names = list_catalog();
        assert_eq!(names, vec!["disk-push", "interval-1d", "interior-classical", "ellipse-steer"]);
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
        for n in names {
            get(n).unwrap().spec.validate().unwrap();
        }
        assert!(matches!(get("nonregular-1d"), Err(Error::UnknownProblem(_))));
        assert!(lookup("nonregular-1d").is_ok());
    }

    #[test]
    fn reference_values() {
        assert_eq!(get("interval-1d").unwrap().reference.unwrap().objective, -1.0);
        assert!(get("interior-classical").unwrap().reference.unwrap().contact.is_none());
        assert!(get("ellipse-steer").unwrap().reference.is_none());
    }

    #[test]
    fn references_feasible_on_fine_grid() {
        for name in CATALOG {
            let entry = get(name).unwrap();
            let Some(r) = entry.reference else { continue };
            for j in 0..=1000 {
                let t = j as f64 / 1000.0;
                let x = (r.state)(t);
                let u = (r.control)(t);
                assert!(entry.spec.psi.eval(&x) <= 1e-9, "{name} at {t}");
                assert!(entry.spec.h_max(&x, &u) <= 1e-9, "{name} at {t}");
            }
            let x1 = (r.state)(1.0);
            assert!((entry.spec.g.eval(&x1) - r.objective).abs() < 1e-15);
        }
    }

    #[test]
    fn catalog_passes_assumption_checks() {
        for name in CATALOG {
            let spec = get(name).unwrap().spec;
            let rep = check_assumptions(&spec, 1000, 11).unwrap();
            assert!(rep.is_clean(), "{name}: {:?}", rep.violations);
            assert!(rep.eta_est > 0.0);
        }
    }

    #[test]
    fn catalog_derivatives_match() {
        for name in CATALOG {
            let rep = gradient_check(&get(name).unwrap().spec, 100, 5).unwrap();
            assert!(rep.max_error() <= 1e-6, "{name}: {:?}", rep.errors);
        }
    }

    #[test]
    fn reference_reconstruction_residual() {
        let grid = Grid::new(1000).unwrap();
        for name in CATALOG {
            let entry = get(name).unwrap();
            let Some(r) = entry.reference else { continue };
            let m_est = check_assumptions(&entry.spec, 200, 0).unwrap().m_est;
            let ctrl = ControlSignal::from_fn(grid, |t| (r.control)(t)).unwrap();
            let traj = simulate_catchup(&entry.spec, &ctrl).unwrap();
            let worst = traj
                .states
                .iter()
                .enumerate()
                .map(|(j, x)| {
                    let e = (r.state)(grid.t(j));
                    x.iter().zip(&e).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            assert!(worst <= 2.0 * grid.dt() * m_est, "{name}: {worst}");
        }
    }
}
