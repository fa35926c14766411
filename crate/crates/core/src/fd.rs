//! Central finite differences.

use nalgebra::DMatrix;

/// Step used for coordinate `i`: `1e-5 * (1 + |x_i|)`.
#[inline]
pub fn step(xi: f64) -> f64 {
    1e-5 * (1.0 + xi.abs())
}

pub fn gradient<F>(f: F, x: &[f64]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step(x[i]);
            work[i] = x[i] + h;
            let fp = f(&work);
            work[i] = x[i] - h;
            let fm = f(&work);
            work[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Jacobian of `f: R^k -> R^r` as an `r x k` matrix.
pub fn jacobian<F>(f: F, x: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let r = f(x).len();
    let mut jac = DMatrix::zeros(r, x.len());
    let mut work = x.to_vec();
    for i in 0..x.len() {
        let h = step(x[i]);
        work[i] = x[i] + h;
        let fp = f(&work);
        work[i] = x[i] - h;
        let fm = f(&work);
        work[i] = x[i];
        for k in 0..r {
            jac[(k, i)] = (fp[k] - fm[k]) / (2.0 * h);
        }
    }
    jac
}

/// `|a - b|_inf / max(1, |a|_inf)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / scale
}

pub fn relative_error_mat(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    relative_error(analytic.as_slice(), numeric.as_slice())
}
