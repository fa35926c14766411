//! Small dense helpers, a triplet sparse matrix and a banded Cholesky
//! factorization used by the Newton inner solver.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Row vector times matrix: `v^T A`.
pub fn vec_mat(v: &[f64], a: &DMatrix<f64>) -> Vec<f64> {
    (0..a.ncols())
        .map(|c| (0..a.nrows()).map(|r| v[r] * a[(r, c)]).sum())
        .collect()
}

pub fn mat_vec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|r| (0..a.ncols()).map(|c| a[(r, c)] * v[c]).sum())
        .collect()
}

/// Sparse matrix in coordinate form. Duplicate entries are summed.
#[derive(Debug, Clone, Default)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            out[r] += v * x[c];
        }
        out
    }

    /// `A^T y`
    pub fn tmul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        self.tmul_acc(y, &mut out);
        out
    }

    /// `out += A^T y`
    pub fn tmul_acc(&self, y: &[f64], out: &mut [f64]) {
        for &(r, c, v) in &self.entries {
            out[c] += v * y[r];
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// Column indices touched by each row (sorted, deduplicated).
    pub fn row_patterns(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.nrows];
        for &(r, c, _) in &self.entries {
            rows[r].push(c);
        }
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
        }
        rows
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric adjacency structure.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    while order.len() < n {
        // start from an unvisited vertex of minimum degree
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited vertex");
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Symmetric positive definite matrix in lower band storage.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    // data[i * (bw + 1) + (i - j)] holds A[i][j] for i - bw <= j <= i
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Adds `v` to A[i][j] and, implicitly, A[j][i].
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn add_diagonal(&mut self, shift: f64) {
        for i in 0..self.n {
            let k = self.idx(i, i);
            self.data[k] += shift;
        }
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        (0..self.n).fold(0.0, |m, i| m.max(self.get(i, i).abs()))
    }

    /// In-place Cholesky factorization. Returns `None` when a pivot is not
    /// positive.
    pub fn cholesky(mut self) -> Option<BandCholesky> {
        let n = self.n;
        let bw = self.bw;
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut d = self.data[self.idx(j, j)];
            for k in lo..j {
                let l = self.data[self.idx(j, k)];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            let kjj = self.idx(j, j);
            self.data[kjj] = d;
            let hi = (j + bw).min(n - 1);
            for i in (j + 1)..=hi {
                let lo_i = i.saturating_sub(bw).max(lo);
                let mut s = self.data[self.idx(i, j)];
                for k in lo_i..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                let kij = self.idx(i, j);
                self.data[kij] = s / d;
            }
        }
        Some(BandCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    l: BandMatrix,
}

impl BandCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.n;
        let bw = self.l.bw;
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s -= self.l.data[self.l.idx(i, k)] * y[k];
            }
            y[i] = s / self.l.data[self.l.idx(i, i)];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = y[i];
            for k in (i + 1)..=hi {
                s -= self.l.data[self.l.idx(k, i)] * y[k];
            }
            y[i] = s / self.l.data[self.l.idx(i, i)];
        }
        y
    }
}

/// Non-negative least squares `min |A x - b|, x >= 0` (Lawson-Hanson).
/// Intended for the handful of generators of a finitely generated cone.
pub fn nnls(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let (m, n) = (a.nrows(), a.ncols());
    let bv = DVector::from_column_slice(b);
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * (1.0 + a.norm());
    for _outer in 0..(3 * n + 10) {
        let w = a.transpose() * (&bv - a * &x);
        let cand = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = cand else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = DMatrix::from_fn(m, idx.len(), |r, c| a[(r, idx[c])]);
            let z = match sub.clone().svd(true, true).solve(&bv, 1e-14) {
                Ok(z) => z,
                Err(_) => return x.iter().copied().collect(),
            };
            if z.iter().all(|&v| v > 0.0) {
                for (c, &k) in idx.iter().enumerate() {
                    x[k] = z[c];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (c, &k) in idx.iter().enumerate() {
                if z[c] <= 0.0 {
                    let denom = x[k] - z[c];
                    if denom > 0.0 {
                        alpha = alpha.min(x[k] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (c, &k) in idx.iter().enumerate() {
                x[k] += alpha * (z[c] - x[k]);
                if x[k] <= 1e-15 {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
            if idx.iter().all(|&k| !passive[k]) {
                break;
            }
        }
    }
    x.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_cholesky_matches_dense_solve() {
        // tridiagonal SPD
        let n = 7;
        let mut band = BandMatrix::zeros(n, 1);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            band.add(i, i, 4.0);
            dense[(i, i)] = 4.0;
            if i > 0 {
                band.add(i, i - 1, -1.0);
                dense[(i, i - 1)] = -1.0;
                dense[(i - 1, i)] = -1.0;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 2.0).collect();
        let x = band.cholesky().unwrap().solve(&b);
        let expect = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..n {
            assert!((x[i] - expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut band = BandMatrix::zeros(2, 1);
        band.add(0, 0, 1.0);
        band.add(1, 1, 1.0);
        band.add(1, 0, 2.0);
        assert!(band.cholesky().is_none());
    }

    #[test]
    fn rcm_shrinks_bandwidth_of_shuffled_path() {
        // path graph 0-5-1-4-2-3 labelled out of order
        let path = [0usize, 5, 1, 4, 2, 3];
        let mut adj = vec![Vec::new(); 6];
        for w in path.windows(2) {
            adj[w[0]].push(w[1]);
            adj[w[1]].push(w[0]);
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut inv = vec![0; 6];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let bw = path
            .windows(2)
            .map(|w| inv[w[0]].abs_diff(inv[w[1]]))
            .max()
            .unwrap();
        assert_eq!(bw, 1);
    }

    #[test]
    fn nnls_projects_onto_cone() {
        // cone generated by e1; target (-1, 2) -> coefficient 0
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(nnls(&a, &[-1.0, 2.0]), vec![0.0]);
        assert!((nnls(&a, &[3.0, 2.0])[0] - 3.0).abs() < 1e-12);
        // two generators spanning the first quadrant
        let a = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let x = nnls(&a, &[2.0, 1.0]);
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 1.0).abs() < 1e-10);
    }
}
