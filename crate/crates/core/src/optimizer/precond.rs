//! Exact inverse of the quadratic Hessian `2A`, stored as an envelope
//! `L D L^T` factorization under a reverse Cuthill-McKee ordering.

use std::collections::VecDeque;

use crate::energy::QuadraticEnergy;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Pivots below this fraction of the largest diagonal entry are rejected.
const PIVOT_TOLERANCE: f64 = 1e-12;
/// Relative diagonal shift used when the unshifted factorization fails.
const REGULARIZATION: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Preconditioner {
    /// `perm[k]` is the original index placed at position `k`.
    perm: Vec<usize>,
    first: Vec<usize>,
    /// Row `i` of `L` holds columns `first[i]..i` at `offsets[i]..offsets[i + 1]`.
    offsets: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    regularization_used: f64,
}

/// Factors `2A`. If that is numerically singular, factors `2A + lambda I`
/// with `lambda = 1e-8 trace(2A) / dim` (or `1e-8` when the trace vanishes).
pub fn factor_preconditioner(quad: &QuadraticEnergy) -> Result<Preconditioner> {
    Preconditioner::new(quad.matrix(), 2.0)
}

impl Preconditioner {
    pub fn new(matrix: &CsrMatrix, scale: f64) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 {
            return Err(Error::Factorization("cannot factor an empty matrix".into()));
        }
        let perm = reverse_cuthill_mckee(matrix);
        match Self::factor(matrix, scale, &perm, 0.0) {
            Ok(p) => Ok(p),
            Err(_) => {
                let trace: f64 = scale * matrix.diagonal().iter().sum::<f64>();
                let mut lambda = REGULARIZATION * trace / n as f64;
                if !(lambda > 0.0 && lambda.is_finite()) {
                    lambda = REGULARIZATION;
                }
                Self::factor(matrix, scale, &perm, lambda)
            }
        }
    }

    fn factor(matrix: &CsrMatrix, scale: f64, perm: &[usize], shift: f64) -> Result<Self> {
        let n = perm.len();
        let mut position = vec![0; n];
        for (k, &i) in perm.iter().enumerate() {
            position[i] = k;
        }
        // permuted lower triangle, row by row
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (r, c, v) in matrix.triplet_iter() {
            let (pr, pc) = (position[r], position[c]);
            if pc <= pr {
                rows[pr].push((pc, scale * v));
            }
        }
        let first: Vec<usize> = rows
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().map(|e| e.0).min().unwrap_or(i).min(i))
            .collect();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            offsets.push(offsets[i] + (i - first[i]));
        }
        let mut lower = vec![0.0; offsets[n]];
        let mut diag = vec![shift; n];
        for (i, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                if c == i {
                    diag[i] += v;
                } else {
                    lower[offsets[i] + c - first[i]] += v;
                }
            }
        }
        let max_diag = diag.iter().copied().fold(0.0, f64::max);
        if !(max_diag > 0.0 && max_diag.is_finite()) {
            return Err(Error::Factorization("matrix has no positive diagonal".into()));
        }

        // lower[i] temporarily holds L[i][j] * D[j]; converted once row i is done
        let mut scaled = Vec::new();
        for i in 0..n {
            let fi = first[i];
            let row_start = offsets[i];
            scaled.clear();
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = lower[row_start + j - fi];
                let row_j = &lower[offsets[j]..offsets[j + 1]];
                for k in k0..j {
                    s -= scaled[k - fi] * row_j[k - fj];
                }
                scaled.push(s);
            }
            let mut d = diag[i];
            for (jj, &s) in scaled.iter().enumerate() {
                let j = fi + jj;
                let l = s / diag[j];
                lower[row_start + jj] = l;
                d -= s * l;
            }
            if !d.is_finite() || d <= PIVOT_TOLERANCE * max_diag {
                return Err(Error::Factorization(format!("pivot {d:e} at row {i}")));
            }
            diag[i] = d;
        }
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if lo / hi < PIVOT_TOLERANCE {
            return Err(Error::Factorization(format!("pivot ratio {:e}", lo / hi)));
        }
        Ok(Self {
            perm: perm.to_vec(),
            first,
            offsets,
            lower,
            diag,
            regularization_used: shift,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Diagonal shift added before factoring; zero when none was needed.
    pub fn regularization_used(&self) -> f64 {
        self.regularization_used
    }

    /// Solves `(2A + lambda I) x = r`.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: r.len(),
            });
        }
        Ok(self.solve_unchecked(r))
    }

    pub(crate) fn solve_unchecked(&self, r: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y: Vec<f64> = self.perm.iter().map(|&i| r[i]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.lower[self.offsets[i]..self.offsets[i + 1]];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] -= s;
        }
        for (v, d) in y.iter_mut().zip(&self.diag) {
            *v /= d;
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let yi = y[i];
            let row = &self.lower[self.offsets[i]..self.offsets[i + 1]];
            for (l, v) in row.iter().zip(&mut y[fi..i]) {
                *v -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (k, &i) in self.perm.iter().enumerate() {
            x[i] = y[k];
        }
        x
    }

    /// Entries stored in the envelope of `L`.
    pub fn envelope_size(&self) -> usize {
        self.lower.len()
    }
}

/// Bandwidth-reducing ordering of the symmetric sparsity pattern; every
/// connected component starts from a pseudo-peripheral vertex.
pub fn reverse_cuthill_mckee(matrix: &CsrMatrix) -> Vec<usize> {
    let n = matrix.nrows();
    let adjacency: Vec<Vec<usize>> = (0..n)
        .map(|r| {
            matrix
                .row_range(r)
                .map(|k| matrix.col_indices()[k])
                .filter(|&c| c != r && c < n)
                .collect()
        })
        .collect();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_levels = |start: usize, visited: &[bool]| -> (usize, usize) {
        // (eccentricity, a minimum-degree vertex in the last level)
        let mut level = vec![usize::MAX; n];
        level[start] = 0;
        let mut queue = VecDeque::from([start]);
        let mut last = start;
        while let Some(v) = queue.pop_front() {
            if level[v] > level[last] || (level[v] == level[last] && degree[v] < degree[last]) {
                last = v;
            }
            for &w in &adjacency[v] {
                if !visited[w] && level[w] == usize::MAX {
                    level[w] = level[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        (level[last], last)
    };
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        let mut start = seed;
        let (mut ecc, mut far) = bfs_levels(start, &visited);
        for _ in 0..8 {
            let (e, f) = bfs_levels(far, &visited);
            if e <= ecc {
                break;
            }
            start = far;
            ecc = e;
            far = f;
        }
        let (e, _) = bfs_levels(far, &visited);
        if e > ecc {
            start = far;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}
