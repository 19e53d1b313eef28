//! Compressed sparse row storage with sorted, duplicate-free columns.

use std::ops::Range;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            offsets: vec![0; nrows + 1],
            cols: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Sums duplicate entries in input order. Indices must be in range.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of range");
            counts[r + 1] += 1;
        }
        for r in 0..nrows {
            counts[r + 1] += counts[r];
        }
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            bucket[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut offsets = Vec::with_capacity(nrows + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for r in 0..nrows {
            let row = &mut bucket[counts[r]..counts[r + 1]];
            // stable sort keeps duplicate summation in input order
            row.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for &(c, v) in row.iter() {
                if c == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    values.push(v);
                    last = c;
                }
            }
            offsets.push(cols.len());
        }
        Self {
            nrows,
            ncols,
            offsets,
            cols,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_range(&self, row: usize) -> Range<usize> {
        self.offsets[row]..self.offsets[row + 1]
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(row, col, value)` in row-major order.
    pub fn triplet_iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row_range(r).map(move |k| (r, self.cols[k], self.values[k])))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.row_range(row);
        match self.cols[range.clone()].binary_search(&col) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = self.triplet_iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &triplets)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| self.row_range(r).map(|k| self.values[k] * x[self.cols[k]]).sum())
            .collect()
    }

    /// `sum_i w_i M_i` over matrices of equal shape.
    pub fn linear_combination(shape: (usize, usize), terms: &[(&CsrMatrix, f64)]) -> Self {
        let mut triplets = Vec::new();
        for (m, w) in terms {
            assert_eq!((m.nrows, m.ncols), shape);
            triplets.extend(m.triplet_iter().map(|(r, c, v)| (r, c, w * v)));
        }
        Self::from_triplets(shape.0, shape.1, &triplets)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }
}
