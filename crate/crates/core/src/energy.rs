//! Quadratic energy terms `E(V) = V^T A V + b^T V + c` over the flattened
//! vertex vector, assembled from per-edge and per-face transform residuals.
//!
//! Every term here is a sum of squared residuals whose stencil weights are
//! shared by the x, y and z rows, so `A` couples only equal coordinates of
//! different vertices. Gradients follow the convention `2 A V + b`.
//!
//! Assembled terms also keep their residual rows and evaluate through them:
//! the expanded form cancels badly when thin edge tetrahedra make `A` large,
//! while the residuals of an exactly reproduced affine map stay at rounding
//! level.

use nalgebra::{Matrix3, Matrix3x4, Matrix4};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sharp::SharpChain;
use crate::sparse::CsrMatrix;
use crate::transforms::{EdgeOperator, EdgeTransformOperator, OperatorSet};

/// Scaled residual rows `s_r sum_k (w_r^T x_k - t_rk)^2` behind a form.
#[derive(Clone, Debug, Default)]
struct Residuals {
    /// Row `r` owns `entries[offsets[r]..offsets[r + 1]]`.
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
    targets: Vec<[f64; 3]>,
    scales: Vec<f64>,
}

impl Residuals {
    fn new() -> Self {
        Self {
            offsets: vec![0],
            ..Default::default()
        }
    }

    fn push(&mut self, entries: &[(usize, f64)], target: [f64; 3], scale: f64) {
        self.entries.extend_from_slice(entries);
        self.offsets.push(self.entries.len());
        self.targets.push(target);
        self.scales.push(scale);
    }

    fn append(&mut self, other: &Residuals, weight: f64) {
        if weight == 0.0 {
            return;
        }
        for r in 0..other.targets.len() {
            let row = &other.entries[other.offsets[r]..other.offsets[r + 1]];
            self.push(row, other.targets[r], weight * other.scales[r]);
        }
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut gradient = vec![0.0; x.len()];
        for (r, (target, scale)) in self.targets.iter().zip(&self.scales).enumerate() {
            let row = &self.entries[self.offsets[r]..self.offsets[r + 1]];
            let mut residual = [-target[0], -target[1], -target[2]];
            for &(v, w) in row {
                for (k, res) in residual.iter_mut().enumerate() {
                    *res += w * x[3 * v + k];
                }
            }
            value += scale * residual.iter().map(|e| e * e).sum::<f64>();
            for &(v, w) in row {
                for (k, res) in residual.iter().enumerate() {
                    gradient[3 * v + k] += 2.0 * scale * w * res;
                }
            }
        }
        (value, gradient)
    }
}

/// Sparse symmetric quadratic form in `3n` variables.
#[derive(Clone, Debug)]
pub struct QuadraticEnergy {
    matrix: CsrMatrix,
    linear: Vec<f64>,
    constant: f64,
    /// Present for assembled terms and combinations of them.
    residuals: Option<Residuals>,
}

impl QuadraticEnergy {
    pub fn new(matrix: CsrMatrix, linear: Vec<f64>, constant: f64) -> Result<Self> {
        let dim = matrix.nrows();
        if matrix.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: matrix.ncols(),
            });
        }
        if linear.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: linear.len(),
            });
        }
        for (r, c, a) in matrix.triplet_iter() {
            if (a - matrix.get(c, r)).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(Error::NotSymmetric { row: r, col: c });
            }
        }
        for (r, c, _) in matrix.triplet_iter() {
            if matrix.row_range(c).all(|k| matrix.col_indices()[k] != r) {
                return Err(Error::NotSymmetric { row: c, col: r });
            }
        }
        Ok(Self {
            matrix,
            linear,
            constant,
            residuals: None,
        })
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        dim: usize,
        triplets: &[(usize, usize, f64)],
        linear: Vec<f64>,
        constant: f64,
    ) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|t| t.0 >= dim || t.1 >= dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.max(c) + 1,
            });
        }
        Self::new(CsrMatrix::from_triplets(dim, dim, triplets), linear, constant)
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            matrix: CsrMatrix::zeros(dim, dim),
            linear: vec![0.0; dim],
            constant: 0.0,
            residuals: Some(Residuals::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(x)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.value_and_gradient(x)?.0)
    }

    /// Energy and gradient `2 A x + b`.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(x)?;
        Ok(self.value_and_gradient_unchecked(x))
    }

    pub(crate) fn value_and_gradient_unchecked(&self, x: &[f64]) -> (f64, Vec<f64>) {
        if let Some(rows) = &self.residuals {
            return rows.value_and_gradient(x);
        }
        let ax = self.apply_unchecked(x);
        let mut value = self.constant;
        let mut gradient = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            value += x[i] * ax[i] + self.linear[i] * x[i];
            gradient.push(2.0 * ax[i] + self.linear[i]);
        }
        (value, gradient)
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().sum()
    }
}

/// Weighted sum of energies of equal dimension.
pub fn combine(terms: &[(&QuadraticEnergy, f64)]) -> Result<QuadraticEnergy> {
    let Some(((first, _), rest)) = terms.split_first() else {
        return Err(Error::InvalidParameter("combine needs at least one term".into()));
    };
    let dim = first.dim();
    if let Some((q, _)) = rest.iter().find(|(q, _)| q.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: q.dim(),
        });
    }
    let matrices: Vec<_> = terms.iter().map(|(q, w)| (&q.matrix, *w)).collect();
    let matrix = CsrMatrix::linear_combination((dim, dim), &matrices);
    let mut linear = vec![0.0; dim];
    let mut constant = 0.0;
    for (q, w) in terms {
        for (acc, b) in linear.iter_mut().zip(&q.linear) {
            *acc += w * b;
        }
        constant += w * q.constant;
    }
    let residuals = terms.iter().try_fold(Residuals::new(), |mut acc, (q, w)| {
        acc.append(q.residuals.as_ref()?, *w);
        Some(acc)
    });
    Ok(QuadraticEnergy {
        matrix,
        linear,
        constant,
        residuals,
    })
}

/// Accumulates squared residuals `sum_k (w^T x_k - t_k)^2`, where `x_k` is the
/// k-th coordinate of all vertices.
pub(crate) struct ResidualAssembler {
    vertex_count: usize,
    /// Upper-triangular scalar products `(i, j, w_i w_j)` with `i <= j`.
    products: Vec<(usize, usize, f64)>,
    linear: Vec<f64>,
    constant: f64,
    rows: Residuals,
    scratch: Vec<(usize, f64)>,
}

impl ResidualAssembler {
    pub(crate) fn new(vertex_count: usize) -> Self {
        Self {
            vertex_count,
            products: Vec::new(),
            linear: vec![0.0; 3 * vertex_count],
            constant: 0.0,
            rows: Residuals::new(),
            scratch: Vec::new(),
        }
    }

    pub(crate) fn add(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, target: [f64; 3]) {
        self.scratch.clear();
        self.scratch.extend(entries);
        self.scratch.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(self.scratch.len());
        for &(v, w) in &self.scratch {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += w,
                _ => merged.push((v, w)),
            }
        }
        for (a, &(i, wi)) in merged.iter().enumerate() {
            for &(j, wj) in &merged[a..] {
                self.products.push((i, j, wi * wj));
            }
            for (k, t) in target.iter().enumerate() {
                self.linear[3 * i + k] -= 2.0 * t * wi;
            }
        }
        self.constant += target.iter().map(|t| t * t).sum::<f64>();
        self.rows.push(&merged, target, 1.0);
    }

    pub(crate) fn finish(self) -> QuadraticEnergy {
        let n = self.vertex_count;
        let upper = CsrMatrix::from_triplets(n, n, &self.products);
        let mut full = Vec::with_capacity(6 * upper.nnz());
        for (i, j, w) in upper.triplet_iter() {
            for k in 0..3 {
                full.push((3 * i + k, 3 * j + k, w));
                if i != j {
                    full.push((3 * j + k, 3 * i + k, w));
                }
            }
        }
        QuadraticEnergy {
            matrix: CsrMatrix::from_triplets(3 * n, 3 * n, &full),
            linear: self.linear,
            constant: self.constant,
            residuals: Some(self.rows),
        }
    }
}

/// The 9-DoF alignment every edge transform is pulled toward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetTransform {
    matrix: Matrix4<f64>,
}

impl TargetTransform {
    pub fn new(matrix: Matrix4<f64>) -> Result<Self> {
        let last = matrix.row(3);
        if (last[0].abs() + last[1].abs() + last[2].abs() + (last[3] - 1.0).abs()) > 1e-12 {
            return Err(Error::InvalidParameter(
                "target transform must have last row (0, 0, 0, 1)".into(),
            ));
        }
        let det = matrix.fixed_view::<3, 3>(0, 0).determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::InvalidParameter(
                "target transform has a singular linear block".into(),
            ));
        }
        Ok(Self { matrix })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn linear(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn top_block(&self) -> Matrix3x4<f64> {
        self.matrix.fixed_view::<3, 4>(0, 0).into_owned()
    }

    pub fn apply(&self, p: &nalgebra::Vector3<f64>) -> nalgebra::Vector3<f64> {
        self.linear() * p + self.matrix.fixed_view::<3, 1>(0, 3)
    }
}

/// `sum_e ||T_e(V) - T0||^2`, with planar edges contributing the residuals of
/// both incident face-restricted transforms.
pub fn assemble_shape(ops: &OperatorSet, target: &TargetTransform) -> QuadraticEnergy {
    let top = target.top_block();
    let linear = target.linear();
    let mut asm = ResidualAssembler::new(ops.vertex_count());
    for edge in ops.edges() {
        match edge {
            EdgeOperator::Volumetric(op) => {
                for j in 0..4 {
                    let t = top.column(j);
                    asm.add(op.column(j), [t[0], t[1], t[2]]);
                }
            }
            EdgeOperator::Planar { faces } => {
                for &f in faces {
                    let op = ops.face(f).expect("face operator for planar edge");
                    let restricted = op.restricted_target(&linear);
                    for j in 0..2 {
                        let t = restricted.column(j);
                        asm.add(op.column(j), [t[0], t[1], t[2]]);
                    }
                }
            }
            EdgeOperator::Boundary => {}
        }
    }
    asm.finish()
}

fn add_pair(asm: &mut ResidualAssembler, a: &EdgeTransformOperator, b: &EdgeTransformOperator) {
    for j in 0..4 {
        let negated = b.column(j).map(|(v, w)| (v, -w));
        asm.add(a.column(j).into_iter().chain(negated), [0.0; 3]);
    }
}

/// `sum_f sum_{e_i, e_j in f} ||T_ei(V) - T_ej(V)||^2` over pairs of
/// volumetric edges sharing a face.
pub fn assemble_smooth(mesh: &Mesh, ops: &OperatorSet) -> QuadraticEnergy {
    let mut asm = ResidualAssembler::new(ops.vertex_count());
    for edges in mesh.face_edges() {
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            if let (Some(ea), Some(eb)) = (ops.volumetric(edges[a]), ops.volumetric(edges[b])) {
                add_pair(&mut asm, ea, eb);
            }
        }
    }
    asm.finish()
}

/// Consecutive-edge differences along each sharp chain. Pairs touching a
/// planar edge are skipped, which splits the chain there; closed chains
/// include the pair across the seam.
pub fn assemble_sharp(chains: &[SharpChain], ops: &OperatorSet) -> QuadraticEnergy {
    let mut asm = ResidualAssembler::new(ops.vertex_count());
    for chain in chains {
        for (a, b) in chain.consecutive_pairs() {
            if let (Some(ea), Some(eb)) = (ops.volumetric(a), ops.volumetric(b)) {
                add_pair(&mut asm, ea, eb);
            }
        }
    }
    asm.finish()
}

/// Neighbor-average Laplacian term `sum_i ||L(v_i) - L(v'_i)||^2` as a
/// quadratic form in `V'`, with `V` the mesh's own vertices and
/// `L(v_i) = (1/|N(i)|) sum_{j in N(i)} v_j`.
pub fn laplacian_energy_term(mesh: &Mesh) -> Result<QuadraticEnergy> {
    let mut asm = ResidualAssembler::new(mesh.vertex_count());
    for (i, ring) in mesh.neighbors().iter().enumerate() {
        if ring.is_empty() {
            return Err(Error::IsolatedVertex { vertex: i });
        }
        let w = 1.0 / ring.len() as f64;
        let mean = ring
            .iter()
            .map(|&j| mesh.vertices()[j])
            .sum::<nalgebra::Vector3<f64>>()
            * w;
        asm.add(ring.iter().map(|&j| (j, w)), [mean.x, mean.y, mean.z]);
    }
    Ok(asm.finish())
}
