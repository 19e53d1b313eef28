//! Linear operators from deformed vertex positions to per-edge affine
//! transforms and to plane-restricted per-face transforms.
//!
//! Both operator kinds act identically on the x, y and z coordinate rows: an
//! output entry `(k, j)` is `sum_s w[s][j] * V[stencil[s]][k]`. Energies rely
//! on this to assemble one scalar stencil per output column.

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Matrix3x4, Vector3};

use crate::error::{Error, Result};
use crate::mesh::{edge_tetrahedra, mean_edge_length, EdgeTetra, Mesh};

/// Triangles with `area / (mean edge length)^2` below this are rejected.
pub const ZERO_AREA_RATIO: f64 = 1e-9;

fn check_len(flat: &[f64], vertex_count: usize) -> Result<()> {
    if flat.len() != 3 * vertex_count {
        return Err(Error::DimensionMismatch {
            expected: 3 * vertex_count,
            found: flat.len(),
        });
    }
    Ok(())
}

/// Maps `V` to the top 3x4 block of the edge transform `T_e`, which carries
/// the undeformed stencil onto the deformed one.
#[derive(Clone, Debug)]
pub struct EdgeTransformOperator {
    pub edge: usize,
    stencil: [usize; 4],
    /// `weights[s][j]`: coefficient of stencil vertex `s` in output column `j`.
    weights: [[f64; 4]; 4],
    vertex_count: usize,
}

impl EdgeTransformOperator {
    pub fn new(tetra: &EdgeTetra, vertex_count: usize) -> Result<Self> {
        let inverse = tetra
            .basis_inverse
            .ok_or(Error::DegenerateTetra { edge: tetra.edge })?;
        let mut weights = [[0.0; 4]; 4];
        for (s, row) in weights.iter_mut().enumerate() {
            for (j, w) in row.iter_mut().enumerate() {
                *w = inverse[(s, j)];
            }
        }
        Ok(Self {
            edge: tetra.edge,
            stencil: tetra.stencil,
            weights,
            vertex_count,
        })
    }

    pub fn stencil(&self) -> &[usize; 4] {
        &self.stencil
    }

    /// Scalar stencil producing output column `j` (0..3 linear, 3 translation).
    pub fn column(&self, j: usize) -> [(usize, f64); 4] {
        std::array::from_fn(|s| (self.stencil[s], self.weights[s][j]))
    }

    /// Evaluates the top block `(C | d)` of `T_e` at flattened positions.
    pub fn eval(&self, flat: &[f64]) -> Result<Matrix3x4<f64>> {
        check_len(flat, self.vertex_count)?;
        Ok(self.eval_unchecked(flat))
    }

    pub(crate) fn eval_unchecked(&self, flat: &[f64]) -> Matrix3x4<f64> {
        let mut out = Matrix3x4::zeros();
        for (s, &v) in self.stencil.iter().enumerate() {
            for k in 0..3 {
                let x = flat[3 * v + k];
                for j in 0..4 {
                    out[(k, j)] += x * self.weights[s][j];
                }
            }
        }
        out
    }
}

/// Maps `V` to the 3x2 transform of one triangle restricted to its
/// undeformed plane, `A_f = D(V) E0^-1`.
#[derive(Clone, Debug)]
pub struct FaceRestrictedOperator {
    pub face: usize,
    vertices: [usize; 3],
    frame0: Matrix3x2<f64>,
    weights: [[f64; 2]; 3],
    vertex_count: usize,
}

impl FaceRestrictedOperator {
    /// `length_scale` is the mean edge length used by the zero-area test.
    pub fn new(
        face_id: usize,
        face: [usize; 3],
        positions: &[Vector3<f64>],
        length_scale: f64,
    ) -> Result<Self> {
        let [a, b, c] = face;
        let e1 = positions[b] - positions[a];
        let e2 = positions[c] - positions[a];
        let area = 0.5 * e1.cross(&e2).norm();
        if !(area > 0.0) || area < ZERO_AREA_RATIO * length_scale * length_scale {
            return Err(Error::ZeroAreaFace { face: face_id });
        }
        let t1 = e1.normalize();
        let t2 = (e2 - t1 * t1.dot(&e2)).normalize();
        let frame0 = Matrix3x2::from_columns(&[t1, t2]);
        let edges0 = Matrix3x2::from_columns(&[e1, e2]);
        let local: Matrix2<f64> = frame0.transpose() * edges0;
        let m = local
            .try_inverse()
            .ok_or(Error::ZeroAreaFace { face: face_id })?;
        let weights = [
            [-(m[(0, 0)] + m[(1, 0)]), -(m[(0, 1)] + m[(1, 1)])],
            [m[(0, 0)], m[(0, 1)]],
            [m[(1, 0)], m[(1, 1)]],
        ];
        Ok(Self {
            face: face_id,
            vertices: face,
            frame0,
            weights,
            vertex_count: positions.len(),
        })
    }

    /// Orthonormal in-plane basis of the undeformed triangle.
    pub fn frame0(&self) -> &Matrix3x2<f64> {
        &self.frame0
    }

    pub fn vertices(&self) -> &[usize; 3] {
        &self.vertices
    }

    pub fn column(&self, j: usize) -> [(usize, f64); 3] {
        std::array::from_fn(|s| (self.vertices[s], self.weights[s][j]))
    }

    pub fn eval(&self, flat: &[f64]) -> Result<Matrix3x2<f64>> {
        check_len(flat, self.vertex_count)?;
        Ok(self.eval_unchecked(flat))
    }

    pub(crate) fn eval_unchecked(&self, flat: &[f64]) -> Matrix3x2<f64> {
        let mut out = Matrix3x2::zeros();
        for (s, &v) in self.vertices.iter().enumerate() {
            for k in 0..3 {
                let x = flat[3 * v + k];
                for j in 0..2 {
                    out[(k, j)] += x * self.weights[s][j];
                }
            }
        }
        out
    }

    /// Restricted transform of the face after a global linear map.
    pub fn restricted_target(&self, linear: &Matrix3<f64>) -> Matrix3x2<f64> {
        linear * self.frame0
    }
}

/// How an edge participates in the transform-based energies.
#[derive(Clone, Debug)]
pub enum EdgeOperator {
    /// Interior edge with a proper tetrahedron.
    Volumetric(EdgeTransformOperator),
    /// Interior edge with a flat tetrahedron; its two incident faces are used.
    Planar { faces: [usize; 2] },
    /// Boundary edge; excluded from all terms.
    Boundary,
}

/// Operators for every edge of a mesh plus face operators for the faces
/// adjacent to planar edges. Built once from the undeformed mesh.
#[derive(Clone, Debug)]
pub struct OperatorSet {
    edges: Vec<EdgeOperator>,
    faces: Vec<Option<FaceRestrictedOperator>>,
    vertex_count: usize,
}

impl OperatorSet {
    pub fn build(mesh: &Mesh) -> Result<Self> {
        let n = mesh.vertex_count();
        let scale = mean_edge_length(mesh).unwrap_or(0.0);
        let mut edges = vec![EdgeOperator::Boundary; mesh.edges().len()];
        let mut faces: Vec<Option<FaceRestrictedOperator>> = vec![None; mesh.faces().len()];
        for tetra in edge_tetrahedra(mesh) {
            let edge = &mesh.edges()[tetra.edge];
            edges[tetra.edge] = if tetra.is_degenerate() {
                let pair = [edge.faces.0, edge.faces.1.expect("interior edge")];
                for f in pair {
                    if faces[f].is_none() {
                        faces[f] = Some(FaceRestrictedOperator::new(
                            f,
                            mesh.faces()[f],
                            mesh.vertices(),
                            scale,
                        )?);
                    }
                }
                EdgeOperator::Planar { faces: pair }
            } else {
                EdgeOperator::Volumetric(EdgeTransformOperator::new(&tetra, n)?)
            };
        }
        Ok(Self {
            edges,
            faces,
            vertex_count: n,
        })
    }

    pub fn edges(&self) -> &[EdgeOperator] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> &EdgeOperator {
        &self.edges[id]
    }

    pub fn volumetric(&self, id: usize) -> Option<&EdgeTransformOperator> {
        match &self.edges[id] {
            EdgeOperator::Volumetric(op) => Some(op),
            _ => None,
        }
    }

    pub fn face(&self, id: usize) -> Option<&FaceRestrictedOperator> {
        self.faces[id].as_ref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }
}
