//! Triangle meshes with part labels, derived edge topology and per-edge
//! tetrahedra.

use std::collections::BTreeSet;

use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold on `|det(U0)| / (mean edge length)^3` below which an edge
/// tetrahedron is classified as degenerate.
pub const DEGENERACY_RATIO: f64 = 1e-6;

/// Semantic part identifier attached to mesh vertices and cloud points.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct PartLabel(pub u32);

impl std::fmt::Display for PartLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An unordered vertex pair together with its one or two incident faces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    /// Endpoints, smaller index first.
    pub vertices: [usize; 2],
    /// Incident faces in increasing face id.
    pub faces: (usize, Option<usize>),
}

impl Edge {
    pub fn is_interior(&self) -> bool {
        self.faces.1.is_some()
    }

    pub fn face_count(&self) -> usize {
        1 + usize::from(self.faces.1.is_some())
    }
}

/// Immutable triangle mesh. Construction validates indices and manifoldness
/// and derives the edge list in lexicographic order of sorted vertex pairs.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    labels: Vec<PartLabel>,
    edges: Vec<Edge>,
    face_edges: Vec<[usize; 3]>,
    neighbors: Vec<Vec<usize>>,
}

impl Mesh {
    /// Builds a mesh, deriving edges and incidence.
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
        labels: Vec<PartLabel>,
    ) -> Result<Self> {
        let n = vertices.len();
        if labels.len() != n {
            return Err(Error::LabelCount {
                expected: n,
                found: labels.len(),
            });
        }
        for (f, face) in faces.iter().enumerate() {
            for &index in face {
                if index >= n {
                    return Err(Error::IndexOutOfRange {
                        face: f,
                        index,
                        vertex_count: n,
                    });
                }
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::DegenerateFace {
                    face: f,
                    vertices: *face,
                });
            }
        }

        let mut half: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(3 * faces.len());
        for (f, face) in faces.iter().enumerate() {
            for corner in 0..3 {
                let a = face[corner];
                let b = face[(corner + 1) % 3];
                half.push((a.min(b), a.max(b), f, corner));
            }
        }
        half.sort_unstable();

        let mut edges = Vec::new();
        let mut face_edges = vec![[usize::MAX; 3]; faces.len()];
        let mut i = 0;
        while i < half.len() {
            let (a, b, _, _) = half[i];
            let mut j = i;
            while j < half.len() && half[j].0 == a && half[j].1 == b {
                j += 1;
            }
            let count = j - i;
            if count > 2 {
                return Err(Error::NonManifoldEdge { a, b, count });
            }
            let id = edges.len();
            for &(_, _, f, corner) in &half[i..j] {
                face_edges[f][corner] = id;
            }
            edges.push(Edge {
                vertices: [a, b],
                faces: (half[i].2, (count == 2).then(|| half[i + 1].2)),
            });
            i = j;
        }

        let mut neighbor_sets = vec![BTreeSet::new(); n];
        for edge in &edges {
            let [a, b] = edge.vertices;
            neighbor_sets[a].insert(b);
            neighbor_sets[b].insert(a);
        }
        let neighbors = neighbor_sets
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();

        Ok(Self {
            vertices,
            faces,
            labels,
            edges,
            face_edges,
            neighbors,
        })
    }

    /// Builds a mesh where every vertex carries the same label.
    pub fn unlabeled(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let labels = vec![PartLabel(0); vertices.len()];
        Self::new(vertices, faces, labels)
    }

    /// Undeformed vertex positions.
    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn labels(&self) -> &[PartLabel] {
        &self.labels
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge ids of each face, in corner order `(v0,v1), (v1,v2), (v2,v0)`.
    pub fn face_edges(&self) -> &[[usize; 3]] {
        &self.face_edges
    }

    /// Sorted one-ring neighbors of each vertex.
    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Distinct labels in increasing order.
    pub fn label_set(&self) -> BTreeSet<PartLabel> {
        self.labels.iter().copied().collect()
    }

    /// Same topology and labels, different vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vector3<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.vertices.len(),
                found: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            ..self.clone()
        })
    }

    /// Outward (counter-clockwise) unit normal of a face; zero for a
    /// zero-area face.
    pub fn face_normal(&self, face: usize, positions: &[Vector3<f64>]) -> Vector3<f64> {
        let [a, b, c] = self.faces[face];
        let n = (positions[b] - positions[a]).cross(&(positions[c] - positions[a]));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vector3::zeros()
        }
    }

    /// Diagonal of the axis-aligned bounding box of the undeformed vertices.
    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.vertices)
    }
}

pub(crate) fn bbox_diagonal(points: &[Vector3<f64>]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let (lo, hi) = points
        .iter()
        .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    (hi - lo).norm()
}

/// Arithmetic mean of the Euclidean lengths of all edges.
pub fn mean_edge_length(mesh: &Mesh) -> Result<f64> {
    mean_edge_length_at(mesh, mesh.vertices())
}

/// Mean edge length of the mesh topology evaluated at other positions.
pub fn mean_edge_length_at(mesh: &Mesh, positions: &[Vector3<f64>]) -> Result<f64> {
    if mesh.edges.is_empty() {
        return Err(Error::EmptyEdges);
    }
    let total: f64 = mesh
        .edges
        .iter()
        .map(|e| (positions[e.vertices[1]] - positions[e.vertices[0]]).norm())
        .sum();
    Ok(total / mesh.edges.len() as f64)
}

/// The four-vertex stencil of an interior edge and, when it spans a proper
/// tetrahedron, the inverse of its homogeneous position matrix.
#[derive(Clone, Debug)]
pub struct EdgeTetra {
    pub edge: usize,
    /// `(i1, i2, i3, i4)` with faces `(i1,i2,i3)` and `(i2,i1,i4)`.
    pub stencil: [usize; 4],
    /// Inverse of `U0`, whose columns are `(v0_i, 1)`; `None` when degenerate.
    pub basis_inverse: Option<Matrix4<f64>>,
}

impl EdgeTetra {
    pub fn is_degenerate(&self) -> bool {
        self.basis_inverse.is_none()
    }
}

/// Homogeneous position matrix with columns `(v_i, 1)`.
pub(crate) fn homogeneous_basis(positions: &[Vector3<f64>], stencil: &[usize; 4]) -> Matrix4<f64> {
    let mut u = Matrix4::zeros();
    for (col, &v) in stencil.iter().enumerate() {
        let p = positions[v];
        u[(0, col)] = p.x;
        u[(1, col)] = p.y;
        u[(2, col)] = p.z;
        u[(3, col)] = 1.0;
    }
    u
}

fn third_vertex(face: &[usize; 3], a: usize, b: usize) -> usize {
    face.iter()
        .copied()
        .find(|&v| v != a && v != b)
        .expect("face contains a vertex outside the edge")
}

fn has_directed(face: &[usize; 3], a: usize, b: usize) -> bool {
    (0..3).any(|c| face[c] == a && face[(c + 1) % 3] == b)
}

/// Stencil `(i1, i2, i3, i4)` of an interior edge: `i1 < i2`, `i3` comes from
/// the face traversing `i1 -> i2` counter-clockwise, `i4` from the other one.
pub(crate) fn edge_stencil(mesh: &Mesh, edge: &Edge) -> Option<[usize; 4]> {
    let [i1, i2] = edge.vertices;
    let (fa, fb) = (edge.faces.0, edge.faces.1?);
    let (first, second) = if !has_directed(&mesh.faces[fa], i1, i2)
        && has_directed(&mesh.faces[fb], i1, i2)
    {
        (fb, fa)
    } else {
        (fa, fb)
    };
    Some([
        i1,
        i2,
        third_vertex(&mesh.faces[first], i1, i2),
        third_vertex(&mesh.faces[second], i1, i2),
    ])
}

/// One record per interior edge, in edge order; boundary edges are skipped.
pub fn edge_tetrahedra(mesh: &Mesh) -> Vec<EdgeTetra> {
    let scale = mean_edge_length(mesh).unwrap_or(0.0);
    let volume_scale = scale * scale * scale;
    mesh.edges
        .iter()
        .enumerate()
        .filter_map(|(id, edge)| {
            let stencil = edge_stencil(mesh, edge)?;
            let u = homogeneous_basis(&mesh.vertices, &stencil);
            let ratio = if volume_scale > 0.0 {
                u.determinant().abs() / volume_scale
            } else {
                0.0
            };
            let basis_inverse = if ratio >= DEGENERACY_RATIO {
                u.try_inverse()
            } else {
                None
            };
            Some(EdgeTetra {
                edge: id,
                stencil,
                basis_inverse,
            })
        })
        .collect()
}

/// Scan points with one part label each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledPointCloud {
    pub points: Vec<Vector3<f64>>,
    pub labels: Vec<PartLabel>,
}

impl LabeledPointCloud {
    pub fn new(points: Vec<Vector3<f64>>, labels: Vec<PartLabel>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::LabelCount {
                expected: points.len(),
                found: labels.len(),
            });
        }
        Ok(Self { points, labels })
    }

    /// The labeled vertices of a mesh, used as a target cloud when morphing.
    pub fn from_mesh(mesh: &Mesh) -> Self {
        Self {
            points: mesh.vertices().to_vec(),
            labels: mesh.labels().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label_set(&self) -> BTreeSet<PartLabel> {
        self.labels.iter().copied().collect()
    }

    /// Fails with the first cloud label that has no vertex on the mesh.
    pub fn check_labels_against(&self, mesh: &Mesh) -> Result<()> {
        let mesh_labels = mesh.label_set();
        match self.label_set().into_iter().find(|l| !mesh_labels.contains(l)) {
            Some(label) => Err(Error::UnknownLabel(label.0)),
            None => Ok(()),
        }
    }
}

/// Flattens positions into `[x0, y0, z0, x1, ...]`.
pub fn flatten(positions: &[Vector3<f64>]) -> Vec<f64> {
    positions.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// Inverse of [`flatten`]; trailing values that do not fill a vertex are
/// ignored.
pub fn unflatten(flat: &[f64]) -> Vec<Vector3<f64>> {
    flat.chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect()
}
