//! Fit and surface-quality measures: Accuracy, tMMD, DAME, exact EMD and
//! the Laplacian smoothness report.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::laplacian_energy_term;
use crate::error::{Error, Result};
use crate::mesh::{flatten, Mesh};
use crate::spatial::{KdTree, Metric};

/// Default closeness threshold for Accuracy and tMMD.
pub const DEFAULT_TAU: f64 = 0.2;

/// Largest point set accepted by [`emd_exact`].
pub const EMD_LIMIT: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Percentage of vertices closer than `tau` to the scan.
    pub accuracy: f64,
    pub tmmd: f64,
    pub tau: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub distances: Option<Vec<f64>>,
}

fn check_inputs(vertices: &[Vector3<f64>], scan: &[Vector3<f64>], tau: f64) -> Result<()> {
    if vertices.is_empty() || scan.is_empty() {
        return Err(Error::InvalidParameter("fit metrics need non-empty vertices and scan".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// L1 distance from every vertex to its nearest scan point.
pub fn nearest_l1_distances(vertices: &[Vector3<f64>], scan: &[Vector3<f64>]) -> Vec<f64> {
    let tree = KdTree::new(scan);
    vertices
        .par_iter()
        .map(|v| tree.nearest(v, Metric::L1).map_or(f64::INFINITY, |(_, d)| d))
        .collect()
}

pub fn fit_report(vertices: &[Vector3<f64>], scan: &[Vector3<f64>], tau: f64, keep_distances: bool) -> Result<FitReport> {
    check_inputs(vertices, scan, tau)?;
    let distances = nearest_l1_distances(vertices, scan);
    let n = distances.len() as f64;
    let close = distances.iter().filter(|&&d| d < tau).count() as f64;
    let clamped: f64 = distances.iter().map(|d| d.min(tau)).sum();
    Ok(FitReport {
        accuracy: 100.0 * close / n,
        tmmd: clamped / n,
        tau,
        distances: keep_distances.then_some(distances),
    })
}

pub fn accuracy(vertices: &[Vector3<f64>], scan: &[Vector3<f64>], tau: f64) -> Result<f64> {
    Ok(fit_report(vertices, scan, tau, false)?.accuracy)
}

pub fn tmmd(vertices: &[Vector3<f64>], scan: &[Vector3<f64>], tau: f64) -> Result<f64> {
    Ok(fit_report(vertices, scan, tau, false)?.tmmd)
}

/// `sqrt(ln(100 / pi)) / pi`, which caps a single-edge DAME term at 100.
pub fn dame_scale() -> f64 {
    (100.0 / std::f64::consts::PI).ln().sqrt() / std::f64::consts::PI
}

/// Signed dihedral of an interior edge: 0 when flat, positive when convex
/// with respect to the face normals.
pub fn oriented_dihedral(mesh: &Mesh, positions: &[Vector3<f64>], edge: usize) -> Option<f64> {
    let e = &mesh.edges()[edge];
    let g = e.faces.1?;
    let f = e.faces.0;
    let n1 = mesh.face_normal(f, positions);
    let n2 = mesh.face_normal(g, positions);
    let angle = n1.cross(&n2).norm().atan2(n1.dot(&n2));
    let [a, b] = e.vertices;
    let opposite = mesh.faces()[g].into_iter().find(|&v| v != a && v != b)?;
    let convex = (positions[opposite] - positions[a]).dot(&n1) <= 0.0;
    Some(if convex { angle } else { -angle })
}

/// Mean over interior edges of `|D - D'| exp((Z D)^2)`, with `D` measured on
/// `original` and `D'` on the same connectivity at `deformed`.
pub fn dame(original: &Mesh, deformed: &[Vector3<f64>]) -> Result<f64> {
    if deformed.len() != original.vertex_count() {
        return Err(Error::TopologyMismatch(format!(
            "{} deformed vertices for a mesh with {}",
            deformed.len(),
            original.vertex_count()
        )));
    }
    let z = dame_scale();
    let mut total = 0.0;
    let mut count = 0usize;
    for e in 0..original.edges().len() {
        if let (Some(d0), Some(d1)) = (
            oriented_dihedral(original, original.vertices(), e),
            oriented_dihedral(original, deformed, e),
        ) {
            total += (d0 - d1).abs() * ((z * d0).powi(2)).exp();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Minimum over bijections of the summed Euclidean distances.
pub fn emd_exact(p: &[Vector3<f64>], q: &[Vector3<f64>]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    if p.len() > EMD_LIMIT {
        return Err(Error::TooLarge {
            size: p.len(),
            limit: EMD_LIMIT,
        });
    }
    let cost: Vec<Vec<f64>> = p.iter().map(|a| q.iter().map(|b| (a - b).norm()).collect()).collect();
    let assignment = hungarian(&cost);
    Ok(assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum())
}

/// Square assignment problem by shortest augmenting paths with potentials;
/// returns the column assigned to each row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if !used[col] {
                    let reduced = cost[r - 1][col - 1] - u[r] - v[col];
                    if reduced < min_to[col] {
                        min_to[col] = reduced;
                        way[col] = col0;
                    }
                    if min_to[col] < delta {
                        delta = min_to[col];
                        col1 = col;
                    }
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        if owner[col] > 0 {
            assignment[owner[col] - 1] = col - 1;
        }
    }
    assignment
}

/// Laplacian smoothness between the mesh's own vertices and `deformed`.
pub fn laplacian_report(mesh: &Mesh, deformed: &[Vector3<f64>]) -> Result<f64> {
    if deformed.len() != mesh.vertex_count() {
        return Err(Error::TopologyMismatch(format!(
            "{} deformed vertices for a mesh with {}",
            deformed.len(),
            mesh.vertex_count()
        )));
    }
    laplacian_energy_term(mesh)?.value(&flatten(deformed))
}
