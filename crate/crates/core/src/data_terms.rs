//! Nonlinear data-fitting energies: screened part-to-part attraction and the
//! bounding-box nearest-neighbor mapping.

use std::collections::BTreeMap;

use nalgebra::{Matrix4, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{mean_edge_length_at, LabeledPointCloud, Mesh, PartLabel};
use crate::spatial::{KdTree, Metric};

/// Points per parallel work unit. Fixed so that the reduction order, and
/// therefore every rounding, is independent of the thread count.
const CHUNK: usize = 256;

/// Neighbor search radius beyond `epsilon`, in units of `beta`. Pairs farther
/// out carry a weight below `exp(-40)`.
const CUTOFF_BETAS: f64 = 40.0;

/// Beyond this many widths the logistic step and the softmax weights are
/// flat to below `exp(-40)` relative.
const SATURATION: f64 = 40.0;

/// Energy plus gradient with respect to the flattened vertex vector.
pub trait DataTerm: Sync {
    fn value_and_gradient(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SmoothingParams {
    /// Screening radius.
    pub sigma: f64,
    /// Attraction radius.
    pub epsilon: f64,
    /// Width of the smoothed step and temperature of the smooth minimum.
    pub beta: f64,
}

impl SmoothingParams {
    pub fn new(sigma: f64, epsilon: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < sigma && sigma < epsilon && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "smoothing parameters need 0 < beta < sigma < epsilon, got beta={beta}, sigma={sigma}, epsilon={epsilon}"
            )));
        }
        Ok(Self { sigma, epsilon, beta })
    }

    /// `sigma = l`, `epsilon = 10 l`, `beta = 0.01 epsilon`.
    pub fn from_edge_length(length: f64) -> Result<Self> {
        let epsilon = 10.0 * length;
        Self::new(length, epsilon, 0.01 * epsilon)
    }

    pub fn for_mesh(mesh: &Mesh, positions: &[Vector3<f64>]) -> Result<Self> {
        Self::from_edge_length(mean_edge_length_at(mesh, positions)?)
    }

    pub fn cutoff(&self) -> f64 {
        self.epsilon + CUTOFF_BETAS * self.beta
    }
}

/// Logistic step `1 / (1 + exp(-x / beta))`.
pub fn smoothed_step(x: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    Ok(step(x, beta).0)
}

/// Step value and derivative with respect to `x`.
#[inline]
fn step(x: f64, beta: f64) -> (f64, f64) {
    let t = x / beta;
    if t > SATURATION {
        return (1.0, 0.0);
    }
    let s = if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    };
    (s, s * (1.0 - s) / beta)
}

/// `-beta log sum exp(-d_i / beta)`, shifted by the true minimum for stability.
/// Returns the value and the softmax weights, which are its partial derivatives.
pub fn smooth_min(values: &[f64], beta: f64) -> (f64, Vec<f64>) {
    let mut weights = Vec::with_capacity(values.len());
    let m = smooth_min_into(values, beta, &mut weights);
    (m, weights)
}

/// Terms more than `SATURATION` widths away from the minimum get weight 0.
fn smooth_min_into(values: &[f64], beta: f64, weights: &mut Vec<f64>) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    weights.clear();
    weights.extend(values.iter().map(|d| {
        let t = (d - lo) / beta;
        if t > SATURATION {
            0.0
        } else {
            (-t).exp()
        }
    }));
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    lo - beta * total.ln()
}

/// Screened attraction between label-matched vertices and cloud points.
pub struct PartToPart {
    labels: Vec<PartLabel>,
    cloud: LabeledPointCloud,
    params: SmoothingParams,
    /// Treat the screening factor as constant when differentiating.
    pub freeze_screening: bool,
    /// Visit all label-matched pairs instead of the radius-limited neighbors.
    pub exhaustive: bool,
}

/// Per-chunk accumulator and scratch space.
struct ChunkSum {
    energy: f64,
    gradient: Vec<f64>,
    offsets: Vec<Vector3<f64>>,
    dists: Vec<f64>,
    weights: Vec<f64>,
    steps: Vec<(f64, f64)>,
}

impl PartToPart {
    pub fn new(mesh_labels: &[PartLabel], cloud: LabeledPointCloud, params: SmoothingParams) -> Result<Self> {
        let known: std::collections::BTreeSet<_> = mesh_labels.iter().copied().collect();
        if let Some(l) = cloud.labels.iter().find(|l| !known.contains(l)) {
            return Err(Error::UnknownLabel(l.0));
        }
        Ok(Self {
            labels: mesh_labels.to_vec(),
            cloud,
            params,
            freeze_screening: false,
            exhaustive: false,
        })
    }

    pub fn params(&self) -> &SmoothingParams {
        &self.params
    }

    /// Adds the terms of point `p` over the label-matched `neighbors`.
    fn add_point(&self, p: &Vector3<f64>, neighbors: &[usize], positions: &[Vector3<f64>], acc: &mut ChunkSum) {
        let SmoothingParams { sigma, epsilon, beta } = self.params;
        if neighbors.is_empty() {
            return;
        }
        acc.offsets.clear();
        acc.dists.clear();
        for &v in neighbors {
            let o = positions[v] - p;
            acc.dists.push(o.norm());
            acc.offsets.push(o);
        }
        let lo = acc.dists.iter().copied().fold(f64::INFINITY, f64::min);
        // The smooth minimum lies in [lo - beta ln n, lo]; outside the
        // screening ramp the factor is flat to within exp(-SATURATION).
        if lo - sigma < -SATURATION * beta {
            return;
        }
        let saturated = lo - beta * (acc.dists.len() as f64).ln() - sigma > SATURATION * beta;
        let (xi, dxi) = if saturated {
            (1.0, 0.0)
        } else {
            let m = smooth_min_into(&acc.dists, beta, &mut acc.weights);
            step(m - sigma, beta)
        };
        acc.steps.clear();
        let mut attraction = 0.0;
        for &d in &acc.dists {
            let (h, dh) = step(epsilon - d, beta);
            acc.steps.push((h, dh));
            attraction += d * d * h * h;
        }
        acc.energy += xi * attraction;
        let screen = if self.freeze_screening || saturated { 0.0 } else { attraction * dxi };
        for (k, &v) in neighbors.iter().enumerate() {
            let d = acc.dists[k];
            let (h, dh) = acc.steps[k];
            // d/dv of d^2 h^2 is (v - p) (2 h^2 - 2 d h h')
            let mut coefficient = xi * (2.0 * h * h - 2.0 * d * h * dh);
            if screen != 0.0 && d > 0.0 && acc.weights[k] != 0.0 {
                coefficient += screen * acc.weights[k] / d;
            }
            let g = coefficient * acc.offsets[k];
            for c in 0..3 {
                acc.gradient[3 * v + c] += g[c];
            }
        }
    }

    fn evaluate(&self, positions: &[Vector3<f64>]) -> (f64, Vec<f64>) {
        let by_label = vertices_by_label(&self.labels);
        let trees: BTreeMap<PartLabel, KdTree> = by_label
            .iter()
            .map(|(l, ids)| (*l, KdTree::new(&ids.iter().map(|&i| positions[i]).collect::<Vec<_>>())))
            .collect();
        let radius = self.params.cutoff();
        let boxes: BTreeMap<PartLabel, (Vector3<f64>, Vector3<f64>)> = by_label
            .iter()
            .map(|(l, ids)| (*l, bounding_box(ids.iter().map(|&i| &positions[i]))))
            .collect();
        let cloud = &self.cloud;
        let n = positions.len();
        let chunks: Vec<ChunkSum> = (0..cloud.len().div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = ChunkSum {
                    energy: 0.0,
                    gradient: vec![0.0; 3 * n],
                    offsets: Vec::new(),
                    dists: Vec::new(),
                    weights: Vec::new(),
                    steps: Vec::new(),
                };
                let mut neighbors = Vec::new();
                for j in c * CHUNK..((c + 1) * CHUNK).min(cloud.len()) {
                    let p = &cloud.points[j];
                    let ids = &by_label[&cloud.labels[j]];
                    neighbors.clear();
                    let tree = &trees[&cloud.labels[j]];
                    let screened = tree
                        .nearest(p, Metric::L2)
                        .is_some_and(|(_, d)| d - self.params.sigma < -SATURATION * self.params.beta);
                    if screened {
                        continue;
                    }
                    let (lo, hi) = boxes[&cloud.labels[j]];
                    let far_corner = (lo - p).abs().sup(&(hi - p).abs());
                    // Every vertex of the part is in range: skip the tree.
                    if self.exhaustive || far_corner.norm() < radius {
                        neighbors.extend_from_slice(ids);
                    } else {
                        neighbors.extend(
                            tree.within_radius(p, radius, Metric::L2)
                                .into_iter()
                                .map(|(k, _)| ids[k]),
                        );
                    }
                    self.add_point(p, &neighbors, positions, &mut acc);
                }
                acc
            })
            .collect();
        let mut energy = 0.0;
        let mut gradient = vec![0.0; 3 * n];
        for chunk in &chunks {
            energy += chunk.energy;
            for (g, c) in gradient.iter_mut().zip(&chunk.gradient) {
                *g += c;
            }
        }
        (energy, gradient)
    }
}

impl DataTerm for PartToPart {
    fn value_and_gradient(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        if flat.len() != 3 * self.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: 3 * self.labels.len(),
                found: flat.len(),
            });
        }
        Ok(self.evaluate(&crate::mesh::unflatten(flat)))
    }
}

/// Part-to-part energy and gradient at `positions`.
pub fn p2p_energy_grad(
    positions: &[Vector3<f64>],
    labels: &[PartLabel],
    cloud: &LabeledPointCloud,
    params: &SmoothingParams,
) -> Result<(f64, Vec<f64>)> {
    if positions.len() != labels.len() {
        return Err(Error::LabelCount {
            expected: positions.len(),
            found: labels.len(),
        });
    }
    PartToPart::new(labels, cloud.clone(), *params)?.value_and_gradient(&crate::mesh::flatten(positions))
}

/// Affine map between axis-aligned boxes chosen among the 48 signed axis
/// permutations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxAffine {
    pub matrix: Matrix4<f64>,
    /// Target axis `a` reads source axis `permutation[a]`.
    pub permutation: [usize; 3],
    /// `true` where the axis is reversed.
    pub reversed: [bool; 3],
    /// Some axis had zero extent and was mapped by center translation only.
    pub degenerate: bool,
}

/// The six permutations of three axes in lexicographic order.
pub const AXIS_PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

fn bounding_box<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> (Vector3<f64>, Vector3<f64>) {
    points.into_iter().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

/// Maps the box of `vertices` onto the box of `points`, corner to corner,
/// with the candidate closest to identity in the Frobenius norm of the top
/// 3x4 block. Earlier candidates win ties.
pub fn box_affine(vertices: &[Vector3<f64>], points: &[Vector3<f64>]) -> Result<BoxAffine> {
    if vertices.is_empty() || points.is_empty() {
        return Err(Error::InvalidParameter("box alignment needs non-empty sets".into()));
    }
    let (lo_v, hi_v) = bounding_box(vertices);
    let (lo_p, hi_p) = bounding_box(points);
    let ext_v = hi_v - lo_v;
    let ext_p = hi_p - lo_p;
    let scale = ext_v.amax().max(ext_p.amax()).max(f64::MIN_POSITIVE);
    let flat_v = ext_v.map(|e| e <= 1e-12 * scale);
    let flat_p = ext_p.map(|e| e <= 1e-12 * scale);
    let center_v = 0.5 * (lo_v + hi_v);
    let center_p = 0.5 * (lo_p + hi_p);

    let mut best: Option<(f64, BoxAffine)> = None;
    for permutation in AXIS_PERMUTATIONS {
        for mask in 0..8u8 {
            let reversed = [mask & 1 != 0, mask & 2 != 0, mask & 4 != 0];
            let mut m = Matrix4::identity();
            m[(0, 0)] = 0.0;
            m[(1, 1)] = 0.0;
            m[(2, 2)] = 0.0;
            let mut degenerate = false;
            for a in 0..3 {
                let b = permutation[a];
                if flat_v[b] || flat_p[a] {
                    degenerate = true;
                    m[(a, a)] = 1.0;
                    m[(a, 3)] = center_p[a] - center_v[a];
                    continue;
                }
                let s = ext_p[a] / ext_v[b];
                if reversed[a] {
                    m[(a, b)] = -s;
                    m[(a, 3)] = hi_p[a] + s * lo_v[b];
                } else {
                    m[(a, b)] = s;
                    m[(a, 3)] = lo_p[a] - s * lo_v[b];
                }
            }
            let cost = (m.fixed_view::<3, 4>(0, 0) - nalgebra::Matrix3x4::identity()).norm();
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((
                    cost,
                    BoxAffine {
                        matrix: m,
                        permutation,
                        reversed,
                        degenerate,
                    },
                ));
            }
        }
    }
    Ok(best.expect("48 candidates").1)
}

fn vertices_by_label(labels: &[PartLabel]) -> BTreeMap<PartLabel, Vec<usize>> {
    let mut out: BTreeMap<PartLabel, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        out.entry(*l).or_default().push(i);
    }
    out
}

/// Box transforms for every label present in the cloud.
pub fn box_transforms(
    positions: &[Vector3<f64>],
    labels: &[PartLabel],
    cloud: &LabeledPointCloud,
) -> Result<BTreeMap<PartLabel, BoxAffine>> {
    let by_vertex = vertices_by_label(labels);
    let mut by_point: BTreeMap<PartLabel, Vec<Vector3<f64>>> = BTreeMap::new();
    for (p, l) in cloud.points.iter().zip(&cloud.labels) {
        by_point.entry(*l).or_default().push(*p);
    }
    by_point
        .iter()
        .map(|(l, pts)| {
            let ids = by_vertex.get(l).ok_or(Error::UnknownLabel(l.0))?;
            let vs: Vec<_> = ids.iter().map(|&i| positions[i]).collect();
            Ok((*l, box_affine(&vs, pts)?))
        })
        .collect()
}

/// Frozen point-to-vertex assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct NnCorrespondence {
    pub transforms: BTreeMap<PartLabel, Matrix4<f64>>,
    /// Cloud point index to vertex index.
    pub assignment: Vec<usize>,
    pub vertex_count: usize,
}

/// For every cloud point, the vertex of its label minimizing
/// `||T_B v - p||`, ties to the smaller vertex index.
pub fn nn_correspondence(
    positions: &[Vector3<f64>],
    labels: &[PartLabel],
    cloud: &LabeledPointCloud,
    transforms: &BTreeMap<PartLabel, Matrix4<f64>>,
) -> Result<NnCorrespondence> {
    let by_vertex = vertices_by_label(labels);
    let mut trees = BTreeMap::new();
    for l in cloud.label_set() {
        let ids = by_vertex.get(&l).ok_or(Error::UnknownLabel(l.0))?;
        let t = transforms.get(&l).ok_or(Error::UnknownLabel(l.0))?;
        let mapped: Vec<_> = ids
            .iter()
            .map(|&i| (t * positions[i].push(1.0)).xyz())
            .collect();
        trees.insert(l, KdTree::new(&mapped));
    }
    let assignment = cloud
        .points
        .par_iter()
        .zip(cloud.labels.par_iter())
        .map(|(p, l)| {
            let (k, _) = trees[l].nearest(p, Metric::L2).expect("label has vertices");
            by_vertex[l][k]
        })
        .collect();
    Ok(NnCorrespondence {
        transforms: transforms.clone(),
        assignment,
        vertex_count: positions.len(),
    })
}

/// `sum_p ||p - v_iota(p)||^2` and its gradient.
pub fn nn_energy_grad(flat: &[f64], cloud: &LabeledPointCloud, corr: &NnCorrespondence) -> Result<(f64, Vec<f64>)> {
    if flat.len() != 3 * corr.vertex_count || corr.assignment.len() != cloud.len() {
        return Err(Error::DimensionMismatch {
            expected: 3 * corr.vertex_count,
            found: flat.len(),
        });
    }
    let mut energy = 0.0;
    let mut gradient = vec![0.0; flat.len()];
    for (p, &v) in cloud.points.iter().zip(&corr.assignment) {
        for k in 0..3 {
            let d = flat[3 * v + k] - p[k];
            energy += d * d;
            gradient[3 * v + k] += 2.0 * d;
        }
    }
    Ok((energy, gradient))
}

/// Nearest-neighbor data term with a frozen correspondence.
pub struct NearestNeighbor {
    pub cloud: LabeledPointCloud,
    pub correspondence: NnCorrespondence,
}

impl NearestNeighbor {
    /// Box transforms and assignment computed from `positions`.
    pub fn build(positions: &[Vector3<f64>], labels: &[PartLabel], cloud: LabeledPointCloud) -> Result<Self> {
        let boxes = box_transforms(positions, labels, &cloud)?;
        let transforms = boxes.iter().map(|(l, b)| (*l, b.matrix)).collect();
        let correspondence = nn_correspondence(positions, labels, &cloud, &transforms)?;
        Ok(Self { cloud, correspondence })
    }
}

impl DataTerm for NearestNeighbor {
    fn value_and_gradient(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        nn_energy_grad(flat, &self.cloud, &self.correspondence)
    }
}
