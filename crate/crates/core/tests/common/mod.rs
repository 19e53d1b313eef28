//! Fixtures and independent reference computations shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod checks;

use caddeform::energy::TargetTransform;
use caddeform::mesh::{flatten, mean_edge_length};
use caddeform::metrics::fit_report;
use caddeform::optimizer::{run_pipeline, DeformationResult, PipelineOptions};
use caddeform::shapes;
use caddeform::sharp::SharpChain;
use caddeform::transforms::{EdgeOperator, OperatorSet};
use caddeform::{LabeledPointCloud, Mesh, PartLabel};
use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn random_vector(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(
        uniform(rng, -scale, scale),
        uniform(rng, -scale, scale),
        uniform(rng, -scale, scale),
    )
}

/// Random ellipsoid: a UV sphere with `rings * segments + 2` vertices,
/// axes scaled within `1 +- spread`, rotated and shifted at random. Every
/// edge bends by roughly the angular step, so no edge tetrahedron is close
/// to the degeneracy threshold, where the transforms themselves lose about
/// `1e-16 / ratio` relative accuracy.
pub fn random_ellipsoid(rng: &mut ChaCha8Rng, rings: usize, segments: usize, spread: f64) -> Mesh {
    let axes = Vector3::new(
        uniform(rng, 1.0 - spread, 1.0 + spread),
        uniform(rng, 1.0 - spread, 1.0 + spread),
        uniform(rng, 1.0 - spread, 1.0 + spread),
    );
    let rotation = UnitQuaternion::from_scaled_axis(random_vector(rng, std::f64::consts::PI));
    let shift = random_vector(rng, 1.0);
    shapes::map_vertices(&shapes::uv_sphere(rings, segments, 1.0), |v| {
        rotation * v.component_mul(&axes) + shift
    })
}

/// `mesh` under a random affine map; coplanar faces stay coplanar.
pub fn affine_image(rng: &mut ChaCha8Rng, mesh: &Mesh) -> Mesh {
    let m = random_affine(rng);
    mesh.with_vertices(apply(&m, mesh.vertices())).expect("same connectivity")
}

/// `mesh` rotated, scaled by at most 25% per axis and shifted at random,
/// which keeps its edge tetrahedra about as thick as the original's.
pub fn mild_image(rng: &mut ChaCha8Rng, mesh: &Mesh) -> Mesh {
    let rotation = UnitQuaternion::from_scaled_axis(random_vector(rng, std::f64::consts::PI));
    let axes = Vector3::new(uniform(rng, 0.8, 1.25), uniform(rng, 0.8, 1.25), uniform(rng, 0.8, 1.25));
    let shift = random_vector(rng, 1.0);
    shapes::map_vertices(mesh, |v| rotation * v.component_mul(&axes) + shift)
}

/// Open `n x n` grid lifted onto a paraboloid of random curvature in [1, 3].
pub fn bowl(rng: &mut ChaCha8Rng, n: usize) -> Mesh {
    let c = uniform(rng, 1.0, 3.0);
    shapes::map_vertices(&shapes::flat_grid(n), |v| {
        Vector3::new(v.x, v.y, c * ((v.x - 0.5).powi(2) + (v.y - 0.5).powi(2)))
    })
}

/// Smallest `|det U0| / l^3` over the non-degenerate edge tetrahedra.
pub fn min_volume_ratio(mesh: &Mesh) -> f64 {
    let l = edge_length(mesh);
    let mut least = f64::INFINITY;
    for tet in caddeform::mesh::edge_tetrahedra(mesh) {
        if tet.is_degenerate() {
            continue;
        }
        let p = |k: usize| mesh.vertices()[tet.stencil[k]];
        let det = (p(1) - p(0)).dot(&(p(2) - p(0)).cross(&(p(3) - p(0))));
        least = least.min(det.abs() / l.powi(3));
    }
    least
}

/// Two parts split by the sign of `z`.
pub fn halves(mesh: &Mesh) -> Mesh {
    shapes::relabel(mesh, |v| PartLabel(u32::from(v.z > 0.0)))
}

/// A random invertible affine map with condition number below ~10.
pub fn random_affine(rng: &mut ChaCha8Rng) -> Matrix4<f64> {
    loop {
        let mut m = Matrix4::identity();
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = uniform(rng, -1.0, 1.0) + if r == c { 1.5 } else { 0.0 };
            }
            m[(r, 3)] = uniform(rng, -2.0, 2.0);
        }
        let linear: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let sv = linear.singular_values();
        if sv.min() > 0.1 * sv.max() {
            return m;
        }
    }
}

pub fn apply(m: &Matrix4<f64>, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    points.iter().map(|p| (m * p.push(1.0)).xyz()).collect()
}

/// `T_e` of an interior edge straight from its definition: the top block of
/// `U U0^-1`, with `U0` and `U` the homogeneous stencil matrices before and
/// after deformation, solved by LU rather than through the operator weights.
pub fn direct_edge_transform(stencil: &[usize; 4], rest: &[Vector3<f64>], deformed: &[Vector3<f64>]) -> Matrix3x4<f64> {
    let homogeneous = |p: &[Vector3<f64>]| {
        let mut u = Matrix4::zeros();
        for (c, &v) in stencil.iter().enumerate() {
            u.fixed_view_mut::<3, 1>(0, c).copy_from(&p[v]);
            u[(3, c)] = 1.0;
        }
        u
    };
    let u0 = homogeneous(rest);
    let u = homogeneous(deformed);
    // T U0 = U  <=>  U0^T T^T = U^T
    let t_transposed = u0.transpose().lu().solve(&u.transpose()).expect("proper tetrahedron");
    t_transposed.transpose().fixed_view::<3, 4>(0, 0).into()
}

/// Per-term energies summed residual by residual.
pub struct DirectEnergies {
    pub shape: f64,
    pub smooth: f64,
    pub sharp: f64,
    pub laplacian: f64,
}

pub fn direct_energies(
    mesh: &Mesh,
    ops: &OperatorSet,
    chains: &[SharpChain],
    target: &TargetTransform,
    deformed: &[Vector3<f64>],
) -> DirectEnergies {
    let flat = flatten(deformed);
    let rest = mesh.vertices();
    let transform = |e: usize| -> Option<Matrix3x4<f64>> {
        match ops.edge(e) {
            EdgeOperator::Volumetric(op) => Some(direct_edge_transform(op.stencil(), rest, deformed)),
            _ => None,
        }
    };
    let transforms: Vec<Option<Matrix3x4<f64>>> = (0..mesh.edges().len()).map(transform).collect();

    let top = target.top_block();
    let mut shape = 0.0;
    for (e, op) in ops.edges().iter().enumerate() {
        match op {
            EdgeOperator::Volumetric(_) => shape += (transforms[e].unwrap() - top).norm_squared(),
            EdgeOperator::Planar { faces } => {
                for &f in faces {
                    let face = ops.face(f).unwrap();
                    let a = face.eval(&flat).unwrap();
                    shape += (a - face.restricted_target(&target.linear())).norm_squared();
                }
            }
            EdgeOperator::Boundary => {}
        }
    }

    let pair = |a: usize, b: usize| match (&transforms[a], &transforms[b]) {
        (Some(ta), Some(tb)) => (ta - tb).norm_squared(),
        _ => 0.0,
    };
    let mut smooth = 0.0;
    for edges in mesh.face_edges() {
        smooth += pair(edges[0], edges[1]) + pair(edges[0], edges[2]) + pair(edges[1], edges[2]);
    }
    let mut sharp = 0.0;
    for chain in chains {
        let e = &chain.edges;
        for k in 0..e.len().saturating_sub(1) {
            sharp += pair(e[k], e[k + 1]);
        }
        if chain.closed && e.len() > 2 {
            sharp += pair(e[e.len() - 1], e[0]);
        }
    }

    let lap = |positions: &[Vector3<f64>], i: usize| {
        let ring = &mesh.neighbors()[i];
        ring.iter().map(|&j| positions[j]).sum::<Vector3<f64>>() / ring.len() as f64
    };
    let laplacian = (0..mesh.vertex_count())
        .map(|i| (lap(rest, i) - lap(deformed, i)).norm_squared())
        .sum();
    DirectEnergies {
        shape,
        smooth,
        sharp,
        laplacian,
    }
}

/// Norm-wise relative error of `analytic` against central differences of
/// `f` with step `h`.
pub fn finite_difference_error(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> f64 {
    let mut probe = x.to_vec();
    let mut diff2 = 0.0;
    let mut norm2 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        diff2 += (numeric - analytic[i]).powi(2);
        norm2 += analytic[i].powi(2);
    }
    diff2.sqrt() / norm2.sqrt().max(f64::MIN_POSITIVE)
}

pub fn dense(q: &caddeform::energy::QuadraticEnergy) -> DMatrix<f64> {
    let n = q.dim();
    let mut m = DMatrix::zeros(n, n);
    for (r, c, v) in q.matrix().triplet_iter() {
        m[(r, c)] += v;
    }
    m
}

/// Unit cube, two midpoint subdivisions: 386 vertices, one part.
pub fn fit_fixture_mesh() -> Mesh {
    shapes::subdivide(&shapes::grid_cube(2), 2)
}

pub const FIT_POINTS: usize = 5000;
pub const FIT_SEED: u64 = 7;
pub const FIT_STRETCH: f64 = 1.5;

/// The fixture mesh and 5000 samples of it stretched 1.5x along x.
pub fn fit_fixture() -> (Mesh, LabeledPointCloud, Vec<Vector3<f64>>) {
    let mesh = fit_fixture_mesh();
    let stretched: Vec<_> = mesh
        .vertices()
        .iter()
        .map(|v| Vector3::new(FIT_STRETCH * v.x, v.y, v.z))
        .collect();
    let (points, labels) = shapes::sample_surface(&mesh, &stretched, FIT_POINTS, FIT_SEED);
    (mesh, LabeledPointCloud::new(points, labels).unwrap(), stretched)
}

/// Runs the fit on a dedicated pool with `threads` workers.
pub fn run_fit(mesh: &Mesh, cloud: &LabeledPointCloud, options: &PipelineOptions, threads: usize) -> DeformationResult {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| run_pipeline(mesh, cloud, &Matrix4::identity(), options).unwrap())
}

pub fn tmmd_of(vertices: &[Vector3<f64>], cloud: &LabeledPointCloud) -> f64 {
    fit_report(vertices, &cloud.points, 0.2, false).unwrap().tmmd
}

pub fn edge_length(mesh: &Mesh) -> f64 {
    mean_edge_length(mesh).unwrap()
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Minimum summed Euclidean distance over all bijections, by enumeration.
pub fn emd_brute_force(p: &[Vector3<f64>], q: &[Vector3<f64>]) -> f64 {
    permutations(p.len())
        .iter()
        .map(|perm| perm.iter().enumerate().map(|(i, &j)| (p[i] - q[j]).norm()).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}
