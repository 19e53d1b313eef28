//! Parameterized property checks. Integration tests run them on a few
//! instances; the acceptance runner runs them at full size.

use std::collections::BTreeMap;
use std::time::Instant;

use caddeform::data_terms::{
    box_affine, nn_correspondence, nn_energy_grad, DataTerm, NearestNeighbor, PartToPart, SmoothingParams,
};
use caddeform::energy::{
    assemble_shape, assemble_sharp, assemble_smooth, combine, laplacian_energy_term, QuadraticEnergy, TargetTransform,
};
use caddeform::mesh::flatten;
use caddeform::optimizer::{factor_preconditioner, plbfgs_minimize, LbfgsOptions};
use caddeform::shapes;
use caddeform::sharp::{build_chains, detect_sharp_edges};
use caddeform::transforms::{EdgeOperator, OperatorSet};
use caddeform::{LabeledPointCloud, Mesh, PartLabel};
use nalgebra::{DVector, Matrix3x4, Matrix4, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

/// Result of one check with the worst measured quantity.
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(a.abs()).max(1e-300)
}

/// Ten varied meshes of at most 500 vertices: curved, creased, coplanar,
/// open, single and multi part.
pub fn mesh_zoo(rng: &mut ChaCha8Rng, count: usize) -> Vec<Mesh> {
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mesh = match k % 10 {
            0 => random_ellipsoid(rng, 7, 14, 0.3),
            1 => affine_image(rng, &halves(&shapes::grid_cube(3))),
            2 => affine_image(rng, &shapes::subdivide(&shapes::grid_cube(2), 2)),
            3 => halves(&affine_image(rng, &shapes::geodesic_sphere(2))),
            4 => shapes::flat_grid(9),
            5 => halves(&bowl(rng, 12)),
            6 => halves(&random_ellipsoid(rng, 12, 20, 0.2)),
            7 => shapes::relabel(&affine_image(rng, &shapes::grid_cube(8)), |v| {
                PartLabel(u32::from(v.x > 0.0) + u32::from(v.y > 0.0))
            }),
            8 => shapes::icosahedron(),
            _ => halves(&affine_image(rng, &shapes::subdivide(&shapes::unit_cube(), 2))),
        };
        assert!(mesh.vertex_count() <= 500);
        out.push(mesh);
    }
    out
}

/// Chains for the creases of `mesh`, at a threshold that finds some on
/// smooth meshes too.
fn chains_of(mesh: &Mesh) -> Vec<caddeform::sharp::SharpChain> {
    let sharp = detect_sharp_edges(mesh, 165.0).unwrap();
    build_chains(mesh, &sharp)
}

pub fn affine_reproduction(instances: usize, seed: u64) -> Outcome {
    let start = Instant::now();
    let mut rng = rng(seed);
    let mesh = halves(&random_ellipsoid(&mut rng, 7, 14, 0.3));
    assert_eq!(mesh.vertex_count(), 100);
    assert!(mesh.edges().iter().all(|e| e.is_interior()), "mesh must be closed");
    let ops = OperatorSet::build(&mesh).unwrap();
    let chains = chains_of(&mesh);
    let smooth = assemble_smooth(&mesh, &ops);
    let sharp = assemble_sharp(&chains, &ops);
    let volumetric = ops.edges().iter().filter(|e| matches!(e, EdgeOperator::Volumetric(_))).count();

    let mut worst_transform = 0.0f64;
    let mut worst_energy = 0.0f64;
    for _ in 0..instances {
        let m = random_affine(&mut rng);
        let top: Matrix3x4<f64> = m.fixed_view::<3, 4>(0, 0).into();
        let flat = flatten(&apply(&m, mesh.vertices()));
        for e in 0..mesh.edges().len() {
            if let Some(op) = ops.volumetric(e) {
                let t = op.eval(&flat).unwrap();
                worst_transform = worst_transform.max((t - top).norm() / top.norm());
            }
        }
        worst_energy = worst_energy.max(smooth.value(&flat).unwrap().abs());
        worst_energy = worst_energy.max(sharp.value(&flat).unwrap().abs());
    }
    let seconds = start.elapsed().as_secs_f64();
    Outcome::new(
        worst_transform <= 1e-8 && worst_energy <= 1e-10 && seconds < 5.0 && !chains.is_empty() && volumetric > 0,
        format!(
            "{instances} affines, {volumetric} edges, {} chains: transform rel err {worst_transform:.2e}, smooth/sharp {worst_energy:.2e}, {seconds:.2} s",
            chains.len()
        ),
    )
}

pub fn matrix_vs_direct(instances: usize, seed: u64) -> Outcome {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    let mut chain_meshes = 0;
    let mut least_ratio = f64::INFINITY;
    for mesh in mesh_zoo(&mut rng, instances) {
        least_ratio = least_ratio.min(min_volume_ratio(&mesh));
        let ops = OperatorSet::build(&mesh).unwrap();
        let chains = chains_of(&mesh);
        chain_meshes += usize::from(!chains.is_empty());
        let target = TargetTransform::new(random_affine(&mut rng)).unwrap();
        let scale = mesh.bbox_diagonal();
        let deformed: Vec<_> = mesh.vertices().iter().map(|v| v + random_vector(&mut rng, 0.1 * scale)).collect();
        let flat = flatten(&deformed);
        let direct = direct_energies(&mesh, &ops, &chains, &target, &deformed);
        let assembled = [
            assemble_shape(&ops, &target).value(&flat).unwrap(),
            assemble_smooth(&mesh, &ops).value(&flat).unwrap(),
            assemble_sharp(&chains, &ops).value(&flat).unwrap(),
            laplacian_energy_term(&mesh).unwrap().value(&flat).unwrap(),
        ];
        let reference = [direct.shape, direct.smooth, direct.sharp, direct.laplacian];
        for (a, d) in assembled.iter().zip(&reference) {
            worst = worst.max(relative(*a, *d));
        }
    }
    Outcome::new(
        worst <= 1e-10,
        format!("{instances} meshes ({chain_meshes} with chains, smallest tetra ratio {least_ratio:.1e}): worst relative difference {worst:.2e}"),
    )
}

fn bbox_diagonal(points: &[Vector3<f64>]) -> f64 {
    let (lo, hi) = points.iter().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    (hi - lo).norm()
}

/// Worst finite-difference errors for the quadratic, part-to-part and
/// nearest-neighbor terms.
pub fn gradients(instances: usize, seed: u64) -> Outcome {
    let mut rng = rng(seed);
    let mut worst = [0.0f64; 3];
    for k in 0..instances {
        // quadratic: random weights over all four terms
        let mesh = match k % 3 {
            0 => halves(&shapes::subdivide(&shapes::unit_cube(), 1)),
            1 => random_ellipsoid(&mut rng, 4, 6, 0.3),
            _ => bowl(&mut rng, 4),
        };
        let ops = OperatorSet::build(&mesh).unwrap();
        let chains = chains_of(&mesh);
        let target = TargetTransform::new(random_affine(&mut rng)).unwrap();
        let lap = laplacian_energy_term(&mesh).unwrap();
        let parts = [
            assemble_shape(&ops, &target),
            assemble_smooth(&mesh, &ops),
            assemble_sharp(&chains, &ops),
            lap,
        ];
        let weights: Vec<f64> = (0..4).map(|_| uniform(&mut rng, 0.1, 10.0)).collect();
        let terms: Vec<(&QuadraticEnergy, f64)> = parts.iter().zip(&weights).map(|(q, w)| (q, *w)).collect();
        let quad = combine(&terms).unwrap();
        let positions: Vec<_> = mesh.vertices().iter().map(|v| v + random_vector(&mut rng, 0.2)).collect();
        let x = flatten(&positions);
        let h = 1e-6 * bbox_diagonal(&positions);
        let (_, g) = quad.value_and_gradient(&x).unwrap();
        let err = finite_difference_error(|p| quad.value(p).unwrap(), &x, &g, h);
        worst[0] = worst[0].max(err);

        // part-to-part: two parts, points scattered around the surface so
        // that screening, attraction and the cutoff all take part
        let mesh = halves(&shapes::geodesic_sphere(1));
        let positions: Vec<_> = mesh.vertices().iter().map(|v| v + random_vector(&mut rng, 0.05)).collect();
        let count = 40 + k;
        let (mut points, labels) = shapes::sample_surface(&mesh, mesh.vertices(), count, seed ^ k as u64);
        for p in &mut points {
            *p *= uniform(&mut rng, 0.8, 1.25);
        }
        let cloud = LabeledPointCloud::new(points, labels).unwrap();
        let params = SmoothingParams::new(uniform(&mut rng, 0.06, 0.12), uniform(&mut rng, 0.4, 1.5), uniform(&mut rng, 0.02, 0.05)).unwrap();
        let term = PartToPart::new(mesh.labels(), cloud.clone(), params).unwrap();
        let x = flatten(&positions);
        let h = 1e-6 * bbox_diagonal(&positions);
        let (_, g) = term.value_and_gradient(&x).unwrap();
        let err = finite_difference_error(|p| term.value_and_gradient(p).unwrap().0, &x, &g, h);
        worst[1] = worst[1].max(err);

        // nearest neighbor with the assignment frozen at `positions`
        let nn = NearestNeighbor::build(&positions, mesh.labels(), cloud).unwrap();
        let (_, g) = nn.value_and_gradient(&x).unwrap();
        let err = finite_difference_error(
            |p| nn_energy_grad(p, &nn.cloud, &nn.correspondence).unwrap().0,
            &x,
            &g,
            h,
        );
        worst[2] = worst[2].max(err);
    }
    Outcome::new(
        worst.iter().all(|e| *e <= 1e-5),
        format!(
            "{instances} configurations each: quad {:.2e}, p2p {:.2e}, nn {:.2e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

pub fn quadratic_solve(instances: usize, seed: u64) -> Outcome {
    let mut rng = rng(seed);
    let mut worst_iterations = 0;
    let mut worst_gradient = 0.0f64;
    let mut worst_distance = 0.0f64;
    let mut direct_gradient = 0.0f64;
    let mut largest = 0;
    for k in 0..instances {
        let mesh = match k % 5 {
            0 => mild_image(&mut rng, &shapes::geodesic_sphere(1)),
            1 => mild_image(&mut rng, &halves(&shapes::grid_cube(7))),
            2 => {
                let b = bowl(&mut rng, 9);
                mild_image(&mut rng, &b)
            }
            3 => halves(&mild_image(&mut rng, &shapes::subdivide(&shapes::grid_cube(3), 1))),
            _ => halves(&mild_image(&mut rng, &shapes::geodesic_sphere(1))),
        };
        assert!(mesh.vertex_count() <= 300);
        // centered, unit mean edge length keeps the entries of A moderate;
        // the gradient bound is absolute, and at |A| ~ 1e6 even the direct
        // solution's residual is ~1e-8. The translation column couples to
        // distance from the origin, hence the centering.
        let unit = 1.0 / edge_length(&mesh);
        let centroid = mesh.vertices().iter().sum::<Vector3<f64>>() / mesh.vertex_count() as f64;
        let mesh = shapes::map_vertices(&mesh, |v| (v - centroid) * unit);
        largest = largest.max(3 * mesh.vertex_count());
        let ops = OperatorSet::build(&mesh).unwrap();
        let chains = chains_of(&mesh);
        let target = TargetTransform::new(random_affine(&mut rng)).unwrap();
        let parts = [
            assemble_shape(&ops, &target),
            assemble_smooth(&mesh, &ops),
            assemble_sharp(&chains, &ops),
            laplacian_energy_term(&mesh).unwrap(),
        ];
        let weights = [uniform(&mut rng, 0.5, 2.0), uniform(&mut rng, 0.0, 10.0), uniform(&mut rng, 0.0, 10.0), uniform(&mut rng, 0.0, 1.0)];
        let terms: Vec<(&QuadraticEnergy, f64)> = parts.iter().zip(weights).collect();
        let quad = combine(&terms).unwrap();
        let precond = factor_preconditioner(&quad).unwrap();
        let x0: Vec<f64> = (0..quad.dim()).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let options = LbfgsOptions {
            iterations: 3,
            gradient_tolerance: 1e-14,
            ..Default::default()
        };
        let outcome = plbfgs_minimize(&x0, &quad, None, 0.0, &precond, &options, |_, _| Ok(())).unwrap();
        worst_iterations = worst_iterations.max(outcome.iterations);
        let (_, g) = quad.value_and_gradient(&outcome.x).unwrap();
        worst_gradient = worst_gradient.max(DVector::from_vec(g).norm());

        let a = dense(&quad);
        let rhs = -0.5 * DVector::from_column_slice(quad.linear());
        let solution = a.clone().cholesky().expect("positive definite").solve(&rhs);
        let (_, g_direct) = quad.value_and_gradient(solution.as_slice()).unwrap();
        direct_gradient = direct_gradient.max(DVector::from_vec(g_direct).norm());
        let diff = DVector::from_vec(outcome.x) - solution;
        worst_distance = worst_distance.max(diff.dot(&(&a * &diff)).max(0.0).sqrt());
    }
    Outcome::new(
        worst_iterations <= 3 && worst_gradient <= 1e-8 && worst_distance <= 1e-6,
        format!(
            "{instances} systems up to {largest} unknowns: {worst_iterations} iterations, |2Ax+b| {worst_gradient:.2e}, A-norm error {worst_distance:.2e} (direct solve |2Ax+b| {direct_gradient:.2e})"
        ),
    )
}

/// A point set whose bounding box is `[lo, lo + extent]`.
fn box_points(rng: &mut ChaCha8Rng, lo: Vector3<f64>, extent: Vector3<f64>, interior: usize) -> Vec<Vector3<f64>> {
    let mut out: Vec<_> = (0..8)
        .map(|c| lo + Vector3::new(
            if c & 1 != 0 { extent.x } else { 0.0 },
            if c & 2 != 0 { extent.y } else { 0.0 },
            if c & 4 != 0 { extent.z } else { 0.0 },
        ))
        .collect();
    for _ in 0..interior {
        out.push(lo + extent.component_mul(&Vector3::new(rng.random(), rng.random(), rng.random())));
    }
    out
}

/// Explicit enumeration of the 48 signed permutations: permutations in
/// lexicographic order, reflection masks counting up with bit `a` flipping
/// target axis `a`, first strict minimum of `||T - I||_F` kept.
type SignedPermutation = (Matrix4<f64>, [usize; 3], [bool; 3]);

fn box_affine_oracle(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> SignedPermutation {
    let bounds = |pts: &[Vector3<f64>]| {
        let mut lo = pts[0];
        let mut hi = pts[0];
        for p in pts {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    };
    let (slo, shi) = bounds(source);
    let (tlo, thi) = bounds(target);
    let sext = shi - slo;
    let text = thi - tlo;
    let scale = sext.amax().max(text.amax()).max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, SignedPermutation)> = None;
    for perm in permutations(3) {
        let perm = [perm[0], perm[1], perm[2]];
        for mask in 0..8u32 {
            let flips = [mask & 1 == 1, mask >> 1 & 1 == 1, mask >> 2 & 1 == 1];
            let mut t = Matrix4::<f64>::zeros();
            t[(3, 3)] = 1.0;
            for a in 0..3 {
                let b = perm[a];
                if sext[b] <= 1e-12 * scale || text[a] <= 1e-12 * scale {
                    t[(a, a)] = 1.0;
                    t[(a, 3)] = 0.5 * (tlo[a] + thi[a]) - 0.5 * (slo[a] + shi[a]);
                } else {
                    let s = text[a] / sext[b];
                    t[(a, b)] = if flips[a] { -s } else { s };
                    // corner to corner: slo maps to tlo, or to thi when flipped
                    t[(a, 3)] = if flips[a] { thi[a] + s * slo[b] } else { tlo[a] - s * slo[b] };
                }
            }
            let mut cost = 0.0;
            for r in 0..3 {
                for c in 0..4 {
                    let d = t[(r, c)] - if r == c { 1.0 } else { 0.0 };
                    cost += d * d;
                }
            }
            let cost = cost.sqrt();
            if best.as_ref().is_none_or(|b| cost < b.0) {
                best = Some((cost, (t, perm, flips)));
            }
        }
    }
    best.unwrap().1
}

pub fn box_affine_check(instances: usize, seed: u64) -> Outcome {
    let mut rng = rng(seed);
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    for k in 0..instances {
        let extent = |rng: &mut ChaCha8Rng| -> Vector3<f64> {
            match k % 5 {
                // equal extents make many candidates tie
                0 => Vector3::repeat(uniform(rng, 0.5, 2.0)),
                1 => Vector3::new(1.0, 1.0, uniform(rng, 0.5, 2.0)),
                // one flat axis
                2 => Vector3::new(uniform(rng, 0.5, 2.0), uniform(rng, 0.5, 2.0), 0.0),
                _ => Vector3::new(uniform(rng, 0.1, 3.0), uniform(rng, 0.1, 3.0), uniform(rng, 0.1, 3.0)),
            }
        };
        let se = extent(&mut rng);
        let te = extent(&mut rng);
        let offset = if k % 7 == 0 { Vector3::zeros() } else { random_vector(&mut rng, 2.0) };
        let corner = random_vector(&mut rng, 1.0);
        let source = box_points(&mut rng, corner, se, 20);
        let target = box_points(&mut rng, offset, te, 30);
        let got = box_affine(&source, &target).unwrap();
        let (t, perm, flips) = box_affine_oracle(&source, &target);
        // the matrix must match bit for bit; the reported signed
        // permutation only matters on axes that are not flat
        let same = got.matrix == t && (got.degenerate || (got.permutation == perm && got.reversed == flips));
        mismatches += usize::from(!same);
        worst = worst.max((got.matrix - t).amax());
    }
    Outcome::new(
        mismatches == 0,
        format!("{instances} box pairs: {mismatches} mismatches, max entry difference {worst:.1e}"),
    )
}

pub fn nn_check(instances: usize, seed: u64) -> Outcome {
    let mut rng = rng(seed);
    let mut mismatches = 0;
    let mut ties = 0;
    for k in 0..instances {
        let n = 20 + rng.random_range(0..=180);
        let m = 100 + rng.random_range(0..=900);
        let parts = 1 + k % 3;
        // coordinates on a coarse grid for half the instances so that
        // equidistant vertices and duplicates occur
        let coarse = k % 2 == 0;
        let coord = |rng: &mut ChaCha8Rng| {
            if coarse {
                f64::from(rng.random_range(-3..=3_i32)) * 0.5
            } else {
                uniform(rng, -2.0, 2.0)
            }
        };
        let positions: Vec<_> = (0..n).map(|_| Vector3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng))).collect();
        let mut labels: Vec<_> = (0..n).map(|_| PartLabel(rng.random_range(0..parts as u32))).collect();
        for (i, l) in labels.iter_mut().take(parts).enumerate() {
            *l = PartLabel(i as u32);
        }
        let points: Vec<_> = (0..m).map(|_| Vector3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng))).collect();
        let point_labels: Vec<_> = (0..m).map(|_| PartLabel(rng.random_range(0..parts as u32))).collect();
        let cloud = LabeledPointCloud::new(points, point_labels).unwrap();
        let transforms: BTreeMap<_, _> = if k % 3 == 0 {
            cloud.label_set().into_iter().map(|l| (l, Matrix4::identity())).collect()
        } else {
            let built = NearestNeighbor::build(&positions, &labels, cloud.clone()).unwrap();
            built.correspondence.transforms
        };
        let got = nn_correspondence(&positions, &labels, &cloud, &transforms).unwrap();
        for (pi, (p, l)) in cloud.points.iter().zip(&cloud.labels).enumerate() {
            let t = transforms[l];
            let mut best = (usize::MAX, f64::INFINITY);
            let mut tied = false;
            for (vi, (v, lv)) in positions.iter().zip(&labels).enumerate() {
                if lv != l {
                    continue;
                }
                let d = ((t * v.push(1.0)).xyz() - p).norm_squared();
                if d < best.1 {
                    best = (vi, d);
                    tied = false;
                } else if d == best.1 {
                    tied = true;
                }
            }
            ties += usize::from(tied);
            mismatches += usize::from(got.assignment[pi] != best.0);
        }
    }
    Outcome::new(
        mismatches == 0,
        format!("{instances} instances: {mismatches} mismatched points, {ties} points with tied nearest vertices"),
    )
}

/// `Z` solving `pi exp((Z pi)^2) = 100` by bisection.
fn dame_scale_by_bisection() -> f64 {
    let pi = std::f64::consts::PI;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pi * ((mid * pi) * (mid * pi)).exp() < 100.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn metrics_check(emd_instances: usize, seed: u64) -> Outcome {
    use caddeform::metrics::{dame, dame_scale, emd_exact, fit_report};
    let mut failures = Vec::new();

    // tau clamp: L1 distances 0.05, 0.2, 0.7 and 0.3 against tau 0.2
    let scan = vec![Vector3::zeros()];
    let vertices = vec![
        Vector3::new(0.05, 0.0, 0.0),
        Vector3::new(0.1, -0.1, 0.0),
        Vector3::new(0.0, 0.0, -0.7),
        Vector3::new(0.1, 0.1, 0.1),
    ];
    let report = fit_report(&vertices, &scan, 0.2, false).unwrap();
    // clamped sum 0.05 + 0.2 + 0.2 + 0.2; only the first is strictly closer than tau
    if (report.tmmd - 0.65 / 4.0).abs() > 1e-15 || report.accuracy != 25.0 {
        failures.push(format!("tau clamp gave tmmd {} accuracy {}", report.tmmd, report.accuracy));
    }

    let mesh = shapes::subdivide(&shapes::grid_cube(2), 1);
    let identity = dame(&mesh, mesh.vertices()).unwrap();
    if identity != 0.0 {
        failures.push(format!("DAME on identity {identity}"));
    }

    let z = dame_scale();
    let oracle = dame_scale_by_bisection();
    if (z - 0.5921).abs() > 1e-3 || (z - oracle).abs() > 1e-12 {
        failures.push(format!("Z {z} vs bisection {oracle}"));
    }

    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for k in 0..emd_instances {
        let n = 1 + k % 6;
        let p: Vec<_> = (0..n).map(|_| random_vector(&mut rng, 1.0)).collect();
        let q: Vec<_> = (0..n).map(|_| random_vector(&mut rng, 1.0)).collect();
        let brute = emd_brute_force(&p, &q);
        worst = worst.max(relative(emd_exact(&p, &q).unwrap(), brute));
    }
    if worst > 1e-12 {
        failures.push(format!("EMD relative difference {worst:.2e}"));
    }
    let detail = format!(
        "Z {z:.6}, DAME(identity) {identity}, {emd_instances} EMD instances worst {worst:.1e}{}",
        if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
    );
    Outcome::new(failures.is_empty(), detail)
}

/// Frobenius variance of the edge transforms along every chain of `result`.
pub fn chain_variances(mesh: &Mesh, result: &caddeform::optimizer::DeformationResult) -> Vec<f64> {
    let ops = OperatorSet::build(mesh).unwrap();
    let flat = flatten(&result.vertices);
    result
        .chains
        .iter()
        .map(|chain| {
            let transforms: Vec<Matrix3x4<f64>> = chain
                .edges
                .iter()
                .filter_map(|&e| ops.volumetric(e))
                .map(|op| op.eval(&flat).unwrap())
                .collect();
            let mean = transforms.iter().sum::<Matrix3x4<f64>>() / transforms.len() as f64;
            transforms.iter().map(|t| (t - mean).norm_squared()).sum::<f64>() / transforms.len() as f64
        })
        .collect()
}
