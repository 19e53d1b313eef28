//! Procedural meshes and surface sampling used by fixtures, examples and the
//! morphing demos.

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::{Mesh, PartLabel};

/// Axis-aligned cube of side 1 centered at the origin, 8 vertices and 12
/// triangles, outward counter-clockwise orientation.
pub fn unit_cube() -> Mesh {
    grid_cube(1)
}

/// Unit cube whose faces are `n x n` grids of split quads, `6n^2 + 2`
/// vertices.
pub fn grid_cube(n: usize) -> Mesh {
    assert!(n >= 1);
    // (normal axis, side, u axis, v axis) with u x v pointing outward
    let sides: [(usize, usize, usize, usize); 6] = [
        (0, n, 1, 2),
        (0, 0, 2, 1),
        (1, n, 2, 0),
        (1, 0, 0, 2),
        (2, n, 0, 1),
        (2, 0, 1, 0),
    ];
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut vertex = |lattice: [usize; 3]| -> usize {
        *index.entry(lattice).or_insert_with(|| {
            vertices.push(Vector3::new(
                lattice[0] as f64 / n as f64 - 0.5,
                lattice[1] as f64 / n as f64 - 0.5,
                lattice[2] as f64 / n as f64 - 0.5,
            ));
            vertices.len() - 1
        })
    };
    let mut faces = Vec::new();
    for (axis, side, u, v) in sides {
        let at = |i: usize, j: usize| {
            let mut l = [0; 3];
            l[axis] = side;
            l[u] = i;
            l[v] = j;
            l
        };
        for i in 0..n {
            for j in 0..n {
                let a = vertex(at(i, j));
                let b = vertex(at(i + 1, j));
                let c = vertex(at(i + 1, j + 1));
                let d = vertex(at(i, j + 1));
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
    }
    Mesh::unlabeled(vertices, faces).expect("cube construction is valid")
}

/// Regular tetrahedron with unit circumradius-ish coordinates.
pub fn regular_tetrahedron() -> Mesh {
    let vertices = vec![
        Vector3::new(1.0, 1.0, 1.0),
        Vector3::new(1.0, -1.0, -1.0),
        Vector3::new(-1.0, 1.0, -1.0),
        Vector3::new(-1.0, -1.0, 1.0),
    ];
    let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    Mesh::unlabeled(vertices, faces).expect("tetrahedron construction is valid")
}

/// Regular icosahedron inscribed in the unit sphere.
pub fn icosahedron() -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let vertices = raw
        .iter()
        .map(|p| Vector3::new(p[0], p[1], p[2]).normalize())
        .collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    Mesh::unlabeled(vertices, faces).expect("icosahedron construction is valid")
}

/// Subdivided icosahedron projected back onto the unit sphere.
pub fn geodesic_sphere(levels: usize) -> Mesh {
    map_vertices(&subdivide(&icosahedron(), levels), |v| v.normalize())
}

/// Latitude/longitude sphere: two poles plus `rings x segments` vertices.
pub fn uv_sphere(rings: usize, segments: usize, radius: f64) -> Mesh {
    assert!(rings >= 1 && segments >= 3);
    let mut vertices = vec![Vector3::new(0.0, 0.0, radius)];
    for r in 0..rings {
        let theta = std::f64::consts::PI * (r + 1) as f64 / (rings + 1) as f64;
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            vertices.push(radius * Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()));
        }
    }
    let south = vertices.len();
    vertices.push(Vector3::new(0.0, 0.0, -radius));
    let ring = |r: usize, s: usize| 1 + r * segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(0, s), ring(0, s + 1)]);
    }
    for r in 0..rings - 1 {
        for s in 0..segments {
            let (a, b) = (ring(r, s), ring(r, s + 1));
            let (c, d) = (ring(r + 1, s + 1), ring(r + 1, s));
            faces.push([a, d, c]);
            faces.push([a, c, b]);
        }
    }
    for s in 0..segments {
        faces.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    Mesh::unlabeled(vertices, faces).expect("sphere construction is valid")
}

/// Flat `n x n` grid of split quads in the plane `z = 0`, spanning `[0,1]^2`.
pub fn flat_grid(n: usize) -> Mesh {
    let idx = |i: usize, j: usize| i * (n + 1) + j;
    let mut vertices = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            vertices.push(Vector3::new(i as f64 / n as f64, j as f64 / n as f64, 0.0));
        }
    }
    let mut faces = Vec::new();
    for i in 0..n {
        for j in 0..n {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    Mesh::unlabeled(vertices, faces).expect("grid construction is valid")
}

/// Midpoint subdivision, each triangle split into four, applied `levels`
/// times. A new vertex takes the label of the smaller-index endpoint of its
/// edge.
pub fn subdivide(mesh: &Mesh, levels: usize) -> Mesh {
    let mut current = mesh.clone();
    for _ in 0..levels {
        let mut vertices = current.vertices().to_vec();
        let mut labels = current.labels().to_vec();
        let mut midpoint = Vec::with_capacity(current.edges().len());
        for edge in current.edges() {
            let [a, b] = edge.vertices;
            midpoint.push(vertices.len());
            vertices.push(0.5 * (vertices[a] + vertices[b]));
            labels.push(current.labels()[a]);
        }
        let mut faces = Vec::with_capacity(4 * current.faces().len());
        for (face, edges) in current.faces().iter().zip(current.face_edges()) {
            let [a, b, c] = *face;
            let (ab, bc, ca) = (midpoint[edges[0]], midpoint[edges[1]], midpoint[edges[2]]);
            faces.push([a, ab, ca]);
            faces.push([ab, b, bc]);
            faces.push([ca, bc, c]);
            faces.push([ab, bc, ca]);
        }
        current = Mesh::new(vertices, faces, labels).expect("subdivision preserves validity");
    }
    current
}

/// Assigns a label to every vertex from its position.
pub fn relabel(mesh: &Mesh, label_of: impl Fn(&Vector3<f64>) -> PartLabel) -> Mesh {
    let labels = mesh.vertices().iter().map(label_of).collect();
    Mesh::new(mesh.vertices().to_vec(), mesh.faces().to_vec(), labels)
        .expect("relabeling preserves validity")
}

/// Applies a point map to every vertex.
pub fn map_vertices(mesh: &Mesh, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Mesh {
    let vertices = mesh.vertices().iter().map(f).collect();
    mesh.with_vertices(vertices).expect("same vertex count")
}

/// Area-uniform random samples on the surface with the label of the nearest
/// triangle corner, reproducible from `seed`.
pub fn sample_surface(
    mesh: &Mesh,
    positions: &[Vector3<f64>],
    count: usize,
    seed: u64,
) -> (Vec<Vector3<f64>>, Vec<PartLabel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cumulative = Vec::with_capacity(mesh.faces().len());
    let mut total = 0.0;
    for &[a, b, c] in mesh.faces() {
        total += 0.5 * (positions[b] - positions[a]).cross(&(positions[c] - positions[a])).norm();
        cumulative.push(total);
    }
    let mut points = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.random::<f64>() * total;
        let face = cumulative.partition_point(|&c| c < target).min(cumulative.len() - 1);
        let [a, b, c] = mesh.faces()[face];
        let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
        if r1 + r2 > 1.0 {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        let weights = [1.0 - r1 - r2, r1, r2];
        points.push(positions[a] * weights[0] + positions[b] * weights[1] + positions[c] * weights[2]);
        let corner = (0..3)
            .max_by(|&i, &j| weights[i].total_cmp(&weights[j]).then(j.cmp(&i)))
            .unwrap();
        labels.push(mesh.labels()[[a, b, c][corner]]);
    }
    (points, labels)
}
