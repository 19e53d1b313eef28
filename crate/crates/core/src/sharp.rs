//! Sharp edge detection by dihedral angle and per-part chain extraction.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, PartLabel};

/// Default dihedral threshold in degrees.
pub const DEFAULT_SHARP_THRESHOLD_DEG: f64 = 120.0;

/// Dihedral angle of an interior edge in radians: `pi` minus the angle between
/// the two face normals, so a flat pair measures `pi`.
pub fn dihedral_angle(mesh: &Mesh, edge: usize) -> Option<f64> {
    let e = &mesh.edges()[edge];
    let g = e.faces.1?;
    let n1 = mesh.face_normal(e.faces.0, mesh.vertices());
    let n2 = mesh.face_normal(g, mesh.vertices());
    let between = n1.cross(&n2).norm().atan2(n1.dot(&n2));
    Some(std::f64::consts::PI - between)
}

/// Ids of interior edges whose dihedral angle is below `threshold_deg`,
/// ascending.
pub fn detect_sharp_edges(mesh: &Mesh, threshold_deg: f64) -> Result<Vec<usize>> {
    if !(threshold_deg > 0.0 && threshold_deg < 180.0) {
        return Err(Error::InvalidParameter(format!(
            "sharp threshold must lie in (0, 180) degrees, got {threshold_deg}"
        )));
    }
    let threshold = threshold_deg.to_radians();
    Ok((0..mesh.edges().len())
        .filter(|&e| dihedral_angle(mesh, e).is_some_and(|a| a < threshold))
        .collect())
}

/// Maximal run of sharp edges inside one part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharpChain {
    pub label: PartLabel,
    pub edges: Vec<usize>,
    /// `edges.len() + 1` entries; for closed loops the first vertex repeats at the end.
    pub vertices: Vec<usize>,
    pub closed: bool,
}

impl SharpChain {
    /// Edge pairs compared by the sharp energy, including the seam pair of a loop.
    pub fn consecutive_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<_> = self.edges.windows(2).map(|w| (w[0], w[1])).collect();
        if self.closed && self.edges.len() > 2 {
            pairs.push((self.edges[self.edges.len() - 1], self.edges[0]));
        }
        pairs
    }
}

/// Splits sharp edges into part-local chains. A vertex continues a chain only
/// if exactly two same-part sharp edges meet there. Edges whose endpoints
/// carry different labels become singleton chains labeled by their lower
/// vertex. Chains are emitted in order of their smallest edge id.
pub fn build_chains(mesh: &Mesh, sharp_edges: &[usize]) -> Vec<SharpChain> {
    let labels = mesh.labels();
    let edges = mesh.edges();
    let mut sorted = sharp_edges.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    // same-part sharp edges incident to each vertex
    let mut incident: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &e in &sorted {
        let [a, b] = edges[e].vertices;
        if labels[a] == labels[b] {
            incident.entry(a).or_default().push(e);
            incident.entry(b).or_default().push(e);
        }
    }
    let passes = |v: usize| incident.get(&v).is_some_and(|list| list.len() == 2);
    let other = |e: usize, v: usize| {
        let [a, b] = edges[e].vertices;
        if a == v {
            b
        } else {
            a
        }
    };
    let walk = |start_edge: usize, from: usize, used: &mut Vec<bool>, pos: &BTreeMap<usize, usize>| {
        // returns (edges, vertices) walking away from `from` through start_edge
        let mut chain_edges = vec![start_edge];
        let mut chain_vertices = vec![from];
        used[pos[&start_edge]] = true;
        let mut current = other(start_edge, from);
        let mut edge = start_edge;
        chain_vertices.push(current);
        while passes(current) {
            let list = &incident[&current];
            let next = if list[0] == edge { list[1] } else { list[0] };
            if used[pos[&next]] {
                break;
            }
            used[pos[&next]] = true;
            chain_edges.push(next);
            current = other(next, current);
            chain_vertices.push(current);
            edge = next;
        }
        (chain_edges, chain_vertices)
    };

    let pos: BTreeMap<usize, usize> = sorted.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let mut used = vec![false; sorted.len()];
    let mut chains = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        if used[i] {
            continue;
        }
        let [a, b] = edges[e].vertices;
        if labels[a] != labels[b] {
            used[i] = true;
            chains.push(SharpChain {
                label: labels[a],
                edges: vec![e],
                vertices: vec![a, b],
                closed: false,
            });
            continue;
        }
        let (fwd_e, fwd_v) = walk(e, a, &mut used, &pos);
        let closed = fwd_v.len() > 2 && fwd_v.first() == fwd_v.last() && passes(a);
        let (mut chain_edges, mut chain_vertices) = if closed {
            (fwd_e, fwd_v)
        } else {
            // extend backwards from `a` through the other incident edge
            let mut back_e = Vec::new();
            let mut back_v = Vec::new();
            if passes(a) {
                let list = &incident[&a];
                let next = if list[0] == e { list[1] } else { list[0] };
                if !used[pos[&next]] {
                    let (be, bv) = walk(next, a, &mut used, &pos);
                    back_e = be;
                    back_v = bv;
                }
            }
            let mut ce: Vec<usize> = back_e.into_iter().rev().collect();
            ce.extend(fwd_e);
            let mut cv: Vec<usize> = back_v.into_iter().rev().collect();
            if !cv.is_empty() {
                cv.pop();
            }
            cv.extend(fwd_v);
            (ce, cv)
        };
        orient(&mut chain_edges, &mut chain_vertices, closed, e, a);
        chains.push(SharpChain {
            label: labels[a],
            edges: chain_edges,
            vertices: chain_vertices,
            closed,
        });
    }
    chains
}

/// Open chains start at the smaller endpoint id (ties by smaller first edge);
/// loops start at the smaller vertex of their smallest edge and leave through it.
fn orient(edges: &mut Vec<usize>, vertices: &mut Vec<usize>, closed: bool, min_edge: usize, min_vertex: usize) {
    if closed {
        let k = edges.iter().position(|&x| x == min_edge).unwrap();
        let n = edges.len();
        let forward = vertices[k] == min_vertex;
        let mut new_edges = Vec::with_capacity(n);
        let mut new_vertices = Vec::with_capacity(n + 1);
        if forward {
            for s in 0..n {
                new_edges.push(edges[(k + s) % n]);
                new_vertices.push(vertices[(k + s) % n]);
            }
        } else {
            // vertices[k + 1] == min_vertex; walk backwards
            for s in 0..n {
                new_edges.push(edges[(k + n - s) % n]);
                new_vertices.push(vertices[(k + 1 + n - s) % n]);
            }
        }
        new_vertices.push(new_vertices[0]);
        *edges = new_edges;
        *vertices = new_vertices;
        return;
    }
    let (first, last) = (vertices[0], vertices[vertices.len() - 1]);
    let reverse = last < first || (last == first && edges[edges.len() - 1] < edges[0]);
    if reverse {
        edges.reverse();
        vertices.reverse();
    }
}

/// One line per chain: `label: v0 v1 ... vk`.
pub fn chains_to_text(chains: &[SharpChain]) -> String {
    let mut out = String::new();
    for chain in chains {
        let _ = write!(out, "{}:", chain.label);
        for v in &chain.vertices {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}
