//! Static kd-tree over 3D points with exact nearest-neighbor and radius
//! queries. Ties are broken toward the smaller point index so results match a
//! brute-force scan exactly.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// Squared Euclidean distance is used for comparisons.
    L2,
    L1,
}

impl Metric {
    /// Comparable distance: squared for L2, plain for L1.
    #[inline]
    fn key(self, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        match self {
            Metric::L2 => (a - b).norm_squared(),
            Metric::L1 => (a - b).abs().sum(),
        }
    }

    #[inline]
    fn plane_key(self, delta: f64) -> f64 {
        match self {
            Metric::L2 => delta * delta,
            Metric::L1 => delta.abs(),
        }
    }

    /// Converts a comparable key back to a distance.
    pub fn distance(self, key: f64) -> f64 {
        match self {
            Metric::L2 => key.sqrt(),
            Metric::L1 => key,
        }
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let slice = &self.order[start..end];
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in slice {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] == lo[axis] {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Nearest point index and its distance, or `None` for an empty tree.
    pub fn nearest(&self, query: &Vector3<f64>, metric: Metric) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(0, query, metric, &mut best);
        Some((best.0, metric.distance(best.1)))
    }

    fn nearest_in(&self, node: usize, q: &Vector3<f64>, metric: Metric, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = metric.key(q, &self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = q[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, metric, best);
                // equal keys must still be visited for the index tie-break
                if metric.plane_key(delta) <= best.1 {
                    self.nearest_in(far, q, metric, best);
                }
            }
        }
    }

    /// All points within `radius` (inclusive) as `(index, distance)`, sorted by index.
    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64, metric: Metric) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            let key = metric.plane_key(radius);
            self.radius_in(0, query, key, metric, &mut out);
        }
        out.sort_unstable_by_key(|e| e.0);
        out.into_iter().map(|(i, k)| (i, metric.distance(k))).collect()
    }

    fn radius_in(&self, node: usize, q: &Vector3<f64>, key: f64, metric: Metric, out: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = metric.key(q, &self.points[i]);
                    if d <= key {
                        out.push((i, d));
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = q[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.radius_in(near, q, key, metric, out);
                if metric.plane_key(delta) <= key {
                    self.radius_in(far, q, key, metric, out);
                }
            }
        }
    }
}

/// Brute-force nearest neighbor with the same tie-break as [`KdTree::nearest`].
pub fn nearest_brute_force(points: &[Vector3<f64>], query: &Vector3<f64>, metric: Metric) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = metric.key(query, p);
        if best.is_none_or(|b| d < b.1) {
            best = Some((i, d));
        }
    }
    best.map(|(i, k)| (i, metric.distance(k)))
}
