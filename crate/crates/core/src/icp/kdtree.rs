use nalgebra::Vector3;

#[derive(Debug, Clone)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Static 3-d tree for exact nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: None,
        };
        let mut idx: Vec<usize> = (0..points.len()).collect();
        tree.root = tree.build(&mut idx);
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

    fn build(&mut self, idx: &mut [usize]) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = spread_axis(&self.points, idx);
        let pts = &self.points;
        idx.sort_unstable_by(|&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        let mid = idx.len() / 2;
        let node = self.nodes.len();
        self.nodes.push(Node { point: idx[mid], axis, left: None, right: None });
        let (lo, rest) = idx.split_at_mut(mid);
        let left = self.build(lo);
        let right = self.build(&mut rest[1..]);
        self.nodes[node].left = left;
        self.nodes[node].right = right;
        Some(node)
    }

    /// Closest point as `(index, distance)`; equal distances resolve to the
    /// lowest index.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best);
        (best.0 != usize::MAX).then(|| (best.0, best.1.sqrt()))
    }

    /// Closest point no farther than `radius`.
    pub fn nearest_within(&self, query: &Vector3<f64>, radius: f64) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, radius * radius);
        // Seeded with the radius so the search prunes everything outside it;
        // a point exactly at the radius still qualifies.
        self.search(self.root, query, &mut best);
        if best.0 == usize::MAX {
            return None;
        }
        Some((best.0, best.1.sqrt()))
    }

    fn search(&self, node: Option<usize>, q: &Vector3<f64>, best: &mut (usize, f64)) {
        let Some(n) = node else { return };
        let node = &self.nodes[n];
        let p = &self.points[node.point];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && node.point < best.0) {
            *best = (node.point, d2);
        }
        let diff = q[node.axis] - p[node.axis];
        let (near, far) = if diff < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        self.search(near, q, best);
        if diff * diff <= best.1 {
            self.search(far, q, best);
        }
    }
}

fn spread_axis(points: &[Vector3<f64>], idx: &[usize]) -> usize {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in idx {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    (hi - lo).imax()
}

/// Linear scan, kept as the reference for the tree.
pub fn brute_force_nearest(points: &[Vector3<f64>], query: &Vector3<f64>, radius: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - query).norm_squared();
        if d2 <= radius * radius && best.is_none_or(|(_, bd)| d2 < bd) {
            best = Some((i, d2));
        }
    }
    best.map(|(i, d2)| (i, d2.sqrt()))
}
