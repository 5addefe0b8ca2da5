use super::exact_sq_dist;

#[derive(Clone, Copy)]
struct Node {
    point: u32,
    axis: u32,
    left: u32,
    right: u32,
}

const NONE: u32 = u32::MAX;

/// Exact nearest-neighbour tree over `m` points of dimension `dim`.
pub(super) struct KdTree<'a> {
    points: &'a [f32],
    dim: usize,
    nodes: Vec<Node>,
    root: u32,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [f32], dim: usize) -> Self {
        let m = points.len() / dim;
        let mut idx: Vec<u32> = (0..m as u32).collect();
        let mut tree = Self { points, dim, nodes: Vec::with_capacity(m), root: NONE };
        tree.root = tree.build(&mut idx);
        tree
    }

    fn coord(&self, i: u32, a: usize) -> f32 {
        self.points[i as usize * self.dim + a]
    }

    fn build(&mut self, idx: &mut [u32]) -> u32 {
        if idx.is_empty() {
            return NONE;
        }
        let mut axis = 0;
        let mut spread = f32::NEG_INFINITY;
        for a in 0..self.dim {
            let (lo, hi) = idx.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &i| {
                let v = self.coord(i, a);
                (lo.min(v), hi.max(v))
            });
            if hi - lo > spread {
                spread = hi - lo;
                axis = a;
            }
        }
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&p, &q| self.coord(p, axis).total_cmp(&self.coord(q, axis)));
        let point = idx[mid];
        let (lo, rest) = idx.split_at_mut(mid);
        let left = self.build(lo);
        let right = self.build(&mut rest[1..]);
        self.nodes.push(Node { point, axis: axis as u32, left, right });
        (self.nodes.len() - 1) as u32
    }

    /// Nearest point to `q`; ties go to the lowest index.
    pub fn nearest(&self, q: &[f32]) -> (usize, f64) {
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(self.root, q, &mut best);
        (best.1, best.0)
    }

    fn search(&self, node: u32, q: &[f32], best: &mut (f64, usize)) {
        if node == NONE {
            return;
        }
        let n = self.nodes[node as usize];
        let p = n.point as usize;
        let d = exact_sq_dist(q, &self.points[p * self.dim..(p + 1) * self.dim]);
        if d < best.0 || (d == best.0 && p < best.1) {
            *best = (d, p);
        }
        let diff = q[n.axis as usize] as f64 - self.coord(n.point, n.axis as usize) as f64;
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, q, best);
        // every point across the plane is at least |diff| away on this axis
        if diff * diff <= best.0 {
            self.search(far, q, best);
        }
    }
}
