//! Exact nearest-neighbour queries over 3D points.
//!
//! A static kd-tree with median splits. Queries are exact; among points at
//! the same distance the lowest index wins.

use crate::math::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Caller-facing index for each slot of `points`.
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// Tree over all points, ids are positions in `points`.
    pub fn new(points: &[Vec3]) -> Self {
        Self::with_ids(points.iter().copied().enumerate())
    }

    /// Tree over a subset of points tagged with caller ids.
    pub fn with_ids(items: impl IntoIterator<Item = (usize, Vec3)>) -> Self {
        let (ids, points): (Vec<usize>, Vec<Vec3>) = items.into_iter().unzip();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            build(&points, &mut order, 0, &mut nodes);
        }
        Self {
            points: order.iter().map(|&i| points[i]).collect(),
            ids: order.iter().map(|&i| ids[i]).collect(),
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point as `(id, squared distance)`.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(0, query, &mut best);
        Some(best)
    }

    fn nearest_in(&self, node: usize, q: &Vec3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let d2 = (self.points[slot] - q).norm_squared();
                    let id = self.ids[slot];
                    if d2 < best.1 || (d2 == best.1 && id < best.0) {
                        *best = (id, d2);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                // `<=` keeps equal-distance candidates reachable for the tie-break.
                if diff * diff <= best.1 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// Ids of all points within `radius` (inclusive), with squared distances,
    /// sorted by (distance, id).
    pub fn within(&self, query: &Vec3, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.within_in(0, query, radius * radius, &mut out);
        }
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn within_in(&self, node: usize, q: &Vec3, r2: f64, out: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let d2 = (self.points[slot] - q).norm_squared();
                    if d2 <= r2 {
                        out.push((self.ids[slot], d2));
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.within_in(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.within_in(right, q, r2, out);
                }
            }
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let me = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return me;
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let value = points[order[mid]][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = order.split_at_mut(mid);
    let left = build(points, l, offset, nodes);
    let right = build(points, r, offset + mid, nodes);
    nodes[me] = Node::Split { axis, value, left, right };
    me
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(points: &[Vec3], q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    #[test]
    fn matches_brute_force_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..1000).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let tree = KdTree::new(&pts);
        for _ in 0..1000 {
            let q = Vec3::new(rng.random::<f64>() * 1.2 - 0.1, rng.random(), rng.random());
            assert_eq!(tree.nearest(&q).unwrap(), brute_nearest(&pts, &q));
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        // Lattice with many duplicates and equidistant candidates.
        let mut pts = Vec::new();
        for _ in 0..3 {
            for x in 0..5 {
                for y in 0..5 {
                    pts.push(Vec3::new(x as f64, y as f64, 0.0));
                }
            }
        }
        let tree = KdTree::new(&pts);
        for x in 0..9 {
            for y in 0..9 {
                let q = Vec3::new(x as f64 * 0.5, y as f64 * 0.5, 0.0);
                assert_eq!(tree.nearest(&q).unwrap(), brute_nearest(&pts, &q), "query {q:?}");
            }
        }
    }

    #[test]
    fn radius_query_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..300).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let tree = KdTree::with_ids(pts.iter().enumerate().map(|(i, p)| (i * 2, *p)));
        let q = Vec3::new(0.5, 0.5, 0.5);
        let got: Vec<usize> = tree.within(&q, 0.2).into_iter().map(|(i, _)| i).collect();
        let mut want: Vec<(usize, f64)> = pts
            .iter()
            .enumerate()
            .filter(|(_, p)| (*p - q).norm_squared() <= 0.04)
            .map(|(i, p)| (i * 2, (p - q).norm_squared()))
            .collect();
        want.sort_by(|a, b| a.1.total_cmp(&b.1));
        assert_eq!(got, want.into_iter().map(|(i, _)| i).collect::<Vec<_>>());
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[]);
        assert!(tree.nearest(&Vec3::zeros()).is_none());
        assert!(tree.within(&Vec3::zeros(), 1.0).is_empty());
    }
}
