//! Exact k-nearest-neighbor search on a kd-tree.
//!
//! Neighbors are ordered by squared Euclidean distance, ties broken by the
//! lower row index, so results are identical to a full linear scan.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree over `n` points of dimension `dims`, stored row-major.
/// Serializes as its point buffer; the tree is rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "PointBuffer", into = "PointBuffer")]
pub struct KdTree {
    dims: usize,
    points: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Serialize, Deserialize)]
struct PointBuffer {
    dims: usize,
    points: Vec<f64>,
}

impl From<PointBuffer> for KdTree {
    fn from(b: PointBuffer) -> Self {
        KdTree::new(b.points, b.dims.max(1))
    }
}

impl From<KdTree> for PointBuffer {
    fn from(t: KdTree) -> Self {
        PointBuffer {
            dims: t.dims,
            points: t.points,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Squared Euclidean distance, summed in dimension order.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    pub fn new(points: Vec<f64>, dims: usize) -> Self {
        assert!(dims > 0, "kd-tree needs at least one dimension");
        assert_eq!(
            points.len() % dims,
            0,
            "point buffer not a multiple of dims"
        );
        let n = points.len() / dims;
        let mut tree = KdTree {
            dims,
            points,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.points[index * self.dims..(index + 1) * self.dims]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        self.nodes.push(Node::Leaf { start, end });
        let dim = self.widest_dim(start, end);
        let mid = start + (end - start) / 2;
        let (dims, points) = (self.dims, &self.points);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a * dims + dim]
                .total_cmp(&points[b * dims + dim])
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] * self.dims + dim];
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    fn widest_dim(&self, start: usize, end: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for d in 0..self.dims {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.points[i * self.dims + d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        best.0
    }

    /// The `k` nearest points to `query` as `(index, squared distance)`,
    /// closest first.
    pub fn nearest(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        self.nearest_filtered(query, k, |_| true)
    }

    /// Like [`nearest`](Self::nearest) but only rows for which `keep`
    /// returns true are eligible.
    pub fn nearest_filtered(
        &self,
        query: &[f64],
        k: usize,
        keep: impl Fn(usize) -> bool,
    ) -> Vec<(usize, f64)> {
        assert_eq!(query.len(), self.dims, "query dimension mismatch");
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &keep, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist2)).collect()
    }

    fn search(
        &self,
        node: usize,
        query: &[f64],
        k: usize,
        keep: &impl Fn(usize) -> bool,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if !keep(i) {
                        continue;
                    }
                    let c = Candidate {
                        dist2: squared_distance(query, self.point(i)),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, k, keep, heap);
                // equal distance may still hold a lower index, so only prune on strict excess
                if heap.len() < k || diff * diff <= heap.peek().expect("heap is full").dist2 {
                    self.search(far, query, k, keep, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[f64], dims: usize, q: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(f64, usize)> = points
            .chunks(dims)
            .enumerate()
            .map(|(i, p)| {
                let mut d = 0.0;
                for j in 0..dims {
                    d += (q[j] - p[j]) * (q[j] - p[j]);
                }
                (d, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(d, i)| (i, d)).collect()
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..40 {
            let dims = 1 + trial % 6;
            let n = 1 + rng.random_range(0..600);
            let pts: Vec<f64> = (0..n * dims).map(|_| rng.random::<f64>()).collect();
            let tree = KdTree::new(pts.clone(), dims);
            for _ in 0..20 {
                let q: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
                let k = 1 + rng.random_range(0..25);
                assert_eq!(tree.nearest(&q, k), brute(&pts, dims, &q, k));
            }
        }
    }

    #[test]
    fn ties_break_by_lowest_index() {
        // four copies of the same point plus a far one
        let pts = vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 9.0, 9.0];
        let tree = KdTree::new(pts, 2);
        let got: Vec<usize> = tree.nearest(&[0.5, 0.5], 2).iter().map(|p| p.0).collect();
        assert_eq!(got, vec![0, 1]);
        let grid: Vec<f64> = (0..200).flat_map(|i| [(i % 3) as f64, 0.0]).collect();
        let tree = KdTree::new(grid.clone(), 2);
        assert_eq!(
            tree.nearest(&[1.0, 0.0], 30),
            brute(&grid, 2, &[1.0, 0.0], 30)
        );
    }

    #[test]
    fn filter_excludes_rows() {
        let pts: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let tree = KdTree::new(pts, 1);
        let got = tree.nearest_filtered(&[10.0], 3, |i| i != 10);
        let idx: Vec<usize> = got.iter().map(|p| p.0).collect();
        assert_eq!(idx, vec![9, 11, 8]);
    }

    #[test]
    fn k_larger_than_n_returns_all() {
        let tree = KdTree::new(vec![0.0, 1.0, 2.0], 1);
        assert_eq!(tree.nearest(&[0.2], 10).len(), 3);
        assert!(KdTree::new(vec![], 2).nearest(&[0.0, 0.0], 3).is_empty());
    }
}
