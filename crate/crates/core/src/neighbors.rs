//! Exact nearest-neighbour queries with a static kd-tree.

use crate::error::{Error, Result};

const LEAF: usize = 16;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Static kd-tree over a point set of fixed dimension.
#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    /// Points in tree order, flattened.
    coords: Vec<f64>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyCloud)?;
        let dim = first.as_ref().len();
        for p in points {
            if p.as_ref().len() != dim {
                return Err(Error::Dimension {
                    context: "kd-tree point",
                    expected: dim,
                    found: p.as_ref().len(),
                });
            }
            if p.as_ref().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("kd-tree point".into()));
            }
        }
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        build(points, &mut idx, 0, dim, &mut nodes);
        let mut coords = Vec::with_capacity(points.len() * dim);
        for &i in &idx {
            coords.extend_from_slice(points[i].as_ref());
        }
        Ok(Self { dim, coords, nodes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Distance to the nearest point.
    pub fn nearest(&self, q: &[f64]) -> f64 {
        self.kth_nearest(q, 1)
    }

    /// Distance to the `k`-th nearest point (`k ≥ 1`), clamped to the set
    /// size.
    pub fn kth_nearest(&self, q: &[f64], k: usize) -> f64 {
        let k = k.clamp(1, self.len().max(1));
        // Sorted ascending list of the k best squared distances.
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        self.search(0, q, k, &mut best);
        best.last().copied().unwrap_or(f64::INFINITY).sqrt()
    }

    fn search(&self, node: usize, q: &[f64], k: usize, best: &mut Vec<f64>) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in *start..*end {
                    let p = &self.coords[i * self.dim..(i + 1) * self.dim];
                    let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                    if best.len() < k || d2 < best[best.len() - 1] {
                        let pos = best.partition_point(|v| *v <= d2);
                        best.insert(pos, d2);
                        best.truncate(k);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff <= 0.0 { (*left, *right) } else { (*right, *left) };
                self.search(near, q, k, best);
                if best.len() < k || diff * diff < best[best.len() - 1] {
                    self.search(far, q, k, best);
                }
            }
        }
    }
}

fn build<P: AsRef<[f64]>>(points: &[P], idx: &mut [usize], offset: usize, dim: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if idx.len() <= LEAF {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + idx.len(),
        });
        return id;
    }
    // Split along the widest coordinate at the median.
    let mut split = 0;
    let mut widest = -1.0;
    for d in 0..dim {
        let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            let v = points[i].as_ref()[d];
            (lo.min(v), hi.max(v))
        });
        if hi - lo > widest {
            widest = hi - lo;
            split = d;
        }
    }
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| {
        points[a].as_ref()[split]
            .total_cmp(&points[b].as_ref()[split])
            .then(a.cmp(&b))
    });
    let value = points[idx[mid]].as_ref()[split];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = idx.split_at_mut(mid);
    let left = build(points, l, offset, dim, nodes);
    let right = build(points, r, offset + mid, dim, nodes);
    nodes[id] = Node::Split {
        dim: split,
        value,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_kth(points: &[Vec<f64>], q: &[f64], k: usize) -> f64 {
        let mut d: Vec<f64> = points
            .iter()
            .map(|p| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect();
        d.sort_by(f64::total_cmp);
        d[k.min(d.len()) - 1]
    }

    #[test]
    fn empty_rejected() {
        let pts: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(KdTree::new(&pts), Err(Error::EmptyCloud)));
    }

    #[test]
    fn three_four_five() {
        let t = KdTree::new(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.nearest(&[0.0, 0.0]), 5.0);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..200),
            q in proptest::collection::vec(-6.0f64..6.0, 3),
            k in 1usize..5,
        ) {
            let t = KdTree::new(&pts).unwrap();
            prop_assert_eq!(t.kth_nearest(&q, k), brute_kth(&pts, &q, k));
        }
    }
}
