//! k-d tree over a fixed point set answering annulus queries
//! `{p : r_in <= |p - q| <= r_out}`.
//!
//! Nodes whose bounding box lies entirely inside the inner radius or entirely
//! outside the outer radius are skipped. Pruning is conservative (a relative
//! slack of a few ulps); the exact inclusion test is left to the caller so
//! indexed and brute-force paths make identical decisions.

use crate::scalar::{dist, Scalar};

const LEAF_SIZE: usize = 16;

#[derive(Clone, Debug)]
struct Node {
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct AnnulusIndex<T> {
    dim: usize,
    /// Points in tree order.
    points: Vec<T>,
    /// `order[k]` is the original index of the `k`-th point in tree order.
    order: Vec<usize>,
    nodes: Vec<Node>,
    /// `2 * dim` entries per node: mins then maxes.
    boxes: Vec<T>,
}

impl<T: Scalar> AnnulusIndex<T> {
    /// Indexes `coords` (flat, `dim` per point).
    pub fn new(dim: usize, coords: &[T]) -> Self {
        assert!(
            dim > 0 && coords.len().is_multiple_of(dim),
            "coordinate buffer does not match dimension"
        );
        let n = coords.len() / dim;
        let mut order: Vec<usize> = (0..n).collect();
        let mut index = Self {
            dim,
            points: Vec::new(),
            order: Vec::new(),
            nodes: Vec::new(),
            boxes: Vec::new(),
        };
        if n > 0 {
            index.build(coords, &mut order, 0, n);
        }
        index.points = order
            .iter()
            .flat_map(|&i| coords[i * dim..(i + 1) * dim].iter().copied())
            .collect();
        index.order = order;
        index
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn build(&mut self, coords: &[T], order: &mut [usize], start: usize, end: usize) -> usize {
        let d = self.dim;
        let mut lo = vec![T::infinity(); d];
        let mut hi = vec![T::neg_infinity(); d];
        for &i in &order[start..end] {
            for a in 0..d {
                let x = coords[i * d + a];
                lo[a] = lo[a].min(x);
                hi[a] = hi[a].max(x);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            children: None,
        });
        self.boxes.extend_from_slice(&lo);
        self.boxes.extend_from_slice(&hi);

        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..d)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
            .unwrap();
        if hi[axis] == lo[axis] {
            // all points coincide
            return id;
        }
        let mid = (end - start) / 2;
        order[start..end].select_nth_unstable_by(mid, |&i, &j| {
            coords[i * d + axis]
                .partial_cmp(&coords[j * d + axis])
                .unwrap()
                .then(i.cmp(&j))
        });
        let left = self.build(coords, order, start, start + mid);
        let right = self.build(coords, order, start + mid, end);
        self.nodes[id].children = Some((left, right));
        id
    }

    fn box_distances_sq(&self, node: usize, q: &[T]) -> (T, T) {
        let d = self.dim;
        let b = &self.boxes[node * 2 * d..(node + 1) * 2 * d];
        let (lo, hi) = b.split_at(d);
        let mut near = T::zero();
        let mut far = T::zero();
        for a in 0..d {
            let x = q[a];
            let below = lo[a] - x;
            let above = x - hi[a];
            let gap = below.max(above).max(T::zero());
            near += gap * gap;
            let reach = (x - lo[a]).abs().max((hi[a] - x).abs());
            far += reach * reach;
        }
        (near, far)
    }

    /// Original indices of every point that may satisfy
    /// `r_in <= |p - q| <= r_out`, ascending. A superset of the exact answer
    /// only by points within a few ulps of either radius.
    pub fn annulus_candidates(&self, q: &[T], r_in: T, r_out: T) -> Vec<usize> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let slack = T::epsilon() * T::lit(64.0);
        let out_sq = r_out * r_out * (T::one() + slack);
        let in_sq = if r_in > T::zero() {
            r_in * r_in * (T::one() - slack)
        } else {
            T::neg_infinity()
        };
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            let (near, far) = self.box_distances_sq(node, q);
            if near > out_sq || far < in_sq {
                continue;
            }
            let Node { start, end, children } = self.nodes[node];
            match children {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => out.extend(self.order[start..end].iter().copied()),
            }
        }
        out.sort_unstable();
        out
    }

    /// Exact closed-annulus members, ascending.
    pub fn annulus(&self, q: &[T], r_in: T, r_out: T, coords: &[T]) -> Vec<usize> {
        let d = self.dim;
        self.annulus_candidates(q, r_in, r_out)
            .into_iter()
            .filter(|&i| {
                let r = dist(&coords[i * d..(i + 1) * d], q);
                r_in <= r && r <= r_out
            })
            .collect()
    }
}
