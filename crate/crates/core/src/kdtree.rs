//! Static 2-D k-d tree over a fixed point set.
//!
//! The tree is stored implicitly: points are permuted so that every subrange
//! `[lo, hi)` has its splitting node at `(lo + hi) / 2`, with the split axis
//! alternating by depth. Queries return the exact Euclidean argmin with ties
//! resolved toward the smallest original index.

use crate::ergodic::Point;

#[derive(Debug, Clone)]
pub(crate) struct KdTree {
    points: Vec<Point>,
    index: Vec<u32>,
}

#[inline]
pub(crate) fn dist2(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

impl KdTree {
    pub(crate) fn new(points: &[Point]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        build(points, &mut order, 0);
        KdTree {
            points: order.iter().map(|&i| points[i as usize]).collect(),
            index: order,
        }
    }

    /// Returns `(original index, squared distance)` of the nearest point.
    pub(crate) fn nearest(&self, q: Point) -> (usize, f64) {
        let mut best = (f64::INFINITY, u32::MAX);
        self.search(0, self.points.len(), 0, q, &mut best);
        (best.1 as usize, best.0)
    }

    fn search(&self, lo: usize, hi: usize, depth: usize, q: Point, best: &mut (f64, u32)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let p = self.points[mid];
        let idx = self.index[mid];
        let d = dist2(p, q);
        if d < best.0 || (d == best.0 && idx < best.1) {
            *best = (d, idx);
        }
        if hi - lo == 1 {
            return;
        }
        let axis = depth & 1;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, depth + 1, q, best);
        // `<=` keeps equal-distance candidates reachable for the tie rule.
        if diff * diff <= best.0 {
            self.search(far.0, far.1, depth + 1, q, best);
        }
    }
}

fn build(points: &[Point], order: &mut [u32], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth & 1;
    order.sort_unstable_by(|&a, &b| {
        let pa = points[a as usize][axis];
        let pb = points[b as usize][axis];
        pa.total_cmp(&pb).then(a.cmp(&b))
    });
    let mid = order.len() / 2;
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}
