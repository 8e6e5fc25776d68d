use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Balanced 3-D KD-tree over a point set, stored implicitly: the node for a
/// range `lo..hi` is its median slot, split on the axis of largest spread.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    ids: Vec<usize>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn build(points: &[[f64; 3]]) -> Result<KdTree> {
        if points.is_empty() {
            return Err(Error::Argument("KD-tree over an empty point set".into()));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        Self::split(points, &mut order, &mut axes, 0);
        Ok(KdTree { points: order.iter().map(|&i| points[i]).collect(), ids: order, axes })
    }

    fn split(points: &[[f64; 3]], order: &mut [usize], axes: &mut [u8], offset: usize) {
        let n = order.len();
        if n <= LEAF_SIZE {
            return;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in order.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(points[i][a]);
                hi[a] = hi[a].max(points[i][a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
        let mid = n / 2;
        order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        axes[offset + mid] = axis as u8;
        let (left, rest) = order.split_at_mut(mid);
        Self::split(points, left, axes, offset);
        Self::split(points, &mut rest[1..], axes, offset + mid + 1);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Exact Euclidean nearest neighbour as (input index, distance).
    /// Equidistant points resolve to the lowest input index.
    pub fn nearest(&self, query: [f64; 3]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, self.points.len(), &query, &mut best);
        (best.0, best.1.sqrt())
    }

    fn consider(&self, slot: usize, q: &[f64; 3], best: &mut (usize, f64)) {
        let d = dist2(&self.points[slot], q);
        let id = self.ids[slot];
        if d < best.1 || (d == best.1 && id < best.0) {
            *best = (id, d);
        }
    }

    fn search(&self, lo: usize, hi: usize, q: &[f64; 3], best: &mut (usize, f64)) {
        let n = hi - lo;
        if n == 0 {
            return;
        }
        if n <= LEAF_SIZE {
            for slot in lo..hi {
                self.consider(slot, q, best);
            }
            return;
        }
        let mid = lo + n / 2;
        let axis = self.axes[mid] as usize;
        self.consider(mid, q, best);
        let diff = q[axis] - self.points[mid][axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, q, best);
        if diff * diff <= best.1 {
            self.search(far.0, far.1, q, best);
        }
    }
}

/// Convenience wrapper: builds a tree and answers one query.
pub fn kd_nearest(points: &[[f64; 3]], query: [f64; 3]) -> Result<(usize, f64)> {
    Ok(KdTree::build(points)?.nearest(query))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_scan(points: &[[f64; 3]], q: [f64; 3]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]);
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts: Vec<[f64; 3]> = (0..1000).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let tree = KdTree::build(&pts).unwrap();
        for _ in 0..1000 {
            let q = [rng.random::<f64>() * 1.2 - 0.1, rng.random(), rng.random()];
            assert_eq!(tree.nearest(q), linear_scan(&pts, q));
        }
    }

    #[test]
    fn exact_hit_and_ties() {
        let pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 5.0, 0.0]];
        assert_eq!(kd_nearest(&pts, [0.0, 5.0, 0.0]).unwrap(), (2, 0.0));
        assert_eq!(kd_nearest(&pts, [0.0, 0.0, 0.0]).unwrap(), (0, 1.0));
        let rev = vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(kd_nearest(&rev, [0.0, 0.0, 0.0]).unwrap().0, 0);
        assert!(kd_nearest(&[], [0.0; 3]).is_err());
    }

    #[test]
    fn ties_on_a_lattice_pick_lowest_index() {
        // many duplicates and equidistant points exercise the pruning rule
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..6 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let mut doubled = pts.clone();
        doubled.extend(pts.iter().rev());
        let tree = KdTree::build(&doubled).unwrap();
        for x in 0..11 {
            for y in 0..11 {
                let q = [x as f64 * 0.5, y as f64 * 0.5, 2.5];
                let (i, d) = tree.nearest(q);
                let (j, e) = {
                    // lowest index among exact minima
                    let m = doubled.iter().map(|p| dist2(p, &q)).fold(f64::INFINITY, f64::min);
                    let j = doubled.iter().position(|p| dist2(p, &q) == m).unwrap();
                    (j, m.sqrt())
                };
                assert_eq!((i, d), (j, e));
            }
        }
    }
}
