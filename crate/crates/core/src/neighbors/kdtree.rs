use crate::scene::Point3;
use crate::{Error, Result};

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    point: u32,
    axis: u8,
    left: u32,
    right: u32,
}

/// Balanced 3-D k-d tree over an immutable point set.
///
/// `nearest` returns exactly the point a linear scan would pick: the minimum
/// squared Euclidean distance, ties broken by the lowest index.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    nodes: Vec<Node>,
    root: u32,
}

#[inline]
fn coord(p: &Point3, axis: u8) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

impl KdTree {
    pub fn build(points: &[Point3]) -> Self {
        assert!(
            points.len() < NONE as usize,
            "k-d tree supports < 2^32 points"
        );
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: NONE,
        };
        let mut idx: Vec<u32> = (0..points.len() as u32).collect();
        tree.root = tree.build_rec(&mut idx);
        tree
    }

    fn build_rec(&mut self, idx: &mut [u32]) -> u32 {
        if idx.is_empty() {
            return NONE;
        }
        let axis = self.widest_axis(idx);
        let mid = idx.len() / 2;
        let pts = &self.points;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            coord(&pts[a as usize], axis)
                .total_cmp(&coord(&pts[b as usize], axis))
                .then(a.cmp(&b))
        });
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            point: idx[mid],
            axis,
            left: NONE,
            right: NONE,
        });
        let (lo, rest) = idx.split_at_mut(mid);
        let left = self.build_rec(lo);
        let right = self.build_rec(&mut rest[1..]);
        let node = &mut self.nodes[id as usize];
        node.left = left;
        node.right = right;
        id
    }

    fn widest_axis(&self, idx: &[u32]) -> u8 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in idx {
            let p = self.points[i as usize].to_array();
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let spread = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        if spread[0] >= spread[1] && spread[0] >= spread[2] {
            0
        } else if spread[1] >= spread[2] {
            1
        } else {
            2
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Index of the nearest stored point and its squared distance.
    pub fn nearest_squared(&self, q: Point3) -> Result<(usize, f64)> {
        if self.root == NONE {
            return Err(Error::Empty("k-d tree"));
        }
        if !q.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "non-finite query point {q:?}"
            )));
        }
        let mut best = (f64::INFINITY, NONE);
        self.search(self.root, q, &mut best);
        Ok((best.1 as usize, best.0))
    }

    /// Index of the nearest stored point and its Euclidean distance.
    pub fn nearest(&self, q: Point3) -> Result<(usize, f64)> {
        self.nearest_squared(q).map(|(i, d2)| (i, d2.sqrt()))
    }

    fn search(&self, node: u32, q: Point3, best: &mut (f64, u32)) {
        let n = self.nodes[node as usize];
        let p = self.points[n.point as usize];
        let d2 = q.distance_squared(p);
        if d2 < best.0 || (d2 == best.0 && n.point < best.1) {
            *best = (d2, n.point);
        }
        let diff = coord(&q, n.axis) - coord(&p, n.axis);
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if near != NONE {
            self.search(near, q, best);
        }
        if far != NONE && diff * diff <= best.0 {
            self.search(far, q, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_scan(points: &[Point3], q: Point3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d2 = (q.x - p.x).powi(2) + (q.y - p.y).powi(2) + (q.z - p.z).powi(2);
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    fn random_points(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect()
    }

    #[test]
    fn singleton_and_exact_hit() {
        let t = KdTree::build(&[Point3::new(1.0, 2.0, 2.0)]);
        assert_eq!(t.nearest(Point3::ZERO).unwrap(), (0, 3.0));
        assert_eq!(t.nearest(Point3::new(1.0, 2.0, 2.0)).unwrap(), (0, 0.0));
    }

    #[test]
    fn empty_tree_errors() {
        assert!(KdTree::build(&[]).nearest(Point3::ZERO).is_err());
    }

    #[test]
    fn matches_linear_scan_on_random_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts = random_points(&mut rng, 500, 10.0);
        let tree = KdTree::build(&pts);
        for q in random_points(&mut rng, 100, 12.0) {
            let (i, d2) = tree.nearest_squared(q).unwrap();
            assert_eq!((i, d2), linear_scan(&pts, q));
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        // Duplicates and a lattice make many exact ties.
        let mut pts = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                pts.push(Point3::new(x as f64, y as f64, 0.0));
            }
        }
        pts.extend(pts.clone());
        let tree = KdTree::build(&pts);
        for x in 0..7 {
            for y in 0..7 {
                let q = Point3::new(x as f64 * 0.5, y as f64 * 0.5, 0.0);
                assert_eq!(tree.nearest_squared(q).unwrap(), linear_scan(&pts, q));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn agrees_with_linear_scan(
            pts in prop::collection::vec((-5i32..5, -5i32..5, -3i32..3), 1..60),
            q in (-60i32..60, -60i32..60, -30i32..30),
        ) {
            // Coarse integer grid (quarter-meter) to provoke ties.
            let pts: Vec<Point3> = pts
                .into_iter()
                .map(|(x, y, z)| Point3::new(x as f64 * 0.25, y as f64 * 0.25, z as f64 * 0.25))
                .collect();
            let q = Point3::new(q.0 as f64 * 0.05, q.1 as f64 * 0.05, q.2 as f64 * 0.05);
            let tree = KdTree::build(&pts);
            prop_assert_eq!(tree.nearest_squared(q).unwrap(), linear_scan(&pts, q));
        }
    }
}
