//! Static KD-tree over geographic points with radius queries.
//!
//! The tree partitions in degree space (median split, alternating lat/lon
//! axes) but every candidate is confirmed with the exact haversine
//! distance, so pruning only has to be conservative, never tight.

use crate::error::{Error, Result};
use crate::geo::{haversine_km, GeoPoint};

/// Kilometers per degree of latitude at the equator of the WGS84 ellipsoid;
/// a deliberate underestimate of km-per-degree anywhere on the sphere used
/// here, so converting a km radius with it always yields a superset window.
const MIN_KM_PER_DEG: f64 = 110.57;

/// Immutable balanced KD-tree; safe to query from many threads at once.
pub struct KdTree {
    points: Vec<GeoPoint>,
    /// Point ids arranged so each subtree occupies a contiguous range with
    /// its median at the midpoint.
    order: Vec<u32>,
    max_abs_lat: f64,
}

#[inline]
fn axis_value(p: GeoPoint, axis: usize) -> f64 {
    if axis == 0 {
        p.lat
    } else {
        p.lon
    }
}

impl KdTree {
    pub fn build(points: &[GeoPoint]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain(
                "cannot build a KD-tree over zero points".into(),
            ));
        }
        if let Some(p) = points.iter().find(|p| !p.is_valid()) {
            return Err(Error::Domain(format!(
                "non-finite point ({}, {}) in KD-tree input",
                p.lat, p.lon
            )));
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        build_range(points, &mut order, 0);
        let max_abs_lat = points.iter().map(|p| p.lat.abs()).fold(0.0, f64::max);
        Ok(KdTree {
            points: points.to_vec(),
            order,
            max_abs_lat,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Longest root-to-leaf path, counted in nodes.
    pub fn depth(&self) -> usize {
        fn depth_range(len: usize) -> usize {
            if len == 0 {
                0
            } else {
                let mid = len / 2;
                1 + depth_range(mid.max(len - mid - 1))
            }
        }
        depth_range(self.order.len())
    }

    /// Ids of all points within `r_km` of `center` (inclusive), ascending.
    pub fn radius_query(&self, center: GeoPoint, r_km: f64) -> Vec<u32> {
        debug_assert!(r_km > 0.0, "radius must be positive");
        if r_km <= 0.0 {
            return Vec::new();
        }
        // Conservative degree windows: latitude converts directly; the
        // longitude window widens by the worst-case cos(lat) over the data
        // and the query center.
        let window_lat = r_km / MIN_KM_PER_DEG;
        let max_abs_lat = self.max_abs_lat.max(center.lat.abs()).min(89.9);
        let window_lon = r_km / (MIN_KM_PER_DEG * max_abs_lat.to_radians().cos());

        let mut hits = Vec::new();
        self.query_range(
            0,
            self.order.len(),
            0,
            center,
            r_km,
            [window_lat, window_lon],
            &mut hits,
        );
        hits.sort_unstable();
        hits
    }

    fn query_range(
        &self,
        lo: usize,
        hi: usize,
        depth: usize,
        center: GeoPoint,
        r_km: f64,
        window: [f64; 2],
        hits: &mut Vec<u32>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let id = self.order[mid];
        let p = self.points[id as usize];
        if haversine_km(center, p) <= r_km {
            hits.push(id);
        }
        let axis = depth % 2;
        let split = axis_value(p, axis);
        let c = axis_value(center, axis);
        if c - window[axis] <= split {
            self.query_range(lo, mid, depth + 1, center, r_km, window, hits);
        }
        if c + window[axis] >= split {
            self.query_range(mid + 1, hi, depth + 1, center, r_km, window, hits);
        }
    }
}

/// Arrange `order[..]` so the median (by the depth's axis, ties broken by
/// point id so equal coordinates still build deterministically) sits at the
/// midpoint and each half recursively does the same.
fn build_range(points: &[GeoPoint], order: &mut [u32], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 2;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        axis_value(points[a as usize], axis)
            .total_cmp(&axis_value(points[b as usize], axis))
            .then(a.cmp(&b))
    });
    let (left, rest) = order.split_at_mut(mid);
    build_range(points, left, depth + 1);
    build_range(points, &mut rest[1..], depth + 1);
}

#[cfg(test)]
pub(crate) fn brute_force_radius(points: &[GeoPoint], center: GeoPoint, r_km: f64) -> Vec<u32> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| haversine_km(center, **p) <= r_km)
        .map(|(i, _)| i as u32)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> Vec<GeoPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| GeoPoint {
                lat: rng.gen_range(41.4..42.3),
                lon: rng.gen_range(-88.1..-87.3),
            })
            .collect()
    }

    #[test]
    fn empty_input_is_domain_error() {
        assert!(KdTree::build(&[]).is_err());
    }

    #[test]
    fn single_point_tree() {
        let p = GeoPoint {
            lat: 41.85,
            lon: -87.65,
        };
        let tree = KdTree::build(&[p]).unwrap();
        assert_eq!(tree.radius_query(p, 3.0), vec![0]);
        let far = GeoPoint {
            lat: 41.0,
            lon: -87.65,
        };
        assert!(tree.radius_query(far, 3.0).is_empty());
    }

    #[test]
    fn balanced_depth_bound_for_500_points() {
        let points = random_cloud(500, 1);
        let tree = KdTree::build(&points).unwrap();
        // ceil(log2(500)) + 1 = 10
        assert!(
            tree.depth() <= 10,
            "depth {} exceeds balance bound",
            tree.depth()
        );
    }

    #[test]
    fn query_far_from_everything_is_empty() {
        let tree = KdTree::build(&random_cloud(100, 2)).unwrap();
        assert!(tree
            .radius_query(
                GeoPoint {
                    lat: 10.0,
                    lon: 10.0
                },
                3.0
            )
            .is_empty());
    }

    #[test]
    fn stored_point_always_found_at_zero_distance() {
        let points = random_cloud(50, 3);
        let tree = KdTree::build(&points).unwrap();
        for (i, p) in points.iter().enumerate() {
            assert!(tree.radius_query(*p, 0.001).contains(&(i as u32)));
        }
    }

    #[test]
    fn split_invariant_holds_recursively() {
        let points = random_cloud(257, 4);
        let tree = KdTree::build(&points).unwrap();

        fn check(points: &[GeoPoint], order: &[u32], depth: usize) {
            if order.len() <= 1 {
                return;
            }
            let axis = depth % 2;
            let mid = order.len() / 2;
            let split = axis_value(points[order[mid] as usize], axis);
            for &id in &order[..mid] {
                assert!(axis_value(points[id as usize], axis) <= split);
            }
            for &id in &order[mid + 1..] {
                assert!(axis_value(points[id as usize], axis) >= split);
            }
            check(points, &order[..mid], depth + 1);
            check(points, &order[mid + 1..], depth + 1);
        }
        check(&tree.points, &tree.order, 0);
    }

    #[test]
    fn oracle_equivalence_on_random_cloud() {
        let points = random_cloud(300, 5);
        let tree = KdTree::build(&points).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let center = GeoPoint {
                lat: rng.gen_range(41.4..42.3),
                lon: rng.gen_range(-88.1..-87.3),
            };
            let r = rng.gen_range(0.2..6.0);
            assert_eq!(
                tree.radius_query(center, r),
                brute_force_radius(&points, center, r)
            );
        }
    }

    #[test]
    fn monotone_in_radius() {
        let points = random_cloud(200, 7);
        let tree = KdTree::build(&points).unwrap();
        let center = GeoPoint {
            lat: 41.85,
            lon: -87.65,
        };
        let small = tree.radius_query(center, 2.0);
        let large = tree.radius_query(center, 5.0);
        assert!(small.iter().all(|id| large.contains(id)));
    }

    #[test]
    fn results_independent_of_insertion_order() {
        let mut points = random_cloud(120, 8);
        let tree_a = KdTree::build(&points).unwrap();
        let center = GeoPoint {
            lat: 41.9,
            lon: -87.7,
        };
        let mut expected: Vec<GeoPoint> = tree_a
            .radius_query(center, 4.0)
            .iter()
            .map(|&i| points[i as usize])
            .collect();

        points.reverse();
        let tree_b = KdTree::build(&points).unwrap();
        let mut got: Vec<GeoPoint> = tree_b
            .radius_query(center, 4.0)
            .iter()
            .map(|&i| points[i as usize])
            .collect();

        let key = |p: &GeoPoint| (p.lat.to_bits(), p.lon.to_bits());
        expected.sort_by_key(key);
        got.sort_by_key(key);
        assert_eq!(expected, got);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn radius_query_matches_brute_force(
                seed in 0u64..1000,
                n in 1usize..120,
                r in 0.1..8.0f64,
                qlat in 41.4..42.3f64,
                qlon in -88.1..-87.3f64,
            ) {
                let points = super::random_cloud(n, seed);
                let tree = KdTree::build(&points).unwrap();
                let center = GeoPoint { lat: qlat, lon: qlon };
                prop_assert_eq!(tree.radius_query(center, r), brute_force_radius(&points, center, r));
            }
        }
    }
}
