//! Spatial indexing and interpolation: exact kNN over a KD-tree, IDW,
//! ordinary kriging with a fitted variogram, and rasterization.
//!
//! Distances are planar euclidean in the raw coordinate plane; the study
//! areas this targets are small enough that degrees-as-planar is an accepted
//! approximation. kNN ties break toward the lower point index so results are
//! reproducible and equal to a brute-force scan.

mod interp;
mod raster;

pub use interp::{
    empirical_variogram, fit_variogram, idw_interpolate, kriging_interpolate, kriging_weights,
    KrigingEstimate, VariogramKind, VariogramModel,
};
pub use raster::{rasterize, write_esri_ascii, GridSpec, InterpMethod, RasterLayer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KdNode {
    /// Index into `points`.
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Immutable planar KD-tree (median split, alternating axes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialIndex {
    points: Vec<[f64; 2]>,
    nodes: Vec<KdNode>,
    root: usize,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Candidate ordering: squared distance first, lower index on ties.
fn closer(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl SpatialIndex {
    /// Build an index over the points. Deterministic for a given input order.
    pub fn build(points: &[[f64; 2]]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("cannot index zero points".into()));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Validation("non-finite coordinate".into()));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_node(points, &mut order[..], 0, &mut nodes);
        Ok(SpatialIndex {
            points: points.to_vec(),
            nodes,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }

    /// Exact k nearest neighbours of `query`, euclidean distance ascending,
    /// ties by lower index. `exclude` removes one point (typically the query
    /// sample itself). Returns `min(k, N - excluded)` results.
    pub fn knn_query(
        &self,
        query: [f64; 2],
        k: usize,
        exclude: Option<usize>,
    ) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.search(self.root, query, k, exclude, &mut best);
        best.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    fn search(
        &self,
        node_idx: usize,
        query: [f64; 2],
        k: usize,
        exclude: Option<usize>,
        best: &mut Vec<(f64, usize)>,
    ) {
        let node = &self.nodes[node_idx];
        let pi = node.point;
        if Some(pi) != exclude {
            let cand = (dist2(query, self.points[pi]), pi);
            let pos = best.partition_point(|&b| closer(b, cand));
            if pos < k {
                best.insert(pos, cand);
                if best.len() > k {
                    best.pop();
                }
            }
        }
        let axis = node.axis;
        let diff = query[axis] - self.points[pi][axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.search(n, query, k, exclude, best);
        }
        // Descend the far side when it can still contain an equal-or-closer
        // point; <= keeps tie handling exact.
        let worst = best.last().map(|b| b.0);
        if let Some(f) = far {
            if best.len() < k || diff * diff <= worst.unwrap() {
                self.search(f, query, k, exclude, best);
            }
        }
    }

    /// Mean distance from each point to its nearest other point.
    pub fn average_sampling_distance(&self) -> Result<f64> {
        if self.len() < 2 {
            return Err(Error::Validation(
                "average sampling distance needs at least two points".into(),
            ));
        }
        let dists = crate::par::map_indexed(self.len(), |i| {
            self.knn_query(self.points[i], 1, Some(i))[0].1
        });
        Ok(dists.iter().sum::<f64>() / self.len() as f64)
    }
}

fn build_node(
    points: &[[f64; 2]],
    order: &mut [usize],
    axis: usize,
    nodes: &mut Vec<KdNode>,
) -> usize {
    let mid = order.len() / 2;
    // Median by (coordinate, index): deterministic even with duplicates.
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .partial_cmp(&points[b][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let point = order[mid];
    let next_axis = (axis + 1) % 2;
    let idx = nodes.len();
    nodes.push(KdNode {
        point,
        axis,
        left: None,
        right: None,
    });
    let (lo, rest) = order.split_at_mut(mid);
    let hi = &mut rest[1..];
    if !lo.is_empty() {
        let l = build_node(points, lo, next_axis, nodes);
        nodes[idx].left = Some(l);
    }
    if !hi.is_empty() {
        let r = build_node(points, hi, next_axis, nodes);
        nodes[idx].right = Some(r);
    }
    idx
}

/// Brute-force kNN used as the oracle for the index (and directly by tests).
pub fn brute_force_knn(
    points: &[[f64; 2]],
    query: [f64; 2],
    k: usize,
    exclude: Option<usize>,
) -> Vec<(usize, f64)> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, p)| (dist2(query, *p), i))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_input_is_an_error() {
        assert!(SpatialIndex::build(&[]).is_err());
    }

    #[test]
    fn singleton_index_returns_its_point() {
        let idx = SpatialIndex::build(&[[2.0, 3.0]]).unwrap();
        let r = idx.knn_query([100.0, -4.0], 1, None);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].0, 0);
    }

    #[test]
    fn knn_matches_brute_force_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points: Vec<[f64; 2]> = (0..100)
            .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
            .collect();
        let idx = SpatialIndex::build(&points).unwrap();
        for _ in 0..50 {
            let q = [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)];
            let got = idx.knn_query(q, 5, None);
            let want = brute_force_knn(&points, q, 5, None);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn collinear_points_hand_check() {
        let points = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        let idx = SpatialIndex::build(&points).unwrap();
        let r = idx.knn_query([1.4, 0.0], 2, None);
        assert_eq!(r[0].0, 1);
        assert_eq!(r[1].0, 2);
    }

    #[test]
    fn k_at_least_n_returns_all_sorted() {
        let points = [[0.0, 0.0], [3.0, 0.0], [1.0, 0.0]];
        let idx = SpatialIndex::build(&points).unwrap();
        let r = idx.knn_query([0.0, 0.0], 10, None);
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].0, 0);
        assert_eq!(r[1].0, 2);
        assert_eq!(r[2].0, 1);
    }

    #[test]
    fn exclude_self_returns_nearest_other() {
        let points = [[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]];
        let idx = SpatialIndex::build(&points).unwrap();
        let r = idx.knn_query([0.0, 0.0], 1, Some(0));
        assert_eq!(r[0].0, 1);
    }

    #[test]
    fn equidistant_tie_prefers_lower_index() {
        let points = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]];
        let idx = SpatialIndex::build(&points).unwrap();
        let r = idx.knn_query([0.0, 0.0], 3, None);
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn average_sampling_distance_examples() {
        let pair = SpatialIndex::build(&[[0.0, 0.0], [3.0, 0.0]]).unwrap();
        assert_eq!(pair.average_sampling_distance().unwrap(), 3.0);

        let mut grid = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                grid.push([i as f64, j as f64]);
            }
        }
        let g = SpatialIndex::build(&grid).unwrap();
        assert!((g.average_sampling_distance().unwrap() - 1.0).abs() < 1e-12);

        let single = SpatialIndex::build(&[[0.0, 0.0]]).unwrap();
        assert!(single.average_sampling_distance().is_err());
    }

    #[test]
    fn average_sampling_distance_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let points: Vec<[f64; 2]> = (0..50)
            .map(|_| [rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)])
            .collect();
        let idx = SpatialIndex::build(&points).unwrap();
        let brute: f64 = (0..points.len())
            .map(|i| brute_force_knn(&points, points[i], 1, Some(i))[0].1)
            .sum::<f64>()
            / points.len() as f64;
        assert!((idx.average_sampling_distance().unwrap() - brute).abs() < 1e-12);
    }
}
