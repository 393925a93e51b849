//! Gaussian kernel density estimation over event coordinates.
//!
//! The kernel is isotropic in kilometer space with distances taken along
//! great circles, matching the graph's distance convention. Bandwidth is
//! chosen by k-fold cross-validated held-out log-likelihood.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, GeoPoint};
use crate::graph::CellTable;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KdeModel {
    pub sample_points: Vec<GeoPoint>,
    pub bandwidth_km: f64,
    pub bandwidth_grid: Vec<f64>,
    pub cv_folds: usize,
}

/// Mean Gaussian kernel over the samples, evaluated at `p`; units 1/km^2.
pub fn density_at(samples: &[GeoPoint], bandwidth_km: f64, p: GeoPoint) -> f64 {
    let h2 = bandwidth_km * bandwidth_km;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * h2);
    let sum: f64 = samples
        .iter()
        .map(|s| {
            let d = haversine_km(p, *s);
            norm * (-d * d / (2.0 * h2)).exp()
        })
        .sum();
    sum / samples.len() as f64
}

/// Mean held-out log-likelihood of each candidate bandwidth under k-fold
/// cross-validation. Exposed for the selection oracle in tests.
pub fn cv_log_likelihoods(
    points: &[GeoPoint],
    bandwidth_grid: &[f64],
    cv_folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if bandwidth_grid.is_empty() {
        return Err(Error::Domain("bandwidth grid must not be empty".into()));
    }
    if bandwidth_grid.iter().any(|&h| h <= 0.0) {
        return Err(Error::Domain("bandwidths must be positive".into()));
    }
    if cv_folds < 2 {
        return Err(Error::Domain(
            "cross validation needs at least 2 folds".into(),
        ));
    }
    if points.len() < cv_folds {
        return Err(Error::Domain(format!(
            "need at least {cv_folds} points for {cv_folds}-fold cross validation"
        )));
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n = points.len();
    let mut totals = vec![0.0f64; bandwidth_grid.len()];
    let fold_of = |pos: usize| pos * cv_folds / n; // contiguous chunks of the shuffle

    for fold in 0..cv_folds {
        let train: Vec<GeoPoint> = order
            .iter()
            .enumerate()
            .filter(|(pos, _)| fold_of(*pos) != fold)
            .map(|(_, &i)| points[i])
            .collect();
        let held: Vec<GeoPoint> = order
            .iter()
            .enumerate()
            .filter(|(pos, _)| fold_of(*pos) == fold)
            .map(|(_, &i)| points[i])
            .collect();
        if train.is_empty() || held.is_empty() {
            continue;
        }
        let mut d2 = vec![0.0f64; train.len()];
        for p in &held {
            for (buf, t) in d2.iter_mut().zip(&train) {
                let d = haversine_km(*p, *t);
                *buf = d * d;
            }
            for (k, &h) in bandwidth_grid.iter().enumerate() {
                let h2 = h * h;
                let norm = 1.0 / (2.0 * std::f64::consts::PI * h2);
                let dens: f64 = d2
                    .iter()
                    .map(|&dd| norm * (-dd / (2.0 * h2)).exp())
                    .sum::<f64>()
                    / train.len() as f64;
                totals[k] += dens.ln();
            }
        }
    }
    Ok(totals.into_iter().map(|t| t / n as f64).collect())
}

/// Select the bandwidth maximizing mean held-out log-likelihood; ties go to
/// the smaller bandwidth.
pub fn kde_fit(
    points: &[GeoPoint],
    bandwidth_grid: &[f64],
    cv_folds: usize,
    seed: u64,
) -> Result<KdeModel> {
    let scores = cv_log_likelihoods(points, bandwidth_grid, cv_folds, seed)?;
    let mut candidates: Vec<(f64, f64)> = bandwidth_grid.iter().cloned().zip(scores).collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = candidates[0];
    for &(h, score) in &candidates[1..] {
        if score > best.1 {
            best = (h, score);
        }
    }
    Ok(KdeModel {
        sample_points: points.to_vec(),
        bandwidth_km: best.0,
        bandwidth_grid: bandwidth_grid.to_vec(),
        cv_folds,
    })
}

/// Density at every occupied cell centroid.
pub fn kde_density(model: &KdeModel, cells: &CellTable) -> Vec<f64> {
    cells
        .cells
        .iter()
        .map(|c| density_at(&model.sample_points, model.bandwidth_km, c.centroid))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HotspotComparison {
    pub predicted: Vec<bool>,
    pub truth: Vec<bool>,
    pub accuracy: f64,
}

/// Rank-based top-q hotspot masks: predicted from density, truth from
/// actual counts, both selecting exactly ceil(q*n) cells with ties broken
/// by cell position. Accuracy is the fraction of cells where they agree.
pub fn kde_hotspot_classify(
    density: &[f64],
    actual_counts: &[u32],
    q: f64,
) -> Result<HotspotComparison> {
    if density.len() != actual_counts.len() {
        return Err(Error::Domain("density and count vectors must align".into()));
    }
    if !(0.0..1.0).contains(&q) || q == 0.0 {
        return Err(Error::Domain(format!(
            "hotspot quantile must be in (0, 1), got {q}"
        )));
    }
    let n = density.len();
    let k = (q * n as f64).ceil() as usize;

    let top_mask = |key: &dyn Fn(usize) -> f64| -> Vec<bool> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
        let mut mask = vec![false; n];
        for &i in idx.iter().take(k) {
            mask[i] = true;
        }
        mask
    };
    let predicted = top_mask(&|i| density[i]);
    let truth = top_mask(&|i| actual_counts[i] as f64);
    let agree = predicted.iter().zip(&truth).filter(|(a, b)| a == b).count();
    Ok(HotspotComparison {
        predicted,
        truth,
        accuracy: agree as f64 / n as f64,
    })
}

/// Seeded uniform subsample without replacement; identity when under the cap.
pub fn subsample_points(points: &[GeoPoint], cap: usize, seed: u64) -> Vec<GeoPoint> {
    if points.len() <= cap {
        return points.to_vec();
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = order.into_iter().take(cap).collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| points[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cluster(center: GeoPoint, spread_deg: f64, n: usize, seed: u64) -> Vec<GeoPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| GeoPoint {
                lat: center.lat + rng.gen_range(-spread_deg..spread_deg),
                lon: center.lon + rng.gen_range(-spread_deg..spread_deg),
            })
            .collect()
    }

    #[test]
    fn kernel_peak_value_at_sample_point() {
        let p = GeoPoint {
            lat: 41.8,
            lon: -87.6,
        };
        let h = 1.5;
        let peak = density_at(&[p], h, p);
        let expected = 1.0 / (2.0 * std::f64::consts::PI * h * h);
        assert!((peak - expected).abs() < 1e-15);
    }

    #[test]
    fn density_far_from_mass_is_negligible() {
        let p = GeoPoint {
            lat: 41.8,
            lon: -87.6,
        };
        let h = 1.0;
        let far = GeoPoint {
            lat: 41.8 + 0.1,
            lon: -87.6,
        }; // ~11 km > 5h
        let peak = 1.0 / (2.0 * std::f64::consts::PI * h * h);
        assert!(density_at(&[p], h, far) < 1e-6 * peak);
    }

    #[test]
    fn duplicating_every_point_leaves_density_unchanged() {
        let points = cluster(
            GeoPoint {
                lat: 41.8,
                lon: -87.6,
            },
            0.02,
            40,
            1,
        );
        let mut doubled = points.clone();
        doubled.extend_from_slice(&points);
        let q = GeoPoint {
            lat: 41.81,
            lon: -87.61,
        };
        let a = density_at(&points, 1.0, q);
        let b = density_at(&doubled, 1.0, q);
        assert!((a - b).abs() / a < 1e-12);
    }

    #[test]
    fn single_candidate_is_always_selected() {
        let points = cluster(
            GeoPoint {
                lat: 41.8,
                lon: -87.6,
            },
            0.02,
            20,
            2,
        );
        let model = kde_fit(&points, &[0.7], 4, 3).unwrap();
        assert_eq!(model.bandwidth_km, 0.7);
    }

    #[test]
    fn fit_is_seed_deterministic() {
        let points = cluster(
            GeoPoint {
                lat: 41.8,
                lon: -87.6,
            },
            0.05,
            60,
            4,
        );
        let grid = [0.2, 0.5, 1.0, 2.0];
        let a = kde_fit(&points, &grid, 5, 9).unwrap();
        let b = kde_fit(&points, &grid, 5, 9).unwrap();
        assert_eq!(a.bandwidth_km, b.bandwidth_km);
        let scores_a = cv_log_likelihoods(&points, &grid, 5, 9).unwrap();
        let scores_b = cv_log_likelihoods(&points, &grid, 5, 9).unwrap();
        assert_eq!(scores_a, scores_b);
    }

    #[test]
    fn selection_matches_exhaustive_oracle_and_avoids_degenerate_bandwidth() {
        // 20-point cluster a few hundred meters wide: a 10 cm bandwidth
        // underflows to zero held-out density (-inf log-likelihood), while
        // an over-wide bandwidth scores worse than a matched one.
        let points = cluster(
            GeoPoint {
                lat: 41.8,
                lon: -87.6,
            },
            0.002,
            20,
            5,
        );
        let grid = [0.0001, 0.2, 5.0];
        let folds = 4;
        let seed = 7;

        let scores = cv_log_likelihoods(&points, &grid, folds, seed).unwrap();
        assert_eq!(
            scores[0],
            f64::NEG_INFINITY,
            "10 cm bandwidth should underflow"
        );
        assert!(
            scores[1] > scores[2],
            "matched bandwidth should beat over-smoothed"
        );

        // oracle: recompute selection directly from the scores
        let mut pairs: Vec<(f64, f64)> = grid.iter().cloned().zip(scores.iter().cloned()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let oracle = pairs
            .iter()
            .fold(pairs[0], |best, &p| if p.1 > best.1 { p } else { best })
            .0;

        let model = kde_fit(&points, &grid, folds, seed).unwrap();
        assert_eq!(model.bandwidth_km, oracle);
        assert_eq!(model.bandwidth_km, 0.2);
    }

    #[test]
    fn empty_bandwidth_grid_is_domain_error() {
        let points = cluster(
            GeoPoint {
                lat: 41.8,
                lon: -87.6,
            },
            0.02,
            20,
            6,
        );
        assert!(kde_fit(&points, &[], 4, 1).is_err());
    }

    #[test]
    fn hotspot_perfect_and_reversed_rankings() {
        let counts: Vec<u32> = (0..10).collect();
        let aligned: Vec<f64> = counts.iter().map(|&c| c as f64 * 0.1).collect();
        let r = kde_hotspot_classify(&aligned, &counts, 0.2).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.predicted.iter().filter(|&&b| b).count(), 2);

        let reversed: Vec<f64> = counts.iter().map(|&c| -(c as f64)).collect();
        let r = kde_hotspot_classify(&reversed, &counts, 0.5).unwrap();
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn hotspot_masks_select_exactly_ceil_q_n() {
        let counts: Vec<u32> = vec![5; 13]; // all ties -> break by index
        let density: Vec<f64> = vec![1.0; 13];
        let r = kde_hotspot_classify(&density, &counts, 0.2).unwrap();
        let k = (0.2f64 * 13.0).ceil() as usize;
        assert_eq!(r.predicted.iter().filter(|&&b| b).count(), k);
        assert_eq!(r.truth.iter().filter(|&&b| b).count(), k);
        // deterministic tie-break: the first k indices win
        assert!(r.predicted[..k].iter().all(|&b| b));
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn hotspot_accuracy_matches_direct_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let counts: Vec<u32> = (0..40).map(|_| rng.gen_range(0..100)).collect();
        let density: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
        let r = kde_hotspot_classify(&density, &counts, 0.2).unwrap();
        let agree = r
            .predicted
            .iter()
            .zip(&r.truth)
            .filter(|(a, b)| a == b)
            .count();
        assert_eq!(r.accuracy, agree as f64 / 40.0);
    }

    #[test]
    fn subsample_is_identity_under_cap_and_seeded_above() {
        let points = cluster(
            GeoPoint {
                lat: 41.8,
                lon: -87.6,
            },
            0.05,
            30,
            8,
        );
        assert_eq!(subsample_points(&points, 50, 1), points);
        let a = subsample_points(&points, 10, 2);
        let b = subsample_points(&points, 10, 2);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
    }
}
