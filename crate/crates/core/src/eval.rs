//! Evaluation protocol: deposit-to-sample score assignment, repeated
//! background sampling, ranking metrics (AUC / AP / PR-AUC), and the
//! distance-to-deposits statistic.
//!
//! Detectors never see deposit locations; deposits enter only here, after
//! scoring, so evaluation cannot leak into training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::DepositSite;
use crate::spatial::SpatialIndex;

/// Protocol parameters. Radii are multiples of the survey's average sampling
/// distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub n_runs: usize,
    /// Background samples drawn per matched positive.
    pub bg_per_pos: usize,
    /// A deposit matches its nearest sample only within this radius.
    pub deposit_match_radius: f64,
    /// Samples closer than this to any deposit are excluded from the
    /// background pool.
    pub exclusion_radius: f64,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            n_runs: 20,
            bg_per_pos: 10,
            deposit_match_radius: 5.0,
            exclusion_radius: 1.0,
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::Config("protocol needs n_runs >= 1".into()));
        }
        if self.bg_per_pos == 0 {
            return Err(Error::Config("protocol needs bg_per_pos >= 1".into()));
        }
        if self.deposit_match_radius <= 0.0 || self.exclusion_radius <= 0.0 {
            return Err(Error::Config("protocol radii must be positive".into()));
        }
        Ok(())
    }
}

/// Positive-score assignment: per matched deposit, the score of its nearest
/// sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveAssignment {
    pub scores: Vec<f64>,
    /// Sample index matched to each retained deposit.
    pub matched_samples: Vec<usize>,
    /// Deposit indices dropped because no sample was within range.
    pub dropped: Vec<usize>,
}

/// Match each deposit to its nearest sample within
/// `deposit_match_radius x average sampling distance`; out-of-range deposits
/// are dropped and reported.
pub fn assign_positive_scores(
    scores: &[f64],
    index: &SpatialIndex,
    deposits: &[DepositSite],
    protocol: &EvalProtocol,
) -> Result<PositiveAssignment> {
    protocol.validate()?;
    if scores.len() != index.len() {
        return Err(Error::Dimension("scores misaligned with index".into()));
    }
    if deposits.is_empty() {
        return Err(Error::Eval("no deposits to evaluate against".into()));
    }
    let avg = index.average_sampling_distance()?;
    let radius = protocol.deposit_match_radius * avg;
    let mut pos = Vec::new();
    let mut matched = Vec::new();
    let mut dropped = Vec::new();
    for (d_idx, d) in deposits.iter().enumerate() {
        let nearest = index.knn_query(d.position, 1, None);
        let (sample, dist) = nearest[0];
        if dist <= radius {
            pos.push(scores[sample]);
            matched.push(sample);
        } else {
            dropped.push(d_idx);
        }
    }
    if pos.is_empty() {
        return Err(Error::Eval(format!(
            "no deposit matched a sample within {radius}"
        )));
    }
    Ok(PositiveAssignment {
        scores: pos,
        matched_samples: matched,
        dropped,
    })
}

/// One background draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundDraw {
    pub indices: Vec<usize>,
    /// Set when the eligible pool was smaller than the requested count and
    /// the whole pool was returned.
    pub pool_exhausted: bool,
}

/// Uniformly draw `bg_per_pos x n_positives` background sample indices
/// without replacement, excluding samples within
/// `exclusion_radius x average sampling distance` of any deposit.
/// Deterministic per `run_seed`.
pub fn sample_background(
    index: &SpatialIndex,
    deposits: &[DepositSite],
    n_positives: usize,
    protocol: &EvalProtocol,
    run_seed: u64,
) -> Result<BackgroundDraw> {
    protocol.validate()?;
    let avg = index.average_sampling_distance()?;
    let excl = protocol.exclusion_radius * avg;
    let eligible: Vec<usize> = (0..index.len())
        .filter(|&i| {
            let p = index.point(i);
            deposits.iter().all(|d| {
                let dx = p[0] - d.position[0];
                let dy = p[1] - d.position[1];
                (dx * dx + dy * dy).sqrt() > excl
            })
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::Eval("background pool is empty".into()));
    }
    let want = protocol.bg_per_pos * n_positives;
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    if eligible.len() <= want {
        return Ok(BackgroundDraw {
            indices: eligible,
            pool_exhausted: true,
        });
    }
    // Partial Fisher-Yates over the eligible pool.
    let mut pool = eligible;
    for i in 0..want {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(want);
    Ok(BackgroundDraw {
        indices: pool,
        pool_exhausted: false,
    })
}

/// ROC AUC via the Mann-Whitney pair statistic: ties count one half.
pub fn roc_auc(pos_scores: &[f64], bg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() || bg_scores.is_empty() {
        return Err(Error::Eval("roc_auc needs nonempty score lists".into()));
    }
    let mut bg = bg_scores.to_vec();
    bg.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut favorable = 0.0;
    for &p in pos_scores {
        // Counts via binary search: strictly below p, and ties at p.
        let below = bg.partition_point(|&b| b < p);
        let not_above = bg.partition_point(|&b| b <= p);
        favorable += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(favorable / (pos_scores.len() as f64 * bg_scores.len() as f64))
}

/// Precision/recall curve points over distinct score thresholds, descending.
/// All items tied at a threshold enter together, which is the pessimistic
/// convention for positives tied with backgrounds.
fn pr_curve(pos_scores: &[f64], bg_scores: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(bg_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let n_pos = pos_scores.len() as f64;
    let mut points = Vec::new();
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut i = 0;
    while i < all.len() {
        let threshold = all[i].0;
        while i < all.len() && all[i].0 == threshold {
            if all[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push((tp / n_pos, tp / (tp + fp)));
    }
    points
}

/// Average precision with step interpolation over distinct thresholds:
/// AP = sum (R_k - R_{k-1}) * P_k.
pub fn average_precision(pos_scores: &[f64], bg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() || bg_scores.is_empty() {
        return Err(Error::Eval(
            "average_precision needs nonempty score lists".into(),
        ));
    }
    let curve = pr_curve(pos_scores, bg_scores);
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in curve {
        ap += (r - prev_r) * p;
        prev_r = r;
    }
    Ok(ap)
}

/// PR-AUC by trapezoidal integration of the same curve, extended flat to
/// recall 0.
pub fn pr_auc(pos_scores: &[f64], bg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() || bg_scores.is_empty() {
        return Err(Error::Eval("pr_auc needs nonempty score lists".into()));
    }
    let curve = pr_curve(pos_scores, bg_scores);
    let mut auc = 0.0;
    let (mut prev_r, mut prev_p) = (0.0, curve[0].1);
    for (r, p) in curve {
        auc += (r - prev_r) * 0.5 * (p + prev_p);
        prev_r = r;
        prev_p = p;
    }
    Ok(auc)
}

/// Mean distance from the top-q fraction of samples (by score) to their
/// nearest deposit; lower is better.
pub fn distance_to_deposits(
    scores: &[f64],
    index: &SpatialIndex,
    deposits: &[DepositSite],
    top_fraction: f64,
) -> Result<f64> {
    if deposits.is_empty() {
        return Err(Error::Eval("distance_to_deposits needs deposits".into()));
    }
    if !(0.0 < top_fraction && top_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "top fraction {top_fraction} not in (0, 1]"
        )));
    }
    if scores.len() != index.len() {
        return Err(Error::Dimension("scores misaligned with index".into()));
    }
    let n = scores.len();
    let take = ((top_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    // Descending score, ties to the lower index.
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut total = 0.0;
    for &i in order.iter().take(take) {
        let p = index.point(i);
        let nearest = deposits
            .iter()
            .map(|d| {
                let dx = p[0] - d.position[0];
                let dy = p[1] - d.position[1];
                (dx * dx + dy * dy).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        total += nearest;
    }
    Ok(total / take as f64)
}

/// Per-run metric values plus aggregates for one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detector: String,
    pub config_hash: String,
    pub protocol: EvalProtocol,
    pub auc_runs: Vec<f64>,
    pub ap_runs: Vec<f64>,
    pub pr_auc_runs: Vec<f64>,
    pub auc_mean: f64,
    /// Population variance over runs.
    pub auc_variance: f64,
    pub ap_mean: f64,
    pub ap_variance: f64,
    pub pr_auc_mean: f64,
    pub pr_auc_variance: f64,
    pub dtd: f64,
    pub dtd_top_fraction: f64,
    pub matched_deposits: usize,
    pub dropped_deposits: usize,
    /// True when any run exhausted the background pool.
    pub pool_exhausted: bool,
}

impl EvalReport {
    /// Header for the flat per-(dataset, detector) CSV rows.
    pub const CSV_HEADER: &'static str = "dataset,detector,config_hash,n_runs,auc_mean,auc_variance,ap_mean,ap_variance,pr_auc_mean,pr_auc_variance,dtd,matched_deposits,dropped_deposits";

    /// One flat CSV row for table assembly across datasets and detectors.
    pub fn csv_row(&self, dataset: &str) -> String {
        format!(
            "{dataset},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.detector,
            self.config_hash,
            self.auc_runs.len(),
            self.auc_mean,
            self.auc_variance,
            self.ap_mean,
            self.ap_variance,
            self.pr_auc_mean,
            self.pr_auc_variance,
            self.dtd,
            self.matched_deposits,
            self.dropped_deposits,
        )
    }
}

fn mean_and_population_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Default fraction of top-scored samples entering the DTD statistic.
pub const DTD_TOP_FRACTION: f64 = 0.05;

/// Run the full protocol: positives fixed once, background resampled per
/// run with seed `protocol.seed + r`, metrics aggregated as mean and
/// population variance. DTD is computed once (it has no background
/// dependence).
pub fn run_protocol(
    detector: &str,
    config_hash: &str,
    scores: &[f64],
    index: &SpatialIndex,
    deposits: &[DepositSite],
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    protocol.validate()?;
    let assignment = assign_positive_scores(scores, index, deposits, protocol)?;
    let n_pos = assignment.scores.len();

    let mut auc_runs = Vec::with_capacity(protocol.n_runs);
    let mut ap_runs = Vec::with_capacity(protocol.n_runs);
    let mut pr_runs = Vec::with_capacity(protocol.n_runs);
    let mut pool_exhausted = false;
    for r in 1..=protocol.n_runs {
        let run_seed = protocol.seed.wrapping_add(r as u64);
        let draw = sample_background(index, deposits, n_pos, protocol, run_seed)?;
        pool_exhausted |= draw.pool_exhausted;
        let bg: Vec<f64> = draw.indices.iter().map(|&i| scores[i]).collect();
        auc_runs.push(roc_auc(&assignment.scores, &bg)?);
        ap_runs.push(average_precision(&assignment.scores, &bg)?);
        pr_runs.push(pr_auc(&assignment.scores, &bg)?);
    }
    let (auc_mean, auc_variance) = mean_and_population_variance(&auc_runs);
    let (ap_mean, ap_variance) = mean_and_population_variance(&ap_runs);
    let (pr_mean, pr_variance) = mean_and_population_variance(&pr_runs);
    let dtd = distance_to_deposits(scores, index, deposits, DTD_TOP_FRACTION)?;

    Ok(EvalReport {
        detector: detector.to_string(),
        config_hash: config_hash.to_string(),
        protocol: *protocol,
        auc_runs,
        ap_runs,
        pr_auc_runs: pr_runs,
        auc_mean,
        auc_variance,
        ap_mean,
        ap_variance,
        pr_auc_mean: pr_mean,
        pr_auc_variance: pr_variance,
        dtd,
        dtd_top_fraction: DTD_TOP_FRACTION,
        matched_deposits: n_pos,
        dropped_deposits: assignment.dropped.len(),
        pool_exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deposit(x: f64, y: f64) -> DepositSite {
        DepositSite {
            site_id: format!("D{x}-{y}"),
            project_id: "T".into(),
            position: [x, y],
        }
    }

    fn unit_grid(n: usize) -> SpatialIndex {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push([i as f64, j as f64]);
            }
        }
        SpatialIndex::build(&pts).unwrap()
    }

    #[test]
    fn positive_assignment_coincident_and_dropped() {
        let idx = unit_grid(4);
        let scores: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let deposits = vec![deposit(2.0, 1.0), deposit(100.0, 100.0)];
        let protocol = EvalProtocol::default();
        let a = assign_positive_scores(&scores, &idx, &deposits, &protocol).unwrap();
        // Deposit at sample (2,1) -> row-major index 2*4+1 = 9.
        assert_eq!(a.scores, vec![9.0]);
        assert_eq!(a.dropped, vec![1]);
    }

    #[test]
    fn positive_assignment_matches_brute_force() {
        let pts = [
            [0.1, 0.2],
            [1.4, 0.3],
            [2.2, 2.8],
            [0.5, 2.0],
            [1.9, 1.1],
            [3.3, 0.4],
            [2.6, 1.7],
            [0.8, 3.1],
            [3.0, 3.0],
            [1.0, 1.9],
        ];
        let idx = SpatialIndex::build(&pts).unwrap();
        let scores: Vec<f64> = (0..10).map(|i| (i as f64) * 0.1).collect();
        let deposits = vec![deposit(1.0, 1.0), deposit(3.1, 2.9), deposit(0.0, 3.0)];
        let protocol = EvalProtocol::default();
        let a = assign_positive_scores(&scores, &idx, &deposits, &protocol).unwrap();
        for (k, d) in deposits.iter().enumerate() {
            let best = (0..10)
                .min_by(|&i, &j| {
                    let di = (pts[i][0] - d.position[0]).hypot(pts[i][1] - d.position[1]);
                    let dj = (pts[j][0] - d.position[0]).hypot(pts[j][1] - d.position[1]);
                    di.partial_cmp(&dj).unwrap()
                })
                .unwrap();
            assert_eq!(a.matched_samples[k], best);
        }
    }

    #[test]
    fn zero_matched_deposits_is_an_error() {
        let idx = unit_grid(3);
        let scores = vec![0.0; 9];
        let deposits = vec![deposit(500.0, 500.0)];
        let protocol = EvalProtocol::default();
        assert!(assign_positive_scores(&scores, &idx, &deposits, &protocol).is_err());
    }

    #[test]
    fn background_respects_exclusion_and_is_deterministic() {
        let idx = unit_grid(6);
        let deposits = vec![deposit(0.0, 0.0)];
        let protocol = EvalProtocol {
            bg_per_pos: 5,
            ..EvalProtocol::default()
        };
        let a = sample_background(&idx, &deposits, 2, &protocol, 42).unwrap();
        let b = sample_background(&idx, &deposits, 2, &protocol, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.indices.len(), 10);
        // The sample at the deposit itself is never selected.
        assert!(!a.indices.contains(&0));
        let c = sample_background(&idx, &deposits, 2, &protocol, 43).unwrap();
        assert_ne!(a.indices, c.indices);
    }

    #[test]
    fn background_pool_saturation_returns_whole_pool() {
        let idx = unit_grid(3);
        let deposits = vec![deposit(10.0, 10.0)];
        let protocol = EvalProtocol {
            bg_per_pos: 10,
            ..EvalProtocol::default()
        };
        let draw = sample_background(&idx, &deposits, 1, &protocol, 7).unwrap();
        assert!(draw.pool_exhausted);
        assert_eq!(draw.indices.len(), 9);
    }

    #[test]
    fn auc_worked_examples() {
        assert_eq!(roc_auc(&[2.0, 3.0], &[0.1, 0.2, 0.3]).unwrap(), 1.0);
        // Frozen example: pos {0.9, 0.8}, bg {0.7, 0.85, 0.1} -> 5/6.
        let v = roc_auc(&[0.9, 0.8], &[0.7, 0.85, 0.1]).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(roc_auc(&[0.5], &[0.5]).unwrap(), 0.5);
    }

    #[test]
    fn auc_equals_brute_force_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let np = rng.gen_range(1..8);
            let nb = rng.gen_range(1..12);
            // Coarse grid of values to force plenty of ties.
            let pos: Vec<f64> = (0..np).map(|_| rng.gen_range(0..5) as f64 * 0.25).collect();
            let bg: Vec<f64> = (0..nb).map(|_| rng.gen_range(0..5) as f64 * 0.25).collect();
            let fast = roc_auc(&pos, &bg).unwrap();
            let mut acc = 0.0;
            for &p in &pos {
                for &b in &bg {
                    if p > b {
                        acc += 1.0;
                    } else if p == b {
                        acc += 0.5;
                    }
                }
            }
            let brute = acc / (np as f64 * nb as f64);
            assert_eq!(fast, brute);
        }
    }

    #[test]
    fn auc_monotone_invariance_and_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let pos: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let bg: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = roc_auc(&pos, &bg).unwrap();
            // Strictly monotone transform: x -> exp(x) + 3x.
            let t = |v: f64| v.exp() + 3.0 * v;
            let a2 = roc_auc(
                &pos.iter().map(|&v| t(v)).collect::<Vec<_>>(),
                &bg.iter().map(|&v| t(v)).collect::<Vec<_>>(),
            )
            .unwrap();
            assert_eq!(a, a2);
            let flip = roc_auc(&bg, &pos).unwrap();
            assert!((a + flip - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn average_precision_worked_examples() {
        // Perfect separation, 2 pos, 3 bg.
        assert_eq!(
            average_precision(&[0.9, 0.8], &[0.1, 0.2, 0.3]).unwrap(),
            1.0
        );
        // Single positive ranked second of four.
        let ap = average_precision(&[0.7], &[0.9, 0.5, 0.3]).unwrap();
        assert!((ap - 0.5).abs() < 1e-15);
        // All scores equal: pessimistic bound n_pos / (n_pos + n_bg).
        let ap_tie = average_precision(&[1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((ap_tie - 2.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn pr_auc_bounds_and_perfect_case() {
        let v = pr_auc(&[0.9, 0.8], &[0.1, 0.2, 0.3]).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let pos: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
            let bg: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
            let v = pr_auc(&pos, &bg).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn dtd_zero_when_top_sample_sits_on_deposit() {
        let idx = unit_grid(5);
        let mut scores = vec![0.0; 25];
        scores[12] = 10.0; // sample (2,2? row-major: 12 = 2*5+2 -> (2,2))
        let deposits = vec![deposit(2.0, 2.0)];
        let dtd = distance_to_deposits(&scores, &idx, &deposits, 0.04).unwrap();
        assert_eq!(dtd, 0.0);
    }

    #[test]
    fn dtd_minimal_for_oracle_scorer() {
        let idx = unit_grid(6);
        let deposits = vec![deposit(1.0, 1.0), deposit(4.0, 4.0)];
        let nearest = |i: usize| -> f64 {
            let p = idx.point(i);
            deposits
                .iter()
                .map(|d| (p[0] - d.position[0]).hypot(p[1] - d.position[1]))
                .fold(f64::INFINITY, f64::min)
        };
        let oracle: Vec<f64> = (0..36).map(|i| -nearest(i)).collect();
        let q = 0.1;
        let dtd_oracle = distance_to_deposits(&oracle, &idx, &deposits, q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let random: Vec<f64> = (0..36).map(|_| rng.gen_range(0.0..1.0)).collect();
            let dtd_rand = distance_to_deposits(&random, &idx, &deposits, q).unwrap();
            assert!(dtd_oracle <= dtd_rand + 1e-12);
        }
    }

    #[test]
    fn dtd_uniform_scores_approach_global_mean_distance() {
        let idx = unit_grid(8);
        let deposits = vec![deposit(3.0, 3.0)];
        let global_mean: f64 = (0..64)
            .map(|i| {
                let p = idx.point(i);
                (p[0] - 3.0).hypot(p[1] - 3.0)
            })
            .sum::<f64>()
            / 64.0;
        // Monte-Carlo average over seeds of DTD under random scores.
        let mut acc = 0.0;
        let runs = 200;
        for seed in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let random: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
            acc += distance_to_deposits(&random, &idx, &deposits, 0.1).unwrap();
        }
        let mc = acc / runs as f64;
        assert!(
            (mc - global_mean).abs() / global_mean < 0.1,
            "mc {mc} vs mean {global_mean}"
        );
    }

    #[test]
    fn run_protocol_aggregates_and_oracle_hits_auc_one() {
        let idx = unit_grid(10);
        let deposits = vec![deposit(2.0, 2.0), deposit(7.0, 6.0)];
        let nearest = |i: usize| -> f64 {
            let p = idx.point(i);
            deposits
                .iter()
                .map(|d| (p[0] - d.position[0]).hypot(p[1] - d.position[1]))
                .fold(f64::INFINITY, f64::min)
        };
        let oracle: Vec<f64> = (0..100).map(|i| -nearest(i)).collect();
        let protocol = EvalProtocol {
            n_runs: 20,
            ..EvalProtocol::default()
        };
        let report = run_protocol("oracle", "h", &oracle, &idx, &deposits, &protocol).unwrap();
        assert_eq!(report.auc_runs.len(), 20);
        assert_eq!(report.auc_mean, 1.0);
        assert!(report.auc_variance.abs() < 1e-30);
        // Aggregates must equal recomputation from stored per-run values.
        let (m, v) = mean_and_population_variance(&report.auc_runs);
        assert_eq!(report.auc_mean, m);
        assert_eq!(report.auc_variance, v);

        let single = EvalProtocol {
            n_runs: 1,
            ..EvalProtocol::default()
        };
        let r1 = run_protocol("oracle", "h", &oracle, &idx, &deposits, &single).unwrap();
        assert_eq!(r1.auc_mean, r1.auc_runs[0]);
        assert_eq!(r1.auc_variance, 0.0);
    }
}
