//! Classical unsupervised anomaly scorers.
//!
//! All detectors share one contract: fit on a [`CompositionMatrix`], then
//! score a matrix to one real per row, higher = more anomalous. Scoring never
//! mutates fitted state and is deterministic given the fit.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compositional::CompositionMatrix;
use crate::error::{Error, Result};
use crate::nn::derive_seed;
use crate::par;

/// Detector families implemented by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Zscore,
    Mahalanobis,
    KnnDist,
    IsolationForest,
    Ocsvm,
    Ae,
    Vae,
    T1,
    Geochemformer,
}

impl DetectorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorKind::Zscore => "zscore",
            DetectorKind::Mahalanobis => "mahalanobis",
            DetectorKind::KnnDist => "knn_dist",
            DetectorKind::IsolationForest => "isolation_forest",
            DetectorKind::Ocsvm => "ocsvm",
            DetectorKind::Ae => "ae",
            DetectorKind::Vae => "vae",
            DetectorKind::T1 => "t1",
            DetectorKind::Geochemformer => "geochemformer",
        }
    }

    pub fn all() -> [DetectorKind; 9] {
        [
            DetectorKind::Zscore,
            DetectorKind::Mahalanobis,
            DetectorKind::KnnDist,
            DetectorKind::IsolationForest,
            DetectorKind::Ocsvm,
            DetectorKind::Ae,
            DetectorKind::Vae,
            DetectorKind::T1,
            DetectorKind::Geochemformer,
        ]
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "zscore" => DetectorKind::Zscore,
            "mahalanobis" => DetectorKind::Mahalanobis,
            "knn_dist" => DetectorKind::KnnDist,
            "isolation_forest" => DetectorKind::IsolationForest,
            "ocsvm" => DetectorKind::Ocsvm,
            "ae" => DetectorKind::Ae,
            "vae" => DetectorKind::Vae,
            "t1" => DetectorKind::T1,
            "geochemformer" => DetectorKind::Geochemformer,
            other => return Err(Error::Config(format!("unknown detector kind `{other}`"))),
        })
    }
}

// ---------------------------------------------------------------------------
// Z-score

/// Per-column |z|; aggregated as the max over columns unless a target column
/// is set. Zero-variance columns are excluded from the aggregate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZscoreDetector {
    means: Vec<f64>,
    stds: Vec<f64>,
    /// Columns with positive variance on the fit data.
    live: Vec<bool>,
    pub target: Option<usize>,
    /// Columns skipped because their fit variance was zero.
    pub degenerate_columns: Vec<usize>,
}

impl ZscoreDetector {
    pub fn fit(matrix: &CompositionMatrix, target: Option<usize>) -> Result<Self> {
        let c = matrix.n_cols();
        if let Some(t) = target {
            if t >= c {
                return Err(Error::Config(format!(
                    "zscore target column {t} out of range for {c} columns"
                )));
            }
        }
        let n = matrix.n_rows() as f64;
        let mut means = vec![0.0; c];
        let mut stds = vec![0.0; c];
        let mut live = vec![false; c];
        let mut degenerate = Vec::new();
        for j in 0..c {
            let col = matrix.data().column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            means[j] = mean;
            stds[j] = var.sqrt();
            if stds[j] > 1e-12 {
                live[j] = true;
            } else {
                degenerate.push(j);
            }
        }
        Ok(ZscoreDetector {
            means,
            stds,
            live,
            target,
            degenerate_columns: degenerate,
        })
    }

    pub fn score(&self, matrix: &CompositionMatrix) -> Result<Vec<f64>> {
        if matrix.n_cols() != self.means.len() {
            return Err(Error::Dimension("zscore: column count mismatch".into()));
        }
        let score_row = |i: usize| -> f64 {
            match self.target {
                Some(t) if self.live[t] => {
                    ((matrix.value(i, t) - self.means[t]) / self.stds[t]).abs()
                }
                Some(_) => 0.0,
                None => {
                    let mut best = 0.0f64;
                    for j in 0..self.means.len() {
                        if self.live[j] {
                            let z = ((matrix.value(i, j) - self.means[j]) / self.stds[j]).abs();
                            best = best.max(z);
                        }
                    }
                    best
                }
            }
        };
        Ok(par::map_indexed(matrix.n_rows(), score_row))
    }
}

// ---------------------------------------------------------------------------
// Mahalanobis distance

/// sqrt((x - mu)^T Sigma^-1 (x - mu)) against the fit covariance plus a
/// trace-scaled ridge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MahalanobisDetector {
    mean: Vec<f64>,
    /// Inverse covariance (after ridge), dense C x C.
    precision: DMatrix<f64>,
    pub ridge: f64,
}

impl MahalanobisDetector {
    pub fn fit(matrix: &CompositionMatrix) -> Result<Self> {
        let n = matrix.n_rows();
        let c = matrix.n_cols();
        if n < 2 {
            return Err(Error::Validation("mahalanobis needs at least 2 rows".into()));
        }
        let data = matrix.data();
        let mean: Vec<f64> = (0..c).map(|j| data.column(j).sum() / n as f64).collect();
        let mut cov = DMatrix::zeros(c, c);
        for i in 0..n {
            for a in 0..c {
                let da = data[(i, a)] - mean[a];
                for b in a..c {
                    cov[(a, b)] += da * (data[(i, b)] - mean[b]);
                }
            }
        }
        for a in 0..c {
            for b in a..c {
                cov[(a, b)] /= n as f64;
                cov[(b, a)] = cov[(a, b)];
            }
        }
        let ridge = 1e-6 * cov.trace() / c as f64;
        for a in 0..c {
            cov[(a, a)] += ridge;
        }
        let chol = Cholesky::new(cov).ok_or_else(|| {
            Error::Numeric("covariance not positive definite after ridge".into())
        })?;
        let precision = chol.inverse();
        Ok(MahalanobisDetector {
            mean,
            precision,
            ridge,
        })
    }

    pub fn score(&self, matrix: &CompositionMatrix) -> Result<Vec<f64>> {
        let c = self.mean.len();
        if matrix.n_cols() != c {
            return Err(Error::Dimension("mahalanobis: column count mismatch".into()));
        }
        let score_row = |i: usize| -> f64 {
            let d = DVector::from_fn(c, |j, _| matrix.value(i, j) - self.mean[j]);
            let q = (&self.precision * &d).dot(&d);
            q.max(0.0).sqrt()
        };
        Ok(par::map_indexed(matrix.n_rows(), score_row))
    }
}

// ---------------------------------------------------------------------------
// kNN distance

/// Mean euclidean distance to the k nearest *other* rows of the scored
/// matrix (transductive local-sparsity score).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnDistanceDetector {
    pub k: usize,
    n_features: usize,
}

impl KnnDistanceDetector {
    pub fn fit(matrix: &CompositionMatrix, k: usize) -> Result<Self> {
        if k == 0 || k >= matrix.n_rows() {
            return Err(Error::Config(format!(
                "knn_dist needs 1 <= k < n_rows, got k={k} with {} rows",
                matrix.n_rows()
            )));
        }
        Ok(KnnDistanceDetector {
            k,
            n_features: matrix.n_cols(),
        })
    }

    pub fn score(&self, matrix: &CompositionMatrix) -> Result<Vec<f64>> {
        let n = matrix.n_rows();
        if matrix.n_cols() != self.n_features {
            return Err(Error::Dimension("knn_dist: column count mismatch".into()));
        }
        if self.k >= n {
            return Err(Error::Config(format!(
                "knn_dist k={} too large for {n} rows",
                self.k
            )));
        }
        let data = matrix.data();
        let c = matrix.n_cols();
        let score_row = |i: usize| -> f64 {
            let mut dists: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let mut s = 0.0;
                    for f in 0..c {
                        let d = data[(i, f)] - data[(j, f)];
                        s += d * d;
                    }
                    s.sqrt()
                })
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            dists[..self.k].iter().sum::<f64>() / self.k as f64
        };
        Ok(par::map_indexed(n, score_row))
    }
}

// ---------------------------------------------------------------------------
// Isolation forest

const EULER_MASCHERONI: f64 = 0.5772156649;

/// Average unsuccessful-search path length of a BST with n external nodes.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let nf = n as f64;
    let harmonic = (nf - 1.0).ln() + EULER_MASCHERONI;
    2.0 * harmonic - 2.0 * (nf - 1.0) / nf
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum IsoNode {
    Internal {
        feature: usize,
        split: f64,
        left: usize,
        right: usize,
    },
    External {
        size: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IsoTree {
    nodes: Vec<IsoNode>,
}

impl IsoTree {
    fn build(
        data: &DMatrix<f64>,
        rows: &mut Vec<usize>,
        depth: usize,
        max_depth: usize,
        rng: &mut ChaCha8Rng,
        nodes: &mut Vec<IsoNode>,
    ) -> usize {
        if depth >= max_depth || rows.len() <= 1 {
            nodes.push(IsoNode::External { size: rows.len() });
            return nodes.len() - 1;
        }
        let c = data.ncols();
        // Features with spread in this node.
        let usable: Vec<usize> = (0..c)
            .filter(|&f| {
                let first = data[(rows[0], f)];
                rows.iter().any(|&r| data[(r, f)] != first)
            })
            .collect();
        if usable.is_empty() {
            nodes.push(IsoNode::External { size: rows.len() });
            return nodes.len() - 1;
        }
        let feature = usable[rng.gen_range(0..usable.len())];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &r in rows.iter() {
            let v = data[(r, feature)];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let split = rng.gen_range(lo..hi);
        let mut left_rows: Vec<usize> = rows.iter().cloned().filter(|&r| data[(r, feature)] < split).collect();
        let mut right_rows: Vec<usize> = rows.iter().cloned().filter(|&r| data[(r, feature)] >= split).collect();
        let idx = nodes.len();
        nodes.push(IsoNode::External { size: 0 }); // placeholder
        let left = IsoTree::build(data, &mut left_rows, depth + 1, max_depth, rng, nodes);
        let right = IsoTree::build(data, &mut right_rows, depth + 1, max_depth, rng, nodes);
        nodes[idx] = IsoNode::Internal {
            feature,
            split,
            left,
            right,
        };
        idx
    }

    fn path_length(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        let mut depth = 0.0;
        loop {
            match &self.nodes[at] {
                IsoNode::Internal {
                    feature,
                    split,
                    left,
                    right,
                } => {
                    at = if row[*feature] < *split { *left } else { *right };
                    depth += 1.0;
                }
                IsoNode::External { size } => {
                    return depth + average_path_length(*size);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestConfig {
    pub n_trees: usize,
    /// Subsample size per tree; clamped to the row count at fit time.
    pub subsample: usize,
    pub seed: u64,
}

impl Default for IsolationForestConfig {
    fn default() -> Self {
        IsolationForestConfig {
            n_trees: 100,
            subsample: 256,
            seed: 0,
        }
    }
}

/// Standard isolation forest; score_i = 2^(-E[h(x_i)] / c(psi)).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsolationForestDetector {
    pub cfg: IsolationForestConfig,
    trees: Vec<IsoTree>,
    psi: usize,
    n_features: usize,
}

/// Seeded partial Fisher-Yates draw of `k` distinct indices from `0..n`.
pub(crate) fn sample_without_replacement(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

impl IsolationForestDetector {
    pub fn fit(matrix: &CompositionMatrix, cfg: IsolationForestConfig) -> Result<Self> {
        if cfg.n_trees == 0 {
            return Err(Error::Config("isolation forest needs n_trees >= 1".into()));
        }
        if cfg.subsample == 0 {
            return Err(Error::Config("isolation forest needs subsample >= 1".into()));
        }
        let n = matrix.n_rows();
        let psi = cfg.subsample.min(n);
        let max_depth = (psi as f64).log2().ceil() as usize;
        let data = matrix.data();
        let trees = par::map_indexed(cfg.n_trees, |t| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x1f, t as u64]));
            let mut rows = sample_without_replacement(n, psi, &mut rng);
            let mut nodes = Vec::new();
            IsoTree::build(data, &mut rows, 0, max_depth.max(1), &mut rng, &mut nodes);
            IsoTree { nodes }
        });
        Ok(IsolationForestDetector {
            cfg,
            trees,
            psi,
            n_features: matrix.n_cols(),
        })
    }

    pub fn score(&self, matrix: &CompositionMatrix) -> Result<Vec<f64>> {
        if matrix.n_cols() != self.n_features {
            return Err(Error::Dimension(
                "isolation forest: column count mismatch".into(),
            ));
        }
        let c_psi = average_path_length(self.psi);
        let score_row = |i: usize| -> f64 {
            let row = matrix.row_vec(i);
            let mean_path: f64 = self
                .trees
                .iter()
                .map(|t| t.path_length(&row))
                .sum::<f64>()
                / self.trees.len() as f64;
            2f64.powf(-mean_path / c_psi)
        };
        Ok(par::map_indexed(matrix.n_rows(), score_row))
    }
}

// ---------------------------------------------------------------------------
// One-class SVM (SVDD dual via Frank-Wolfe)

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcsvmConfig {
    /// Fraction bound: alpha_i <= 1 / (nu * N).
    pub nu: f64,
    /// RBF kernel width; `None` selects 1 / n_features.
    pub gamma: Option<f64>,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for OcsvmConfig {
    fn default() -> Self {
        OcsvmConfig {
            nu: 0.1,
            gamma: None,
            max_iters: 2000,
            tolerance: 1e-6,
        }
    }
}

/// SVDD center in RBF feature space; score = kernel distance to the center.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcsvmDetector {
    pub cfg: OcsvmConfig,
    pub gamma: f64,
    /// Support rows (alpha > 0) of the training matrix.
    support: DMatrix<f64>,
    alpha: Vec<f64>,
    /// alpha^T K alpha over the support set.
    center_norm2: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    (-gamma * s).exp()
}

impl OcsvmDetector {
    pub fn fit(matrix: &CompositionMatrix, cfg: OcsvmConfig) -> Result<Self> {
        if !(cfg.nu > 0.0 && cfg.nu <= 1.0) {
            return Err(Error::Config(format!("ocsvm nu {} not in (0, 1]", cfg.nu)));
        }
        let n = matrix.n_rows();
        let gamma = cfg.gamma.unwrap_or(1.0 / matrix.n_cols() as f64);
        if gamma <= 0.0 {
            return Err(Error::Config(format!("ocsvm gamma {gamma} must be > 0")));
        }
        let data = matrix.data();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| matrix.row_vec(i)).collect();
        // Dense kernel matrix; desk-scale surveys keep this comfortably in
        // memory.
        let kernel: Vec<Vec<f64>> = par::map_indexed(n, |i| {
            (0..n).map(|j| rbf(&rows[i], &rows[j], gamma)).collect()
        });
        let cap = 1.0 / (cfg.nu * n as f64);

        // Frank-Wolfe on f(a) = a^T K a - sum_i a_i K_ii over the capped
        // simplex. K_ii = 1 for RBF.
        let mut alpha = vec![1.0 / n as f64; n];
        let mut k_alpha: Vec<f64> = (0..n)
            .map(|i| kernel[i].iter().sum::<f64>() / n as f64)
            .collect();
        let mut converged = false;
        let mut iterations = 0;
        for it in 0..cfg.max_iters {
            iterations = it + 1;
            // gradient g_i = 2 (K a)_i - K_ii
            let grad: Vec<f64> = (0..n).map(|i| 2.0 * k_alpha[i] - 1.0).collect();
            // LP vertex: pour mass `cap` onto ascending-gradient coordinates.
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| grad[a].partial_cmp(&grad[b]).unwrap().then(a.cmp(&b)));
            let mut s = vec![0.0; n];
            let mut remaining = 1.0;
            for &i in &idx {
                let m = cap.min(remaining);
                s[i] = m;
                remaining -= m;
                if remaining <= 0.0 {
                    break;
                }
            }
            // Duality gap: g . (alpha - s).
            let gap: f64 = (0..n).map(|i| grad[i] * (alpha[i] - s[i])).sum();
            if gap < cfg.tolerance {
                converged = true;
                break;
            }
            // Exact line search along d = s - alpha for the quadratic.
            let d: Vec<f64> = (0..n).map(|i| s[i] - alpha[i]).collect();
            let k_d: Vec<f64> = par::map_indexed(n, |i| {
                let mut acc = 0.0;
                for (j, &dj) in d.iter().enumerate() {
                    if dj != 0.0 {
                        acc += kernel[i][j] * dj;
                    }
                }
                acc
            });
            let g_dot_d: f64 = (0..n).map(|i| grad[i] * d[i]).sum();
            let dkd: f64 = (0..n).map(|i| d[i] * k_d[i]).sum();
            let t = if dkd > 1e-18 {
                (-g_dot_d / (2.0 * dkd)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            for i in 0..n {
                alpha[i] += t * d[i];
                k_alpha[i] += t * k_d[i];
            }
        }
        let center_norm2: f64 = (0..n).map(|i| alpha[i] * k_alpha[i]).sum();

        // Keep only support vectors for scoring.
        let keep: Vec<usize> = (0..n).filter(|&i| alpha[i] > 1e-12).collect();
        let mut support = DMatrix::zeros(keep.len(), matrix.n_cols());
        let mut sv_alpha = Vec::with_capacity(keep.len());
        for (r, &i) in keep.iter().enumerate() {
            for j in 0..matrix.n_cols() {
                support[(r, j)] = data[(i, j)];
            }
            sv_alpha.push(alpha[i]);
        }
        Ok(OcsvmDetector {
            cfg,
            gamma,
            support,
            alpha: sv_alpha,
            center_norm2,
            converged,
            iterations,
        })
    }

    /// Kernel distance^2 to the learned center:
    /// K(x,x) - 2 sum_j alpha_j K(x, x_j) + alpha^T K alpha.
    pub fn score(&self, matrix: &CompositionMatrix) -> Result<Vec<f64>> {
        if matrix.n_cols() != self.support.ncols() {
            return Err(Error::Dimension("ocsvm: column count mismatch".into()));
        }
        let m = self.support.nrows();
        let score_row = |i: usize| -> f64 {
            let row = matrix.row_vec(i);
            let mut cross = 0.0;
            for r in 0..m {
                let mut s = 0.0;
                for j in 0..row.len() {
                    let d = row[j] - self.support[(r, j)];
                    s += d * d;
                }
                cross += self.alpha[r] * (-self.gamma * s).exp();
            }
            1.0 - 2.0 * cross + self.center_norm2
        };
        Ok(par::map_indexed(matrix.n_rows(), score_row))
    }

    /// Feasibility diagnostics: (sum alpha, max alpha, cap).
    pub fn alpha_stats(&self) -> (f64, f64, f64) {
        let sum: f64 = self.alpha.iter().sum();
        let max = self.alpha.iter().cloned().fold(0.0, f64::max);
        (sum, max, 1.0 / (self.cfg.nu * 1.0))
    }
}
