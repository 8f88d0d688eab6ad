//! Point interpolation: inverse distance weighting and ordinary kriging.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::SpatialIndex;
use crate::error::{Error, Result};

/// Distance below which a query is treated as coincident with a sample.
const COINCIDENT_EPS: f64 = 1e-12;

/// Inverse-distance-weighted estimate at `query` from the `k_max` nearest
/// samples. A query coincident with a sample returns that sample's value
/// exactly.
pub fn idw_interpolate(
    index: &SpatialIndex,
    values: &[f64],
    query: [f64; 2],
    power: f64,
    k_max: usize,
) -> Result<f64> {
    if power <= 0.0 {
        return Err(Error::Config(format!("idw power {power} must be > 0")));
    }
    if values.len() != index.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} indexed points",
            values.len(),
            index.len()
        )));
    }
    let neighbours = index.knn_query(query, k_max.max(1), None);
    if neighbours[0].1 < COINCIDENT_EPS {
        return Ok(values[neighbours[0].0]);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, d) in neighbours {
        let w = d.powf(-power);
        num += w * values[i];
        den += w;
    }
    Ok(num / den)
}

/// Variogram model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariogramKind {
    Spherical,
    Exponential,
}

/// Fitted variogram: gamma(0) = 0 by convention, with a nugget discontinuity
/// immediately off the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub kind: VariogramKind,
    pub nugget: f64,
    pub sill: f64,
    pub range_param: f64,
    /// Set when the field had (near-)zero variance; kriging on such a model
    /// falls back to IDW.
    pub degenerate: bool,
}

impl VariogramModel {
    /// Semivariance at lag `h`.
    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        let psill = self.sill - self.nugget;
        match self.kind {
            VariogramKind::Spherical => {
                if h >= self.range_param {
                    self.sill
                } else {
                    let r = h / self.range_param;
                    self.nugget + psill * (1.5 * r - 0.5 * r * r * r)
                }
            }
            VariogramKind::Exponential => {
                // Practical-range convention: ~95% of the sill at range_param.
                self.nugget + psill * (1.0 - (-3.0 * h / self.range_param).exp())
            }
        }
    }
}

/// Empirical semivariogram over all point pairs, binned up to half the
/// maximum pairwise distance. Returns (lag center, semivariance, pair count)
/// for nonempty bins.
pub fn empirical_variogram(
    index: &SpatialIndex,
    values: &[f64],
    n_lags: usize,
) -> Result<Vec<(f64, f64, usize)>> {
    let n = index.len();
    if n < 2 {
        return Err(Error::Validation("variogram needs at least two points".into()));
    }
    if values.len() != n {
        return Err(Error::Dimension("values misaligned with index".into()));
    }
    if n_lags == 0 {
        return Err(Error::Config("n_lags must be >= 1".into()));
    }
    let points = index.points();
    let mut max_d = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            max_d = max_d.max((dx * dx + dy * dy).sqrt());
        }
    }
    if max_d <= 0.0 {
        return Err(Error::Validation("all points coincide".into()));
    }
    let h_max = max_d / 2.0;
    let width = h_max / n_lags as f64;
    let mut sums = vec![0.0f64; n_lags];
    let mut counts = vec![0usize; n_lags];
    for i in 0..n {
        for j in i + 1..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            let d = (dx * dx + dy * dy).sqrt();
            if d > h_max || d <= 0.0 {
                continue;
            }
            let bin = ((d / width).floor() as usize).min(n_lags - 1);
            let diff = values[i] - values[j];
            sums[bin] += 0.5 * diff * diff;
            counts[bin] += 1;
        }
    }
    Ok((0..n_lags)
        .filter(|&b| counts[b] > 0)
        .map(|b| ((b as f64 + 0.5) * width, sums[b] / counts[b] as f64, counts[b]))
        .collect())
}

/// Fit a variogram model to the empirical semivariances by least squares:
/// range by grid search, (nugget, partial sill) by a nonnegative linear fit
/// per candidate range. `sill >= nugget` holds by construction.
pub fn fit_variogram(
    index: &SpatialIndex,
    values: &[f64],
    kind: VariogramKind,
    n_lags: usize,
) -> Result<VariogramModel> {
    if index.len() < 10 {
        return Err(Error::Validation(
            "variogram fit needs at least 10 points".into(),
        ));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    let bins = empirical_variogram(index, values, n_lags)?;
    if bins.len() < 3 {
        return Err(Error::Fit(format!(
            "only {} nonempty lag bins, need at least 3",
            bins.len()
        )));
    }
    let h_max = bins.last().unwrap().0;
    if variance <= 1e-12 {
        return Ok(VariogramModel {
            kind,
            nugget: 0.0,
            sill: 1e-12,
            range_param: h_max,
            degenerate: true,
        });
    }

    let range_lo = (bins[0].0 / 4.0).max(h_max * 1e-3);
    let mut best: Option<(f64, VariogramModel)> = None;
    for step in 0..48 {
        let range = range_lo + (1.5 * h_max - range_lo) * step as f64 / 47.0;
        let probe = |h: f64| {
            let m = VariogramModel {
                kind,
                nugget: 0.0,
                sill: 1.0,
                range_param: range,
                degenerate: false,
            };
            m.gamma(h)
        };
        // Least squares for gamma_hat ~ nugget + psill * g(h), then clamp to
        // the nonnegative quadrant.
        let m = bins.len() as f64;
        let (mut sg, mut sgg, mut sy, mut sgy) = (0.0, 0.0, 0.0, 0.0);
        for &(h, y, _) in &bins {
            let g = probe(h);
            sg += g;
            sgg += g * g;
            sy += y;
            sgy += g * y;
        }
        let det = m * sgg - sg * sg;
        let (mut nugget, mut psill) = if det.abs() > 1e-12 {
            (
                (sy * sgg - sg * sgy) / det,
                (m * sgy - sg * sy) / det,
            )
        } else {
            (sy / m, 0.0)
        };
        if nugget < 0.0 {
            nugget = 0.0;
            psill = if sgg > 1e-12 { sgy / sgg } else { 0.0 };
        }
        if psill < 0.0 {
            psill = 0.0;
            nugget = sy / m;
        }
        let model = VariogramModel {
            kind,
            nugget,
            sill: nugget + psill,
            range_param: range,
            degenerate: false,
        };
        let sse: f64 = bins
            .iter()
            .map(|&(h, y, _)| (model.gamma(h) - y).powi(2))
            .sum();
        if best.as_ref().map_or(true, |(b, _)| sse < *b) {
            best = Some((sse, model));
        }
    }
    let (_, mut model) = best.unwrap();
    if model.sill <= 0.0 {
        model.sill = variance.max(1e-12);
    }
    Ok(model)
}

/// Result of one ordinary-kriging solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrigingEstimate {
    pub value: f64,
    /// Kriging variance; `-1.0` when the solve was singular and the estimate
    /// fell back to IDW.
    pub variance: f64,
    pub idw_fallback: bool,
}

/// Ordinary-kriging weights over the `k_max` nearest samples: solves the
/// bordered system enforcing that the weights sum to one. Returns `None` when
/// the system is singular.
pub fn kriging_weights(
    index: &SpatialIndex,
    model: &VariogramModel,
    query: [f64; 2],
    k_max: usize,
) -> Option<(Vec<(usize, f64)>, f64)> {
    if model.degenerate {
        return None;
    }
    let neighbours = index.knn_query(query, k_max.max(1), None);
    let m = neighbours.len();
    let mut a = DMatrix::zeros(m + 1, m + 1);
    for (r, &(i, _)) in neighbours.iter().enumerate() {
        for (c, &(j, _)) in neighbours.iter().enumerate() {
            let pi = index.point(i);
            let pj = index.point(j);
            let d = ((pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2)).sqrt();
            a[(r, c)] = model.gamma(d);
        }
        a[(r, m)] = 1.0;
        a[(m, r)] = 1.0;
    }
    let mut rhs = DVector::zeros(m + 1);
    for (r, &(_, d)) in neighbours.iter().enumerate() {
        rhs[r] = model.gamma(d);
    }
    rhs[m] = 1.0;
    let lu = a.lu();
    let sol = lu.solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let weights = neighbours
        .iter()
        .enumerate()
        .map(|(r, &(i, _))| (i, sol[r]))
        .collect();
    Some((weights, sol[m]))
}

/// Ordinary kriging at `query`; singular systems fall back to an IDW (p=2)
/// estimate with variance reported as -1 and the fallback flag set.
pub fn kriging_interpolate(
    index: &SpatialIndex,
    values: &[f64],
    model: &VariogramModel,
    query: [f64; 2],
    k_max: usize,
) -> Result<KrigingEstimate> {
    if values.len() != index.len() {
        return Err(Error::Dimension("values misaligned with index".into()));
    }
    match kriging_weights(index, model, query, k_max) {
        Some((weights, mu)) => {
            let estimate: f64 = weights.iter().map(|&(i, w)| w * values[i]).sum();
            let mut variance = mu;
            for &(i, w) in &weights {
                let p = index.point(i);
                let d = ((p[0] - query[0]).powi(2) + (p[1] - query[1]).powi(2)).sqrt();
                variance += w * model.gamma(d);
            }
            Ok(KrigingEstimate {
                value: estimate,
                variance: variance.max(0.0),
                idw_fallback: false,
            })
        }
        None => {
            let value = idw_interpolate(index, values, query, 2.0, k_max)?;
            Ok(KrigingEstimate {
                value,
                variance: -1.0,
                idw_fallback: true,
            })
        }
    }
}
