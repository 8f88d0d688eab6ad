//! Compositional transforms (CLR, ILR), standardization, and feature
//! selection.
//!
//! Concentration vectors live on a simplex (the closure effect), so euclidean
//! detectors are run on log-ratio coordinates instead of raw values. The ILR
//! basis is the Helmert sub-composition construction, which is orthonormal
//! and deterministic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::Survey;

/// Which coordinate system a matrix is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformSpace {
    Raw,
    Clr,
    Ilr,
    Zscore,
}

impl std::fmt::Display for TransformSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TransformSpace::Raw => "raw",
            TransformSpace::Clr => "clr",
            TransformSpace::Ilr => "ilr",
            TransformSpace::Zscore => "zscore",
        };
        f.write_str(s)
    }
}

/// Dense N x C matrix of preprocessed concentrations plus labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionMatrix {
    data: DMatrix<f64>,
    space: TransformSpace,
    element_names: Vec<String>,
    row_ids: Vec<String>,
}

impl CompositionMatrix {
    /// Build a matrix, checking finiteness and label alignment.
    pub fn new(
        data: DMatrix<f64>,
        space: TransformSpace,
        element_names: Vec<String>,
        row_ids: Vec<String>,
    ) -> Result<Self> {
        if element_names.len() != data.ncols() {
            return Err(Error::Dimension(format!(
                "{} element names for {} columns",
                element_names.len(),
                data.ncols()
            )));
        }
        if row_ids.len() != data.nrows() {
            return Err(Error::Dimension(format!(
                "{} row ids for {} rows",
                row_ids.len(),
                data.nrows()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("matrix contains NaN or Inf".into()));
        }
        Ok(CompositionMatrix {
            data,
            space,
            element_names,
            row_ids,
        })
    }

    /// Build the raw matrix from a handled survey, imputing masked entries
    /// with the per-element median of the observed values. Elements with no
    /// observation at all are dropped; their column names are returned.
    pub fn from_survey(survey: &Survey) -> Result<(Self, Vec<String>)> {
        survey.validate()?;
        let n = survey.n_samples();
        let c = survey.n_elements();
        let mut medians = vec![0.0f64; c];
        let mut keep = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..c {
            let mut observed: Vec<f64> = survey
                .samples
                .iter()
                .filter(|s| !s.missing[j])
                .map(|s| s.values[j])
                .collect();
            if observed.is_empty() {
                dropped.push(survey.elements[j].column_name.clone());
                continue;
            }
            observed.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = observed.len();
            medians[j] = if m % 2 == 1 {
                observed[m / 2]
            } else {
                0.5 * (observed[m / 2 - 1] + observed[m / 2])
            };
            keep.push(j);
        }
        if keep.is_empty() {
            return Err(Error::Validation(
                "every element column is entirely missing".into(),
            ));
        }
        let mut data = DMatrix::zeros(n, keep.len());
        for (i, s) in survey.samples.iter().enumerate() {
            for (jj, &j) in keep.iter().enumerate() {
                data[(i, jj)] = if s.missing[j] { medians[j] } else { s.values[j] };
            }
        }
        let names = keep
            .iter()
            .map(|&j| survey.elements[j].column_name.clone())
            .collect();
        let ids = survey.samples.iter().map(|s| s.id.clone()).collect();
        let m = CompositionMatrix::new(data, TransformSpace::Raw, names, ids)?;
        Ok((m, dropped))
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn space(&self) -> TransformSpace {
        self.space
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn element_names(&self) -> &[String] {
        &self.element_names
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.data[(row, col)]
    }

    /// Copy of row `i` as a plain vector.
    pub fn row_vec(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().cloned().collect()
    }

    /// Copy of column `j` as a plain vector.
    pub fn col_vec(&self, j: usize) -> Vec<f64> {
        self.data.column(j).iter().cloned().collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.element_names.iter().position(|n| n == name)
    }
}

/// Centered log-ratio: each row x maps to ln(x) - mean(ln(x)).
pub fn clr_transform(matrix: &CompositionMatrix) -> Result<CompositionMatrix> {
    if matrix.space() != TransformSpace::Raw {
        return Err(Error::Domain(format!(
            "clr expects a raw-space matrix, got {}",
            matrix.space()
        )));
    }
    let (n, c) = (matrix.n_rows(), matrix.n_cols());
    let mut out = DMatrix::zeros(n, c);
    for i in 0..n {
        for j in 0..c {
            let v = matrix.value(i, j);
            if v <= 0.0 {
                return Err(Error::Domain(format!(
                    "nonpositive entry {v} at row {} element {} (run abnormal-value handling first)",
                    matrix.row_ids()[i],
                    matrix.element_names()[j]
                )));
            }
            out[(i, j)] = v.ln();
        }
    }
    for i in 0..n {
        let mean = out.row(i).sum() / c as f64;
        for j in 0..c {
            out[(i, j)] -= mean;
        }
    }
    CompositionMatrix::new(
        out,
        TransformSpace::Clr,
        matrix.element_names().to_vec(),
        matrix.row_ids().to_vec(),
    )
}

/// Helmert sub-composition basis: C x (C-1), orthonormal columns each
/// summing to zero. Column j (0-based) is
/// sqrt((j+1)/(j+2)) * (1/(j+1), ..., 1/(j+1), -1, 0, ..., 0).
pub fn helmert_basis(c: usize) -> DMatrix<f64> {
    assert!(c >= 2, "Helmert basis needs at least two parts");
    let mut v = DMatrix::zeros(c, c - 1);
    for j in 0..c - 1 {
        let k = (j + 1) as f64;
        let scale = (k / (k + 1.0)).sqrt();
        for i in 0..=j {
            v[(i, j)] = scale / k;
        }
        v[(j + 1, j)] = -scale;
    }
    v
}

/// Isometric log-ratio: y = clr(x) . V with V the Helmert basis.
pub fn ilr_transform(matrix: &CompositionMatrix) -> Result<CompositionMatrix> {
    let c = matrix.n_cols();
    if c < 2 {
        return Err(Error::Dimension(
            "ilr needs at least two element columns".into(),
        ));
    }
    let clr = clr_transform(matrix)?;
    let v = helmert_basis(c);
    let out = clr.data() * &v;
    let names = (0..c - 1).map(|j| format!("ilr{}", j + 1)).collect();
    CompositionMatrix::new(out, TransformSpace::Ilr, names, matrix.row_ids().to_vec())
}

/// Per-column statistics captured by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    /// Population standard deviations; 0.0 marks a degenerate column that was
    /// centered only.
    pub stds: Vec<f64>,
}

/// Standardize every column to mean 0 / population std 1. Columns with zero
/// variance are centered only.
pub fn standardize(matrix: &CompositionMatrix) -> (CompositionMatrix, Standardization) {
    let (n, c) = (matrix.n_rows(), matrix.n_cols());
    let mut means = vec![0.0; c];
    let mut stds = vec![0.0; c];
    let mut out = matrix.data().clone();
    for j in 0..c {
        let mean = out.column(j).sum() / n as f64;
        let var = out.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        means[j] = mean;
        stds[j] = if std > 1e-12 { std } else { 0.0 };
        for i in 0..n {
            out[(i, j)] = (out[(i, j)] - mean) / if stds[j] > 0.0 { stds[j] } else { 1.0 };
        }
    }
    let m = CompositionMatrix::new(
        out,
        TransformSpace::Zscore,
        matrix.element_names().to_vec(),
        matrix.row_ids().to_vec(),
    )
    .expect("standardized matrix stays finite");
    (m, Standardization { means, stds })
}

/// Feature-selection strategy requested by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "strategy")]
pub enum SelectionStrategy {
    /// Keep every column.
    All,
    /// Keep the listed column indices, in the given order.
    Manual { columns: Vec<usize> },
    /// Project onto the top principal components explaining at least
    /// `variance_threshold` of the total variance.
    Pca { variance_threshold: f64 },
}

/// A fitted feature selection, applicable to matrices with matching width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureSelection {
    All,
    Manual {
        columns: Vec<usize>,
    },
    Pca {
        /// C x k loading matrix with orthonormal columns.
        loadings: DMatrix<f64>,
        /// Standardization applied before projecting.
        standardization: Standardization,
        /// Explained-variance ratio per retained component, non-increasing.
        explained: Vec<f64>,
        k: usize,
    },
}

impl FeatureSelection {
    /// Fit a selection on `matrix` under the given strategy.
    pub fn fit(matrix: &CompositionMatrix, strategy: &SelectionStrategy) -> Result<Self> {
        match strategy {
            SelectionStrategy::All => Ok(FeatureSelection::All),
            SelectionStrategy::Manual { columns } => {
                let c = matrix.n_cols();
                let mut seen = std::collections::HashSet::new();
                for &j in columns {
                    if j >= c {
                        return Err(Error::Validation(format!(
                            "manual selection index {j} out of range for {c} columns"
                        )));
                    }
                    if !seen.insert(j) {
                        return Err(Error::Validation(format!(
                            "manual selection repeats column {j}"
                        )));
                    }
                }
                if columns.is_empty() {
                    return Err(Error::Validation("manual selection is empty".into()));
                }
                Ok(FeatureSelection::Manual {
                    columns: columns.clone(),
                })
            }
            SelectionStrategy::Pca { variance_threshold } => {
                if !(0.0 < *variance_threshold && *variance_threshold <= 1.0) {
                    return Err(Error::Config(format!(
                        "pca variance threshold {variance_threshold} not in (0, 1]"
                    )));
                }
                fit_pca(matrix, *variance_threshold)
            }
        }
    }

    /// Apply the fitted selection.
    pub fn apply(&self, matrix: &CompositionMatrix) -> Result<CompositionMatrix> {
        match self {
            FeatureSelection::All => Ok(matrix.clone()),
            FeatureSelection::Manual { columns } => {
                let c = matrix.n_cols();
                if let Some(&bad) = columns.iter().find(|&&j| j >= c) {
                    return Err(Error::Validation(format!(
                        "selection index {bad} out of range for {c} columns"
                    )));
                }
                let n = matrix.n_rows();
                let mut data = DMatrix::zeros(n, columns.len());
                for (jj, &j) in columns.iter().enumerate() {
                    data.set_column(jj, &matrix.data().column(j));
                }
                let names = columns
                    .iter()
                    .map(|&j| matrix.element_names()[j].clone())
                    .collect();
                CompositionMatrix::new(data, matrix.space(), names, matrix.row_ids().to_vec())
            }
            FeatureSelection::Pca {
                loadings,
                standardization,
                k,
                ..
            } => {
                if matrix.n_cols() != loadings.nrows() {
                    return Err(Error::Dimension(format!(
                        "pca fitted on {} columns, matrix has {}",
                        loadings.nrows(),
                        matrix.n_cols()
                    )));
                }
                let std_data = apply_standardization(matrix.data(), standardization);
                let out = &std_data * loadings;
                let names = (0..*k).map(|j| format!("PC{}", j + 1)).collect();
                CompositionMatrix::new(
                    out,
                    TransformSpace::Zscore,
                    names,
                    matrix.row_ids().to_vec(),
                )
            }
        }
    }

    /// Reconstruct from PCA scores back to the original columns (inverse of
    /// `apply` up to the truncation). Only meaningful for the Pca variant.
    pub fn pca_reconstruct(&self, scores: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            FeatureSelection::Pca {
                loadings,
                standardization,
                ..
            } => {
                let std_space = scores * loadings.transpose();
                let mut out = std_space;
                for j in 0..out.ncols() {
                    let s = if standardization.stds[j] > 0.0 {
                        standardization.stds[j]
                    } else {
                        1.0
                    };
                    for i in 0..out.nrows() {
                        out[(i, j)] = out[(i, j)] * s + standardization.means[j];
                    }
                }
                Ok(out)
            }
            _ => Err(Error::Validation(
                "pca_reconstruct needs a PCA selection".into(),
            )),
        }
    }
}

fn apply_standardization(data: &DMatrix<f64>, st: &Standardization) -> DMatrix<f64> {
    let mut out = data.clone();
    for j in 0..out.ncols() {
        let s = if st.stds[j] > 0.0 { st.stds[j] } else { 1.0 };
        for i in 0..out.nrows() {
            out[(i, j)] = (out[(i, j)] - st.means[j]) / s;
        }
    }
    out
}

/// PCA on the standardized matrix via eigendecomposition of the covariance.
/// Sign convention: the largest-magnitude loading entry of each component is
/// positive, which makes the decomposition deterministic.
fn fit_pca(matrix: &CompositionMatrix, variance_threshold: f64) -> Result<FeatureSelection> {
    let n = matrix.n_rows();
    let c = matrix.n_cols();
    if n < 2 {
        return Err(Error::Validation("pca needs at least two rows".into()));
    }
    let (std_matrix, standardization) = standardize(matrix);
    let x = std_matrix.data();
    let cov = x.transpose() * x / n as f64;
    let eig = nalgebra::SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total <= 1e-12 {
        return Err(Error::Numeric("pca on zero-variance data".into()));
    }

    let mut cum = 0.0;
    let mut k = 0;
    let mut explained = Vec::new();
    for &idx in &order {
        let ratio = eig.eigenvalues[idx].max(0.0) / total;
        cum += ratio;
        explained.push(ratio);
        k += 1;
        if cum >= variance_threshold - 1e-12 {
            break;
        }
    }

    let mut loadings = DMatrix::zeros(c, k);
    for (jj, &idx) in order.iter().take(k).enumerate() {
        let mut col: DVector<f64> = eig.eigenvectors.column(idx).into();
        // Deterministic sign: largest-|entry| positive.
        let mut best = 0;
        for i in 1..c {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
        loadings.set_column(jj, &col);
    }
    Ok(FeatureSelection::Pca {
        loadings,
        standardization,
        explained,
        k,
    })
}

/// Fit-and-apply convenience wrapper.
pub fn select_features(
    matrix: &CompositionMatrix,
    selection: &FeatureSelection,
) -> Result<CompositionMatrix> {
    selection.apply(matrix)
}
