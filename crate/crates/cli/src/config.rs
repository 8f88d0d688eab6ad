//! TOML pipeline configuration.
//!
//! One file drives a whole `run`: input paths, preprocessing, a list of
//! detector blocks, and the evaluation protocol. Every field has a default
//! except the survey/deposit paths, so a minimal config is just the
//! `[input]` table and one `[[detectors]]` block.

use serde::{Deserialize, Serialize};

use geochem::compositional::SelectionStrategy;
use geochem::eval::EvalProtocol;
use geochem::geodata::AbnormalStrategy;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Row label in the comparison table.
    #[serde(default = "default_dataset_id")]
    pub dataset_id: String,
    pub input: InputConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub target: TargetConfig,
    pub detectors: Vec<DetectorBlock>,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_dataset_id() -> String {
    "dataset".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub survey: String,
    pub deposits: String,
    /// Optional subset of element symbols to ingest.
    #[serde(default)]
    pub element_filter: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformChoice {
    Raw,
    Clr,
    Ilr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub abnormal: AbnormalStrategy,
    pub transform: TransformChoice,
    pub standardize: bool,
    pub selection: SelectionConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            abnormal: AbnormalStrategy::HalfDetectionLimit,
            transform: TransformChoice::Clr,
            standardize: true,
            selection: SelectionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// all | manual | pca
    pub strategy: String,
    /// Column names retained by manual selection.
    pub columns: Vec<String>,
    pub variance_threshold: f64,
    /// Apply selection before the compositional transform instead of after.
    pub before_transform: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            strategy: "all".to_string(),
            columns: Vec::new(),
            variance_threshold: 0.95,
            before_transform: false,
        }
    }
}

impl SelectionConfig {
    pub fn to_strategy(
        &self,
        column_names: &[String],
    ) -> Result<SelectionStrategy, geochem::Error> {
        match self.strategy.as_str() {
            "all" => Ok(SelectionStrategy::All),
            "manual" => {
                let mut columns = Vec::new();
                for name in &self.columns {
                    let idx = column_names
                        .iter()
                        .position(|n| n == name)
                        .ok_or_else(|| {
                            geochem::Error::Config(format!(
                                "manual selection names unknown column `{name}`"
                            ))
                        })?;
                    columns.push(idx);
                }
                Ok(SelectionStrategy::Manual { columns })
            }
            "pca" => Ok(SelectionStrategy::Pca {
                variance_threshold: self.variance_threshold,
            }),
            other => Err(geochem::Error::Config(format!(
                "unknown selection strategy `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    /// Target element symbol (e.g. "Au"); required by the transformer
    /// detectors and by zscore blocks with `use_target`.
    pub element: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub n_runs: usize,
    pub bg_per_pos: usize,
    pub deposit_match_radius: f64,
    pub exclusion_radius: f64,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let p = EvalProtocol::default();
        ProtocolConfig {
            n_runs: p.n_runs,
            bg_per_pos: p.bg_per_pos,
            deposit_match_radius: p.deposit_match_radius,
            exclusion_radius: p.exclusion_radius,
            seed: p.seed,
        }
    }
}

impl ProtocolConfig {
    pub fn to_protocol(&self) -> EvalProtocol {
        EvalProtocol {
            n_runs: self.n_runs,
            bg_per_pos: self.bg_per_pos,
            deposit_match_radius: self.deposit_match_radius,
            exclusion_radius: self.exclusion_radius,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Output directory; falls back to $GEOCHEM_OUT_DIR, then "./out".
    pub dir: Option<String>,
    /// Also write fitted-detector snapshots (versioned JSON).
    pub save_models: bool,
}

// ---------------------------------------------------------------------------
// Detector blocks

fn d_knn_k() -> usize {
    10
}
fn d_trees() -> usize {
    100
}
fn d_subsample() -> usize {
    256
}
fn d_nu() -> f64 {
    0.1
}
fn d_hidden() -> usize {
    64
}
fn d_latent() -> usize {
    16
}
fn d_epochs() -> usize {
    100
}
fn d_batch() -> usize {
    64
}
fn d_lr() -> f64 {
    1e-3
}
fn d_beta() -> f64 {
    1.0
}
fn d_k_neighbors() -> usize {
    128
}
fn d_scl_epochs() -> usize {
    40
}
fn d_d_model() -> usize {
    64
}
fn d_layers() -> usize {
    2
}
fn d_heads() -> usize {
    4
}
fn d_ff() -> usize {
    128
}
fn d_dropout() -> f64 {
    0.1
}
fn d_mask_rate() -> f64 {
    0.15
}

/// One detector to fit, score, and evaluate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorBlock {
    Zscore {
        /// Score only the configured target element instead of max |z|.
        #[serde(default)]
        use_target: bool,
    },
    Mahalanobis {},
    KnnDist {
        #[serde(default = "d_knn_k")]
        k: usize,
    },
    IsolationForest {
        #[serde(default = "d_trees")]
        n_trees: usize,
        #[serde(default = "d_subsample")]
        subsample: usize,
        #[serde(default)]
        seed: u64,
    },
    Ocsvm {
        #[serde(default = "d_nu")]
        nu: f64,
        #[serde(default)]
        gamma: Option<f64>,
    },
    Ae {
        #[serde(default = "d_hidden")]
        hidden: usize,
        #[serde(default = "d_latent")]
        latent: usize,
        #[serde(default = "d_epochs")]
        epochs: usize,
        #[serde(default = "d_batch")]
        batch_size: usize,
        #[serde(default = "d_lr")]
        lr: f64,
        #[serde(default)]
        seed: u64,
    },
    Vae {
        #[serde(default = "d_hidden")]
        hidden: usize,
        #[serde(default = "d_latent")]
        latent: usize,
        #[serde(default = "d_epochs")]
        epochs: usize,
        #[serde(default = "d_batch")]
        batch_size: usize,
        #[serde(default = "d_lr")]
        lr: f64,
        #[serde(default = "d_beta")]
        beta: f64,
        #[serde(default)]
        seed: u64,
    },
    T1 {
        #[serde(default = "d_epochs")]
        epochs: usize,
        #[serde(default = "d_batch")]
        batch_size: usize,
        #[serde(default = "d_lr")]
        lr: f64,
        #[serde(default = "d_mask_rate")]
        mask_rate: f64,
        #[serde(default = "d_d_model")]
        d_model: usize,
        #[serde(default = "d_layers")]
        n_layers: usize,
        #[serde(default = "d_heads")]
        n_heads: usize,
        #[serde(default = "d_ff")]
        ff_width: usize,
        #[serde(default = "d_dropout")]
        dropout: f64,
        #[serde(default)]
        seed: u64,
    },
    Geochemformer {
        #[serde(default = "d_k_neighbors")]
        k_neighbors: usize,
        #[serde(default = "d_scl_epochs")]
        scl_epochs: usize,
        #[serde(default = "d_epochs")]
        edm_epochs: usize,
        #[serde(default = "d_batch")]
        batch_size: usize,
        #[serde(default = "d_lr")]
        lr: f64,
        #[serde(default = "d_mask_rate")]
        mask_rate: f64,
        #[serde(default = "d_d_model")]
        d_model: usize,
        #[serde(default = "d_layers")]
        n_layers: usize,
        #[serde(default = "d_heads")]
        n_heads: usize,
        #[serde(default = "d_ff")]
        ff_width: usize,
        #[serde(default = "d_dropout")]
        dropout: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DetectorBlock {
    pub fn kind_str(&self) -> &'static str {
        match self {
            DetectorBlock::Zscore { .. } => "zscore",
            DetectorBlock::Mahalanobis {} => "mahalanobis",
            DetectorBlock::KnnDist { .. } => "knn_dist",
            DetectorBlock::IsolationForest { .. } => "isolation_forest",
            DetectorBlock::Ocsvm { .. } => "ocsvm",
            DetectorBlock::Ae { .. } => "ae",
            DetectorBlock::Vae { .. } => "vae",
            DetectorBlock::T1 { .. } => "t1",
            DetectorBlock::Geochemformer { .. } => "geochemformer",
        }
    }
}

/// Parse a config file, mapping syntax problems to config errors.
pub fn load_config(path: &std::path::Path) -> Result<PipelineConfig, geochem::Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| geochem::Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| geochem::Error::Config(format!("invalid config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let text = r#"
            [input]
            survey = "s.csv"
            deposits = "d.csv"

            [[detectors]]
            kind = "zscore"
        "#;
        let cfg: PipelineConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.dataset_id, "dataset");
        assert_eq!(cfg.protocol.n_runs, 20);
        assert_eq!(cfg.protocol.bg_per_pos, 10);
        assert!(matches!(
            cfg.preprocess.abnormal,
            AbnormalStrategy::HalfDetectionLimit
        ));
        assert_eq!(cfg.preprocess.transform, TransformChoice::Clr);
        assert!(cfg.preprocess.standardize);
        assert_eq!(cfg.detectors.len(), 1);
    }

    #[test]
    fn detector_blocks_with_overrides() {
        let text = r#"
            [input]
            survey = "s.csv"
            deposits = "d.csv"

            [[detectors]]
            kind = "geochemformer"
            k_neighbors = 16
            scl_epochs = 20
            d_model = 32
            seed = 3

            [[detectors]]
            kind = "isolation_forest"
            n_trees = 50
        "#;
        let cfg: PipelineConfig = toml::from_str(text).unwrap();
        match &cfg.detectors[0] {
            DetectorBlock::Geochemformer {
                k_neighbors,
                scl_epochs,
                d_model,
                edm_epochs,
                seed,
                ..
            } => {
                assert_eq!(*k_neighbors, 16);
                assert_eq!(*scl_epochs, 20);
                assert_eq!(*d_model, 32);
                assert_eq!(*edm_epochs, 100);
                assert_eq!(*seed, 3);
            }
            other => panic!("unexpected block {other:?}"),
        }
        assert_eq!(cfg.detectors[1].kind_str(), "isolation_forest");
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let text = r#"
            [input]
            survey = "s.csv"
            deposits = "d.csv"

            [[detectors]]
            kind = "mystery"
        "#;
        assert!(toml::from_str::<PipelineConfig>(text).is_err());
    }
}
