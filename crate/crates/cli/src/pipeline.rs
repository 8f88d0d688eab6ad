//! The `run` command: ingest -> preprocess -> fit/score each detector ->
//! evaluate -> write artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use geochem::compositional::{
    clr_transform, ilr_transform, select_features, standardize, CompositionMatrix,
    FeatureSelection,
};
use geochem::detectors::{
    IsolationForestConfig, IsolationForestDetector, KnnDistanceDetector, MahalanobisDetector,
    OcsvmConfig, OcsvmDetector, ZscoreDetector,
};
use geochem::error::{Error, Result};
use geochem::eval::{run_protocol, EvalReport};
use geochem::geochemformer::{
    EdmConfig, GeoChemFormerConfig, GeoChemFormerDetector, SclConfig, T1Detector,
};
use geochem::geodata::{handle_abnormal_values, parse_deposits_csv, parse_survey_csv, Survey};
use geochem::nn::{AeConfig, AutoencoderDetector, EncoderConfig, VaeConfig, VaeDetector};
use geochem::spatial::SpatialIndex;

use crate::config::{DetectorBlock, PipelineConfig, TransformChoice};

/// Everything a detector can see: the preprocessed features, the geometry,
/// and the stage-1 regression target. Deposits are deliberately absent.
pub struct PipelineData {
    pub features: CompositionMatrix,
    pub index: SpatialIndex,
    pub survey: Survey,
    /// Standardized target-element values for spatial context learning.
    pub targets: Option<Vec<f64>>,
    /// Index of the target element among the survey's elements.
    pub target_id: Option<usize>,
    pub n_element_ids: usize,
    /// Column of the target element within `features`, when it survived
    /// selection/transform renaming.
    pub target_feature_col: Option<usize>,
}

/// One fitted detector of any kind.
pub enum FittedDetector {
    Zscore(ZscoreDetector),
    Mahalanobis(MahalanobisDetector),
    KnnDist(KnnDistanceDetector),
    IsolationForest(IsolationForestDetector),
    Ocsvm(OcsvmDetector),
    Ae(AutoencoderDetector),
    Vae(VaeDetector),
    T1(T1Detector),
    Geochemformer(GeoChemFormerDetector),
}

impl FittedDetector {
    pub fn score(&self, data: &PipelineData) -> Result<Vec<f64>> {
        match self {
            FittedDetector::Zscore(d) => d.score(&data.features),
            FittedDetector::Mahalanobis(d) => d.score(&data.features),
            FittedDetector::KnnDist(d) => d.score(&data.features),
            FittedDetector::IsolationForest(d) => d.score(&data.features),
            FittedDetector::Ocsvm(d) => d.score(&data.features),
            FittedDetector::Ae(d) => d.score(&data.features),
            FittedDetector::Vae(d) => d.score(&data.features),
            FittedDetector::T1(d) => d.score(&data.features),
            FittedDetector::Geochemformer(d) => d.score(&data.features, &data.index),
        }
    }

    pub fn snapshot_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Snapshot<'a, T: Serialize> {
            format_version: u32,
            kind: &'a str,
            model: T,
        }
        fn wrap<T: Serialize>(kind: &str, model: &T) -> Result<String> {
            Ok(serde_json::to_string_pretty(&Snapshot {
                format_version: 1,
                kind,
                model,
            })?)
        }
        match self {
            FittedDetector::Zscore(d) => wrap("zscore", d),
            FittedDetector::Mahalanobis(d) => wrap("mahalanobis", d),
            FittedDetector::KnnDist(d) => wrap("knn_dist", d),
            FittedDetector::IsolationForest(d) => wrap("isolation_forest", d),
            FittedDetector::Ocsvm(d) => wrap("ocsvm", d),
            FittedDetector::Ae(d) => wrap("ae", d),
            FittedDetector::Vae(d) => wrap("vae", d),
            FittedDetector::T1(d) => wrap("t1", d),
            FittedDetector::Geochemformer(d) => wrap("geochemformer", d),
        }
    }
}

fn encoder_from(
    d_model: usize,
    n_layers: usize,
    n_heads: usize,
    ff_width: usize,
    dropout: f64,
) -> EncoderConfig {
    EncoderConfig {
        n_layers,
        d_model,
        n_heads,
        ff_width,
        dropout,
    }
}

/// Fit one detector block on the pipeline data.
pub fn fit_detector(block: &DetectorBlock, data: &PipelineData) -> Result<FittedDetector> {
    match block {
        DetectorBlock::Zscore { use_target } => {
            let target = if *use_target {
                match data.target_feature_col {
                    Some(c) => Some(c),
                    None => {
                        return Err(Error::Config(
                            "zscore.use_target needs the target element present in the feature matrix".into(),
                        ))
                    }
                }
            } else {
                None
            };
            Ok(FittedDetector::Zscore(ZscoreDetector::fit(
                &data.features,
                target,
            )?))
        }
        DetectorBlock::Mahalanobis {} => Ok(FittedDetector::Mahalanobis(
            MahalanobisDetector::fit(&data.features)?,
        )),
        DetectorBlock::KnnDist { k } => Ok(FittedDetector::KnnDist(KnnDistanceDetector::fit(
            &data.features,
            *k,
        )?)),
        DetectorBlock::IsolationForest {
            n_trees,
            subsample,
            seed,
        } => Ok(FittedDetector::IsolationForest(
            IsolationForestDetector::fit(
                &data.features,
                IsolationForestConfig {
                    n_trees: *n_trees,
                    subsample: *subsample,
                    seed: *seed,
                },
            )?,
        )),
        DetectorBlock::Ocsvm { nu, gamma } => Ok(FittedDetector::Ocsvm(OcsvmDetector::fit(
            &data.features,
            OcsvmConfig {
                nu: *nu,
                gamma: *gamma,
                ..OcsvmConfig::default()
            },
        )?)),
        DetectorBlock::Ae {
            hidden,
            latent,
            epochs,
            batch_size,
            lr,
            seed,
        } => Ok(FittedDetector::Ae(AutoencoderDetector::fit(
            &data.features,
            AeConfig {
                hidden: *hidden,
                latent: *latent,
                epochs: *epochs,
                batch_size: *batch_size,
                lr: *lr,
                seed: *seed,
            },
        )?)),
        DetectorBlock::Vae {
            hidden,
            latent,
            epochs,
            batch_size,
            lr,
            beta,
            seed,
        } => Ok(FittedDetector::Vae(VaeDetector::fit(
            &data.features,
            VaeConfig {
                hidden: *hidden,
                latent: *latent,
                epochs: *epochs,
                batch_size: *batch_size,
                lr: *lr,
                beta: *beta,
                seed: *seed,
            },
        )?)),
        DetectorBlock::T1 {
            epochs,
            batch_size,
            lr,
            mask_rate,
            d_model,
            n_layers,
            n_heads,
            ff_width,
            dropout,
            seed,
        } => Ok(FittedDetector::T1(T1Detector::fit(
            &data.features,
            &EdmConfig {
                encoder: encoder_from(*d_model, *n_layers, *n_heads, *ff_width, *dropout),
                epochs: *epochs,
                batch_size: *batch_size,
                lr: *lr,
                mask_rate: *mask_rate,
                seed: *seed,
            },
        )?)),
        DetectorBlock::Geochemformer {
            k_neighbors,
            scl_epochs,
            edm_epochs,
            batch_size,
            lr,
            mask_rate,
            d_model,
            n_layers,
            n_heads,
            ff_width,
            dropout,
            seed,
        } => {
            let targets = data.targets.as_ref().ok_or_else(|| {
                Error::Config("geochemformer needs [target].element in the config".into())
            })?;
            let target_id = data.target_id.expect("targets imply a target id");
            let cfg = GeoChemFormerConfig {
                scl: SclConfig {
                    encoder: encoder_from(*d_model, *n_layers, *n_heads, *ff_width, *dropout),
                    k_neighbors: *k_neighbors,
                    epochs: *scl_epochs,
                    batch_size: *batch_size,
                    lr: *lr,
                    seed: *seed,
                },
                edm: EdmConfig {
                    encoder: encoder_from(*d_model, *n_layers, *n_heads, *ff_width, *dropout),
                    epochs: *edm_epochs,
                    batch_size: *batch_size,
                    lr: *lr,
                    mask_rate: *mask_rate,
                    seed: *seed,
                },
            };
            Ok(FittedDetector::Geochemformer(GeoChemFormerDetector::fit(
                &data.features,
                &data.index,
                targets,
                target_id,
                data.n_element_ids,
                &cfg,
            )?))
        }
    }
}

/// Build the preprocessed pipeline inputs from a loaded config.
pub fn prepare_data(cfg: &PipelineConfig) -> Result<PipelineData> {
    let survey = parse_survey_csv(
        &cfg.input.survey,
        cfg.input.element_filter.as_deref(),
    )?;
    let survey = handle_abnormal_values(&survey, cfg.preprocess.abnormal)?;
    let positions = survey.positions();
    let index = SpatialIndex::build(&positions)?;

    let (raw, _dropped) = CompositionMatrix::from_survey(&survey)?;

    let transform = |m: &CompositionMatrix| -> Result<CompositionMatrix> {
        match cfg.preprocess.transform {
            TransformChoice::Raw => Ok(m.clone()),
            TransformChoice::Clr => clr_transform(m),
            TransformChoice::Ilr => ilr_transform(m),
        }
    };

    let selection_cfg = &cfg.preprocess.selection;
    let features = if selection_cfg.before_transform {
        let strategy = selection_cfg.to_strategy(&raw.element_names().to_vec())?;
        let selection = FeatureSelection::fit(&raw, &strategy)?;
        let selected = select_features(&raw, &selection)?;
        let transformed = transform(&selected)?;
        if cfg.preprocess.standardize {
            standardize(&transformed).0
        } else {
            transformed
        }
    } else {
        let transformed = transform(&raw)?;
        let staged = if cfg.preprocess.standardize {
            standardize(&transformed).0
        } else {
            transformed
        };
        let strategy = selection_cfg.to_strategy(&staged.element_names().to_vec())?;
        let selection = FeatureSelection::fit(&staged, &strategy)?;
        select_features(&staged, &selection)?
    };

    // Stage-1 regression targets: the standardized transformed value of the
    // target element, taken before selection can remove or rename it. Under
    // ILR (which has no per-element columns) the CLR column stands in.
    let (targets, target_id, target_feature_col) = match &cfg.target.element {
        Some(symbol) => {
            let target_id = survey.element_index(symbol).ok_or_else(|| {
                Error::Config(format!("target element `{symbol}` not in the survey"))
            })?;
            let column_name = survey.elements[target_id].column_name.clone();
            let basis = match cfg.preprocess.transform {
                TransformChoice::Raw => raw.clone(),
                _ => clr_transform(&raw)?,
            };
            let standardized = standardize(&basis).0;
            let col = standardized.column_index(&column_name).ok_or_else(|| {
                Error::Config(format!("target column `{column_name}` lost in preprocessing"))
            })?;
            let targets = standardized.col_vec(col);
            let feature_col = features.column_index(&column_name);
            (Some(targets), Some(target_id), feature_col)
        }
        None => (None, None, None),
    };

    Ok(PipelineData {
        n_element_ids: survey.n_elements(),
        features,
        index,
        survey,
        targets,
        target_id,
        target_feature_col,
    })
}

/// Stable hex hash of a detector block plus the preprocessing/protocol
/// context it ran under.
pub fn config_hash(cfg: &PipelineConfig, block: &DetectorBlock) -> Result<String> {
    #[derive(Serialize)]
    struct HashInput<'a> {
        preprocess: &'a crate::config::PreprocessConfig,
        target: &'a crate::config::TargetConfig,
        protocol: &'a crate::config::ProtocolConfig,
        detector: &'a DetectorBlock,
    }
    let json = serde_json::to_string(&HashInput {
        preprocess: &cfg.preprocess,
        target: &cfg.target,
        protocol: &cfg.protocol,
        detector: block,
    })?;
    let digest = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{b:02x}").expect("hex formatting");
    }
    Ok(hex)
}

/// Ten-significant-digit score formatting used in every scored CSV.
pub fn format_score(v: f64) -> String {
    format!("{v:.9e}")
}

fn write_scored_csv(path: &Path, data: &PipelineData, scores: &[f64]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_path(path).map_err(Error::from)?;
    wtr.write_record(["SAMPLEID", "x", "y", "score"])?;
    for (s, score) in data.survey.samples.iter().zip(scores) {
        wtr.write_record([
            s.id.as_str(),
            &format!("{}", s.position[0]),
            &format!("{}", s.position[1]),
            &format_score(*score),
        ])?;
    }
    wtr.flush().map_err(Error::from)?;
    Ok(())
}

/// Per-stage outcome recorded in the run manifest.
#[derive(Debug, Clone, Serialize)]
pub struct StageStatus {
    pub stage: String,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub dataset_id: String,
    pub stages: Vec<StageStatus>,
    pub artifacts: Vec<String>,
}

/// Unique artifact labels: the detector kind, suffixed when a kind repeats.
pub fn detector_labels(blocks: &[DetectorBlock]) -> Vec<String> {
    let mut labels = Vec::with_capacity(blocks.len());
    for (i, b) in blocks.iter().enumerate() {
        let kind = b.kind_str().to_string();
        let duplicated = blocks
            .iter()
            .enumerate()
            .any(|(j, other)| j != i && other.kind_str() == b.kind_str());
        labels.push(if duplicated {
            format!("{kind}_{i}")
        } else {
            kind
        });
    }
    labels
}

pub struct RunOutput {
    pub out_dir: PathBuf,
    pub reports: Vec<EvalReport>,
}

/// Execute the full pipeline. On a stage failure, the manifest still lists
/// completed stages and retained artifacts before the error propagates.
pub fn cmd_run(cfg: &PipelineConfig, parallel_detectors: bool) -> Result<RunOutput> {
    if cfg.detectors.is_empty() {
        return Err(Error::Config("config lists no detectors".into()));
    }
    let out_dir = resolve_out_dir(&cfg.output.dir);
    std::fs::create_dir_all(&out_dir)?;

    let mut manifest = Manifest {
        dataset_id: cfg.dataset_id.clone(),
        stages: Vec::new(),
        artifacts: Vec::new(),
    };

    let finish = |manifest: &Manifest, out_dir: &Path| -> Result<()> {
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(manifest)?)?;
        Ok(())
    };

    macro_rules! stage {
        ($name:expr, $manifest:expr, $body:expr) => {
            match $body {
                Ok(v) => {
                    $manifest.stages.push(StageStatus {
                        stage: $name.to_string(),
                        status: "ok".to_string(),
                    });
                    v
                }
                Err(e) => {
                    $manifest.stages.push(StageStatus {
                        stage: $name.to_string(),
                        status: format!("failed: {e}"),
                    });
                    finish(&$manifest, &out_dir)?;
                    return Err(e);
                }
            }
        };
    }

    let data = stage!("ingest+preprocess", manifest, prepare_data(cfg));
    let deposits = stage!(
        "deposits",
        manifest,
        parse_deposits_csv(&cfg.input.deposits)
    );

    let labels = detector_labels(&cfg.detectors);
    let protocol = cfg.protocol.to_protocol();

    // Fit and score each detector. Fits share only immutable inputs, so the
    // opt-in flag may run them concurrently.
    let fit_and_score = |i: usize| -> Result<(Vec<f64>, Option<String>)> {
        let block = &cfg.detectors[i];
        let fitted = fit_detector(block, &data)?;
        let scores = fitted.score(&data)?;
        let snapshot = if cfg.output.save_models {
            Some(fitted.snapshot_json()?)
        } else {
            None
        };
        Ok((scores, snapshot))
    };
    let results: Vec<Result<(Vec<f64>, Option<String>)>> = if parallel_detectors {
        geochem::par::map_indexed(cfg.detectors.len(), fit_and_score)
    } else {
        (0..cfg.detectors.len()).map(fit_and_score).collect()
    };

    let mut reports = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        let label = &labels[i];
        let block = &cfg.detectors[i];
        let (scores, snapshot) = stage!(format!("detector:{label}"), manifest, result);

        let scored_path = out_dir.join(format!("scores_{label}.csv"));
        stage!(
            format!("write:{label}"),
            manifest,
            write_scored_csv(&scored_path, &data, &scores)
        );
        manifest.artifacts.push(scored_path.display().to_string());

        if let Some(json) = snapshot {
            let model_path = out_dir.join(format!("model_{label}.json"));
            std::fs::write(&model_path, json)?;
            manifest.artifacts.push(model_path.display().to_string());
        }

        let hash = config_hash(cfg, block)?;
        let report = stage!(
            format!("evaluate:{label}"),
            manifest,
            run_protocol(label, &hash, &scores, &data.index, &deposits, &protocol)
        );
        let report_path = out_dir.join(format!("report_{label}.json"));
        std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
        manifest.artifacts.push(report_path.display().to_string());
        reports.push(report);
    }

    // Comparison table shaped like a dataset-by-detector AUC matrix.
    let table_path = out_dir.join("comparison.csv");
    {
        let mut wtr = csv::WriterBuilder::new()
            .from_path(&table_path)
            .map_err(Error::from)?;
        let mut header = vec!["dataset".to_string()];
        header.extend(labels.iter().cloned());
        wtr.write_record(&header)?;
        let mut row = vec![cfg.dataset_id.clone()];
        row.extend(reports.iter().map(|r| format!("{}", r.auc_mean)));
        wtr.write_record(&row)?;
        wtr.flush().map_err(Error::from)?;
    }
    manifest.artifacts.push(table_path.display().to_string());

    // Long-format rows, one per (dataset, detector), for cross-run assembly.
    let rows_path = out_dir.join("report_rows.csv");
    {
        let mut text = String::from(EvalReport::CSV_HEADER);
        text.push('\n');
        for report in &reports {
            text.push_str(&report.csv_row(&cfg.dataset_id));
            text.push('\n');
        }
        std::fs::write(&rows_path, text)?;
    }
    manifest.artifacts.push(rows_path.display().to_string());

    finish(&manifest, &out_dir)?;
    Ok(RunOutput { out_dir, reports })
}

/// Output directory resolution: config value, then $GEOCHEM_OUT_DIR, then
/// ./out.
pub fn resolve_out_dir(configured: &Option<String>) -> PathBuf {
    if let Some(dir) = configured {
        return PathBuf::from(dir);
    }
    if let Ok(dir) = std::env::var("GEOCHEM_OUT_DIR") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from("out")
}
