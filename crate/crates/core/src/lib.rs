//! Unsupervised geochemical anomaly detection at survey scale.
//!
//! The pipeline runs: survey ingest and abnormal-value handling
//! ([`geodata`]), compositional transforms and feature selection
//! ([`compositional`]), spatial indexing and interpolation ([`spatial`]),
//! anomaly scorers from z-score through a two-stage transformer
//! ([`detectors`], [`nn`], [`geochemformer`]), and a repeated-background
//! evaluation protocol ([`eval`]). [`synth`] generates surveys with planted
//! mineralization halos so the whole stack is verifiable without field data.
//!
//! Inner loops that are data-parallel (per-row scoring, rasterization,
//! per-sample gradients) fan out over rayon when the default `parallel`
//! feature is on and degrade to sequential loops without it; results are
//! identical on both paths.

pub mod compositional;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod geochemformer;
pub mod geodata;
pub mod nn;
pub mod par;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
