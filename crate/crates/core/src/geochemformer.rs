//! Two-stage transformer anomaly detector.
//!
//! Stage 1 (spatial context learning) predicts a sample's target-element
//! concentration purely from its K nearest neighbours; the sample's own
//! values never enter the input, so the learned query representation
//! summarizes the surrounding geochemistry. Stage 2 (element dependency
//! modelling) reconstructs every element of a sample from element-identity
//! tokens conditioned on that spatial context; the anomaly score is the mean
//! squared reconstruction error across elements. The vanilla-transformer
//! baseline is stage 2 with the context token removed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compositional::CompositionMatrix;
use crate::error::{Error, Result};
use crate::nn::encoder::{
    encoder_forward, positional_encoding_2d, BoundEncoder, DropoutCtx, EncoderParams, MASK_BIAS,
};
use crate::nn::{derive_seed, AdamConfig, AdamState, EncoderConfig, ParamSet, Tape, Tensor, Var};
use crate::par;
use crate::spatial::SpatialIndex;

/// Tokens in the stage-1 sequence before the neighbour block (target-element
/// token and query token); the neighbour block behind them is an unordered
/// set.
const SCL_PREFIX: usize = 2;

/// Gradient accumulation chunk size; fixed so floating-point reduction order
/// never depends on thread scheduling.
const GRAD_CHUNK: usize = 8;

// ---------------------------------------------------------------------------
// Coordinate normalization and neighbourhood construction

/// Survey-wide constants that make coordinates O(1) for the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordNormalization {
    pub centroid: [f64; 2],
    /// Per-axis population standard deviation (1.0 when degenerate).
    pub scale: [f64; 2],
    /// Mean nearest-neighbour distance; offsets are expressed in this unit.
    pub avg_sampling_distance: f64,
}

impl CoordNormalization {
    pub fn fit(index: &SpatialIndex) -> Result<Self> {
        let pts = index.points();
        let n = pts.len() as f64;
        let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        let sx = (pts.iter().map(|p| (p[0] - cx).powi(2)).sum::<f64>() / n).sqrt();
        let sy = (pts.iter().map(|p| (p[1] - cy).powi(2)).sum::<f64>() / n).sqrt();
        Ok(CoordNormalization {
            centroid: [cx, cy],
            scale: [
                if sx > 1e-12 { sx } else { 1.0 },
                if sy > 1e-12 { sy } else { 1.0 },
            ],
            avg_sampling_distance: index.average_sampling_distance()?,
        })
    }

    pub fn normalize(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.centroid[0]) / self.scale[0],
            (p[1] - self.centroid[1]) / self.scale[1],
        ]
    }
}

/// One neighbour of a query location: relative offset in
/// average-sampling-distance units plus the neighbour's preprocessed feature
/// vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborToken {
    pub offset: [f64; 2],
    pub features: Vec<f64>,
}

/// Stage-1 input sequence for one query sample. Always holds exactly K
/// neighbour slots; `valid[j]` is false for padding, which attention masks
/// out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SclSequence {
    pub target_element: usize,
    /// Normalized query coordinates.
    pub query: [f64; 2],
    pub neighbors: Vec<NeighborToken>,
    pub valid: Vec<bool>,
}

/// Compact neighbourhood layout kept during training (features are read from
/// the matrix at forward time instead of being copied per sequence).
#[derive(Debug, Clone)]
struct NeighborhoodPlan {
    query: [f64; 2],
    neighbor_ids: Vec<usize>,
    offsets: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

fn plan_neighborhood(
    index: &SpatialIndex,
    sample: usize,
    k: usize,
    norm: &CoordNormalization,
) -> NeighborhoodPlan {
    let pos = index.point(sample);
    let found = index.knn_query(pos, k, Some(sample));
    let mut neighbor_ids = Vec::with_capacity(k);
    let mut offsets = Vec::with_capacity(k);
    let mut valid = Vec::with_capacity(k);
    for (j, _) in &found {
        let p = index.point(*j);
        neighbor_ids.push(*j);
        offsets.push([
            (p[0] - pos[0]) / norm.avg_sampling_distance,
            (p[1] - pos[1]) / norm.avg_sampling_distance,
        ]);
        valid.push(true);
    }
    while neighbor_ids.len() < k {
        neighbor_ids.push(usize::MAX);
        offsets.push([0.0, 0.0]);
        valid.push(false);
    }
    NeighborhoodPlan {
        query: norm.normalize(pos),
        neighbor_ids,
        offsets,
        valid,
    }
}

/// Build the stage-1 token sequence for one sample: K nearest neighbours
/// (self excluded, nearest first), offsets in average-sampling-distance
/// units, padded and masked when fewer than K neighbours exist.
pub fn build_neighborhood_tokens(
    survey_matrix: &CompositionMatrix,
    index: &SpatialIndex,
    sample: usize,
    k: usize,
    target_element: usize,
    norm: &CoordNormalization,
) -> Result<SclSequence> {
    if index.len() < 2 {
        return Err(Error::Validation(
            "neighbourhood construction needs at least two samples".into(),
        ));
    }
    if k == 0 {
        return Err(Error::Config("neighbour count K must be >= 1".into()));
    }
    if sample >= index.len() || survey_matrix.n_rows() != index.len() {
        return Err(Error::Dimension(
            "sample index or matrix misaligned with spatial index".into(),
        ));
    }
    let plan = plan_neighborhood(index, sample, k, norm);
    let c = survey_matrix.n_cols();
    let neighbors = plan
        .neighbor_ids
        .iter()
        .zip(&plan.offsets)
        .zip(&plan.valid)
        .map(|((&id, &offset), &ok)| NeighborToken {
            offset,
            features: if ok {
                survey_matrix.row_vec(id)
            } else {
                vec![0.0; c]
            },
        })
        .collect();
    Ok(SclSequence {
        target_element,
        query: plan.query,
        neighbors,
        valid: plan.valid,
    })
}

// ---------------------------------------------------------------------------
// Stage 1: spatial context learning

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SclConfig {
    pub encoder: EncoderConfig,
    pub k_neighbors: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SclConfig {
    fn default() -> Self {
        SclConfig {
            encoder: EncoderConfig::default(),
            k_neighbors: 128,
            epochs: 40,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SclSlots {
    elem_embed: usize,
    coord_w: usize,
    coord_b: usize,
    tok_w: usize,
    tok_b: usize,
    encoder: EncoderParams,
    pred_w: usize,
    pred_b: usize,
}

/// Trained stage-1 encoder plus the coordinate normalization it was fitted
/// under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialContextModel {
    pub cfg: SclConfig,
    pub target_element: usize,
    pub n_features: usize,
    pub norm: CoordNormalization,
    params: ParamSet,
    slots: SclSlots,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
}

impl SpatialContextModel {
    fn init(
        cfg: &SclConfig,
        n_element_ids: usize,
        n_features: usize,
        target_element: usize,
        norm: CoordNormalization,
    ) -> Result<Self> {
        cfg.encoder.validate()?;
        let d = cfg.encoder.d_model;
        if d % 4 != 0 {
            return Err(Error::Config(
                "spatial context learning needs d_model divisible by 4 for the 2-D positional encoding".into(),
            ));
        }
        if cfg.k_neighbors == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if target_element >= n_element_ids {
            return Err(Error::Config(format!(
                "target element id {target_element} out of range ({n_element_ids} ids)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x5c1]));
        let mut params = ParamSet::new();
        let slots = SclSlots {
            elem_embed: params.add("scl.elem_embed", Tensor::xavier(n_element_ids, d, &mut rng)),
            coord_w: params.add("scl.coord_w", Tensor::xavier(2, d, &mut rng)),
            coord_b: params.add("scl.coord_b", Tensor::zeros(1, d)),
            tok_w: params.add("scl.tok_w", Tensor::xavier(2 + n_features, d, &mut rng)),
            tok_b: params.add("scl.tok_b", Tensor::zeros(1, d)),
            encoder: EncoderParams::init(&mut params, &cfg.encoder, "scl.enc", &mut rng),
            pred_w: params.add("scl.pred_w", Tensor::xavier(d, 1, &mut rng)),
            pred_b: params.add("scl.pred_b", Tensor::zeros(1, 1)),
        };
        Ok(SpatialContextModel {
            cfg: *cfg,
            target_element,
            n_features,
            norm,
            params,
            slots,
            loss_trace: Vec::new(),
        })
    }

    /// Forward pass for one sequence; returns (q', yhat). `feature_row` maps
    /// a valid neighbour slot to its feature vector.
    fn forward_tokens(
        &self,
        tape: &mut Tape,
        query: [f64; 2],
        offsets: &[[f64; 2]],
        valid: &[bool],
        feature_row: &mut dyn FnMut(usize) -> Vec<f64>,
        train_ctx: Option<DropoutCtx<'_>>,
    ) -> (Var, Var) {
        let d = self.cfg.encoder.d_model;
        let k = offsets.len();
        let c = self.n_features;

        let embed = tape.param(
            self.slots.elem_embed,
            self.params.tensor(self.slots.elem_embed),
        );
        let e_tok = tape.gather_rows(embed, &[self.target_element]);

        let coord_w = tape.param(self.slots.coord_w, self.params.tensor(self.slots.coord_w));
        let coord_b = tape.param(self.slots.coord_b, self.params.tensor(self.slots.coord_b));
        let q_in = tape.leaf(Tensor::from_vec(1, 2, vec![query[0], query[1]]));
        let q_proj = tape.matmul(q_in, coord_w);
        let q_proj = tape.add_row_broadcast(q_proj, coord_b);
        let pe = tape.leaf(positional_encoding_2d(query[0], query[1], d));
        let q_tok = tape.add(q_proj, pe);

        let mut nb = Tensor::zeros(k, 2 + c);
        for j in 0..k {
            nb.data[j * (2 + c)] = offsets[j][0];
            nb.data[j * (2 + c) + 1] = offsets[j][1];
            if valid[j] {
                let row = feature_row(j);
                nb.data[j * (2 + c) + 2..(j + 1) * (2 + c)].copy_from_slice(&row);
            }
        }
        let nb_in = tape.leaf(nb);
        let tok_w = tape.param(self.slots.tok_w, self.params.tensor(self.slots.tok_w));
        let tok_b = tape.param(self.slots.tok_b, self.params.tensor(self.slots.tok_b));
        let n_tok = tape.matmul(nb_in, tok_w);
        let n_tok = tape.add_row_broadcast(n_tok, tok_b);

        let x = tape.concat_rows(&[e_tok, q_tok, n_tok]);

        let mask = if valid.iter().all(|&v| v) {
            None
        } else {
            let mut bias = vec![0.0; k + SCL_PREFIX];
            for (j, &ok) in valid.iter().enumerate() {
                if !ok {
                    bias[SCL_PREFIX + j] = MASK_BIAS;
                }
            }
            Some(tape.leaf(Tensor::from_vec(1, k + SCL_PREFIX, bias)))
        };

        let bound = BoundEncoder::bind(tape, &self.params, &self.slots.encoder);
        let enc = encoder_forward(
            tape,
            &bound,
            &self.cfg.encoder,
            x,
            mask,
            SCL_PREFIX,
            train_ctx,
        );
        let q_prime = tape.slice_rows(enc, 1, 1);

        let pred_w = tape.param(self.slots.pred_w, self.params.tensor(self.slots.pred_w));
        let pred_b = tape.param(self.slots.pred_b, self.params.tensor(self.slots.pred_b));
        let yhat = tape.matmul(q_prime, pred_w);
        let yhat = tape.add_row_broadcast(yhat, pred_b);
        (q_prime, yhat)
    }

    fn forward_plan(
        &self,
        tape: &mut Tape,
        plan: &NeighborhoodPlan,
        features: &CompositionMatrix,
        train_ctx: Option<DropoutCtx<'_>>,
    ) -> (Var, Var) {
        let ids = &plan.neighbor_ids;
        self.forward_tokens(
            tape,
            plan.query,
            &plan.offsets,
            &plan.valid,
            &mut |j| features.row_vec(ids[j]),
            train_ctx,
        )
    }

    fn forward_sequence(&self, tape: &mut Tape, seq: &SclSequence) -> (Var, Var) {
        let offsets: Vec<[f64; 2]> = seq.neighbors.iter().map(|n| n.offset).collect();
        self.forward_tokens(
            tape,
            seq.query,
            &offsets,
            &seq.valid,
            &mut |j| seq.neighbors[j].features.clone(),
            None,
        )
    }

    /// Deterministic prediction of the target-element value at the query.
    pub fn predict(&self, seq: &SclSequence) -> f64 {
        let mut tape = Tape::new();
        let (_, yhat) = self.forward_sequence(&mut tape, seq);
        tape.value(yhat).data[0]
    }

    /// The spatial-context vector q' for the query.
    pub fn context(&self, seq: &SclSequence) -> Vec<f64> {
        let mut tape = Tape::new();
        let (q_prime, _) = self.forward_sequence(&mut tape, seq);
        tape.value(q_prime).data.clone()
    }

    /// Context vectors for every sample of a survey (parallel over samples).
    pub fn contexts_for(
        &self,
        features: &CompositionMatrix,
        index: &SpatialIndex,
    ) -> Result<Vec<Vec<f64>>> {
        if features.n_rows() != index.len() {
            return Err(Error::Dimension("matrix misaligned with index".into()));
        }
        Ok(par::map_indexed(features.n_rows(), |i| {
            let plan = plan_neighborhood(index, i, self.cfg.k_neighbors, &self.norm);
            let mut tape = Tape::new();
            let (q_prime, _) = self.forward_plan(&mut tape, &plan, features, None);
            tape.value(q_prime).data.clone()
        }))
    }

    /// Predictions for every sample (parallel over samples).
    pub fn predictions_for(
        &self,
        features: &CompositionMatrix,
        index: &SpatialIndex,
    ) -> Result<Vec<f64>> {
        if features.n_rows() != index.len() {
            return Err(Error::Dimension("matrix misaligned with index".into()));
        }
        Ok(par::map_indexed(features.n_rows(), |i| {
            let plan = plan_neighborhood(index, i, self.cfg.k_neighbors, &self.norm);
            let mut tape = Tape::new();
            let (_, yhat) = self.forward_plan(&mut tape, &plan, features, None);
            tape.value(yhat).data[0]
        }))
    }

    /// Flattened parameter vector (gradient-verification hook).
    pub fn params_flat(&self) -> Vec<f64> {
        self.params.flatten()
    }

    /// Per-sequence training loss evaluated at an explicit parameter vector;
    /// used by finite-difference checks.
    pub fn loss_for_sequence_with_params(
        &mut self,
        flat: &[f64],
        seq: &SclSequence,
        target: f64,
    ) -> f64 {
        self.params.unflatten(flat);
        let mut tape = Tape::new();
        let (_, yhat) = self.forward_sequence(&mut tape, seq);
        let y = tape.leaf(Tensor::scalar(target));
        let loss = tape.mse(yhat, y);
        tape.value(loss).data[0]
    }

    /// Analytic gradient of the per-sequence loss, flattened to match
    /// [`SpatialContextModel::params_flat`].
    pub fn loss_gradient_for_sequence(&self, seq: &SclSequence, target: f64) -> Vec<f64> {
        let mut tape = Tape::new();
        let (_, yhat) = self.forward_sequence(&mut tape, seq);
        let y = tape.leaf(Tensor::scalar(target));
        let loss = tape.mse(yhat, y);
        let grads = tape.backward(loss, self.params.len());
        flatten_slot_grads(&self.params, &grads)
    }

    /// Training-path loss over the whole dataset: mean over samples of the
    /// squared residual computed through the same tape ops the optimizer
    /// differentiates. Returns (loss, predictions).
    pub fn dataset_loss(
        &self,
        features: &CompositionMatrix,
        targets: &[f64],
        index: &SpatialIndex,
    ) -> Result<(f64, Vec<f64>)> {
        if targets.len() != features.n_rows() {
            return Err(Error::Dimension("targets misaligned with matrix".into()));
        }
        let per_sample: Vec<(f64, f64)> = par::map_indexed(features.n_rows(), |i| {
            let plan = plan_neighborhood(index, i, self.cfg.k_neighbors, &self.norm);
            let mut tape = Tape::new();
            let (_, yhat) = self.forward_plan(&mut tape, &plan, features, None);
            let y = tape.leaf(Tensor::scalar(targets[i]));
            let loss = tape.mse(yhat, y);
            (tape.value(loss).data[0], tape.value(yhat).data[0])
        });
        let n = per_sample.len() as f64;
        let loss = per_sample.iter().map(|&(l, _)| l).sum::<f64>() / n;
        let preds = per_sample.into_iter().map(|(_, p)| p).collect();
        Ok((loss, preds))
    }
}

/// Flatten per-slot gradients to align with `ParamSet::flatten`, expanding
/// untouched slots (reported as 1x1 zeros) to their parameter's shape.
fn flatten_slot_grads(params: &ParamSet, grads: &[Tensor]) -> Vec<f64> {
    let mut flat = Vec::with_capacity(params.scalar_count());
    for (slot, g) in grads.iter().enumerate() {
        let p = params.tensor(slot);
        if g.same_shape(p) {
            flat.extend_from_slice(&g.data);
        } else {
            flat.extend(std::iter::repeat(0.0).take(p.len()));
        }
    }
    flat
}

/// Accumulate per-sample gradients into `acc`, initializing shapes on first
/// contact (backward reports untouched slots as 1x1 zeros).
fn fold_grads(acc: &mut Option<Vec<Tensor>>, g: Vec<Tensor>) {
    match acc {
        None => *acc = Some(g),
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                if a.same_shape(&b) {
                    a.add_assign(&b);
                } else if b.len() > 1 {
                    *a = b;
                }
            }
        }
    }
}

/// Train stage 1. `targets[i]` is sample i's own preprocessed target-element
/// value; it is used only as the regression label and never appears in the
/// input tokens. Returns the model and the context vector of every sample.
pub fn scl_train(
    features: &CompositionMatrix,
    targets: &[f64],
    index: &SpatialIndex,
    cfg: &SclConfig,
    target_element: usize,
    n_element_ids: usize,
) -> Result<(SpatialContextModel, Vec<Vec<f64>>)> {
    let n = features.n_rows();
    if n < 2 {
        return Err(Error::Validation(
            "spatial context learning needs at least two samples".into(),
        ));
    }
    if targets.len() != n || index.len() != n {
        return Err(Error::Dimension(
            "targets/index misaligned with feature matrix".into(),
        ));
    }
    let norm = CoordNormalization::fit(index)?;
    let mut model =
        SpatialContextModel::init(cfg, n_element_ids, features.n_cols(), target_element, norm)?;

    let plans: Vec<NeighborhoodPlan> =
        par::map_indexed(n, |i| plan_neighborhood(index, i, cfg.k_neighbors, &norm));

    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );

    for epoch in 0..cfg.epochs {
        let mut order_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x5c1e, epoch as u64]));
        let order = crate::nn::ae::shuffled_indices(n, &mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let chunk_results = par::map_chunks(batch, GRAD_CHUNK, |chunk| {
                let mut grads: Option<Vec<Tensor>> = None;
                let mut loss_sum = 0.0;
                for &i in chunk {
                    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        cfg.seed,
                        &[0xd0, epoch as u64, i as u64],
                    ));
                    let mut tape = Tape::new();
                    let ctx = if cfg.encoder.dropout > 0.0 {
                        Some(DropoutCtx {
                            rate: cfg.encoder.dropout,
                            rng: &mut drop_rng,
                        })
                    } else {
                        None
                    };
                    let (_, yhat) = model.forward_plan(&mut tape, &plans[i], features, ctx);
                    let y = tape.leaf(Tensor::scalar(targets[i]));
                    let loss = tape.mse(yhat, y);
                    loss_sum += tape.value(loss).data[0];
                    let g = tape.backward(loss, model.params.len());
                    fold_grads(&mut grads, g);
                }
                (grads, loss_sum)
            });
            let mut total: Option<Vec<Tensor>> = None;
            let mut batch_loss = 0.0;
            for (g, l) in chunk_results {
                batch_loss += l;
                if let Some(g) = g {
                    fold_grads(&mut total, g);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: format!("stage-1 loss diverged ({batch_loss})"),
                });
            }
            epoch_loss += batch_loss;
            if let Some(mut g) = total {
                let scale = 1.0 / batch.len() as f64;
                for t in &mut g {
                    for v in &mut t.data {
                        *v *= scale;
                    }
                }
                adam.step(&mut model.params, &g);
            }
        }
        model.loss_trace.push(epoch_loss / n as f64);
    }

    let contexts = model.contexts_for(features, index)?;
    Ok((model, contexts))
}

// ---------------------------------------------------------------------------
// Stage 2: element dependency modelling

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdmConfig {
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Value-dropout probability during training: each element token's value
    /// projection is zeroed independently with this rate (identity embedding
    /// kept), which blocks the copy-through shortcut.
    pub mask_rate: f64,
    pub seed: u64,
}

impl Default for EdmConfig {
    fn default() -> Self {
        EdmConfig {
            encoder: EncoderConfig::default(),
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            mask_rate: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdmSlots {
    /// Context projection; absent for the vanilla (T1) variant.
    ctx_w: Option<usize>,
    ctx_b: Option<usize>,
    elem_embed: usize,
    val_w: usize,
    tok_w: usize,
    tok_b: usize,
    encoder: EncoderParams,
    dec_w: usize,
    dec_b: usize,
}

/// Trained stage-2 reconstruction model (with or without the geo-context
/// token).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElementDependencyModel {
    pub cfg: EdmConfig,
    pub n_elements: usize,
    pub context_dim: Option<usize>,
    params: ParamSet,
    slots: EdmSlots,
    pub loss_trace: Vec<f64>,
}

impl ElementDependencyModel {
    fn init(cfg: &EdmConfig, n_elements: usize, context_dim: Option<usize>) -> Result<Self> {
        cfg.encoder.validate()?;
        if n_elements == 0 {
            return Err(Error::Validation(
                "stage-2 needs at least one element".into(),
            ));
        }
        if !(0.0..=1.0).contains(&cfg.mask_rate) {
            return Err(Error::Config(format!(
                "mask_rate {} not in [0, 1]",
                cfg.mask_rate
            )));
        }
        let d = cfg.encoder.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xed7]));
        let mut params = ParamSet::new();
        let (ctx_w, ctx_b) = match context_dim {
            Some(cd) => (
                Some(params.add("edm.ctx_w", Tensor::xavier(cd, d, &mut rng))),
                Some(params.add("edm.ctx_b", Tensor::zeros(1, d))),
            ),
            None => (None, None),
        };
        let slots = EdmSlots {
            ctx_w,
            ctx_b,
            elem_embed: params.add("edm.elem_embed", Tensor::xavier(n_elements, d, &mut rng)),
            // Bias-free, zero-initialized value projection: a zeroed mask
            // must zero the whole value contribution, and with full value
            // dropout the projection never trains away from zero, keeping
            // the scoring forward identical to the training forward.
            val_w: params.add("edm.val_w", Tensor::zeros(1, d)),
            tok_w: params.add("edm.tok_w", Tensor::xavier(2 * d, d, &mut rng)),
            tok_b: params.add("edm.tok_b", Tensor::zeros(1, d)),
            encoder: EncoderParams::init(&mut params, &cfg.encoder, "edm.enc", &mut rng),
            dec_w: params.add("edm.dec_w", Tensor::xavier(d, 1, &mut rng)),
            dec_b: params.add("edm.dec_b", Tensor::zeros(1, 1)),
        };
        Ok(ElementDependencyModel {
            cfg: *cfg,
            n_elements,
            context_dim,
            params,
            slots,
            loss_trace: Vec::new(),
        })
    }

    pub fn uses_context(&self) -> bool {
        self.context_dim.is_some()
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Forward pass; `value_mask[c] = 0.0` hides element c's value. Returns
    /// the reconstruction (C x 1).
    fn forward(
        &self,
        tape: &mut Tape,
        values: &[f64],
        value_mask: Option<&[f64]>,
        context: Option<&[f64]>,
        train_ctx: Option<DropoutCtx<'_>>,
    ) -> Var {
        let c = self.n_elements;
        assert_eq!(values.len(), c, "edm: value vector length");
        let embed = tape.param(
            self.slots.elem_embed,
            self.params.tensor(self.slots.elem_embed),
        );
        let ids: Vec<usize> = (0..c).collect();
        let embeds = tape.gather_rows(embed, &ids);

        let vals = tape.leaf(Tensor::from_vec(c, 1, values.to_vec()));
        let vals = match value_mask {
            Some(m) => {
                assert_eq!(m.len(), c, "edm: mask length");
                let mask = tape.leaf(Tensor::from_vec(c, 1, m.to_vec()));
                tape.mul(vals, mask)
            }
            None => vals,
        };
        let val_w = tape.param(self.slots.val_w, self.params.tensor(self.slots.val_w));
        let val_proj = tape.matmul(vals, val_w);

        let tok_in = tape.concat_cols(&[embeds, val_proj]);
        let tok_w = tape.param(self.slots.tok_w, self.params.tensor(self.slots.tok_w));
        let tok_b = tape.param(self.slots.tok_b, self.params.tensor(self.slots.tok_b));
        let toks = tape.matmul(tok_in, tok_w);
        let toks = tape.add_row_broadcast(toks, tok_b);

        let (x, dec_from) = match (self.slots.ctx_w, self.slots.ctx_b, context) {
            (Some(wslot), Some(bslot), Some(ctx)) => {
                let ctx_w = tape.param(wslot, self.params.tensor(wslot));
                let ctx_b = tape.param(bslot, self.params.tensor(bslot));
                let ctx_in = tape.leaf(Tensor::from_vec(1, ctx.len(), ctx.to_vec()));
                let g = tape.matmul(ctx_in, ctx_w);
                let g = tape.add_row_broadcast(g, ctx_b);
                (tape.concat_rows(&[g, toks]), 1)
            }
            (None, None, None) => (toks, 0),
            _ => panic!("edm: context presence must match the fitted configuration"),
        };

        let s = c + dec_from;
        let bound = BoundEncoder::bind(tape, &self.params, &self.slots.encoder);
        let enc = encoder_forward(tape, &bound, &self.cfg.encoder, x, None, s, train_ctx);
        let dec_in = tape.slice_rows(enc, dec_from, c);
        let dec_w = tape.param(self.slots.dec_w, self.params.tensor(self.slots.dec_w));
        let dec_b = tape.param(self.slots.dec_b, self.params.tensor(self.slots.dec_b));
        let xh = tape.matmul(dec_in, dec_w);
        tape.add_row_broadcast(xh, dec_b)
    }

    /// Deterministic reconstruction of one sample (no masking, no dropout).
    pub fn reconstruct_row(&self, values: &[f64], context: Option<&[f64]>) -> Vec<f64> {
        let mut tape = Tape::new();
        let xh = self.forward(&mut tape, values, None, context, None);
        tape.value(xh).data.clone()
    }

    /// Flattened parameter vector (gradient-verification hook).
    pub fn params_flat(&self) -> Vec<f64> {
        self.params.flatten()
    }

    /// Per-row reconstruction loss evaluated at an explicit parameter
    /// vector; used by finite-difference checks.
    pub fn loss_for_row_with_params(
        &mut self,
        flat: &[f64],
        values: &[f64],
        context: Option<&[f64]>,
    ) -> f64 {
        self.params.unflatten(flat);
        let mut tape = Tape::new();
        let xh = self.forward(&mut tape, values, None, context, None);
        let target = tape.leaf(Tensor::from_vec(values.len(), 1, values.to_vec()));
        let loss = tape.mse(xh, target);
        tape.value(loss).data[0]
    }

    /// Analytic gradient of the per-row reconstruction loss, flattened to
    /// match [`ElementDependencyModel::params_flat`].
    pub fn loss_gradient_for_row(&self, values: &[f64], context: Option<&[f64]>) -> Vec<f64> {
        let mut tape = Tape::new();
        let xh = self.forward(&mut tape, values, None, context, None);
        let target = tape.leaf(Tensor::from_vec(values.len(), 1, values.to_vec()));
        let loss = tape.mse(xh, target);
        let grads = tape.backward(loss, self.params.len());
        flatten_slot_grads(&self.params, &grads)
    }

    #[cfg(test)]
    pub(crate) fn zero_decoder(&mut self) {
        self.params.tensor_mut(self.slots.dec_w).data.fill(0.0);
        self.params.tensor_mut(self.slots.dec_b).data.fill(0.0);
    }
}

fn check_contexts(
    features: &CompositionMatrix,
    contexts: Option<&[Vec<f64>]>,
) -> Result<Option<usize>> {
    match contexts {
        Some(ctx) => {
            if ctx.len() != features.n_rows() {
                return Err(Error::Dimension(
                    "context vectors misaligned with matrix rows".into(),
                ));
            }
            let dim = ctx.first().map(|v| v.len()).unwrap_or(0);
            if dim == 0 || ctx.iter().any(|v| v.len() != dim) {
                return Err(Error::Dimension("ragged context vectors".into()));
            }
            Ok(Some(dim))
        }
        None => Ok(None),
    }
}

/// Train stage 2 on the preprocessed matrix, optionally conditioned on
/// per-sample spatial contexts (the geo-context token). `contexts = None`
/// trains the vanilla (T1) variant.
pub fn edm_train(
    features: &CompositionMatrix,
    contexts: Option<&[Vec<f64>]>,
    cfg: &EdmConfig,
) -> Result<ElementDependencyModel> {
    let n = features.n_rows();
    let c = features.n_cols();
    let context_dim = check_contexts(features, contexts)?;
    let mut model = ElementDependencyModel::init(cfg, c, context_dim)?;
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );

    for epoch in 0..cfg.epochs {
        let mut order_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xed7e, epoch as u64]));
        let order = crate::nn::ae::shuffled_indices(n, &mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let chunk_results = par::map_chunks(batch, GRAD_CHUNK, |chunk| {
                let mut grads: Option<Vec<Tensor>> = None;
                let mut loss_sum = 0.0;
                for &i in chunk {
                    let values = features.row_vec(i);
                    let mut mask_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        cfg.seed,
                        &[0xa5c, epoch as u64, i as u64],
                    ));
                    let mask: Vec<f64> = (0..c)
                        .map(|_| {
                            if mask_rng.gen::<f64>() < cfg.mask_rate {
                                0.0
                            } else {
                                1.0
                            }
                        })
                        .collect();
                    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        cfg.seed,
                        &[0xd1, epoch as u64, i as u64],
                    ));
                    let mut tape = Tape::new();
                    let ctx_row = contexts.map(|ctxs| ctxs[i].as_slice());
                    let train_ctx = if cfg.encoder.dropout > 0.0 {
                        Some(DropoutCtx {
                            rate: cfg.encoder.dropout,
                            rng: &mut drop_rng,
                        })
                    } else {
                        None
                    };
                    let xh = model.forward(&mut tape, &values, Some(&mask), ctx_row, train_ctx);
                    let target = tape.leaf(Tensor::from_vec(c, 1, values.clone()));
                    let loss = tape.mse(xh, target);
                    loss_sum += tape.value(loss).data[0];
                    let g = tape.backward(loss, model.params.len());
                    fold_grads(&mut grads, g);
                }
                (grads, loss_sum)
            });
            let mut total: Option<Vec<Tensor>> = None;
            let mut batch_loss = 0.0;
            for (g, l) in chunk_results {
                batch_loss += l;
                if let Some(g) = g {
                    fold_grads(&mut total, g);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: format!("stage-2 loss diverged ({batch_loss})"),
                });
            }
            epoch_loss += batch_loss;
            if let Some(mut g) = total {
                let scale = 1.0 / batch.len() as f64;
                for t in &mut g {
                    for v in &mut t.data {
                        *v *= scale;
                    }
                }
                adam.step(&mut model.params, &g);
            }
        }
        model.loss_trace.push(epoch_loss / n as f64);
    }
    Ok(model)
}

/// Anomaly scores: s_i = (1/C) sum_c (x_ic - xhat_ic)^2, deterministic
/// forward passes with no masking.
pub fn edm_score(
    model: &ElementDependencyModel,
    features: &CompositionMatrix,
    contexts: Option<&[Vec<f64>]>,
) -> Result<Vec<f64>> {
    if features.n_cols() != model.n_elements {
        return Err(Error::Dimension(format!(
            "model fitted on {} elements, matrix has {}",
            model.n_elements,
            features.n_cols()
        )));
    }
    let ctx_dim = check_contexts(features, contexts)?;
    if ctx_dim != model.context_dim {
        return Err(Error::Dimension(
            "context dimensionality does not match the fitted model".into(),
        ));
    }
    let c = model.n_elements as f64;
    Ok(par::map_indexed(features.n_rows(), |i| {
        let values = features.row_vec(i);
        let xh = model.reconstruct_row(&values, contexts.map(|ctxs| ctxs[i].as_slice()));
        values
            .iter()
            .zip(&xh)
            .map(|(x, r)| (x - r).powi(2))
            .sum::<f64>()
            / c
    }))
}

/// Mean squared residual of predictions against targets (the stage-1
/// objective as a plain function).
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(predictions.len(), targets.len());
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / predictions.len() as f64
}

// ---------------------------------------------------------------------------
// Full detector and the vanilla baseline

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoChemFormerConfig {
    pub scl: SclConfig,
    pub edm: EdmConfig,
}

impl Default for GeoChemFormerConfig {
    fn default() -> Self {
        GeoChemFormerConfig {
            scl: SclConfig::default(),
            edm: EdmConfig::default(),
        }
    }
}

/// The two-stage detector: stage-1 spatial context feeding stage-2 element
/// dependency reconstruction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeoChemFormerDetector {
    pub stage1: SpatialContextModel,
    pub stage2: ElementDependencyModel,
}

impl GeoChemFormerDetector {
    /// Fit both stages. `targets` are the per-sample preprocessed
    /// target-element values used as stage-1 labels.
    pub fn fit(
        features: &CompositionMatrix,
        index: &SpatialIndex,
        targets: &[f64],
        target_element: usize,
        n_element_ids: usize,
        cfg: &GeoChemFormerConfig,
    ) -> Result<Self> {
        let (stage1, contexts) = scl_train(
            features,
            targets,
            index,
            &cfg.scl,
            target_element,
            n_element_ids,
        )?;
        let stage2 = edm_train(features, Some(&contexts), &cfg.edm)?;
        Ok(GeoChemFormerDetector { stage1, stage2 })
    }

    /// Score a survey: recompute contexts with the trained stage-1 encoder,
    /// then evaluate the stage-2 reconstruction error.
    pub fn score(&self, features: &CompositionMatrix, index: &SpatialIndex) -> Result<Vec<f64>> {
        let contexts = self.stage1.contexts_for(features, index)?;
        edm_score(&self.stage2, features, Some(&contexts))
    }
}

/// Vanilla transformer baseline: the stage-2 architecture without the
/// geo-context token, trained and scored identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct T1Detector {
    pub model: ElementDependencyModel,
}

impl T1Detector {
    pub fn fit(features: &CompositionMatrix, cfg: &EdmConfig) -> Result<Self> {
        Ok(T1Detector {
            model: edm_train(features, None, cfg)?,
        })
    }

    pub fn score(&self, features: &CompositionMatrix) -> Result<Vec<f64>> {
        edm_score(&self.model, features, None)
    }
}
