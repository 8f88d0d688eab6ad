//! Autoencoder anomaly scorer: reconstruction error of an MLP bottleneck.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::params::ParamSet;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::derive_seed;
use crate::compositional::CompositionMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            hidden: 64,
            latent: 16,
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct AeSlots {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    w4: usize,
    b4: usize,
}

/// Fitted autoencoder; score = per-row mean squared reconstruction error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutoencoderDetector {
    pub cfg: AeConfig,
    pub n_features: usize,
    pub(crate) params: ParamSet,
    slots: AeSlots,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
}

pub(crate) fn batch_rows(data: &nalgebra::DMatrix<f64>, rows: &[usize]) -> Tensor {
    let c = data.ncols();
    let mut t = Tensor::zeros(rows.len(), c);
    for (bi, &i) in rows.iter().enumerate() {
        for j in 0..c {
            t.data[bi * c + j] = data[(i, j)];
        }
    }
    t
}

pub(crate) fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

impl AutoencoderDetector {
    fn init(n_features: usize, cfg: AeConfig) -> (ParamSet, AeSlots) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xae]));
        let mut params = ParamSet::new();
        let slots = AeSlots {
            w1: params.add("enc.w1", Tensor::xavier(n_features, cfg.hidden, &mut rng)),
            b1: params.add("enc.b1", Tensor::zeros(1, cfg.hidden)),
            w2: params.add("enc.w2", Tensor::xavier(cfg.hidden, cfg.latent, &mut rng)),
            b2: params.add("enc.b2", Tensor::zeros(1, cfg.latent)),
            w3: params.add("dec.w3", Tensor::xavier(cfg.latent, cfg.hidden, &mut rng)),
            b3: params.add("dec.b3", Tensor::zeros(1, cfg.hidden)),
            w4: params.add("dec.w4", Tensor::xavier(cfg.hidden, n_features, &mut rng)),
            b4: params.add("dec.b4", Tensor::zeros(1, n_features)),
        };
        (params, slots)
    }

    fn reconstruct_var(&self, tape: &mut Tape, x: Var) -> Var {
        let s = &self.slots;
        let bind = |tape: &mut Tape, slot: usize| tape.param(slot, self.params.tensor(slot));
        let (w1, b1) = (bind(tape, s.w1), bind(tape, s.b1));
        let (w2, b2) = (bind(tape, s.w2), bind(tape, s.b2));
        let (w3, b3) = (bind(tape, s.w3), bind(tape, s.b3));
        let (w4, b4) = (bind(tape, s.w4), bind(tape, s.b4));
        let h = tape.matmul(x, w1);
        let h = tape.add_row_broadcast(h, b1);
        let h = tape.gelu(h);
        let z = tape.matmul(h, w2);
        let z = tape.add_row_broadcast(z, b2);
        let h2 = tape.matmul(z, w3);
        let h2 = tape.add_row_broadcast(h2, b3);
        let h2 = tape.gelu(h2);
        let xh = tape.matmul(h2, w4);
        tape.add_row_broadcast(xh, b4)
    }

    /// Train on the matrix rows with mean-squared reconstruction loss.
    pub fn fit(matrix: &CompositionMatrix, cfg: AeConfig) -> Result<Self> {
        if cfg.epochs == 0 && cfg.batch_size == 0 {
            return Err(Error::Config("autoencoder batch_size must be >= 1".into()));
        }
        let (params, slots) = Self::init(matrix.n_cols(), cfg);
        let mut model = AutoencoderDetector {
            cfg,
            n_features: matrix.n_cols(),
            params,
            slots,
            loss_trace: Vec::new(),
        };
        let mut adam = AdamState::new(
            &model.params,
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
        );
        let n = matrix.n_rows();
        let data = matrix.data();
        for epoch in 0..cfg.epochs {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xae5, epoch as u64]));
            let order = shuffled_indices(n, &mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let batch = batch_rows(data, chunk);
                let mut tape = Tape::new();
                let x = tape.leaf(batch);
                let xh = model.reconstruct_var(&mut tape, x);
                let loss = tape.mse(xh, x);
                let lv = tape.value(loss).data[0];
                if !lv.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        msg: format!("autoencoder loss diverged ({lv})"),
                    });
                }
                epoch_loss += lv * chunk.len() as f64;
                let grads = tape.backward(loss, model.params.len());
                adam.step(&mut model.params, &grads);
            }
            model.loss_trace.push(epoch_loss / n as f64);
        }
        Ok(model)
    }

    /// Per-row reconstructions of the given matrix.
    pub fn reconstruct(&self, matrix: &CompositionMatrix) -> Result<Tensor> {
        if matrix.n_cols() != self.n_features {
            return Err(Error::Dimension(format!(
                "autoencoder fitted on {} features, got {}",
                self.n_features,
                matrix.n_cols()
            )));
        }
        let mut tape = Tape::new();
        let x = tape.leaf(batch_rows(matrix.data(), &(0..matrix.n_rows()).collect::<Vec<_>>()));
        let xh = self.reconstruct_var(&mut tape, x);
        Ok(tape.value(xh).clone())
    }

    /// Mean squared reconstruction error per row; higher = more anomalous.
    pub fn score(&self, matrix: &CompositionMatrix) -> Result<Vec<f64>> {
        let xh = self.reconstruct(matrix)?;
        let c = self.n_features;
        Ok((0..matrix.n_rows())
            .map(|i| {
                (0..c)
                    .map(|j| (matrix.value(i, j) - xh.at(i, j)).powi(2))
                    .sum::<f64>()
                    / c as f64
            })
            .collect())
    }

    #[cfg(test)]
    pub(crate) fn zero_decoder_output(&mut self) {
        let w4 = self.params.tensor_mut(self.slots.w4);
        w4.data.iter_mut().for_each(|v| *v = 0.0);
        let b4 = self.params.tensor_mut(self.slots.b4);
        b4.data.iter_mut().for_each(|v| *v = 0.0);
    }
}
