//! Variational autoencoder scorer: gaussian encoder, reparameterized
//! sampling during training, deterministic (z = mu) reconstruction error at
//! score time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::ae::{batch_rows, shuffled_indices};
use super::derive_seed;
use super::params::ParamSet;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::compositional::CompositionMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            hidden: 64,
            latent: 16,
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            beta: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct VaeSlots {
    w1: usize,
    b1: usize,
    w_mu: usize,
    b_mu: usize,
    w_lv: usize,
    b_lv: usize,
    w3: usize,
    b3: usize,
    w4: usize,
    b4: usize,
}

/// Closed-form KL(N(mu, sigma^2) || N(0, I)) summed over dimensions:
/// 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2).
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    assert_eq!(mu.len(), logvar.len());
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeDetector {
    pub cfg: VaeConfig,
    pub n_features: usize,
    pub(crate) params: ParamSet,
    slots: VaeSlots,
    pub loss_trace: Vec<f64>,
}

impl VaeDetector {
    fn init(n_features: usize, cfg: VaeConfig) -> (ParamSet, VaeSlots) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x7ae]));
        let mut params = ParamSet::new();
        let slots = VaeSlots {
            w1: params.add("enc.w1", Tensor::xavier(n_features, cfg.hidden, &mut rng)),
            b1: params.add("enc.b1", Tensor::zeros(1, cfg.hidden)),
            w_mu: params.add("enc.w_mu", Tensor::xavier(cfg.hidden, cfg.latent, &mut rng)),
            b_mu: params.add("enc.b_mu", Tensor::zeros(1, cfg.latent)),
            w_lv: params.add("enc.w_lv", Tensor::xavier(cfg.hidden, cfg.latent, &mut rng)),
            b_lv: params.add("enc.b_lv", Tensor::zeros(1, cfg.latent)),
            w3: params.add("dec.w3", Tensor::xavier(cfg.latent, cfg.hidden, &mut rng)),
            b3: params.add("dec.b3", Tensor::zeros(1, cfg.hidden)),
            w4: params.add("dec.w4", Tensor::xavier(cfg.hidden, n_features, &mut rng)),
            b4: params.add("dec.b4", Tensor::zeros(1, n_features)),
        };
        (params, slots)
    }

    fn encode(&self, tape: &mut Tape, x: Var) -> (Var, Var) {
        let s = &self.slots;
        let bind = |tape: &mut Tape, slot: usize| tape.param(slot, self.params.tensor(slot));
        let (w1, b1) = (bind(tape, s.w1), bind(tape, s.b1));
        let (w_mu, b_mu) = (bind(tape, s.w_mu), bind(tape, s.b_mu));
        let (w_lv, b_lv) = (bind(tape, s.w_lv), bind(tape, s.b_lv));
        let h = tape.matmul(x, w1);
        let h = tape.add_row_broadcast(h, b1);
        let h = tape.gelu(h);
        let mu = tape.matmul(h, w_mu);
        let mu = tape.add_row_broadcast(mu, b_mu);
        let lv = tape.matmul(h, w_lv);
        let lv = tape.add_row_broadcast(lv, b_lv);
        (mu, lv)
    }

    fn decode(&self, tape: &mut Tape, z: Var) -> Var {
        let s = &self.slots;
        let bind = |tape: &mut Tape, slot: usize| tape.param(slot, self.params.tensor(slot));
        let (w3, b3) = (bind(tape, s.w3), bind(tape, s.b3));
        let (w4, b4) = (bind(tape, s.w4), bind(tape, s.b4));
        let h = tape.matmul(z, w3);
        let h = tape.add_row_broadcast(h, b3);
        let h = tape.gelu(h);
        let xh = tape.matmul(h, w4);
        tape.add_row_broadcast(xh, b4)
    }

    pub fn fit(matrix: &CompositionMatrix, cfg: VaeConfig) -> Result<Self> {
        if cfg.batch_size == 0 {
            return Err(Error::Config("vae batch_size must be >= 1".into()));
        }
        let (params, slots) = Self::init(matrix.n_cols(), cfg);
        let mut model = VaeDetector {
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
            let mut order_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x7ae5, epoch as u64]));
            let order = shuffled_indices(n, &mut order_rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let b = chunk.len();
                let batch = batch_rows(data, chunk);
                // Reparameterization noise keyed by (seed, epoch, sample id):
                // independent of batch composition and execution order.
                let mut eps = Tensor::zeros(b, cfg.latent);
                for (bi, &row) in chunk.iter().enumerate() {
                    let mut r = ChaCha8Rng::seed_from_u64(derive_seed(
                        cfg.seed,
                        &[0xe9, epoch as u64, row as u64],
                    ));
                    for j in 0..cfg.latent {
                        // Box-Muller.
                        let u1: f64 = r.gen_range(f64::MIN_POSITIVE..1.0);
                        let u2: f64 = r.gen();
                        eps.data[bi * cfg.latent + j] =
                            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                    }
                }

                let mut tape = Tape::new();
                let x = tape.leaf(batch);
                let (mu, lv) = model.encode(&mut tape, x);
                let half_lv = tape.scale(lv, 0.5);
                let sigma = tape.exp(half_lv);
                let eps_v = tape.leaf(eps);
                let noise = tape.mul(sigma, eps_v);
                let z = tape.add(mu, noise);
                let xh = model.decode(&mut tape, z);
                let recon = tape.mse(xh, x);

                let mu2 = tape.mul(mu, mu);
                let elv = tape.exp(lv);
                let sum_terms = tape.add(mu2, elv);
                let ones = tape.leaf(Tensor::from_vec(b, cfg.latent, vec![1.0; b * cfg.latent]));
                let t1 = tape.sub(sum_terms, ones);
                let t2 = tape.sub(t1, lv);
                let kl_sum = tape.sum_all(t2);
                let kl = tape.scale(kl_sum, 0.5 / b as f64);
                let kl_scaled = tape.scale(kl, cfg.beta);
                let loss = tape.add(recon, kl_scaled);

                let lv_val = tape.value(loss).data[0];
                if !lv_val.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        msg: format!("vae loss diverged ({lv_val})"),
                    });
                }
                epoch_loss += lv_val * b as f64;
                let grads = tape.backward(loss, model.params.len());
                adam.step(&mut model.params, &grads);
            }
            model.loss_trace.push(epoch_loss / n as f64);
        }
        Ok(model)
    }

    /// Deterministic reconstruction through z = mu.
    pub fn reconstruct(&self, matrix: &CompositionMatrix) -> Result<Tensor> {
        if matrix.n_cols() != self.n_features {
            return Err(Error::Dimension(format!(
                "vae fitted on {} features, got {}",
                self.n_features,
                matrix.n_cols()
            )));
        }
        let rows: Vec<usize> = (0..matrix.n_rows()).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(batch_rows(matrix.data(), &rows));
        let (mu, _) = self.encode(&mut tape, x);
        let xh = self.decode(&mut tape, mu);
        Ok(tape.value(xh).clone())
    }

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
}
