//! Minimal reverse-mode autodiff core plus the neural detectors built on it:
//! transformer encoder blocks, Adam, and the AE / VAE scorers.
//!
//! Everything is seed-deterministic: given (seed, config, input), two
//! training runs produce bit-identical parameters. Randomness is always
//! drawn from ChaCha8 streams keyed by (seed, epoch, sample), never from
//! execution order, so parallel gradient evaluation cannot perturb results.

pub mod adam;
pub mod ae;
pub mod check;
pub mod encoder;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod vae;

pub use adam::{AdamConfig, AdamState};
pub use ae::{AeConfig, AutoencoderDetector};
pub use encoder::{encoder_forward, multi_head_attention, BoundEncoder, EncoderParams};
pub use params::ParamSet;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use vae::{VaeConfig, VaeDetector};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transformer encoder shape shared by the neural detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_width: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            ff_width: 128,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} must be in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Derive an independent stream seed from a base seed and context parts
/// (epoch, sample index, layer, ...). SplitMix64-style mixing.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base ^ 0x9e3779b97f4a7c15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e3779b97f4a7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
    }
    z
}
