//! Pre-LN transformer encoder blocks on the autodiff tape.
//!
//! Sequence-axis reductions inside attention go through the set-aware
//! summation in [`tensor`](super::tensor), so token positions declared as an
//! unordered set (everything at or beyond `set_prefix`) can be reversed
//! without changing any output bit.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::EncoderConfig;

/// Bias added to masked key positions before softmax; exp() of it underflows
/// to exactly zero, so masked tokens contribute nothing to the mix.
pub const MASK_BIAS: f64 = -1e30;

const LN_EPS: f64 = 1e-6;

/// Parameter slots of one encoder layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSlots {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub ff_w1: usize,
    pub ff_b1: usize,
    pub ff_w2: usize,
    pub ff_b2: usize,
}

/// Parameter slots of a whole encoder stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<LayerSlots>,
    pub final_ln_g: usize,
    pub final_ln_b: usize,
}

impl EncoderParams {
    /// Register freshly initialized encoder parameters on `params`.
    pub fn init(
        params: &mut ParamSet,
        cfg: &EncoderConfig,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = cfg.d_model;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let name = |part: &str| format!("{prefix}.layer{l}.{part}");
            layers.push(LayerSlots {
                ln1_g: params.add(name("ln1.gain"), Tensor::from_vec(1, d, vec![1.0; d])),
                ln1_b: params.add(name("ln1.bias"), Tensor::zeros(1, d)),
                wq: params.add(name("attn.wq"), Tensor::xavier(d, d, rng)),
                bq: params.add(name("attn.bq"), Tensor::zeros(1, d)),
                wk: params.add(name("attn.wk"), Tensor::xavier(d, d, rng)),
                bk: params.add(name("attn.bk"), Tensor::zeros(1, d)),
                wv: params.add(name("attn.wv"), Tensor::xavier(d, d, rng)),
                bv: params.add(name("attn.bv"), Tensor::zeros(1, d)),
                wo: params.add(name("attn.wo"), Tensor::xavier(d, d, rng)),
                bo: params.add(name("attn.bo"), Tensor::zeros(1, d)),
                ln2_g: params.add(name("ln2.gain"), Tensor::from_vec(1, d, vec![1.0; d])),
                ln2_b: params.add(name("ln2.bias"), Tensor::zeros(1, d)),
                ff_w1: params.add(name("ff.w1"), Tensor::xavier(d, cfg.ff_width, rng)),
                ff_b1: params.add(name("ff.b1"), Tensor::zeros(1, cfg.ff_width)),
                ff_w2: params.add(name("ff.w2"), Tensor::xavier(cfg.ff_width, d, rng)),
                ff_b2: params.add(name("ff.b2"), Tensor::zeros(1, d)),
            });
        }
        let final_ln_g = params.add(
            format!("{prefix}.final_ln.gain"),
            Tensor::from_vec(1, d, vec![1.0; d]),
        );
        let final_ln_b = params.add(format!("{prefix}.final_ln.bias"), Tensor::zeros(1, d));
        EncoderParams {
            layers,
            final_ln_g,
            final_ln_b,
        }
    }
}

/// Per-call training context: dropout rate and the rng that draws the masks.
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Encoder parameters bound onto a tape (one binding per sample graph).
pub struct BoundEncoder {
    layers: Vec<BoundLayer>,
    final_ln_g: Var,
    final_ln_b: Var,
}

struct BoundLayer {
    ln1_g: Var,
    ln1_b: Var,
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
    ln2_g: Var,
    ln2_b: Var,
    ff_w1: Var,
    ff_b1: Var,
    ff_w2: Var,
    ff_b2: Var,
}

impl BoundEncoder {
    pub fn bind(tape: &mut Tape, params: &ParamSet, enc: &EncoderParams) -> Self {
        let bind = |tape: &mut Tape, slot: usize| tape.param(slot, params.tensor(slot));
        let layers = enc
            .layers
            .iter()
            .map(|l| BoundLayer {
                ln1_g: bind(tape, l.ln1_g),
                ln1_b: bind(tape, l.ln1_b),
                wq: bind(tape, l.wq),
                bq: bind(tape, l.bq),
                wk: bind(tape, l.wk),
                bk: bind(tape, l.bk),
                wv: bind(tape, l.wv),
                bv: bind(tape, l.bv),
                wo: bind(tape, l.wo),
                bo: bind(tape, l.bo),
                ln2_g: bind(tape, l.ln2_g),
                ln2_b: bind(tape, l.ln2_b),
                ff_w1: bind(tape, l.ff_w1),
                ff_b1: bind(tape, l.ff_b1),
                ff_w2: bind(tape, l.ff_w2),
                ff_b2: bind(tape, l.ff_b2),
            })
            .collect();
        BoundEncoder {
            layers,
            final_ln_g: bind(tape, enc.final_ln_g),
            final_ln_b: bind(tape, enc.final_ln_b),
        }
    }
}

fn layernorm_affine(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Var {
    let normed = tape.layernorm_rows(x, LN_EPS);
    let scaled = tape.mul_row_broadcast(normed, gain);
    tape.add_row_broadcast(scaled, bias)
}

fn dropout(tape: &mut Tape, x: Var, ctx: &mut Option<DropoutCtx<'_>>) -> Var {
    match ctx {
        Some(c) if c.rate > 0.0 => {
            use rand::Rng;
            let t = tape.value(x);
            let keep = 1.0 - c.rate;
            let mask = Tensor::from_vec(
                t.rows,
                t.cols,
                (0..t.len())
                    .map(|_| {
                        if c.rng.gen::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            );
            let m = tape.leaf(mask);
            tape.mul(x, m)
        }
        _ => x,
    }
}

/// Scaled dot-product attention with `heads` heads over already-embedded
/// token matrices (S x d): per-head projections, 1/sqrt(d/h) scaling,
/// concatenation, output projection. `key_mask_bias` (1 x S) is added to
/// every score row; `set_prefix` marks where the unordered token set starts.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    tape: &mut Tape,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    heads: usize,
    weights: AttentionWeights,
    key_mask_bias: Option<Var>,
    set_prefix: usize,
) -> Var {
    let d = tape.value(q_in).cols;
    assert!(d % heads == 0, "attention: width {d} not divisible by {heads} heads");
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = tape.matmul(q_in, weights.wq);
    let q = tape.add_row_broadcast(q, weights.bq);
    let k = tape.matmul(k_in, weights.wk);
    let k = tape.add_row_broadcast(k, weights.bk);
    let v = tape.matmul(v_in, weights.wv);
    let v = tape.add_row_broadcast(v, weights.bv);

    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt);
        let scores = tape.scale(scores, scale);
        let scores = match key_mask_bias {
            Some(mask) => tape.add_row_broadcast(scores, mask),
            None => scores,
        };
        let attn = tape.softmax_rows(scores, set_prefix);
        head_outs.push(tape.attn_mix(attn, vh, set_prefix));
    }
    let merged = tape.concat_cols(&head_outs);
    let out = tape.matmul(merged, weights.wo);
    tape.add_row_broadcast(out, weights.bo)
}

/// Projection weights consumed by [`multi_head_attention`].
#[derive(Clone, Copy)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Run the encoder stack over a token matrix (S x d).
pub fn encoder_forward(
    tape: &mut Tape,
    bound: &BoundEncoder,
    cfg: &EncoderConfig,
    mut x: Var,
    key_mask_bias: Option<Var>,
    set_prefix: usize,
    mut train_ctx: Option<DropoutCtx<'_>>,
) -> Var {
    for layer in &bound.layers {
        let normed = layernorm_affine(tape, x, layer.ln1_g, layer.ln1_b);
        let attn = multi_head_attention(
            tape,
            normed,
            normed,
            normed,
            cfg.n_heads,
            AttentionWeights {
                wq: layer.wq,
                bq: layer.bq,
                wk: layer.wk,
                bk: layer.bk,
                wv: layer.wv,
                bv: layer.bv,
                wo: layer.wo,
                bo: layer.bo,
            },
            key_mask_bias,
            set_prefix,
        );
        let attn = dropout(tape, attn, &mut train_ctx);
        x = tape.add(x, attn);

        let normed2 = layernorm_affine(tape, x, layer.ln2_g, layer.ln2_b);
        let h = tape.matmul(normed2, layer.ff_w1);
        let h = tape.add_row_broadcast(h, layer.ff_b1);
        let h = tape.gelu(h);
        let h = tape.matmul(h, layer.ff_w2);
        let h = tape.add_row_broadcast(h, layer.ff_b2);
        let h = dropout(tape, h, &mut train_ctx);
        x = tape.add(x, h);
    }
    layernorm_affine(tape, x, bound.final_ln_g, bound.final_ln_b)
}

/// 2-D sinusoidal positional encoding of normalized coordinates: half the
/// width encodes x, half y, alternating sin/cos over geometric frequencies.
pub fn positional_encoding_2d(x: f64, y: f64, d: usize) -> Tensor {
    assert!(d % 4 == 0, "2-D positional encoding needs d divisible by 4");
    let quarter = d / 4;
    let mut data = vec![0.0; d];
    for i in 0..quarter {
        let freq = 1.0 / 10000f64.powf(i as f64 / quarter as f64);
        data[2 * i] = (x * freq).sin();
        data[2 * i + 1] = (x * freq).cos();
        data[d / 2 + 2 * i] = (y * freq).sin();
        data[d / 2 + 2 * i + 1] = (y * freq).cos();
    }
    Tensor::from_vec(1, d, data)
}
