//! Encoder building blocks on top of the tensor core: linear projections,
//! multi-head self-attention, the position-wise feed-forward net, post-norm
//! residual blocks, and the fixed sinusoidal temporal encoding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Active dropout state threaded through a training forward pass.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

fn apply_dropout<S: Scalar>(x: Tensor<S>, dropout: &mut Option<Dropout<'_>>) -> Result<Tensor<S>> {
    match dropout {
        Some(d) if d.p > 0.0 => x.dropout(d.p, d.rng),
        _ => Ok(x),
    }
}

/// `y = x W + b` with the bias broadcast over all leading dimensions.
pub fn linear<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    x.matmul(weight)?.add(bias)
}

/// Xavier-uniform samples for an `rows x cols` weight matrix.
pub fn xavier_uniform<S: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<S> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols)
        .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
        .collect()
}

/// The four projections of one self-attention layer.
#[derive(Clone, Debug)]
pub struct AttentionParams<S: Scalar> {
    pub wq: Tensor<S>,
    pub bq: Tensor<S>,
    pub wk: Tensor<S>,
    pub bk: Tensor<S>,
    pub wv: Tensor<S>,
    pub bv: Tensor<S>,
    pub wo: Tensor<S>,
    pub bo: Tensor<S>,
}

impl<S: Scalar> AttentionParams<S> {
    pub fn init(d: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let weight = |rng: &mut ChaCha8Rng| Tensor::parameter(&[d, d], xavier_uniform(d, d, rng));
        let bias = || Tensor::parameter(&[d], vec![S::zero(); d]);
        Ok(AttentionParams {
            wq: weight(rng)?,
            bq: bias()?,
            wk: weight(rng)?,
            bk: bias()?,
            wv: weight(rng)?,
            bv: bias()?,
            wo: weight(rng)?,
            bo: bias()?,
        })
    }

    pub fn named(&self) -> Vec<(&'static str, Tensor<S>)> {
        vec![
            ("wq", self.wq.clone()),
            ("bq", self.bq.clone()),
            ("wk", self.wk.clone()),
            ("bk", self.bk.clone()),
            ("wv", self.wv.clone()),
            ("bv", self.bv.clone()),
            ("wo", self.wo.clone()),
            ("bo", self.bo.clone()),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct FeedForwardParams<S: Scalar> {
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

impl<S: Scalar> FeedForwardParams<S> {
    pub fn init(d: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(FeedForwardParams {
            w1: Tensor::parameter(&[d, d_ff], xavier_uniform(d, d_ff, rng))?,
            b1: Tensor::parameter(&[d_ff], vec![S::zero(); d_ff])?,
            w2: Tensor::parameter(&[d_ff, d], xavier_uniform(d_ff, d, rng))?,
            b2: Tensor::parameter(&[d], vec![S::zero(); d])?,
        })
    }

    pub fn named(&self) -> Vec<(&'static str, Tensor<S>)> {
        vec![
            ("w1", self.w1.clone()),
            ("b1", self.b1.clone()),
            ("w2", self.w2.clone()),
            ("b2", self.b2.clone()),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct NormParams<S: Scalar> {
    pub gain: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> NormParams<S> {
    pub fn init(d: usize) -> Result<Self> {
        Ok(NormParams {
            gain: Tensor::parameter(&[d], vec![S::one(); d])?,
            bias: Tensor::parameter(&[d], vec![S::zero(); d])?,
        })
    }

    pub fn named(&self) -> Vec<(&'static str, Tensor<S>)> {
        vec![("gain", self.gain.clone()), ("bias", self.bias.clone())]
    }
}

/// One encoder block: attention + feed-forward, each behind a post-norm
/// residual connection. With weight sharing the `attention` field of every
/// block is a handle to one physical parameter set.
#[derive(Clone, Debug)]
pub struct EncoderBlockParams<S: Scalar> {
    pub attention: AttentionParams<S>,
    pub ffn: FeedForwardParams<S>,
    pub norm1: NormParams<S>,
    pub norm2: NormParams<S>,
}

impl<S: Scalar> EncoderBlockParams<S> {
    pub fn init(d: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(EncoderBlockParams {
            attention: AttentionParams::init(d, rng)?,
            ffn: FeedForwardParams::init(d, d_ff, rng)?,
            norm1: NormParams::init(d)?,
            norm2: NormParams::init(d)?,
        })
    }
}

/// Scaled dot-product self-attention with `heads` heads over `[B, n, d]` or
/// `[n, d]` input. Heads are split after the q/k/v projections and merged
/// before the output projection, so the shape is preserved. With
/// `causal` set, position `i` attends only to positions `j <= i`.
pub fn multi_head_attention<S: Scalar>(
    x: &Tensor<S>,
    params: &AttentionParams<S>,
    heads: usize,
    causal: bool,
) -> Result<Tensor<S>> {
    let rank = x.rank();
    if rank != 2 && rank != 3 {
        return Err(Error::shape(format!(
            "attention input must be [n, d] or [B, n, d], got {:?}",
            x.shape()
        )));
    }
    let d = *x.shape().last().unwrap();
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!(
            "hidden dim {d} is not divisible by {heads} heads"
        )));
    }
    let x3 = if rank == 2 {
        let n = x.shape()[0];
        x.reshape(&[1, n, d])?
    } else {
        x.clone()
    };

    let q = linear(&x3, &params.wq, &params.bq)?;
    let k = linear(&x3, &params.wk, &params.bk)?;
    let v = linear(&x3, &params.wv, &params.bv)?;

    let dh = d / heads;
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let mut contexts = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = q.slice_last(head * dh, dh)?;
        let kh = k.slice_last(head * dh, dh)?;
        let vh = v.slice_last(head * dh, dh)?;
        let scores = qh.matmul_nt(&kh)?.scale(scale);
        let weights = scores.attention_softmax(causal)?;
        contexts.push(weights.matmul(&vh)?);
    }
    let merged = Tensor::concat_last(&contexts)?;
    let out = linear(&merged, &params.wo, &params.bo)?;
    if rank == 2 {
        let n = x.shape()[0];
        out.reshape(&[n, d])
    } else {
        Ok(out)
    }
}

/// Position-wise feed-forward: `W2 relu(W1 x + b1) + b2`.
pub fn feed_forward<S: Scalar>(x: &Tensor<S>, params: &FeedForwardParams<S>) -> Result<Tensor<S>> {
    linear(&linear(x, &params.w1, &params.b1)?.relu(), &params.w2, &params.b2)
}

/// Post-norm residual encoder block:
/// `y = LN(x + Drop(MHA(x)))`, `z = LN(y + Drop(FFN(y)))`.
pub fn encoder_block<S: Scalar>(
    x: &Tensor<S>,
    params: &EncoderBlockParams<S>,
    heads: usize,
    causal: bool,
    mut dropout: Option<Dropout<'_>>,
) -> Result<Tensor<S>> {
    let attended = multi_head_attention(x, &params.attention, heads, causal)?;
    let attended = apply_dropout(attended, &mut dropout)?;
    let y = x
        .add(&attended)?
        .layer_norm(&params.norm1.gain, &params.norm1.bias, LAYER_NORM_EPS)?;
    let ff = feed_forward(&y, &params.ffn)?;
    let ff = apply_dropout(ff, &mut dropout)?;
    y.add(&ff)?
        .layer_norm(&params.norm2.gain, &params.norm2.bias, LAYER_NORM_EPS)
}

/// Fixed sinusoidal position table: `PE(pos, 2i) = sin(pos / 10000^(2i/d))`,
/// `PE(pos, 2i+1) = cos(pos / 10000^(2i/d))`. No trainable parameters.
pub fn temporal_encoding<S: Scalar>(n: usize, d: usize) -> Result<Tensor<S>> {
    if d % 2 != 0 {
        return Err(Error::config(format!(
            "temporal encoding needs an even dimension, got {d}"
        )));
    }
    if n == 0 || d == 0 {
        return Err(Error::config("temporal encoding dims must be positive"));
    }
    let mut values = Vec::with_capacity(n * d);
    for pos in 0..n {
        for col in 0..d {
            let i2 = (col / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(i2 / d as f64);
            let v = if col % 2 == 0 { angle.sin() } else { angle.cos() };
            values.push(S::from_f64(v));
        }
    }
    Tensor::from_values(&[n, d], values)
}
