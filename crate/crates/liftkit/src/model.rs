//! The assembled lifting model: input reprojection, temporal encoding, a
//! stack of encoder blocks with optional attention weight sharing, output
//! token selection and reprojection to 3D joint coordinates. Also parameter
//! accounting and the binary checkpoint format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    encoder_block, linear, temporal_encoding, xavier_uniform, AttentionParams, Dropout,
    EncoderBlockParams, FeedForwardParams, NormParams, Scalar, Tensor,
};
use crate::skeleton::Pose3D;
use crate::{Error, Result};

/// Which encoder output token is projected to the 3D pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputToken {
    /// The token at `(n-1)/2`, the frame being lifted.
    #[default]
    Center,
    /// The final token; an alternative for strictly causal pipelines.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden dimension d of every encoder layer.
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Number of encoder blocks E.
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    /// Inner width of the feed-forward nets; fixed at 2048 regardless of
    /// hidden_dim to match the reference parameter budgets.
    #[serde(default = "default_ffn_dim")]
    pub ffn_dim: usize,
    /// Window length n (odd).
    #[serde(default = "default_receptive_field")]
    pub receptive_field: usize,
    #[serde(default = "default_joints")]
    pub joints: usize,
    #[serde(default)]
    pub share_attention: bool,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    #[serde(default)]
    pub causal: bool,
    #[serde(default)]
    pub output_token: OutputToken,
}

fn default_hidden_dim() -> usize {
    512
}
fn default_heads() -> usize {
    8
}
fn default_blocks() -> usize {
    6
}
fn default_ffn_dim() -> usize {
    2048
}
fn default_receptive_field() -> usize {
    27
}
fn default_joints() -> usize {
    17
}
fn default_dropout() -> f64 {
    0.1
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: default_hidden_dim(),
            heads: default_heads(),
            blocks: default_blocks(),
            ffn_dim: default_ffn_dim(),
            receptive_field: default_receptive_field(),
            joints: default_joints(),
            share_attention: false,
            dropout_p: default_dropout(),
            causal: false,
            output_token: OutputToken::Center,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.hidden_dim % 2 != 0 {
            return Err(Error::config(format!(
                "hidden_dim must be a positive even integer, got {}",
                self.hidden_dim
            )));
        }
        if self.heads == 0 || self.hidden_dim % self.heads != 0 {
            return Err(Error::config(format!(
                "hidden_dim {} must be divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.blocks == 0 {
            return Err(Error::config("blocks must be positive"));
        }
        if self.ffn_dim == 0 {
            return Err(Error::config("ffn_dim must be positive"));
        }
        if self.receptive_field == 0 || self.receptive_field % 2 == 0 {
            return Err(Error::config(format!(
                "receptive_field must be odd and positive, got {}",
                self.receptive_field
            )));
        }
        if self.joints == 0 {
            return Err(Error::config("joints must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Index of the token projected to the output pose.
    pub fn output_index(&self) -> usize {
        match self.output_token {
            OutputToken::Center => (self.receptive_field - 1) / 2,
            OutputToken::Last => self.receptive_field - 1,
        }
    }
}

/// Exact number of trainable scalars for a configuration.
///
/// Per block: attention `4d^2 + 4d`, feed-forward `2*d*d_ff + d_ff + d`,
/// two norms `4d`. Plus the input projection `2J*d + d` and the output
/// projection `d*3J + 3J`. With shared attention the attention term is
/// counted once instead of per block.
pub fn parameter_count(config: &ModelConfig) -> u64 {
    let d = config.hidden_dim as u64;
    let d_ff = config.ffn_dim as u64;
    let e = config.blocks as u64;
    let j = config.joints as u64;
    let attention = 4 * d * d + 4 * d;
    let ffn = d * d_ff + d_ff + d_ff * d + d;
    let norms = 4 * d;
    let input_proj = 2 * j * d + d;
    let output_proj = d * 3 * j + 3 * j;
    let attention_total = if config.share_attention { attention } else { e * attention };
    attention_total + e * (ffn + norms) + input_proj + output_proj
}

/// Parameter count in millions.
pub fn parameter_millions(config: &ModelConfig) -> f64 {
    parameter_count(config) as f64 / 1e6
}

/// The count never depends on the head count: verify for h in {4, 8, 16}.
pub fn count_is_head_invariant(config: &ModelConfig) -> bool {
    let mut counts = [4usize, 8, 16].iter().map(|&h| {
        let mut c = config.clone();
        c.heads = h;
        parameter_count(&c)
    });
    let first = counts.next().unwrap();
    counts.all(|c| c == first)
}

#[derive(Debug)]
struct Projection<S: Scalar> {
    weight: Tensor<S>,
    bias: Tensor<S>,
}

/// The assembled network. Frozen models are safe to share across threads for
/// read-only inference; training mutates parameters and needs exclusivity.
#[derive(Debug)]
pub struct LiftFormerModel<S: Scalar> {
    config: ModelConfig,
    input_proj: Projection<S>,
    blocks: Vec<EncoderBlockParams<S>>,
    output_proj: Projection<S>,
    temporal: Tensor<S>,
}

impl<S: Scalar> LiftFormerModel<S> {
    /// Build a freshly initialized model: Xavier-uniform weights, zero
    /// biases, unit norm gains. Deterministic for a given seed.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let j = config.joints;

        let input_proj = Projection {
            weight: Tensor::parameter(&[2 * j, d], xavier_uniform(2 * j, d, &mut rng))?,
            bias: Tensor::parameter(&[d], vec![S::zero(); d])?,
        };

        let shared = if config.share_attention {
            Some(AttentionParams::init(d, &mut rng)?)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            let attention = match &shared {
                Some(a) => a.clone(),
                None => AttentionParams::init(d, &mut rng)?,
            };
            blocks.push(EncoderBlockParams {
                attention,
                ffn: FeedForwardParams::init(d, config.ffn_dim, &mut rng)?,
                norm1: NormParams::init(d)?,
                norm2: NormParams::init(d)?,
            });
        }

        let output_proj = Projection {
            weight: Tensor::parameter(&[d, 3 * j], xavier_uniform(d, 3 * j, &mut rng))?,
            bias: Tensor::parameter(&[3 * j], vec![S::zero(); 3 * j])?,
        };

        let temporal = temporal_encoding(config.receptive_field, d)?;
        Ok(LiftFormerModel { config: config.clone(), input_proj, blocks, output_proj, temporal })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[EncoderBlockParams<S>] {
        &self.blocks
    }

    /// Flip the causal mask on an existing model (inference-time switch).
    pub fn set_causal(&mut self, causal: bool) {
        self.config.causal = causal;
    }

    /// Named parameter registry in a fixed order. Physically shared storage
    /// appears exactly once, so walking this registry counts every scalar
    /// exactly once.
    pub fn parameters(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        out.push(("input_proj.weight".to_string(), self.input_proj.weight.clone()));
        out.push(("input_proj.bias".to_string(), self.input_proj.bias.clone()));
        if self.config.share_attention {
            for (name, t) in self.blocks[0].attention.named() {
                out.push((format!("shared_attention.{name}"), t));
            }
        }
        for (i, block) in self.blocks.iter().enumerate() {
            if !self.config.share_attention {
                for (name, t) in block.attention.named() {
                    out.push((format!("blocks.{i}.attention.{name}"), t));
                }
            }
            for (name, t) in block.ffn.named() {
                out.push((format!("blocks.{i}.ffn.{name}"), t));
            }
            for (name, t) in block.norm1.named() {
                out.push((format!("blocks.{i}.norm1.{name}"), t));
            }
            for (name, t) in block.norm2.named() {
                out.push((format!("blocks.{i}.norm2.{name}"), t));
            }
        }
        out.push(("output_proj.weight".to_string(), self.output_proj.weight.clone()));
        out.push(("output_proj.bias".to_string(), self.output_proj.bias.clone()));
        out
    }

    /// Total scalars found by walking the registry.
    pub fn registry_parameter_count(&self) -> u64 {
        self.parameters().iter().map(|(_, t)| t.numel() as u64).sum()
    }

    fn forward_impl(&self, window: &Tensor<S>, dropout: Option<Dropout<'_>>) -> Result<Tensor<S>> {
        let n = self.config.receptive_field;
        let in_dim = 2 * self.config.joints;
        let (batched, x) = match window.shape() {
            [wn, wd] if *wn == n && *wd == in_dim => (false, window.reshape(&[1, n, in_dim])?),
            [_, wn, wd] if *wn == n && *wd == in_dim => (true, window.clone()),
            other => {
                return Err(Error::shape(format!(
                    "window shape {other:?} does not match [n={n}, 2J={in_dim}]"
                )))
            }
        };

        let mut h =
            linear(&x, &self.input_proj.weight, &self.input_proj.bias)?.add(&self.temporal)?;
        let mut dropout = dropout;
        for block in &self.blocks {
            let ctx = dropout.as_mut().map(|d| Dropout { p: d.p, rng: &mut *d.rng });
            h = encoder_block(&h, block, self.config.heads, self.config.causal, ctx)?;
        }
        let token = h.select_position(self.config.output_index())?;
        let out = linear(&token, &self.output_proj.weight, &self.output_proj.bias)?;
        if batched {
            Ok(out)
        } else {
            out.reshape(&[3 * self.config.joints])
        }
    }

    /// Inference forward: dropout disabled, deterministic. Accepts one
    /// window `[n, 2J]` (returns `[3J]`) or a batch `[B, n, 2J]`
    /// (returns `[B, 3J]`).
    pub fn forward(&self, window: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward_impl(window, None)
    }

    /// Training forward with an active dropout stream.
    pub fn forward_training(&self, window: &Tensor<S>, rng: &mut ChaCha8Rng) -> Result<Tensor<S>> {
        let p = self.config.dropout_p;
        self.forward_impl(window, Some(Dropout { p, rng }))
    }

    /// Interpret a `[3J]` output vector as a root-relative pose in mm.
    pub fn output_to_pose(&self, out: &[S]) -> Result<Pose3D> {
        if out.len() != 3 * self.config.joints {
            return Err(Error::shape(format!(
                "output has {} values, expected {}",
                out.len(),
                3 * self.config.joints
            )));
        }
        let coords = out
            .chunks_exact(3)
            .map(|c| [c[0].to_f64(), c[1].to_f64(), c[2].to_f64()])
            .collect();
        Pose3D::new(coords)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"LFT1";
const CHECKPOINT_VERSION: u32 = 1;

impl LiftFormerModel<f32> {
    /// Serialize config and parameters. The format is versioned and
    /// bit-exact: magic, version, length-prefixed config JSON, a table of
    /// (name, shape, byte offset) entries, then little-endian f32 payloads.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let config_json = serde_json::to_vec(&self.config)?;
        w.write_all(&(config_json.len() as u32).to_le_bytes())?;
        w.write_all(&config_json)?;

        let params = self.parameters();
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        let mut offset = 0u64;
        for (name, t) in &params {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[t.rank() as u8])?;
            for &dim in t.shape() {
                w.write_all(&(dim as u32).to_le_bytes())?;
            }
            w.write_all(&offset.to_le_bytes())?;
            offset += 4 * t.numel() as u64;
        }
        w.write_all(&offset.to_le_bytes())?;
        for (_, t) in &params {
            t.values_ref(|vals| -> Result<()> {
                for v in vals {
                    w.write_all(&v.to_le_bytes())?;
                }
                Ok(())
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);

        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::data(format!("not a checkpoint: bad magic {magic:02x?}")));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::data(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let config_len = read_u32(&mut r)? as usize;
        let mut config_bytes = vec![0u8; config_len];
        read_exact(&mut r, &mut config_bytes)?;
        let config: ModelConfig = serde_json::from_slice(&config_bytes)?;
        config.validate()?;

        let param_count = read_u32(&mut r)? as usize;
        let mut table = Vec::with_capacity(param_count);
        for _ in 0..param_count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            read_exact(&mut r, &mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::data("parameter name is not UTF-8"))?;
            let mut rank = [0u8; 1];
            read_exact(&mut r, &mut rank)?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                shape.push(read_u32(&mut r)? as usize);
            }
            let mut offset_bytes = [0u8; 8];
            read_exact(&mut r, &mut offset_bytes)?;
            table.push((name, shape, u64::from_le_bytes(offset_bytes)));
        }
        let mut payload_len_bytes = [0u8; 8];
        read_exact(&mut r, &mut payload_len_bytes)?;
        let payload_len = u64::from_le_bytes(payload_len_bytes) as usize;
        let mut payload = vec![0u8; payload_len];
        read_exact(&mut r, &mut payload)?;

        // Seed is irrelevant: every parameter is overwritten below.
        let model = LiftFormerModel::<f32>::build(&config, 0)?;
        let registry = model.parameters();
        if table.len() != registry.len() {
            return Err(Error::data(format!(
                "checkpoint has {} parameters, model wants {}",
                table.len(),
                registry.len()
            )));
        }
        for ((name, shape, offset), (expect_name, tensor)) in table.iter().zip(&registry) {
            if name != expect_name {
                return Err(Error::data(format!(
                    "unexpected parameter '{name}' (expected '{expect_name}')"
                )));
            }
            if shape != tensor.shape() {
                return Err(Error::data(format!(
                    "parameter '{name}' has shape {shape:?}, model wants {:?}",
                    tensor.shape()
                )));
            }
            let bytes = 4 * tensor.numel();
            let start = *offset as usize;
            let end = start + bytes;
            if end > payload.len() {
                return Err(Error::data(format!("parameter '{name}' payload out of bounds")));
            }
            let values: Vec<f32> = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensor.set_values(&values)?;
        }
        Ok(model)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::data(format!("checkpoint truncated or unreadable: {e}")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}
