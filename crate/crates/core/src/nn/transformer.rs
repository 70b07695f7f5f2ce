use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{join, Linear, RmsNorm};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::optim::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Real;

/// Llama-style decoder stack: pre-RMSNorm blocks, causal attention with
/// QK layer normalization, SiLU-gated MLP and learned absolute positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    /// Longest sequence the position table covers.
    pub max_len: usize,
}

impl TransformerConfig {
    /// Width follows the 64-dimensions-per-head rule.
    pub fn scaled(layers: usize, heads: usize, max_len: usize) -> Self {
        TransformerConfig { layers, heads, dim: 64 * heads, max_len }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    pub fn mlp_hidden(&self) -> usize {
        (8 * self.dim / 3).div_ceil(8) * 8
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim % self.heads != 0 || self.max_len == 0 {
            return Err(Error::Config(format!("invalid transformer {:?}", self)));
        }
        Ok(())
    }

    /// Parameters of the block stack, final norm and position table.
    pub fn backbone_params(&self) -> usize {
        let (d, h, hd) = (self.dim, self.mlp_hidden(), self.head_dim());
        let block = 2 * d + 3 * d * d + 2 * hd + d * d + 3 * d * h;
        self.layers * block + d + self.max_len * d
    }
}

#[derive(Debug, Clone)]
struct Block {
    norm1: RmsNorm,
    qkv: Linear,
    q_gain: ParamId,
    k_gain: ParamId,
    proj: Linear,
    norm2: RmsNorm,
    gate: Linear,
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone)]
pub struct CausalTransformer {
    pub config: TransformerConfig,
    pos: ParamId,
    blocks: Vec<Block>,
    final_norm: RmsNorm,
}

impl CausalTransformer {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, prefix: &str, config: TransformerConfig) -> Result<Self> {
        config.validate()?;
        let (d, hd, hidden) = (config.dim, config.head_dim(), config.mlp_hidden());
        let std = 0.02;
        let out_std = std / libm::sqrt(2.0 * config.layers.max(1) as f64);
        let pos = store.add(join(prefix, "pos"), rng.normal_tensor(&[config.max_len, d], std));
        let blocks = (0..config.layers)
            .map(|l| {
                let n = |s: &str| join(prefix, &format!("block{l}.{s}"));
                Block {
                    norm1: RmsNorm::new(store, &n("norm1"), d),
                    qkv: Linear::new(store, rng, &n("qkv"), d, 3 * d, false, std),
                    q_gain: store.add(n("q_norm.gain"), crate::Tensor::full(&[hd], T::one())),
                    k_gain: store.add(n("k_norm.gain"), crate::Tensor::full(&[hd], T::one())),
                    proj: Linear::new(store, rng, &n("proj"), d, d, false, out_std),
                    norm2: RmsNorm::new(store, &n("norm2"), d),
                    gate: Linear::new(store, rng, &n("gate"), d, hidden, false, std),
                    up: Linear::new(store, rng, &n("up"), d, hidden, false, std),
                    down: Linear::new(store, rng, &n("down"), hidden, d, false, out_std),
                }
            })
            .collect();
        Ok(CausalTransformer { config, pos, blocks, final_norm: RmsNorm::new(store, &join(prefix, "final_norm"), d) })
    }

    /// `x [b, t, dim] -> [b, t, dim]`, position `i` attends to `0..=i`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let c = &self.config;
        if shape.len() != 3 || shape[2] != c.dim {
            return Err(Error::shape("transformer", &shape, &[0, c.max_len, c.dim]));
        }
        let (b, t) = (shape[0], shape[1]);
        if t > c.max_len {
            return Err(Error::invalid("transformer", format!("sequence length {} exceeds {}", t, c.max_len)));
        }
        let pos = g.param(s, self.pos);
        let pos = g.slice(pos, 0, 0, t)?;
        let mut h = g.add_bcast(x, pos)?;
        let (heads, hd) = (c.heads, c.head_dim());
        for blk in &self.blocks {
            let a = blk.norm1.forward(g, s, h)?;
            let qkv = blk.qkv.forward(g, s, a)?;
            let qkv = g.reshape(qkv, &[b, t, 3, heads, hd])?;
            let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
            let split = |g: &mut Graph<T>, i: usize| -> Result<Var> {
                let v = g.slice(qkv, 0, i, 1)?;
                g.reshape(v, &[b, heads, t, hd])
            };
            let (q, k, v) = (split(g, 0)?, split(g, 1)?, split(g, 2)?);
            let q = {
                let n = g.layer_norm(q, 1e-6);
                let gain = g.param(s, blk.q_gain);
                g.mul_bcast(n, gain)?
            };
            let k = {
                let n = g.layer_norm(k, 1e-6);
                let gain = g.param(s, blk.k_gain);
                g.mul_bcast(n, gain)?
            };
            let att = g.causal_attention(q, k, v)?;
            let att = g.permute(att, &[0, 2, 1, 3])?;
            let att = g.reshape(att, &[b, t, c.dim])?;
            let att = blk.proj.forward(g, s, att)?;
            h = g.add(h, att)?;

            let m = blk.norm2.forward(g, s, h)?;
            let gate = blk.gate.forward(g, s, m)?;
            let gate = g.silu(gate);
            let up = blk.up.forward(g, s, m)?;
            let inner = g.mul(gate, up)?;
            let out = blk.down.forward(g, s, inner)?;
            h = g.add(h, out)?;
        }
        self.final_norm.forward(g, s, h)
    }
}
