use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Unary, Var};
use crate::error::Result;
use crate::nn::{Conv2d, GroupNorm, ResBlock};
use crate::optim::ParamStore;
use crate::rng::Rng;
use crate::tensor::Real;

/// Fully convolutional encoder with one stride-2 downsampling per stage.
#[derive(Debug, Clone)]
pub struct Encoder {
    conv_in: Conv2d,
    stages: Vec<(Vec<ResBlock>, Conv2d)>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl Encoder {
    pub fn new<T: Real>(s: &mut ParamStore<T>, rng: &mut Rng, widths: &[usize], blocks: usize, latent: usize) -> Self {
        let conv_in = Conv2d::same(s, rng, "enc.conv_in", 3, widths[0], 3);
        let stages = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let res = (0..blocks).map(|j| ResBlock::new(s, rng, &format!("enc.stage{i}.res{j}"), w)).collect();
                let next = widths.get(i + 1).copied().unwrap_or(w);
                (res, Conv2d::new(s, rng, &format!("enc.stage{i}.down"), w, next, 3, 2, 1))
            })
            .collect();
        let last = *widths.last().expect("non-empty widths");
        Encoder {
            conv_in,
            stages,
            norm_out: GroupNorm::new(s, "enc.norm_out", last),
            conv_out: Conv2d::same(s, rng, "enc.conv_out", last, latent, 1),
        }
    }

    /// `[b, 3, r, r] -> [b, latent, r/f, r/f]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = self.conv_in.forward(g, s, x)?;
        for (res, down) in &self.stages {
            for r in res {
                h = r.forward(g, s, h)?;
            }
            h = down.forward(g, s, h)?;
        }
        h = self.norm_out.forward(g, s, h)?;
        h = g.silu(h);
        self.conv_out.forward(g, s, h)
    }
}

/// Mirror of [`Encoder`] with nearest-neighbour upsampling.
#[derive(Debug, Clone)]
pub struct Decoder {
    conv_in: Conv2d,
    stages: Vec<(Vec<ResBlock>, Conv2d)>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl Decoder {
    pub fn new<T: Real>(s: &mut ParamStore<T>, rng: &mut Rng, widths: &[usize], blocks: usize, code_dim: usize) -> Self {
        let last = *widths.last().expect("non-empty widths");
        let conv_in = Conv2d::same(s, rng, "dec.conv_in", code_dim, last, 3);
        let stages = (0..widths.len())
            .rev()
            .map(|i| {
                let w = widths[i];
                let res = (0..blocks).map(|j| ResBlock::new(s, rng, &format!("dec.stage{i}.res{j}"), w)).collect();
                let next = if i == 0 { w } else { widths[i - 1] };
                (res, Conv2d::same(s, rng, &format!("dec.stage{i}.up"), w, next, 3))
            })
            .collect();
        Decoder {
            conv_in,
            stages,
            norm_out: GroupNorm::new(s, "dec.norm_out", widths[0]),
            conv_out: Conv2d::same(s, rng, "dec.conv_out", widths[0], 3, 3),
        }
    }

    /// `[b, code_dim, h, w] -> [b, 3, h·f, w·f]`, unclamped.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, z: Var) -> Result<Var> {
        let mut h = self.conv_in.forward(g, s, z)?;
        for (res, up) in &self.stages {
            for r in res {
                h = r.forward(g, s, h)?;
            }
            h = g.upsample2x(h)?;
            h = up.forward(g, s, h)?;
        }
        h = self.norm_out.forward(g, s, h)?;
        h = g.silu(h);
        self.conv_out.forward(g, s, h)
    }
}

/// Strided convolutional patch critic producing one score per patch.
#[derive(Debug, Clone)]
pub struct PatchCritic {
    layers: Vec<Conv2d>,
}

impl PatchCritic {
    pub fn new<T: Real>(s: &mut ParamStore<T>, rng: &mut Rng, widths: &[usize]) -> Self {
        let mut layers = Vec::new();
        let mut cin = 3;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Conv2d::new(s, rng, &format!("critic.conv{i}"), cin, w, 4, 2, 1));
            cin = w;
        }
        layers.push(Conv2d::same(s, rng, "critic.out", cin, 1, 3));
        PatchCritic { layers }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, s, h)?;
            if i + 1 < n {
                h = g.unary(h, Unary::LeakyRelu(0.2));
            }
        }
        Ok(h)
    }
}
