//! Stage 1: convolutional VQ auto-encoder with an optional patch critic and
//! the causal next-latent regularizer.

mod arch;
mod crt;
mod losses;
mod train;

pub use arch::{Decoder, Encoder, PatchCritic};
pub use crt::CrtRegularizer;
pub use losses::{perceptual_proxy, wasserstein_losses};
pub use train::{LossTerms, Stage1LossReport, Stage1Trainer};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::optim::{OptimConfig, ParamStore};
use crate::quantize::{QuantMode, QuantizationResult, Quantizer, QuantizerConfig};
use crate::rng::{derive, Rng};
use crate::synth::bicubic_resize;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub vq: f64,
    pub gan: f64,
    pub perceptual: f64,
    pub l2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { vq: 1.0, gan: 0.5, perceptual: 1.0, l2: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub enabled: bool,
    /// First step of the cosine ramp of the adversarial weight.
    pub start: u64,
    pub ramp: u64,
    pub widths: Vec<usize>,
    /// Critic weights are clipped to `[-clip, clip]` after each update.
    pub clip: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig { enabled: false, start: 1000, ramp: 100, widths: vec![32, 64], clip: 0.01 }
    }
}

/// Which latents the regularizer models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrtLatents {
    /// Unit-norm code-space latents right before the codebook lookup.
    Normalized,
    /// Raw projection output, before normalization.
    Projected,
    /// Encoder output before the projection.
    Encoder,
}

/// How the compute-parity iteration budget is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParityRule {
    /// 5% of the baseline budget per two regularizer layers.
    Fixed,
    /// The regularizer's share of forward FLOPs on this configuration.
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrtConfig {
    pub enabled: bool,
    pub layers: usize,
    pub heads: usize,
    /// Target weight reached at the end of the ramp.
    pub lambda: f64,
    pub ramp: u64,
    pub latents: CrtLatents,
    pub parity: ParityRule,
    pub optim: OptimConfig,
}

impl Default for CrtConfig {
    fn default() -> Self {
        CrtConfig {
            enabled: false,
            layers: 2,
            heads: 1,
            lambda: 4.0,
            ramp: 100,
            latents: CrtLatents::Projected,
            parity: ParityRule::Fixed,
            optim: OptimConfig { lr: 1e-3, warmup_start: 1e-3, warmup_steps: 0, beta1: 0.5, beta2: 0.9, weight_decay: 0.1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    /// Training image side `R`.
    pub side: usize,
    /// Channel width of each stride-2 stage; `f = 2^stages`.
    pub widths: Vec<usize>,
    pub res_blocks: usize,
    /// Encoder output width before the projection.
    pub latent_width: usize,
    pub quantizer: QuantizerConfig,
    pub loss: LossWeights,
    pub gan: GanConfig,
    pub crt: CrtConfig,
    pub optim: OptimConfig,
    pub iterations: u64,
    pub batch: usize,
    /// Shrink `iterations` by the regularizer's compute share.
    pub compute_parity: bool,
    pub log_every: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            side: 32,
            widths: vec![32, 64, 128],
            res_blocks: 2,
            latent_width: 64,
            quantizer: QuantizerConfig { codes: 256, input_width: 64, levels: vec![4, 4, 4, 4], ..Default::default() },
            loss: LossWeights::default(),
            gan: GanConfig::default(),
            crt: CrtConfig::default(),
            optim: OptimConfig::default(),
            iterations: 2000,
            batch: 32,
            compute_parity: true,
            log_every: 50,
        }
    }
}

impl TokenizerConfig {
    pub fn factor(&self) -> usize {
        1 << self.widths.len()
    }

    pub fn grid(&self) -> usize {
        self.side / self.factor()
    }

    pub fn tokens_per_image(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.factor();
        let bad = |m: &str| Err(Error::Config(format!("tokenizer: {m}")));
        if self.widths.is_empty() || self.widths.iter().any(|w| *w == 0) {
            return bad("widths must be non-empty and positive");
        }
        if self.side == 0 || self.side % f != 0 {
            return bad(&format!("side {} not divisible by f={}", self.side, f));
        }
        if self.quantizer.input_width != self.latent_width {
            return bad("quantizer.input_width must equal latent_width");
        }
        let w = &self.loss;
        if [w.vq, w.gan, w.perceptual, w.l2, self.crt.lambda].iter().any(|v| !(*v >= 0.0)) {
            return bad("loss weights must be non-negative");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if self.crt.enabled && self.crt.heads == 0 {
            return bad("crt.heads must be positive");
        }
        self.quantizer.validate()
    }

    /// Fraction of the baseline iteration budget granted under compute
    /// parity by the fixed rule: 5% less per two regularizer layers.
    pub fn fixed_parity_multiplier(&self) -> f64 {
        if !self.crt.enabled {
            return 1.0;
        }
        1.0 - 0.05 * self.crt.layers as f64 / 2.0
    }

    /// Width of the latents the regularizer sees.
    pub fn crt_width(&self) -> usize {
        match self.crt.latents {
            CrtLatents::Normalized | CrtLatents::Projected => self.quantizer.code_dim(),
            CrtLatents::Encoder => self.latent_width,
        }
    }
}

/// Row-major grid of token ids; the raster sequence is `tokens` itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub height: usize,
    pub width: usize,
    pub tokens: Vec<u32>,
}

impl TokenGrid {
    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("token_grid", "ragged rows"));
        }
        Ok(TokenGrid { height: rows.len(), width, tokens: rows.concat() })
    }

    pub fn from_sequence(seq: Vec<u32>, height: usize, width: usize) -> Result<Self> {
        if seq.len() != height * width {
            return Err(Error::shape("token_grid", &[seq.len()], &[height, width]));
        }
        Ok(TokenGrid { height, width, tokens: seq })
    }

    pub fn at(&self, y: usize, x: usize) -> u32 {
        self.tokens[y * self.width + x]
    }

    pub fn rows(&self) -> Vec<Vec<u32>> {
        self.tokens.chunks(self.width.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn sequence(&self) -> &[u32] {
        &self.tokens
    }
}

/// Graph handles for one encode/quantize/decode pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Encoder output, `[b, h, w, latent_width]`.
    pub features: Var,
    /// Projection output before quantization, `[b, h, w, code_dim]`.
    pub projected: Var,
    pub quant: QuantizationResult,
    /// Unclamped reconstruction `[b, 3, r, r]`.
    pub recon: Var,
    pub grid: (usize, usize),
}

impl Forward {
    pub fn crt_source(&self, latents: CrtLatents) -> Var {
        match latents {
            CrtLatents::Normalized => self.quant.latents,
            CrtLatents::Projected => self.projected,
            CrtLatents::Encoder => self.features,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer<T: Real> {
    pub config: TokenizerConfig,
    /// Encoder, decoder, projection and codebook.
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub quantizer: Quantizer,
    pub crt: Option<CrtRegularizer>,
    pub crt_store: ParamStore<T>,
    pub critic: Option<PatchCritic>,
    pub critic_store: ParamStore<T>,
}

pub fn stack<T: Real>(images: &[Tensor<f32>]) -> Result<Tensor<T>> {
    let first = images.first().ok_or(Error::Empty("image batch"))?;
    let s = first.shape().to_vec();
    let mut data = Vec::with_capacity(images.len() * first.numel());
    for im in images {
        if im.shape() != s.as_slice() {
            return Err(Error::shape("stack", &s, im.shape()));
        }
        data.extend(im.data().iter().map(|v| T::c(*v as f64)));
    }
    let mut shape = vec![images.len()];
    shape.extend(s);
    Tensor::new(&shape, data)
}

pub fn unstack<T: Real>(batch: &[T], n: usize, side: usize, clamp: bool) -> Vec<Tensor<f32>> {
    batch
        .chunks(3 * side * side)
        .take(n)
        .map(|c| {
            let data = c
                .iter()
                .map(|v| {
                    let v = v.f64() as f32;
                    if clamp {
                        v.clamp(-1.0, 1.0)
                    } else {
                        v
                    }
                })
                .collect();
            Tensor::new(&[3, side, side], data).expect("consistent size")
        })
        .collect()
}

const INFER_CHUNK: usize = 32;

impl<T: Real> Tokenizer<T> {
    pub fn new(config: TokenizerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::new(derive(seed, 0));
        let encoder = Encoder::new(&mut store, &mut rng, &config.widths, config.res_blocks, config.latent_width);
        let quantizer = Quantizer::new(&mut store, &mut rng, config.quantizer.clone())?;
        let decoder = Decoder::new(&mut store, &mut rng, &config.widths, config.res_blocks, config.quantizer.code_dim());

        let mut crt_store = ParamStore::new();
        let crt = if config.crt.enabled {
            let mut r = Rng::new(derive(seed, 1));
            Some(CrtRegularizer::new(
                &mut crt_store,
                &mut r,
                config.crt_width(),
                config.crt.layers,
                config.crt.heads,
                config.tokens_per_image(),
            )?)
        } else {
            None
        };
        let mut critic_store = ParamStore::new();
        let critic = config.gan.enabled.then(|| PatchCritic::new(&mut critic_store, &mut Rng::new(derive(seed, 2)), &config.gan.widths));
        Ok(Tokenizer { config, store, encoder, decoder, quantizer, crt, crt_store, critic, critic_store })
    }

    pub fn factor(&self) -> usize {
        self.config.factor()
    }

    pub fn vocab(&self) -> usize {
        self.config.quantizer.vocab()
    }

    fn check_images(&self, shape: &[usize], exact: bool) -> Result<(usize, usize)> {
        let f = self.factor();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != shape[3] {
            return Err(Error::invalid("encode", format!("expected [b, 3, r, r], got {:?}", shape)));
        }
        let r = shape[2];
        if (exact && r != self.config.side) || r % f != 0 || r == 0 {
            return Err(Error::invalid("encode", format!("side {} incompatible with R={} f={}", r, self.config.side, f)));
        }
        Ok((r / f, r / f))
    }

    /// Encoder features `[b, h, w, latent]` and projected latents
    /// `[b, h, w, d]` in raster layout.
    pub fn encode(&self, g: &mut Graph<T>, x: Var) -> Result<(Var, Var)> {
        self.check_images(g.shape(x), false)?;
        let z = self.encoder.forward(g, &self.store, x)?;
        let z = g.permute(z, &[0, 2, 3, 1])?;
        let p = self.quantizer.project(g, &self.store, z)?;
        Ok((z, p))
    }

    /// Decodes code vectors `[b, h, w, d]` to unclamped images.
    pub fn decode(&self, g: &mut Graph<T>, codes: Var) -> Result<Var> {
        let s = g.shape(codes).to_vec();
        let d = self.config.quantizer.code_dim();
        if s.len() != 4 || s[3] != d || s[1] == 0 || s[2] == 0 {
            return Err(Error::shape("decode", &s, &[0, 0, 0, d]));
        }
        let c = g.permute(codes, &[0, 3, 1, 2])?;
        self.decoder.forward(g, &self.store, c)
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Forward> {
        let (features, latents) = self.encode(g, x)?;
        let s = g.shape(latents).to_vec();
        let (b, h, w, d) = (s[0], s[1], s[2], s[3]);
        let flat = g.reshape(latents, &[b * h * w, d])?;
        let quant = self.quantizer.quantize(g, &self.store, flat)?;
        let codes = g.reshape(quant.decoder_input, &[b, h, w, d])?;
        let recon = self.decode(g, codes)?;
        Ok(Forward { features, projected: latents, quant, recon, grid: (h, w) })
    }

    /// Token grids for images of any side divisible by `f`.
    pub fn tokenize(&self, images: &[Tensor<f32>]) -> Result<Vec<TokenGrid>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFER_CHUNK) {
            let x = stack::<T>(chunk)?;
            let (h, w) = self.check_images(x.shape(), false)?;
            let mut g = Graph::new();
            let x = g.constant(x);
            let (_, p) = self.encode(&mut g, x)?;
            let flat = g.reshape(p, &[chunk.len() * h * w, self.config.quantizer.code_dim()])?;
            let q = self.quantizer.quantize(&mut g, &self.store, flat)?;
            for seq in q.indices.chunks(h * w) {
                out.push(TokenGrid::from_sequence(seq.to_vec(), h, w)?);
            }
        }
        Ok(out)
    }

    /// Images `[3, h·f, w·f]` in `[-1, 1]` for token grids.
    pub fn decode_tokens(&self, grids: &[TokenGrid]) -> Result<Vec<Tensor<f32>>> {
        let mut out = Vec::with_capacity(grids.len());
        let d = self.config.quantizer.code_dim();
        for chunk in grids.chunks(INFER_CHUNK) {
            let (h, w) = (chunk[0].height, chunk[0].width);
            if h != w || chunk.iter().any(|t| (t.height, t.width) != (h, w)) {
                return Err(Error::invalid("decode", "grids must be square and share an extent"));
            }
            let ids: Vec<u32> = chunk.iter().flat_map(|t| t.tokens.iter().copied()).collect();
            let mut g = Graph::new();
            let e = self.quantizer.embed_tokens(&mut g, &self.store, &ids)?;
            let e = g.reshape(e, &[chunk.len(), h, w, d])?;
            let x = self.decode(&mut g, e)?;
            out.extend(unstack(g.data(x), chunk.len(), h * self.factor(), true));
        }
        Ok(out)
    }

    /// Clamped reconstructions, same side as the input.
    pub fn reconstruct(&self, images: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFER_CHUNK) {
            let x = stack::<T>(chunk)?;
            let side = x.shape()[2];
            let mut g = Graph::new();
            let x = g.constant(x);
            let fw = self.forward(&mut g, x)?;
            out.extend(unstack(g.data(fw.recon), chunk.len(), side, true));
        }
        Ok(out)
    }

    /// Reconstructs at the input side, then resizes bicubically to `side`.
    pub fn reconstruct_at(&self, images: &[Tensor<f32>], side: usize) -> Result<Vec<Tensor<f32>>> {
        self.reconstruct(images)?.iter().map(|im| bicubic_resize(im, side)).collect()
    }

    /// Token count `(r/f)²` for images of side `r`.
    pub fn tokens_at(&self, r: usize) -> Result<usize> {
        let f = self.factor();
        if r == 0 || r % f != 0 {
            return Err(Error::invalid("tokenize_at_resolution", format!("side {} not divisible by f={}", r, f)));
        }
        Ok((r / f) * (r / f))
    }

    /// Fraction of forward FLOPs spent in the regularizer for one training
    /// batch of this configuration.
    pub fn measured_regularizer_fraction(&self) -> Result<f64> {
        let Some(crt) = &self.crt else { return Ok(0.0) };
        let r = self.config.side;
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, r, r]));
        let fw = self.forward(&mut g, x)?;
        let extractor = crate::metrics::FeatureExtractor::default();
        let _ = perceptual_proxy(&mut g, &extractor, fw.recon, x)?;
        let base = g.forward_flops();
        let n = self.config.tokens_per_image();
        let lat = g.reshape(fw.crt_source(self.config.crt.latents), &[1, n, self.config.crt_width()])?;
        let _ = crt.loss(&mut g, &self.crt_store, lat)?;
        let total = g.forward_flops();
        Ok((total - base) as f64 / total as f64)
    }

    /// Iteration budget after compute-parity adjustment.
    pub fn effective_iterations(&self) -> Result<u64> {
        let c = &self.config;
        if !c.compute_parity || !c.crt.enabled {
            return Ok(c.iterations);
        }
        let m = match c.crt.parity {
            ParityRule::Fixed => c.fixed_parity_multiplier(),
            ParityRule::Measured => 1.0 - self.measured_regularizer_fraction()?,
        };
        Ok(libm::round(c.iterations as f64 * m) as u64)
    }

    pub fn is_fsq(&self) -> bool {
        self.config.quantizer.mode == QuantMode::Fsq
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(crt: bool) -> TokenizerConfig {
        TokenizerConfig {
            side: 16,
            widths: vec![8, 8],
            res_blocks: 1,
            latent_width: 8,
            quantizer: QuantizerConfig { codes: 16, dim: 4, input_width: 8, ..Default::default() },
            crt: CrtConfig { enabled: crt, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn grid_extent_and_token_counts() {
        let t = Tokenizer::<f32>::new(tiny(false), 0).unwrap();
        let img = Tensor::from_fn(&[3, 16, 16], |i| (i % 7) as f32 / 7.0);
        let grids = t.tokenize(&[img.clone()]).unwrap();
        assert_eq!((grids[0].height, grids[0].width), (4, 4));
        let big = Tensor::from_fn(&[3, 24, 24], |i| (i % 5) as f32 / 5.0);
        assert_eq!(t.tokenize(&[big]).unwrap()[0].tokens.len(), 36);
        assert_eq!(t.tokens_at(32).unwrap(), 64);
        assert!(t.tokens_at(18).is_err());
        let rec = t.reconstruct(&[img.clone(), img.clone()]).unwrap();
        assert_eq!(rec[0].shape(), img.shape());
        assert_eq!(rec[0], rec[1]);
        let zeros = TokenGrid::from_sequence(vec![0; 16], 4, 4).unwrap();
        assert!(t.decode_tokens(&[zeros]).unwrap()[0].all_finite());
    }

    #[test]
    fn side_256_gives_16x16_grid() {
        let c = TokenizerConfig { side: 256, widths: vec![8; 4], ..tiny(false) };
        assert_eq!(c.tokens_per_image(), 256);
    }

    #[test]
    fn parity_multipliers() {
        let mut c = tiny(true);
        assert_eq!(c.fixed_parity_multiplier(), 0.95);
        c.crt.layers = 4;
        assert!((c.fixed_parity_multiplier() - 0.90).abs() < 1e-12);
        c.crt.enabled = false;
        assert_eq!(c.fixed_parity_multiplier(), 1.0);
    }

    #[test]
    fn grid_sequence_round_trip() {
        let rows = vec![vec![1, 2, 3], vec![4, 5, 6]];
        let g = TokenGrid::from_rows(&rows).unwrap();
        assert_eq!(g.sequence(), &[1, 2, 3, 4, 5, 6]);
        assert_eq!(g.at(1, 0), 4);
        assert_eq!(TokenGrid::from_sequence(g.tokens.clone(), 2, 3).unwrap().rows(), rows);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = tiny(false);
        c.side = 18;
        assert!(c.validate().is_err());
        let mut c = tiny(false);
        c.loss.l2 = -1.0;
        assert!(c.validate().is_err());
    }
}
