//! Training and evaluation loops shared by the CLI, sweeps and tests.

use std::time::Instant;

use crtlab_core::generator::{self, Generator, GeneratorConfig, PerPositionReport, Stage2Trainer, TokenSet};
use crtlab_core::metrics::{self, entropy_report, frechet_distance, EntropyReport, FeatureExtractor, GaussianStats};
use crtlab_core::rng::Rng;
use crtlab_core::scaling::cfg_selection;
use crtlab_core::tokenizer::{Stage1Trainer, TokenGrid, Tokenizer, TokenizerConfig};
use crtlab_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::logs::JsonLines;
use crate::pool;

/// Images per forward pass during evaluation.
pub const EVAL_BATCH: usize = 64;

/// Batches drawn without replacement; the order is reshuffled every epoch.
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
    pub epoch: u64,
}

impl EpochSampler {
    pub fn new(n: usize, rng: Rng) -> Self {
        let mut s = EpochSampler { order: (0..n).collect(), pos: 0, rng, epoch: 0 };
        s.rng.shuffle(&mut s.order);
        s
    }

    /// Next batch of `size` indices and whether an epoch ended before it.
    pub fn next(&mut self, size: usize) -> (Vec<usize>, bool) {
        let size = size.min(self.order.len());
        let mut wrapped = false;
        if self.pos + size > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
            self.epoch += 1;
            wrapped = true;
        }
        let b = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        (b, wrapped)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage1Log {
    pub step: u64,
    pub vq: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub l2: f64,
    pub perceptual: f64,
    pub gan: f64,
    pub crt: f64,
    pub total: f64,
    pub lambda_crt: f64,
    pub lambda_gan: f64,
    pub lr: f64,
    pub critic: Option<f64>,
    pub utilization: Option<f64>,
    pub epoch: u64,
    pub wall_time_s: f64,
}

pub struct Stage1Outcome {
    pub tok: Tokenizer<f32>,
    pub steps: u64,
    pub wall_time_s: f64,
    /// Utilization over the last completed epoch.
    pub utilization: Option<f64>,
}

pub fn train_tokenizer(
    config: TokenizerConfig,
    seed: u64,
    images: &[Tensor<f32>],
    mut log: Option<&mut JsonLines>,
) -> Result<Stage1Outcome> {
    let mut tr = Stage1Trainer::new(Tokenizer::<f32>::new(config, seed)?)?;
    let every = tr.tok.config.log_every.max(1);
    let mut sampler = EpochSampler::new(images.len(), Rng::stream(seed, 11));
    let start = Instant::now();
    let mut utilization = None;
    while tr.step < tr.total_steps {
        let (idx, wrapped) = sampler.next(tr.tok.config.batch);
        if wrapped {
            utilization = tr.end_epoch().or(utilization);
        }
        let batch: Vec<Tensor<f32>> = idx.iter().map(|&i| images[i].clone()).collect();
        let r = tr.train_step(&batch)?;
        if let Some(log) = log.as_deref_mut() {
            if r.step % every == 0 || r.step + 1 == tr.total_steps || wrapped {
                log.write(&Stage1Log {
                    step: r.step,
                    vq: r.terms.vq,
                    codebook: r.codebook,
                    commitment: r.commitment,
                    l2: r.terms.l2,
                    perceptual: r.terms.perceptual,
                    gan: r.terms.gan,
                    crt: r.terms.crt,
                    total: r.total,
                    lambda_crt: r.weights.crt,
                    lambda_gan: r.weights.gan,
                    lr: r.lr,
                    critic: r.critic,
                    utilization: if wrapped { utilization } else { None },
                    epoch: sampler.epoch,
                    wall_time_s: start.elapsed().as_secs_f64(),
                })?;
            }
        }
    }
    if let Some(u) = tr.end_epoch() {
        if utilization.is_none() {
            utilization = Some(u);
        }
    }
    Ok(Stage1Outcome { steps: tr.step, wall_time_s: start.elapsed().as_secs_f64(), utilization, tok: tr.tok })
}

fn chunks(n: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(EVAL_BATCH).map(|a| (a, (a + EVAL_BATCH).min(n))).collect()
}

pub fn reconstruct(tok: &Tokenizer<f32>, images: &[Tensor<f32>], jobs: usize) -> Result<Vec<Tensor<f32>>> {
    let c = chunks(images.len());
    Ok(pool::try_map(jobs, c.len(), |i| tok.reconstruct(&images[c[i].0..c[i].1]))?.into_iter().flatten().collect())
}

pub fn tokenize(tok: &Tokenizer<f32>, images: &[Tensor<f32>], jobs: usize) -> Result<Vec<TokenGrid>> {
    let c = chunks(images.len());
    Ok(pool::try_map(jobs, c.len(), |i| tok.tokenize(&images[c[i].0..c[i].1]))?.into_iter().flatten().collect())
}

pub fn decode(tok: &Tokenizer<f32>, grids: &[TokenGrid], jobs: usize) -> Result<Vec<Tensor<f32>>> {
    let c = chunks(grids.len());
    Ok(pool::try_map(jobs, c.len(), |i| tok.decode_tokens(&grids[c[i].0..c[i].1]))?.into_iter().flatten().collect())
}

pub fn stats(images: &[Tensor<f32>], jobs: usize) -> Result<GaussianStats> {
    let ex = FeatureExtractor::default();
    let c = chunks(images.len());
    let feats: Vec<Vec<f64>> = pool::try_map(jobs, c.len(), |i| ex.features(&images[c[i].0..c[i].1]))?.into_iter().flatten().collect();
    Ok(GaussianStats::from_features(&feats)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizerEval {
    /// Mean squared error with pixels in `[0, 1]`.
    pub mse: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    /// Fréchet feature distance between reconstructions and originals.
    pub frechet: f64,
    pub entropy: EntropyReport,
}

pub fn eval_tokenizer(tok: &Tokenizer<f32>, images: &[Tensor<f32>], jobs: usize) -> Result<(TokenizerEval, Vec<TokenGrid>)> {
    let recon = reconstruct(tok, images, jobs)?;
    let n = images.len() as f64;
    let per: Vec<(f64, f64, f64)> = pool::try_map(jobs, images.len(), |i| -> Result<_> {
        let (a, b) = (recon[i].data(), images[i].data());
        Ok((metrics::mse(a, b) / 4.0, metrics::psnr(a, b, 2.0)?.db, metrics::ms_ssim(&recon[i], &images[i])?))
    })?;
    let grids = tokenize(tok, images, jobs)?;
    let flat: Vec<u32> = grids.iter().flat_map(|g| g.tokens.iter().copied()).collect();
    let entropy = entropy_report(&flat, tok.vocab(), tok.config.tokens_per_image())?;
    let frechet = frechet_distance(&stats(&recon, jobs)?, &stats(images, jobs)?)?;
    let eval = TokenizerEval {
        mse: per.iter().map(|p| p.0).sum::<f64>() / n,
        psnr: per.iter().map(|p| p.1).sum::<f64>() / n,
        ms_ssim: per.iter().map(|p| p.2).sum::<f64>() / n,
        frechet,
        entropy,
    };
    Ok((eval, grids))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage2Log {
    pub step: u64,
    pub cross_entropy: f64,
    pub z_term: f64,
    pub total: f64,
    pub lr: f64,
    pub dropped: usize,
    pub epoch: u64,
    pub wall_time_s: f64,
}

pub struct Stage2Outcome {
    pub gen: Generator<f32>,
    pub steps: u64,
    pub wall_time_s: f64,
    pub dropped: u64,
}

pub fn train_generator(
    config: GeneratorConfig,
    seed: u64,
    train: &TokenSet,
    mut log: Option<&mut JsonLines>,
    log_every: u64,
) -> Result<Stage2Outcome> {
    let batch = config.batch;
    let mut tr = Stage2Trainer::new(Generator::<f32>::new(config, seed)?, seed)?;
    let mut sampler = EpochSampler::new(train.len(), Rng::stream(seed, 12));
    let start = Instant::now();
    while tr.step < tr.total_steps {
        let (idx, _) = sampler.next(batch);
        let b = train.subset(&idx);
        let r = tr.train_step(&b.classes, &b.tokens)?;
        if let Some(log) = log.as_deref_mut() {
            if r.step % log_every.max(1) == 0 || r.step + 1 == tr.total_steps {
                log.write(&Stage2Log {
                    step: r.step,
                    cross_entropy: r.cross_entropy,
                    z_term: r.z_term,
                    total: r.total,
                    lr: r.lr,
                    dropped: r.dropped,
                    epoch: sampler.epoch,
                    wall_time_s: start.elapsed().as_secs_f64(),
                })?;
            }
        }
    }
    Ok(Stage2Outcome { steps: tr.step, wall_time_s: start.elapsed().as_secs_f64(), dropped: tr.dropped_total, gen: tr.generator })
}

/// Per-position report evaluated in parallel shards; the reduction order is
/// fixed, so the result does not depend on `jobs`.
pub fn per_position(gen: &Generator<f32>, eval: &TokenSet, shards: usize) -> Result<PerPositionReport> {
    Ok(generator::per_position_loss_with(gen, eval, shards, |_, c| generator::Cond::Class(c))?)
}

/// Class-balanced samples for each scale in `alphas`: `(α, images, labels)`.
pub fn sample_grid(
    gen: &Generator<f32>,
    tok: &Tokenizer<f32>,
    alphas: &[f64],
    per_class: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<(f64, Vec<Tensor<f32>>, Vec<usize>)>> {
    let classes = gen.config.classes;
    let by_class = pool::try_map(jobs, classes, |c| generator::generate(gen, tok, c, alphas, per_class, generator::class_seed(seed, c)))?;
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let mut imgs = Vec::new();
            let mut labels = Vec::new();
            for (c, per) in by_class.iter().enumerate() {
                imgs.extend(per[k].1.iter().cloned());
                labels.extend(std::iter::repeat(c).take(per[k].1.len()));
            }
            (a, imgs, labels)
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuidanceEval {
    pub alphas: Vec<f64>,
    /// Fréchet distance to the held-in split for each scale.
    pub held_in: Vec<f64>,
    pub alpha: f64,
    /// Fréchet distance to the validation split at the chosen scale.
    pub frechet: f64,
}

/// Picks the guidance scale against `held_in` and reports the distance to
/// `reference` at that scale, reusing the same samples.
pub fn guided_frechet(
    gen: &Generator<f32>,
    tok: &Tokenizer<f32>,
    alphas: &[f64],
    per_class: usize,
    seed: u64,
    held_in: &GaussianStats,
    reference: &GaussianStats,
    jobs: usize,
) -> Result<GuidanceEval> {
    let samples = sample_grid(gen, tok, alphas, per_class, seed, jobs)?;
    let sample_stats: Vec<GaussianStats> = samples.iter().map(|(_, imgs, _)| stats(imgs, jobs)).collect::<Result<_>>()?;
    let mut k = 0;
    let (alpha, scores) = cfg_selection(alphas, |_| {
        k += 1;
        frechet_distance(&sample_stats[k - 1], held_in)
    })?;
    let idx = alphas.iter().position(|&a| a == alpha).expect("chosen scale is in the grid");
    Ok(GuidanceEval { alphas: alphas.to_vec(), held_in: scores, alpha, frechet: frechet_distance(&sample_stats[idx], reference)? })
}
