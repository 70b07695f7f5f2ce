use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{perceptual_proxy, stack, wasserstein_losses, Tokenizer};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::metrics::FeatureExtractor;
use crate::optim::{AdamW, ScheduleSpec};
use crate::quantize::utilization;
use crate::tensor::{Real, Tensor};

pub const DIVERGENCE_LIMIT: f64 = 1e4;

/// Per-term values, or the effective weights applied to them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub vq: f64,
    pub gan: f64,
    pub perceptual: f64,
    pub l2: f64,
    pub crt: f64,
}

impl LossTerms {
    pub fn weighted_sum(&self, w: &LossTerms) -> f64 {
        self.vq * w.vq + self.gan * w.gan + self.perceptual * w.perceptual + self.l2 * w.l2 + self.crt * w.crt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1LossReport {
    pub step: u64,
    pub terms: LossTerms,
    pub weights: LossTerms,
    pub codebook: f64,
    pub commitment: f64,
    pub total: f64,
    pub lr: f64,
    /// Critic objective when the critic was updated this step.
    pub critic: Option<f64>,
    pub degenerate: usize,
    /// Codebook utilization over the epoch that ended with this step.
    pub epoch_utilization: Option<f64>,
}

/// One stage-1 training run: main optimizer over the auto-encoder, a
/// separate one for the regularizer and another for the critic.
#[derive(Debug, Clone)]
pub struct Stage1Trainer<T: Real> {
    pub tok: Tokenizer<T>,
    pub step: u64,
    pub total_steps: u64,
    main_opt: AdamW,
    crt_opt: AdamW,
    critic_opt: AdamW,
    lr: ScheduleSpec,
    crt_lr: ScheduleSpec,
    gan_weight: ScheduleSpec,
    crt_weight: ScheduleSpec,
    extractor: FeatureExtractor,
}

fn term<T: Real>(g: &Graph<T>, v: Option<Var>) -> f64 {
    v.map_or(0.0, |v| g.value(v).item().f64())
}

impl<T: Real> Stage1Trainer<T> {
    pub fn new(tok: Tokenizer<T>) -> Result<Self> {
        let c = &tok.config;
        let total = tok.effective_iterations()?.max(1);
        let crt_target = if c.crt.enabled { c.crt.lambda } else { 0.0 };
        let gan_target = if c.gan.enabled { c.loss.gan } else { 0.0 };
        let t = Stage1Trainer {
            main_opt: c.optim.adamw()?,
            crt_opt: c.crt.optim.adamw()?,
            critic_opt: c.optim.adamw()?,
            lr: c.optim.warmup_constant(total),
            crt_lr: c.crt.optim.warmup_constant(total),
            gan_weight: ScheduleSpec::cosine_ramp(gan_target, c.gan.start, c.gan.ramp, total.max(c.gan.start + c.gan.ramp)),
            crt_weight: ScheduleSpec::warmup_constant(0.0, crt_target, c.crt.ramp.min(total), total),
            extractor: FeatureExtractor::default(),
            total_steps: total,
            step: 0,
            tok,
        };
        for s in [&t.lr, &t.crt_lr, &t.gan_weight, &t.crt_weight] {
            s.validate()?;
        }
        Ok(t)
    }

    /// Effective loss weights at `step`.
    pub fn weights_at(&self, step: u64) -> LossTerms {
        let w = &self.tok.config.loss;
        LossTerms { vq: w.vq, gan: self.gan_weight.value(step), perceptual: w.perceptual, l2: w.l2, crt: self.crt_weight.value(step) }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr.value(step)
    }

    /// One optimization step on a batch of `[3, R, R]` images.
    pub fn train_step(&mut self, batch: &[Tensor<f32>]) -> Result<Stage1LossReport> {
        let step = self.step;
        let weights = self.weights_at(step);
        let lr = self.lr_at(step);
        let tok = &self.tok;
        let c = &tok.config;

        let xt = stack::<T>(batch)?;
        tok.check_images(xt.shape(), true)?;
        let b = batch.len();
        let mut g = Graph::new();
        let x = g.constant(xt);
        let fw = tok.forward(&mut g, x)?;

        let diff = g.sub(fw.recon, x)?;
        let diff = g.square(diff);
        let l2 = g.mean(diff);
        let perc = if weights.perceptual > 0.0 { Some(perceptual_proxy(&mut g, &self.extractor, fw.recon, x)?) } else { None };
        let gan = match &tok.critic {
            Some(critic) if weights.gan > 0.0 => {
                let cf = critic.forward(&mut g, &tok.critic_store, fw.recon)?;
                let m = g.mean(cf);
                Some(g.scale(m, -T::one()))
            }
            _ => None,
        };
        let crt = match &tok.crt {
            Some(reg) => {
                let n = fw.grid.0 * fw.grid.1;
                let lat = g.reshape(fw.crt_source(c.crt.latents), &[b, n, c.crt_width()])?;
                // Forward identity; the encoder receives λ·∇ while the
                // regularizer sees the unweighted loss.
                let lat = g.grad_scale(lat, T::c(weights.crt));
                Some(reg.loss(&mut g, &tok.crt_store, lat)?)
            }
            None => None,
        };

        let mut parts: Vec<Var> = Vec::new();
        if let (Some(cb), Some(cm)) = (fw.quant.codebook_loss, fw.quant.commitment_loss) {
            let vq = g.add(cb, cm)?;
            parts.push(g.scale(vq, T::c(weights.vq)));
        }
        parts.push(g.scale(l2, T::c(weights.l2)));
        if let Some(p) = perc {
            parts.push(g.scale(p, T::c(weights.perceptual)));
        }
        if let Some(v) = gan {
            parts.push(g.scale(v, T::c(weights.gan)));
        }
        if let Some(v) = crt {
            parts.push(v);
        }
        let mut objective = parts[0];
        for p in &parts[1..] {
            objective = g.add(objective, *p)?;
        }

        let codebook = term(&g, fw.quant.codebook_loss);
        let commitment = term(&g, fw.quant.commitment_loss);
        let terms = LossTerms {
            vq: codebook + commitment,
            gan: term(&g, gan),
            perceptual: term(&g, perc),
            l2: term(&g, Some(l2)),
            crt: term(&g, crt),
        };
        let mut report = Stage1LossReport {
            step,
            terms,
            weights,
            codebook,
            commitment,
            total: terms.weighted_sum(&weights),
            lr,
            critic: None,
            degenerate: fw.quant.degenerate,
            epoch_utilization: None,
        };
        let finite = [terms.vq, terms.gan, terms.perceptual, terms.l2, terms.crt].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite(format!("stage-1 loss at step {step}: {:?}", report)));
        }
        if report.total > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { step, loss: report.total });
        }

        let critic_due = tok.critic.is_some() && step >= c.gan.start;
        let mut grads = g.backward(objective)?;
        let tok = &mut self.tok;
        tok.store.zero_grad();
        tok.store.accumulate(&g, &mut grads);
        tok.crt_store.zero_grad();
        tok.crt_store.accumulate(&g, &mut grads);
        let indices = fw.quant.indices;
        let recon = g.value(fw.recon).clone();
        let x_val = g.value(x).clone();
        drop(g);
        self.main_opt.step(&mut tok.store, lr)?;
        if let Some(cb) = &tok.quantizer.codebook {
            cb.renormalize(&mut tok.store);
        }
        if tok.crt.is_some() {
            let crt_lr = self.crt_lr.value(step);
            self.crt_opt.step(&mut tok.crt_store, crt_lr)?;
        }
        if let Some(cb) = &mut tok.quantizer.codebook {
            cb.record(&indices);
        }

        if let (Some(critic), true) = (&tok.critic, critic_due) {
            let mut g = Graph::new();
            let real = g.constant(x_val);
            let fake = g.constant(recon);
            let cr = critic.forward(&mut g, &tok.critic_store, real)?;
            let cf = critic.forward(&mut g, &tok.critic_store, fake)?;
            let (disc, _) = wasserstein_losses(&mut g, cr, cf)?;
            report.critic = Some(g.value(disc).item().f64());
            let mut grads = g.backward(disc)?;
            tok.critic_store.zero_grad();
            tok.critic_store.accumulate(&g, &mut grads);
            self.critic_opt.step(&mut tok.critic_store, lr)?;
            let clip = T::c(tok.config.gan.clip);
            for p in tok.critic_store.iter_mut() {
                p.value.data_mut().iter_mut().for_each(|v| *v = v.max(-clip).min(clip));
            }
        }
        self.step += 1;
        Ok(report)
    }

    /// Utilization over the usage recorded since the last call, then resets
    /// the histogram.
    pub fn end_epoch(&mut self) -> Option<f64> {
        let cb = self.tok.quantizer.codebook.as_mut()?;
        let u = utilization(&cb.usage).ok();
        cb.reset_usage();
        u
    }
}
