//! Stage 2: a class-conditional causal transformer over token sequences,
//! its training step, classifier-free guided sampling and loss evaluation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{logsumexp, softmax_in_place, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{CausalTransformer, Linear, TransformerConfig};
use crate::optim::{AdamW, OptimConfig, ParamId, ParamStore, ScheduleSpec};
use crate::rng::{self, Rng};
use crate::tensor::{Real, Tensor};
use crate::tokenizer::{TokenGrid, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub layers: usize,
    pub heads: usize,
    /// Vocabulary size, at least the tokenizer's code count.
    pub vocab: usize,
    pub classes: usize,
    /// Image tokens per sequence.
    pub seq_len: usize,
    pub class_dropout: f64,
    /// Coefficient of the squared log-partition penalty; zero disables it.
    pub z_loss: f64,
    pub optim: OptimConfig,
    pub iterations: u64,
    pub batch: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            layers: 2,
            heads: 2,
            vocab: 256,
            classes: 8,
            seq_len: 16,
            class_dropout: 0.1,
            z_loss: 1e-4,
            optim: OptimConfig { lr: 3e-3, warmup_start: 3e-4, warmup_steps: 100, beta1: 0.9, beta2: 0.95, weight_decay: 0.1 },
            iterations: 2000,
            batch: 32,
        }
    }
}

impl GeneratorConfig {
    pub fn dim(&self) -> usize {
        64 * self.heads
    }

    pub fn transformer(&self) -> TransformerConfig {
        TransformerConfig::scaled(self.layers, self.heads, self.seq_len + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("generator: {m}")));
        if self.layers == 0 || self.heads == 0 {
            return bad("layers and heads must be positive");
        }
        if self.vocab == 0 || self.classes == 0 || self.seq_len == 0 || self.batch == 0 {
            return bad("vocab, classes, seq_len and batch must be positive");
        }
        if !(0.0..=1.0).contains(&self.class_dropout) {
            return bad("class_dropout must lie in [0, 1]");
        }
        if !(self.z_loss >= 0.0) {
            return bad("z_loss must be non-negative");
        }
        self.transformer().validate()
    }

    /// Tokens consumed per sequence: the class token plus the image tokens.
    pub fn tokens_per_sequence(&self) -> u64 {
        self.seq_len as u64 + 1
    }
}

/// Labelled token sequences of a fixed length, stored flat.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenSet {
    pub seq_len: usize,
    pub classes: Vec<usize>,
    pub tokens: Vec<u32>,
}

impl TokenSet {
    pub fn new(seq_len: usize, classes: Vec<usize>, tokens: Vec<u32>) -> Result<Self> {
        if seq_len == 0 || tokens.len() != classes.len() * seq_len {
            return Err(Error::invalid("token set", format!("{} tokens for {} sequences of {}", tokens.len(), classes.len(), seq_len)));
        }
        Ok(TokenSet { seq_len, classes, tokens })
    }

    pub fn from_grids(grids: &[TokenGrid], classes: &[usize]) -> Result<Self> {
        let n = grids.first().map_or(0, |g| g.tokens.len());
        if grids.len() != classes.len() || grids.iter().any(|g| g.tokens.len() != n) {
            return Err(Error::invalid("token set", "grids and labels disagree"));
        }
        TokenSet::new(n, classes.to_vec(), grids.iter().flat_map(|g| g.sequence().iter().copied()).collect())
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn sequence(&self, i: usize) -> &[u32] {
        &self.tokens[i * self.seq_len..(i + 1) * self.seq_len]
    }

    pub fn subset(&self, idx: &[usize]) -> TokenSet {
        TokenSet {
            seq_len: self.seq_len,
            classes: idx.iter().map(|&i| self.classes[i]).collect(),
            tokens: idx.iter().flat_map(|&i| self.sequence(i).iter().copied()).collect(),
        }
    }
}

/// Class token of one sequence: a learned class embedding or the dummy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cond {
    Class(usize),
    Dummy,
}

#[derive(Debug, Clone)]
pub struct Generator<T: Real> {
    pub config: GeneratorConfig,
    pub store: ParamStore<T>,
    tok_emb: ParamId,
    class_emb: ParamId,
    dummy: ParamId,
    body: CausalTransformer,
    head: Linear,
}

impl<T: Real> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::stream(seed, 0);
        let mut store = ParamStore::new();
        let d = config.dim();
        let tok_emb = store.add("gen.tok_emb", rng.normal_tensor(&[config.vocab, d], 0.02));
        let class_emb = store.add("gen.class_emb", rng.normal_tensor(&[config.classes, d], 0.02));
        let dummy = store.add("gen.dummy", rng.normal_tensor(&[1, d], 0.02));
        let body = CausalTransformer::new(&mut store, &mut rng, "gen", config.transformer())?;
        let head = Linear::new(&mut store, &mut rng, "gen.head", d, config.vocab, false, 0.02);
        Ok(Generator { config, store, tok_emb, class_emb, dummy, body, head })
    }

    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    /// Parameter ids of the class table and the dummy token.
    pub fn class_params(&self) -> (ParamId, ParamId) {
        (self.class_emb, self.dummy)
    }

    pub fn head_params(&self) -> ParamId {
        self.head.w
    }

    /// Logits `[b, p + 1, vocab]` for prefixes `[b, p]`: position `i` predicts
    /// image token `i` from the class token and tokens `0..i`.
    pub fn forward_logits(&self, g: &mut Graph<T>, conds: &[Cond], prefix: &[u32], p: usize) -> Result<Var> {
        let c = &self.config;
        let b = conds.len();
        if p > c.seq_len {
            return Err(Error::invalid("forward_logits", format!("prefix length {} exceeds {}", p, c.seq_len)));
        }
        if prefix.len() != b * p {
            return Err(Error::shape("forward_logits", &[prefix.len()], &[b, p]));
        }
        let mut ids = Vec::with_capacity(b);
        for cond in conds {
            ids.push(match *cond {
                Cond::Class(k) if k < c.classes => k,
                Cond::Class(k) => return Err(Error::invalid("forward_logits", format!("class {} >= {}", k, c.classes))),
                Cond::Dummy => c.classes,
            });
        }
        let classes = g.param(&self.store, self.class_emb);
        let dummy = g.param(&self.store, self.dummy);
        let table = g.concat(&[classes, dummy], 0)?;
        let first = g.embedding(table, &ids, &[b, 1])?;
        let x = if p == 0 {
            first
        } else {
            let toks: Vec<usize> = prefix.iter().map(|&t| t as usize).collect();
            let emb = g.param(&self.store, self.tok_emb);
            let rest = g.embedding(emb, &toks, &[b, p])?;
            g.concat(&[first, rest], 1)?
        };
        let h = self.body.forward(g, &self.store, x)?;
        self.head.forward(g, &self.store, h)
    }

    /// Next-token logits `[b, vocab]` given full prefixes, without a graph
    /// the caller needs to keep.
    pub fn next_logits(&self, conds: &[Cond], prefix: &[u32], p: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let logits = self.forward_logits(&mut g, conds, prefix, p)?;
        let k = self.config.vocab;
        let data = g.data(logits);
        let mut out = Vec::with_capacity(conds.len() * k);
        for i in 0..conds.len() {
            let row = &data[(i * (p + 1) + p) * k..(i * (p + 1) + p + 1) * k];
            out.extend(row.iter().map(|v| v.f64()));
        }
        Ok(out)
    }

    /// Per-sequence, per-position cross-entropy (nats) `[b, seq_len]`.
    pub fn token_losses(&self, conds: &[Cond], tokens: &[u32]) -> Result<Vec<f64>> {
        let n = self.config.seq_len;
        let b = conds.len();
        if tokens.len() != b * n {
            return Err(Error::shape("token_losses", &[tokens.len()], &[b, n]));
        }
        let prefix: Vec<u32> = tokens.chunks(n).flat_map(|s| s[..n - 1].iter().copied()).collect();
        let mut g = Graph::new();
        let logits = self.forward_logits(&mut g, conds, &prefix, n - 1)?;
        let k = self.config.vocab;
        let data = g.data(logits);
        let mut out = Vec::with_capacity(b * n);
        for (row, &t) in data.chunks(k).zip(tokens) {
            let row: Vec<f64> = row.iter().map(|v| v.f64()).collect();
            out.push(logsumexp(&row) - row[t as usize]);
        }
        Ok(out)
    }
}

/// `ℓ_u + (ℓ_c − ℓ_u)·α`, evaluated as `α·ℓ_c + (1 − α)·ℓ_u` so that
/// `α = 1` and `α = 0` return the operands exactly.
pub fn cfg_logits(uncond: &[f64], cond: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if uncond.len() != cond.len() {
        return Err(Error::shape("cfg_logits", &[uncond.len()], &[cond.len()]));
    }
    Ok(uncond.iter().zip(cond).map(|(u, c)| alpha * c + (1.0 - alpha) * u).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage2LossReport {
    pub step: u64,
    pub cross_entropy: f64,
    /// Unweighted mean squared log-partition.
    pub z_term: f64,
    pub total: f64,
    pub lr: f64,
    /// Sequences whose class token was replaced by the dummy this step.
    pub dropped: usize,
}

#[derive(Debug, Clone)]
pub struct Stage2Trainer<T: Real> {
    pub generator: Generator<T>,
    pub step: u64,
    pub total_steps: u64,
    /// Dummy substitutions since construction.
    pub dropped_total: u64,
    opt: AdamW,
    lr: ScheduleSpec,
    rng: Rng,
}

impl<T: Real> Stage2Trainer<T> {
    pub fn new(generator: Generator<T>, seed: u64) -> Result<Self> {
        let c = &generator.config;
        let total = c.iterations.max(1);
        let lr = c.optim.warmup_cosine(total);
        lr.validate()?;
        Ok(Stage2Trainer { opt: c.optim.adamw()?, lr, rng: Rng::stream(seed, 1), total_steps: total, step: 0, dropped_total: 0, generator })
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr.value(step)
    }

    /// One optimizer step on `classes.len()` sequences of `seq_len` tokens.
    pub fn train_step(&mut self, classes: &[usize], tokens: &[u32]) -> Result<Stage2LossReport> {
        let gen = &self.generator;
        let c = &gen.config;
        let (b, n) = (classes.len(), c.seq_len);
        if b == 0 || tokens.len() != b * n {
            return Err(Error::shape("stage-2 batch", &[tokens.len()], &[b, n]));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= c.vocab) {
            return Err(Error::invalid("stage-2 batch", format!("token {} >= vocab {}", bad, c.vocab)));
        }
        let step = self.step;
        let lr = self.lr_at(step);
        let mut dropped = 0;
        let conds: Vec<Cond> = classes
            .iter()
            .map(|&k| {
                if c.class_dropout > 0.0 && self.rng.bernoulli(c.class_dropout) {
                    dropped += 1;
                    Cond::Dummy
                } else {
                    Cond::Class(k)
                }
            })
            .collect();
        let prefix: Vec<u32> = tokens.chunks(n).flat_map(|s| s[..n - 1].iter().copied()).collect();
        let targets: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();

        let mut g = Graph::new();
        let logits = gen.forward_logits(&mut g, &conds, &prefix, n - 1)?;
        let ce = g.cross_entropy(logits, &targets)?;
        let (objective, z_term) = if c.z_loss > 0.0 {
            let lse = g.logsumexp(logits);
            let sq = g.square(lse);
            let z = g.mean(sq);
            let zw = g.scale(z, T::c(c.z_loss));
            (g.add(ce, zw)?, g.value(z).item().f64())
        } else {
            (ce, 0.0)
        };
        let cross_entropy = g.value(ce).item().f64();
        let report = Stage2LossReport { step, cross_entropy, z_term, total: cross_entropy + c.z_loss * z_term, lr, dropped };
        if !report.total.is_finite() {
            return Err(Error::NonFinite(format!("stage-2 loss at step {step}: {:?}", report)));
        }
        let mut grads = g.backward(objective)?;
        let gen = &mut self.generator;
        gen.store.zero_grad();
        gen.store.accumulate(&g, &mut grads);
        drop(g);
        self.opt.step(&mut gen.store, lr)?;
        self.dropped_total += dropped as u64;
        self.step += 1;
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub class: usize,
    pub alpha: f64,
    pub count: usize,
    pub seed: u64,
}

/// Samples token sequences with classifier-free guidance. Sample `i` draws
/// from its own stream `(seed, i)`, so results do not depend on batching.
pub fn sample_tokens<T: Real>(gen: &Generator<T>, cfg: &SampleConfig) -> Result<Vec<Vec<u32>>> {
    let c = &gen.config;
    if cfg.class >= c.classes {
        return Err(Error::invalid("sample", format!("class {} >= {}", cfg.class, c.classes)));
    }
    if !(cfg.alpha >= 0.0) {
        return Err(Error::invalid("sample", format!("cfg scale {} must be non-negative", cfg.alpha)));
    }
    let (s, n, k) = (cfg.count, c.seq_len, c.vocab);
    let mut rngs: Vec<Rng> = (0..s as u64).map(|i| Rng::stream(cfg.seed, i)).collect();
    let mut conds = vec![Cond::Class(cfg.class); s];
    conds.extend(core::iter::repeat(Cond::Dummy).take(s));
    let mut seqs: Vec<Vec<u32>> = vec![Vec::with_capacity(n); s];
    for p in 0..n {
        let prefix: Vec<u32> = seqs.iter().chain(seqs.iter()).flat_map(|q| q.iter().copied()).collect();
        let logits = gen.next_logits(&conds, &prefix, p)?;
        for (i, seq) in seqs.iter_mut().enumerate() {
            let lc = &logits[i * k..(i + 1) * k];
            let lu = &logits[(s + i) * k..(s + i + 1) * k];
            let mut probs = cfg_logits(lu, lc, cfg.alpha)?;
            softmax_in_place(&mut probs);
            seq.push(rngs[i].categorical(&probs) as u32);
        }
    }
    Ok(seqs)
}

/// Samples for every scale of `alphas` with identical streams, then decodes
/// them with the tokenizer. Returns `(α, images)` pairs in grid order.
pub fn generate<T: Real, U: Real>(
    gen: &Generator<T>,
    tok: &Tokenizer<U>,
    class: usize,
    alphas: &[f64],
    count: usize,
    seed: u64,
) -> Result<Vec<(f64, Vec<Tensor<f32>>)>> {
    if gen.config.seq_len != tok.config.tokens_per_image() || gen.config.vocab < tok.config.quantizer.vocab() {
        return Err(Error::invalid("generate", "generator and tokenizer disagree on sequence length or vocabulary"));
    }
    let side = tok.config.grid();
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let seqs = sample_tokens(gen, &SampleConfig { class, alpha, count, seed })?;
        if let Some(bad) = seqs.iter().flatten().find(|&&t| t as usize >= tok.config.quantizer.vocab()) {
            return Err(Error::invalid("generate", format!("sampled token {} outside the codebook", bad)));
        }
        let grids: Vec<TokenGrid> = seqs.into_iter().map(|s| TokenGrid::from_sequence(s, side, side)).collect::<Result<_>>()?;
        out.push((alpha, tok.decode_tokens(&grids)?));
    }
    Ok(out)
}

/// Seed of the sample stream for class `class` in a multi-class draw.
pub fn class_seed(seed: u64, class: usize) -> u64 {
    rng::derive(seed, class as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPositionReport {
    pub per_position: Vec<f64>,
    pub samples: usize,
    /// Variance of the loss across samples at each position.
    pub variance: Vec<f64>,
    /// Mean loss of each evaluation shard.
    pub shard_losses: Vec<f64>,
    /// Variance of the shard means.
    pub shard_variance: f64,
}

impl PerPositionReport {
    pub fn mean(&self) -> f64 {
        self.per_position.iter().sum::<f64>() / self.per_position.len() as f64
    }
}

pub const EVAL_CHUNK: usize = 64;

/// Per-position cross-entropy over a frozen evaluation set. `conds` maps a
/// sequence's label to its class token.
pub fn per_position_loss_with<T: Real>(
    gen: &Generator<T>,
    eval: &TokenSet,
    shards: usize,
    cond: impl Fn(usize, usize) -> Cond,
) -> Result<PerPositionReport> {
    if eval.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let n = gen.config.seq_len;
    if eval.seq_len != n {
        return Err(Error::shape("per_position_loss", &[eval.seq_len], &[n]));
    }
    let m = eval.len();
    let mut losses = Vec::with_capacity(m * n);
    for start in (0..m).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(m);
        let conds: Vec<Cond> = (start..end).map(|i| cond(i, eval.classes[i])).collect();
        losses.extend(gen.token_losses(&conds, &eval.tokens[start * n..end * n])?);
    }
    let mut per_position = vec![0.0; n];
    for seq in losses.chunks(n) {
        for (acc, l) in per_position.iter_mut().zip(seq) {
            *acc += l;
        }
    }
    per_position.iter_mut().for_each(|v| *v /= m as f64);
    let mut variance = vec![0.0; n];
    for seq in losses.chunks(n) {
        for ((acc, l), mu) in variance.iter_mut().zip(seq).zip(&per_position) {
            *acc += (l - mu) * (l - mu);
        }
    }
    variance.iter_mut().for_each(|v| *v /= m as f64);
    let shards = shards.clamp(1, m);
    let shard_losses: Vec<f64> = (0..shards)
        .map(|s| {
            let (a, b) = (s * m / shards, (s + 1) * m / shards);
            losses[a * n..b * n].iter().sum::<f64>() / ((b - a) * n) as f64
        })
        .collect();
    let mu = shard_losses.iter().sum::<f64>() / shards as f64;
    let shard_variance = shard_losses.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / shards as f64;
    Ok(PerPositionReport { per_position, samples: m, variance, shard_losses, shard_variance })
}

pub fn per_position_loss<T: Real>(gen: &Generator<T>, eval: &TokenSet) -> Result<PerPositionReport> {
    per_position_loss_with(gen, eval, 4, |_, c| Cond::Class(c))
}

/// Mean cross-entropy (nats/token) over all positions and sequences.
pub fn validation_loss<T: Real>(gen: &Generator<T>, eval: &TokenSet) -> Result<f64> {
    Ok(per_position_loss(gen, eval)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dropout: f64) -> GeneratorConfig {
        GeneratorConfig {
            layers: 1,
            heads: 1,
            vocab: 10,
            classes: 3,
            seq_len: 5,
            class_dropout: dropout,
            iterations: 20,
            batch: 4,
            ..Default::default()
        }
    }

    fn zero_head(gen: &mut Generator<f64>) {
        let id = gen.head_params();
        gen.store.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    #[test]
    fn empty_prefix_gives_one_position() {
        let gen = Generator::<f64>::new(tiny(0.1), 1).unwrap();
        let mut g = Graph::new();
        let l = gen.forward_logits(&mut g, &[Cond::Class(0), Cond::Dummy], &[], 0).unwrap();
        assert_eq!(g.shape(l), &[2, 1, 10]);
        assert!(gen.forward_logits(&mut g, &[Cond::Class(0)], &[0; 6], 6).is_err());
        assert!(gen.forward_logits(&mut g, &[Cond::Class(3)], &[], 0).is_err());
    }

    #[test]
    fn later_tokens_leave_earlier_logits_unchanged() {
        let gen = Generator::<f64>::new(tiny(0.1), 2).unwrap();
        let a = [1, 2, 3, 4, 5];
        let mut b = a;
        b[3] = 9;
        let logits = |t: &[u32]| {
            let mut g = Graph::new();
            let l = gen.forward_logits(&mut g, &[Cond::Class(1)], t, 5).unwrap();
            g.data(l).to_vec()
        };
        let (la, lb) = (logits(&a), logits(&b));
        // Position i sees tokens < i, so positions 0..=3 are untouched.
        assert_eq!(la[..40], lb[..40]);
        assert_ne!(la[40..], lb[40..]);
    }

    #[test]
    fn dummy_with_copied_class_row_matches_class() {
        let mut gen = Generator::<f64>::new(tiny(0.1), 3).unwrap();
        let (table, dummy) = gen.class_params();
        let row = gen.store.get(table).value.data()[2 * 64..3 * 64].to_vec();
        gen.store.get_mut(dummy).value.data_mut().copy_from_slice(&row);
        let t = [4, 0, 7, 1, 1];
        let a = gen.token_losses(&[Cond::Class(2)], &t).unwrap();
        let b = gen.token_losses(&[Cond::Dummy], &t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_model_costs_ln_k() {
        let mut gen = Generator::<f64>::new(tiny(0.1), 4).unwrap();
        zero_head(&mut gen);
        let eval = TokenSet::new(5, vec![0, 1, 2], (0..15).map(|i| i % 10).collect()).unwrap();
        let r = per_position_loss(&gen, &eval).unwrap();
        let ln10 = 10f64.ln();
        assert_eq!(r.per_position.len(), 5);
        assert!(r.per_position.iter().all(|v| (v - ln10).abs() < 1e-12));
        assert!((validation_loss(&gen, &eval).unwrap() - ln10).abs() < 1e-12);
        let mut tr = Stage2Trainer::new(gen, 0).unwrap();
        let rep = tr.train_step(&[0, 1], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]).unwrap();
        assert!((rep.cross_entropy - ln10).abs() < 1e-12);
        assert!((rep.z_term - ln10 * ln10).abs() < 1e-9);
    }

    #[test]
    fn zero_dropout_never_uses_dummy() {
        let gen = Generator::<f32>::new(tiny(0.0), 5).unwrap();
        let mut tr = Stage2Trainer::new(gen, 0).unwrap();
        for _ in 0..10 {
            tr.train_step(&[0, 1, 2, 0], &[1; 20]).unwrap();
        }
        assert_eq!(tr.dropped_total, 0);
        let gen = Generator::<f32>::new(tiny(1.0), 5).unwrap();
        let mut tr = Stage2Trainer::new(gen, 0).unwrap();
        assert_eq!(tr.train_step(&[0, 1, 2, 0], &[1; 20]).unwrap().dropped, 4);
    }

    #[test]
    fn cfg_identities_are_exact() {
        let u = [0.3, -1.7, 2.9];
        let c = [1.1, 0.2, -0.4];
        assert_eq!(cfg_logits(&u, &c, 1.0).unwrap(), c);
        assert_eq!(cfg_logits(&u, &c, 0.0).unwrap(), u);
        assert_eq!(cfg_logits(&[0.0], &[2.0], 1.5).unwrap(), [3.0]);
        assert!(cfg_logits(&u, &c[..2], 1.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let gen = Generator::<f64>::new(tiny(0.1), 6).unwrap();
        let cfg = SampleConfig { class: 1, alpha: 1.75, count: 3, seed: 11 };
        let a = sample_tokens(&gen, &cfg).unwrap();
        let b = sample_tokens(&gen, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.len() == 5 && s.iter().all(|&t| t < 10)));
        // Each sample owns its stream, so a smaller draw is a prefix.
        let one = sample_tokens(&gen, &SampleConfig { count: 1, ..cfg }).unwrap();
        assert_eq!(one[0], a[0]);
    }

    #[test]
    fn training_reduces_loss_on_a_fixed_pattern() {
        let mut cfg = tiny(0.0);
        cfg.iterations = 60;
        cfg.optim.warmup_steps = 5;
        let gen = Generator::<f32>::new(cfg, 7).unwrap();
        let mut tr = Stage2Trainer::new(gen, 0).unwrap();
        let classes = [0, 1, 2, 0];
        let toks: Vec<u32> = classes.iter().flat_map(|&c| (0..5).map(move |i| ((c * 3 + i) % 10) as u32)).collect();
        let first = tr.train_step(&classes, &toks).unwrap().cross_entropy;
        let mut last = first;
        for _ in 1..60 {
            last = tr.train_step(&classes, &toks).unwrap().cross_entropy;
        }
        assert!(last < 0.3 * first, "{first} -> {last}");
    }

    #[test]
    fn empty_eval_set_is_an_error() {
        let gen = Generator::<f64>::new(tiny(0.1), 8).unwrap();
        let eval = TokenSet::new(5, vec![], vec![]).unwrap();
        assert_eq!(per_position_loss(&gen, &eval).unwrap_err(), Error::Empty("evaluation set"));
    }
}
