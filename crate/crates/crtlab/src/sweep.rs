//! Endpoint sweeps.
//!
//! A plan is a config document whose plain keys set the base experiment and
//! whose `axis.<key> = [..]` lines declare sweep axes; `plan.name` and
//! `plan.stages` control the run. Every cell of the axis cross product
//! trains to its endpoint and appends one record. Tokenizers are shared
//! between cells through a cache keyed by their own config, and completed
//! cells are skipped by config hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crtlab_core::config::ExperimentConfig;
use crtlab_core::generator::TokenSet;
use crtlab_core::metrics::GaussianStats;
use crtlab_core::quantize::QuantMode;
use crtlab_core::rng;
use crtlab_core::scaling::{expand_grid, flops_estimate, tokens_processed, Axis, MetricScores, RunRecord, RunStatus};
use crtlab_core::tokenizer::Tokenizer;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{self, Corpus};
use crate::drivers::{self, TokenizerEval};
use crate::error::{Error, Result};
use crate::logs::JsonLines;
use crate::records::RecordStore;
use crate::tokens::TokenDump;
use crate::{checkpoint, fsx, kv, pool};

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub name: String,
    /// Stages to run: 1 records tokenizers, 2 records generators.
    pub stages: Vec<u8>,
    pub base: Value,
    pub axes: Vec<Axis>,
}

fn axis_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl Plan {
    pub fn parse(text: &str, overrides: &[(String, Value)]) -> Result<Self> {
        let mut plan =
            Plan { name: "sweep".into(), stages: vec![1, 2], base: serde_json::to_value(ExperimentConfig::default())?, axes: Vec::new() };
        let pairs = kv::parse(text)?;
        for (k, v) in pairs.iter().chain(overrides) {
            if let Some(key) = k.strip_prefix("axis.") {
                let Value::Array(vals) = v else {
                    return Err(Error::Config(format!("axis `{key}` must be a list")));
                };
                let mut probe = plan.base.clone();
                for x in vals {
                    kv::set(&mut probe, key, x.clone())?;
                }
                plan.axes.retain(|a| a.key != key);
                plan.axes.push(Axis { key: key.to_string(), values: vals.iter().map(axis_value).collect() });
            } else if k == "plan.name" {
                plan.name = axis_value(v);
            } else if k == "plan.stages" {
                plan.stages = serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("plan.stages: {e}")))?;
                if plan.stages.is_empty() || plan.stages.iter().any(|s| !matches!(s, 1 | 2)) {
                    return Err(Error::Config("plan.stages must be a non-empty subset of [1, 2]".into()));
                }
            } else if k.starts_with("plan.") {
                return Err(Error::Config(format!("unknown key `{k}`")));
            } else {
                kv::set(&mut plan.base, k, v.clone())?;
            }
        }
        serde_json::from_value::<ExperimentConfig>(plan.base.clone()).map_err(|e| Error::Config(e.to_string()))?;
        Ok(plan)
    }

    /// The plan as a document, with the base fully resolved.
    pub fn render(&self) -> Result<String> {
        let mut s = kv::to_string(&self.base)?;
        s.push_str(&format!("plan.name = {}\n", self.name));
        s.push_str(&format!("plan.stages = {}\n", serde_json::to_string(&self.stages)?));
        for a in &self.axes {
            let vals: Vec<Value> = a.values.iter().map(|v| kv::parse_value(v)).collect();
            s.push_str(&format!("axis.{} = {}\n", a.key, Value::Array(vals)));
        }
        Ok(s)
    }

    pub fn cells(&self) -> Result<Vec<Cell>> {
        expand_grid(&self.axes)
            .into_iter()
            .map(|axes| {
                let mut v = self.base.clone();
                for (k, val) in &axes {
                    kv::set(&mut v, k, kv::parse_value(val))?;
                }
                let config =
                    serde_json::from_value::<ExperimentConfig>(v).map_err(|e| Error::Config(e.to_string())).map(ExperimentConfig::aligned);
                Ok(Cell { axes: axes.into_iter().collect(), config })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub axes: BTreeMap<String, String>,
    /// Resolution errors are kept so the cell can be recorded as failed.
    pub config: Result<ExperimentConfig, Error>,
}

impl Clone for Error {
    fn clone(&self) -> Self {
        match self {
            Error::Config(s) => Error::Config(s.clone()),
            Error::Core(e) => Error::Core(e.clone()),
            other => Error::Config(other.to_string()),
        }
    }
}

pub fn hash_json(v: &impl Serialize) -> Result<String> {
    let canonical = serde_json::to_vec(&serde_json::to_value(v)?)?;
    Ok(fsx::sha256_hex(&canonical)[..16].to_string())
}

pub fn config_hash(c: &ExperimentConfig) -> Result<String> {
    hash_json(c)
}

pub fn tokenizer_seed(c: &ExperimentConfig) -> u64 {
    rng::derive(c.seed, 1)
}

pub fn generator_seed(c: &ExperimentConfig) -> u64 {
    rng::derive(c.seed, 2)
}

pub fn sample_seed(c: &ExperimentConfig) -> u64 {
    rng::derive(c.seed, 3)
}

pub fn tokenizer_hash(c: &ExperimentConfig) -> Result<String> {
    hash_json(&(&c.corpus, &c.tokenizer, c.seed))
}

pub fn corpus_hash(c: &ExperimentConfig) -> Result<String> {
    hash_json(&c.corpus)
}

/// Short human-readable tokenizer series label.
pub fn tokenizer_label(c: &ExperimentConfig) -> String {
    let t = &c.tokenizer;
    let q = match t.quantizer.mode {
        QuantMode::Vq => format!("vq{}", t.quantizer.vocab()),
        QuantMode::Fsq => format!("fsq{}", t.quantizer.vocab()),
    };
    let r = if t.crt.enabled { format!("crt{}x{}", t.crt.layers, t.crt.lambda) } else { "base".to_string() };
    format!("{q}-r{}-{r}", t.side)
}

pub fn model_label(c: &ExperimentConfig) -> String {
    format!("L{}H{}", c.generator.layers, c.generator.heads)
}

/// On-disk layout below a sweep's output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn records(&self) -> PathBuf {
        self.root.join("records.jsonl")
    }
    pub fn corpus(&self, hash: &str) -> PathBuf {
        self.root.join("corpora").join(hash)
    }
    pub fn tokenizer(&self, hash: &str) -> PathBuf {
        self.root.join("tokenizers").join(hash)
    }
    pub fn run(&self, hash: &str) -> PathBuf {
        self.root.join("runs").join(hash)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizerSummary {
    pub label: String,
    pub seed: u64,
    pub steps: u64,
    pub params: u64,
    pub wall_time_s: f64,
    pub train_utilization: Option<f64>,
    pub eval: TokenizerEval,
}

/// A trained tokenizer with its frozen token sets.
pub struct TrainedTokenizer {
    pub tok: Tokenizer<f32>,
    pub summary: TokenizerSummary,
    pub train: TokenSet,
    pub val: TokenSet,
}

pub const SUMMARY: &str = "summary.json";

/// Reads a tokenizer directory written by [`train_tokenizer_in`].
pub fn load_tokenizer_dir(dir: &Path) -> Result<TrainedTokenizer> {
    let summary_path = dir.join(SUMMARY);
    let summary: TokenizerSummary = serde_json::from_slice(&std::fs::read(&summary_path).map_err(Error::io(&summary_path))?)?;
    let tok = checkpoint::load_tokenizer::<f32>(&dir.join("tokenizer.ckpt"))?;
    let set = |name: &str| -> Result<TokenSet> {
        let p = dir.join(name);
        Ok(TokenSet::from_grids(&TokenDump::read(&p)?.grids(), &crate::tokens::read_labels(&p)?)?)
    };
    Ok(TrainedTokenizer { tok, summary, train: set("train.tok")?, val: set("val.tok")? })
}

/// Trains, evaluates and freezes the tokenizer of `c` into `dir`. The
/// summary is written last and marks the directory complete.
pub fn train_tokenizer_in(dir: &Path, c: &ExperimentConfig, data: &Corpus, jobs: usize) -> Result<TrainedTokenizer> {
    use crtlab_core::synth::Split;
    fsx::create_dir(dir)?;
    fsx::write_atomic(&dir.join("tokenizer.cfg"), kv::to_string(&c.tokenizer)?.as_bytes())?;
    let mut log = JsonLines::create(&dir.join("train.jsonl"))?;
    let seed = tokenizer_seed(c);
    let out = drivers::train_tokenizer(c.tokenizer.clone(), seed, &data.train, Some(&mut log))?;
    checkpoint::save_tokenizer(&dir.join("tokenizer.ckpt"), &out.tok, seed, out.steps)?;
    let (eval, val_grids) = drivers::eval_tokenizer(&out.tok, &data.val, jobs)?;
    let train_grids = drivers::tokenize(&out.tok, &data.train, jobs)?;
    let k = out.tok.vocab();
    for (name, grids, split) in [("train.tok", &train_grids, Split::Train), ("val.tok", &val_grids, Split::Val)] {
        TokenDump::from_grids(k, grids)?.write(&dir.join(name))?;
        crate::tokens::write_labels(&dir.join(name), data.labels(split))?;
    }
    let summary = TokenizerSummary {
        label: tokenizer_label(c),
        seed,
        steps: out.steps,
        params: out.tok.store.numel() as u64,
        wall_time_s: out.wall_time_s,
        train_utilization: out.utilization,
        eval,
    };
    fsx::write_atomic(&dir.join(SUMMARY), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let train = TokenSet::from_grids(&train_grids, data.labels(Split::Train))?;
    let val = TokenSet::from_grids(&val_grids, data.labels(Split::Val))?;
    Ok(TrainedTokenizer { tok: out.tok, summary, train, val })
}

/// Trains the cell's tokenizer unless its cache directory is complete.
/// Returns the tokenizer and whether it was trained now.
pub fn ensure_tokenizer(layout: &Layout, c: &ExperimentConfig, data: &Corpus, jobs: usize) -> Result<(TrainedTokenizer, bool)> {
    let dir = layout.tokenizer(&tokenizer_hash(c)?);
    if dir.join(SUMMARY).exists() {
        return Ok((load_tokenizer_dir(&dir)?, false));
    }
    Ok((train_tokenizer_in(&dir, c, data, jobs)?, true))
}

fn failed(run_id: String, stage: u8, c: Option<&ExperimentConfig>, axes: &BTreeMap<String, String>, reason: String) -> RunRecord {
    RunRecord {
        run_id,
        stage,
        model: c.map(model_label).unwrap_or_default(),
        tokenizer: c.map(tokenizer_label).unwrap_or_default(),
        iterations: 0,
        params: 0,
        tokens: 0,
        flops: 0,
        val_loss: None,
        metrics: MetricScores::default(),
        config_hash: c.and_then(|c| config_hash(c).ok()).unwrap_or_default(),
        seed: c.map_or(0, |c| c.seed),
        wall_time_s: 0.0,
        status: RunStatus::Failed { reason },
        axes: axes.clone(),
    }
}

pub fn stage1_record(c: &ExperimentConfig, t: &TrainedTokenizer, axes: &BTreeMap<String, String>) -> Result<RunRecord> {
    let s = &t.summary;
    let tokens = s.steps * c.tokenizer.batch as u64 * c.tokenizer.tokens_per_image() as u64;
    Ok(RunRecord {
        run_id: format!("s1-{}", tokenizer_hash(c)?),
        stage: 1,
        model: "tokenizer".into(),
        tokenizer: s.label.clone(),
        iterations: s.steps,
        params: s.params,
        tokens,
        flops: flops_estimate(s.params, tokens)?,
        val_loss: None,
        metrics: MetricScores { frechet: Some(s.eval.frechet), psnr: Some(s.eval.psnr), ms_ssim: Some(s.eval.ms_ssim) },
        config_hash: hash_json(&(&c.corpus, &c.tokenizer, c.seed))?,
        seed: c.seed,
        wall_time_s: s.wall_time_s,
        status: RunStatus::Completed,
        axes: axes
            .iter()
            .filter(|(k, _)| !k.starts_with("generator.") && !k.starts_with("eval."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    })
}

/// Everything a stage-2 cell needs that is shared across cells.
pub struct SharedEval {
    pub val: GaussianStats,
    pub held_in: GaussianStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage2Summary {
    pub val_loss: f64,
    pub per_position: crtlab_core::generator::PerPositionReport,
    pub guidance: Option<drivers::GuidanceEval>,
    pub dropped: u64,
}

/// Trains and evaluates the generator of `c` into `dir`. Guidance is
/// evaluated only when `shared` is given and samples are requested.
pub fn run_stage2_in(
    dir: &Path,
    c: &ExperimentConfig,
    t: &TrainedTokenizer,
    shared: Option<&SharedEval>,
    axes: &BTreeMap<String, String>,
) -> Result<RunRecord> {
    let hash = config_hash(c)?;
    fsx::create_dir(dir)?;
    fsx::write_atomic(&dir.join("config.cfg"), kv::to_string(c)?.as_bytes())?;
    let mut log = JsonLines::create(&dir.join("train.jsonl"))?;
    let start = Instant::now();
    let seed = generator_seed(c);
    let out = drivers::train_generator(c.generator.clone(), seed, &t.train, Some(&mut log), c.tokenizer.log_every)?;
    checkpoint::save_generator(&dir.join("generator.ckpt"), &out.gen, seed, out.steps)?;
    let per_position = drivers::per_position(&out.gen, &t.val, c.eval.shards)?;
    let val_loss = per_position.mean();
    let guidance = match shared {
        Some(sh) if c.eval.samples_per_class > 0 && !c.eval.cfg_scales.is_empty() => Some(drivers::guided_frechet(
            &out.gen,
            &t.tok,
            &c.eval.cfg_scales,
            c.eval.samples_per_class,
            sample_seed(c),
            &sh.held_in,
            &sh.val,
            1,
        )?),
        _ => None,
    };
    let frechet = guidance.as_ref().map(|g| g.frechet);
    let summary = Stage2Summary { val_loss, per_position, guidance, dropped: out.dropped };
    fsx::write_atomic(&dir.join(SUMMARY), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let params = out.gen.param_count() as u64;
    let tokens = tokens_processed(out.steps, c.generator.batch as u64, c.generator.seq_len as u64);
    Ok(RunRecord {
        run_id: format!("s2-{hash}"),
        stage: 2,
        model: model_label(c),
        tokenizer: tokenizer_label(c),
        iterations: out.steps,
        params,
        tokens,
        flops: flops_estimate(params, tokens)?,
        val_loss: Some(val_loss),
        metrics: MetricScores { frechet, psnr: None, ms_ssim: None },
        config_hash: hash,
        seed: c.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        status: RunStatus::Completed,
        axes: axes.clone(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: usize,
    pub tokenizers_trained: usize,
    pub runs_trained: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Appends records to a store in slot order, whatever order they finish in.
struct OrderedSink<'a> {
    store: &'a RecordStore,
    state: std::sync::Mutex<(usize, Vec<Option<Option<RunRecord>>>)>,
}

impl<'a> OrderedSink<'a> {
    fn new(store: &'a RecordStore, slots: usize) -> Self {
        OrderedSink { store, state: std::sync::Mutex::new((0, vec![None; slots])) }
    }

    /// Fills slot `i` (`None` for nothing to append) and flushes the ready prefix.
    fn put(&self, i: usize, record: Option<RunRecord>) -> Result<()> {
        let mut guard = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let (next, slots) = &mut *guard;
        slots[i] = Some(record);
        while *next < slots.len() {
            let Some(r) = slots[*next].take() else { break };
            *next += 1;
            if let Some(r) = r {
                self.store.append(&r)?;
            }
        }
        Ok(())
    }
}

fn completed_ids(store: &RecordStore) -> Result<std::collections::BTreeSet<String>> {
    Ok(store.latest()?.into_iter().filter(RunRecord::completed).map(|r| r.run_id).collect())
}

/// Runs every cell of `plan` under `root`, appending to `root/records.jsonl`.
pub fn run(plan: &Plan, root: &Path, jobs: usize) -> Result<SweepSummary> {
    let layout = Layout { root: root.to_path_buf() };
    fsx::create_dir(root)?;
    fsx::write_atomic(&root.join(format!("plan-{}.cfg", plan.name)), plan.render()?.as_bytes())?;
    let store = RecordStore::new(layout.records());
    let cells = plan.cells()?;
    let mut summary = SweepSummary { cells: cells.len(), ..Default::default() };
    if cells.is_empty() {
        return Ok(summary);
    }
    let done = completed_ids(&store)?;

    // Cells that fail to resolve are recorded up front.
    let mut live: Vec<(&Cell, ExperimentConfig)> = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        match cell.config.as_ref().map_err(Clone::clone).and_then(|c| c.validate().map(|_| c.clone()).map_err(Error::from)) {
            Ok(c) => live.push((cell, c)),
            Err(e) => {
                let id = format!("invalid-{}-{}", plan.name, hash_json(&cell.axes).unwrap_or_else(|_| i.to_string()));
                if !done.contains(&id) {
                    store.append(&failed(id, 2, None, &cell.axes, e.to_string()))?;
                }
                summary.failed += 1;
            }
        }
    }

    let s2_hash = config_hash;
    let s2_id = |c: &ExperimentConfig| config_hash(c).map(|h| format!("s2-{h}"));
    let wants2 = plan.stages.contains(&2);
    let wants1 = plan.stages.contains(&1);
    // Skip everything already complete before loading any data.
    let pending: Vec<&(&Cell, ExperimentConfig)> = live
        .iter()
        .filter(|(_, c)| {
            let s1_done = tokenizer_hash(c).map(|h| done.contains(&format!("s1-{h}"))).unwrap_or(false);
            let s2_done = s2_id(c).map(|id| done.contains(&id)).unwrap_or(false);
            (wants1 && !s1_done) || (wants2 && !s2_done)
        })
        .collect();
    summary.skipped = live.len() - pending.len();
    if pending.is_empty() {
        return Ok(summary);
    }

    let mut corpora: BTreeMap<String, Corpus> = BTreeMap::new();
    for (_, c) in &pending {
        let h = corpus_hash(c)?;
        if !corpora.contains_key(&h) {
            let dir = layout.corpus(&h);
            corpus::build(&dir, &c.corpus, false, jobs)?;
            corpora.insert(h, corpus::load(&dir, jobs)?);
        }
    }

    // Phase 1: distinct tokenizers, in parallel.
    let mut tok_cfgs: BTreeMap<String, (ExperimentConfig, BTreeMap<String, String>)> = BTreeMap::new();
    for (cell, c) in &pending {
        tok_cfgs.entry(tokenizer_hash(c)?).or_insert_with(|| (c.clone(), cell.axes.clone()));
    }
    let tok_list: Vec<(&String, &(ExperimentConfig, BTreeMap<String, String>))> = tok_cfgs.iter().collect();
    let inner = if jobs > tok_list.len() { jobs / tok_list.len().max(1) } else { 1 };
    let sink = OrderedSink::new(&store, tok_list.len());
    let trained = pool::map(jobs, tok_list.len(), |i| -> Result<std::result::Result<(TrainedTokenizer, bool), String>> {
        let (hash, (c, axes)) = tok_list[i];
        let r = corpus_hash(c).and_then(|h| ensure_tokenizer(&layout, c, &corpora[&h], inner));
        let id = format!("s1-{hash}");
        let rec = match &r {
            Ok((t, _)) if wants1 && !done.contains(&id) => Some(stage1_record(c, t, axes)),
            Err(e) if !done.contains(&id) => Some(Ok(failed(id, 1, Some(c), axes, e.to_string()))),
            _ => None,
        };
        let rec = rec.transpose();
        sink.put(i, rec.as_ref().ok().cloned().flatten())?;
        rec?;
        Ok(r.map_err(|e| e.to_string()))
    });
    let mut toks: BTreeMap<String, std::result::Result<TrainedTokenizer, String>> = BTreeMap::new();
    for ((hash, _), r) in tok_list.iter().zip(trained) {
        match r? {
            Ok((t, fresh)) => {
                summary.tokenizers_trained += fresh as usize;
                toks.insert((*hash).clone(), Ok(t));
            }
            Err(e) => {
                summary.failed += 1;
                toks.insert((*hash).clone(), Err(e));
            }
        }
    }
    if !wants2 {
        return Ok(summary);
    }

    // Phase 2: generator cells, in parallel.
    let mut shared: BTreeMap<String, SharedEval> = BTreeMap::new();
    for (_, c) in &pending {
        let h = hash_json(&(&c.corpus, c.eval.held_in))?;
        if !shared.contains_key(&h) && c.eval.samples_per_class > 0 {
            let data = &corpora[&corpus_hash(c)?];
            let held = &data.train[..c.eval.held_in.clamp(2, data.train.len())];
            shared.insert(h, SharedEval { val: drivers::stats(&data.val, jobs)?, held_in: drivers::stats(held, jobs)? });
        }
    }
    let todo: Vec<&(&Cell, ExperimentConfig)> =
        pending.into_iter().filter(|(_, c)| s2_id(c).map(|id| !done.contains(&id)).unwrap_or(true)).collect();
    let sink = OrderedSink::new(&store, todo.len());
    let results = pool::map(jobs, todo.len(), |i| -> Result<bool> {
        let (cell, c) = todo[i];
        let rec = (|| -> Result<RunRecord> {
            let id = s2_id(c)?;
            Ok(match &toks[&tokenizer_hash(c)?] {
                Err(e) => failed(id, 2, Some(c), &cell.axes, format!("tokenizer failed: {e}")),
                Ok(t) => {
                    let sh = shared.get(&hash_json(&(&c.corpus, c.eval.held_in))?);
                    run_stage2_in(&layout.run(&s2_hash(c)?), c, t, sh, &cell.axes)
                        .unwrap_or_else(|e| failed(id, 2, Some(c), &cell.axes, e.to_string()))
                }
            })
        })();
        sink.put(i, rec.as_ref().ok().cloned())?;
        Ok(rec?.completed())
    });
    for r in results {
        if r? {
            summary.runs_trained += 1;
        } else {
            summary.failed += 1;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_parses_axes_and_round_trips() {
        let text = "crtlab-config 1\nplan.name = t\ncorpus.train = 64\naxis.seed = [0, 1]\naxis.tokenizer.crt.enabled = [false, true]\n";
        let p = Plan::parse(text, &[]).unwrap();
        assert_eq!(p.name, "t");
        assert_eq!(p.axes.len(), 2);
        let cells = p.cells().unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[1].axes["tokenizer.crt.enabled"], "true");
        assert!(cells[1].config.as_ref().unwrap().tokenizer.crt.enabled);
        assert_eq!(cells[3].config.as_ref().unwrap().corpus.train, 64);
        let again = Plan::parse(&p.render().unwrap(), &[]).unwrap();
        assert_eq!(again, p);
        assert!(Plan::parse("crtlab-config 1\naxis.nope = [1]\n", &[]).is_err());
        assert!(Plan::parse("crtlab-config 1\naxis.seed = 3\n", &[]).is_err());
    }

    #[test]
    fn empty_axis_gives_no_cells() {
        let p = Plan::parse("crtlab-config 1\naxis.seed = []\n", &[]).unwrap();
        assert!(p.cells().unwrap().is_empty());
        let dir = tempfile::tempdir().unwrap();
        let s = run(&p, dir.path(), 1).unwrap();
        assert_eq!(s.cells, 0);
        assert!(!dir.path().join("records.jsonl").exists());
    }
}
