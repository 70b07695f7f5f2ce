//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use crtlab_core::config::{CorpusConfig, ExperimentConfig};
use crtlab_core::generator::{self, SampleConfig, TokenSet};
use crtlab_core::metrics::{self, EntropyReport, EXTRACTOR_SEED};
use crtlab_core::scaling::{Objective, RunRecord};
use crtlab_core::tokenizer::TokenGrid;
use serde::Serialize;
use serde_json::Value;

use crate::corpus::{self, Corpus, Manifest};
use crate::error::{Error, Result};
use crate::records::{self, RecordStore};
use crate::reproduce::{self, Figure, Preset};
use crate::sweep::{self, Plan, SharedEval};
use crate::tokens::{self, TokenDump};
use crate::{checkpoint, drivers, fsx, kv, pool, ppm, report};

#[derive(Debug, Parser)]
#[command(name = "crtlab", version, about = "Two-stage discrete image generation at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Config document (`crtlab-config 1` followed by `key = value` lines).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Experiment seed (for `synth`, the corpus seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; nothing is written outside it.
    #[arg(long, env = "CRTLAB_OUT", default_value = "crtlab-out")]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = pool::default_jobs(), value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    pub jobs: usize,
    /// Replace existing outputs instead of refusing.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a synthetic corpus.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
        /// Image side in pixels.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train a tokenizer and freeze its token sets. Keys without a section
    /// prefix refer to `tokenizer.`.
    TrainTokenizer {
        #[command(flatten)]
        common: Common,
        /// Existing corpus; built under --out when omitted.
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
    },
    /// Train a generator on a tokenizer's frozen tokens. Keys without a
    /// section prefix refer to `generator.`.
    TrainGenerator {
        #[command(flatten)]
        common: Common,
        /// Output directory of `train-tokenizer`.
        #[arg(long, value_name = "DIR")]
        tokenizer: PathBuf,
        /// Corpus for guided Fréchet evaluation; skipped when omitted.
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
    },
    /// Draw class-conditional samples.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        tokenizer: PathBuf,
        #[arg(long, value_name = "DIR")]
        generator: PathBuf,
        /// Classes to sample; all classes when omitted.
        #[arg(long = "class")]
        classes: Vec<usize>,
        /// Guidance scale; defaults to the scale chosen during training, else 1.
        #[arg(long)]
        alpha: Option<f64>,
        /// Samples per class.
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Evaluate a tokenizer and optionally a generator against a corpus.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        tokenizer: PathBuf,
        #[arg(long, value_name = "DIR")]
        generator: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
    },
    /// Run every cell of a sweep plan and report on the record store.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Plan document: config keys plus `axis.<key> = [..]` lines.
        plan: PathBuf,
    },
    /// Entropy, per-position loss or scaling analysis of a token dump or record store.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Token dump, record store (`.jsonl` or `.csv`) or a directory holding `records.jsonl`.
        input: PathBuf,
        /// Generator directory; with a token dump, reports per-position loss.
        #[arg(long, value_name = "DIR")]
        generator: Option<PathBuf>,
    },
    /// Frontier plots from a record store.
    Plot {
        #[command(flatten)]
        common: Common,
        input: PathBuf,
    },
    /// Run the desk-scale analog of a figure end to end.
    Reproduce {
        #[command(flatten)]
        common: Common,
        #[arg(value_enum)]
        figure: Figure,
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

const SECTIONS: [&str; 5] = ["seed", "corpus", "tokenizer", "generator", "eval"];

/// Config pairs from --config and --set, with section-less keys moved under
/// `section` when one is given.
fn pairs(common: &Common, section: Option<&str>) -> Result<Vec<(String, Value)>> {
    let mut out = match &common.config {
        Some(p) => kv::parse(&std::fs::read_to_string(p).map_err(Error::io(p))?)?,
        None => Vec::new(),
    };
    for s in &common.set {
        out.push(kv::parse_override(s)?);
    }
    if let Some(sec) = section {
        for (k, _) in &mut out {
            if !SECTIONS.contains(&k.split('.').next().unwrap_or_default()) {
                *k = format!("{sec}.{k}");
            }
        }
    }
    Ok(out)
}

fn resolve(base: Option<&str>, common: &Common, section: Option<&str>) -> Result<ExperimentConfig> {
    let mut p = pairs(common, section)?;
    if let Some(seed) = common.seed {
        p.push(("seed".into(), seed.into()));
    }
    let c: ExperimentConfig = kv::resolve(base, &p)?;
    let c = c.aligned();
    c.validate()?;
    Ok(c)
}

fn snapshot(out: &Path, c: &ExperimentConfig) -> Result<()> {
    fsx::create_dir(out)?;
    fsx::write_atomic(&out.join("config.cfg"), kv::to_string(c)?.as_bytes())
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(p).map_err(Error::io(p))?)?)
}

pub fn corpus_config(m: &Manifest) -> CorpusConfig {
    CorpusConfig { seed: m.seed, classes: m.classes, train: m.train.seeds.len(), val: m.val.seeds.len(), side: m.side }
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Refused(format!("{} exists; pass --force to replace it", path.display())));
    }
    Ok(())
}

fn shared_eval(c: &ExperimentConfig, data: &Corpus, jobs: usize) -> Result<SharedEval> {
    let held = &data.train[..c.eval.held_in.clamp(2, data.train.len())];
    Ok(SharedEval { val: drivers::stats(&data.val, jobs)?, held_in: drivers::stats(held, jobs)? })
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth { common, classes, train, val, size } => {
            let mut c = resolve(None, &Common { seed: None, ..common.clone() }, None)?;
            let cc = &mut c.corpus;
            if let Some(s) = common.seed {
                cc.seed = s;
            }
            cc.classes = classes.unwrap_or(cc.classes);
            cc.train = train.unwrap_or(cc.train);
            cc.val = val.unwrap_or(cc.val);
            cc.side = size.unwrap_or(cc.side);
            let c = c.aligned();
            c.validate()?;
            let m = corpus::build(&common.out, &c.corpus, common.force, common.jobs)?;
            snapshot(&common.out, &c)?;
            print_json(&serde_json::json!({ "checksum": m.checksum, "train": m.train.seeds.len(), "val": m.val.seeds.len() }))?;
        }
        Command::TrainTokenizer { common, corpus: corpus_dir } => {
            let out = &common.out;
            let mut c = resolve(None, &common, Some("tokenizer"))?;
            refuse_existing(&out.join(sweep::SUMMARY), common.force)?;
            let dir = match corpus_dir {
                Some(d) => {
                    c.corpus = corpus_config(&corpus::read_manifest(&d)?);
                    c = c.aligned();
                    c.validate()?;
                    d
                }
                None => {
                    let d = out.join("corpus");
                    corpus::build(&d, &c.corpus, common.force, common.jobs)?;
                    d
                }
            };
            snapshot(out, &c)?;
            let data = corpus::load(&dir, common.jobs)?;
            let t = sweep::train_tokenizer_in(out, &c, &data, common.jobs)?;
            print_json(&t.summary)?;
        }
        Command::TrainGenerator { common, tokenizer, corpus: corpus_dir } => {
            let out = &common.out;
            let base_path = tokenizer.join("config.cfg");
            let base = base_path.exists().then(|| std::fs::read_to_string(&base_path).map_err(Error::io(&base_path))).transpose()?;
            let t = sweep::load_tokenizer_dir(&tokenizer)?;
            let mut c = resolve(base.as_deref(), &common, Some("generator"))?;
            c.tokenizer = t.tok.config.clone();
            if let Some(d) = &corpus_dir {
                c.corpus = corpus_config(&corpus::read_manifest(d)?);
            }
            let c = c.aligned();
            c.validate()?;
            refuse_existing(&out.join(sweep::SUMMARY), common.force)?;
            snapshot(out, &c)?;
            let shared = match &corpus_dir {
                Some(d) if c.eval.samples_per_class > 0 => Some(shared_eval(&c, &corpus::load(d, common.jobs)?, common.jobs)?),
                _ => None,
            };
            let rec = sweep::run_stage2_in(out, &c, &t, shared.as_ref(), &BTreeMap::new())?;
            fsx::write_atomic(&out.join("record.json"), serde_json::to_string_pretty(&rec)?.as_bytes())?;
            print_json(&rec)?;
        }
        Command::Sample { common, tokenizer, generator: gen_dir, classes, alpha, count } => {
            sample(&common, &tokenizer, &gen_dir, classes, alpha, count)?
        }
        Command::Eval { common, tokenizer, generator: gen_dir, corpus: corpus_dir } => {
            eval(&common, &tokenizer, gen_dir.as_deref(), &corpus_dir)?
        }
        Command::Sweep { common, plan } => {
            let text = std::fs::read_to_string(&plan).map_err(Error::io(&plan))?;
            let mut over = pairs(&Common { config: None, ..common.clone() }, None)?;
            if let Some(s) = common.seed {
                over.push(("seed".into(), s.into()));
            }
            let plan = Plan::parse(&text, &over)?;
            let s = sweep::run(&plan, &common.out, common.jobs)?;
            let records = RecordStore::new(sweep::Layout { root: common.out.clone() }.records()).latest()?;
            report::write_report(&records, &common.out.join("report"))?;
            print_json(&s)?;
            if s.failed > 0 {
                return Ok(2);
            }
        }
        Command::Analyze { common, input, generator: gen_dir } => analyze(&common, &input, gen_dir.as_deref())?,
        Command::Plot { common, input } => {
            let records = load_records(&input)?;
            let mut files = Vec::new();
            for o in [Objective::ValLoss, Objective::Frechet] {
                if let Some((a, b)) = report::frontier_plot(&records, o, &common.out)? {
                    files.extend([a, b]);
                }
            }
            print_json(&files)?;
        }
        Command::Reproduce { common, figure, preset } => {
            let mut over = pairs(&common, None)?;
            if let Some(s) = common.seed {
                over.push(("seed".into(), s.into()));
            }
            let s = reproduce::reproduce(figure, preset, &over, &common.out, common.jobs)?;
            print_json(&s)?;
            if s.sweeps.iter().any(|w| w.failed > 0) {
                return Ok(2);
            }
        }
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct SampleEntry {
    index: usize,
    file: String,
    class: usize,
    alpha: f64,
    /// Seed of the class stream; the sample is draw `draw` of that stream.
    seed: u64,
    draw: usize,
    token_offset: u64,
}

fn sample(common: &Common, tok_dir: &Path, gen_dir: &Path, classes: Vec<usize>, alpha: Option<f64>, count: usize) -> Result<()> {
    let tok = checkpoint::load_tokenizer::<f32>(&tok_dir.join("tokenizer.ckpt"))?;
    let gen = checkpoint::load_generator::<f32>(&gen_dir.join("generator.ckpt"))?;
    let base_path = gen_dir.join("config.cfg");
    let base = base_path.exists().then(|| std::fs::read_to_string(&base_path).map_err(Error::io(&base_path))).transpose()?;
    let c = resolve(base.as_deref(), common, None)?;
    let alpha = match alpha {
        Some(a) => a,
        None => {
            let p = gen_dir.join(sweep::SUMMARY);
            let chosen = if p.exists() { read_json::<sweep::Stage2Summary>(&p)?.guidance.map(|g| g.alpha) } else { None };
            chosen.unwrap_or(1.0)
        }
    };
    let classes = if classes.is_empty() { (0..gen.config.classes).collect() } else { classes };
    if count == 0 {
        return Err(Error::Config("--count must be positive".into()));
    }
    let seed = sweep::sample_seed(&c);
    let out = &common.out;
    snapshot(out, &c)?;
    let side = tok.config.grid();
    let per_class = pool::try_map(common.jobs, classes.len(), |i| -> Result<(Vec<TokenGrid>, Vec<crtlab_core::Tensor<f32>>)> {
        let cfg = SampleConfig { class: classes[i], alpha, count, seed: generator::class_seed(seed, classes[i]) };
        let seqs = generator::sample_tokens(&gen, &cfg)?;
        let grids: Vec<TokenGrid> =
            seqs.into_iter().map(|s| TokenGrid::from_sequence(s, side, side)).collect::<crtlab_core::Result<_>>()?;
        let imgs = tok.decode_tokens(&grids)?;
        Ok((grids, imgs))
    })?;
    let grids: Vec<TokenGrid> = per_class.iter().flat_map(|(g, _)| g.iter().cloned()).collect();
    let dump = TokenDump::from_grids(tok.vocab(), &grids)?;
    dump.write(&out.join("samples.tok"))?;
    let img_dir = out.join("images");
    fsx::create_dir(&img_dir)?;
    let mut entries = Vec::new();
    let mut labels = Vec::new();
    for (ci, (_, imgs)) in per_class.iter().enumerate() {
        for (draw, img) in imgs.iter().enumerate() {
            let index = entries.len();
            let file = format!("images/{index:05}-c{}.ppm", classes[ci]);
            ppm::write(&out.join(&file), img)?;
            entries.push(SampleEntry {
                index,
                file,
                class: classes[ci],
                alpha,
                seed: generator::class_seed(seed, classes[ci]),
                draw,
                token_offset: dump.offset(index),
            });
            labels.push(classes[ci]);
        }
    }
    tokens::write_labels(&out.join("samples.tok"), &labels)?;
    let mut log = crate::logs::JsonLines::create(&out.join("samples.jsonl"))?;
    for e in &entries {
        log.write(e)?;
    }
    print_json(&serde_json::json!({ "samples": entries.len(), "alpha": alpha, "seed": seed }))
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct MetricEntry {
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub config_hash: String,
    pub extractor_seed: u64,
}

fn eval(common: &Common, tok_dir: &Path, gen_dir: Option<&Path>, corpus_dir: &Path) -> Result<()> {
    let tok = checkpoint::load_tokenizer::<f32>(&tok_dir.join("tokenizer.ckpt"))?;
    let gen = gen_dir.map(|d| checkpoint::load_generator::<f32>(&d.join("generator.ckpt"))).transpose()?;
    let mut c = resolve(None, common, None)?;
    c.tokenizer = tok.config.clone();
    c.corpus = corpus_config(&corpus::read_manifest(corpus_dir)?);
    if let Some(g) = &gen {
        c.generator = g.config.clone();
    }
    let c = c.aligned();
    c.validate()?;
    let out = &common.out;
    snapshot(out, &c)?;
    let data = corpus::load(corpus_dir, common.jobs)?;
    let n = data.val.len();
    let hash = sweep::hash_json(&(&c.tokenizer, gen.as_ref().map(|g| &g.config)))?;
    let entry = |metric: &str, value: f64, n: usize| MetricEntry {
        metric: metric.into(),
        value,
        n,
        config_hash: hash.clone(),
        extractor_seed: EXTRACTOR_SEED,
    };
    let (te, grids) = drivers::eval_tokenizer(&tok, &data.val, common.jobs)?;
    let mut m = vec![
        entry("mse", te.mse, n),
        entry("psnr", te.psnr, n),
        entry("ms_ssim", te.ms_ssim, n),
        entry("rfid", te.frechet, n),
        entry("utilization", te.entropy.utilization, n),
        entry("entropy_per_position", te.entropy.mean_per_position, n),
        entry("entropy_pooled", te.entropy.total, n),
        entry("skew", te.entropy.skew, n),
    ];
    if let Some(g) = &gen {
        let val = TokenSet::from_grids(&grids, &data.manifest.val.labels)?;
        m.push(entry("val_loss", drivers::per_position(g, &val, c.eval.shards)?.mean(), n));
        if c.eval.samples_per_class > 0 && !c.eval.cfg_scales.is_empty() {
            let sh = shared_eval(&c, &data, common.jobs)?;
            let ge = drivers::guided_frechet(
                g,
                &tok,
                &c.eval.cfg_scales,
                c.eval.samples_per_class,
                sweep::sample_seed(&c),
                &sh.held_in,
                &sh.val,
                common.jobs,
            )?;
            let ns = c.eval.samples_per_class * c.corpus.classes;
            m.push(entry("gfid", ge.frechet, ns));
            m.push(entry("cfg_scale", ge.alpha, ns));
        }
    }
    fsx::write_atomic(&out.join("metrics.json"), serde_json::to_string_pretty(&m)?.as_bytes())?;
    print_json(&m)
}

fn load_records(input: &Path) -> Result<Vec<RunRecord>> {
    let path = if input.is_dir() { input.join("records.jsonl") } else { input.to_path_buf() };
    if path.extension().is_some_and(|e| e == "csv") {
        let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
        return records::from_csv(&text);
    }
    if !path.exists() {
        return Err(Error::io(&path)(std::io::Error::new(std::io::ErrorKind::NotFound, "no record store")));
    }
    RecordStore::new(path).latest()
}

fn is_token_dump(path: &Path) -> bool {
    use std::io::Read;
    let mut magic = [0u8; 8];
    path.is_file() && std::fs::File::open(path).and_then(|mut f| f.read_exact(&mut magic)).is_ok() && magic == tokens::MAGIC
}

fn analyze(common: &Common, input: &Path, gen_dir: Option<&Path>) -> Result<()> {
    let out = &common.out;
    fsx::create_dir(out)?;
    if !is_token_dump(input) {
        if gen_dir.is_some() {
            return Err(Error::Config("--generator needs a token dump as input".into()));
        }
        let files = report::write_report(&load_records(input)?, out)?;
        return print_json(&files);
    }
    let dump = TokenDump::read(input)?;
    let per = dump.per_image();
    let report: EntropyReport = metrics::entropy_report(&dump.tokens, dump.codes as usize, per)?;
    let (a, b) = report::entropy_files(&[("tokens".into(), report.clone())], out, "entropy")?;
    fsx::write_atomic(&out.join("entropy.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    let mut files = vec![a, b];
    if let Some(d) = gen_dir {
        let gen = checkpoint::load_generator::<f32>(&d.join("generator.ckpt"))?;
        let set = TokenSet::from_grids(&dump.grids(), &tokens::read_labels(input)?)?;
        let shards = ExperimentConfig::default().eval.shards;
        let pp = drivers::per_position(&gen, &set, shards)?;
        let nats: Vec<f64> = report.per_position.iter().map(|h| h * std::f64::consts::LN_2).collect();
        let (a, b) = report::per_position_files(
            &[("loss".into(), pp.per_position.clone()), ("entropy (nats)".into(), nats)],
            out,
            "per_position_loss",
        )?;
        fsx::write_atomic(&out.join("per_position.json"), serde_json::to_string_pretty(&pp)?.as_bytes())?;
        files.extend([a, b]);
    }
    print_json(&files)
}
