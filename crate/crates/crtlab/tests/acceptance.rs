//! Acceptance suite: one line per criterion.
//!
//! Oracle and property criteria are asserted; the desk-scale directional
//! criteria are measured and reported. Trained runs are cached under the
//! target directory (or `CRTLAB_ACCEPTANCE_ROOT`), so a rerun only repeats
//! the analysis.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::{Path, PathBuf};
use std::time::Instant;

use crtlab::records::RecordStore;
use crtlab::reproduce::{self, CellResult, Figure, Preset};
use crtlab::sweep::{self, Layout, Plan};
use crtlab::{checkpoint, corpus, kv, pool, tokens};
use crtlab_core::autodiff::Graph;
use crtlab_core::config::CorpusConfig;
use crtlab_core::generator::{cfg_logits, Cond, Generator, GeneratorConfig, TokenSet};
use crtlab_core::metrics::{self, entropy_report, GaussianStats};
use crtlab_core::quantize::{fsq_composite_index, fsq_grid_point, fsq_round, fsq_split_index, vq_lookup, QuantMode, QuantizerConfig};
use crtlab_core::rng::Rng;
use crtlab_core::scaling::{flops_estimate, loglog_fit, pareto_frontier, tokens_processed, MetricScores, Objective, RunRecord, RunStatus};
use crtlab_core::tokenizer::{Tokenizer, TokenizerConfig};
use crtlab_core::Tensor;
use support::gradcheck::{check, op_suite};
use support::oracles::{checkerboard, cosine_argmax, ms_ssim_gray, pareto_brute};

const PINNED_CORPUS: &str = "e15b9f9466eb887fd0b53eaec7a382db9279a5c623b0363f9e512d401f95e2dc";

struct Outcome {
    pass: bool,
    /// Asserted criteria fail the target; measured ones only report.
    asserted: bool,
    detail: String,
}

fn asserted(pass: bool, detail: String) -> Outcome {
    Outcome { pass, asserted: true, detail }
}

fn measured(pass: bool, detail: String) -> Outcome {
    Outcome { pass, asserted: false, detail }
}

fn root() -> PathBuf {
    std::env::var_os("CRTLAB_ACCEPTANCE_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let (mut worst, mut ops, mut few, mut bad) = (0.0f64, 0, Vec::new(), Vec::new());
    for case in op_suite() {
        ops += 1;
        if case.trials.len() < 3 {
            few.push(case.name);
        }
        let r = check(&case, 17);
        worst = worst.max(r.worst_rel_err);
        if !(r.worst_rel_err < 1e-4) {
            bad.push(r.name);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    asserted(
        bad.is_empty() && few.is_empty() && secs < 60.0,
        format!("{ops} ops, worst rel err {worst:.1e} (< 1e-4), failing {bad:?}, under 3 shapes {few:?}, {secs:.1} s"),
    )
}

fn c2_quantizers() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(3);
    let (k, d) = (64, 8);
    let table: Vec<f64> = (0..k * d).map(|_| rng.normal()).collect();
    let mismatches = (0..10_000)
        .filter(|_| {
            let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            vq_lookup(&z, &table, d).index != cosine_argmax(&z, &table, d)
        })
        .count();
    let mut fsq_bad = 0;
    let mut fsq_codes = 0;
    for levels in [vec![8, 5, 5, 5], vec![7, 5, 5, 5, 5], vec![8, 8, 8]] {
        let n: usize = levels.iter().product();
        for i in 0..n {
            let p: Vec<f64> = fsq_grid_point(i, &levels);
            let ok = fsq_round(&p, &levels).indices == [i as u32] && fsq_composite_index(&fsq_split_index(i, &levels), &levels) == i;
            fsq_bad += !ok as usize;
            fsq_codes += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    asserted(
        mismatches == 0 && fsq_bad == 0 && secs < 60.0,
        format!("vq: {mismatches}/10000 index mismatches; fsq: {fsq_bad}/{fsq_codes} round-trip failures; {secs:.1} s"),
    )
}

fn c3_straight_through() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for mode in [QuantMode::Vq, QuantMode::Fsq] {
        let quantizer = match mode {
            QuantMode::Vq => QuantizerConfig { codes: 16, dim: 4, input_width: 8, ..Default::default() },
            QuantMode::Fsq => QuantizerConfig { mode, codes: 16, levels: vec![4, 4], input_width: 8, ..Default::default() },
        };
        let cfg = TokenizerConfig { side: 16, widths: vec![8, 8], res_blocks: 1, latent_width: 8, quantizer, ..Default::default() };
        let tok = Tokenizer::<f64>::new(cfg, 4).unwrap();
        let mut g = Graph::<f64>::new();
        let mut rng = Rng::new(8);
        let x = g.constant(rng.normal_tensor(&[2, 3, 16, 16], 0.5));
        let fw = tok.forward(&mut g, x).unwrap();
        let sq = g.square(fw.recon);
        let loss = g.mean(sq);
        let grads = g.backward(loss).unwrap();
        let (a, b) = (grads.get(fw.quant.latents), grads.get(fw.quant.decoder_input));
        let same = matches!((a, b), (Some(a), Some(b)) if a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()) && a.len() == b.len());
        let nonzero = a.is_some_and(|a| a.iter().any(|v| *v != 0.0));
        pass &= same && nonzero;
        details.push(format!("{mode:?}: bitwise equal {same}, non-zero {nonzero}"));
    }
    asserted(pass, details.join("; "))
}

fn c4_cfg() -> Outcome {
    let mut rng = Rng::new(5);
    let mut exact = true;
    for _ in 0..200 {
        let u: Vec<f64> = (0..32).map(|_| rng.normal() * 10.0).collect();
        let c: Vec<f64> = (0..32).map(|_| rng.normal() * 10.0).collect();
        exact &= cfg_logits(&u, &c, 1.0).unwrap() == c && cfg_logits(&u, &c, 0.0).unwrap() == u;
    }
    let gen =
        Generator::<f32>::new(GeneratorConfig { layers: 1, heads: 1, vocab: 16, classes: 3, seq_len: 4, ..Default::default() }, 2).unwrap();
    let lc = gen.next_logits(&[Cond::Class(1)], &[3, 4], 2).unwrap();
    let lu = gen.next_logits(&[Cond::Dummy], &[3, 4], 2).unwrap();
    let model = cfg_logits(&lu, &lc, 1.0).unwrap() == lc && cfg_logits(&lu, &lc, 0.0).unwrap() == lu;
    let formula = cfg_logits(&[0.0], &[2.0], 1.5).unwrap();
    asserted(
        exact && model && formula == [3.0],
        format!("α=1/α=0 exact on 200 random pairs: {exact}; on generator logits: {model}; ℓu=0, ℓc=2, α=1.5 → {}", formula[0]),
    )
}

fn c5_frechet() -> Outcome {
    let s = |mean: Vec<f64>, cov: Vec<f64>| GaussianStats { mean, cov, n: 100 };
    let a = s(vec![0.3, -1.0, 2.0], vec![2.0, 0.3, 0.1, 0.3, 0.5, 0.0, 0.1, 0.0, 1.0]);
    let same = metrics::frechet_distance(&a, &a).unwrap().abs();
    let (m1, v1, m2, v2): (f64, f64, f64, f64) = (1.5, 4.0, -0.5, 0.25);
    let uni_want = (m1 - m2).powi(2) + v1 + v2 - 2.0 * (v1 * v2).sqrt();
    let uni = (metrics::frechet_distance(&s(vec![m1], vec![v1]), &s(vec![m2], vec![v2])).unwrap() - uni_want).abs();
    let (d1, d2): ([f64; 3], [f64; 3]) = ([1.0, 9.0, 0.04], [4.0, 1.0, 0.09]);
    let diag = |d: [f64; 3]| (0..9).map(|k| if k % 4 == 0 { d[k / 4] } else { 0.0 }).collect();
    let diag_want = 1.0 + 4.0 + (0..3).map(|i| d1[i] + d2[i] - 2.0 * (d1[i] * d2[i]).sqrt()).sum::<f64>();
    let dg = (metrics::frechet_distance(&s(vec![0.0, 0.0, 1.0], diag(d1)), &s(vec![1.0, 0.0, -1.0], diag(d2))).unwrap() - diag_want).abs();
    asserted(
        same <= 1e-8 && uni <= 1e-8 && dg <= 1e-8,
        format!("identical {same:.1e}, univariate err {uni:.1e}, diagonal err {dg:.1e} (≤ 1e-8)"),
    )
}

fn c6_identities() -> (bool, String) {
    let mut rng = Rng::new(6);
    let (mut ok, mut reports) = (true, 0);
    for trial in 0..200 {
        let k = 2 + rng.below(30);
        let n = 1 + rng.below(20);
        let seqs = 1 + rng.below(50);
        let skewed = trial % 2 == 0;
        let toks: Vec<u32> =
            (0..seqs * n).map(|i| if skewed { ((i % n) * 7 + rng.below(2)) as u32 % k as u32 } else { rng.below(k) as u32 }).collect();
        let r = entropy_report(&toks, k, n).unwrap();
        ok &= r.mean_per_position <= r.total + 1e-12 && (0.0..1.0).contains(&r.skew);
        reports += 1;
    }
    let c = entropy_report(&[5; 64], 8, 16).unwrap();
    let constant = c.degenerate && c.total == 0.0 && c.skew == 0.0 && c.per_position.iter().all(|h| *h == 0.0);
    (
        ok && constant,
        format!("mean ≤ pooled and skew ∈ [0,1) on {reports} reports: {ok}; constant stream degenerate with zero entropies: {constant}"),
    )
}

/// Position-0 bounds that hold exactly for a model evaluated on the set the
/// entropies are measured on, plus the per-position bound as stated.
fn c6_bounds(cells: &[CellResult], root: &Path) -> (bool, bool, String) {
    let layout = Layout { root: root.to_path_buf() };
    let (mut exact_ok, mut literal_ok) = (true, true);
    let mut parts = Vec::new();
    for c in cells {
        let dir = layout.tokenizer(&sweep::tokenizer_hash(&c.config).unwrap());
        let val = dir.join("val.tok");
        let dump = tokens::TokenDump::read(&val).unwrap();
        let labels = tokens::read_labels(&val).unwrap();
        let set = TokenSet::from_grids(&dump.grids(), &labels).unwrap();
        let gen = checkpoint::load_generator::<f32>(&layout.run(&c.record.config_hash).join("generator.ckpt")).unwrap();
        let n = gen.config.seq_len;
        let ln2 = std::f64::consts::LN_2;
        let h = entropy_report(&dump.tokens, dump.codes as usize, n).unwrap();
        // H(X0) and H(X0 | class) in nats from the same tokens.
        let first: Vec<u32> = (0..set.len()).map(|i| set.sequence(i)[0]).collect();
        let h0 = entropy_report(&first, dump.codes as usize, 1).unwrap().total * ln2;
        let classes = gen.config.classes;
        let h0c: f64 = (0..classes)
            .map(|k| {
                let sub: Vec<u32> = first.iter().zip(&labels).filter(|(_, l)| **l == k).map(|(t, _)| *t).collect();
                if sub.is_empty() {
                    0.0
                } else {
                    sub.len() as f64 / first.len() as f64 * entropy_report(&sub, dump.codes as usize, 1).unwrap().total * ln2
                }
            })
            .sum();
        let mean0 = |cond: &dyn Fn(usize) -> Cond| -> f64 {
            let ids: Vec<usize> = (0..set.len()).collect();
            let mut tot = 0.0;
            for chunk in ids.chunks(64) {
                let conds: Vec<Cond> = chunk.iter().map(|&i| cond(i)).collect();
                let toks: Vec<u32> = chunk.iter().flat_map(|&i| set.sequence(i).iter().copied()).collect();
                let l = gen.token_losses(&conds, &toks).unwrap();
                tot += chunk.iter().enumerate().map(|(j, _)| l[j * n]).sum::<f64>();
            }
            tot / set.len() as f64
        };
        let ce0_u = mean0(&|_| Cond::Dummy);
        let ce0_c = mean0(&|i| Cond::Class(set.classes[i]));
        exact_ok &= ce0_u >= h0 - 1e-9 && ce0_c >= h0c - 1e-9;
        let pp = &c.stage2.per_position.per_position;
        let violations = pp.iter().zip(&h.per_position).filter(|(l, hb)| **l < **hb * ln2 - 0.05).count();
        literal_ok &= violations == 0;
        let worst = pp.iter().zip(&h.per_position).map(|(l, hb)| hb * ln2 - l).fold(f64::NEG_INFINITY, f64::max);
        parts.push(format!(
            "seed {} {}: pos0 uncond {ce0_u:.3} ≥ H(X0) {h0:.3}, class {ce0_c:.3} ≥ H(X0|C) {h0c:.3}; per-position loss < H(Xi)−0.05 at {violations}/{n} (max gap {worst:.3})",
            c.config.seed,
            if c.config.tokenizer.crt.enabled { "crt" } else { "base" },
        ));
    }
    (exact_ok, literal_ok, parts.join("; "))
}

fn c7_tradeoff(pairs: &[reproduce::SeedPair], crt_steps: &[(u64, u64)]) -> Outcome {
    let n = pairs.len();
    let worse_recon = pairs.iter().filter(|p| p.crt_mse >= p.baseline_mse).count();
    let better_ce = pairs.iter().filter(|p| p.crt_val_loss < p.baseline_val_loss).count();
    let mean_gain = pairs.iter().map(|p| p.baseline_val_loss - p.crt_val_loss).sum::<f64>() / n.max(1) as f64;
    let per: Vec<String> = pairs
        .iter()
        .map(|p| {
            format!(
                "seed {}: mse {:.4}→{:.4}, val CE {:.3}→{:.3}, utilization {:.3}→{:.3}",
                p.seed,
                p.baseline_mse,
                p.crt_mse,
                p.baseline_val_loss,
                p.crt_val_loss,
                p.baseline_entropy.utilization,
                p.crt_entropy.utilization
            )
        })
        .collect();
    // A tokenizer that emits one code is trivially predictable; report it.
    let collapsed = pairs.iter().filter(|p| p.crt_entropy.degenerate).count();
    let pass = n == 3 && worse_recon >= 2 && better_ce >= 2 && mean_gain > 0.01;
    measured(
        pass,
        format!(
            "(a) CRT mse ≥ base in {worse_recon}/{n}; (b) CRT val CE < base in {better_ce}/{n}, mean gain {mean_gain:.4} nats (> 0.01); CRT tokenizers collapsed to a single code: {collapsed}/{n}; stage-1 steps base/crt {crt_steps:?}; {}",
            per.join("; ")
        ),
    )
}

fn c8_positions(pairs: &[reproduce::SeedPair]) -> Outcome {
    let n = pairs.first().map_or(0, |p| p.baseline_per_position.len());
    if n == 0 {
        return measured(false, "no runs".into());
    }
    let mean = |f: &dyn Fn(&reproduce::SeedPair) -> &Vec<f64>| -> Vec<f64> {
        (0..n).map(|i| pairs.iter().map(|p| f(p)[i]).sum::<f64>() / pairs.len() as f64).collect()
    };
    let base = mean(&|p| &p.baseline_per_position);
    let crt = mean(&|p| &p.crt_per_position);
    let gain: Vec<f64> = base.iter().zip(&crt).map(|(b, c)| b - c).collect();
    let better = gain.iter().filter(|g| **g >= 0.0).count();
    let q = n / 4;
    let first = gain[..q].iter().sum::<f64>() / q as f64;
    let last = gain[n - q..].iter().sum::<f64>() / q as f64;
    let frac = better as f64 / n as f64;
    measured(
        frac >= 0.75 && last > first,
        format!(
            "CRT ≤ base at {better}/{n} positions ({:.0}% ≥ 75%); mean gain first quartile {first:.3}, last quartile {last:.3}; gains {:?}",
            frac * 100.0,
            gain.iter().map(|g| (g * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn record(i: usize, flops: u128, loss: f64) -> RunRecord {
    RunRecord {
        run_id: format!("r{i}"),
        stage: 2,
        model: "m".into(),
        tokenizer: "t".into(),
        iterations: 1,
        params: 1,
        tokens: 1,
        flops,
        val_loss: Some(loss),
        metrics: MetricScores::default(),
        config_hash: String::new(),
        seed: 0,
        wall_time_s: 0.0,
        status: RunStatus::Completed,
        axes: Default::default(),
    }
}

fn c9_oracles() -> (bool, String) {
    let mut rng = Rng::new(9);
    let recs: Vec<RunRecord> = (0..200).map(|i| record(i, 1 + rng.below(60) as u128, rng.below(50) as f64 / 7.0)).collect();
    let pts: Vec<(f64, f64)> = recs.iter().map(|r| (r.flops as f64, r.val_loss.unwrap())).collect();
    let mut got = pareto_frontier(&recs, Objective::ValLoss).members;
    got.sort();
    let pareto = got == pareto_brute(&pts);
    let law: Vec<(f64, f64)> = (0..8).map(|k| 10f64.powi(k)).map(|x| (x, 3.0 * x.powf(-0.5))).collect();
    let fit = loglog_fit(&law).unwrap();
    let slope_ok = (fit.slope + 0.5).abs() <= 1e-12;

    let cfg = GeneratorConfig { layers: 2, heads: 1, vocab: 64, classes: 8, seq_len: 16, ..Default::default() };
    let gen = Generator::<f32>::new(cfg.clone(), 1).unwrap();
    let b = 32;
    let mut g = Graph::new();
    let conds = vec![Cond::Class(0); b];
    let prefix = vec![0u32; b * (cfg.seq_len - 1)];
    let logits = gen.forward_logits(&mut g, &conds, &prefix, cfg.seq_len - 1).unwrap();
    let _ = g.cross_entropy(logits, &vec![0; b * cfg.seq_len]).unwrap();
    let counted = 3.0 * g.forward_flops() as f64;
    let estimate = flops_estimate(gen.param_count() as u64, tokens_processed(1, b as u64, cfg.seq_len as u64)).unwrap() as f64;
    let ratio = estimate / counted;
    let flops_ok = (ratio - 1.0).abs() <= 0.15;
    (
        pareto && slope_ok && flops_ok,
        format!(
            "pareto ≡ brute force on 200 records: {pareto}; fitted slope {:.15} (r² {:.6}); 6ND / (3 × counted forward) = {ratio:.3} (within 15%: {flops_ok})",
            fit.slope, fit.r2
        ),
    )
}

fn grid_plan() -> Plan {
    let text = format!(
        "{}\nplan.name = grid\n{}eval.samples_per_class = 0\naxis.generator = [{{\"layers\": 1, \"heads\": 1}}, {{\"layers\": 2, \"heads\": 1}}]\naxis.generator.iterations = [100, 200, 400, 800]\n",
        kv::HEADER,
        desk_lines(),
    );
    Plan::parse(&text, &[]).unwrap()
}

/// The desk preset's keys, read back from the fig7 plan.
fn desk_lines() -> String {
    let plan = &reproduce::plans(Figure::Fig7, Preset::Desk, &[]).unwrap()[0];
    let mut base = plan.base.clone();
    base["eval"]["samples_per_class"] = 0.into();
    kv::flatten(&base).into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn c9_grid(root: &Path, jobs: usize) -> (bool, String) {
    let plan = grid_plan();
    let start = Instant::now();
    let s = sweep::run(&plan, root, jobs).unwrap();
    let ids: std::collections::BTreeSet<String> =
        plan.cells().unwrap().iter().map(|c| format!("s2-{}", sweep::config_hash(c.config.as_ref().unwrap()).unwrap())).collect();
    let recs: Vec<RunRecord> = RecordStore::new(Layout { root: root.to_path_buf() }.records())
        .latest()
        .unwrap()
        .into_iter()
        .filter(|r| ids.contains(&r.run_id) && r.completed())
        .collect();
    let front = pareto_frontier(&recs, Objective::ValLoss);
    let losses: Vec<f64> = front.members.iter().map(|&i| recs[i].val_loss.unwrap()).collect();
    let monotone = losses.windows(2).all(|w| w[1] <= w[0]);
    let complete = recs.len() == 8;
    (
        complete && monotone,
        format!(
            "grid {} cells, {} completed ({} trained now, {:.0} s); frontier of {} runs monotone non-increasing: {monotone}; frontier losses {:?}",
            s.cells,
            recs.len(),
            s.runs_trained,
            start.elapsed().as_secs_f64(),
            losses.len(),
            losses.iter().map(|l| (l * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn c10_ablation(jobs: usize) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let s = reproduce::reproduce(Figure::Fig8, Preset::Quick, &[], dir.path(), jobs).unwrap();
    let table = std::fs::read_to_string(dir.path().join("report/ablation.csv")).unwrap_or_default();
    let mut rdr = csv::Reader::from_reader(table.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let depth = rows.iter().filter(|r| &r[0] == "tokenizer.crt.layers").count();
    let lambda = rows.iter().filter(|r| &r[0] == "tokenizer.crt.lambda").count();
    let filled = rows.iter().all(|r| !r[3].is_empty() && !r[6].is_empty());
    let svg = dir.path().join("report/ablation.svg").exists();
    let failed: usize = s.sweeps.iter().map(|w| w.failed).sum();
    let default_lambda = TokenizerConfig::default().crt.lambda;
    asserted(
        depth == 4 && lambda == 5 && filled && svg && failed == 0 && default_lambda == 4.0,
        format!("depth rows {depth}/4, λ rows {lambda}/5, rFID and gFID filled {filled}, plot {svg}, failed cells {failed}; default λ {default_lambda}"),
    )
}

fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(root).unwrap().display().to_string();
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            let bytes = std::fs::read(&p).unwrap();
            let bytes = if name.ends_with(".json") || name.ends_with(".jsonl") { strip_times(&bytes) } else { bytes };
            out.push((rel, bytes));
        }
    }
    out.sort();
    out
}

/// Zeroes wall-clock fields, the only outputs that depend on timing.
fn strip_times(bytes: &[u8]) -> Vec<u8> {
    fn walk(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, x) in m.iter_mut() {
                    if k == "wall_time_s" {
                        *x = 0.into();
                    } else {
                        walk(x);
                    }
                }
            }
            serde_json::Value::Array(a) => a.iter_mut().for_each(walk),
            _ => {}
        }
    }
    let text = String::from_utf8_lossy(bytes);
    if let Ok(mut v) = serde_json::from_str::<serde_json::Value>(&text) {
        walk(&mut v);
        return v.to_string().into_bytes();
    }
    text.lines()
        .map(|l| match serde_json::from_str::<serde_json::Value>(l) {
            Ok(mut v) => {
                walk(&mut v);
                v.to_string()
            }
            Err(_) => l.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
        .into_bytes()
}

fn c11_determinism() -> Outcome {
    let text = format!(
        "{}\nplan.name = det\ncorpus.train = 64\ncorpus.val = 32\neval.samples_per_class = 2\neval.held_in = 32\naxis.tokenizer.crt.enabled = [false, true]\n",
        kv::HEADER
    );
    let quick = reproduce::plans(Figure::Fig7, Preset::Quick, &[]).unwrap().remove(0);
    let mut overrides: Vec<(String, serde_json::Value)> =
        kv::flatten(&quick.base).into_iter().filter(|(k, _)| !k.starts_with("corpus.") && !k.starts_with("eval.")).collect();
    overrides.push(("seed".into(), 1.into()));
    let plan = Plan::parse(&text, &overrides).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut runs = Vec::new();
    for (dir, jobs) in [(a.path(), 2), (b.path(), 2)] {
        sweep::run(&plan, dir, jobs).unwrap();
        runs.push(snapshot(dir));
    }
    let files = runs[0].len();
    let differing: Vec<&String> = runs[0].iter().zip(&runs[1]).filter(|(x, y)| x != y).map(|(x, _)| &x.0).collect();
    let same_names = runs[0].iter().map(|x| &x.0).eq(runs[1].iter().map(|x| &x.0));
    let pin_dir = tempfile::tempdir().unwrap();
    let pinned =
        corpus::build(pin_dir.path(), &CorpusConfig { seed: 7, classes: 8, train: 64, val: 16, side: 32 }, false, 3).unwrap().checksum;
    asserted(
        same_names && differing.is_empty() && files > 10 && pinned == PINNED_CORPUS,
        format!(
            "{files} files from two identical pipeline runs, differing {differing:?}; corpus checksum matches pinned value: {}",
            pinned == PINNED_CORPUS
        ),
    )
}

fn c12_metrics() -> Outcome {
    let mut rng = Rng::new(12);
    let x: Tensor<f32> = Tensor::from_fn(&[3, 32, 32], |_| (rng.uniform() * 2.0 - 1.0) as f32);
    let self_ssim = metrics::ms_ssim(&x, &x).unwrap();
    let p = metrics::psnr(x.data(), x.data(), 2.0).unwrap();
    let a = checkerboard(64, 64, 4, 0.125, 0.875);
    let b = checkerboard(64, 64, 8, 0.25, 0.75);
    let img = |g: &[Vec<f64>]| Tensor::new(&[1, 64, 64], g.iter().flatten().map(|v| (v * 2.0 - 1.0) as f32).collect()).unwrap();
    let got = metrics::ms_ssim(&img(&a), &img(&b)).unwrap();
    let want = ms_ssim_gray(&a, &b);
    let err = (got - want).abs();
    asserted(
        self_ssim == 1.0 && p.exact && err <= 1e-6,
        format!(
            "MS-SSIM(x,x) = {self_ssim}; PSNR exact flag {}; checkerboard MS-SSIM {got:.9} vs reference {want:.9} (err {err:.1e} ≤ 1e-6)",
            p.exact
        ),
    )
}

fn main() {
    let jobs = pool::default_jobs();
    let mut lines: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut emit = |id: u32, name: &'static str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let kind = if o.asserted { "" } else { " (measured)" };
        println!("criterion {id:>2} {tag} {name}{kind}: {}", o.detail);
        lines.push((id, name, o));
    };
    emit(1, "gradient correctness", c1_gradients());
    emit(2, "quantizer oracles", c2_quantizers());
    emit(3, "straight-through", c3_straight_through());
    emit(4, "guidance identities", c4_cfg());
    emit(5, "Fréchet oracle", c5_frechet());
    emit(12, "metrics", c12_metrics());
    emit(11, "determinism", c11_determinism());
    emit(10, "ablation harness", c10_ablation(jobs));

    let root = root();
    let start = Instant::now();
    let fig7 = reproduce::reproduce(Figure::Fig7, Preset::Desk, &[], &root, jobs).unwrap();
    let fig7_failed: usize = fig7.sweeps.iter().map(|s| s.failed).sum();
    println!(
        "desk runs under {}: {} tokenizers and {} generators trained now, {} cells failed, {:.0} s",
        root.display(),
        fig7.sweeps.iter().map(|s| s.tokenizers_trained).sum::<usize>(),
        fig7.sweeps.iter().map(|s| s.runs_trained).sum::<usize>(),
        fig7_failed,
        start.elapsed().as_secs_f64()
    );
    let fig7_ids: std::collections::BTreeSet<String> = reproduce::plans(Figure::Fig7, Preset::Desk, &[])
        .unwrap()
        .iter()
        .flat_map(|p| p.cells().unwrap())
        .map(|c| sweep::config_hash(c.config.as_ref().unwrap()).unwrap())
        .collect();
    let cells: Vec<CellResult> =
        reproduce::cell_results(&root).unwrap().into_iter().filter(|c| fig7_ids.contains(&c.record.config_hash)).collect();
    let pairs = reproduce::seed_pairs(&cells);
    let steps: Vec<(u64, u64)> = {
        let by = |crt: bool| cells.iter().filter(|c| c.config.tokenizer.crt.enabled == crt).map(|c| c.tokenizer.steps).next().unwrap_or(0);
        vec![(by(false), by(true))]
    };

    let (ident_ok, ident) = c6_identities();
    let (exact_ok, literal_ok, bounds) = c6_bounds(&cells, &root);
    emit(
        6,
        "entropy identities",
        asserted(ident_ok && exact_ok, format!("{ident}; cross-entropy ≥ entropy at position 0 (exact bounds): {exact_ok}")),
    );
    emit(6, "unigram bound per position, as stated", measured(literal_ok, bounds));
    emit(7, "CRT trade-off", c7_tradeoff(&pairs, &steps));
    emit(8, "per-position loss geometry", c8_positions(&pairs));
    let (oracle_ok, oracle) = c9_oracles();
    let (grid_ok, grid) = c9_grid(&root, jobs);
    emit(9, "scaling harness oracles", asserted(oracle_ok, oracle));
    emit(9, "endpoint grid and frontier", asserted(grid_ok, grid));

    let hard: Vec<String> = lines.iter().filter(|(_, _, o)| o.asserted && !o.pass).map(|(i, n, _)| format!("{i} {n}")).collect();
    let soft: Vec<String> = lines.iter().filter(|(_, _, o)| !o.asserted && !o.pass).map(|(i, n, _)| format!("{i} {n}")).collect();
    println!(
        "acceptance: {}/{} lines pass; asserted failures {:?}; measured failures {:?}",
        lines.iter().filter(|l| l.2.pass).count(),
        lines.len(),
        hard,
        soft
    );
    if !hard.is_empty() {
        std::process::exit(1);
    }
}
