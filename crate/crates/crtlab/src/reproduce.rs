//! Desk-scale analogs of the main experiments: each figure is one or more
//! sweep plans over a shared record store plus a figure-specific analysis.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crtlab_core::config::ExperimentConfig;
use crtlab_core::metrics::EntropyReport;
use crtlab_core::scaling::RunRecord;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::records::RecordStore;
use crate::sweep::{self, Layout, Plan, Stage2Summary, SweepSummary, TokenizerSummary};
use crate::{fsx, kv, report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    #[value(name = "fig4-analog")]
    Fig4,
    #[value(name = "fig5-analog")]
    Fig5,
    #[value(name = "fig7-analog")]
    Fig7,
    #[value(name = "fig8-analog")]
    Fig8,
}

impl Figure {
    pub fn id(self) -> &'static str {
        match self {
            Figure::Fig4 => "fig4-analog",
            Figure::Fig5 => "fig5-analog",
            Figure::Fig7 => "fig7-analog",
            Figure::Fig8 => "fig8-analog",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// The default desk-scale budget.
    Desk,
    /// A tiny smoke-test budget.
    Quick,
}

const DESK: &str = "\
seed = 0
corpus.train = 4096
corpus.val = 512
tokenizer.widths = [16, 32, 32]
tokenizer.res_blocks = 1
tokenizer.latent_width = 32
tokenizer.quantizer = {\"codes\": 64, \"input_width\": 32}
tokenizer.iterations = 400
tokenizer.batch = 16
tokenizer.optim.warmup_steps = 50
tokenizer.log_every = 25
generator.layers = 2
generator.heads = 1
generator.iterations = 400
generator.batch = 32
generator.optim.warmup_steps = 40
eval.samples_per_class = 32
eval.held_in = 512
";

const QUICK: &str = "\
seed = 0
corpus.train = 128
corpus.val = 64
tokenizer.widths = [8, 8, 8]
tokenizer.res_blocks = 1
tokenizer.latent_width = 8
tokenizer.quantizer = {\"codes\": 16, \"input_width\": 8, \"dim\": 4}
tokenizer.iterations = 12
tokenizer.batch = 8
tokenizer.optim.warmup_steps = 2
tokenizer.crt.ramp = 4
tokenizer.log_every = 4
generator.layers = 1
generator.heads = 1
generator.iterations = 10
generator.batch = 8
generator.optim.warmup_steps = 2
eval.samples_per_class = 3
eval.held_in = 32
eval.cfg_scales = [1.5, 2.0]
";

fn base(preset: Preset) -> &'static str {
    match preset {
        Preset::Desk => DESK,
        Preset::Quick => QUICK,
    }
}

/// `(plan name, extra lines)` for each sub-plan of a figure.
fn plan_bodies(fig: Figure, preset: Preset) -> Vec<(&'static str, String)> {
    let quick = preset == Preset::Quick;
    let iters = if quick { "[4, 8, 16, 32]" } else { "[250, 500, 1000, 2000]" };
    let sizes = r#"[{"layers": 1, "heads": 1}, {"layers": 2, "heads": 2}]"#;
    match fig {
        Figure::Fig4 => vec![(
            "fig4",
            format!("axis.tokenizer.crt.enabled = [false, true]\naxis.generator = {sizes}\naxis.generator.iterations = {iters}\n"),
        )],
        Figure::Fig5 => {
            let codes = if quick {
                r#"[{"mode": "vq", "codes": 8}, {"mode": "vq", "codes": 16}, {"mode": "fsq", "levels": [2, 2, 2, 2]}]"#
            } else {
                r#"[{"mode": "vq", "codes": 16}, {"mode": "vq", "codes": 64}, {"mode": "vq", "codes": 256}, {"mode": "fsq", "levels": [4, 4, 4]}]"#
            };
            vec![
                ("fig5-codebook", format!("axis.tokenizer.quantizer = {codes}\naxis.generator.iterations = {iters}\n")),
                ("fig5-resolution", format!("axis.corpus.side = [24, 32, 40]\naxis.generator.iterations = {iters}\n")),
            ]
        }
        Figure::Fig7 => {
            vec![("fig7", "eval.samples_per_class = 0\naxis.seed = [0, 1, 2]\naxis.tokenizer.crt.enabled = [false, true]\n".to_string())]
        }
        Figure::Fig8 => vec![
            ("fig8-depth", "tokenizer.crt.enabled = true\naxis.tokenizer.crt.layers = [0, 2, 4, 6]\n".to_string()),
            ("fig8-lambda", "tokenizer.crt.enabled = true\naxis.tokenizer.crt.lambda = [0.0, 1.0, 2.0, 4.0, 8.0]\n".to_string()),
        ],
    }
}

pub fn plans(fig: Figure, preset: Preset, overrides: &[(String, Value)]) -> Result<Vec<Plan>> {
    plan_bodies(fig, preset)
        .into_iter()
        .map(|(name, body)| Plan::parse(&format!("{}\nplan.name = {name}\n{}{body}", kv::HEADER, base(preset)), overrides))
        .collect()
}

/// One completed stage-2 cell with everything cached about it.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub config: ExperimentConfig,
    pub record: RunRecord,
    pub stage2: Stage2Summary,
    pub tokenizer: TokenizerSummary,
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(p).map_err(Error::io(p))?)?)
}

pub fn cell_results(root: &Path) -> Result<Vec<CellResult>> {
    let layout = Layout { root: root.to_path_buf() };
    let mut out = Vec::new();
    for r in RecordStore::new(layout.records()).latest()? {
        if r.stage != 2 || !r.completed() {
            continue;
        }
        let dir = layout.run(&r.config_hash);
        let p = dir.join("config.cfg");
        let config: ExperimentConfig = kv::resolve(Some(&std::fs::read_to_string(&p).map_err(Error::io(&p))?), &[])?;
        let stage2 = read_json(&dir.join(sweep::SUMMARY))?;
        let tokenizer = read_json(&layout.tokenizer(&sweep::tokenizer_hash(&config)?).join(sweep::SUMMARY))?;
        out.push(CellResult { config, record: r, stage2, tokenizer });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPair {
    pub seed: u64,
    pub baseline_mse: f64,
    pub crt_mse: f64,
    pub baseline_val_loss: f64,
    pub crt_val_loss: f64,
    pub baseline_per_position: Vec<f64>,
    pub crt_per_position: Vec<f64>,
    pub baseline_entropy: EntropyReport,
    pub crt_entropy: EntropyReport,
}

/// Baseline/CRT pairs by seed from a fig7-style store.
pub fn seed_pairs(cells: &[CellResult]) -> Vec<SeedPair> {
    let mut by_seed: BTreeMap<u64, (Option<&CellResult>, Option<&CellResult>)> = BTreeMap::new();
    for c in cells {
        let e = by_seed.entry(c.config.seed).or_default();
        if c.config.tokenizer.crt.enabled {
            e.1 = Some(c);
        } else {
            e.0 = Some(c);
        }
    }
    by_seed
        .into_iter()
        .filter_map(|(seed, pair)| match pair {
            (Some(b), Some(c)) => Some(SeedPair {
                seed,
                baseline_mse: b.tokenizer.eval.mse,
                crt_mse: c.tokenizer.eval.mse,
                baseline_val_loss: b.stage2.val_loss,
                crt_val_loss: c.stage2.val_loss,
                baseline_per_position: b.stage2.per_position.per_position.clone(),
                crt_per_position: c.stage2.per_position.per_position.clone(),
                baseline_entropy: b.tokenizer.eval.entropy.clone(),
                crt_entropy: c.tokenizer.eval.entropy.clone(),
            }),
            _ => None,
        })
        .collect()
}

fn mean_vec(vs: &[&Vec<f64>]) -> Vec<f64> {
    let n = vs.first().map_or(0, |v| v.len());
    (0..n).map(|i| vs.iter().map(|v| v[i]).sum::<f64>() / vs.len() as f64).collect()
}

fn fig7_analysis(root: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let pairs = seed_pairs(&cell_results(root)?);
    let mut files = Vec::new();
    let entropies: Vec<(String, EntropyReport)> = pairs
        .iter()
        .flat_map(|p| {
            [(format!("baseline seed {}", p.seed), p.baseline_entropy.clone()), (format!("crt seed {}", p.seed), p.crt_entropy.clone())]
        })
        .collect();
    let (a, b) = report::entropy_files(&entropies, out, "per_position_entropy")?;
    files.extend([a, b]);
    let base: Vec<&Vec<f64>> = pairs.iter().map(|p| &p.baseline_per_position).collect();
    let crt: Vec<&Vec<f64>> = pairs.iter().map(|p| &p.crt_per_position).collect();
    let (mb, mc) = (mean_vec(&base), mean_vec(&crt));
    let delta: Vec<f64> = mb.iter().zip(&mc).map(|(b, c)| b - c).collect();
    let (a, b) = report::per_position_files(&[("baseline".into(), mb), ("crt".into(), mc)], out, "per_position_loss")?;
    files.extend([a, b]);
    let (a, b) = report::per_position_files(&[("baseline minus crt".into(), delta)], out, "per_position_improvement")?;
    files.extend([a, b]);
    let rows = pairs
        .iter()
        .map(|p| {
            vec![
                p.seed.to_string(),
                p.baseline_mse.to_string(),
                p.crt_mse.to_string(),
                p.baseline_val_loss.to_string(),
                p.crt_val_loss.to_string(),
                p.baseline_entropy.skew.to_string(),
                p.crt_entropy.skew.to_string(),
                p.baseline_entropy.utilization.to_string(),
                p.crt_entropy.utilization.to_string(),
            ]
        })
        .collect();
    files.push(report::table(
        &out.join("seed_pairs.csv"),
        &[
            "seed",
            "baseline_mse",
            "crt_mse",
            "baseline_val_loss",
            "crt_val_loss",
            "baseline_skew",
            "crt_skew",
            "baseline_utilization",
            "crt_utilization",
        ],
        rows,
    )?);
    Ok(files)
}

fn fig8_analysis(root: &Path, out: &Path, plans: &[Plan]) -> Result<Vec<PathBuf>> {
    let by_hash: BTreeMap<String, CellResult> = cell_results(root)?.into_iter().map(|c| (c.record.config_hash.clone(), c)).collect();
    let mut rows = Vec::new();
    let mut by_depth = Vec::new();
    let mut by_lambda = Vec::new();
    // Cells shared between the two sweeps appear under both axes.
    for (axes, c) in plans.iter().flat_map(|p| p.cells().unwrap_or_default()).filter_map(|cell| {
        let hash = cell.config.as_ref().ok().and_then(|c| sweep::config_hash(c).ok())?;
        by_hash.get(&hash).map(|c| (cell.axes, c))
    }) {
        let t = &c.config.tokenizer;
        let (layers, lambda) = if t.crt.enabled { (t.crt.layers, t.crt.lambda) } else { (0, 0.0) };
        let gfid = c.record.metrics.frechet;
        rows.push(vec![
            axes.keys().cloned().collect::<Vec<_>>().join("+"),
            layers.to_string(),
            lambda.to_string(),
            c.tokenizer.eval.frechet.to_string(),
            c.tokenizer.eval.psnr.to_string(),
            c.tokenizer.eval.mse.to_string(),
            gfid.map(|v| v.to_string()).unwrap_or_default(),
            c.stage2.guidance.as_ref().map(|g| g.alpha.to_string()).unwrap_or_default(),
            c.stage2.val_loss.to_string(),
        ]);
        if let Some(g) = gfid {
            if axes.contains_key("tokenizer.crt.layers") {
                by_depth.push((c.tokenizer.eval.frechet, g));
            } else {
                by_lambda.push((c.tokenizer.eval.frechet, g));
            }
        }
    }
    let table = report::table(
        &out.join("ablation.csv"),
        &["axis", "crt_layers", "crt_lambda", "rfid", "psnr", "mse", "gfid", "cfg_scale", "val_loss"],
        rows,
    )?;
    let plot = crate::svg::Plot::new(
        "regularizer ablations",
        "reconstruction Fréchet distance",
        "generation Fréchet distance",
        crate::svg::Scale::Linear,
        crate::svg::Scale::Linear,
    )
    .with("depth sweep", by_depth, crate::svg::Style::Markers)
    .with("weight sweep", by_lambda, crate::svg::Style::Markers);
    let svg = out.join("ablation.svg");
    fsx::write_atomic(&svg, plot.render().as_bytes())?;
    Ok(vec![table, svg])
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReproduceSummary {
    pub figure: String,
    pub sweeps: Vec<SweepSummary>,
    /// Relative to the output root.
    pub files: Vec<PathBuf>,
}

/// Runs every plan of `fig` under `root` and writes the analysis to
/// `root/report`. Cells already in the record store are not retrained.
pub fn reproduce(fig: Figure, preset: Preset, overrides: &[(String, Value)], root: &Path, jobs: usize) -> Result<ReproduceSummary> {
    let mut summary = ReproduceSummary { figure: fig.id().into(), ..Default::default() };
    let plans = plans(fig, preset, overrides)?;
    for plan in &plans {
        summary.sweeps.push(sweep::run(plan, root, jobs)?);
    }
    let out = root.join("report");
    let records = RecordStore::new(Layout { root: root.to_path_buf() }.records()).latest()?;
    summary.files = report::write_report(&records, &out)?;
    match fig {
        Figure::Fig7 => summary.files.extend(fig7_analysis(root, &out)?),
        Figure::Fig8 => summary.files.extend(fig8_analysis(root, &out, &plans)?),
        Figure::Fig4 | Figure::Fig5 => {}
    }
    for f in &mut summary.files {
        if let Ok(rel) = f.strip_prefix(root) {
            *f = rel.to_path_buf();
        }
    }
    fsx::write_atomic(&root.join("reproduce.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_plan_resolves() {
        for fig in [Figure::Fig4, Figure::Fig5, Figure::Fig7, Figure::Fig8] {
            for preset in [Preset::Desk, Preset::Quick] {
                for plan in plans(fig, preset, &[]).unwrap() {
                    for cell in plan.cells().unwrap() {
                        cell.config.unwrap().validate().unwrap();
                    }
                }
            }
        }
    }
}
