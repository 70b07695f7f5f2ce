//! Compute accounting, log-log fits and Pareto frontiers over endpoint runs.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `6·N·D` in checked 128-bit integers.
pub fn flops_estimate(params: u64, tokens: u64) -> Result<u128> {
    if params == 0 || tokens == 0 {
        return Err(Error::invalid("flops_estimate", "parameter and token counts must be positive"));
    }
    (params as u128 * tokens as u128).checked_mul(6).ok_or_else(|| Error::invalid("flops_estimate", "overflow"))
}

/// Tokens processed by a stage-2 run: every sequence carries a class token.
pub fn tokens_processed(iterations: u64, batch: u64, seq_len: u64) -> u64 {
    iterations * batch * (seq_len + 1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub frechet: Option<f64>,
    pub psnr: Option<f64>,
    pub ms_ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { reason: String },
}

/// The endpoint of one independent training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub stage: u8,
    /// Series label, e.g. a model size.
    pub model: String,
    /// Tokenizer the run consumed or produced.
    pub tokenizer: String,
    pub iterations: u64,
    pub params: u64,
    pub tokens: u64,
    pub flops: u128,
    pub val_loss: Option<f64>,
    pub metrics: MetricScores,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_s: f64,
    pub status: RunStatus,
    /// Axis values of the sweep cell.
    #[serde(default)]
    pub axes: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    /// Checks the compute accounting of a completed record.
    pub fn validate(&self) -> Result<()> {
        if self.completed() && flops_estimate(self.params, self.tokens)? != self.flops {
            return Err(Error::invalid("run record", format!("{}: flops != 6·N·D", self.run_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

impl FitResult {
    pub fn predict(&self, x: f64) -> f64 {
        libm::pow(10.0, self.intercept + self.slope * libm::log10(x))
    }
}

/// Least squares line through `(log₁₀ x, log₁₀ y)`.
pub fn loglog_fit(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 2 {
        return Err(Error::invalid("loglog_fit", "need at least two points"));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::invalid("loglog_fit", "coordinates must be positive and finite"));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| libm::log10(p.0)).collect();
    let ly: Vec<f64> = points.iter().map(|p| libm::log10(p.1)).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("loglog_fit", "all x values coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(FitResult { slope, intercept, r2, points: points.len() })
}

/// Indices of points not dominated under `(x ↓, y ↓)`, ascending in `x`.
/// Identical points are all kept.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).expect("finite coordinates").then(a.cmp(&b)));
    let mut keep = Vec::new();
    let mut best = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        let x = points[order[i]].0;
        let group_min = points[order[i]].1;
        let mut j = i;
        while j < order.len() && points[order[j]].0 == x {
            if points[order[j]].1 == group_min && group_min < best {
                keep.push(order[j]);
            }
            j += 1;
        }
        best = best.min(group_min);
        i = j;
    }
    keep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    ValLoss,
    Frechet,
}

impl Objective {
    pub fn of(&self, r: &RunRecord) -> Option<f64> {
        match self {
            Objective::ValLoss => r.val_loss,
            Objective::Frechet => r.metrics.frechet,
        }
    }
}

/// Frontier members as indices into the input records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoSet {
    pub objective: Objective,
    pub members: Vec<usize>,
}

/// Non-dominated completed records under `(flops ↓, objective ↓)`. Records
/// without the objective do not take part.
pub fn pareto_frontier(records: &[RunRecord], objective: Objective) -> ParetoSet {
    let usable: Vec<usize> =
        (0..records.len()).filter(|&i| records[i].completed() && objective.of(&records[i]).is_some_and(f64::is_finite)).collect();
    let points: Vec<(f64, f64)> = usable.iter().map(|&i| (records[i].flops as f64, objective.of(&records[i]).unwrap())).collect();
    ParetoSet { objective, members: pareto_indices(&points).into_iter().map(|k| usable[k]).collect() }
}

/// Picks the guidance scale with the lowest score; ties go to the earlier
/// grid entry. Returns the choice and every score in grid order.
pub fn cfg_selection(alphas: &[f64], mut score: impl FnMut(f64) -> Result<f64>) -> Result<(f64, Vec<f64>)> {
    if alphas.is_empty() {
        return Err(Error::Empty("cfg scale grid"));
    }
    let scores = alphas.iter().map(|&a| score(a)).collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok((alphas[best], scores))
}

/// One sweep axis: a dotted config key and the values it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

/// Cross product of the axes, first axis slowest. No axes yields one empty
/// cell; an axis without values yields none.
pub fn expand_grid(axes: &[Axis]) -> Vec<Vec<(String, String)>> {
    let mut cells: Vec<Vec<(String, String)>> = alloc::vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(cells.len() * axis.values.len());
        for cell in &cells {
            for v in &axis.values {
                let mut c = cell.clone();
                c.push((axis.key.clone(), v.clone()));
                next.push(c);
            }
        }
        cells = next;
    }
    cells
}

/// Geometric iteration grid `start·ratioᵏ` for `k < count`.
pub fn geometric_grid(start: u64, ratio: u64, count: usize) -> Vec<u64> {
    (0..count as u32).map(|k| start * ratio.pow(k)).collect()
}

/// Longer training lowering validation loss while the sample metric gets
/// worse, for one model series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvertrainingFlag {
    pub model: String,
    pub tokenizer: String,
    /// Consecutive iteration pairs compared.
    pub pairs: usize,
    /// Pairs where loss went down and the metric went up.
    pub discordant: usize,
}

impl OvertrainingFlag {
    pub fn flagged(&self) -> bool {
        self.discordant > 0
    }
}

pub fn overtraining_flags(records: &[RunRecord]) -> Vec<OvertrainingFlag> {
    let mut series: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.completed() && r.val_loss.is_some() && r.metrics.frechet.is_some()) {
        series.entry((r.model.clone(), r.tokenizer.clone())).or_default().push(r);
    }
    series
        .into_iter()
        .map(|((model, tokenizer), mut rs)| {
            rs.sort_by_key(|r| r.iterations);
            let mut discordant = 0;
            for w in rs.windows(2) {
                let (a, b) = (w[0], w[1]);
                if b.val_loss < a.val_loss && b.metrics.frechet > a.metrics.frechet {
                    discordant += 1;
                }
            }
            OvertrainingFlag { model, tokenizer, pairs: rs.len().saturating_sub(1), discordant }
        })
        .collect()
}
