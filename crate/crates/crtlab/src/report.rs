//! Tables and plots built from a record store.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crtlab_core::metrics::EntropyReport;
use crtlab_core::scaling::{loglog_fit, overtraining_flags, pareto_frontier, Objective, RunRecord};

use crate::error::{Error, Result};
use crate::fsx;
use crate::records::to_csv;
use crate::svg::{Plot, Scale, Style};

fn write(path: &Path, text: &str) -> Result<PathBuf> {
    fsx::write_atomic(path, text.as_bytes())?;
    Ok(path.to_path_buf())
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::format("csv", e.to_string()))?).expect("utf-8"))
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::ValLoss => "val_loss",
        Objective::Frechet => "frechet",
    }
}

/// Scatter of `objective` against FLOPs for stage-2 records, one series per
/// (tokenizer, model), with each tokenizer's frontier and its log-log fit.
/// Returns `None` when no record carries the objective.
pub fn frontier_plot(records: &[RunRecord], objective: Objective, out: &Path) -> Result<Option<(PathBuf, PathBuf)>> {
    let stage2: Vec<RunRecord> = records.iter().filter(|r| r.stage == 2 && r.completed() && objective.of(r).is_some()).cloned().collect();
    if stage2.is_empty() {
        return Ok(None);
    }
    let name = objective_name(objective);
    let ylabel = match objective {
        Objective::ValLoss => "validation loss (nats/token)",
        Objective::Frechet => "Fréchet feature distance",
    };
    let mut plot = Plot::new(&format!("{name} vs training FLOPs"), "training FLOPs", ylabel, Scale::Log, Scale::Log);
    let mut series: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &stage2 {
        series.entry((r.tokenizer.clone(), r.model.clone())).or_default().push((r.flops as f64, objective.of(r).unwrap()));
    }
    for ((tok, model), pts) in series {
        plot = plot.with(&format!("{tok} {model}"), pts, Style::Markers);
    }
    let mut by_tok: BTreeMap<String, Vec<RunRecord>> = BTreeMap::new();
    for r in &stage2 {
        by_tok.entry(r.tokenizer.clone()).or_default().push(r.clone());
    }
    let mut rows = Vec::new();
    for (tok, rs) in &by_tok {
        let front = pareto_frontier(rs, objective);
        let pts: Vec<(f64, f64)> = front.members.iter().map(|&i| (rs[i].flops as f64, objective.of(&rs[i]).unwrap())).collect();
        let fit = loglog_fit(&pts).ok();
        for &i in &front.members {
            let r = &rs[i];
            rows.push(vec![
                tok.clone(),
                r.run_id.clone(),
                r.model.clone(),
                r.flops.to_string(),
                objective.of(r).unwrap().to_string(),
                fit.map(|f| f.slope.to_string()).unwrap_or_default(),
                fit.map(|f| f.intercept.to_string()).unwrap_or_default(),
                fit.map(|f| f.r2.to_string()).unwrap_or_default(),
            ]);
        }
        plot = plot.with(&format!("{tok} frontier"), pts.clone(), Style::Line);
        if let Some(f) = fit {
            let (lo, hi) = pts.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.0), b.max(p.0)));
            plot = plot.with(&format!("{tok} fit {:.3}", f.slope), vec![(lo, f.predict(lo)), (hi, f.predict(hi))], Style::Dashed);
        }
    }
    let csv = write(
        &out.join(format!("{name}_frontier.csv")),
        &csv_text(&["tokenizer", "run_id", "model", "flops", name, "fit_slope", "fit_intercept", "fit_r2"], rows)?,
    )?;
    let svg = write(&out.join(format!("{name}_vs_flops.svg")), &plot.render())?;
    Ok(Some((csv, svg)))
}

/// Writes `records.csv` and, when there is anything to plot, the frontier
/// plots and the overtraining table.
pub fn write_report(records: &[RunRecord], out: &Path) -> Result<Vec<PathBuf>> {
    fsx::create_dir(out)?;
    let mut files = vec![write(&out.join("records.csv"), &to_csv(records)?)?];
    for o in [Objective::ValLoss, Objective::Frechet] {
        if let Some((c, s)) = frontier_plot(records, o, out)? {
            files.push(c);
            files.push(s);
        }
    }
    let flags = overtraining_flags(records);
    if !flags.is_empty() {
        let rows = flags
            .iter()
            .map(|f| vec![f.model.clone(), f.tokenizer.clone(), f.pairs.to_string(), f.discordant.to_string(), f.flagged().to_string()])
            .collect();
        files.push(write(&out.join("overtraining.csv"), &csv_text(&["model", "tokenizer", "pairs", "discordant", "flagged"], rows)?)?);
    }
    Ok(files)
}

/// Per-position entropy table and plot for one or more labelled reports.
pub fn entropy_files(reports: &[(String, EntropyReport)], out: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fsx::create_dir(out)?;
    let mut rows = Vec::new();
    let mut plot = Plot::new("per-position token entropy", "raster position", "entropy (bits)", Scale::Linear, Scale::Linear);
    for (name, r) in reports {
        for (i, h) in r.per_position.iter().enumerate() {
            rows.push(vec![name.clone(), i.to_string(), h.to_string()]);
        }
        rows.push(vec![name.clone(), "pooled".into(), r.total.to_string()]);
        rows.push(vec![name.clone(), "mean".into(), r.mean_per_position.to_string()]);
        rows.push(vec![name.clone(), "skew".into(), r.skew.to_string()]);
        rows.push(vec![name.clone(), "utilization".into(), r.utilization.to_string()]);
        rows.push(vec![name.clone(), "degenerate".into(), r.degenerate.to_string()]);
        plot = plot.with(name, r.per_position.iter().enumerate().map(|(i, &h)| (i as f64, h)).collect(), Style::Both);
    }
    let csv = write(&out.join(format!("{stem}.csv")), &csv_text(&["series", "position", "value"], rows)?)?;
    let svg = write(&out.join(format!("{stem}.svg")), &plot.render())?;
    Ok((csv, svg))
}

/// Per-position loss table and plot; `series` holds `(name, losses)`.
pub fn per_position_files(series: &[(String, Vec<f64>)], out: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fsx::create_dir(out)?;
    let mut rows = Vec::new();
    let mut plot = Plot::new("per-position stage-2 loss", "raster position", "cross-entropy (nats)", Scale::Linear, Scale::Linear);
    for (name, l) in series {
        for (i, v) in l.iter().enumerate() {
            rows.push(vec![name.clone(), i.to_string(), v.to_string()]);
        }
        plot = plot.with(name, l.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect(), Style::Both);
    }
    let csv = write(&out.join(format!("{stem}.csv")), &csv_text(&["series", "position", "loss"], rows)?)?;
    let svg = write(&out.join(format!("{stem}.svg")), &plot.render())?;
    Ok((csv, svg))
}

pub fn table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<PathBuf> {
    write(path, &csv_text(header, rows)?)
}
