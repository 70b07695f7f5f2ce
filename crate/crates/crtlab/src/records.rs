//! The run-record store (JSON lines, appended under an exclusive file lock)
//! and its CSV table form.
//!
//! CSV columns, in order: `run_id, stage, model, tokenizer, iterations,
//! params, tokens, flops, val_loss, frechet, psnr, ms_ssim, config_hash,
//! seed, wall_time_s, status, reason, axes`. Missing values are empty
//! cells and `axes` is a JSON object.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crtlab_core::scaling::{MetricScores, RunRecord, RunStatus};

use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 18] = [
    "run_id",
    "stage",
    "model",
    "tokenizer",
    "iterations",
    "params",
    "tokens",
    "flops",
    "val_loss",
    "frechet",
    "psnr",
    "ms_ssim",
    "config_hash",
    "seed",
    "wall_time_s",
    "status",
    "reason",
    "axes",
];

#[derive(Debug, Clone)]
pub struct RecordStore {
    path: PathBuf,
}

fn parse_lines(path: &Path, text: &str) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: RunRecord =
            serde_json::from_str(line).map_err(|e| Error::format(path.display().to_string(), format!("line {}: {e}", i + 1)))?;
        out.push(r);
    }
    Ok(out)
}

impl RecordStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RecordStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Every line in file order.
    pub fn read_all(&self) -> Result<Vec<RunRecord>> {
        let mut f = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::Io { path: self.path.clone(), source: e }),
        };
        f.lock_shared().map_err(Error::io(&self.path))?;
        let mut text = String::new();
        f.read_to_string(&mut text).map_err(Error::io(&self.path))?;
        parse_lines(&self.path, &text)
    }

    /// The last record of each run id, in order of first appearance. A
    /// later attempt supersedes a failed one.
    pub fn latest(&self) -> Result<Vec<RunRecord>> {
        let all = self.read_all()?;
        let mut order: Vec<String> = Vec::new();
        let mut last: BTreeMap<String, RunRecord> = BTreeMap::new();
        for r in all {
            if !last.contains_key(&r.run_id) {
                order.push(r.run_id.clone());
            }
            last.insert(r.run_id.clone(), r);
        }
        Ok(order.into_iter().map(|id| last.remove(&id).unwrap()).collect())
    }

    /// Appends `record`. A run id that already completed is rejected.
    pub fn append(&self, record: &RunRecord) -> Result<()> {
        record.validate()?;
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            crate::fsx::create_dir(dir)?;
        }
        let mut f = OpenOptions::new().create(true).read(true).append(true).open(&self.path).map_err(Error::io(&self.path))?;
        f.lock().map_err(Error::io(&self.path))?;
        let mut text = String::new();
        f.read_to_string(&mut text).map_err(Error::io(&self.path))?;
        if parse_lines(&self.path, &text)?.iter().any(|r| r.run_id == record.run_id && r.completed()) {
            return Err(Error::Refused(format!("duplicate run id `{}`", record.run_id)));
        }
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        f.write_all(&line).and_then(|_| f.sync_data()).map_err(Error::io(&self.path))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn row(r: &RunRecord) -> Result<Vec<String>> {
    let (status, reason) = match &r.status {
        RunStatus::Completed => ("completed", String::new()),
        RunStatus::Failed { reason } => ("failed", reason.clone()),
    };
    Ok(vec![
        r.run_id.clone(),
        r.stage.to_string(),
        r.model.clone(),
        r.tokenizer.clone(),
        r.iterations.to_string(),
        r.params.to_string(),
        r.tokens.to_string(),
        r.flops.to_string(),
        opt(r.val_loss),
        opt(r.metrics.frechet),
        opt(r.metrics.psnr),
        opt(r.metrics.ms_ssim),
        r.config_hash.clone(),
        r.seed.to_string(),
        r.wall_time_s.to_string(),
        status.to_string(),
        reason,
        serde_json::to_string(&r.axes)?,
    ])
}

pub fn to_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record(row(r)?)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec[i].parse().map_err(|_| Error::format("csv", format!("bad {} `{}`", CSV_COLUMNS[i], &rec[i])))
}

fn opt_field(rec: &csv::StringRecord, i: usize) -> Result<Option<f64>> {
    if rec[i].is_empty() {
        Ok(None)
    } else {
        field(rec, i).map(Some)
    }
}

pub fn from_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    if rd.headers()?.iter().ne(CSV_COLUMNS) {
        return Err(Error::format("csv", "unexpected header"));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let status = match &rec[15] {
            "completed" => RunStatus::Completed,
            "failed" => RunStatus::Failed { reason: rec[16].to_string() },
            s => return Err(Error::format("csv", format!("bad status `{s}`"))),
        };
        out.push(RunRecord {
            run_id: rec[0].to_string(),
            stage: field(&rec, 1)?,
            model: rec[2].to_string(),
            tokenizer: rec[3].to_string(),
            iterations: field(&rec, 4)?,
            params: field(&rec, 5)?,
            tokens: field(&rec, 6)?,
            flops: field(&rec, 7)?,
            val_loss: opt_field(&rec, 8)?,
            metrics: MetricScores { frechet: opt_field(&rec, 9)?, psnr: opt_field(&rec, 10)?, ms_ssim: opt_field(&rec, 11)? },
            config_hash: rec[12].to_string(),
            seed: field(&rec, 13)?,
            wall_time_s: field(&rec, 14)?,
            status,
            axes: serde_json::from_str(&rec[17])?,
        });
    }
    Ok(out)
}
