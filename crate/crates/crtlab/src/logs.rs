use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Line-buffered JSON-lines writer.
pub struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            crate::fsx::create_dir(dir)?;
        }
        let f = File::create(path).map_err(Error::io(path))?;
        Ok(JsonLines { path: path.to_path_buf(), out: BufWriter::new(f) })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path).map_err(Error::io(path))?;
        Ok(JsonLines { path: path.to_path_buf(), out: BufWriter::new(f) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.out.write_all(&line).and_then(|_| self.out.flush()).map_err(Error::io(&self.path))
    }
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path.display().to_string(), format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
