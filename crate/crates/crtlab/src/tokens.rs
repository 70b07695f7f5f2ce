//! Token dumps: a fixed header followed by row-major `u32` little-endian
//! indices, one grid per image.

use std::path::Path;

use crtlab_core::tokenizer::TokenGrid;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"CRTLTOK\0";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 8 + 4 * 4 + 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenDump {
    pub codes: u32,
    pub height: u32,
    pub width: u32,
    pub tokens: Vec<u32>,
}

impl TokenDump {
    pub fn from_grids(codes: usize, grids: &[TokenGrid]) -> Result<Self> {
        let (h, w) = grids.first().map_or((0, 0), |g| (g.height, g.width));
        let mut tokens = Vec::with_capacity(grids.len() * h * w);
        for g in grids {
            if (g.height, g.width) != (h, w) {
                return Err(Error::format("token dump", "grids differ in shape"));
            }
            if let Some(t) = g.tokens.iter().find(|&&t| t as usize >= codes) {
                return Err(Error::format("token dump", format!("index {t} out of range for {codes} codes")));
            }
            tokens.extend_from_slice(&g.tokens);
        }
        Ok(TokenDump { codes: codes as u32, height: h as u32, width: w as u32, tokens })
    }

    pub fn per_image(&self) -> usize {
        (self.height * self.width) as usize
    }

    pub fn count(&self) -> usize {
        self.tokens.len().checked_div(self.per_image()).unwrap_or(0)
    }

    /// Byte offset of image `i`'s first token.
    pub fn offset(&self, i: usize) -> u64 {
        (HEADER_LEN + 4 * i * self.per_image()) as u64
    }

    pub fn grids(&self) -> Vec<TokenGrid> {
        let n = self.per_image();
        self.tokens
            .chunks_exact(n.max(1))
            .map(|c| TokenGrid { height: self.height as usize, width: self.width as usize, tokens: c.to_vec() })
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.tokens.len());
        out.extend_from_slice(&MAGIC);
        for v in [VERSION, self.codes, self.height, self.width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.count() as u64).to_le_bytes());
        for t in &self.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |r: String| Error::format("token dump", r);
        if bytes.len() < HEADER_LEN || bytes[..8] != MAGIC {
            return Err(bad("missing header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        if word(0) != VERSION {
            return Err(bad(format!("unsupported version {}", word(0))));
        }
        let (codes, height, width) = (word(1), word(2), word(3));
        let count = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
        let n = count
            .checked_mul(height as usize * width as usize)
            .filter(|n| n.checked_mul(4).is_some_and(|b| b == bytes.len() - HEADER_LEN))
            .ok_or_else(|| bad(format!("payload of {} bytes does not hold {count} grids", bytes.len() - HEADER_LEN)))?;
        let tokens: Vec<u32> = bytes[HEADER_LEN..].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        debug_assert_eq!(tokens.len(), n);
        if let Some(t) = tokens.iter().find(|&&t| t >= codes) {
            return Err(bad(format!("index {t} out of range for {codes} codes")));
        }
        Ok(TokenDump { codes, height, width, tokens })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::fsx::write_atomic(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path).map_err(Error::io(path))?)
    }
}

/// Class labels stored beside a dump as `<dump>.labels.json`.
pub fn labels_path(dump: &Path) -> std::path::PathBuf {
    let mut name = dump.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".labels.json");
    dump.with_file_name(name)
}

pub fn write_labels(dump: &Path, labels: &[usize]) -> Result<()> {
    crate::fsx::write_atomic(&labels_path(dump), &serde_json::to_vec(labels)?)
}

pub fn read_labels(dump: &Path) -> Result<Vec<usize>> {
    let p = labels_path(dump);
    Ok(serde_json::from_slice(&std::fs::read(&p).map_err(Error::io(&p))?)?)
}
