//! Parameter checkpoints.
//!
//! Layout: magic, `u32` version, `u32` length plus a JSON header, then one
//! record per parameter (name, shape, raw little-endian values) for every
//! store, then the optimizer moments in the same order, then a SHA-256 of
//! everything before it.

use std::path::Path;

use crtlab_core::generator::Generator;
use crtlab_core::optim::ParamStore;
use crtlab_core::tokenizer::{Tokenizer, TokenizerConfig};
use crtlab_core::{DType, Real, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"CRTLCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub step: u64,
    pub decay: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub name: String,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub dtype: DType,
    pub seed: u64,
    pub step: u64,
    pub config: serde_json::Value,
    pub stores: Vec<StoreManifest>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub header: Header,
    /// Per store, per parameter: (value, m, v).
    pub data: Vec<Vec<(Tensor<T>, Vec<T>, Vec<T>)>>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode<T: Real>(kind: &str, seed: u64, step: u64, config: &impl Serialize, stores: &[(&str, &ParamStore<T>)]) -> Result<Vec<u8>> {
    let header = Header {
        kind: kind.to_string(),
        dtype: T::DTYPE,
        seed,
        step,
        config: serde_json::to_value(config)?,
        stores: stores
            .iter()
            .map(|(name, s)| StoreManifest {
                name: name.to_string(),
                params: s
                    .iter()
                    .map(|p| ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), step: p.step, decay: p.decay })
                    .collect(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, VERSION);
    put_u32(&mut out, json.len() as u32);
    out.extend_from_slice(&json);
    for (_, s) in stores {
        for p in s.iter() {
            put_u32(&mut out, p.name.len() as u32);
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, p.value.shape().len() as u32);
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&T::to_le_bytes_vec(p.value.data()));
        }
    }
    for (_, s) in stores {
        for p in s.iter() {
            out.extend_from_slice(&T::to_le_bytes_vec(&p.m));
            out.extend_from_slice(&T::to_le_bytes_vec(&p.v));
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn reals<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = n.checked_mul(T::DTYPE.size()).ok_or_else(|| Error::format("checkpoint", "size overflow"))?;
        Ok(T::from_le_bytes_slice(self.take(bytes)?))
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let bad = |r: &str| Error::format("checkpoint", r);
    if bytes.len() < MAGIC.len() + 8 + 32 || bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)?;
    if header.dtype != T::DTYPE {
        return Err(Error::format("checkpoint", format!("stored as {:?}, requested {:?}", header.dtype, T::DTYPE)));
    }
    let mut values = Vec::new();
    for store in &header.stores {
        let mut vs = Vec::new();
        for p in &store.params {
            let len = r.u32()? as usize;
            if r.take(len)? != p.name.as_bytes() {
                return Err(bad("record name disagrees with manifest"));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape != p.shape {
                return Err(bad("record shape disagrees with manifest"));
            }
            let n = shape.iter().product();
            vs.push(Tensor::new(&shape, r.reals::<T>(n)?)?);
        }
        values.push(vs);
    }
    let mut data = Vec::new();
    for vs in values {
        let mut d = Vec::new();
        for t in vs {
            let n = t.numel();
            let m = r.reals::<T>(n)?;
            let v = r.reals::<T>(n)?;
            d.push((t, m, v));
        }
        data.push(d);
    }
    if r.pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint { header, data })
}

impl<T: Real> Checkpoint<T> {
    pub fn config<C: serde::de::DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_value(self.header.config.clone()).map_err(Error::from)
    }

    /// Copies values and optimizer state of store `name` into `store`; names
    /// and shapes must match exactly.
    pub fn restore(&self, name: &str, store: &mut ParamStore<T>) -> Result<()> {
        let i = self
            .header
            .stores
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::format("checkpoint", format!("no store `{name}`")))?;
        let manifest = &self.header.stores[i];
        if manifest.params.len() != store.len() {
            return Err(Error::format(
                "checkpoint",
                format!("store `{name}` has {} parameters, expected {}", manifest.params.len(), store.len()),
            ));
        }
        for ((entry, (value, m, v)), p) in manifest.params.iter().zip(&self.data[i]).zip(store.iter_mut()) {
            if entry.name != p.name || value.shape() != p.value.shape() {
                return Err(Error::format("checkpoint", format!("parameter `{}` does not match `{}`", entry.name, p.name)));
            }
            p.value = value.clone();
            p.m.clone_from(m);
            p.v.clone_from(v);
            p.step = entry.step;
        }
        Ok(())
    }
}

pub fn read<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    decode(&std::fs::read(path).map_err(Error::io(path))?)
}

pub const TOKENIZER: &str = "tokenizer";
pub const GENERATOR: &str = "generator";

pub fn save_tokenizer<T: Real>(path: &Path, tok: &Tokenizer<T>, seed: u64, step: u64) -> Result<()> {
    let bytes =
        encode(TOKENIZER, seed, step, &tok.config, &[("main", &tok.store), ("crt", &tok.crt_store), ("critic", &tok.critic_store)])?;
    crate::fsx::write_atomic(path, &bytes)
}

pub fn load_tokenizer<T: Real>(path: &Path) -> Result<Tokenizer<T>> {
    let ck = read::<T>(path)?;
    if ck.header.kind != TOKENIZER {
        return Err(Error::format("checkpoint", format!("expected a tokenizer, found `{}`", ck.header.kind)));
    }
    let config: TokenizerConfig = ck.config()?;
    let mut tok = Tokenizer::new(config, ck.header.seed)?;
    ck.restore("main", &mut tok.store)?;
    ck.restore("crt", &mut tok.crt_store)?;
    ck.restore("critic", &mut tok.critic_store)?;
    Ok(tok)
}

pub fn save_generator<T: Real>(path: &Path, gen: &Generator<T>, seed: u64, step: u64) -> Result<()> {
    crate::fsx::write_atomic(path, &encode(GENERATOR, seed, step, &gen.config, &[("main", &gen.store)])?)
}

pub fn load_generator<T: Real>(path: &Path) -> Result<Generator<T>> {
    let ck = read::<T>(path)?;
    if ck.header.kind != GENERATOR {
        return Err(Error::format("checkpoint", format!("expected a generator, found `{}`", ck.header.kind)));
    }
    let mut gen = Generator::new(ck.config()?, ck.header.seed)?;
    ck.restore("main", &mut gen.store)?;
    Ok(gen)
}
