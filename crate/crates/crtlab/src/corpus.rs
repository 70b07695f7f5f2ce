//! On-disk corpora: `manifest.json` plus `train/` and `val/` directories of
//! P6 files named by zero-padded instance seed.

use std::path::{Path, PathBuf};

use crtlab_core::config::CorpusConfig;
use crtlab_core::synth::{render, scene, Split};
use crtlab_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{fsx, pool, ppm};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub seeds: Vec<u64>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub classes: usize,
    pub side: usize,
    pub train: SplitEntry,
    pub val: SplitEntry,
    /// SHA-256 over the per-file hashes in split then index order.
    pub checksum: String,
}

impl Manifest {
    pub fn split(&self, split: Split) -> &SplitEntry {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }
}

pub fn split_dir(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
    }
}

pub fn file_name(seed: u64) -> String {
    format!("{seed:020}.ppm")
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub train: Vec<Tensor<f32>>,
    pub val: Vec<Tensor<f32>>,
}

impl Corpus {
    pub fn images(&self, split: Split) -> &[Tensor<f32>] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn labels(&self, split: Split) -> &[usize] {
        &self.manifest.split(split).labels
    }
}

fn checksum(hashes: &[String]) -> String {
    fsx::sha256_hex(hashes.join("\n").as_bytes())
}

struct Rendered {
    split: Split,
    seed: u64,
    label: usize,
    bytes: Vec<u8>,
}

fn render_all(cfg: &CorpusConfig, jobs: usize) -> Result<Vec<Rendered>> {
    let items: Vec<(Split, usize)> =
        [(Split::Train, cfg.train), (Split::Val, cfg.val)].into_iter().flat_map(|(s, n)| (0..n).map(move |i| (s, i))).collect();
    pool::try_map(jobs, items.len(), |k| {
        let (split, i) = items[k];
        let spec = scene(cfg.seed, split, i, cfg.classes);
        let img = render(&spec, cfg.side)?;
        Ok(Rendered { split, seed: spec.seed, label: spec.class, bytes: ppm::encode(&img)? })
    })
}

/// Renders the corpus described by `cfg` into `root`. An existing corpus
/// with the same checksum is left untouched; one with a different checksum
/// is refused unless `force` is set.
pub fn build(root: &Path, cfg: &CorpusConfig, force: bool, jobs: usize) -> Result<Manifest> {
    cfg.validate()?;
    let items = render_all(cfg, jobs)?;
    let hashes: Vec<String> = items.iter().map(|r| fsx::sha256_hex(&r.bytes)).collect();
    let entry = |split: Split| {
        let it = items.iter().filter(|r| r.split == split);
        SplitEntry { seeds: it.clone().map(|r| r.seed).collect(), labels: it.map(|r| r.label).collect() }
    };
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        classes: cfg.classes,
        side: cfg.side,
        train: entry(Split::Train),
        val: entry(Split::Val),
        checksum: checksum(&hashes),
    };
    let mpath = root.join(MANIFEST);
    if mpath.exists() {
        match read_manifest(root) {
            Ok(old) if old == manifest && verify(root, &old, jobs).is_ok() => return Ok(old),
            Ok(old) if !force => {
                return Err(Error::Refused(format!(
                    "{} holds a different corpus (checksum {}); pass --force to replace it",
                    root.display(),
                    old.checksum
                )))
            }
            Err(e) if !force => {
                return Err(Error::Refused(format!("{} has an unreadable manifest ({e}); pass --force to replace it", root.display())))
            }
            _ => {}
        }
        for split in [Split::Train, Split::Val] {
            let dir = root.join(split_dir(split));
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(Error::io(&dir))?;
            }
        }
    }
    for split in [Split::Train, Split::Val] {
        fsx::create_dir(&root.join(split_dir(split)))?;
    }
    for r in &items {
        let p = root.join(split_dir(r.split)).join(file_name(r.seed));
        std::fs::write(&p, &r.bytes).map_err(Error::io(&p))?;
    }
    fsx::write_atomic(&mpath, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let p = root.join(MANIFEST);
    let m: Manifest = serde_json::from_slice(&std::fs::read(&p).map_err(Error::io(&p))?)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::format("corpus manifest", format!("unsupported version {}", m.version)));
    }
    for split in [Split::Train, Split::Val] {
        let e = m.split(split);
        if e.seeds.len() != e.labels.len() || e.labels.iter().any(|&l| l >= m.classes) {
            return Err(Error::format("corpus manifest", format!("inconsistent {} split", split_dir(split))));
        }
    }
    Ok(m)
}

fn file_bytes(root: &Path, m: &Manifest, jobs: usize) -> Result<Vec<Vec<u8>>> {
    let paths: Vec<PathBuf> = [Split::Train, Split::Val]
        .into_iter()
        .flat_map(|s| m.split(s).seeds.iter().map(move |&seed| root.join(split_dir(s)).join(file_name(seed))))
        .collect();
    pool::try_map(jobs, paths.len(), |i| std::fs::read(&paths[i]).map_err(Error::io(&paths[i])))
}

/// Recomputes the checksum from the files on disk.
pub fn verify(root: &Path, m: &Manifest, jobs: usize) -> Result<()> {
    let hashes: Vec<String> = file_bytes(root, m, jobs)?.iter().map(|b| fsx::sha256_hex(b)).collect();
    if checksum(&hashes) != m.checksum {
        return Err(Error::format("corpus", format!("{}: files do not match the manifest checksum", root.display())));
    }
    Ok(())
}

/// Loads and verifies a corpus.
pub fn load(root: &Path, jobs: usize) -> Result<Corpus> {
    let manifest = read_manifest(root)?;
    let bytes = file_bytes(root, &manifest, jobs)?;
    let hashes: Vec<String> = bytes.iter().map(|b| fsx::sha256_hex(b)).collect();
    if checksum(&hashes) != manifest.checksum {
        return Err(Error::format("corpus", format!("{}: files do not match the manifest checksum", root.display())));
    }
    let mut images = pool::try_map(jobs, bytes.len(), |i| ppm::decode(&bytes[i]))?;
    if let Some(img) = images.iter().find(|i| i.shape() != [3, manifest.side, manifest.side]) {
        return Err(Error::format("corpus", format!("image of shape {:?} in a side-{} corpus", img.shape(), manifest.side)));
    }
    let val = images.split_off(manifest.train.seeds.len());
    Ok(Corpus { root: root.to_path_buf(), manifest, train: images, val })
}
