//! Vector quantization with cosine-distance lookup in a low-dimensional
//! projected space, and finite scalar quantization as an alternative.
//!
//! Codebook rows live on the unit sphere: they are normalized at
//! initialization and again after every optimizer step
//! ([`Codebook::renormalize`]), so the quantized vector handed to the decoder
//! is always an exact table row.

mod fsq;

pub use fsq::{fsq_bound, fsq_composite_index, fsq_grid_point, fsq_round, fsq_split_index, FsqRounded};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::optim::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantMode {
    Vq,
    Fsq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerConfig {
    pub mode: QuantMode,
    /// Codebook size (VQ); for FSQ the product of `levels`.
    pub codes: usize,
    /// Code dimension after projection.
    pub dim: usize,
    pub beta: f64,
    /// Encoder latent width before projection.
    pub input_width: usize,
    pub levels: Vec<usize>,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        QuantizerConfig { mode: QuantMode::Vq, codes: 64, dim: 8, beta: 0.25, input_width: 64, levels: vec![4, 4, 4] }
    }
}

impl QuantizerConfig {
    /// Number of distinct token ids this quantizer can emit.
    pub fn vocab(&self) -> usize {
        match self.mode {
            QuantMode::Vq => self.codes,
            QuantMode::Fsq => self.levels.iter().product(),
        }
    }

    /// Width of the quantized vectors.
    pub fn code_dim(&self) -> usize {
        match self.mode {
            QuantMode::Vq => self.dim,
            QuantMode::Fsq => self.levels.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.mode {
            QuantMode::Vq => self.codes >= 2 && self.dim >= 1,
            QuantMode::Fsq => {
                !self.levels.is_empty() && self.levels.iter().all(|l| *l >= 2) && self.levels.iter().product::<usize>() == self.codes
            }
        };
        if !ok || self.input_width == 0 || !(self.beta >= 0.0) {
            return Err(Error::Config(format!("invalid quantizer {:?}", self)));
        }
        Ok(())
    }

    /// FSQ levels whose product is closest to `codes` (ties to the smaller
    /// product), using `dims` dimensions with levels between 2 and 16.
    pub fn fsq_levels_for(codes: usize, dims: usize) -> Vec<usize> {
        let mut best: Vec<usize> = vec![2; dims];
        let mut best_gap = usize::MAX;
        let mut cur = vec![2usize; dims];
        loop {
            let p: usize = cur.iter().product();
            let gap = p.abs_diff(codes);
            if gap < best_gap || (gap == best_gap && p < best.iter().product()) {
                best_gap = gap;
                best = cur.clone();
            }
            // Non-increasing level sequences only.
            let mut i = dims;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if cur[i] < 16 && (i == 0 || cur[i] < cur[i - 1]) {
                    cur[i] += 1;
                    for c in cur.iter_mut().skip(i + 1) {
                        *c = 2;
                    }
                    break;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Codebook {
    pub codes: usize,
    pub dim: usize,
    pub table: ParamId,
    /// Token counts since the last [`Codebook::reset_usage`].
    pub usage: Vec<u64>,
    /// Zero-norm queries seen (quantized to index 0).
    pub degenerate: u64,
}

impl Codebook {
    /// Rows drawn from a standard normal, then L2-normalized.
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, codes: usize, dim: usize) -> Self {
        let mut t: Tensor<T> = rng.normal_tensor(&[codes, dim], 1.0);
        for row in t.data_mut().chunks_mut(dim) {
            let n = row.iter().map(|v| *v * *v).sum::<T>().sqrt();
            row.iter_mut().for_each(|v| *v = *v / n);
        }
        let table = store.add(format!("{name}.table"), t);
        store.get_mut(table).decay = false;
        Codebook { codes, dim, table, usage: vec![0; codes], degenerate: 0 }
    }

    pub fn renormalize<T: Real>(&self, store: &mut ParamStore<T>) {
        let dim = self.dim;
        for row in store.get_mut(self.table).value.data_mut().chunks_mut(dim) {
            let n = row.iter().map(|v| *v * *v).sum::<T>().sqrt();
            if n > T::zero() {
                row.iter_mut().for_each(|v| *v = *v / n);
            }
        }
    }

    pub fn record(&mut self, indices: &[u32]) {
        for &i in indices {
            self.usage[i as usize] += 1;
        }
    }

    pub fn reset_usage(&mut self) {
        self.usage.iter_mut().for_each(|c| *c = 0);
        self.degenerate = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lookup {
    pub index: usize,
    /// The query was the zero vector.
    pub degenerate: bool,
}

/// Row of `table` (`[k, d]`, row-major) with the highest cosine similarity to
/// `z`. Ties go to the lowest index; a zero query maps to index 0.
pub fn vq_lookup<T: Real>(z: &[T], table: &[T], dim: usize) -> Lookup {
    let zn = z.iter().map(|v| *v * *v).sum::<T>().sqrt();
    if zn == T::zero() {
        return Lookup { index: 0, degenerate: true };
    }
    let mut best = (0usize, T::neg_infinity());
    for (i, row) in table.chunks_exact(dim).enumerate() {
        let rn = row.iter().map(|v| *v * *v).sum::<T>().sqrt();
        let cos = z.iter().zip(row).map(|(a, b)| *a * *b).sum::<T>() / (zn * rn);
        if cos > best.1 {
            best = (i, cos);
        }
    }
    Lookup { index: best.0, degenerate: false }
}

/// Codebook and commitment losses for matching `z` and `e` (`[.., d]`):
/// `mean‖sg(z) − e‖²` and `β·mean‖z − sg(e)‖²`, means over vectors.
pub fn vq_losses<T: Real>(g: &mut Graph<T>, z: Var, e: Var, beta: f64) -> Result<(Var, Var)> {
    if g.shape(z) != g.shape(e) {
        return Err(Error::shape("vq_losses", g.shape(z), g.shape(e)));
    }
    let zs = g.stop_grad(z);
    let es = g.stop_grad(e);
    let d1 = g.sub(zs, e)?;
    let d1 = g.square(d1);
    let d1 = g.sum_last(d1);
    let codebook = g.mean(d1);
    let d2 = g.sub(z, es)?;
    let d2 = g.square(d2);
    let d2 = g.sum_last(d2);
    let d2 = g.mean(d2);
    let commitment = g.scale(d2, T::c(beta));
    Ok((codebook, commitment))
}

/// Fraction of codes with a non-zero count.
pub fn utilization(histogram: &[u64]) -> Result<f64> {
    if histogram.is_empty() || histogram.iter().all(|c| *c == 0) {
        return Err(Error::Empty("usage histogram"));
    }
    Ok(histogram.iter().filter(|c| **c > 0).count() as f64 / histogram.len() as f64)
}

/// Graph-side output of [`Quantizer::quantize`].
#[derive(Debug, Clone)]
pub struct QuantizationResult {
    pub indices: Vec<u32>,
    /// Pre-quantization latents as compared against the codebook
    /// (unit-normalized for VQ, tanh-bounded for FSQ), `[m, code_dim]`.
    pub latents: Var,
    /// Quantized vectors, `[m, code_dim]`.
    pub quantized: Var,
    /// Straight-through output handed to the decoder.
    pub decoder_input: Var,
    pub codebook_loss: Option<Var>,
    pub commitment_loss: Option<Var>,
    pub degenerate: usize,
}

#[derive(Debug, Clone)]
pub struct Quantizer {
    pub config: QuantizerConfig,
    /// Learned linear map from encoder width to code dimension.
    pub projection: Linear,
    pub codebook: Option<Codebook>,
}

impl Quantizer {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, config: QuantizerConfig) -> Result<Self> {
        config.validate()?;
        let w = config.input_width;
        let projection = Linear::new(store, rng, "quant.proj", w, config.code_dim(), false, libm::sqrt(1.0 / w as f64));
        let codebook = (config.mode == QuantMode::Vq).then(|| Codebook::new(store, rng, "quant.codebook", config.codes, config.dim));
        Ok(Quantizer { config, projection, codebook })
    }

    /// `z [.., input_width] -> [.., code_dim]`.
    pub fn project<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, z: Var) -> Result<Var> {
        let w = *g.shape(z).last().unwrap_or(&0);
        if w != self.config.input_width {
            return Err(Error::shape("project_latent", g.shape(z), &[self.config.input_width]));
        }
        self.projection.forward(g, s, z)
    }

    /// Quantizes projected latents `z [m, code_dim]`.
    pub fn quantize<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, z: Var) -> Result<QuantizationResult> {
        let shape = g.shape(z).to_vec();
        let cd = self.config.code_dim();
        if shape.len() != 2 || shape[1] != cd {
            return Err(Error::shape("quantize", &shape, &[0, cd]));
        }
        match &self.codebook {
            Some(cb) => {
                let zn = g.l2_normalize(z);
                let table = g.param(s, cb.table);
                let mut degenerate = 0;
                let indices: Vec<u32> = g
                    .data(zn)
                    .chunks(cd)
                    .map(|row| {
                        let l = vq_lookup(row, g.data(table), cd);
                        degenerate += l.degenerate as usize;
                        l.index as u32
                    })
                    .collect();
                let ids: Vec<usize> = indices.iter().map(|i| *i as usize).collect();
                let e = g.embedding(table, &ids, &[shape[0]])?;
                let (cbl, cml) = vq_losses(g, zn, e, self.config.beta)?;
                let st = g.straight_through(zn, e)?;
                Ok(QuantizationResult {
                    indices,
                    latents: zn,
                    quantized: e,
                    decoder_input: st,
                    codebook_loss: Some(cbl),
                    commitment_loss: Some(cml),
                    degenerate,
                })
            }
            None => {
                let b = fsq_bound(g, z);
                let r = fsq_round(g.data(b), &self.config.levels);
                let grid = g.constant(Tensor::new(&shape, r.values)?);
                let st = g.straight_through(b, grid)?;
                Ok(QuantizationResult {
                    indices: r.indices,
                    latents: b,
                    quantized: grid,
                    decoder_input: st,
                    codebook_loss: None,
                    commitment_loss: None,
                    degenerate: 0,
                })
            }
        }
    }

    /// Quantized vectors for given token ids (decoder input at sampling time).
    pub fn embed_tokens<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, ids: &[u32]) -> Result<Var> {
        let vocab = self.config.vocab();
        if let Some(bad) = ids.iter().find(|i| **i as usize >= vocab) {
            return Err(Error::invalid("embed_tokens", format!("token {} >= {}", bad, vocab)));
        }
        match &self.codebook {
            Some(cb) => {
                let table = g.param(s, cb.table);
                let ids: Vec<usize> = ids.iter().map(|i| *i as usize).collect();
                g.embedding(table, &ids, &[ids.len()])
            }
            None => {
                let levels = &self.config.levels;
                let mut data = Vec::with_capacity(ids.len() * levels.len());
                for &id in ids {
                    data.extend(fsq_grid_point::<T>(id as usize, levels));
                }
                Ok(g.constant(Tensor::new(&[ids.len(), levels.len()], data)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_dominant_axis_and_ties() {
        let table = [1.0f64, 0.0, 0.0, 1.0];
        assert_eq!(vq_lookup(&[0.9, 0.1], &table, 2).index, 0);
        assert_eq!(vq_lookup(&[0.1, 0.9], &table, 2).index, 1);
        assert_eq!(vq_lookup(&[1.0, 1.0], &table, 2).index, 0);
        let z = vq_lookup(&[0.0, 0.0], &table, 2);
        assert_eq!(z, Lookup { index: 0, degenerate: true });
    }

    #[test]
    fn losses_by_formula() {
        let mut g = Graph::<f64>::new();
        let z = g.input(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap());
        let e = g.input(Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap());
        let (cb, cm) = vq_losses(&mut g, z, e, 0.25).unwrap();
        assert_eq!(g.value(cb).item(), 1.0);
        assert_eq!(g.value(cm).item(), 0.25);

        let mut g = Graph::<f64>::new();
        let z = g.input(Tensor::new(&[2, 2], vec![0.3, 0.4, -1.0, 2.0]).unwrap());
        let e = g.input(Tensor::new(&[2, 2], vec![0.3, 0.4, -1.0, 2.0]).unwrap());
        let (cb, cm) = vq_losses(&mut g, z, e, 0.25).unwrap();
        assert_eq!((g.value(cb).item(), g.value(cm).item()), (0.0, 0.0));
    }

    #[test]
    fn loss_gradients_respect_stop_gradient_placement() {
        let mut g = Graph::<f64>::new();
        let z = g.input(Tensor::new(&[1, 2], vec![1.0, 0.5]).unwrap());
        let e = g.input(Tensor::new(&[1, 2], vec![0.0, 1.0]).unwrap());
        let (cb, cm) = vq_losses(&mut g, z, e, 0.25).unwrap();
        let gc = g.backward(cb).unwrap();
        assert!(gc.get(z).is_none());
        assert!(gc.get(e).unwrap().iter().any(|v| *v != 0.0));
        let gm = g.backward(cm).unwrap();
        assert!(gm.get(e).is_none());
        assert!(gm.get(z).unwrap().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn utilization_counts() {
        assert_eq!(utilization(&[3; 16]).unwrap(), 1.0);
        let mut h = [0u64; 16];
        h[5] = 9;
        assert_eq!(utilization(&h).unwrap(), 0.0625);
        assert!(utilization(&[0; 4]).is_err());
        assert!(utilization(&[]).is_err());
    }

    #[test]
    fn projection_shapes() {
        let mut s = ParamStore::<f32>::new();
        let mut rng = Rng::new(0);
        let q = Quantizer::new(&mut s, &mut rng, QuantizerConfig { input_width: 256, ..Default::default() }).unwrap();
        let mut g = Graph::new();
        let z = g.input(Tensor::from_fn(&[3, 4, 256], |i| (i % 7) as f32));
        let p = q.project(&mut g, &s, z).unwrap();
        assert_eq!(g.shape(p), &[3, 4, 8]);
        let zero = g.input(Tensor::zeros(&[2, 256]));
        let p0 = q.project(&mut g, &s, zero).unwrap();
        assert!(g.data(p0).iter().all(|v| *v == 0.0));
        let bad = g.input(Tensor::zeros(&[2, 255]));
        assert!(q.project(&mut g, &s, bad).is_err());
    }

    #[test]
    fn identity_projection_passes_through() {
        let mut s = ParamStore::<f64>::new();
        let lin = Linear::identity(&mut s, "p", 8);
        let mut g = Graph::new();
        let z = g.input(Tensor::from_fn(&[5, 8], |i| i as f64 * 0.1 - 1.0));
        let p = lin.forward(&mut g, &s, z).unwrap();
        assert_eq!(g.data(p), g.data(z));
    }

    #[test]
    fn codebook_rows_are_unit_norm() {
        let mut s = ParamStore::<f64>::new();
        let cb = Codebook::new(&mut s, &mut Rng::new(3), "cb", 32, 8);
        for row in s.get(cb.table).value.data().chunks(8) {
            let n: f64 = row.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fsq_levels_match_codebook_size() {
        assert_eq!(QuantizerConfig::fsq_levels_for(64, 3), vec![4, 4, 4]);
        assert_eq!(QuantizerConfig::fsq_levels_for(1000, 3).iter().product::<usize>(), 1000);
        let l = QuantizerConfig::fsq_levels_for(256, 4);
        assert_eq!(l.iter().product::<usize>(), 256);
    }
}
