use alloc::vec::Vec;

use crate::autodiff::{Graph, Unary, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

pub const EXTRACTOR_SEED: u64 = 0x00C0_FFEE_5EED;
pub const FEATURE_DIM: usize = 64;

const STAGES: [(usize, usize, usize); 3] = [(3, 16, 1), (16, 32, 2), (32, FEATURE_DIM, 2)];

/// Frozen random convolutional network used for feature statistics and the
/// perceptual loss. Weights are a pure function of [`EXTRACTOR_SEED`].
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    layers: Vec<(Tensor<f64>, Tensor<f64>, usize)>,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(EXTRACTOR_SEED)
    }
}

impl FeatureExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let layers = STAGES
            .iter()
            .map(|&(cin, cout, stride)| {
                let w = rng.normal_tensor(&[cout, cin, 3, 3], libm::sqrt(2.0 / (cin * 9) as f64));
                let b = rng.normal_tensor(&[cout], 0.1);
                (w, b, stride)
            })
            .collect();
        FeatureExtractor { layers }
    }

    pub fn weights(&self) -> impl Iterator<Item = &Tensor<f64>> {
        self.layers.iter().flat_map(|(w, b, _)| [w, b])
    }

    /// Activations of every stage for `x [b, 3, h, w]`.
    pub fn stages<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        let mut h = x;
        let mut out = Vec::with_capacity(self.layers.len());
        for (w, b, stride) in &self.layers {
            let w = g.constant(w.cast());
            let b = g.constant(b.cast());
            h = g.conv2d(h, w, Some(b), *stride, 1)?;
            h = g.unary(h, Unary::LeakyRelu(0.2));
            out.push(h);
        }
        Ok(out)
    }

    /// Spatially averaged last-stage activations, one vector per image.
    pub fn features(&self, images: &[Tensor<f32>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let shape = chunk[0].shape().to_vec();
            if shape.len() != 3 || shape[0] != 3 || chunk.iter().any(|t| t.shape() != shape.as_slice()) {
                return Err(Error::invalid("features", "images must share a [3, h, w] shape"));
            }
            let mut data = Vec::with_capacity(chunk.len() * chunk[0].numel());
            chunk.iter().for_each(|t| data.extend_from_slice(t.data()));
            let mut g = Graph::<f32>::new();
            let x = g.constant(Tensor::new(&[chunk.len(), 3, shape[1], shape[2]], data)?);
            let last = *self.stages(&mut g, x)?.last().expect("non-empty");
            let hw: usize = g.shape(last)[2..].iter().product();
            for img in g.data(last).chunks(FEATURE_DIM * hw) {
                out.push(img.chunks(hw).map(|c| c.iter().map(|v| *v as f64).sum::<f64>() / hw as f64).collect());
            }
        }
        Ok(out)
    }
}
