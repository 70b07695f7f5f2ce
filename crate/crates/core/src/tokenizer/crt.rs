use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{CausalTransformer, Linear, TransformerConfig};
use crate::optim::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Real;

/// Causal transformer that predicts each latent from the ones before it.
/// A learned begin-of-image vector fills the first input slot so all `N`
/// positions are predicted.
#[derive(Debug, Clone)]
pub struct CrtRegularizer {
    pub input: Linear,
    pub boi: ParamId,
    pub body: CausalTransformer,
    pub output: Linear,
    pub width: usize,
}

impl CrtRegularizer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        width: usize,
        layers: usize,
        heads: usize,
        seq_len: usize,
    ) -> Result<Self> {
        let config = TransformerConfig::scaled(layers, heads, seq_len);
        let d = config.dim;
        Ok(CrtRegularizer {
            input: Linear::new(store, rng, "crt.input", width, d, true, libm::sqrt(1.0 / width as f64)),
            boi: store.add("crt.boi", rng.normal_tensor(&[1, d], 0.02)),
            body: CausalTransformer::new(store, rng, "crt.body", config)?,
            output: Linear::new(store, rng, "crt.output", d, width, true, 0.02),
            width,
        })
    }

    pub fn layers(&self) -> usize {
        self.body.config.layers
    }

    /// Predictions `[b, n, width]` for latents `[b, n, width]`; row `i`
    /// sees only latents `< i`.
    pub fn predict<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, latents: Var) -> Result<Var> {
        let shape = g.shape(latents).to_vec();
        if shape.len() != 3 || shape[2] != self.width {
            return Err(Error::shape("crt_loss", &shape, &[0, 0, self.width]));
        }
        let (b, n) = (shape[0], shape[1]);
        if n == 0 {
            return Err(Error::invalid("crt_loss", "empty latent sequence"));
        }
        let boi = g.param(s, self.boi);
        let ids = alloc::vec![0usize; b];
        let boi = g.embedding(boi, &ids, &[b, 1])?;
        let seq = if n > 1 {
            let prev = g.slice(latents, 1, 0, n - 1)?;
            let prev = self.input.forward(g, s, prev)?;
            g.concat(&[boi, prev], 1)?
        } else {
            boi
        };
        let h = self.body.forward(g, s, seq)?;
        self.output.forward(g, s, h)
    }

    /// Mean over positions of `‖prediction − latent‖²`.
    pub fn loss<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, latents: Var) -> Result<Var> {
        let pred = self.predict(g, s, latents)?;
        let d = g.sub(pred, latents)?;
        let d = g.square(d);
        let d = g.sum_last(d);
        Ok(g.mean(d))
    }
}
