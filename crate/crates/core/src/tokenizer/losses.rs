use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::metrics::FeatureExtractor;
use crate::tensor::Real;

/// Sum over extractor stages of the mean squared activation difference.
pub fn perceptual_proxy<T: Real>(g: &mut Graph<T>, extractor: &FeatureExtractor, x: Var, y: Var) -> Result<Var> {
    if g.shape(x) != g.shape(y) {
        return Err(Error::shape("perceptual_proxy", g.shape(x), g.shape(y)));
    }
    let fx = extractor.stages(g, x)?;
    let fy = extractor.stages(g, y)?;
    let mut total: Option<Var> = None;
    for (a, b) in fx.into_iter().zip(fy) {
        let d = g.sub(a, b)?;
        let d = g.square(d);
        let m = g.mean(d);
        total = Some(match total {
            Some(t) => g.add(t, m)?,
            None => m,
        });
    }
    Ok(total.expect("extractor has stages"))
}

/// Wasserstein critic objectives from critic outputs on real and fake
/// batches: `(mean c(fake) − mean c(real), −mean c(fake))`.
pub fn wasserstein_losses<T: Real>(g: &mut Graph<T>, critic_real: Var, critic_fake: Var) -> Result<(Var, Var)> {
    let r = g.mean(critic_real);
    let f = g.mean(critic_fake);
    let disc = g.sub(f, r)?;
    let gen = g.scale(f, -T::one());
    Ok((disc, gen))
}
