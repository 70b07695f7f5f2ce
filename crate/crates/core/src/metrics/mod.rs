//! Image-quality and token-statistics metrics.

mod entropy;
mod extractor;
mod frechet;
mod ssim;

pub use entropy::{conditional_entropy_bound, entropy_report, EntropyReport};
pub use extractor::{FeatureExtractor, EXTRACTOR_SEED, FEATURE_DIM};
pub use frechet::{collect_stats, frechet_distance, GaussianStats};
pub use ssim::{ms_ssim, to_gray, MS_SSIM_WEIGHTS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reported in place of +∞ when the inputs match exactly.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    pub exact: bool,
}

pub fn psnr(x: &[f32], y: &[f32], max: f64) -> Result<Psnr> {
    if x.len() != y.len() {
        return Err(Error::shape("psnr", &[x.len()], &[y.len()]));
    }
    if x.is_empty() {
        return Err(Error::Empty("psnr input"));
    }
    let mse = mse(x, y);
    if mse == 0.0 {
        return Ok(Psnr { db: PSNR_CAP_DB, exact: true });
    }
    Ok(Psnr { db: (10.0 * libm::log10(max * max / mse)).min(PSNR_CAP_DB), exact: false })
}

pub fn mse(x: &[f32], y: &[f32]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum::<f64>()
        / x.len() as f64
}
