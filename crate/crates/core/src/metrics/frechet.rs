use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::FeatureExtractor;
use crate::error::{Error, Result};

/// Tolerance below which negative eigenvalues count as rounding noise.
const NEG_TOL: f64 = 1e-6;
const SHRINKAGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`.
    pub cov: Vec<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mean and unbiased covariance, accumulated with Welford updates in
    /// input order.
    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(Error::invalid("collect_stats", "need at least two samples"));
        }
        let d = features[0].len();
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d * d];
        let mut delta = vec![0.0; d];
        for (k, f) in features.iter().enumerate() {
            if f.len() != d {
                return Err(Error::shape("collect_stats", &[d], &[f.len()]));
            }
            let c = (k + 1) as f64;
            for i in 0..d {
                delta[i] = f[i] - mean[i];
                mean[i] += delta[i] / c;
            }
            for i in 0..d {
                let post = f[i] - mean[i];
                for j in 0..d {
                    m2[i * d + j] += post * delta[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                let s = 0.5 * (m2[i * d + j] + m2[j * d + i]);
                m2[i * d + j] = s;
                m2[j * d + i] = s;
            }
        }
        let cov = m2.into_iter().map(|v| v / (n - 1) as f64).collect();
        Ok(GaussianStats { mean, cov, n })
    }
}

pub fn collect_stats(images: &[crate::Tensor<f32>], extractor: &FeatureExtractor) -> Result<GaussianStats> {
    let feats = extractor.features(images)?;
    GaussianStats::from_features(&feats)
}

fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -NEG_TOL {
            return Err(Error::Indefinite(*v));
        }
        *v = libm::sqrt(v.max(0.0));
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `Tr((Σa Σb)^½)` as `Σ √λ(√Σa Σb √Σa)`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let ra = sym_sqrt(a)?;
    let p = &ra * b * &ra;
    let p = (&p + p.transpose()) * 0.5;
    let eig = SymmetricEigen::new(p);
    let mut tr = 0.0;
    for v in eig.eigenvalues.iter() {
        if *v < -NEG_TOL {
            return Err(Error::Indefinite(*v));
        }
        tr += libm::sqrt(v.max(0.0));
    }
    Ok(tr)
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(Σa Σb)^½)`.
///
/// If the covariance product is numerically indefinite the computation is
/// repeated once with `1e-6·I` added to both covariances.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d || a.cov.len() != d * d || b.cov.len() != d * d {
        return Err(Error::shape("frechet_distance", &[a.dim()], &[b.dim()]));
    }
    let ma = DVector::from_column_slice(&a.mean);
    let mb = DVector::from_column_slice(&b.mean);
    let dm = (&ma - &mb).norm_squared();
    let ca = DMatrix::from_row_slice(d, d, &a.cov);
    let cb = DMatrix::from_row_slice(d, d, &b.cov);
    let (ca, cb) = ((&ca + ca.transpose()) * 0.5, (&cb + cb.transpose()) * 0.5);
    let trace = match trace_sqrt_product(&ca, &cb) {
        Ok(t) => ca.trace() + cb.trace() - 2.0 * t,
        Err(Error::Indefinite(_)) => {
            let eye = DMatrix::<f64>::identity(d, d) * SHRINKAGE;
            let (ca, cb) = (&ca + &eye, &cb + &eye);
            ca.trace() + cb.trace() - 2.0 * trace_sqrt_product(&ca, &cb)?
        }
        Err(e) => return Err(e),
    };
    Ok((dm + trace).max(0.0))
}
