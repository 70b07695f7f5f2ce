use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantize::utilization;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// `H(X_i)` in bits for each raster position.
    pub per_position: Vec<f64>,
    /// Entropy of the distribution pooled over positions, bits.
    pub total: f64,
    pub mean_per_position: f64,
    /// `1 − 2^{H_pos} / 2^{H_tot}`.
    pub skew: f64,
    pub utilization: f64,
    /// Pooled entropy was zero, so skew is undefined and reported as 0.
    pub degenerate: bool,
    pub sequences: usize,
}

fn entropy_bits(counts: &[u64], n: u64) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|c| **c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * libm::log2(p)
        })
        .sum::<f64>()
        .max(0.0)
}

/// Empirical entropies of `tokens`, laid out as `sequences × n` in raster
/// order.
pub fn entropy_report(tokens: &[u32], k: usize, n: usize) -> Result<EntropyReport> {
    if n == 0 || k == 0 || tokens.is_empty() || tokens.len() % n != 0 {
        return Err(Error::invalid("entropy_report", "token count must be a positive multiple of N"));
    }
    if let Some(t) = tokens.iter().find(|t| **t as usize >= k) {
        return Err(Error::invalid("entropy_report", alloc::format!("token {} >= K={}", t, k)));
    }
    let m = tokens.len() / n;
    let mut pos = vec![0u64; n * k];
    let mut pooled = vec![0u64; k];
    for seq in tokens.chunks_exact(n) {
        for (i, &t) in seq.iter().enumerate() {
            pos[i * k + t as usize] += 1;
            pooled[t as usize] += 1;
        }
    }
    let per_position: Vec<f64> = pos.chunks(k).map(|c| entropy_bits(c, m as u64)).collect();
    let total = entropy_bits(&pooled, tokens.len() as u64);
    let mean_per_position = per_position.iter().sum::<f64>() / n as f64;
    if mean_per_position > total + 1e-9 {
        return Err(Error::invalid("entropy_report", "mean positional entropy exceeds pooled entropy"));
    }
    let degenerate = total == 0.0;
    let skew = if degenerate { 0.0 } else { (1.0 - libm::exp2(mean_per_position - total)).max(0.0) };
    Ok(EntropyReport { per_position, total, mean_per_position, skew, utilization: utilization(&pooled)?, degenerate, sequences: m })
}

/// Per-position upper bounds on `H(X_i | X_<i)` in nats.
pub fn conditional_entropy_bound(per_position_bits: &[f64]) -> Vec<f64> {
    per_position_bits.iter().map(|h| h * core::f64::consts::LN_2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stream_is_degenerate() {
        let r = entropy_report(&[3; 40], 8, 4).unwrap();
        assert!(r.per_position.iter().all(|h| *h == 0.0));
        assert!(r.degenerate);
        assert_eq!(r.skew, 0.0);
        assert_eq!(r.utilization, 0.125);
    }

    #[test]
    fn uniform_four_codes() {
        let tokens: Vec<u32> = (0..16u32).flat_map(|s| (0..4u32).map(move |i| (s + i) % 4)).collect();
        let r = entropy_report(&tokens, 4, 4).unwrap();
        assert!(r.per_position.iter().all(|h| (*h - 2.0).abs() < 1e-12));
        assert!((r.total - 2.0).abs() < 1e-12);
        assert!(r.skew.abs() < 1e-12);
    }

    #[test]
    fn one_bit_gap_gives_half_skew() {
        // Position 0 always 0 or 1, position 1 always 2 or 3: H_pos = 1, H_tot = 2.
        let tokens = [0, 2, 1, 3, 0, 3, 1, 2];
        let r = entropy_report(&tokens, 4, 2).unwrap();
        assert!((r.mean_per_position - 1.0).abs() < 1e-12);
        assert!((r.total - 2.0).abs() < 1e-12);
        assert!((r.skew - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bound_converts_to_nats() {
        let b = conditional_entropy_bound(&[1.0, 0.0]);
        assert_eq!(b, [core::f64::consts::LN_2, 0.0]);
        assert!(entropy_report(&[1, 2, 9], 4, 3).is_err());
        assert!(entropy_report(&[1, 2], 4, 3).is_err());
    }
}
