use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Catmull-Rom kernel (`a = -0.5`).
fn cubic(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        1.5 * t * t * t - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// Per output sample: four clamped source indices and weights.
fn taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let x = (o as f64 + 0.5) * scale - 0.5;
            let x0 = libm::floor(x);
            let mut idx = [0; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let p = x0 + k as f64 - 1.0;
                idx[k] = p.clamp(0.0, (src - 1) as f64) as usize;
                w[k] = cubic(x - p);
            }
            (idx, w)
        })
        .collect()
}

/// Resizes a `[c, h, w]` image to `[c, side, side]` with separable bicubic
/// interpolation on pixel centres, replicating edge pixels.
pub fn bicubic_resize(img: &Tensor<f32>, side: usize) -> Result<Tensor<f32>> {
    let s = img.shape();
    if s.len() != 3 || side == 0 {
        return Err(Error::invalid("bicubic_resize", "expected [c, h, w] image and side >= 1"));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if h == side && w == side {
        return Ok(img.clone());
    }
    let tx = taps(w, side);
    let ty = taps(h, side);
    let mut out = vec![0f32; c * side * side];
    let mut tmp = vec![0f64; h * side];
    for ch in 0..c {
        let src = &img.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for (x, (idx, wt)) in tx.iter().enumerate() {
                tmp[y * side + x] = (0..4).map(|k| wt[k] * src[y * w + idx[k]] as f64).sum();
            }
        }
        for (y, (idx, wt)) in ty.iter().enumerate() {
            for x in 0..side {
                let v: f64 = (0..4).map(|k| wt[k] * tmp[idx[k] * side + x]).sum();
                out[ch * side * side + y * side + x] = v as f32;
            }
        }
    }
    Tensor::new(&[c, side, side], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_constant() {
        let img = Tensor::from_fn(&[3, 8, 8], |i| (i % 5) as f32 * 0.1);
        assert_eq!(bicubic_resize(&img, 8).unwrap(), img);
        let c = Tensor::full(&[3, 16, 16], 0.3f32);
        for side in [4, 7, 16, 33] {
            let r = bicubic_resize(&c, side).unwrap();
            assert!(r.data().iter().all(|v| (*v - 0.3).abs() < 1e-6));
        }
    }

    #[test]
    fn kernel_partition_of_unity() {
        for t in [0.0, 0.25, 0.5, 0.9] {
            let s: f64 = (-1..3).map(|k| cubic(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
