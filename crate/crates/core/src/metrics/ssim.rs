//! Multi-scale SSIM on luma, with 11-tap Gaussian windows (σ = 1.5), valid
//! filtering and 2×2 average-pool downsampling between scales.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WIN: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Luma in `[0, 1]` from a `[3, h, w]` or `[1, h, w]` image in `[-1, 1]`.
pub fn to_gray(img: &Tensor<f32>) -> Result<(usize, usize, Vec<f64>)> {
    let s = img.shape();
    if s.len() != 3 || (s[0] != 3 && s[0] != 1) {
        return Err(Error::invalid("ms_ssim", "expected a [3|1, h, w] image"));
    }
    let (h, w) = (s[1], s[2]);
    let hw = h * w;
    let d = img.data();
    let u = |v: f32| (v as f64 + 1.0) * 0.5;
    let g = (0..hw).map(|i| if s[0] == 1 { u(d[i]) } else { 0.299 * u(d[i]) + 0.587 * u(d[hw + i]) + 0.114 * u(d[2 * hw + i]) }).collect();
    Ok((h, w, g))
}

fn window() -> [f64; WIN] {
    let mut k = [0.0; WIN];
    let c = (WIN / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = libm::exp(-x * x / (2.0 * SIGMA * SIGMA));
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64; WIN]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - WIN, w + 1 - WIN);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..WIN).map(|t| k[t] * img[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WIN).map(|t| k[t] * tmp[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_cs(x: &[f64], y: &[f64], h: usize, w: usize) -> (f64, f64) {
    let k = window();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let [mx, my, sxx, syy, sxy] = [x, y, &xx[..], &yy[..], &xy[..]].map(|m| filter_valid(m, h, w, &k));
    let n = mx.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.len() {
        let vx = sxx[i] - mx[i] * mx[i];
        let vy = syy[i] - my[i] * my[i];
        let cov = sxy[i] - mx[i] * my[i];
        let c = (2.0 * cov + c2) / (vx + vy + c2);
        let l = (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
        cs += c;
        ssim += l * c;
    }
    (ssim / n, cs / n)
}

fn pool2(img: &[f64], h: usize, w: usize) -> (usize, usize, Vec<f64>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let a = img[2 * y * w + 2 * x] + img[2 * y * w + 2 * x + 1];
            let b = img[(2 * y + 1) * w + 2 * x] + img[(2 * y + 1) * w + 2 * x + 1];
            out[y * ow + x] = 0.25 * (a + b);
        }
    }
    (oh, ow, out)
}

/// Number of scales usable for an `h × w` image (at most 5).
pub fn scales_for(h: usize, w: usize) -> usize {
    let (mut h, mut w, mut s) = (h, w, 0);
    while s < MS_SSIM_WEIGHTS.len() && h >= WIN && w >= WIN {
        s += 1;
        h /= 2;
        w /= 2;
    }
    s
}

pub fn ms_ssim(x: &Tensor<f32>, y: &Tensor<f32>) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::shape("ms_ssim", x.shape(), y.shape()));
    }
    let (h, w, gx) = to_gray(x)?;
    let (_, _, gy) = to_gray(y)?;
    let scales = scales_for(h, w);
    if scales == 0 {
        return Err(Error::invalid("ms_ssim", "image smaller than the 11-pixel window"));
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let (mut h, mut w, mut gx, mut gy) = (h, w, gx, gy);
    let mut out = 1.0;
    for s in 0..scales {
        let (ssim, cs) = ssim_cs(&gx, &gy, h, w);
        let wt = MS_SSIM_WEIGHTS[s] / wsum;
        let term = if s + 1 == scales { ssim } else { cs };
        out *= libm::pow(term.max(0.0), wt);
        if s + 1 < scales {
            let (nh, nw, px) = pool2(&gx, h, w);
            let (_, _, py) = pool2(&gy, h, w);
            (h, w, gx, gy) = (nh, nw, px, py);
        }
    }
    Ok(out.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(f: impl Fn(usize, usize, usize) -> f32, side: usize) -> Tensor<f32> {
        Tensor::from_fn(&[3, side, side], |i| f(i / (side * side), (i / side) % side, i % side))
    }

    #[test]
    fn identity_and_symmetry() {
        let a = img(|c, y, x| ((c * 5 + y * 3 + x * 7) % 13) as f32 / 6.5 - 1.0, 48);
        let b = img(|c, y, x| ((c + y * x) % 11) as f32 / 5.5 - 1.0, 48);
        assert_eq!(ms_ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ms_ssim(&a, &b).unwrap(), ms_ssim(&b, &a).unwrap());
        let v = ms_ssim(&a, &b).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn scale_count() {
        assert_eq!(scales_for(16, 16), 1);
        assert_eq!(scales_for(32, 32), 2);
        assert_eq!(scales_for(176, 176), 5);
        assert_eq!(scales_for(10, 64), 0);
        let t = Tensor::zeros(&[3, 8, 8]);
        assert!(ms_ssim(&t, &t).is_err());
    }
}
