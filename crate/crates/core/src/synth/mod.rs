//! Procedural class-labelled scenes: a few anti-aliased shapes of one class
//! colour on a low-saturation value-noise background.
//!
//! Class `c` of `C` owns hue `360·c/C` degrees and shape kind `c mod 4`, so
//! the dominant saturated hue alone identifies the class.

mod resize;

pub use resize::bicubic_resize;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix, Rng};
use crate::tensor::Tensor;

pub const MIN_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disc,
    Square,
    Triangle,
    Ring,
}

impl ShapeKind {
    pub fn for_class(class: usize) -> Self {
        [ShapeKind::Disc, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Ring][class % 4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub class: usize,
    pub classes: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn hue(&self) -> f64 {
        class_hue(self.class, self.classes)
    }

    pub fn kind(&self) -> ShapeKind {
        ShapeKind::for_class(self.class)
    }
}

pub fn class_hue(class: usize, classes: usize) -> f64 {
    360.0 * class as f64 / classes as f64
}

fn rem_euclid(x: f64, m: f64) -> f64 {
    let r = libm::fmod(x, m);
    if r < 0.0 {
        r + m
    } else {
        r
    }
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = rem_euclid(h, 360.0) / 60.0;
    let i = libm::floor(h);
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// `(hue°, saturation, value)` of an RGB triple in `[0, 1]`.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * rem_euclid((g - b) / d, 6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    (h, s, max)
}

struct ValueNoise {
    cells: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut Rng, cells: usize) -> Self {
        let lattice = (0..(cells + 1) * (cells + 1)).map(|_| rng.uniform()).collect();
        ValueNoise { cells, lattice }
    }

    /// Smoothstep-interpolated lattice noise at `(u, v) ∈ [0, 1]²`.
    fn at(&self, u: f64, v: f64) -> f64 {
        let n = self.cells;
        let (x, y) = (u * n as f64, v * n as f64);
        let (x0, y0) = ((x as usize).min(n - 1), (y as usize).min(n - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
        let l = |i: usize, j: usize| self.lattice[j * (n + 1) + i];
        let a = l(x0, y0) + (l(x0 + 1, y0) - l(x0, y0)) * sx;
        let b = l(x0, y0 + 1) + (l(x0 + 1, y0 + 1) - l(x0, y0 + 1)) * sx;
        a + (b - a) * sy
    }
}

struct Shape {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    r: f64,
    angle: f64,
    rgb: [f64; 3],
}

impl Shape {
    /// Signed distance in normalized image units (negative inside).
    fn sdf(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = libm::sincos(self.angle);
        let (px, py) = (c * dx + s * dy, -s * dx + c * dy);
        match self.kind {
            ShapeKind::Disc => libm::hypot(px, py) - self.r,
            ShapeKind::Ring => (libm::hypot(px, py) - self.r * 0.75).abs() - self.r * 0.25,
            ShapeKind::Square => {
                let h = self.r * 0.8;
                let (qx, qy) = (px.abs() - h, py.abs() - h);
                libm::hypot(qx.max(0.0), qy.max(0.0)) + qx.max(qy).min(0.0)
            }
            ShapeKind::Triangle => {
                let k = libm::sqrt(3.0);
                let h = self.r * 0.9;
                let (mut x, mut y) = (px.abs() - h, -py + h / k);
                if x + k * y > 0.0 {
                    (x, y) = ((x - k * y) / 2.0, (-k * x - y) / 2.0);
                }
                x -= x.clamp(-2.0 * h, 0.0);
                let d = libm::hypot(x, y);
                if y > 0.0 {
                    -d
                } else {
                    d
                }
            }
        }
    }
}

/// Renders `spec` at side `r` into a `[3, r, r]` tensor in `[-1, 1]`.
pub fn render(spec: &SceneSpec, r: usize) -> Result<Tensor<f32>> {
    if r < MIN_SIDE {
        return Err(Error::invalid("render", alloc::format!("side {} < {}", r, MIN_SIDE)));
    }
    if spec.classes == 0 || spec.class >= spec.classes {
        return Err(Error::invalid("render", "class out of range"));
    }
    let mut rng = Rng::new(mix(spec.seed ^ mix(spec.class as u64 + 1)));
    let noise = ValueNoise::new(&mut rng, 4);
    let base = rng.range(0.25, 0.6);
    let amp = rng.range(0.08, 0.16);
    let tint: [f64; 3] = [rng.range(-0.02, 0.02), rng.range(-0.02, 0.02), rng.range(-0.02, 0.02)];

    let count = 1 + rng.below(3);
    let shapes: Vec<Shape> = (0..count)
        .map(|_| {
            let rad = rng.range(0.14, 0.24);
            Shape {
                kind: spec.kind(),
                cx: rng.range(rad, 1.0 - rad),
                cy: rng.range(rad, 1.0 - rad),
                r: rad,
                angle: rng.range(0.0, core::f64::consts::TAU),
                rgb: hsv_to_rgb(spec.hue() + rng.range(-10.0, 10.0), rng.range(0.75, 1.0), rng.range(0.75, 1.0)),
            }
        })
        .collect();

    let px = 1.0 / r as f64;
    let mut out = vec![0f32; 3 * r * r];
    for y in 0..r {
        for x in 0..r {
            let (u, v) = ((x as f64 + 0.5) * px, (y as f64 + 0.5) * px);
            let n = base + amp * (noise.at(u, v) - 0.5);
            let mut rgb = [n + tint[0], n + tint[1], n + tint[2]];
            for s in &shapes {
                let cover = (0.5 - s.sdf(u, v) / px).clamp(0.0, 1.0);
                for c in 0..3 {
                    rgb[c] += (s.rgb[c] - rgb[c]) * cover;
                }
            }
            for c in 0..3 {
                out[c * r * r + y * r + x] = (rgb[c].clamp(0.0, 1.0) * 2.0 - 1.0) as f32;
            }
        }
    }
    Tensor::new(&[3, r, r], out)
}

/// Recovers the class from the dominant hue of saturated pixels; ties and
/// images with no saturated pixels fall back to the shape-coverage count.
pub fn classify_by_hue(img: &Tensor<f32>, classes: usize) -> usize {
    let s = img.shape();
    let hw = s[1] * s[2];
    let d = img.data();
    let mut votes = vec![0usize; classes];
    let bin = 360.0 / classes as f64;
    for i in 0..hw {
        let rgb = [0, 1, 2].map(|c| (d[c * hw + i] as f64 + 1.0) * 0.5);
        let (h, sat, val) = rgb_to_hsv(rgb);
        if sat > 0.45 && val > 0.3 {
            votes[(libm::round(h / bin) as usize) % classes] += 1;
        }
    }
    votes.iter().enumerate().max_by_key(|(i, v)| (**v, usize::MAX - i)).map(|(i, _)| i).unwrap_or(0)
}

/// Index range of a corpus split; instance seeds are
/// `(corpus_seed << 32) | index`, so distinct indices never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn offset(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1 << 31,
        }
    }
}

pub fn instance_seed(corpus_seed: u64, split: Split, index: usize) -> u64 {
    (corpus_seed << 32) | (split.offset() + index as u64)
}

/// Scene for item `index` of a split: classes cycle so splits are balanced.
pub fn scene(corpus_seed: u64, split: Split, index: usize, classes: usize) -> SceneSpec {
    SceneSpec { class: index % classes, classes, seed: instance_seed(corpus_seed, split, index) }
}
