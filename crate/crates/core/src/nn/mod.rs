//! Parameterized layers. Each layer owns [`ParamId`]s into a [`ParamStore`]
//! and records its forward pass into a [`Graph`].

mod transformer;

pub use transformer::{CausalTransformer, TransformerConfig};

use alloc::format;
use alloc::string::String;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::optim::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, inp: usize, out: usize, bias: bool, std: f64) -> Self {
        let w = store.add(format!("{name}.weight"), rng.normal_tensor(&[inp, out], std));
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out])));
        Linear { w, b, inp, out }
    }

    /// `inp × inp` identity map without bias.
    pub fn identity<T: Real>(store: &mut ParamStore<T>, name: &str, n: usize) -> Self {
        let w = Tensor::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() });
        Linear { w: store.add(format!("{name}.weight"), w), b: None, inp: n, out: n }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(s, self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(s, b);
                g.add_bcast(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let std = libm::sqrt(1.0 / (cin * k * k) as f64);
        Conv2d {
            w: store.add(format!("{name}.weight"), rng.normal_tensor(&[cout, cin, k, k], std)),
            b: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
            pad,
        }
    }

    /// Size-preserving `k×k` convolution (odd `k`).
    pub fn same<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self::new(store, rng, name, cin, cout, k, 1, k / 2)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(s, self.w);
        let b = g.param(s, self.b);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let groups = [8, 4, 2, 1].into_iter().find(|g| channels % g == 0 && channels / g >= 2).unwrap_or(1);
        GroupNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            groups,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let n = g.group_norm(x, self.groups, 1e-6)?;
        let (gm, bt) = (g.param(s, self.gamma), g.param(s, self.beta));
        g.channel_affine(n, gm, bt)
    }
}

/// RMS normalization over the last axis with a learned gain.
#[derive(Debug, Clone)]
pub struct RmsNorm {
    pub gain: ParamId,
}

impl RmsNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        RmsNorm { gain: store.add(format!("{name}.gain"), Tensor::full(&[dim], T::one())) }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let n = g.rms_norm(x, 1e-6);
        let gain = g.param(s, self.gain);
        g.mul_bcast(n, gain)
    }
}

/// Pre-activation residual block: `x + conv(silu(norm(conv(silu(norm(x))))))`.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    norm2: GroupNorm,
    conv2: Conv2d,
}

impl ResBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, ch: usize) -> Self {
        let conv2 = Conv2d::same(store, rng, &format!("{name}.conv2"), ch, ch, 3);
        // Start close to identity.
        store.get_mut(conv2.w).value.data_mut().iter_mut().for_each(|v| *v = *v * T::c(0.1));
        ResBlock {
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), ch),
            conv1: Conv2d::same(store, rng, &format!("{name}.conv1"), ch, ch, 3),
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), ch),
            conv2,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, s, x)?;
        let h = g.silu(h);
        let h = self.conv1.forward(g, s, h)?;
        let h = self.norm2.forward(g, s, h)?;
        let h = g.silu(h);
        let h = self.conv2.forward(g, s, h)?;
        g.add(x, h)
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}
