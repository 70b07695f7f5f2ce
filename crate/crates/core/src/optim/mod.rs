//! Named parameters with their optimizer state, and decoupled-weight-decay Adam.

mod schedule;

pub use schedule::{ScheduleKind, ScheduleSpec};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    /// First moment.
    pub m: Vec<T>,
    /// Second moment.
    pub v: Vec<T>,
    pub step: u64,
    /// Whether weight decay applies (matrices and kernels only).
    pub decay: bool,
}

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// An ordered set of parameters owned by one optimizer.
#[derive(Debug)]
pub struct ParamStore<T> {
    id: u64,
    params: Vec<Parameter<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Clone for ParamStore<T> {
    /// The clone is a distinct store: graphs bound to the original never
    /// deliver gradients to it.
    fn clone(&self) -> Self {
        ParamStore { id: NEXT_STORE.fetch_add(1, Ordering::Relaxed), params: self.params.clone() }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { id: NEXT_STORE.fetch_add(1, Ordering::Relaxed), params: Vec::new() }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let n = value.numel();
        let decay = value.shape().len() >= 2;
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: vec![T::zero(); n],
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds the gradients of every parameter of this store bound in `graph`.
    pub fn accumulate(&mut self, graph: &Graph<T>, grads: &mut Gradients<T>) {
        for b in graph.bindings.iter().filter(|b| b.store == self.id) {
            if let Some(g) = grads.take(b.var) {
                for (d, s) in self.params[b.param.0].grad.iter_mut().zip(&g) {
                    *d += *s;
                }
            }
        }
    }

    /// Replaces values with those from `other`, matched by name and shape.
    pub fn load_values(&mut self, other: &[(String, Tensor<T>)]) -> Result<()> {
        for (name, t) in other {
            let id = self.find(name).ok_or_else(|| Error::invalid("load", alloc::format!("unknown parameter {}", name)))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != t.shape() {
                return Err(Error::shape("load", p.value.shape(), t.shape()));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || weight_decay < 0.0 {
            return Err(Error::invalid("adamw", alloc::format!("betas ({}, {}) wd {}", beta1, beta2, weight_decay)));
        }
        Ok(AdamW { beta1, beta2, weight_decay, ..Default::default() })
    }

    /// One update of every parameter in `store` from its accumulated gradient.
    /// Fails before touching anything if any gradient is non-finite.
    pub fn step<T: Real>(&self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::invalid("adamw", alloc::format!("learning rate {}", lr)));
        }
        if let Some(p) = store.params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFinite(p.name.clone()));
        }
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let (one, eps, lr_t) = (T::one(), T::c(self.eps), T::c(lr));
        for p in &mut store.params {
            p.step += 1;
            let t = p.step as i32;
            let bc1 = T::c(1.0 - libm::pow(self.beta1, t as f64));
            let bc2 = T::c(1.0 - libm::pow(self.beta2, t as f64));
            let decay = if p.decay { T::c(lr * self.weight_decay) } else { T::zero() };
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = p.grad[i];
                p.m[i] = b1 * p.m[i] + (one - b1) * g;
                p.v[i] = b2 * p.v[i] + (one - b2) * g * g;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                values[i] = values[i] - decay * values[i] - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Optimizer and learning-rate settings of one training stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    /// Learning rate at step 0, ramped linearly to `lr`.
    pub warmup_start: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: 1e-3, warmup_start: 1e-4, warmup_steps: 100, beta1: 0.9, beta2: 0.95, weight_decay: 0.0 }
    }
}

impl OptimConfig {
    pub fn adamw(&self) -> Result<AdamW> {
        AdamW::new(self.beta1, self.beta2, self.weight_decay)
    }

    pub fn warmup_constant(&self, total: u64) -> ScheduleSpec {
        ScheduleSpec::warmup_constant(self.warmup_start, self.lr, self.warmup_steps.min(total), total)
    }

    pub fn warmup_cosine(&self, total: u64) -> ScheduleSpec {
        ScheduleSpec::warmup_cosine(self.warmup_start, self.lr, self.warmup_steps.min(total), total)
    }
}
