use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    /// Linear from `warmup_start` to `base` over `warmup_steps`, then flat.
    WarmupConstant,
    /// Linear warmup, then cosine decay from `base` to zero at `total_steps`.
    WarmupCosine,
    /// Zero before `window_start`, `½·base·(1 − cos πt)` inside the window,
    /// `base` after it.
    CosineRamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub base: f64,
    pub warmup_start: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub window_start: u64,
    pub window_len: u64,
}

impl ScheduleSpec {
    pub fn constant(base: f64, total_steps: u64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Constant,
            base,
            warmup_start: base,
            warmup_steps: 0,
            total_steps,
            window_start: 0,
            window_len: 0,
        }
    }

    pub fn warmup_constant(start: f64, base: f64, warmup_steps: u64, total_steps: u64) -> Self {
        ScheduleSpec { kind: ScheduleKind::WarmupConstant, warmup_start: start, warmup_steps, ..Self::constant(base, total_steps) }
    }

    pub fn warmup_cosine(start: f64, base: f64, warmup_steps: u64, total_steps: u64) -> Self {
        ScheduleSpec { kind: ScheduleKind::WarmupCosine, ..Self::warmup_constant(start, base, warmup_steps, total_steps) }
    }

    pub fn cosine_ramp(target: f64, window_start: u64, window_len: u64, total_steps: u64) -> Self {
        ScheduleSpec { kind: ScheduleKind::CosineRamp, window_start, window_len, warmup_start: 0.0, ..Self::constant(target, total_steps) }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.base.is_finite()
            && self.base >= 0.0
            && self.warmup_start.is_finite()
            && self.warmup_start >= 0.0
            && self.warmup_steps <= self.total_steps;
        if !ok {
            return Err(Error::invalid("schedule", alloc::format!("{:?}", self)));
        }
        Ok(())
    }

    /// Value at `step`. Steps past `total_steps` are clamped; the flag
    /// reports when that happened.
    pub fn at(&self, step: u64) -> (f64, bool) {
        let clamped = step > self.total_steps;
        let step = step.min(self.total_steps);
        let warm = |s: u64| {
            if self.warmup_steps == 0 {
                self.base
            } else {
                let t = s as f64 / self.warmup_steps as f64;
                self.warmup_start + (self.base - self.warmup_start) * t
            }
        };
        let v = match self.kind {
            ScheduleKind::Constant => self.base,
            ScheduleKind::WarmupConstant => {
                if step < self.warmup_steps {
                    warm(step)
                } else {
                    self.base
                }
            }
            ScheduleKind::WarmupCosine => {
                if step < self.warmup_steps {
                    warm(step)
                } else {
                    let span = (self.total_steps - self.warmup_steps).max(1) as f64;
                    let p = (step - self.warmup_steps) as f64 / span;
                    0.5 * self.base * (1.0 + libm::cos(PI * p))
                }
            }
            ScheduleKind::CosineRamp => {
                if step < self.window_start {
                    0.0
                } else if step >= self.window_start + self.window_len {
                    self.base
                } else {
                    let t = (step - self.window_start) as f64 / self.window_len as f64;
                    0.5 * self.base * (1.0 - libm::cos(PI * t))
                }
            }
        };
        (v.max(0.0), clamped)
    }

    pub fn value(&self, step: u64) -> f64 {
        self.at(step).0
    }
}
