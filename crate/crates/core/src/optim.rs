//! Mini-batch SGD with classical momentum or Nesterov look-ahead, and the
//! geometric learning-rate schedule.
//!
//! Nesterov mode follows the gradient-at-look-ahead protocol: the caller
//! invokes [`Optimizer::look_ahead`], which moves every trainable parameter
//! to `theta + mu V`, evaluates gradients there, and then calls
//! [`Optimizer::apply`], which restores `theta` and performs
//! `V <- mu V - lr g(theta + mu V)`, `theta <- theta + V`.

use crate::error::{param_err, shape_err, Error, Result};
use crate::layers::Param;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Momentum {
    Plain,
    Classical,
    Nesterov,
}

/// Geometric decay from `start` to `end` over `epochs` epochs; constant at
/// `end` afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub start: f64,
    pub end: f64,
    pub epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { start: 0.01, end: 0.01 * 1e-4, epochs: 25 }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.end > 0.0 && self.end <= self.start) || self.epochs == 0 {
            return Err(param_err!("invalid learning-rate schedule {self:?}"));
        }
        Ok(())
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || epoch + 1 >= self.epochs {
            return if self.epochs <= 1 && epoch == 0 { self.start } else { self.end };
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.start * (self.end / self.start).powf(t)
    }
}

/// Learning rate at `epoch` under `schedule`.
pub fn lr_schedule(epoch: usize, schedule: &LrSchedule) -> f64 {
    schedule.rate(epoch)
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub mode: Momentum,
    pub momentum: f64,
    pub lr: f64,
    velocities: Vec<Tensor>,
    saved: Option<Vec<Tensor>>,
}

impl Optimizer {
    pub fn new(mode: Momentum, momentum: f64, lr: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(param_err!("momentum must lie in [0, 1), got {momentum}"));
        }
        if !(lr >= 0.0) {
            return Err(param_err!("learning rate must be non-negative, got {lr}"));
        }
        Ok(Self { mode, momentum, lr, velocities: Vec::new(), saved: None })
    }

    pub fn velocities(&self) -> &[Tensor] {
        &self.velocities
    }

    fn ensure_velocities(&mut self, params: &[&mut Param]) -> Result<()> {
        if self.velocities.is_empty() {
            self.velocities = params.iter().map(|p| Tensor::zeros_like(&p.value)).collect();
        }
        if self.velocities.len() != params.len() {
            return Err(shape_err!("optimizer tracks {} tensors, got {}", self.velocities.len(), params.len()));
        }
        for (v, p) in self.velocities.iter().zip(params) {
            if v.shape() != p.value.shape() {
                return Err(shape_err!("velocity {:?} vs parameter {:?} ({})", v.shape(), p.value.shape(), p.name));
            }
        }
        Ok(())
    }

    /// Nesterov only: shift trainable parameters to `theta + mu V`. A no-op
    /// in the other modes.
    pub fn look_ahead(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.mode != Momentum::Nesterov {
            return Ok(());
        }
        self.ensure_velocities(params)?;
        let mut saved = Vec::with_capacity(params.len());
        for (p, v) in params.iter_mut().zip(&self.velocities) {
            if p.trainable() {
                saved.push(p.value.clone());
                p.value.add_scaled(v, self.momentum)?;
            } else {
                saved.push(Tensor::scalar(0.0));
            }
        }
        self.saved = Some(saved);
        Ok(())
    }

    /// Update every trainable parameter from its `grad`.
    pub fn apply(&mut self, params: &mut [&mut Param]) -> Result<()> {
        self.ensure_velocities(params)?;
        let saved = match self.mode {
            Momentum::Nesterov => Some(self.saved.take().ok_or_else(|| {
                Error::State("nesterov step applied without a preceding look-ahead".into())
            })?),
            _ => None,
        };
        let mu = match self.mode {
            Momentum::Plain => 0.0,
            _ => self.momentum,
        };
        for (i, (p, v)) in params.iter_mut().zip(self.velocities.iter_mut()).enumerate() {
            if !p.trainable() {
                continue;
            }
            if let Some(saved) = &saved {
                p.value = saved[i].clone();
            }
            if p.grad.shape() != p.value.shape() {
                return Err(shape_err!("gradient {:?} for parameter {:?}", p.grad.shape(), p.value.shape()));
            }
            for (vi, &g) in v.data_mut().iter_mut().zip(p.grad.data()) {
                *vi = mu * *vi - self.lr * g;
            }
            p.value.add_scaled(v, 1.0)?;
        }
        Ok(())
    }

    /// One full step with a gradient callback evaluated at the point the
    /// mode prescribes. The callback writes into each `Param::grad`.
    pub fn step_with<F>(&mut self, params: &mut [Param], mut grads: F) -> Result<()>
    where
        F: FnMut(&mut [Param]) -> Result<()>,
    {
        {
            let mut refs: Vec<&mut Param> = params.iter_mut().collect();
            self.look_ahead(&mut refs)?;
        }
        grads(params)?;
        let mut refs: Vec<&mut Param> = params.iter_mut().collect();
        self.apply(&mut refs)
    }
}

/// `sgd_step` on loose tensors: `grads` maps parameter values to gradients.
pub fn sgd_step<F>(params: &mut [Tensor], state: &mut Optimizer, mut grads: F) -> Result<()>
where
    F: FnMut(&[Tensor]) -> Vec<Tensor>,
{
    let mut wrapped: Vec<Param> = params.iter().map(|t| Param::new("p", t.clone())).collect();
    state.step_with(&mut wrapped, |ps| {
        let values: Vec<Tensor> = ps.iter().map(|p| p.value.clone()).collect();
        let gs = grads(&values);
        if gs.len() != ps.len() {
            return Err(shape_err!("{} gradients for {} parameters", gs.len(), ps.len()));
        }
        for (p, g) in ps.iter_mut().zip(gs) {
            p.grad = g;
        }
        Ok(())
    })?;
    for (t, p) in params.iter_mut().zip(wrapped) {
        *t = p.value;
    }
    Ok(())
}
