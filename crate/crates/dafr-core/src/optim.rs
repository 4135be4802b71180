//! Charbonnier loss and SGD with momentum, weight decay, and adjustable
//! gradient clipping.
//!
//! The clip bound is ±theta/lr, so the largest possible parameter step
//! stays fixed at `theta * momentum-horizon` while the learning rate
//! decays — that is what makes the aggressive 0.1 starting rate of the
//! pretraining phase survivable.

use alloc::format;

// Float supplies no_std math (powf); builds that link std resolve the
// same calls through inherent methods and flag the import as unused.
#[allow(unused_imports)]
use num_traits::Float;

use crate::model::{Model, ParamSet};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Robust penalty `rho(d) = (d^2 + epsilon^2)^alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub epsilon: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            epsilon: 0.001,
            alpha: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "loss needs epsilon > 0 and 0 < alpha <= 1 (got {}, {})",
                self.epsilon, self.alpha
            )));
        }
        Ok(())
    }
}

/// Step-decay learning-rate schedule for the pretraining phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub every_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 0.1,
            factor: 0.1,
            every_epochs: 20,
        }
    }
}

/// Rate at a given 0-based epoch: `initial * factor^(epoch / every_epochs)`.
pub fn lr_at(epoch: usize, schedule: &LrSchedule) -> f64 {
    schedule.initial * schedule.factor.powi((epoch / schedule.every_epochs) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Conv-group rate for the main training phase.
    pub lr_conv: f64,
    /// Deconv-group rate for the main training phase.
    pub lr_deconv: f64,
    /// Clipping scale; gradients are clamped to ±clip_theta/lr.
    pub clip_theta: f64,
    /// Conv-group schedule for the pretraining phase.
    pub schedule: LrSchedule,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            momentum: 0.9,
            weight_decay: 0.0001,
            batch_size: 64,
            lr_conv: 1e-5,
            lr_deconv: 1e-4,
            clip_theta: 0.01,
            schedule: LrSchedule::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0)
            || !(self.lr_conv > 0.0)
            || !(self.lr_deconv > 0.0)
            || !(self.clip_theta > 0.0)
            || !(self.schedule.initial > 0.0)
            || !(self.schedule.factor > 0.0 && self.schedule.factor <= 1.0)
            || self.schedule.every_epochs < 1
            || self.batch_size < 1
        {
            return Err(Error::InvalidArgument(
                "optimizer rates/decay/batch size out of range".into(),
            ));
        }
        Ok(())
    }
}

/// Mean Charbonnier penalty of `pred - target`, and its gradient with
/// respect to `pred`.
pub fn charbonnier_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<(f64, Tensor<T>)> {
    cfg.validate()?;
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "loss operands have shapes {} and {}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("loss over an empty tensor".into()));
    }
    let count = pred.len() as f64;
    let e2 = cfg.epsilon * cfg.epsilon;
    let mut sum = 0.0f64;
    let mut grad = Tensor::zeros(pred.shape())?;
    for ((&p, &t), g) in pred
        .data()
        .iter()
        .zip(target.data())
        .zip(grad.data_mut())
    {
        let d = p.to_f64() - t.to_f64();
        let base = d * d + e2;
        sum += base.powf(cfg.alpha);
        *g = T::from_f64(cfg.alpha * 2.0 * d * base.powf(cfg.alpha - 1.0) / count);
    }
    Ok((sum / count, grad))
}

/// Clamps a gradient to ±theta/lr.
#[inline]
pub fn clip_gradient(grad: f64, lr: f64, theta: f64) -> f64 {
    debug_assert!(lr > 0.0 && theta > 0.0);
    let bound = theta / lr;
    grad.clamp(-bound, bound)
}

/// Per-group learning rates for one step; `None` freezes the group
/// entirely (no decay, no momentum, bit-identical parameters).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupRates {
    /// All conv layers and PReLU slopes.
    pub conv: Option<f64>,
    /// The deconv layer.
    pub deconv: Option<f64>,
}

fn update_buffer<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: f64,
    decay: f64,
    cfg: &OptimConfig,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), velocity.len());
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let pf = p.to_f64();
        let clipped = clip_gradient(g.to_f64() + decay * pf, lr, cfg.clip_theta);
        let vel = cfg.momentum * v.to_f64() - lr * clipped;
        *v = T::from_f64(vel);
        *p = T::from_f64(pf + vel);
    }
}

/// One SGD-with-momentum step over the gradients stored by the last
/// backward pass; consumes them. For each parameter:
/// `g' = clip(g + wd*p); v = momentum*v - lr*g'; p += v`.
/// Weight decay applies to conv/deconv kernels only, never to biases or
/// PReLU slopes.
pub fn sgd_step<T: Scalar>(
    model: &mut Model<T>,
    rates: &GroupRates,
    cfg: &OptimConfig,
) -> Result<()> {
    cfg.validate()?;
    for (name, lr) in [("conv", rates.conv), ("deconv", rates.deconv)] {
        if let Some(lr) = lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} lr must be positive and finite, got {lr}"
                )));
            }
        }
    }
    let grads: ParamSet<T> = model.grads.take().ok_or(Error::MissingGradients)?;

    if let Some(lr) = rates.conv {
        for ((layer, g), v) in model
            .convs
            .iter_mut()
            .zip(&grads.convs)
            .zip(&mut model.velocity.convs)
        {
            update_buffer(
                layer.weights.data_mut(),
                g.w.data(),
                v.w.data_mut(),
                lr,
                cfg.weight_decay,
                cfg,
            );
            update_buffer(&mut layer.bias, &g.b, &mut v.b, lr, 0.0, cfg);
        }
        for ((layer, g), v) in model
            .prelus
            .iter_mut()
            .zip(&grads.prelus)
            .zip(&mut model.velocity.prelus)
        {
            update_buffer(&mut layer.coeff, g, v, lr, 0.0, cfg);
        }
    }

    if let Some(lr) = rates.deconv {
        if let (Some(layer), Some(g), Some(v)) = (
            model.deconv.as_mut(),
            grads.deconv.as_ref(),
            model.velocity.deconv.as_mut(),
        ) {
            update_buffer(
                layer.weights.data_mut(),
                g.w.data(),
                v.w.data_mut(),
                lr,
                cfg.weight_decay,
                cfg,
            );
            update_buffer(&mut layer.bias, &g.b, &mut v.b, lr, 0.0, cfg);
        }
    }

    model.step += 1;
    Ok(())
}
