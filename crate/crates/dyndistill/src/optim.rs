//! SGD with momentum and coupled L2 weight decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Classical SGD state: one velocity buffer per parameter, zero-initialized.
///
/// The update per parameter is
/// `v <- momentum * v + (grad + weight_decay * param)` followed by
/// `param <- param - lr * v`, after which the gradient is cleared.
pub struct Sgd {
    params: Vec<Tensor>,
    velocity: Vec<Vec<f64>>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    pub fn new(params: Vec<Tensor>, lr: f64, momentum: f64, weight_decay: f64) -> Result<Sgd> {
        if lr <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if weight_decay < 0.0 {
            return Err(Error::config("weight decay must be nonnegative"));
        }
        let velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Ok(Sgd {
            params,
            velocity,
            lr,
            momentum,
            weight_decay,
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// One update over every registered parameter. Every parameter must
    /// carry a gradient from a preceding backward pass.
    pub fn step(&mut self) -> Result<()> {
        for (param, vel) in self.params.iter().zip(self.velocity.iter_mut()) {
            let grad = param
                .grad()
                .ok_or_else(|| Error::contract("sgd step with missing gradient"))?;
            let mut data = param.data();
            for ((v, g), x) in vel.iter_mut().zip(&grad).zip(data.iter_mut()) {
                *v = self.momentum * *v + (g + self.weight_decay * *x);
                *x -= self.lr * *v;
            }
            param.set_data(&data);
            param.zero_grad();
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
