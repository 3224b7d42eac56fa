//! SGD with momentum, weight decay, and a polynomial learning-rate policy.

use serde::{Deserialize, Serialize};

use super::tensor::Parameter;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub total_iters: usize,
}

impl OptimizerConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(crate::Error::Config(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(crate::Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.poly_power > 0.0) {
            return Err(crate::Error::Config(format!(
                "poly_power must be positive, got {}",
                self.poly_power
            )));
        }
        Ok(())
    }

    /// lr(iter) = base_lr · (1 − iter/total_iters)^power, flooring at zero
    /// once `iter` reaches `total_iters`.
    pub fn learning_rate(&self, iter: usize) -> f64 {
        if iter >= self.total_iters {
            return 0.0;
        }
        let frac = 1.0 - iter as f64 / self.total_iters as f64;
        self.base_lr * frac.powf(self.poly_power)
    }
}

/// One SGD step over all parameters; gradients are zeroed afterwards.
pub fn sgd_step(params: &mut [Parameter], config: &OptimizerConfig, iter: usize) {
    let lr = config.learning_rate(iter);
    for p in params.iter_mut() {
        for i in 0..p.value.data.len() {
            let g = p.grad.data[i] + config.weight_decay * p.value.data[i];
            let m = config.momentum * p.momentum_buf.data[i] + g;
            p.momentum_buf.data[i] = m;
            p.value.data[i] -= lr * m;
        }
        p.zero_grad();
    }
}
