use crate::encoder::{EncoderParams, Gradients};
use crate::error::{Error, Result};

use super::config::{OptimizerConfig, OptimizerKind};

/// Adam or SGD-with-momentum state over the trainable tensors of one
/// encoder. For SGD `first` holds the velocity and `second` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub t: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &EncoderParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.trainable().iter().map(|t| vec![0.0; t.len()]).collect();
        let second = match config.kind {
            OptimizerKind::Adam => zeros.clone(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Self {
            config,
            t: 0,
            first: zeros,
            second,
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &Gradients) -> Result<()> {
        let g = grads.trainable();
        let mut p = params.trainable_mut();
        if g.len() != p.len() || g.len() != self.first.len() {
            return Err(Error::ShapeMismatch("optimizer state vs parameters".into()));
        }
        let c = self.config;
        self.t += 1;
        match c.kind {
            OptimizerKind::Adam => {
                let bc1 = 1.0 - c.beta1.powi(self.t as i32);
                let bc2 = 1.0 - c.beta2.powi(self.t as i32);
                for (k, (theta, grad)) in p.iter_mut().zip(&g).enumerate() {
                    let m = &mut self.first[k];
                    let v = &mut self.second[k];
                    for i in 0..theta.len() {
                        let gi = grad[i] + c.weight_decay * theta[i];
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        theta[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                    }
                }
            }
            OptimizerKind::Sgd => {
                for (k, (theta, grad)) in p.iter_mut().zip(&g).enumerate() {
                    let vel = &mut self.first[k];
                    for i in 0..theta.len() {
                        let gi = grad[i] + c.weight_decay * theta[i];
                        vel[i] = c.momentum * vel[i] + gi;
                        theta[i] -= c.lr * vel[i];
                    }
                }
            }
        }
        Ok(())
    }
}
