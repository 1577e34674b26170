//! Adam with bias correction. The optimizer always descends; ascent callers
//! negate their gradients first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; a nonzero value turns the update into AdamW.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// One descent step on a flat parameter buffer.
    pub fn step(&mut self, params: &mut [f32], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::dims(
                "adam_step",
                self.first_moment.len(),
                format!("params {} / grads {}", params.len(), grads.len()),
            ));
        }
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be > 0")));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("adam_step gradients"));
        }
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            let mut x = *p as f64;
            if weight_decay != 0.0 {
                x -= lr * weight_decay * x;
            }
            x -= lr * m_hat / (v_hat.sqrt() + eps);
            *p = x as f32;
        }
        Ok(())
    }
}

/// Adam step on a matrix-shaped parameter.
pub fn adam_step(
    params: &mut DenseMatrix,
    grads: &DenseMatrix,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.shape() != grads.shape() {
        return Err(Error::dims(
            "adam_step",
            format!("{:?}", params.shape()),
            format!("{:?}", grads.shape()),
        ));
    }
    let g: Vec<f64> = grads.as_slice().iter().map(|&v| v as f64).collect();
    state.step(params.as_mut_slice(), &g, lr)
}
