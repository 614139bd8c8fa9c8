//! Adam with bias correction. Frozen parameters carry no moment buffers and
//! are never touched.

use super::qnet::{Gradients, QNetwork};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct OptimizerState {
    first: Vec<Option<Vec<f32>>>,
    second: Vec<Option<Vec<f32>>>,
    step: u64,
}

impl OptimizerState {
    /// Fresh state with accumulators for exactly the trainable parameters.
    pub fn new(net: &QNetwork) -> Self {
        let first: Vec<_> = net
            .params()
            .iter()
            .zip(net.frozen())
            .map(|(p, &frozen)| (!frozen).then(|| vec![0.0; p.len()]))
            .collect();
        Self {
            second: first.clone(),
            first,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_tracking(&self, index: usize) -> bool {
        self.first.get(index).is_some_and(Option::is_some)
    }
}

pub fn adam_step(net: &mut QNetwork, grads: &Gradients, state: &mut OptimizerState, lr: f32) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::config(format!("learning rate must be positive and finite, got {lr}")));
    }
    if grads.len() != net.params().len() || state.first.len() != grads.len() {
        return Err(Error::shape("adam_step gradients", &[net.params().len()], &[grads.len()]));
    }
    for (i, (g, &frozen)) in grads.iter().zip(net.frozen()).enumerate() {
        if frozen && g.is_some() {
            return Err(Error::config(format!("gradient supplied for frozen parameter #{i}")));
        }
        if frozen == state.is_tracking(i) {
            return Err(Error::config(format!(
                "optimizer state out of sync with freeze mask at parameter #{i}"
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = (1.0 - BETA1.powi(t)) as f32;
    let bc2 = (1.0 - BETA2.powi(t)) as f32;
    let (b1, b2, eps) = (BETA1 as f32, BETA2 as f32, EPSILON as f32);

    for (i, param) in net.params_mut().iter_mut().enumerate() {
        let (Some(grad), Some(m), Some(v)) = (&grads[i], &mut state.first[i], &mut state.second[i]) else {
            continue;
        };
        if grad.shape() != param.shape() {
            return Err(Error::shape("adam_step gradient", param.shape(), grad.shape()));
        }
        for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        if !param.all_finite() {
            return Err(Error::NonFinite("adam_step"));
        }
    }
    Ok(())
}
