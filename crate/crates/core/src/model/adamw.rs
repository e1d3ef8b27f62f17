//! AdamW with decoupled weight decay.
//!
//! Bias-corrected moments; the decay term is applied directly to the
//! weights (multiplied by the learning rate), not mixed into the gradient.
//! Normalization parameters and biases are exempt from decay.

use crate::model::params::{decays, Parameters, Scalar};
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One element's update. Exposed so the tensor loop and the scalar oracle
/// tests share the exact same arithmetic.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update_scalar<F: Scalar>(
    w: F,
    g: F,
    m: &mut F,
    v: &mut F,
    step: u64,
    hp: &AdamWParams,
    decay: bool,
) -> F {
    let b1 = F::of_f64(hp.beta1);
    let b2 = F::of_f64(hp.beta2);
    let lr = F::of_f64(hp.learning_rate);
    let eps = F::of_f64(hp.epsilon);
    *m = b1 * *m + (F::one() - b1) * g;
    *v = b2 * *v + (F::one() - b2) * g * g;
    let m_hat = *m / F::of_f64(1.0 - hp.beta1.powi(step as i32));
    let v_hat = *v / F::of_f64(1.0 - hp.beta2.powi(step as i32));
    let mut next = w - lr * m_hat / (v_hat.sqrt() + eps);
    if decay {
        next = next - lr * F::of_f64(hp.weight_decay) * w;
    }
    next
}

/// Optimizer state: first/second moment accumulators plus a step counter.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub m: Parameters<F>,
    pub v: Parameters<F>,
    pub step: u64,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(config: &ModelConfig) -> Self {
        AdamW {
            m: Parameters::zeros(config),
            v: Parameters::zeros(config),
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut Parameters<F>, grads: &Parameters<F>, hp: &AdamWParams) {
        self.step += 1;
        let step = self.step;
        for ((((name, mut w), (_, g)), (_, mut m)), (_, mut v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            let decay = hp.weight_decay > 0.0 && decays(&name);
            for ((w, g), (m, v)) in w
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *w = adamw_update_scalar(*w, *g, m, v, step, hp, decay);
            }
        }
    }
}
