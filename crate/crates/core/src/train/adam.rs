use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelGrads};
use crate::tensor::{Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// Moment estimates for a fixed, ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// One bias-corrected Adam step. `params[i]` pairs a tensor with its
    /// trainable flag; frozen tensors and their moments are left untouched.
    pub fn step(
        &mut self,
        params: &mut [(&mut Tensor<T>, bool)],
        grads: &[&Tensor<T>],
        lr: f64,
    ) -> Result<(), TensorError> {
        if params.len() != grads.len() {
            return Err(TensorError::InvalidArgument {
                op: "adam_step",
                msg: format!("{} parameters but {} gradients", params.len(), grads.len()),
            });
        }
        if lr.is_nan() || lr <= 0.0 {
            return Err(TensorError::InvalidArgument {
                op: "adam_step",
                msg: format!("learning rate {lr} must be positive"),
            });
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(p, _)| Tensor::zeros(p.shape().to_vec())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(TensorError::InvalidArgument {
                op: "adam_step",
                msg: format!("state tracks {} parameters, got {}", self.m.len(), params.len()),
            });
        }
        for (((p, _), g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let (inv_c1, inv_c2) = (T::of(1.0 / c1), T::of(1.0 / c2));
        let (lr, eps) = (T::of(lr), T::of(eps));
        for (i, (p, trainable)) in params.iter_mut().enumerate() {
            if !*trainable {
                continue;
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let m_hat = *mv * inv_c1;
                let v_hat = *vv * inv_c2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Applies a step to every parameter of `model`, in [`Model::layers`] order.
    pub fn step_model(&mut self, model: &mut Model<T>, grads: &ModelGrads<T>, lr: f64) -> Result<(), TensorError> {
        let flat_grads: Vec<&Tensor<T>> = grads.iter().flatten().collect();
        let mut params: Vec<(&mut Tensor<T>, bool)> = model
            .layers_mut()
            .into_iter()
            .flat_map(|l| {
                let trainable = l.trainable;
                l.params.iter_mut().map(move |p| (&mut p.value, trainable))
            })
            .collect();
        self.step(&mut params, &flat_grads, lr)
    }
}
