use crate::autodiff::Tensor;
use crate::model::ParamStore;

use super::TrainError;

/// Adam with bias correction; beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update. Non-finite gradients abort the step before
    /// anything is modified.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &[Vec<f64>],
        lr: f64,
    ) -> Result<(), TrainError> {
        if grads.len() != self.m.len()
            || grads.iter().zip(&self.m).any(|(g, m)| g.len() != m.len())
        {
            return Err(TrainError::Optimizer("gradient layout does not match the parameters".into()));
        }
        for (k, g) in grads.iter().enumerate() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGradient {
                    param: params.names()[k].clone(),
                    index: i,
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moments as named tensors, for checkpointing.
    pub fn export(&self, params: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.m.len());
        for (tag, moments) in [("m", &self.m), ("v", &self.v)] {
            for (name, (vals, p)) in params.names().iter().zip(moments.iter().zip(params.tensors())) {
                let t = Tensor::new(p.shape(), vals.clone()).expect("moment mirrors parameter");
                out.push((format!("adam.{tag}.{name}"), t));
            }
        }
        out
    }

    /// Inverse of [`Adam::export`].
    pub fn import(
        params: &ParamStore,
        step: u64,
        extra: &[(String, Tensor)],
    ) -> Result<Self, TrainError> {
        let mut adam = Self::new(params);
        adam.step = step;
        for (tag, moments) in [("m", &mut adam.m), ("v", &mut adam.v)] {
            for (k, name) in params.names().iter().enumerate() {
                let key = format!("adam.{tag}.{name}");
                let t = extra
                    .iter()
                    .find(|(n, _)| *n == key)
                    .map(|(_, t)| t)
                    .ok_or_else(|| TrainError::Optimizer(format!("missing {key} in checkpoint")))?;
                if t.len() != moments[k].len() {
                    return Err(TrainError::Optimizer(format!("{key} has the wrong size")));
                }
                moments[k].copy_from_slice(t.data());
            }
        }
        Ok(adam)
    }
}
