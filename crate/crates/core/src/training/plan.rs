use serde::{Deserialize, Serialize};

use super::TrainError;

/// Loss weights resolved for one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub lambda_rg: f64,
    pub k1: usize,
    pub k2: usize,
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        let w = [self.alpha, self.beta, self.gamma, self.delta, self.lambda_rg];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(TrainError::Plan(format!("loss weights must be finite and >= 0: {w:?}")));
        }
        if self.k1 == 0 || self.k2 == 0 {
            return Err(TrainError::Plan("k1 and k2 must be at least 1".into()));
        }
        if self.alpha == 0.0 && self.beta == 0.0 && self.gamma == 0.0 && self.delta == 0.0 {
            return Err(TrainError::Plan("all loss weights are zero".into()));
        }
        Ok(())
    }
}

/// Everything that drives a training run besides the model and the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainPlan {
    /// 1: teacher forcing only. 2: teacher forcing plus a ramped
    /// autoregressive term.
    pub strategy: u8,
    pub alpha: f64,
    /// Weight of the time-generalization term; 0 disables it.
    pub delta: f64,
    pub lambda_rg: f64,
    /// Per-epoch increment of the autoregressive weight (strategy 2).
    pub gamma0: f64,
    /// Epochs between increments of the autoregressive window (strategy 2).
    pub k2_period: usize,
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    /// Linear warmup over this many epochs (0 = off).
    pub warmup_epochs: usize,
    /// Epochs during which every term involving the processor (teacher
    /// forcing, autoregressive, time generalization) is switched off.
    pub dynamics_off_epochs: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Trajectories per gradient shard; fixed so results do not depend on
    /// the worker count.
    pub shard_size: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            strategy: 1,
            alpha: 1.0,
            delta: 1.0,
            lambda_rg: 0.0,
            gamma0: 1.0 / 500.0,
            k2_period: 30,
            lr: 1e-3,
            lr_decay: 0.997,
            warmup_epochs: 0,
            dynamics_off_epochs: 0,
            batch_size: 16,
            max_epochs: 5000,
            patience: 200,
            seed: 0,
            shard_size: 8,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Plan(m.to_string()));
        if !matches!(self.strategy, 1 | 2) {
            return bad("strategy must be 1 or 2");
        }
        if !(self.gamma0 > 0.0 && self.gamma0 <= 1.0) {
            return bad("gamma0 must lie in (0, 1]");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.k2_period == 0 || self.batch_size == 0 || self.shard_size == 0 {
            return bad("k2_period, batch_size and shard_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        self.weights(1, 1)?.validate()?;
        Ok(())
    }

    /// Autoregressive weight at a 1-based epoch: `min(1, epoch * gamma0)`.
    pub fn gamma_at(&self, epoch: usize) -> f64 {
        if self.strategy == 1 {
            return 0.0;
        }
        (epoch as f64 * self.gamma0).min(1.0)
    }

    /// Autoregressive window at a 1-based epoch:
    /// `min(F, 1 + floor(epoch / period))`.
    pub fn k2_at(&self, epoch: usize, intervals: usize) -> usize {
        if self.strategy == 1 {
            return 1;
        }
        (1 + epoch / self.k2_period).min(intervals.max(1))
    }

    /// Learning rate at a 1-based epoch, decay and warmup included.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let e = epoch.max(1);
        let decayed = self.lr * self.lr_decay.powi(e as i32 - 1);
        if self.warmup_epochs > 0 && e <= self.warmup_epochs {
            decayed * e as f64 / self.warmup_epochs as f64
        } else {
            decayed
        }
    }

    /// Weights for a 1-based epoch on trajectories with `intervals` steps.
    pub fn weights(&self, epoch: usize, intervals: usize) -> Result<LossWeights, TrainError> {
        let dyn_on = epoch > self.dynamics_off_epochs;
        let on = |v: f64| if dyn_on { v } else { 0.0 };
        let w = LossWeights {
            alpha: self.alpha,
            beta: on(1.0),
            gamma: on(self.gamma_at(epoch)),
            delta: on(self.delta),
            lambda_rg: self.lambda_rg,
            k1: 1,
            k2: self.k2_at(epoch, intervals),
        };
        w.validate()?;
        Ok(w)
    }
}
