use std::rc::Rc;

use crate::autodiff::{Tape, Tensor, Var};

use super::network::{self, Decoder, Dynamics, Encoder};
use super::params::{Bound, ParamStore};
use super::processor::rk_step_var;
use super::{ButcherTableau, ModelConfig, ModelError};

type Result<T> = std::result::Result<T, ModelError>;

/// Latent vector together with the time and parameters it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub values: Vec<f64>,
    pub time: f64,
    pub params: Vec<f64>,
}

/// Encoder, latent dynamics with its Runge-Kutta processor, decoder.
#[derive(Clone, Debug)]
pub struct SurrogateModel {
    config: ModelConfig,
    params: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
    dynamics: Dynamics,
    tableau: ButcherTableau,
}

impl SurrogateModel {
    /// Fresh model with Kaiming-uniform weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (params, encoder, decoder, dynamics) = network::build(&config, seed)?;
        let tableau = ButcherTableau::for_stage(config.rk_stage)?;
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            dynamics,
            tableau,
        })
    }

    /// Rebuilds a model around stored parameters; names and shapes must
    /// match what `config` produces.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.names() != params.names() {
            return Err(ModelError::Config(
                "parameter names do not match the model config".into(),
            ));
        }
        for (name, (a, b)) in params
            .names()
            .iter()
            .zip(model.params.tensors().iter().zip(params.tensors()))
        {
            if a.shape() != b.shape() {
                return Err(ModelError::Shape(format!(
                    "parameter {} has shape {:?}, config expects {:?}",
                    name,
                    b.shape(),
                    a.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn tableau(&self) -> &ButcherTableau {
        &self.tableau
    }

    /// Replaces the processor scheme (the stored config follows).
    pub fn set_rk_stage(&mut self, q: usize) -> Result<()> {
        self.tableau = ButcherTableau::for_stage(q)?;
        self.config.rk_stage = q;
        Ok(())
    }

    /// Parameters on a tape, trainable or frozen.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        self.params.bind(tape, trainable)
    }

    /// `[B, m, N(, N)] -> [B, latent]`
    pub fn encode_var<'t>(&self, p: &Bound<'t>, fields: Var<'t>) -> Result<Var<'t>> {
        self.encoder.forward(p, fields)
    }

    /// `[B, latent] -> [B, m, N(, N)]`
    pub fn decode_var<'t>(&self, p: &Bound<'t>, eps: Var<'t>) -> Result<Var<'t>> {
        self.decoder.forward(p, eps)
    }

    /// Latent time derivative for a batch; `mu` is `[B, z]`.
    pub fn f_theta_var<'t>(&self, p: &Bound<'t>, eps: Var<'t>, mu: Var<'t>) -> Result<Var<'t>> {
        self.dynamics.forward(p, eps, mu)
    }

    /// One processor application with a step size per row.
    pub fn step_var<'t>(
        &self,
        p: &Bound<'t>,
        eps: Var<'t>,
        mu: Var<'t>,
        dt: &Rc<Vec<f64>>,
    ) -> Result<Var<'t>> {
        rk_step_var(&self.tableau, eps, dt, |e| self.dynamics.forward(p, e, mu))
    }

    /// Fails when any row of `eps` exceeds the divergence bound.
    pub fn check_divergence(&self, eps: &Tensor, step: usize) -> Result<()> {
        let (rows, n) = (eps.shape()[0], eps.shape().get(1).copied().unwrap_or(1));
        for r in 0..rows {
            let norm = eps.data()[r * n..(r + 1) * n]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if !(norm <= self.config.divergence_bound) {
                return Err(ModelError::Divergence { step, norm });
            }
        }
        Ok(())
    }

    fn field_batch(&self, fields: &Tensor) -> Result<()> {
        let want = self.config.field_shape();
        let s = fields.shape();
        if s.len() != want.len() + 1 || s[1..] != want[..] {
            return Err(ModelError::Shape(format!(
                "expected fields [B, {:?}], got {:?}",
                want, s
            )));
        }
        Ok(())
    }

    fn mu_batch(&self, rows: usize, mu: &[f64]) -> Result<Tensor> {
        let z = self.config.param_dim;
        if mu.len() != z * rows {
            return Err(ModelError::ParamDim {
                expected: z,
                got: mu.len() / rows.max(1),
            });
        }
        Ok(Tensor::new(&[rows, z], mu.to_vec())?)
    }

    /// Encodes a batch of fields `[B, m, N(, N)]` to `[B, latent]`.
    pub fn encode_batch(&self, fields: &Tensor) -> Result<Tensor> {
        self.field_batch(fields)?;
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let out = self.encode_var(&p, tape.constant(fields.clone()))?;
        Ok((*out.value()).clone())
    }

    /// Decodes a batch `[B, latent]` to `[B, m, N(, N)]`.
    pub fn decode_batch(&self, eps: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let out = self.decode_var(&p, tape.constant(eps.clone()))?;
        Ok((*out.value()).clone())
    }

    /// Encodes one field `[m, N(, N)]`.
    pub fn encode(&self, field: &Tensor, time: f64, mu: &[f64]) -> Result<LatentState> {
        let mut shape = vec![1];
        shape.extend_from_slice(field.shape());
        let eps = self.encode_batch(&field.clone().reshaped(&shape)?)?;
        if mu.len() != self.config.param_dim {
            return Err(ModelError::ParamDim {
                expected: self.config.param_dim,
                got: mu.len(),
            });
        }
        Ok(LatentState {
            values: eps.into_data(),
            time,
            params: mu.to_vec(),
        })
    }

    /// Decodes one latent vector to a field `[m, N(, N)]`.
    pub fn decode(&self, eps: &[f64]) -> Result<Tensor> {
        if eps.len() != self.config.latent_dim {
            return Err(ModelError::Shape(format!(
                "latent vector has length {}, model expects {}",
                eps.len(),
                self.config.latent_dim
            )));
        }
        let out = self.decode_batch(&Tensor::new(&[1, eps.len()], eps.to_vec())?)?;
        Ok(out.reshaped(&self.config.field_shape())?)
    }

    /// `f_theta(eps, mu)` for a single latent vector.
    pub fn f_theta(&self, eps: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let e = tape.constant(Tensor::new(&[1, eps.len()], eps.to_vec())?);
        let m = tape.constant(self.mu_batch(1, mu)?);
        let out = self.f_theta_var(&p, e, m)?;
        Ok(out.value().data().to_vec())
    }

    /// Advances a state by `dt` with one processor application.
    pub fn rk_step(&self, state: &LatentState, dt: f64) -> Result<LatentState> {
        let mut out = self.rollout(state, &[dt])?;
        Ok(out.pop().expect("rollout returns at least one state"))
    }

    /// `eps_i = pi(eps_{i-1}, mu, dt_i)` for every step size; the result
    /// starts with the input state.
    pub fn rollout(&self, state: &LatentState, dts: &[f64]) -> Result<Vec<LatentState>> {
        let mu = self.mu_batch(1, &state.params)?;
        let eps0 = Tensor::new(&[1, state.values.len()], state.values.clone())?;
        let traj = self.rollout_batch(&eps0, &mu, dts)?;
        let mut t = state.time;
        let mut out = Vec::with_capacity(traj.len());
        for (i, eps) in traj.into_iter().enumerate() {
            if i > 0 {
                t += dts[i - 1];
            }
            out.push(LatentState {
                values: eps.into_data(),
                time: t,
                params: state.params.clone(),
            });
        }
        Ok(out)
    }

    /// Batched rollout: `eps0 [B, latent]`, `mu [B, z]`, one shared step
    /// sequence. Returns `dts.len() + 1` tensors `[B, latent]`.
    pub fn rollout_batch(&self, eps0: &Tensor, mu: &Tensor, dts: &[f64]) -> Result<Vec<Tensor>> {
        let rows = eps0.shape()[0];
        self.check_divergence(eps0, 0)?;
        let mut out = Vec::with_capacity(dts.len() + 1);
        out.push(eps0.clone());
        for (i, &dt) in dts.iter().enumerate() {
            // Fresh tape per step keeps memory flat over long rollouts.
            let tape = Tape::new();
            let p = self.bind(&tape, false);
            let e = tape.constant(out[i].clone());
            let m = tape.constant(mu.clone());
            let next = self.step_var(&p, e, m, &Rc::new(vec![dt; rows]))?;
            let next = (*next.value()).clone();
            self.check_divergence(&next, i + 1)?;
            out.push(next);
        }
        Ok(out)
    }

    /// Encode the initial field once, roll out, decode every state:
    /// `[F + 1, m, N(, N)]`.
    pub fn predict_fields(&self, s0: &Tensor, mu: &[f64], dts: &[f64]) -> Result<Tensor> {
        let mut shape = vec![1];
        shape.extend_from_slice(s0.shape());
        let batch =
            self.predict_batch(&s0.clone().reshaped(&shape)?, &self.mu_batch(1, mu)?, dts)?;
        let mut out_shape = vec![dts.len() + 1];
        out_shape.extend(self.config.field_shape());
        Ok(batch.reshaped(&out_shape)?)
    }

    /// Batched prediction: `s0 [B, m, ..]`, `mu [B, z]` ->
    /// `[B, F + 1, m, ..]`.
    pub fn predict_batch(&self, s0: &Tensor, mu: &Tensor, dts: &[f64]) -> Result<Tensor> {
        self.field_batch(s0)?;
        let rows = s0.shape()[0];
        if mu.shape() != [rows, self.config.param_dim] {
            return Err(ModelError::ParamDim {
                expected: self.config.param_dim,
                got: mu.shape().get(1).copied().unwrap_or(0),
            });
        }
        let eps0 = self.encode_batch(s0)?;
        let traj = self.rollout_batch(&eps0, mu, dts)?;
        let lat = self.config.latent_dim;
        let frames = traj.len();
        // reorder [frame][row] -> [row][frame] so each trajectory is contiguous
        let mut stacked = Vec::with_capacity(rows * frames * lat);
        for r in 0..rows {
            for eps in &traj {
                stacked.extend_from_slice(&eps.data()[r * lat..(r + 1) * lat]);
            }
        }
        let decoded = self.decode_batch(&Tensor::new(&[rows * frames, lat], stacked)?)?;
        let mut shape = vec![rows, frames];
        shape.extend(self.config.field_shape());
        Ok(decoded.reshaped(&shape)?)
    }
}
