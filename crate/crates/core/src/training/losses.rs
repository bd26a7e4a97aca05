//! Loss terms on a batch of trajectories.
//!
//! Latents are stored time-major: a batch of `B` trajectories with `F + 1`
//! frames is one `[(F + 1) B, latent]` variable whose row `i B + b` is
//! frame `i` of trajectory `b`, so every frame is a contiguous block.

use std::rc::Rc;

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::TrajectoryDataset;
use crate::model::{Bound, SurrogateModel};

use super::{LossWeights, TrainError};

type Result<T> = std::result::Result<T, TrainError>;

/// Advances stacked latent blocks by one processor application.
pub trait Processor<'t> {
    /// `eps` holds `blocks.len()` blocks of `B` rows; block `k` covers
    /// interval `blocks[k]`. `dt` has one step size per row.
    fn advance(&self, eps: Var<'t>, blocks: &[usize], dt: &Rc<Vec<f64>>) -> Result<Var<'t>>;
}

/// The surrogate's own processor, with `mu` repeated for every block.
pub struct ModelProcessor<'a, 't> {
    pub model: &'a SurrogateModel,
    pub params: &'a Bound<'t>,
    /// `[B, z]`
    pub mu: Var<'t>,
}

impl<'t> Processor<'t> for ModelProcessor<'_, 't> {
    fn advance(&self, eps: Var<'t>, blocks: &[usize], dt: &Rc<Vec<f64>>) -> Result<Var<'t>> {
        let mu = if blocks.len() == 1 {
            self.mu
        } else {
            Var::concat(&vec![self.mu; blocks.len()], 0)?
        };
        Ok(self.model.step_var(self.params, eps, mu, dt)?)
    }
}

/// One batch of trajectories in time-major layout.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[(F + 1) B, m, N(, N)]`
    pub fields: Tensor,
    /// `[B, z]`
    pub mu: Tensor,
    /// Interval lengths, `F` values.
    pub dts: Vec<f64>,
    pub size: usize,
}

impl Batch {
    pub fn from_dataset(ds: &TrajectoryDataset, rows: &[usize]) -> Result<Self> {
        let b = rows.len();
        if b == 0 {
            return Err(TrainError::Shape("empty batch".into()));
        }
        let frames = ds.frames();
        let mut data = Vec::with_capacity(frames * b * ds.frame_len());
        for i in 0..frames {
            for &r in rows {
                data.extend_from_slice(ds.frame(r, i));
            }
        }
        let mut shape = vec![frames * b];
        shape.extend(ds.frame_shape());
        let z = ds.param_dim();
        let mu: Vec<f64> = rows.iter().flat_map(|&r| ds.params_of(r).to_vec()).collect();
        Ok(Self {
            fields: Tensor::new(&shape, data)?,
            mu: Tensor::new(&[b, z], mu)?,
            dts: ds.times.steps(),
            size: b,
        })
    }

    pub fn intervals(&self) -> usize {
        self.dts.len()
    }
}

/// Per-row relative L2 error `||target - pred|| / ||target||`.
pub fn rel_err_rows<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    Ok(target.sub(pred)?.norm_l2_rows()?.div(target.norm_l2_rows()?)?)
}

/// Reconstruction terms `||s - psi(phi(s))|| / ||s||`, one per field row.
pub fn recon_terms<'t>(decoded: Var<'t>, fields: &Tensor) -> Result<Var<'t>> {
    let (rows, len) = fields.rows();
    let mut inv = Vec::with_capacity(rows);
    for (r, chunk) in fields.data().chunks(len.max(1)).enumerate() {
        let n = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0) {
            return Err(TrainError::ZeroNormTarget { row: r });
        }
        inv.push(1.0 / n);
    }
    let target = decoded.tape().constant(fields.clone());
    Ok(target.sub(decoded)?.norm_l2_rows()?.scale_rows(Rc::new(inv))?)
}

fn dt_rows(dts: &[f64], blocks: &[usize], b: usize) -> Rc<Vec<f64>> {
    Rc::new(
        blocks
            .iter()
            .flat_map(|&k| std::iter::repeat(dts[k]).take(b))
            .collect(),
    )
}

/// `k` processor applications on windows `j = 0..n`, window `j` starting
/// at interval `j`.
fn run_windows<'t>(
    proc: &dyn Processor<'t>,
    mut state: Var<'t>,
    n: usize,
    k: usize,
    b: usize,
    dts: &[f64],
) -> Result<Var<'t>> {
    for s in 0..k {
        let blocks: Vec<usize> = (0..n).map(|j| j + s).collect();
        state = proc.advance(state, &blocks, &dt_rows(dts, &blocks, b))?;
    }
    Ok(state)
}

/// Chained rollout from frame 0 covering targets `1..k`; gradients flow
/// through the whole chain.
fn early_chain<'t>(
    proc: &dyn Processor<'t>,
    latents: Var<'t>,
    k: usize,
    b: usize,
    dts: &[f64],
) -> Result<Vec<Var<'t>>> {
    let mut out = Vec::new();
    let mut state = latents.narrow(0, b)?;
    for s in 0..k.saturating_sub(1) {
        state = proc.advance(state, &[s], &dt_rows(dts, &[s], b))?;
        out.push(rel_err_rows(state, latents.narrow((s + 1) * b, b)?)?);
    }
    Ok(out)
}

fn check_window(k: usize, f: usize, name: &str) -> Result<()> {
    if k == 0 || k > f {
        return Err(TrainError::Plan(format!("{name} = {k} outside 1..={f}")));
    }
    Ok(())
}

/// Teacher-forcing terms, one per (target frame `i >= 1`, trajectory):
/// `k1` steps from the true latent `k1` frames earlier, or from frame 0
/// when `i < k1`.
pub fn tf_terms<'t>(
    proc: &dyn Processor<'t>,
    latents: Var<'t>,
    b: usize,
    dts: &[f64],
    k1: usize,
) -> Result<Var<'t>> {
    let f = dts.len();
    check_window(k1, f, "k1")?;
    let n = f + 1 - k1;
    let pred = run_windows(proc, latents.narrow(0, n * b)?, n, k1, b, dts)?;
    let mut terms = early_chain(proc, latents, k1, b, dts)?;
    terms.push(rel_err_rows(pred, latents.narrow(k1 * b, n * b)?)?);
    Ok(Var::concat(&terms, 0)?)
}

/// Autoregressive terms. Forward values follow the full rollout from the
/// encoded initial condition; for `i > k2` the rolled state at `i - k2`
/// is cut from the graph, so gradients see only the last `k2` steps.
pub fn ar_terms<'t>(
    proc: &dyn Processor<'t>,
    latents: Var<'t>,
    b: usize,
    dts: &[f64],
    k2: usize,
) -> Result<Var<'t>> {
    let f = dts.len();
    check_window(k2, f, "k2")?;
    let n = f + 1 - k2;
    // window 0 starts at the encoded initial condition, later windows at
    // cut rollout predictions
    let eps0 = latents.narrow(0, b)?;
    let mut starts = vec![eps0];
    let mut state = eps0.stop_gradient();
    for s in 0..n - 1 {
        state = proc.advance(state, &[s], &dt_rows(dts, &[s], b))?.stop_gradient();
        starts.push(state);
    }
    let start = if n == 1 {
        eps0
    } else {
        Var::concat(&starts, 0)?
    };
    let pred = run_windows(proc, start, n, k2, b, dts)?;
    let mut terms = early_chain(proc, latents, k2, b, dts)?;
    terms.push(rel_err_rows(pred, latents.narrow(k2 * b, n * b)?)?);
    Ok(Var::concat(&terms, 0)?)
}

/// Two-substep terms: from the true latent at `i - 1`, step by `split`
/// then by `dt - split`, compare with the latent at `i`. `split` has one
/// value per time-major row (`F B` values).
pub fn timegen_terms<'t>(
    proc: &dyn Processor<'t>,
    latents: Var<'t>,
    b: usize,
    dts: &[f64],
    split: &[f64],
) -> Result<Var<'t>> {
    let f = dts.len();
    if split.len() != f * b {
        return Err(TrainError::Shape(format!(
            "{} split points for {} intervals of {} rows",
            split.len(),
            f,
            b
        )));
    }
    let blocks: Vec<usize> = (0..f).collect();
    let first = Rc::new(split.to_vec());
    let second = Rc::new(
        split
            .iter()
            .enumerate()
            .map(|(r, d)| (dts[r / b] - d).max(0.0))
            .collect::<Vec<_>>(),
    );
    let mid = proc.advance(latents.narrow(0, f * b)?, &blocks, &first)?;
    let pred = proc.advance(mid, &blocks, &second)?;
    rel_err_rows(pred, latents.narrow(b, f * b)?)
}

/// `lambda_rg * sum_i ||eps_i||_1 / latent`, averaged over the batch.
pub fn reg_term<'t>(latents: Var<'t>, b: usize, lambda_rg: f64) -> Result<Var<'t>> {
    let lat = latents.shape().get(1).copied().unwrap_or(1);
    Ok(latents
        .norm_l1_rows()?
        .sum()?
        .scale(lambda_rg / (lat as f64 * b as f64))?)
}

fn latent_variance(t: &Tensor) -> f64 {
    let (rows, n) = t.rows();
    if rows < 2 || n == 0 {
        return 0.0;
    }
    let d = t.data();
    let mut acc = 0.0;
    for c in 0..n {
        let mean = (0..rows).map(|r| d[r * n + c]).sum::<f64>() / rows as f64;
        acc += (0..rows).map(|r| (d[r * n + c] - mean).powi(2)).sum::<f64>() / rows as f64;
    }
    acc / n as f64
}

/// Values of the individual terms; skipped terms read 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub l1: f64,
    pub l2t: f64,
    pub l2a: f64,
    pub l3: f64,
    pub lrg: f64,
    pub total: f64,
    /// Mean over latent components of the variance across batch rows; a
    /// vanishing value flags the constant-output trivial minimum.
    pub latent_var: f64,
}

impl LossParts {
    /// `self += other * w`, for reducing shards.
    pub fn add_scaled(&mut self, other: &LossParts, w: f64) {
        self.l1 += w * other.l1;
        self.l2t += w * other.l2t;
        self.l2a += w * other.l2a;
        self.l3 += w * other.l3;
        self.lrg += w * other.lrg;
        self.total += w * other.total;
        self.latent_var += w * other.latent_var;
    }
}

/// Weighted training loss on one batch. `split` is required when
/// `w.delta > 0`.
pub fn train_loss<'t>(
    model: &SurrogateModel,
    params: &Bound<'t>,
    tape: &'t Tape,
    batch: &Batch,
    w: &LossWeights,
    split: Option<&[f64]>,
) -> Result<(Var<'t>, LossParts)> {
    w.validate()?;
    let b = batch.size;
    let fields = tape.constant(batch.fields.clone());
    let latents = model.encode_var(params, fields)?;
    let proc = ModelProcessor {
        model,
        params,
        mu: tape.constant(batch.mu.clone()),
    };
    let mut parts = LossParts {
        latent_var: latent_variance(&latents.value()),
        ..LossParts::default()
    };
    let mut total: Option<Var<'t>> = None;
    let mut add = |term: Var<'t>, weight: f64| -> Result<f64> {
        let v = term.item().unwrap_or(f64::NAN);
        let scaled = term.scale(weight)?;
        total = Some(match total {
            Some(t) => t.add(scaled)?,
            None => scaled,
        });
        Ok(v)
    };
    if w.alpha > 0.0 {
        let dec = model.decode_var(params, latents)?;
        parts.l1 = add(recon_terms(dec, &batch.fields)?.mean()?, w.alpha)?;
    }
    if w.beta > 0.0 {
        let t = tf_terms(&proc, latents, b, &batch.dts, w.k1)?;
        parts.l2t = add(t.mean()?, w.beta)?;
    }
    if w.gamma > 0.0 {
        let k2 = w.k2.min(batch.intervals());
        let t = ar_terms(&proc, latents, b, &batch.dts, k2)?;
        parts.l2a = add(t.mean()?, w.gamma)?;
    }
    if w.delta > 0.0 {
        let split = split.ok_or_else(|| TrainError::Plan("time-split draws missing".into()))?;
        let t = timegen_terms(&proc, latents, b, &batch.dts, split)?;
        parts.l3 = add(t.mean()?, w.delta)?;
    }
    if w.lambda_rg > 0.0 {
        parts.lrg = add(reg_term(latents, b, w.lambda_rg)?, 1.0)?;
    }
    let total = total.ok_or_else(|| TrainError::Plan("no active loss term".into()))?;
    parts.total = total.item().unwrap_or(f64::NAN);
    Ok((total, parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `f(eps) = c` per row block; Euler step.
    struct Shift<'t> {
        tape: &'t Tape,
        c: f64,
    }

    impl<'t> Processor<'t> for Shift<'t> {
        fn advance(&self, eps: Var<'t>, _: &[usize], dt: &Rc<Vec<f64>>) -> Result<Var<'t>> {
            let ones = self.tape.constant(Tensor::full(&eps.shape(), self.c));
            Ok(eps.add(ones.scale_rows(Rc::clone(dt))?)?)
        }
    }

    /// Latents moving with constant velocity `c` in every component.
    fn linear_latents(tape: &Tape, f: usize, b: usize, c: f64, dt: f64) -> Var<'_> {
        let mut data = Vec::new();
        for i in 0..=f {
            for r in 0..b {
                let shift = c * dt * i as f64;
                data.extend([1.0 + r as f64 + shift, 2.0 + shift]);
            }
        }
        tape.var(Tensor::new(&[(f + 1) * b, 2], data).unwrap())
    }

    #[test]
    fn identity_on_static_latents_is_zero() {
        let tape = Tape::new();
        let lat = tape.var(Tensor::full(&[12, 3], 0.7));
        let proc = Shift { tape: &tape, c: 0.0 };
        let dts = vec![0.1; 3];
        for k in 1..=3 {
            assert_eq!(tf_terms(&proc, lat, 3, &dts, k).unwrap().mean().unwrap().item(), Some(0.0));
            assert_eq!(ar_terms(&proc, lat, 3, &dts, k).unwrap().mean().unwrap().item(), Some(0.0));
        }
    }

    #[test]
    fn exact_linear_dynamics_vanish() {
        let tape = Tape::new();
        let (f, b, c, dt) = (4, 2, 0.5, 0.25);
        let lat = linear_latents(&tape, f, b, c, dt);
        let proc = Shift { tape: &tape, c };
        let dts = vec![dt; f];
        for k in 1..=f {
            assert!(tf_terms(&proc, lat, b, &dts, k).unwrap().mean().unwrap().item().unwrap() < 1e-14);
        }
        let split: Vec<f64> = (0..f * b).map(|r| dt * (r % 3) as f64 / 3.0).collect();
        let t = timegen_terms(&proc, lat, b, &dts, &split).unwrap();
        assert!(t.mean().unwrap().item().unwrap() < 1e-14);
    }

    #[test]
    fn term_counts() {
        let tape = Tape::new();
        let lat = tape.var(Tensor::full(&[15, 2], 1.0));
        let proc = Shift { tape: &tape, c: 1.0 };
        let dts = vec![0.1; 4];
        for k in 1..=4 {
            assert_eq!(tf_terms(&proc, lat, 3, &dts, k).unwrap().shape(), vec![12]);
            assert_eq!(ar_terms(&proc, lat, 3, &dts, k).unwrap().shape(), vec![12]);
        }
        assert!(tf_terms(&proc, lat, 3, &dts, 5).is_err());
    }

    #[test]
    fn recon_zero_prediction_is_one() {
        let tape = Tape::new();
        let fields = Tensor::new(&[2, 1, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, 4.0]).unwrap();
        let zero = tape.var(Tensor::zeros(&[2, 1, 3]));
        let t = recon_terms(zero, &fields).unwrap();
        assert_eq!(t.value().data(), &[1.0, 1.0]);
        let bad = Tensor::new(&[1, 1, 2], vec![0.0, 0.0]).unwrap();
        let z = tape.var(Tensor::zeros(&[1, 1, 2]));
        assert!(matches!(recon_terms(z, &bad), Err(TrainError::ZeroNormTarget { row: 0 })));
    }

    #[test]
    fn regularizer_on_ones() {
        let tape = Tape::new();
        let (f, b, lat) = (5, 3, 4);
        let ones = tape.var(Tensor::full(&[(f + 1) * b, lat], 1.0));
        let v = reg_term(ones, b, 0.001).unwrap().item().unwrap();
        assert!((v - 0.001 * (f + 1) as f64).abs() < 1e-15);
    }
}
