//! Central finite-difference gradient checks.
//!
//! The numeric side only ever runs forward passes, so it stays independent
//! of the backward rules it is checking.

use super::{AutodiffError, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Bound on the norm-wise relative error.
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `||analytic - numeric|| / (||analytic|| + ||numeric||)` per input.
    pub rel_errors: Vec<f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences for every input.
///
/// `f` receives a fresh tape and one leaf per input and must return a
/// scalar.
pub fn check_gradients<F>(
    f: F,
    inputs: &[Tensor],
    cfg: GradCheckConfig,
) -> Result<GradCheckReport, AutodiffError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, AutodiffError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, AutodiffError> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&tape, &vars)?;
        out.item()
            .ok_or_else(|| AutodiffError::NonScalarLoss(out.shape()))
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|v| tape.var(v.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get_slice(*var)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = vec![0.0; inputs[k].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[k].data()[j];
            probe[k].data_mut()[j] = orig + cfg.step;
            let plus = eval(&probe)?;
            probe[k].data_mut()[j] = orig - cfg.step;
            let minus = eval(&probe)?;
            probe[k].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * cfg.step);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
            + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        rel_errors.push(if scale > 0.0 { diff / scale } else { 0.0 });
    }
    Ok(GradCheckReport {
        rel_errors,
        tolerance: cfg.tolerance,
    })
}

/// Scalar probe `sum(out * weights)` used to check tensor-valued ops.
pub fn project<'t>(out: Var<'t>, weights: &Tensor) -> Result<Var<'t>, AutodiffError> {
    let w = out.tape().constant(weights.clone().reshaped(&out.shape())?);
    out.mul(w)?.sum()
}

/// Builds a scalar from leaves on a tape.
pub type ScalarFn = for<'t> fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, AutodiffError>;

/// One differentiable op wrapped as a scalar function for checking.
pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    /// Inputs drawn from `[0.5, 1.5]` instead of `[-1, 1]` (keeps divisors away from zero).
    pub positive: Vec<bool>,
    pub f: ScalarFn,
}

impl OpCase {
    fn new(name: &'static str, shapes: &[&[usize]], f: ScalarFn) -> Self {
        Self {
            name,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            positive: vec![false; shapes.len()],
            f,
        }
    }

    /// Random inputs for this case from a seeded generator.
    pub fn sample_inputs(&self, seed: u64) -> Vec<Tensor> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        self.shapes
            .iter()
            .zip(&self.positive)
            .map(|(s, pos)| {
                let n: usize = s.iter().product();
                let data = (0..n)
                    .map(|_| {
                        if *pos {
                            rng.gen_range(0.5..1.5)
                        } else {
                            rng.gen_range(-1.0..1.0)
                        }
                    })
                    .collect();
                Tensor::new(s, data).expect("shape matches sample count")
            })
            .collect()
    }
}

// Fixed projection weights so every output element matters.
fn proj<'t>(out: Var<'t>) -> Result<Var<'t>, AutodiffError> {
    let n: usize = out.shape().iter().product();
    let w = Tensor::from_vec(
        (0..n)
            .map(|i| 0.3 + ((i * 7919) % 13) as f64 / 10.0)
            .collect(),
    );
    project(out, &w)
}

/// Every op the tape records, each exercised through a scalar projection.
pub fn registered_ops() -> Vec<OpCase> {
    let mut div = OpCase::new("div", &[&[3, 4], &[3, 4]], |_, v| proj(v[0].div(v[1])?));
    div.positive[1] = true;
    vec![
        OpCase::new("add", &[&[3, 4], &[3, 4]], |_, v| proj(v[0].add(v[1])?)),
        OpCase::new("sub", &[&[3, 4], &[3, 4]], |_, v| proj(v[0].sub(v[1])?)),
        OpCase::new("mul", &[&[3, 4], &[3, 4]], |_, v| proj(v[0].mul(v[1])?)),
        div,
        OpCase::new("matmul", &[&[3, 5], &[5, 2]], |_, v| {
            proj(v[0].matmul(v[1])?)
        }),
        OpCase::new("add_bias", &[&[2, 3, 4], &[3]], |_, v| {
            proj(v[0].add_bias(v[1])?)
        }),
        OpCase::new("conv1d_s1", &[&[2, 2, 8], &[3, 2, 5]], |_, v| {
            proj(v[0].conv1d(v[1], 1, 2)?)
        }),
        OpCase::new("conv1d_s2", &[&[2, 2, 8], &[3, 2, 3]], |_, v| {
            proj(v[0].conv1d(v[1], 2, 1)?)
        }),
        OpCase::new("conv2d_s1", &[&[1, 2, 5, 5], &[2, 2, 3, 3]], |_, v| {
            proj(v[0].conv2d(v[1], 1, 1)?)
        }),
        OpCase::new("conv2d_s2", &[&[2, 1, 6, 6], &[2, 1, 3, 3]], |_, v| {
            proj(v[0].conv2d(v[1], 2, 1)?)
        }),
        OpCase::new("conv_transpose1d_s2", &[&[2, 3, 4], &[3, 2, 4]], |_, v| {
            proj(v[0].conv_transpose1d(v[1], 2, 1, 0)?)
        }),
        OpCase::new(
            "conv_transpose1d_s2_odd",
            &[&[1, 2, 4], &[2, 2, 5]],
            |_, v| proj(v[0].conv_transpose1d(v[1], 2, 2, 1)?),
        ),
        OpCase::new("conv_transpose1d_s1", &[&[2, 2, 6], &[2, 1, 3]], |_, v| {
            proj(v[0].conv_transpose1d(v[1], 1, 1, 0)?)
        }),
        OpCase::new(
            "conv_transpose2d_s2",
            &[&[1, 2, 3, 3], &[2, 2, 4, 4]],
            |_, v| proj(v[0].conv_transpose2d(v[1], 2, 1, 0)?),
        ),
        OpCase::new("gelu", &[&[4, 5]], |_, v| proj(v[0].gelu()?)),
        OpCase::new("reshape", &[&[2, 6]], |_, v| proj(v[0].reshape(&[3, 4])?)),
        OpCase::new("flatten", &[&[2, 2, 3]], |_, v| proj(v[0].flatten()?)),
        OpCase::new("concat_axis0", &[&[2, 3], &[1, 3]], |_, v| {
            proj(Var::concat(&[v[0], v[1]], 0)?)
        }),
        OpCase::new("concat_axis1", &[&[2, 3], &[2, 2]], |_, v| {
            proj(Var::concat(&[v[0], v[1]], 1)?)
        }),
        OpCase::new("narrow", &[&[5, 3]], |_, v| proj(v[0].narrow(1, 3)?)),
        OpCase::new("scale", &[&[3, 3]], |_, v| proj(v[0].scale(-1.7)?)),
        OpCase::new("scale_rows", &[&[3, 2]], |_, v| {
            proj(v[0].scale_rows(std::rc::Rc::new(vec![0.5, -2.0, 3.0]))?)
        }),
        OpCase::new("norm_l1_rows", &[&[3, 4]], |_, v| {
            proj(v[0].norm_l1_rows()?)
        }),
        OpCase::new("norm_l2_rows", &[&[3, 4]], |_, v| {
            proj(v[0].norm_l2_rows()?)
        }),
        OpCase::new("sum", &[&[3, 4]], |_, v| v[0].sum()?.scale(1.3)),
        OpCase::new("mean", &[&[3, 4]], |_, v| v[0].mean()?.scale(1.3)),
        OpCase::new("mean_gelu", &[&[10]], |_, v| v[0].gelu()?.mean()),
    ]
}
