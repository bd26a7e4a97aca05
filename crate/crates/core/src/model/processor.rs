use std::rc::Rc;

use crate::autodiff::Var;

use super::{ButcherTableau, ModelError};

/// One explicit Runge-Kutta step on a batch of latent rows `[B, latent]`,
/// with a separate step size per row.
///
/// `f` is the right-hand side; every stage is recorded on the tape so the
/// step is differentiable end to end.
pub fn rk_step_var<'t, F>(
    tableau: &ButcherTableau,
    eps: Var<'t>,
    dt: &Rc<Vec<f64>>,
    mut f: F,
) -> Result<Var<'t>, ModelError>
where
    F: FnMut(Var<'t>) -> Result<Var<'t>, ModelError>,
{
    let rows = eps.shape().first().copied().unwrap_or(0);
    if dt.len() != rows {
        return Err(ModelError::Shape(format!(
            "{} step sizes for {} latent rows",
            dt.len(),
            rows
        )));
    }
    if let Some(&bad) = dt.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(ModelError::InvalidStep(bad));
    }
    let scaled = |c: f64| Rc::new(dt.iter().map(|d| d * c).collect::<Vec<_>>());
    let mut stages: Vec<Var<'t>> = Vec::with_capacity(tableau.stages());
    for row in tableau.matrix() {
        let mut arg = eps;
        for (&a, &b) in row.iter().zip(&stages) {
            if a != 0.0 {
                arg = arg.add(b.scale_rows(scaled(a))?)?;
            }
        }
        stages.push(f(arg)?);
    }
    let mut out = eps;
    for (&h, &b) in tableau.weights().iter().zip(&stages) {
        if h != 0.0 {
            out = out.add(b.scale_rows(scaled(h))?)?;
        }
    }
    Ok(out)
}
