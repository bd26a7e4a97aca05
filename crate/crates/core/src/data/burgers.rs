use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::sinusoid::{require_periodic_1d, spectral_refine};
use super::{DataError, GridSpec, TimeGrid};

/// Reference-solver settings for the viscous Burgers equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurgersOptions {
    /// Spatial refinement factor; also the minimum number of RK4 sub-steps
    /// per output interval.
    pub oversample: usize,
    /// Fixed sub-step count per output interval; `None` picks the smallest
    /// stable count that is at least `oversample`.
    pub substeps: Option<usize>,
    /// Advective Courant number bound.
    pub courant: f64,
    /// Bound on `(nu / pi) dt / h^2`.
    pub diffusion_number: f64,
}

impl Default for BurgersOptions {
    fn default() -> Self {
        Self {
            oversample: 8,
            substeps: None,
            courant: 0.4,
            diffusion_number: 0.25,
        }
    }
}

/// `d/dt s + d/dx (s^2 / 2) - (nu / pi) d2/dx2 s = 0` on a periodic grid,
/// refined by `oversample`. See [`gen_burgers_with`].
pub fn gen_burgers(
    grid: &GridSpec,
    times: &TimeGrid,
    nu: f64,
    ic: &[f64],
    oversample: usize,
) -> Result<Vec<Vec<f64>>, DataError> {
    gen_burgers_with(
        grid,
        times,
        nu,
        ic,
        BurgersOptions {
            oversample,
            ..BurgersOptions::default()
        },
    )
}

/// Finite-volume solve: MUSCL reconstruction with minmod slopes, local
/// Lax-Friedrichs flux, central diffusion, classic RK4 in time. The
/// initial condition is interpolated spectrally onto the fine grid and the
/// fine solution is restricted to `grid` by symmetric cell averaging, which
/// preserves the discrete integral. Frame 0 is `ic` itself.
pub fn gen_burgers_with(
    grid: &GridSpec,
    times: &TimeGrid,
    nu: f64,
    ic: &[f64],
    opts: BurgersOptions,
) -> Result<Vec<Vec<f64>>, DataError> {
    require_periodic_1d(grid)?;
    let n = grid.points[0];
    if ic.len() != n {
        return Err(DataError::Shape(format!(
            "initial condition has {} values, grid has {}",
            ic.len(),
            n
        )));
    }
    if opts.oversample == 0 {
        return Err(DataError::Solver("oversample must be at least 1".into()));
    }
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(DataError::Solver(format!(
            "diffusion coefficient must be non-negative, got {}",
            nu
        )));
    }
    let r = opts.oversample;
    let h = grid.spacing(0) / r as f64;
    let diff = nu / PI;
    let mut u = spectral_refine(ic, r);
    let amax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut solver = Solver::new(u.len(), h, diff);
    let mut frames = Vec::with_capacity(times.frames());
    frames.push(ic.to_vec());
    for dt_out in times.steps() {
        let mut limit = f64::INFINITY;
        if amax > 0.0 {
            limit = limit.min(opts.courant * h / amax);
        }
        if diff > 0.0 {
            limit = limit.min(opts.diffusion_number * h * h / diff);
        }
        let required = (dt_out / limit).ceil().max(1.0) as usize;
        let steps = match opts.substeps {
            Some(s) if s < required => {
                return Err(DataError::Cfl {
                    requested: s,
                    required,
                })
            }
            Some(s) => s,
            None => required.max(r),
        };
        let dt = dt_out / steps as f64;
        for _ in 0..steps {
            solver.rk4(&mut u, dt);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite("Burgers solver".into()));
        }
        frames.push(restrict(&u, r));
    }
    Ok(frames)
}

struct Solver {
    h: f64,
    diff: f64,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    flux: Vec<f64>,
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

impl Solver {
    fn new(n: usize, h: f64, diff: f64) -> Self {
        Self {
            h,
            diff,
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
            flux: vec![0.0; n],
        }
    }

    /// `out = -(F_{i+1/2} - F_{i-1/2}) / h + diff (u_{i+1} - 2 u_i + u_{i-1}) / h^2`
    fn rhs(u: &[f64], out: &mut [f64], flux: &mut [f64], h: f64, diff: f64) {
        let n = u.len();
        let at = |i: isize| u[i.rem_euclid(n as isize) as usize];
        // flux[i] is the flux through the face between cells i and i+1
        for (i, f) in flux.iter_mut().enumerate() {
            let i = i as isize;
            let (um, u0, u1, u2) = (at(i - 1), at(i), at(i + 1), at(i + 2));
            let left = u0 + 0.5 * minmod(u0 - um, u1 - u0);
            let right = u1 - 0.5 * minmod(u1 - u0, u2 - u1);
            let a = left.abs().max(right.abs());
            *f = 0.25 * (left * left + right * right) - 0.5 * a * (right - left);
        }
        for i in 0..n {
            let prev = if i == 0 { n - 1 } else { i - 1 };
            let next = if i + 1 == n { 0 } else { i + 1 };
            let adv = -(flux[i] - flux[prev]) / h;
            let lap = ((u[next] - u[i]) - (u[i] - u[prev])) / (h * h);
            out[i] = adv + diff * lap;
        }
    }

    fn rk4(&mut self, u: &mut [f64], dt: f64) {
        let (h, diff) = (self.h, self.diff);
        let [k1, k2, k3, k4] = &mut self.k;
        Self::rhs(u, k1, &mut self.flux, h, diff);
        for ((t, &x), &k) in self.tmp.iter_mut().zip(u.iter()).zip(k1.iter()) {
            *t = x + 0.5 * dt * k;
        }
        Self::rhs(&self.tmp, k2, &mut self.flux, h, diff);
        for ((t, &x), &k) in self.tmp.iter_mut().zip(u.iter()).zip(k2.iter()) {
            *t = x + 0.5 * dt * k;
        }
        Self::rhs(&self.tmp, k3, &mut self.flux, h, diff);
        for ((t, &x), &k) in self.tmp.iter_mut().zip(u.iter()).zip(k3.iter()) {
            *t = x + dt * k;
        }
        Self::rhs(&self.tmp, k4, &mut self.flux, h, diff);
        for (i, x) in u.iter_mut().enumerate() {
            *x += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Average of the fine cells covering each coarse cell (half weight on
/// shared end cells when `r` is even).
fn restrict(fine: &[f64], r: usize) -> Vec<f64> {
    if r == 1 {
        return fine.to_vec();
    }
    let m = fine.len();
    let n = m / r;
    let at = |i: isize| fine[i.rem_euclid(m as isize) as usize];
    (0..n)
        .map(|j| {
            let c = (j * r) as isize;
            let half = (r / 2) as isize;
            let s: f64 = if r % 2 == 1 {
                (-half..=half).map(|o| at(c + o)).sum()
            } else {
                0.5 * (at(c - half) + at(c + half))
                    + (-half + 1..half).map(|o| at(c + o)).sum::<f64>()
            };
            s / r as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_sinusoidal_ic;

    fn setup(n: usize) -> (GridSpec, TimeGrid) {
        (
            GridSpec::periodic_1d(n, 0.0, 1.0).unwrap(),
            TimeGrid::uniform(0.0, 0.5, 6).unwrap(),
        )
    }

    #[test]
    fn constant_state_is_steady() {
        let (g, t) = setup(16);
        let frames = gen_burgers(&g, &t, 0.1, &[0.7; 16], 4).unwrap();
        for f in frames {
            assert!(f.iter().all(|v| (v - 0.7).abs() < 1e-14));
        }
    }

    #[test]
    fn restriction_preserves_sums() {
        let fine: Vec<f64> = (0..24)
            .map(|i| (i as f64 * 0.9).cos() + 0.1 * i as f64)
            .collect();
        for r in [2, 3, 4] {
            let c = restrict(&fine, r);
            let lhs: f64 = c.iter().sum::<f64>() * r as f64;
            assert!((lhs - fine.iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn explicit_substeps_violating_stability_are_reported() {
        let (g, t) = setup(32);
        let ic = sample_sinusoidal_ic(&g, 2, 1).unwrap();
        let opts = BurgersOptions {
            oversample: 4,
            substeps: Some(1),
            ..BurgersOptions::default()
        };
        match gen_burgers_with(&g, &t, 0.01, &ic, opts) {
            Err(DataError::Cfl {
                requested,
                required,
            }) => {
                assert_eq!(requested, 1);
                assert!(required > 1);
            }
            other => panic!("expected a CFL error, got {:?}", other.map(|f| f.len())),
        }
    }

    #[test]
    fn frame_zero_is_the_initial_condition() {
        let (g, t) = setup(32);
        let ic = sample_sinusoidal_ic(&g, 2, 4).unwrap();
        assert_eq!(gen_burgers(&g, &t, 0.01, &ic, 2).unwrap()[0], ic);
    }
}
