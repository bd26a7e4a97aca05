//! Independent oracles shared by the integration tests and the acceptance
//! suite.
#![allow(dead_code)]

use std::rc::Rc;

use latent_pde::autodiff::{Tape, Tensor};
use latent_pde::data::{
    gen_advection, gen_burgers, gen_molenkamp, GridSpec, MolenkampParams, SinusoidalIc, TimeGrid,
    Wave,
};
use latent_pde::model::{rk_step_var, ButcherTableau};

/// Fixed smooth initial condition with modes 1 and 3.
pub fn smooth_ic() -> SinusoidalIc {
    SinusoidalIc {
        waves: vec![
            Wave { amplitude: 0.8, mode: 1, phase: 0.4 },
            Wave { amplitude: 0.5, mode: 3, phase: 2.1 },
        ],
    }
}

/// `log2` of successive error ratios.
pub fn orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Max-norm residual of `s_t + zeta s_x` on generated advection data, with
/// central differences in space and time; `dt = h / 2`.
pub fn advection_residual(points: usize, zeta: f64) -> f64 {
    let grid = GridSpec::periodic_1d(points, 0.0, 1.0).unwrap();
    let h = grid.spacing(0);
    let dt = 0.5 * h;
    let t = 0.3;
    let times = TimeGrid::new(vec![0.0, t - dt, t, t + dt]).unwrap();
    let ic = smooth_ic().on_grid(&grid).unwrap();
    let frames = gen_advection(&grid, &times, zeta, &ic).unwrap();
    let (prev, mid, next) = (&frames[1], &frames[2], &frames[3]);
    (0..points)
        .map(|j| {
            let l = mid[(j + points - 1) % points];
            let r = mid[(j + 1) % points];
            ((next[j] - prev[j]) / (2.0 * dt) + zeta * (r - l) / (2.0 * h)).abs()
        })
        .fold(0.0, f64::max)
}

pub fn molenkamp_case() -> MolenkampParams {
    MolenkampParams {
        l1: 10.0,
        l2: 3.0,
        l3: 2.0,
        l4: 0.05,
        l5: -0.05,
    }
}

/// Max-norm residual of `q_t + u q_x + v q_y + l3 q` with `u = -2 pi y`,
/// `v = 2 pi x`, on interior points of a `(n + 1)^2` grid over `[-1, 1]^2`;
/// central differences, `dt = h / 2`.
pub fn molenkamp_residual(n: usize) -> f64 {
    use std::f64::consts::PI;
    let p = molenkamp_case();
    let grid = GridSpec::square_2d(n + 1, -1.0, 1.0).unwrap();
    let h = grid.spacing(0);
    let dt = 0.5 * h;
    let t = 0.35;
    let times = TimeGrid::new(vec![t - dt, t, t + dt]).unwrap();
    let frames = gen_molenkamp(&grid, &times, p).unwrap();
    let xs = grid.coords(0);
    let ys = grid.coords(1);
    let m = n + 1;
    let at = |f: &Vec<f64>, i: usize, j: usize| f[i * m + j];
    let mut worst = 0.0f64;
    for i in 1..n {
        for j in 1..n {
            let (x, y) = (xs[i], ys[j]);
            let qt = (at(&frames[2], i, j) - at(&frames[0], i, j)) / (2.0 * dt);
            let qx = (at(&frames[1], i + 1, j) - at(&frames[1], i - 1, j)) / (2.0 * h);
            let qy = (at(&frames[1], i, j + 1) - at(&frames[1], i, j - 1)) / (2.0 * h);
            let r = qt - 2.0 * PI * y * qx + 2.0 * PI * x * qy + p.l3 * at(&frames[1], i, j);
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// Largest deviation of `peak(t) / peak(0)` from `exp(-l3 t)`, the peak
/// taken at the transported centre.
pub fn molenkamp_peak_decay_error(p: MolenkampParams) -> f64 {
    let (cx, cy) = p.center(0.0);
    let peak0 = p.eval(cx, cy, 0.0);
    (1..=20)
        .map(|k| {
            let t = k as f64 * 0.05;
            let (cx, cy) = p.center(t);
            (p.eval(cx, cy, t) / peak0 - (-p.l3 * t).exp()).abs()
        })
        .fold(0.0, f64::max)
}

/// Burgers run on a 64-point grid with a positive-mean smooth IC.
pub fn burgers_run(nu: f64, oversample: usize, t_end: f64, frames: usize) -> Vec<Vec<f64>> {
    let grid = GridSpec::periodic_1d(64, 0.0, 1.0).unwrap();
    let times = TimeGrid::uniform(0.0, t_end, frames).unwrap();
    let ic: Vec<f64> = smooth_ic().on_grid(&grid).unwrap().iter().map(|v| v + 1.0).collect();
    gen_burgers(&grid, &times, nu, &ic, oversample).unwrap()
}

/// Largest relative drift of the trapezoid integral `h * sum(s)` (periodic)
/// from its initial value.
pub fn integral_drift(frames: &[Vec<f64>]) -> f64 {
    let h = 1.0 / frames[0].len() as f64;
    let integral = |f: &Vec<f64>| h * f.iter().sum::<f64>();
    let i0 = integral(&frames[0]);
    frames
        .iter()
        .map(|f| ((integral(f) - i0) / i0).abs())
        .fold(0.0, f64::max)
}

fn l2_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `(||s4 - s8||, ||s8 - s16||)` for oversample factors 4, 8 and 16.
pub fn burgers_self_convergence(nu: f64) -> (f64, f64) {
    let s4 = burgers_run(nu, 4, 0.5, 6);
    let s8 = burgers_run(nu, 8, 0.5, 6);
    let s16 = burgers_run(nu, 16, 0.5, 6);
    (l2_diff(&s4, &s8), l2_diff(&s8, &s16))
}

pub const RK_STEPS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

/// Global error at `t = 1` of `y' = -y`, `y(0) = 1`, stepped through the
/// differentiable Runge-Kutta path.
pub fn rk_decay_error(q: usize, dt: f64) -> f64 {
    let tab = ButcherTableau::for_stage(q).unwrap();
    let tape = Tape::new();
    let mut y = tape.constant(Tensor::new(&[1, 1], vec![1.0]).unwrap());
    let n = (1.0 / dt).round() as usize;
    let step = Rc::new(vec![dt]);
    for _ in 0..n {
        y = rk_step_var(&tab, y, &step, |e| Ok(e.scale(-1.0)?)).unwrap();
    }
    (y.item().unwrap() - (-1.0f64).exp()).abs()
}

/// Least-squares slope of `log(error)` against `log(dt)`.
pub fn rk_order(q: usize) -> f64 {
    let pts: Vec<(f64, f64)> = RK_STEPS
        .iter()
        .map(|&dt| (dt.ln(), rk_decay_error(q, dt).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Error of a single RK4 step of `y' = -y` at `dt = 0.1` against `exp(-0.1)`.
pub fn rk4_single_step_error() -> f64 {
    let tab = ButcherTableau::for_stage(4).unwrap();
    let tape = Tape::new();
    let y = tape.constant(Tensor::new(&[1, 1], vec![1.0]).unwrap());
    let y = rk_step_var(&tab, y, &Rc::new(vec![0.1]), |e| Ok(e.scale(-1.0)?)).unwrap();
    (y.item().unwrap() - (-0.1f64).exp()).abs()
}

/// Direct triple loop over (initial condition, parameter instance, time
/// index `1..=F`) of `||s - s~|| / ||s||`, averaged with `1 / (N_u N_mu F)`.
/// Arrays are `[n_mu][n_u][F + 1][len]`.
pub fn brute_force_nrmse(pred: &[Vec<Vec<Vec<f64>>>], truth: &[Vec<Vec<Vec<f64>>>]) -> f64 {
    let n_mu = truth.len();
    let n_u = truth[0].len();
    let f = truth[0][0].len() - 1;
    let mut total = 0.0;
    for m in 0..n_mu {
        for u in 0..n_u {
            for j in 1..=f {
                let s = &truth[m][u][j];
                let p = &pred[m][u][j];
                let mut num = 0.0;
                let mut den = 0.0;
                for k in 0..s.len() {
                    num += (s[k] - p[k]) * (s[k] - p[k]);
                    den += s[k] * s[k];
                }
                total += num.sqrt() / den.sqrt();
            }
        }
    }
    total / (n_mu * n_u * f) as f64
}
