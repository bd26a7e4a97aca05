use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{DataError, GridSpec, TimeGrid};

/// One term `A sin(2 pi n x / L + phi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude: f64,
    pub mode: u32,
    pub phase: f64,
}

/// Superposition of sinusoids on a periodic 1D domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidalIc {
    pub waves: Vec<Wave>,
}

impl SinusoidalIc {
    /// Random draw: modes uniform in `1..=max_mode`, amplitudes in
    /// `[0, 1)`, phases in `(0, 2 pi)`.
    pub fn sample(n_waves: usize, max_mode: u32, rng: &mut impl Rng) -> Self {
        let waves = (0..n_waves)
            .map(|_| Wave {
                amplitude: rng.gen_range(0.0..1.0),
                mode: rng.gen_range(1..=max_mode),
                phase: loop {
                    let p = rng.gen_range(0.0..2.0 * PI);
                    if p > 0.0 {
                        break p;
                    }
                },
            })
            .collect();
        Self { waves }
    }

    pub fn eval(&self, x: f64, length: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| w.amplitude * (2.0 * PI * w.mode as f64 * x / length + w.phase).sin())
            .sum()
    }

    /// Samples on a periodic 1D grid.
    pub fn on_grid(&self, grid: &GridSpec) -> Result<Vec<f64>, DataError> {
        require_periodic_1d(grid)?;
        let l = grid.length(0);
        Ok(grid
            .coords(0)
            .iter()
            .map(|&x| self.eval(x - grid.bounds[0].0, l))
            .collect())
    }
}

pub(crate) fn require_periodic_1d(grid: &GridSpec) -> Result<(), DataError> {
    if grid.dims() != 1 || !grid.periodic {
        return Err(DataError::Grid("generator needs a periodic 1D grid".into()));
    }
    Ok(())
}

/// Random sinusoidal initial condition with modes in `1..=8`.
pub fn sample_sinusoidal_ic(
    grid: &GridSpec,
    n_waves: usize,
    seed: u64,
) -> Result<Vec<f64>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SinusoidalIc::sample(n_waves, 8, &mut rng).on_grid(grid)
}

/// Exact transport `s(x, t) = s0(x - zeta t)` of a periodic field, by a
/// phase shift of its discrete Fourier coefficients. Returns one frame per
/// output time.
pub fn gen_advection(
    grid: &GridSpec,
    times: &TimeGrid,
    zeta: f64,
    ic: &[f64],
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
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut spec: Vec<Complex64> = ic.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut spec);
    let l = grid.length(0);
    let t0 = times.t0();
    let mut frames = Vec::with_capacity(times.frames());
    for &t in times.times() {
        if t == t0 {
            frames.push(ic.to_vec());
            continue;
        }
        let shift = zeta * (t - t0) / l;
        let mut buf: Vec<Complex64> = spec
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let kk = if 2 * k > n {
                    k as f64 - n as f64
                } else {
                    k as f64
                };
                let angle = -2.0 * PI * kk * shift;
                if 2 * k == n {
                    // Nyquist mode: keep the result real
                    c * angle.cos()
                } else {
                    c * Complex64::from_polar(1.0, angle)
                }
            })
            .collect();
        inv.process(&mut buf);
        frames.push(buf.iter().map(|c| c.re / n as f64).collect());
    }
    Ok(frames)
}

/// Band-limited interpolation of a periodic field onto `factor` times as
/// many points (zero-padding of the spectrum).
pub(crate) fn spectral_refine(field: &[f64], factor: usize) -> Vec<f64> {
    let n = field.len();
    if factor == 1 {
        return field.to_vec();
    }
    let m = n * factor;
    let mut planner = FftPlanner::<f64>::new();
    let mut spec: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut spec);
    let mut padded = vec![Complex64::new(0.0, 0.0); m];
    for (k, c) in spec.iter().enumerate() {
        if 2 * k < n {
            padded[k] = *c;
        } else if 2 * k > n {
            padded[m - (n - k)] = *c;
        } else {
            // split the Nyquist coefficient symmetrically
            padded[k] = c * 0.5;
            padded[m - k] = c * 0.5;
        }
    }
    planner.plan_fft_inverse(m).process(&mut padded);
    padded.iter().map(|c| c.re / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_wave_is_a_sine() {
        let g = GridSpec::periodic_1d(16, 0.0, 1.0).unwrap();
        let ic = SinusoidalIc {
            waves: vec![Wave {
                amplitude: 1.0,
                mode: 1,
                phase: 0.0,
            }],
        };
        for (v, x) in ic.on_grid(&g).unwrap().iter().zip(g.coords(0)) {
            assert!((v - (2.0 * PI * x).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn seeded_and_zero_mean() {
        let g = GridSpec::periodic_1d(64, 0.0, 1.0).unwrap();
        let a = sample_sinusoidal_ic(&g, 3, 11).unwrap();
        assert_eq!(a, sample_sinusoidal_ic(&g, 3, 11).unwrap());
        assert_ne!(a, sample_sinusoidal_ic(&g, 3, 12).unwrap());
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 1.0 / 64.0);
    }

    #[test]
    fn non_periodic_grid_rejected() {
        let g = GridSpec::square_2d(8, -1.0, 1.0).unwrap();
        assert!(sample_sinusoidal_ic(&g, 1, 0).is_err());
    }

    #[test]
    fn zero_velocity_and_full_period() {
        let g = GridSpec::periodic_1d(32, 0.0, 1.0).unwrap();
        let ic = sample_sinusoidal_ic(&g, 2, 5).unwrap();
        let t = TimeGrid::uniform(0.0, 2.0, 5).unwrap();
        for f in gen_advection(&g, &t, 0.0, &ic).unwrap() {
            assert!(f.iter().zip(&ic).all(|(a, b)| (a - b).abs() < 1e-14));
        }
        let last = gen_advection(&g, &t, 0.5, &ic).unwrap().pop().unwrap();
        assert!(last.iter().zip(&ic).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn shift_matches_analytic_transport() {
        let g = GridSpec::periodic_1d(64, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ic = SinusoidalIc::sample(3, 8, &mut rng);
        let t = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let frames = gen_advection(&g, &t, 0.7, &ic.on_grid(&g).unwrap()).unwrap();
        for (f, &tt) in frames.iter().zip(t.times()) {
            for (v, x) in f.iter().zip(g.coords(0)) {
                assert!((v - ic.eval(x - 0.7 * tt, 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn refinement_interpolates_band_limited_fields() {
        let g = GridSpec::periodic_1d(32, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ic = SinusoidalIc::sample(2, 8, &mut rng);
        let fine = spectral_refine(&ic.on_grid(&g).unwrap(), 4);
        let gf = g.refined(4).unwrap();
        for (v, x) in fine.iter().zip(gf.coords(0)) {
            assert!((v - ic.eval(x, 1.0)).abs() < 1e-12);
        }
    }
}
