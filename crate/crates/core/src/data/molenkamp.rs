use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{DataError, GridSpec, ParamRange, TimeGrid};

/// Parameters of the rotating, decaying Gaussian
/// `q = l1 * 0.01^(l2 r^2) * exp(-l3 t)` transported by `u = -2 pi y`,
/// `v = 2 pi x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MolenkampParams {
    /// Peak height.
    pub l1: f64,
    /// Width exponent.
    pub l2: f64,
    /// Decay rate.
    pub l3: f64,
    /// Offset of the initial centre from `(-1/2, 0)`.
    pub l4: f64,
    pub l5: f64,
}

impl MolenkampParams {
    pub fn ranges() -> Vec<ParamRange> {
        vec![
            ParamRange::new("l1", 1.0, 20.0),
            ParamRange::new("l2", 2.0, 4.0),
            ParamRange::new("l3", 1.0, 5.0),
            ParamRange::new("l4", -0.1, 0.1),
            ParamRange::new("l5", -0.1, 0.1),
        ]
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.l1, self.l2, self.l3, self.l4, self.l5]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self, DataError> {
        match *v {
            [l1, l2, l3, l4, l5] => Ok(Self { l1, l2, l3, l4, l5 }),
            _ => Err(DataError::Shape(format!(
                "Molenkamp needs 5 parameters, got {}",
                v.len()
            ))),
        }
    }

    /// Centre of the Gaussian: the initial centre `(l4 - 1/2, l5)` rotated
    /// counter-clockwise by `2 pi t`.
    pub fn center(&self, t: f64) -> (f64, f64) {
        let (x0, y0) = (self.l4 - 0.5, self.l5);
        let (s, c) = (2.0 * PI * t).sin_cos();
        (c * x0 - s * y0, s * x0 + c * y0)
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        let (cx, cy) = self.center(t);
        let r2 = (x - cx).powi(2) + (y - cy).powi(2);
        self.l1 * 0.01f64.powf(self.l2 * r2) * (-self.l3 * t).exp()
    }
}

/// Closed-form trajectory on a 2D grid; frame layout `[x][y]`, x slowest.
/// Out-of-range parameters are logged, not rejected.
pub fn gen_molenkamp(
    grid: &GridSpec,
    times: &TimeGrid,
    p: MolenkampParams,
) -> Result<Vec<Vec<f64>>, DataError> {
    if grid.dims() != 2 {
        return Err(DataError::Grid("Molenkamp needs a 2D grid".into()));
    }
    for (r, v) in MolenkampParams::ranges().iter().zip(p.to_vec()) {
        if !r.contains(v) {
            log::warn!(
                "Molenkamp parameter {} = {} outside [{}, {}]",
                r.name,
                v,
                r.min,
                r.max
            );
        }
    }
    let xs = grid.coords(0);
    let ys = grid.coords(1);
    Ok(times
        .times()
        .iter()
        .map(|&t| {
            xs.iter()
                .flat_map(|&x| ys.iter().map(move |&y| p.eval(x, y, t)))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: MolenkampParams = MolenkampParams {
        l1: 7.0,
        l2: 3.0,
        l3: 2.0,
        l4: 0.05,
        l5: -0.08,
    };

    #[test]
    fn initial_frame_is_the_initial_gaussian() {
        let g = GridSpec::square_2d(9, -1.0, 1.0).unwrap();
        let t = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let f0 = &gen_molenkamp(&g, &t, P).unwrap()[0];
        let c = g.coords(0);
        for (i, &x) in c.iter().enumerate() {
            for (j, &y) in c.iter().enumerate() {
                let h2 = (x - P.l4 + 0.5).powi(2) + (y - P.l5).powi(2);
                let want = P.l1 * 0.01f64.powf(P.l2 * h2);
                assert!((f0[i * 9 + j] - want).abs() <= 1e-14 * want);
            }
        }
    }

    #[test]
    fn full_turn_returns_to_start() {
        let (x, y) = P.center(1.0);
        assert!((x - (P.l4 - 0.5)).abs() < 1e-12 && (y - P.l5).abs() < 1e-12);
    }

    #[test]
    fn needs_2d_grid() {
        let g = GridSpec::periodic_1d(8, 0.0, 1.0).unwrap();
        let t = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        assert!(gen_molenkamp(&g, &t, P).is_err());
    }
}
