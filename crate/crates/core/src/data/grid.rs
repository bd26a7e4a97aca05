use serde::{Deserialize, Serialize};

use super::DataError;

/// Uniform grid over a box, one or two spatial axes.
///
/// Periodic axes hold `points` samples at `a + j h` with `h = (b - a) / points`
/// (the right end is the image of the left one). Non-periodic axes include
/// both ends, `h = (b - a) / (points - 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: Vec<usize>,
    pub bounds: Vec<(f64, f64)>,
    pub periodic: bool,
}

impl GridSpec {
    pub fn new(
        points: Vec<usize>,
        bounds: Vec<(f64, f64)>,
        periodic: bool,
    ) -> Result<Self, DataError> {
        let g = Self {
            points,
            bounds,
            periodic,
        };
        g.validate()?;
        Ok(g)
    }

    /// Periodic `[a, b)` with `n` points.
    pub fn periodic_1d(n: usize, a: f64, b: f64) -> Result<Self, DataError> {
        Self::new(vec![n], vec![(a, b)], true)
    }

    /// `[a, b]^2`, both ends included.
    pub fn square_2d(n: usize, a: f64, b: f64) -> Result<Self, DataError> {
        Self::new(vec![n, n], vec![(a, b), (a, b)], false)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(1..=2).contains(&self.points.len()) || self.points.len() != self.bounds.len() {
            return Err(DataError::Grid(format!(
                "need 1 or 2 axes with matching bounds, got {} points / {} bounds",
                self.points.len(),
                self.bounds.len()
            )));
        }
        for (&n, &(a, b)) in self.points.iter().zip(&self.bounds) {
            if n < 2 {
                return Err(DataError::Grid(format!(
                    "axis needs at least 2 points, got {}",
                    n
                )));
            }
            if !(b > a) || !a.is_finite() || !b.is_finite() {
                return Err(DataError::Grid(format!("bad axis bounds ({}, {})", a, b)));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.points.len()
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.bounds[axis].1 - self.bounds[axis].0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let n = self.points[axis] as f64;
        if self.periodic {
            self.length(axis) / n
        } else {
            self.length(axis) / (n - 1.0)
        }
    }

    /// Coordinates along one axis.
    pub fn coords(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing(axis);
        let a = self.bounds[axis].0;
        (0..self.points[axis]).map(|j| a + j as f64 * h).collect()
    }

    /// Same domain with `factor` times as many intervals per axis.
    pub fn refined(&self, factor: usize) -> Result<Self, DataError> {
        let points = self
            .points
            .iter()
            .map(|&n| {
                if self.periodic {
                    n * factor
                } else {
                    (n - 1) * factor + 1
                }
            })
            .collect();
        Self::new(points, self.bounds.clone(), self.periodic)
    }
}

/// Output times `t_0 < t_1 < ... < t_F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, DataError> {
        if times.len() < 2 {
            return Err(DataError::Time("need at least two times (F >= 1)".into()));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DataError::Time(
                "times must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { times })
    }

    /// `frames` equally spaced times from `t0` to `t_end` inclusive.
    pub fn uniform(t0: f64, t_end: f64, frames: usize) -> Result<Self, DataError> {
        if frames < 2 {
            return Err(DataError::Time("need at least two frames".into()));
        }
        let dt = (t_end - t0) / (frames - 1) as f64;
        Self::new((0..frames).map(|i| t0 + i as f64 * dt).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    /// Final index `F`.
    pub fn final_index(&self) -> usize {
        self.times.len() - 1
    }

    pub fn frames(&self) -> usize {
        self.times.len()
    }

    /// Step sizes `t_i - t_{i-1}`, `F` entries.
    pub fn steps(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Each interval split into `factor` equal sub-steps.
    pub fn refined(&self, factor: usize) -> Result<Self, DataError> {
        if factor == 0 {
            return Err(DataError::Time("refinement factor must be positive".into()));
        }
        let mut t = Vec::with_capacity(self.final_index() * factor + 1);
        for w in self.times.windows(2) {
            let dt = (w[1] - w[0]) / factor as f64;
            t.extend((0..factor).map(|k| w[0] + k as f64 * dt));
        }
        t.push(*self.times.last().expect("non-empty"));
        Self::new(t)
    }
}

/// Declared range of one PDE parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    pub fn new(name: impl Into<String>, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            min,
            max,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.min..=self.max).contains(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_spacing() {
        let g = GridSpec::periodic_1d(256, 0.0, 1.0).unwrap();
        assert_eq!(g.spacing(0), 1.0 / 256.0);
        assert_eq!(g.coords(0)[255], 255.0 / 256.0);
    }

    #[test]
    fn closed_spacing_includes_both_ends() {
        let g = GridSpec::square_2d(5, -1.0, 1.0).unwrap();
        assert_eq!(g.coords(1), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(g.refined(2).unwrap().points, vec![9, 9]);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridSpec::periodic_1d(1, 0.0, 1.0).is_err());
        assert!(GridSpec::periodic_1d(8, 1.0, 1.0).is_err());
    }

    #[test]
    fn time_grid() {
        let t = TimeGrid::uniform(0.0, 2.0, 41).unwrap();
        assert_eq!(t.final_index(), 40);
        assert!((t.steps()[3] - 0.05).abs() < 1e-15);
        let r = t.refined(5).unwrap();
        assert_eq!(r.final_index(), 200);
        for i in 0..=40 {
            assert!((r.times()[5 * i] - t.times()[i]).abs() < 1e-14);
        }
        assert!(TimeGrid::new(vec![0.0, 0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0]).is_err());
    }
}
