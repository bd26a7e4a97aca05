use super::ModelError;

/// Coefficients of an explicit Runge-Kutta scheme.
///
/// `matrix[k][l]` is non-zero only for `l < k`; stage `k` evaluates the
/// right-hand side at `eps + dt * sum_l matrix[k][l] * b_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct ButcherTableau {
    matrix: Vec<Vec<f64>>,
    weights: Vec<f64>,
    nodes: Vec<f64>,
}

impl ButcherTableau {
    pub fn new(
        matrix: Vec<Vec<f64>>,
        weights: Vec<f64>,
        nodes: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let q = weights.len();
        if q == 0 || matrix.len() != q || nodes.len() != q {
            return Err(ModelError::Config("tableau dimensions disagree".into()));
        }
        for (k, row) in matrix.iter().enumerate() {
            if row.len() != q {
                return Err(ModelError::Config(format!(
                    "tableau row {} has {} entries",
                    k,
                    row.len()
                )));
            }
            if row[k..].iter().any(|&a| a != 0.0) {
                return Err(ModelError::Config(format!(
                    "tableau row {} is not strictly lower triangular",
                    k
                )));
            }
        }
        let wsum: f64 = weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-12 {
            return Err(ModelError::Config(format!(
                "weights sum to {}, not 1",
                wsum
            )));
        }
        Ok(Self {
            matrix,
            weights,
            nodes,
        })
    }

    /// Built-in scheme of the given stage: 1 Euler, 2 midpoint, 3 Kutta's
    /// third-order rule, 4 classic RK4.
    pub fn for_stage(q: usize) -> Result<Self, ModelError> {
        match q {
            1 => Self::new(vec![vec![0.0]], vec![1.0], vec![0.0]),
            2 => Self::new(
                vec![vec![0.0, 0.0], vec![0.5, 0.0]],
                vec![0.0, 1.0],
                vec![0.0, 0.5],
            ),
            3 => Self::new(
                vec![
                    vec![0.0, 0.0, 0.0],
                    vec![0.5, 0.0, 0.0],
                    vec![-1.0, 2.0, 0.0],
                ],
                vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
                vec![0.0, 0.5, 1.0],
            ),
            4 => Self::new(
                vec![
                    vec![0.0, 0.0, 0.0, 0.0],
                    vec![0.5, 0.0, 0.0, 0.0],
                    vec![0.0, 0.5, 0.0, 0.0],
                    vec![0.0, 0.0, 1.0, 0.0],
                ],
                vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
                vec![0.0, 0.5, 0.5, 1.0],
            ),
            _ => Err(ModelError::Config(format!(
                "no built-in tableau for stage {}",
                q
            ))),
        }
    }

    pub fn stages(&self) -> usize {
        self.weights.len()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// One step on plain vectors; reference path for tests and tools.
    pub fn step_fn(&self, y: &[f64], dt: f64, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut stages: Vec<Vec<f64>> = Vec::with_capacity(self.stages());
        for row in &self.matrix {
            let mut arg = y.to_vec();
            for (a, b) in row.iter().zip(&stages) {
                if *a != 0.0 {
                    arg.iter_mut().zip(b).for_each(|(x, bv)| *x += dt * a * bv);
                }
            }
            stages.push(f(&arg));
        }
        let mut out = y.to_vec();
        for (h, b) in self.weights.iter().zip(&stages) {
            if *h != 0.0 {
                out.iter_mut().zip(b).for_each(|(x, bv)| *x += dt * h * bv);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_consistent() {
        for q in 1..=4 {
            let t = ButcherTableau::for_stage(q).unwrap();
            assert_eq!(t.stages(), q);
            // row sums equal the nodes
            for (row, c) in t.matrix().iter().zip(t.nodes()) {
                assert!((row.iter().sum::<f64>() - c).abs() < 1e-15);
            }
        }
        assert!(ButcherTableau::for_stage(5).is_err());
    }

    #[test]
    fn rejects_implicit_and_inconsistent() {
        assert!(ButcherTableau::new(vec![vec![0.5]], vec![1.0], vec![0.5]).is_err());
        assert!(ButcherTableau::new(vec![vec![0.0]], vec![0.9], vec![0.0]).is_err());
    }

    #[test]
    fn rk4_matches_exponential() {
        let t = ButcherTableau::for_stage(4).unwrap();
        let y = t.step_fn(&[1.0], 0.1, |y| vec![-y[0]]);
        assert!((y[0] - (-0.1f64).exp()).abs() < 1e-7);
        assert!((y[0] - 0.9048375).abs() < 1e-7);
    }
}
