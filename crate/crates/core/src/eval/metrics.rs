use serde::{Deserialize, Serialize};

use super::EvalError;

/// Frames whose true norm falls below this are left out of the averages.
pub const MIN_FRAME_NORM: f64 = 1e-12;

/// Relative errors `||s - s~|| / ||s||` on a (trajectory, time) table and
/// their averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nrmse {
    /// Mean over every counted cell.
    pub overall: f64,
    /// Mean per time index `1..=F` (entry `j - 1` is time index `j`).
    pub per_time: Vec<f64>,
    /// Mean per trajectory.
    pub per_trajectory: Vec<f64>,
    /// `cells[r][j - 1]`; `None` for excluded zero-norm frames.
    pub cells: Vec<Vec<Option<f64>>>,
    /// Number of excluded frames.
    pub excluded: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Relative L2 error of one frame, `None` when the true frame is (almost)
/// zero.
pub fn frame_rel_error(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let den = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(den >= MIN_FRAME_NORM) {
        return None;
    }
    let num = pred
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Some(num / den)
}

/// nRMSE of predicted against true trajectories, both laid out as
/// `[n, frames, frame_len]`. Frame 0 (the initial condition) is not scored.
pub fn nrmse(
    pred: &[f64],
    truth: &[f64],
    n: usize,
    frames: usize,
    frame_len: usize,
) -> Result<Nrmse, EvalError> {
    if pred.len() != truth.len() || truth.len() != n * frames * frame_len {
        return Err(EvalError::Shape(format!(
            "prediction has {} values, truth {}, expected {}",
            pred.len(),
            truth.len(),
            n * frames * frame_len
        )));
    }
    if frames < 2 {
        return Err(EvalError::Shape("need at least one frame after t0".into()));
    }
    let f = frames - 1;
    let mut cells = Vec::with_capacity(n);
    let mut excluded = 0;
    for r in 0..n {
        let row: Vec<Option<f64>> = (1..frames)
            .map(|j| {
                let at = (r * frames + j) * frame_len;
                let e = frame_rel_error(&pred[at..at + frame_len], &truth[at..at + frame_len]);
                if e.is_none() {
                    excluded += 1;
                }
                e
            })
            .collect();
        cells.push(row);
    }
    if excluded == n * f {
        return Err(EvalError::ZeroNorm);
    }
    let overall = mean(cells.iter().flatten().flatten().copied());
    let per_time = (0..f)
        .map(|j| mean(cells.iter().filter_map(|row| row[j])))
        .collect();
    let per_trajectory = cells
        .iter()
        .map(|row| mean(row.iter().flatten().copied()))
        .collect();
    Ok(Nrmse {
        overall,
        per_time,
        per_trajectory,
        cells,
        excluded,
    })
}

/// `|s - s~| / ||s||` per grid value.
pub fn relative_error_field(pred: &[f64], truth: &[f64]) -> Result<Vec<f64>, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::Shape(format!(
            "frames have {} and {} values",
            pred.len(),
            truth.len()
        )));
    }
    let den = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(den >= MIN_FRAME_NORM) {
        return Err(EvalError::ZeroNorm);
    }
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).abs() / den)
        .collect())
}

/// Per-trajectory errors grouped by parameter vector, in order of first
/// appearance.
pub fn group_by_params(per_trajectory: &[f64], params: &[Vec<f64>]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut groups: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for (e, mu) in per_trajectory.iter().zip(params) {
        match groups.iter_mut().find(|(m, _)| m == mu) {
            Some((_, v)) => v.push(*e),
            None => groups.push((mu.clone(), vec![*e])),
        }
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_doubled() {
        let truth: Vec<f64> = (0..24).map(|i| (i as f64 + 1.0).sin()).collect();
        let r = nrmse(&truth, &truth, 2, 3, 4).unwrap();
        assert_eq!(r.overall, 0.0);
        let doubled: Vec<f64> = truth.iter().map(|v| 2.0 * v).collect();
        let r = nrmse(&doubled, &truth, 2, 3, 4).unwrap();
        assert_eq!(r.overall, 1.0);
        assert!(r.cells.iter().flatten().all(|c| *c == Some(1.0)));
    }

    #[test]
    fn zero_frames_are_excluded_and_counted() {
        let mut truth = vec![1.0; 12];
        truth[4..8].fill(0.0);
        let r = nrmse(&truth, &truth, 1, 3, 4).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.cells[0][0], None);
        assert!(nrmse(&[0.0; 8], &[0.0; 8], 1, 2, 4).is_err());
    }

    #[test]
    fn error_field_norm_is_relative_error() {
        let t = [3.0, -4.0, 1.0];
        let p = [2.5, -3.0, 1.5];
        let e = relative_error_field(&p, &t).unwrap();
        let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - frame_rel_error(&p, &t).unwrap()).abs() < 1e-15);
        assert!(e.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn grouping_keeps_first_appearance_order() {
        let g = group_by_params(&[0.1, 0.2, 0.3], &[vec![2.0], vec![1.0], vec![2.0]]);
        assert_eq!(g, vec![(vec![2.0], vec![0.1, 0.3]), (vec![1.0], vec![0.2])]);
    }
}
