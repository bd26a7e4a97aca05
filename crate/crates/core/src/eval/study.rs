use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{denormalize, normalize, NormStats, PresetSpec, TrajectoryDataset};
use crate::model::{ModelConfig, SurrogateModel};
use crate::training::{EpochLog, TrainPlan, Trainer};

use super::metrics::{group_by_params, nrmse, Nrmse};
use super::EvalError;

type Result<T> = std::result::Result<T, EvalError>;

/// Trajectories per rollout task; fixed so results do not depend on the
/// worker count.
const ROLLOUT_CHUNK: usize = 32;

/// Test metrics for one rollout step size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Rollout step is the training step divided by this.
    pub factor: usize,
    /// Rollout step sizes.
    pub dts: Vec<f64>,
    /// Output times `t_1..=t_F'`.
    pub times: Vec<f64>,
    pub nrmse: Nrmse,
    /// nRMSE restricted to the training time indices.
    pub at_training_times: f64,
    /// Physical parameter vector of every trajectory.
    pub params: Vec<Vec<f64>>,
}

impl EvalReport {
    /// Per-trajectory errors grouped by parameter value.
    pub fn per_param(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        group_by_params(&self.nrmse.per_trajectory, &self.params)
    }

    /// Mean error per parameter value.
    pub fn per_param_mean(&self) -> Vec<(Vec<f64>, f64)> {
        self.per_param()
            .into_iter()
            .map(|(mu, v)| {
                let m = v.iter().filter(|x| x.is_finite()).sum::<f64>() / v.len() as f64;
                (mu, m)
            })
            .collect()
    }
}

fn stats_of(ds: &TrajectoryDataset) -> NormStats {
    ds.norm.clone().unwrap_or_else(NormStats::identity)
}

/// `ds` in physical units.
fn physical(ds: &TrajectoryDataset) -> Result<TrajectoryDataset> {
    if ds.normalized {
        Ok(denormalize(ds, &stats_of(ds))?)
    } else {
        Ok(ds.clone())
    }
}

/// Rolls the model out from every stored initial condition with the step
/// sizes `dts` and returns physical-unit predictions `[n, F' + 1, len]`.
pub fn predict_dataset(
    model: &SurrogateModel,
    ds: &TrajectoryDataset,
    dts: &[f64],
) -> Result<Vec<f64>> {
    let cfg = model.config();
    if ds.frame_shape() != cfg.field_shape() {
        return Err(EvalError::Incompatible(format!(
            "dataset frames are {:?}, model expects {:?}",
            ds.frame_shape(),
            cfg.field_shape()
        )));
    }
    if ds.param_dim() != cfg.param_dim {
        return Err(EvalError::Incompatible(format!(
            "dataset has {} parameters, model expects {}",
            ds.param_dim(),
            cfg.param_dim
        )));
    }
    let stats = stats_of(ds);
    let input = if ds.normalized {
        ds.clone()
    } else {
        normalize(ds, &stats)?
    };
    let rows: Vec<usize> = (0..ds.len()).collect();
    let chunks: Vec<Vec<f64>> = rows
        .par_chunks(ROLLOUT_CHUNK)
        .map(|chunk| -> Result<Vec<f64>> {
            let mut s0 = Vec::with_capacity(chunk.len() * ds.frame_len());
            let mut mu = Vec::with_capacity(chunk.len() * ds.param_dim());
            for &r in chunk {
                s0.extend_from_slice(input.frame(r, 0));
                mu.extend_from_slice(input.params_of(r));
            }
            let mut shape = vec![chunk.len()];
            shape.extend(ds.frame_shape());
            let pred = model.predict_batch(
                &Tensor::new(&shape, s0)?,
                &Tensor::new(&[chunk.len(), ds.param_dim()], mu)?,
                dts,
            )?;
            let mut out = pred.into_data();
            stats.denormalize_fields(&mut out)?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Test nRMSE with the step refined by `factor`, against truth regenerated
/// at the refined times (`factor == 1` uses the stored frames).
pub fn evaluate(model: &SurrogateModel, test: &TrajectoryDataset, factor: usize) -> Result<EvalReport> {
    if factor == 0 {
        return Err(EvalError::Shape("refinement factor must be positive".into()));
    }
    let phys = physical(test)?;
    let truth = if factor == 1 {
        phys.clone()
    } else {
        PresetSpec::refined_truth(&phys, factor)?
    };
    let dts = truth.times.steps();
    let pred = predict_dataset(model, &phys, &dts)?;
    let frames = truth.frames();
    let report = nrmse(&pred, truth.fields(), truth.len(), frames, truth.frame_len())?;
    let train_cols: Vec<f64> = report
        .cells
        .iter()
        .flat_map(|row| (1..=(frames - 1) / factor).filter_map(move |j| row[j * factor - 1]))
        .collect();
    let at_training_times = train_cols.iter().sum::<f64>() / train_cols.len().max(1) as f64;
    Ok(EvalReport {
        factor,
        times: truth.times.times()[1..].to_vec(),
        dts,
        nrmse: report,
        at_training_times,
        params: (0..phys.len()).map(|r| phys.params_of(r).to_vec()).collect(),
    })
}

/// [`evaluate`] for every refinement factor.
pub fn eval_time_generalization(
    model: &SurrogateModel,
    test: &TrajectoryDataset,
    factors: &[usize],
) -> Result<Vec<EvalReport>> {
    factors.iter().map(|&a| evaluate(model, test, a)).collect()
}

/// What an ablation varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    /// Runge-Kutta stage, same at training and inference.
    RkStage,
    /// Weight of the time-generalization term.
    L3,
}

impl AblationAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rk-stage" => Some(Self::RkStage),
            "l3" => Some(Self::L3),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::RkStage => "rk-stage",
            Self::L3 => "l3",
        }
    }

    /// The default matrix for the axis.
    pub fn default_values(&self) -> Vec<f64> {
        match self {
            Self::RkStage => vec![1.0, 2.0, 3.0, 4.0],
            Self::L3 => vec![0.0, 1.0],
        }
    }
}

/// Shared configuration of every run in an ablation matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSetup {
    pub model: ModelConfig,
    pub model_seed: u64,
    pub plan: TrainPlan,
    pub factors: Vec<usize>,
}

/// One trained variant and its reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationVariant {
    pub value: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub reports: Vec<EvalReport>,
}

impl AblationVariant {
    /// nRMSE at the largest factor over nRMSE at the smallest.
    pub fn degradation(&self) -> Option<f64> {
        let lo = self.reports.iter().min_by_key(|r| r.factor)?;
        let hi = self.reports.iter().max_by_key(|r| r.factor)?;
        Some(hi.nrmse.overall / lo.nrmse.overall)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub variants: Vec<AblationVariant>,
}

/// Trains and evaluates one variant per value with identical seeds and
/// data. Run directories go under `out/<axis>-<value>` when `out` is set.
pub fn run_ablation(
    setup: &AblationSetup,
    axis: AblationAxis,
    values: &[f64],
    train: &TrajectoryDataset,
    val: &TrajectoryDataset,
    test: &TrajectoryDataset,
    out: Option<&Path>,
) -> Result<AblationReport> {
    let mut variants = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = setup.model.clone();
        let mut plan = setup.plan.clone();
        match axis {
            AblationAxis::RkStage => {
                if v.fract() != 0.0 || !(1.0..=4.0).contains(&v) {
                    return Err(EvalError::Shape(format!("RK stage {v} is not in 1..=4")));
                }
                cfg.rk_stage = v as usize;
            }
            AblationAxis::L3 => plan.delta = v,
        }
        let model = SurrogateModel::new(cfg, setup.model_seed)?;
        let mut trainer = Trainer::new(model, plan, train, val)?;
        if let Some(dir) = out {
            trainer = trainer.with_output(&dir.join(format!("{}-{}", axis.name(), v)))?;
        }
        let outcome = trainer.run()?;
        let reports = eval_time_generalization(&outcome.best, test, &setup.factors)?;
        variants.push(AblationVariant {
            value: v,
            best_epoch: outcome.best_epoch,
            epochs: outcome.log.last().map_or(0, |r: &EpochLog| r.epoch),
            reports,
        });
    }
    Ok(AblationReport { axis, variants })
}

/// Runge-Kutta stage ablation.
pub fn ablate_rk_stage(
    setup: &AblationSetup,
    stages: &[usize],
    train: &TrajectoryDataset,
    val: &TrajectoryDataset,
    test: &TrajectoryDataset,
) -> Result<AblationReport> {
    let values: Vec<f64> = stages.iter().map(|&q| q as f64).collect();
    run_ablation(setup, AblationAxis::RkStage, &values, train, val, test, None)
}
