use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    gen_advection, gen_burgers, gen_molenkamp, split, split_per_param, DataError, GridSpec,
    MolenkampParams, NormStats, ParamRange, Provenance, SinusoidalIc, SplitRanges, TimeGrid,
    TrajectoryDataset,
};

/// Named dataset families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataPreset {
    AdvectionFixed,
    AdvectionParam,
    BurgersFixed,
    BurgersParam,
    Molenkamp,
}

impl DataPreset {
    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::AdvectionFixed => "advection-fixed",
            Self::AdvectionParam => "advection-param",
            Self::BurgersFixed => "burgers-fixed",
            Self::BurgersParam => "burgers-param",
            Self::Molenkamp => "molenkamp",
        }
    }
}

/// Problem size: `Desk` runs on a laptop CPU, `Paper` matches the published
/// experiment sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

/// Fully resolved generation settings; stored in every generated file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetSpec {
    pub preset: DataPreset,
    pub grid: GridSpec,
    pub times: TimeGrid,
    /// PDE coefficient held fixed (velocity or viscosity) when it is not
    /// part of the parameter vector.
    pub fixed: Option<f64>,
    /// Parameter values used for training/validation trajectories.
    pub train_params: Vec<f64>,
    /// Extra parameter values seen only at test time.
    pub test_params: Vec<f64>,
    /// Trajectories per training parameter value (or in total when there is
    /// no parameter list).
    pub per_param: usize,
    /// Trajectories per test-only parameter value.
    pub test_per_param: usize,
    pub split: SplitRanges,
    pub n_waves: usize,
    pub max_mode: u32,
    pub oversample: usize,
    /// Min-max normalize the fields (parameters are always normalized).
    pub normalize_fields: bool,
}

/// Generated train/validation/test datasets in physical units; each carries
/// the training-split statistics in `norm`.
#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub train: TrajectoryDataset,
    pub val: TrajectoryDataset,
    pub test: TrajectoryDataset,
}

impl PresetSpec {
    pub fn new(preset: DataPreset, scale: Scale) -> Self {
        let desk = scale == Scale::Desk;
        let n1 = if desk { 64 } else { 256 };
        let grid_1d = GridSpec::periodic_1d(n1, 0.0, 1.0).expect("valid grid");
        let times_1d = TimeGrid::uniform(0.0, 2.0, 41).expect("valid times");
        let base = |per: usize| Self {
            preset,
            grid: grid_1d.clone(),
            times: times_1d.clone(),
            fixed: None,
            train_params: vec![],
            test_params: vec![],
            per_param: per,
            test_per_param: 0,
            split: SplitRanges::proportional(per, 0.8, 0.1),
            n_waves: 2,
            max_mode: 8,
            oversample: if desk { 4 } else { 8 },
            normalize_fields: false,
        };
        match preset {
            DataPreset::AdvectionFixed => Self {
                fixed: Some(if desk { 0.7 } else { 0.1 }),
                normalize_fields: true,
                ..base(if desk { 640 } else { 10000 })
            },
            DataPreset::AdvectionParam => Self {
                train_params: vec![0.2, 0.4, 0.7, 2.0, 4.0],
                test_params: vec![0.1, 1.0, 7.0],
                test_per_param: if desk { 8 } else { 1000 },
                ..base(if desk { 80 } else { 10000 })
            },
            DataPreset::BurgersFixed => Self {
                fixed: Some(if desk { 0.1 } else { 0.001 }),
                ..base(if desk { 640 } else { 10000 })
            },
            DataPreset::BurgersParam => Self {
                train_params: vec![0.002, 0.004, 0.02, 0.04, 0.2, 0.4, 2.0],
                test_params: vec![0.001, 0.01, 0.1, 1.0, 4.0],
                test_per_param: if desk { 4 } else { 1000 },
                ..base(if desk { 40 } else { 10000 })
            },
            DataPreset::Molenkamp => {
                let (n, total, split) = if desk {
                    (32, 400, SplitRanges::proportional(400, 0.8, 0.1))
                } else {
                    (
                        128,
                        5300,
                        SplitRanges {
                            train: 0..5000,
                            val: 5000..5200,
                            test: 5200..5300,
                        },
                    )
                };
                Self {
                    grid: GridSpec::square_2d(n, -1.0, 1.0).expect("valid grid"),
                    times: TimeGrid::uniform(0.0, 1.0, 21).expect("valid times"),
                    split,
                    normalize_fields: true,
                    ..base(total)
                }
            }
        }
    }

    pub fn param_ranges(&self) -> Vec<ParamRange> {
        let range = |name: &str, v: &[f64]| {
            let (lo, hi) = v
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                    (a.min(x), b.max(x))
                });
            vec![ParamRange::new(name, lo, hi)]
        };
        match self.preset {
            DataPreset::AdvectionFixed | DataPreset::BurgersFixed => vec![],
            DataPreset::AdvectionParam => range(
                "zeta",
                &[&self.train_params[..], &self.test_params[..]].concat(),
            ),
            DataPreset::BurgersParam => range(
                "nu",
                &[&self.train_params[..], &self.test_params[..]].concat(),
            ),
            DataPreset::Molenkamp => MolenkampParams::ranges(),
        }
    }

    fn provenance(&self, seed: u64) -> Result<Provenance, DataError> {
        Ok(Provenance {
            generator: self.preset.name().to_string(),
            seed,
            settings: serde_json::to_value(self)?,
        })
    }

    /// Frames of one trajectory for the physical parameter vector `mu`
    /// (empty for fixed presets) on `times`.
    fn simulate(
        &self,
        times: &TimeGrid,
        mu: &[f64],
        ic: Option<&[f64]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>, DataError> {
        let coef = || {
            mu.first()
                .copied()
                .or(self.fixed)
                .ok_or_else(|| DataError::Shape("missing PDE coefficient".into()))
        };
        let initial = |rng: &mut ChaCha8Rng| -> Result<Vec<f64>, DataError> {
            match ic {
                Some(v) => Ok(v.to_vec()),
                None => SinusoidalIc::sample(self.n_waves, self.max_mode, rng).on_grid(&self.grid),
            }
        };
        match self.preset {
            DataPreset::AdvectionFixed | DataPreset::AdvectionParam => {
                gen_advection(&self.grid, times, coef()?, &initial(rng)?)
            }
            DataPreset::BurgersFixed | DataPreset::BurgersParam => {
                gen_burgers(&self.grid, times, coef()?, &initial(rng)?, self.oversample)
            }
            DataPreset::Molenkamp => {
                gen_molenkamp(&self.grid, times, MolenkampParams::from_slice(mu)?)
            }
        }
    }

    fn sample_mu(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        MolenkampParams::ranges()
            .iter()
            .map(|r| rng.gen_range(r.min..=r.max))
            .collect()
    }

    /// Builds one dataset from `(stream, parameter value)` jobs. Every
    /// trajectory draws from its own random stream, so the result does not
    /// depend on the worker count.
    fn build(
        &self,
        seed: u64,
        jobs: Vec<(u64, Option<f64>)>,
    ) -> Result<TrajectoryDataset, DataError> {
        let trajs: Vec<(Vec<Vec<f64>>, Vec<f64>)> = jobs
            .into_par_iter()
            .map(|(stream, value)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                let mu = match (self.preset, value) {
                    (DataPreset::Molenkamp, _) => self.sample_mu(&mut rng),
                    (_, Some(v)) => vec![v],
                    (_, None) => vec![],
                };
                Ok((self.simulate(&self.times, &mu, None, &mut rng)?, mu))
            })
            .collect::<Result<_, DataError>>()?;
        TrajectoryDataset::from_trajectories(
            self.grid.clone(),
            self.times.clone(),
            1,
            self.param_ranges(),
            trajs,
            self.provenance(seed)?,
        )
    }

    pub fn generate(&self, seed: u64) -> Result<DatasetSplits, DataError> {
        let values: Vec<Option<f64>> = if self.train_params.is_empty() {
            vec![None]
        } else {
            self.train_params.iter().map(|&v| Some(v)).collect()
        };
        let mut stream = 0u64;
        let mut jobs = Vec::new();
        for v in &values {
            for _ in 0..self.per_param {
                jobs.push((stream, *v));
                stream += 1;
            }
        }
        let all = self.build(seed, jobs)?;
        let (mut train, mut val, mut test) = if self.train_params.is_empty() {
            split(&all, &self.split)?
        } else {
            split_per_param(&all, &self.split)?
        };
        if !self.test_params.is_empty() {
            let jobs = self
                .test_params
                .iter()
                .flat_map(|&v| std::iter::repeat(Some(v)).take(self.test_per_param))
                .enumerate()
                .map(|(k, v)| (stream + k as u64, v))
                .collect();
            let extra = self.build(seed, jobs)?;
            let merged_fields = [test.fields(), extra.fields()].concat();
            let merged_params = [test.params(), extra.params()].concat();
            test = TrajectoryDataset::new(
                test.grid.clone(),
                test.times.clone(),
                1,
                test.param_ranges.clone(),
                merged_fields,
                merged_params,
                test.provenance.clone(),
            )?;
        }
        let stats = NormStats::compute(&train, self.normalize_fields)?;
        for ds in [&mut train, &mut val, &mut test] {
            ds.norm = Some(stats.clone());
        }
        Ok(DatasetSplits { train, val, test })
    }

    /// Regenerates the trajectories of `ds` on times refined by `factor`,
    /// reusing each stored initial condition (advection, Burgers) or
    /// parameter vector (Molenkamp). `ds` must be in physical units.
    pub fn refined_truth(
        ds: &TrajectoryDataset,
        factor: usize,
    ) -> Result<TrajectoryDataset, DataError> {
        if ds.normalized {
            return Err(DataError::Normalization(
                "refined truth needs physical units".into(),
            ));
        }
        let spec: PresetSpec =
            serde_json::from_value(ds.provenance.settings.clone()).map_err(|_| {
                DataError::Unavailable(format!(
                    "dataset from '{}' has no generator settings",
                    ds.provenance.generator
                ))
            })?;
        let times = ds.times.refined(factor)?;
        let trajs: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..ds.len())
            .into_par_iter()
            .map(|r| {
                let mu = ds.params_of(r).to_vec();
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let frames = spec.simulate(&times, &mu, Some(ds.frame(r, 0)), &mut rng)?;
                Ok((frames, mu))
            })
            .collect::<Result<_, DataError>>()?;
        let mut out = TrajectoryDataset::from_trajectories(
            ds.grid.clone(),
            times,
            ds.channels,
            ds.param_ranges.clone(),
            trajs,
            ds.provenance.clone(),
        )?;
        out.norm = ds.norm.clone();
        Ok(out)
    }
}
