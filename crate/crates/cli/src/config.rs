//! Run configuration: built-in defaults per preset, merged with an optional
//! JSON file, then overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use latent_pde::data::{DataPreset, PresetSpec, Scale, TrajectoryDataset};
use latent_pde::model::ModelConfig;
use latent_pde::training::TrainPlan;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const TRAIN_FILE: &str = "train.lnds";
pub const VAL_FILE: &str = "val.lnds";
pub const TEST_FILE: &str = "test.lnds";
pub const CONFIG_FILE: &str = "config.json";

/// Where trajectories come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    AdvectionFixed,
    AdvectionParam,
    BurgersFixed,
    BurgersParam,
    Molenkamp,
    /// Externally produced dataset files in `data_dir`.
    Import,
}

impl Source {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string())).with_context(|| {
            format!(
                "unknown preset '{s}' (expected advection-fixed, advection-param, \
                 burgers-fixed, burgers-param, molenkamp or import)"
            )
        })
    }

    pub fn preset(self) -> Option<DataPreset> {
        match self {
            Self::AdvectionFixed => Some(DataPreset::AdvectionFixed),
            Self::AdvectionParam => Some(DataPreset::AdvectionParam),
            Self::BurgersFixed => Some(DataPreset::BurgersFixed),
            Self::BurgersParam => Some(DataPreset::BurgersParam),
            Self::Molenkamp => Some(DataPreset::Molenkamp),
            Self::Import => None,
        }
    }
}

/// Everything a command needs; the resolved value is written next to the
/// outputs and is enough to rerun the command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Source,
    pub scale: Scale,
    /// Seed of the trajectory generator.
    pub data_seed: u64,
    /// Generation settings (grid, times, sizes); `None` for imported data.
    pub dataset: Option<PresetSpec>,
    /// Directory holding `train.lnds`, `val.lnds` and `test.lnds`. When
    /// unset the splits are regenerated from `dataset` and `data_seed`.
    pub data_dir: Option<PathBuf>,
    pub model: ModelConfig,
    /// Seed of the parameter initialization.
    pub model_seed: u64,
    pub plan: TrainPlan,
    /// Step refinement factors used for evaluation.
    pub dt_factors: Vec<usize>,
    pub out: Option<PathBuf>,
}

/// Values given on the command line; `None` leaves the file or default
/// value in place.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<Source>,
    pub scale: Option<Scale>,
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub model_seed: Option<u64>,
    pub latent_dim: Option<usize>,
    pub rk_stage: Option<usize>,
    pub strategy: Option<u8>,
    pub delta: Option<f64>,
    pub gamma0: Option<f64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub dt_factors: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
}

pub fn default_model(source: Source, scale: Scale, probe: Option<&TrajectoryDataset>) -> Result<ModelConfig> {
    let desk = scale == Scale::Desk;
    Ok(match source {
        Source::AdvectionFixed if desk => ModelConfig::desk_1d(16, 0),
        Source::BurgersFixed if desk => ModelConfig::desk_1d(16, 0),
        Source::AdvectionParam | Source::BurgersParam if desk => ModelConfig::desk_1d(16, 1),
        Source::Molenkamp if desk => ModelConfig::desk_2d(16, 5),
        Source::AdvectionFixed => ModelConfig::paper_advection_fixed(),
        Source::AdvectionParam => ModelConfig::paper_advection_param(),
        Source::BurgersFixed => ModelConfig::paper_burgers_fixed(),
        Source::BurgersParam => ModelConfig::paper_burgers_param(),
        Source::Molenkamp => ModelConfig::paper_molenkamp(),
        Source::Import => {
            let ds = probe.context("imported data needs data_dir")?;
            let shape = ds.frame_shape();
            let (channels, extent, dims) = (shape[0], shape[1], shape.len() - 1);
            let pd = ds.param_dim();
            let base = match (dims, extent) {
                (2, 128) => ModelConfig {
                    param_dim: pd,
                    ..ModelConfig::paper_shallow_water()
                },
                (2, _) => ModelConfig::desk_2d(16, pd),
                (1, 256) => ModelConfig {
                    param_dim: pd,
                    ..ModelConfig::paper_advection_fixed()
                },
                (1, _) => ModelConfig::desk_1d(16, pd),
                _ => bail!("cannot pick a model for frames of shape {shape:?}"),
            };
            ModelConfig {
                channels,
                extent,
                conditioning: latent_pde::model::Conditioning::default_for(pd),
                ..base
            }
        }
    })
}

/// Published training settings per dataset; desk runs use shorter budgets.
pub fn default_plan(source: Source, scale: Scale) -> TrainPlan {
    let base = TrainPlan::default();
    let plan = match source {
        Source::BurgersFixed => TrainPlan {
            lr: 0.0014,
            lr_decay: 0.999,
            batch_size: 32,
            lambda_rg: 0.001,
            ..base
        },
        Source::Import => TrainPlan {
            lr_decay: 0.999,
            lambda_rg: 0.001,
            ..base
        },
        Source::AdvectionParam => TrainPlan {
            strategy: 2,
            lr: 0.0018,
            lr_decay: 0.995,
            batch_size: 64,
            gamma0: 1.0 / 500.0,
            ..base
        },
        Source::BurgersParam => TrainPlan {
            strategy: 2,
            lr: 0.0018,
            lr_decay: 0.995,
            batch_size: 124,
            gamma0: 1.0 / 1000.0,
            ..base
        },
        Source::Molenkamp => TrainPlan {
            strategy: 2,
            lr: 0.0015,
            lr_decay: 0.995,
            gamma0: 1.0 / 500.0,
            ..base
        },
        Source::AdvectionFixed => base,
    };
    match scale {
        Scale::Paper => plan,
        Scale::Desk => TrainPlan {
            batch_size: plan.batch_size.min(16),
            max_epochs: 200,
            patience: 200,
            warmup_epochs: 5,
            dynamics_off_epochs: 40,
            ..plan
        },
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Defaults for the chosen preset, then `file`, then `flags`.
pub fn resolve(file: Option<Value>, flags: &Overrides) -> Result<RunConfig> {
    let file = file.unwrap_or(Value::Object(Default::default()));
    if !file.is_object() {
        bail!("config file must hold a JSON object");
    }
    fn pick<T: serde::de::DeserializeOwned>(file: &Value, key: &str) -> Option<serde_json::Result<T>> {
        file.get(key).cloned().map(serde_json::from_value)
    }
    let source = match (flags.preset, pick(&file, "preset")) {
        (Some(s), _) => s,
        (None, Some(v)) => v.context("config field 'preset'")?,
        (None, None) => Source::AdvectionFixed,
    };
    let scale = match (flags.scale, pick(&file, "scale")) {
        (Some(s), _) => s,
        (None, Some(v)) => v.context("config field 'scale'")?,
        (None, None) => Scale::Desk,
    };
    let data_dir: Option<PathBuf> = match (&flags.data_dir, pick(&file, "data_dir")) {
        (Some(d), _) => Some(d.clone()),
        (None, Some(v)) => v.context("config field 'data_dir'")?,
        (None, None) => None,
    };
    let probe = match (source, &data_dir) {
        (Source::Import, Some(dir)) => Some(
            TrajectoryDataset::load(&dir.join(TRAIN_FILE))
                .with_context(|| format!("loading {}", dir.join(TRAIN_FILE).display()))?,
        ),
        (Source::Import, None) => bail!("preset 'import' needs a data directory"),
        _ => None,
    };
    let defaults = RunConfig {
        preset: source,
        scale,
        data_seed: 0,
        dataset: source.preset().map(|p| PresetSpec::new(p, scale)),
        data_dir: None,
        model: default_model(source, scale, probe.as_ref())?,
        model_seed: 0,
        plan: default_plan(source, scale),
        dt_factors: vec![1, 5],
        out: None,
    };
    let mut value = serde_json::to_value(&defaults)?;
    merge(&mut value, file);
    let mut cfg: RunConfig = serde_json::from_value(value).context("invalid configuration")?;
    cfg.preset = source;
    cfg.scale = scale;
    cfg.data_dir = data_dir;
    apply(&mut cfg, flags);
    validate(&cfg)?;
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, f: &Overrides) {
    if let Some(s) = f.seed {
        cfg.data_seed = s;
        cfg.model_seed = s;
        cfg.plan.seed = s;
    }
    if let Some(s) = f.model_seed {
        cfg.model_seed = s;
    }
    if let Some(v) = f.latent_dim {
        cfg.model.latent_dim = v;
    }
    if let Some(v) = f.rk_stage {
        cfg.model.rk_stage = v;
    }
    if let Some(v) = f.strategy {
        cfg.plan.strategy = v;
    }
    if let Some(v) = f.delta {
        cfg.plan.delta = v;
    }
    if let Some(v) = f.gamma0 {
        cfg.plan.gamma0 = v;
    }
    if let Some(v) = f.lr {
        cfg.plan.lr = v;
    }
    if let Some(v) = f.batch_size {
        cfg.plan.batch_size = v;
    }
    if let Some(v) = f.epochs {
        cfg.plan.max_epochs = v;
    }
    if let Some(v) = f.patience {
        cfg.plan.patience = v;
    }
    if let Some(v) = &f.dt_factors {
        cfg.dt_factors = v.clone();
    }
    if let Some(v) = &f.out {
        cfg.out = Some(v.clone());
    }
}

fn validate(cfg: &RunConfig) -> Result<()> {
    cfg.model.validate().context("model configuration")?;
    cfg.plan.validate().context("training plan")?;
    if cfg.dt_factors.is_empty() || cfg.dt_factors.contains(&0) {
        bail!("dt factors must be a non-empty list of positive integers");
    }
    if cfg.preset != Source::Import && cfg.dataset.is_none() {
        bail!("preset {:?} needs dataset settings", cfg.preset);
    }
    if let Some(spec) = &cfg.dataset {
        if spec.preset.name() != serde_json::to_value(cfg.preset)?.as_str().unwrap_or_default() {
            bail!(
                "dataset settings are for '{}' but the preset is {:?}",
                spec.preset.name(),
                cfg.preset
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = json!({"plan": {"lr": 0.01, "batch_size": 4}, "model_seed": 9});
        let flags = Overrides {
            lr: Some(0.02),
            ..Default::default()
        };
        let c = resolve(Some(file), &flags).unwrap();
        assert_eq!(c.plan.lr, 0.02);
        assert_eq!(c.plan.batch_size, 4);
        assert_eq!(c.model_seed, 9);
        assert_eq!(c.plan.lr_decay, 0.997);
    }

    #[test]
    fn resolved_config_roundtrips() {
        let c = resolve(None, &Overrides::default()).unwrap();
        let again = resolve(Some(serde_json::to_value(&c).unwrap()), &Overrides::default()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(resolve(Some(json!({"learning_rate": 1.0})), &Overrides::default()).is_err());
        let bad = Overrides {
            rk_stage: Some(5),
            ..Default::default()
        };
        assert!(resolve(None, &bad).is_err());
        assert!(Source::parse("heat").is_err());
    }

    #[test]
    fn paper_presets_follow_published_settings() {
        let flags = Overrides {
            preset: Some(Source::BurgersParam),
            scale: Some(Scale::Paper),
            ..Default::default()
        };
        let c = resolve(None, &flags).unwrap();
        assert_eq!(c.plan.strategy, 2);
        assert_eq!(c.plan.batch_size, 124);
        assert_eq!(c.plan.gamma0, 0.001);
        assert_eq!(c.model.latent_dim, 30);
    }
}
