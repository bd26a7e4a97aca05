use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use latent_pde::data::{DatasetSplits, TrajectoryDataset};
use latent_pde::eval::{
    eval_time_generalization, report, run_ablation, AblationAxis, AblationSetup,
};
use latent_pde::model::{Checkpoint, SurrogateModel};
use latent_pde::training::Trainer;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{
    read_json, resolve, Overrides, RunConfig, Source, CONFIG_FILE, TEST_FILE, TRAIN_FILE,
    VAL_FILE,
};
use crate::fsutil::{write_atomic, write_json, RunLock, Staging, LOCK_FILE};

fn echo(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn require_out(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.out.clone().context("an output directory is required (--out)")
}

/// The three splits, read from `data_dir` or regenerated from the preset.
pub fn load_splits(cfg: &RunConfig) -> Result<DatasetSplits> {
    if let Some(dir) = &cfg.data_dir {
        let load = |name: &str| {
            let p = dir.join(name);
            TrajectoryDataset::load(&p).with_context(|| format!("loading {}", p.display()))
        };
        let splits = DatasetSplits {
            train: load(TRAIN_FILE)?,
            val: load(VAL_FILE)?,
            test: load(TEST_FILE)?,
        };
        if let Some(p) = cfg.preset.preset() {
            let gen = &splits.train.provenance.generator;
            if gen != p.name() {
                log::warn!("{} was produced by '{gen}', not '{}'", dir.display(), p.name());
            }
        }
        return Ok(splits);
    }
    let spec = cfg
        .dataset
        .as_ref()
        .context("no data directory and no dataset settings")?;
    log::info!("generating {} data (seed {})", spec.preset.name(), cfg.data_seed);
    Ok(spec.generate(cfg.data_seed)?)
}

pub fn gen(file: Option<Value>, flags: &Overrides, force: bool) -> Result<()> {
    let mut cfg = resolve(file, flags)?;
    if cfg.preset == Source::Import {
        bail!("'import' data cannot be generated");
    }
    let out = require_out(&cfg)?;
    cfg.data_dir = None;
    echo(&cfg)?;
    let stage = Staging::new(&out, force)?;
    let splits = load_splits(&cfg)?;
    for (name, ds) in [
        (TRAIN_FILE, &splits.train),
        (VAL_FILE, &splits.val),
        (TEST_FILE, &splits.test),
    ] {
        ds.save(&stage.path().join(name))?;
    }
    write_json(&stage.path().join(CONFIG_FILE), &cfg)?;
    stage.commit()?;
    log::info!(
        "wrote {} train, {} validation, {} test trajectories to {}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    best_epoch: usize,
    best_validation_loss: Option<f64>,
    stopped_early: bool,
}

fn clear_run_dir(dir: &Path, force: bool) -> Result<()> {
    let used = dir.exists() && fs::read_dir(dir)?.next().is_some();
    if !used {
        return Ok(());
    }
    if !force {
        bail!(
            "{} is not empty (use --resume to continue or --force to start over)",
            dir.display()
        );
    }
    if dir.join(LOCK_FILE).exists() {
        bail!("{} is locked by another process", dir.display());
    }
    fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    Ok(())
}

pub fn train(file: Option<Value>, flags: &Overrides, force: bool, resume: bool) -> Result<()> {
    if resume {
        return train_resume(file, flags);
    }
    let cfg = resolve(file, flags)?;
    let out = require_out(&cfg)?;
    echo(&cfg)?;
    clear_run_dir(&out, force)?;
    let _lock = RunLock::acquire(&out)?;
    write_json(&out.join(CONFIG_FILE), &cfg)?;
    let splits = load_splits(&cfg)?;
    let model = SurrogateModel::new(cfg.model.clone(), cfg.model_seed)?;
    let trainer = Trainer::new(model, cfg.plan.clone(), &splits.train, &splits.val)?
        .with_output(&out)?;
    finish_training(trainer, &out)
}

fn train_resume(file: Option<Value>, flags: &Overrides) -> Result<()> {
    let out = flags
        .out
        .clone()
        .context("--resume needs the run directory (--out)")?;
    if file.is_some() {
        bail!("--resume takes its configuration from {}", out.join(CONFIG_FILE).display());
    }
    let allowed = Overrides {
        epochs: flags.epochs,
        patience: flags.patience,
        data_dir: flags.data_dir.clone(),
        out: flags.out.clone(),
        ..Default::default()
    };
    if format!("{allowed:?}") != format!("{flags:?}") {
        bail!("only --epochs, --patience and --data may change when resuming");
    }
    let stored = read_json(&out.join(CONFIG_FILE))?;
    let cfg = resolve(Some(stored), &allowed)?;
    echo(&cfg)?;
    let _lock = RunLock::acquire(&out)?;
    write_json(&out.join(CONFIG_FILE), &cfg)?;
    let splits = load_splits(&cfg)?;
    let trainer = Trainer::resume(&out, Some(cfg.plan.clone()), &splits.train, &splits.val)?;
    log::info!("resuming after epoch {}", trainer.epoch());
    finish_training(trainer, &out)
}

fn finish_training(trainer: Trainer, out: &Path) -> Result<()> {
    let outcome = trainer.run()?;
    let best_vl = outcome
        .log
        .iter()
        .find(|r| r.epoch == outcome.best_epoch)
        .map(|r| r.lvl);
    let summary = TrainSummary {
        epochs: outcome.log.last().map_or(0, |r| r.epoch),
        best_epoch: outcome.best_epoch,
        best_validation_loss: best_vl,
        stopped_early: outcome.stopped_early,
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    log::info!(
        "finished after {} epochs; best epoch {} (checkpoints in {})",
        summary.epochs,
        summary.best_epoch,
        out.display()
    );
    Ok(())
}

/// Resolved settings of an evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    pub split: String,
    pub dt_factors: Vec<usize>,
    /// Data settings; the split is read from `data_dir` or regenerated.
    pub data: RunConfig,
    pub out: PathBuf,
}

pub struct EvalArgs {
    pub run: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub split: String,
    pub dt_factors: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub force: bool,
}

pub fn eval(file: Option<Value>, a: &EvalArgs) -> Result<()> {
    let checkpoint = match (&a.checkpoint, &a.run) {
        (Some(c), _) => c.clone(),
        (None, Some(r)) => r.join("best.ckpt"),
        (None, None) => bail!("give a run directory (--run) or a checkpoint (--checkpoint)"),
    };
    let run_dir = a
        .run
        .clone()
        .or_else(|| checkpoint.parent().map(Path::to_path_buf));
    let stored = match (file, &run_dir) {
        (Some(v), _) => Some(v),
        (None, Some(d)) if d.join(CONFIG_FILE).exists() => Some(read_json(&d.join(CONFIG_FILE))?),
        _ => None,
    };
    let flags = Overrides {
        data_dir: a.data_dir.clone(),
        dt_factors: a.dt_factors.clone(),
        ..Default::default()
    };
    let mut data = match stored {
        Some(v) => resolve(Some(v), &flags)?,
        None if a.data_dir.is_some() => resolve(
            None,
            &Overrides {
                preset: Some(Source::Import),
                ..flags
            },
        )?,
        None => bail!("no run configuration found; pass --data or --config"),
    };
    let out = match (&a.out, &run_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(d)) if a.run.is_some() => d.join("eval"),
        _ => bail!("an output directory is required (--out)"),
    };
    data.out = None;
    let cfg = EvalConfig {
        checkpoint: checkpoint.clone(),
        split: a.split.clone(),
        dt_factors: data.dt_factors.clone(),
        data,
        out: out.clone(),
    };
    echo(&cfg)?;
    let model = Checkpoint::load(&checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?
        .model;
    let splits = load_splits(&cfg.data)?;
    let ds = match cfg.split.as_str() {
        "train" => splits.train,
        "val" => splits.val,
        "test" => splits.test,
        s => bail!("unknown split '{s}' (expected train, val or test)"),
    };
    let stage = Staging::new(&out, a.force)?;
    let reports = eval_time_generalization(&model, &ds, &cfg.dt_factors)?;
    let dir = stage.path();
    write_atomic(&dir.join("nrmse.csv"), report::nrmse_table(&reports).as_bytes())?;
    write_atomic(&dir.join("box.csv"), report::box_table(&reports).as_bytes())?;
    write_json(&dir.join("summary.json"), &report::summary(&reports))?;
    let chart = report::nrmse_chart(&format!("{} split", cfg.split), &reports);
    write_atomic(&dir.join("nrmse.svg"), chart.as_bytes())?;
    write_json(&dir.join(CONFIG_FILE), &cfg)?;
    stage.commit()?;
    for r in &reports {
        println!("dt/{}: nRMSE {:.6}", r.factor, r.nrmse.overall);
    }
    Ok(())
}

/// Settings of an ablation: the shared run configuration plus the axis.
#[derive(Clone, Debug, Serialize)]
struct AblateConfig<'a> {
    axis: AblationAxis,
    values: &'a [f64],
    run: &'a RunConfig,
}

pub fn ablate(
    file: Option<Value>,
    flags: &Overrides,
    axis: Option<&str>,
    values: Option<Vec<f64>>,
    force: bool,
) -> Result<()> {
    // the file may be a previous ablation config: {axis, values, run}
    let (file_axis, file_values, file) = match file {
        Some(Value::Object(mut m)) if m.contains_key("run") => (
            m.remove("axis"),
            m.remove("values"),
            m.remove("run"),
        ),
        other => (None, None, other),
    };
    let axis = match (axis, file_axis) {
        (Some(a), _) => a.to_string(),
        (None, Some(Value::String(a))) => a,
        _ => bail!("an ablation axis is required (--axis rk-stage|l3)"),
    };
    let axis = AblationAxis::parse(&axis)
        .with_context(|| format!("unknown ablation axis '{axis}' (expected rk-stage or l3)"))?;
    let values = match (values, file_values) {
        (Some(v), _) => v,
        (None, Some(v)) => serde_json::from_value(v).context("config field 'values'")?,
        (None, None) => axis.default_values(),
    };
    if values.is_empty() {
        bail!("the ablation needs at least one value");
    }
    let cfg = resolve(file, flags)?;
    let out = require_out(&cfg)?;
    let record = AblateConfig {
        axis,
        values: &values,
        run: &cfg,
    };
    echo(&record)?;
    let stage = Staging::new(&out, force)?;
    let splits = load_splits(&cfg)?;
    let setup = AblationSetup {
        model: cfg.model.clone(),
        model_seed: cfg.model_seed,
        plan: cfg.plan.clone(),
        factors: cfg.dt_factors.clone(),
    };
    let rep = run_ablation(
        &setup,
        axis,
        &values,
        &splits.train,
        &splits.val,
        &splits.test,
        Some(&stage.path().join("runs")),
    )?;
    let dir = stage.path();
    write_atomic(&dir.join("ablation.csv"), report::ablation_table(&rep).as_bytes())?;
    write_json(&dir.join("ablation.json"), &report::ablation_summary(&rep))?;
    write_atomic(&dir.join("ablation.svg"), report::ablation_chart(&rep).as_bytes())?;
    write_json(&dir.join(CONFIG_FILE), &json!(record))?;
    stage.commit()?;
    for v in &rep.variants {
        let d = v
            .degradation()
            .map_or_else(|| "n/a".to_string(), |d| format!("{d:.4}"));
        println!("{}={}: degradation {}", axis.name(), v.value, d);
    }
    Ok(())
}
