use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::{normalize, TrajectoryDataset};
use crate::model::{Checkpoint, SurrogateModel};

use super::losses::{train_loss, Batch, LossParts};
use super::{Adam, LossWeights, TrainError, TrainPlan};

type Result<T> = std::result::Result<T, TrainError>;

pub const LOG_HEADER: &str = "epoch,l1,l2t,l2a,l3,lrg,ltr,lvl,lr,k2,gamma";

const LOG_FILE: &str = "log.csv";
const BEST_FILE: &str = "best.ckpt";
const LAST_FILE: &str = "last.ckpt";

/// Stream tags that keep the per-epoch random draws independent.
const SHUFFLE_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const VAL_SPLIT_STREAM: u64 = 3;

const TRIVIAL_VARIANCE: f64 = 1e-10;

/// One row of the metric log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l1: f64,
    pub l2t: f64,
    pub l2a: f64,
    pub l3: f64,
    pub lrg: f64,
    pub ltr: f64,
    pub lvl: f64,
    pub lr: f64,
    pub k2: usize,
    pub gamma: f64,
}

impl EpochLog {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.l1,
            self.l2t,
            self.l2a,
            self.l3,
            self.lrg,
            self.ltr,
            self.lvl,
            self.lr,
            self.k2,
            self.gamma
        )
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 11 {
            return None;
        }
        let x = |i: usize| f[i].parse::<f64>().ok();
        Some(Self {
            epoch: f[0].parse().ok()?,
            l1: x(1)?,
            l2t: x(2)?,
            l2a: x(3)?,
            l3: x(4)?,
            lrg: x(5)?,
            ltr: x(6)?,
            lvl: x(7)?,
            lr: x(8)?,
            k2: f[9].parse().ok()?,
            gamma: x(10)?,
        })
    }
}

/// Counters persisted in `last.ckpt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RunState {
    epoch: usize,
    best_vl: Option<f64>,
    best_epoch: usize,
    since_best: usize,
    adam_step: u64,
    plan: TrainPlan,
}

/// Result of [`Trainer::run`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub best: SurrogateModel,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Epoch loop with validation, early stopping and checkpointing.
pub struct Trainer {
    model: SurrogateModel,
    best: Option<SurrogateModel>,
    plan: TrainPlan,
    train: TrajectoryDataset,
    val: TrajectoryDataset,
    adam: Adam,
    state: RunState,
    log: Vec<EpochLog>,
    out_dir: Option<PathBuf>,
}

fn prepare(ds: &TrajectoryDataset, name: &str) -> Result<TrajectoryDataset> {
    if ds.is_empty() {
        return Err(TrainError::Shape(format!("{name} split is empty")));
    }
    if ds.normalized {
        return Ok(ds.clone());
    }
    match &ds.norm {
        Some(stats) => Ok(normalize(ds, stats)?),
        None => Ok(ds.clone()),
    }
}

fn check_compat(model: &SurrogateModel, ds: &TrajectoryDataset, name: &str) -> Result<()> {
    let cfg = model.config();
    if ds.frame_shape() != cfg.field_shape() {
        return Err(TrainError::Shape(format!(
            "{name} frames are {:?}, model expects {:?}",
            ds.frame_shape(),
            cfg.field_shape()
        )));
    }
    if ds.param_dim() != cfg.param_dim {
        return Err(TrainError::Shape(format!(
            "{name} has {} parameters, model expects {}",
            ds.param_dim(),
            cfg.param_dim
        )));
    }
    if ds.frames() < 2 {
        return Err(TrainError::Shape(format!("{name} trajectories need two frames")));
    }
    Ok(())
}

fn rng_for(seed: u64, stream: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(epoch as u64);
    rng
}

/// `delta ~ U[0, dt_i]` per (trajectory, interval), row-major by trajectory.
fn split_table(rng: &mut ChaCha8Rng, n: usize, dts: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dts.len());
    for _ in 0..n {
        for &dt in dts {
            out.push(rng.gen::<f64>() * dt);
        }
    }
    out
}

/// Time-major split values for the given trajectories.
fn split_rows(table: &[f64], rows: &[usize], f: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * f);
    for i in 0..f {
        for &r in rows {
            out.push(table[r * f + i]);
        }
    }
    out
}

/// Gradient and loss values of one shard.
struct ShardResult {
    grads: Vec<Vec<f64>>,
    parts: LossParts,
    rows: usize,
}

fn shard_grad(
    model: &SurrogateModel,
    ds: &TrajectoryDataset,
    rows: &[usize],
    w: &LossWeights,
    table: Option<&[f64]>,
) -> Result<ShardResult> {
    let batch = Batch::from_dataset(ds, rows)?;
    let split = table.map(|t| split_rows(t, rows, batch.intervals()));
    let tape = Tape::new();
    let p = model.bind(&tape, true);
    let (loss, parts) = train_loss(model, &p, &tape, &batch, w, split.as_deref())?;
    let g = tape.backward(loss)?;
    let grads = p
        .vars()
        .iter()
        .map(|v| {
            g.get_slice(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; v.value().len()])
        })
        .collect();
    Ok(ShardResult {
        grads,
        parts,
        rows: rows.len(),
    })
}

/// Loss values without gradients.
fn shard_loss(
    model: &SurrogateModel,
    ds: &TrajectoryDataset,
    rows: &[usize],
    w: &LossWeights,
    table: Option<&[f64]>,
) -> Result<(LossParts, f64)> {
    let batch = Batch::from_dataset(ds, rows)?;
    let split = table.map(|t| split_rows(t, rows, batch.intervals()));
    let tape = Tape::new();
    let p = model.bind(&tape, false);
    let (_, parts) = train_loss(model, &p, &tape, &batch, w, split.as_deref())?;
    Ok((parts, rollout_error(model, ds, rows)?))
}

/// Sum over frames `1..=F` of the field relative error of a full rollout,
/// summed over the given trajectories.
fn rollout_error(model: &SurrogateModel, ds: &TrajectoryDataset, rows: &[usize]) -> Result<f64> {
    let fl = ds.frame_len();
    let frames = ds.frames();
    let mut s0 = Vec::with_capacity(rows.len() * fl);
    let mut mu = Vec::new();
    for &r in rows {
        s0.extend_from_slice(ds.frame(r, 0));
        mu.extend_from_slice(ds.params_of(r));
    }
    let mut shape = vec![rows.len()];
    shape.extend(ds.frame_shape());
    let pred = model.predict_batch(
        &Tensor::new(&shape, s0)?,
        &Tensor::new(&[rows.len(), ds.param_dim()], mu)?,
        &ds.times.steps(),
    )?;
    let mut total = 0.0;
    for (k, &r) in rows.iter().enumerate() {
        for i in 1..frames {
            let truth = ds.frame(r, i);
            let p = &pred.data()[(k * frames + i) * fl..(k * frames + i + 1) * fl];
            let num: f64 = truth.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = truth.iter().map(|a| a * a).sum();
            if !(den > 0.0) {
                return Err(TrainError::ZeroNormTarget { row: r * frames + i });
            }
            total += (num / den).sqrt();
        }
    }
    Ok(total)
}

impl Trainer {
    /// Fresh run. Splits that carry normalization statistics but are not yet
    /// normalized are normalized here.
    pub fn new(
        model: SurrogateModel,
        plan: TrainPlan,
        train: &TrajectoryDataset,
        val: &TrajectoryDataset,
    ) -> Result<Self> {
        plan.validate()?;
        let train = prepare(train, "train")?;
        let val = prepare(val, "validation")?;
        check_compat(&model, &train, "train")?;
        check_compat(&model, &val, "validation")?;
        let adam = Adam::new(model.params());
        Ok(Self {
            model,
            best: None,
            state: RunState {
                epoch: 0,
                best_vl: None,
                best_epoch: 0,
                since_best: 0,
                adam_step: 0,
                plan: plan.clone(),
            },
            plan,
            train,
            val,
            adam,
            log: Vec::new(),
            out_dir: None,
        })
    }

    /// Writes `log.csv`, `best.ckpt` and `last.ckpt` into `dir`.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let log = dir.join(LOG_FILE);
        write_atomic(&log, format!("{LOG_HEADER}\n").as_bytes())?;
        self.out_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    /// Continues a run from `dir/last.ckpt`. `plan` may change the epoch
    /// budget and patience; everything else must match the stored plan.
    pub fn resume(
        dir: &Path,
        plan: Option<TrainPlan>,
        train: &TrajectoryDataset,
        val: &TrajectoryDataset,
    ) -> Result<Self> {
        let ck = Checkpoint::load(&dir.join(LAST_FILE))?;
        let state: RunState = serde_json::from_value(ck.state.clone())
            .map_err(|e| TrainError::Resume(format!("checkpoint state: {e}")))?;
        let plan = match plan {
            Some(p) => {
                let same = TrainPlan {
                    max_epochs: state.plan.max_epochs,
                    patience: state.plan.patience,
                    ..p.clone()
                };
                if same != state.plan {
                    return Err(TrainError::Resume(
                        "training plan differs from the checkpointed run".into(),
                    ));
                }
                p
            }
            None => state.plan.clone(),
        };
        let adam = Adam::import(ck.model.params(), state.adam_step, &ck.extra)?;
        let mut t = Self::new(ck.model, plan.clone(), train, val)?;
        t.adam = adam;
        t.state = RunState { plan, ..state };
        let best_path = dir.join(BEST_FILE);
        if best_path.exists() {
            t.best = Some(Checkpoint::load(&best_path)?.model);
        }
        // drop log rows written after the checkpoint
        let text = fs::read_to_string(dir.join(LOG_FILE)).unwrap_or_default();
        let mut kept = format!("{LOG_HEADER}\n");
        for line in text.lines().skip(1) {
            match EpochLog::parse_line(line) {
                Some(row) if row.epoch <= t.state.epoch => {
                    kept.push_str(line);
                    kept.push('\n');
                    t.log.push(row);
                }
                _ => {}
            }
        }
        write_atomic(&dir.join(LOG_FILE), kept.as_bytes())?;
        t.out_dir = Some(dir.to_path_buf());
        Ok(t)
    }

    pub fn model(&self) -> &SurrogateModel {
        &self.model
    }

    pub fn plan(&self) -> &TrainPlan {
        &self.plan
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.state.epoch
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    pub fn train_set(&self) -> &TrajectoryDataset {
        &self.train
    }

    pub fn finished(&self) -> bool {
        self.state.epoch >= self.plan.max_epochs || self.state.since_best >= self.plan.patience
    }

    /// One pass over the training split followed by validation.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.state.epoch + 1;
        let f = self.train.frames() - 1;
        let w = self.plan.weights(epoch, f)?;
        let lr = self.plan.lr_at(epoch);
        let n = self.train.len();

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(self.plan.seed, SHUFFLE_STREAM, epoch));
        let dts = self.train.times.steps();
        let table = (w.delta > 0.0)
            .then(|| split_table(&mut rng_for(self.plan.seed, SPLIT_STREAM, epoch), n, &dts));

        let mut sum = LossParts::default();
        let mut seen = 0usize;
        let mut skipped = 0usize;
        for batch in order.chunks(self.plan.batch_size) {
            let results: Vec<Result<ShardResult>> = batch
                .par_chunks(self.plan.shard_size)
                .map(|rows| shard_grad(&self.model, &self.train, rows, &w, table.as_deref()))
                .collect();
            let mut grads: Option<Vec<Vec<f64>>> = None;
            let mut parts = LossParts::default();
            let mut failure = None;
            for r in results {
                match r {
                    Ok(s) => {
                        let scale = s.rows as f64 / batch.len() as f64;
                        parts.add_scaled(&s.parts, scale);
                        match &mut grads {
                            None => {
                                grads = Some(
                                    s.grads
                                        .into_iter()
                                        .map(|g| g.into_iter().map(|v| v * scale).collect())
                                        .collect(),
                                )
                            }
                            Some(acc) => {
                                for (a, g) in acc.iter_mut().zip(&s.grads) {
                                    a.iter_mut().zip(g).for_each(|(x, y)| *x += scale * y);
                                }
                            }
                        }
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                    }
                }
            }
            let step = match failure {
                Some(e) => Err(e),
                None => self.adam.step(
                    self.model.params_mut(),
                    grads.as_deref().unwrap_or_default(),
                    lr,
                ),
            };
            match step {
                Ok(()) => {
                    if parts.latent_var < TRIVIAL_VARIANCE && batch.len() > 1 {
                        log::warn!(
                            "epoch {epoch}: latent variance {:e} across the batch; the model \
                             may be stuck in the trivial constant-output minimum",
                            parts.latent_var
                        );
                    }
                    sum.add_scaled(&parts, batch.len() as f64);
                    seen += batch.len();
                }
                Err(e) if e.is_numerical() => {
                    skipped += 1;
                    log::warn!("epoch {epoch}: skipped a batch: {e}");
                }
                Err(e) => return Err(e),
            }
        }
        if seen == 0 {
            return Err(TrainError::Optimizer(format!(
                "epoch {epoch}: all {skipped} batches hit non-finite values"
            )));
        }
        let train_parts = {
            let mut p = LossParts::default();
            p.add_scaled(&sum, 1.0 / seen as f64);
            p
        };

        let lvl = self.validation_loss(&w)?;
        let row = EpochLog {
            epoch,
            l1: train_parts.l1,
            l2t: train_parts.l2t,
            l2a: train_parts.l2a,
            l3: train_parts.l3,
            lrg: train_parts.lrg,
            ltr: train_parts.total,
            lvl,
            lr,
            k2: w.k2,
            gamma: w.gamma,
        };
        self.state.epoch = epoch;
        self.state.adam_step = self.adam.step;
        let improved = self.state.best_vl.map_or(true, |b| lvl < b);
        if improved {
            self.state.best_vl = Some(lvl);
            self.state.best_epoch = epoch;
            self.state.since_best = 0;
            self.best = Some(self.model.clone());
        } else {
            self.state.since_best += 1;
        }
        self.log.push(row);
        if let Some(dir) = self.out_dir.clone() {
            let mut f = OpenOptions::new().append(true).open(dir.join(LOG_FILE))?;
            writeln!(f, "{}", row.csv_line())?;
            f.sync_data()?;
            if improved {
                Checkpoint::new(self.model.clone()).save(&dir.join(BEST_FILE))?;
            }
            self.last_checkpoint().save(&dir.join(LAST_FILE))?;
        }
        Ok(row)
    }

    /// Checkpoint with optimizer moments and run counters.
    pub fn last_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.model.clone());
        ck.state = serde_json::to_value(&self.state).expect("run state serializes");
        ck.extra = self.adam.export(self.model.params());
        ck
    }

    /// `L_tr` on the validation split plus the summed field rollout error,
    /// both averaged over validation trajectories.
    pub fn validation_loss(&self, w: &LossWeights) -> Result<f64> {
        let n = self.val.len();
        let dts = self.val.times.steps();
        // fixed draws so the value is comparable across epochs
        let table = (w.delta > 0.0)
            .then(|| split_table(&mut rng_for(self.plan.seed, VAL_SPLIT_STREAM, 0), n, &dts));
        let rows: Vec<usize> = (0..n).collect();
        let chunk = self.plan.batch_size.max(self.plan.shard_size);
        let results: Vec<Result<(LossParts, f64)>> = rows
            .par_chunks(chunk)
            .map(|r| shard_loss(&self.model, &self.val, r, w, table.as_deref()))
            .collect();
        let mut total = 0.0;
        for (r, rows) in results.into_iter().zip(rows.chunks(chunk)) {
            let (parts, roll) = r?;
            total += parts.total * rows.len() as f64 + roll;
        }
        Ok(total / n as f64)
    }

    /// Runs until the epoch budget or the patience is exhausted.
    pub fn run(mut self) -> Result<TrainOutcome> {
        while !self.finished() {
            let row = self.run_epoch()?;
            log::info!(
                "epoch {} ltr {:.4e} lvl {:.4e} lr {:.3e}",
                row.epoch,
                row.ltr,
                row.lvl,
                row.lr
            );
        }
        let stopped_early = self.state.epoch < self.plan.max_epochs;
        Ok(TrainOutcome {
            best: self.best.unwrap_or_else(|| self.model.clone()),
            best_epoch: self.state.best_epoch,
            log: self.log,
            stopped_early,
        })
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_data()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
