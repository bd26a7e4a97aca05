//! Acceptance criteria, one printed PASS/FAIL line each.
//!
//! `fast_criteria` covers 1-5, 9 and 10. The desk-scale training criteria
//! 6-8 take tens of minutes per run and live in `training_criteria`:
//!
//! ```text
//! cargo test --release -p latent-pde --test acceptance -- --ignored --nocapture
//! ```

mod common;

use std::fs;
use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use common::*;
use latent_pde::autodiff::gradcheck::{check_gradients, registered_ops, GradCheckConfig};
use latent_pde::autodiff::{Tape, Tensor, Var};
use latent_pde::data::{
    normalize, DataPreset, DatasetSplits, GridSpec, PresetSpec, Scale, SplitRanges, TimeGrid,
};
use latent_pde::eval::{eval_time_generalization, nrmse};
use latent_pde::model::{ModelConfig, SurrogateModel};
use latent_pde::training::{
    ar_terms, tf_terms, Batch, ModelProcessor, Processor, TrainError, TrainOutcome, TrainPlan,
    Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    criterion: usize,
    pass: bool,
    detail: String,
}

fn report(criterion: usize, pass: bool, detail: String) -> Outcome {
    println!("criterion {criterion}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { criterion, pass, detail }
}

fn assert_all(outcomes: &[Outcome]) {
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.pass)
        .map(|o| format!("{}: {}", o.criterion, o.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
}

fn tiny_data(frames: usize) -> DatasetSplits {
    PresetSpec {
        grid: GridSpec::periodic_1d(16, 0.0, 1.0).unwrap(),
        times: TimeGrid::uniform(0.0, 0.1 * (frames - 1) as f64, frames).unwrap(),
        per_param: 12,
        split: SplitRanges::proportional(12, 0.5, 0.25),
        ..PresetSpec::new(DataPreset::AdvectionFixed, Scale::Desk)
    }
    .generate(7)
    .unwrap()
}

fn tiny_model(seed: u64) -> SurrogateModel {
    let cfg = ModelConfig {
        extent: 16,
        enc_filters: vec![4, 8, 8],
        enc_kernels: vec![5, 3, 3],
        dec_filters: vec![8, 8, 4],
        dec_kernels: vec![4, 4, 3],
        hidden: vec![12],
        ..ModelConfig::desk_1d(4, 0)
    };
    SurrogateModel::new(cfg, seed).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    let mut count = 0;
    for op in registered_ops() {
        for seed in 0..10 {
            let rep = check_gradients(op.f, &op.sample_inputs(seed), GradCheckConfig::default()).unwrap();
            if rep.max_rel_error() >= worst.0 {
                worst = (rep.max_rel_error(), op.name);
            }
        }
        count += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        worst.0 < 1e-5 && secs < 60.0,
        format!("{count} ops x 10 inputs, max rel err {:.2e} ({}), {secs:.1}s", worst.0, worst.1),
    )
}

fn criterion_2() -> Outcome {
    let ords: Vec<f64> = (1..=4).map(rk_order).collect();
    let orders_ok = ords.iter().enumerate().all(|(i, p)| (p - (i + 1) as f64).abs() <= 0.2);
    let single = rk4_single_step_error();
    report(
        2,
        orders_ok && single < 1e-7,
        format!("observed orders {ords:.3?}, RK4 single step error {single:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let adv = orders(&[64, 128, 256, 512].map(|n| advection_residual(n, 0.7)));
    let mol = orders(&[64, 128, 256, 512].map(molenkamp_residual));
    let peak = molenkamp_peak_decay_error(molenkamp_case());
    let drift = integral_drift(&burgers_run(0.1, 8, 2.0, 41));
    let (coarse, fine) = burgers_self_convergence(0.1);
    // observed orders of a second-order residual approach 2 from below
    let pass = adv.iter().chain(&mol).all(|&p| p >= 1.95)
        && peak < 1e-12
        && drift < 1e-6
        && fine < coarse;
    report(
        3,
        pass,
        format!(
            "advection orders {adv:.3?}, Molenkamp orders {mol:.3?}, peak decay err {peak:.1e}, \
             Burgers drift {drift:.1e}, self-convergence {coarse:.2e} -> {fine:.2e}"
        ),
    )
}

struct ShiftProbe<'t> {
    shifts: Vec<Var<'t>>,
}

impl<'t> Processor<'t> for ShiftProbe<'t> {
    fn advance(&self, eps: Var<'t>, blocks: &[usize], _dt: &Rc<Vec<f64>>) -> Result<Var<'t>, TrainError> {
        let parts: Vec<Var<'t>> = blocks.iter().map(|&k| self.shifts[k]).collect();
        let shift = if parts.len() == 1 { parts[0] } else { Var::concat(&parts, 0)? };
        Ok(eps.add(shift)?)
    }
}

/// Steps reached by the gradient of each autoregressive target must be
/// exactly the last `k2` ones.
fn truncation_holds() -> bool {
    let (b, lat, f) = (2, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rand_tensor = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let latents0 = rand_tensor(&[(f + 1) * b, lat]);
    let shifts0: Vec<Tensor> = (0..f).map(|_| rand_tensor(&[b, lat])).collect();
    let dts = vec![0.1; f];
    let sq = |v: Option<&[f64]>| v.map_or(0.0, |v| v.iter().map(|x| x * x).sum::<f64>());
    let mut ok = true;
    for k2 in 1..=f {
        for i in 1..=f {
            let tape = Tape::new();
            let latents = tape.var(latents0.clone());
            let probe = ShiftProbe {
                shifts: shifts0.iter().map(|t| tape.var(t.clone())).collect(),
            };
            let terms = ar_terms(&probe, latents, b, &dts, k2).unwrap();
            let g = tape.backward(terms.narrow((i - 1) * b, b).unwrap().sum().unwrap()).unwrap();
            for (j, s) in probe.shifts.iter().enumerate() {
                let reached = sq(g.get_slice(*s)) > 0.0;
                ok &= reached == (j < i && j + k2 >= i);
            }
            let init = sq(g.get_slice(latents).map(|v| &v[..b * lat]));
            ok &= (init > 0.0) == (i <= k2);
        }
    }
    ok
}

fn criterion_4() -> Outcome {
    let d = tiny_data(6);
    let train = normalize(&d.train, d.train.norm.as_ref().unwrap()).unwrap();
    let batch = Batch::from_dataset(&train, &[0, 1, 2, 3]).unwrap();
    let f = batch.intervals();
    let model = tiny_model(9);
    let tape = Tape::new();
    let p = model.bind(&tape, false);
    let latents = model.encode_var(&p, tape.constant(batch.fields.clone())).unwrap();
    let proc = ModelProcessor {
        model: &model,
        params: &p,
        mu: tape.constant(batch.mu.clone()),
    };
    let ar = ar_terms(&proc, latents, 4, &batch.dts, f).unwrap().mean().unwrap().item().unwrap();
    let tf = tf_terms(&proc, latents, 4, &batch.dts, f).unwrap().mean().unwrap().item().unwrap();
    let rel = ((ar - tf) / tf).abs();
    let trunc = truncation_holds();
    report(
        4,
        rel < 1e-6 && trunc,
        format!("AR(k2=F) {ar:.10} vs TF(k1=F) {tf:.10}, rel {rel:.1e}; truncation probe {}", if trunc { "exact" } else { "violated" }),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut nested = |n_mu: usize, n_u: usize, frames: usize, len: usize| -> Vec<Vec<Vec<Vec<f64>>>> {
        (0..n_mu)
            .map(|_| {
                (0..n_u)
                    .map(|_| (0..frames).map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
                    .collect()
            })
            .collect()
    };
    let flat = |a: &Vec<Vec<Vec<Vec<f64>>>>| a.iter().flatten().flatten().flatten().copied().collect::<Vec<f64>>();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let truth = nested(2, 2, 4, 5);
        let pred = nested(2, 2, 4, 5);
        let got = nrmse(&flat(&pred), &flat(&truth), 4, 4, 5).unwrap().overall;
        worst = worst.max((got - brute_force_nrmse(&pred, &truth)).abs());
    }
    let truth = flat(&nested(1, 3, 4, 8));
    let doubled: Vec<f64> = truth.iter().map(|v| 2.0 * v).collect();
    let two = nrmse(&doubled, &truth, 3, 4, 8).unwrap().overall;
    report(
        5,
        worst < 1e-12 && two == 1.0,
        format!("max deviation from brute force {worst:.1e}, nRMSE(2 s, s) = {two}"),
    )
}

fn criterion_9() -> Outcome {
    let d = tiny_data(6);
    let f = 5;
    let mut bad = Vec::new();
    for strategy in [1u8, 2] {
        let plan = TrainPlan {
            strategy,
            gamma0: 1.0 / 60.0,
            k2_period: 30,
            max_epochs: 100,
            patience: 1000,
            batch_size: 6,
            ..TrainPlan::default()
        };
        let out = Trainer::new(tiny_model(2), plan.clone(), &d.train, &d.val).unwrap().run().unwrap();
        if out.log.len() != 100 {
            bad.push(format!("strategy {strategy}: {} epochs logged", out.log.len()));
        }
        for row in &out.log {
            let e = row.epoch;
            let (g, k) = if strategy == 1 {
                (0.0, 1)
            } else {
                ((e as f64 * plan.gamma0).min(1.0), f.min(1 + e / 30))
            };
            if row.gamma != g || row.k2 != k || row.lr != plan.lr_at(e) {
                bad.push(format!("strategy {strategy} epoch {e}: gamma {} k2 {}", row.gamma, row.k2));
            }
        }
    }
    let detail = if bad.is_empty() {
        "strategies 1 and 2, 100 epochs each, gamma/k2/lr match".to_string()
    } else {
        bad.join("; ")
    };
    report(9, bad.is_empty(), detail)
}

fn run_files(dir: &Path) -> Vec<Vec<u8>> {
    ["log.csv", "best.ckpt", "last.ckpt"]
        .iter()
        .map(|f| fs::read(dir.join(f)).unwrap())
        .collect()
}

fn criterion_10() -> Outcome {
    let d = tiny_data(5);
    let plan = TrainPlan {
        strategy: 2,
        gamma0: 0.1,
        k2_period: 2,
        lr: 2e-3,
        batch_size: 4,
        shard_size: 2,
        max_epochs: 6,
        patience: 1000,
        seed: 5,
        ..TrainPlan::default()
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        pool.install(|| {
            Trainer::new(tiny_model(1), plan.clone(), &d.train, &d.val)
                .unwrap()
                .with_output(dir.path())
                .unwrap()
                .run()
                .unwrap()
        });
        run_files(dir.path())
    };
    let same = run() == run();
    report(10, same, "two single-threaded 6-epoch runs: log.csv, best.ckpt, last.ckpt compared".into())
}

#[test]
fn fast_criteria() {
    let outcomes = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_9(),
        criterion_10(),
    ];
    println!("criteria 6-8: desk-scale training, run with --ignored");
    assert_all(&outcomes);
}

/// Calibrated desk schedule: 40 autoencoder-only epochs, then 160 epochs
/// with dynamics.
fn desk_plan() -> TrainPlan {
    TrainPlan {
        strategy: 1,
        lr: 1e-3,
        batch_size: 16,
        warmup_epochs: 5,
        dynamics_off_epochs: 40,
        max_epochs: 200,
        patience: 200,
        ..TrainPlan::default()
    }
}

struct DeskRun {
    out: TrainOutcome,
    nrmse: [f64; 2],
    secs: f64,
}

impl DeskRun {
    fn ratio(&self) -> f64 {
        self.nrmse[1] / self.nrmse[0]
    }
}

fn desk_run(data: &DatasetSplits, delta: f64, rk_stage: usize) -> DeskRun {
    let start = Instant::now();
    let cfg = ModelConfig {
        rk_stage,
        ..ModelConfig::desk_1d(16, data.train.param_dim())
    };
    let model = SurrogateModel::new(cfg, 0).unwrap();
    let plan = TrainPlan { delta, ..desk_plan() };
    let out = Trainer::new(model, plan, &data.train, &data.val).unwrap().run().unwrap();
    let reports = eval_time_generalization(&out.best, &data.test, &[1, 5]).unwrap();
    let run = DeskRun {
        nrmse: [reports[0].nrmse.overall, reports[1].nrmse.overall],
        secs: start.elapsed().as_secs_f64(),
        out,
    };
    println!(
        "  desk {} run delta {delta} q {rk_stage}: best epoch {}, nRMSE {:.4} (dt) {:.4} (dt/5), {:.0}s",
        data.train.provenance.generator, run.out.best_epoch, run.nrmse[0], run.nrmse[1], run.secs
    );
    run
}

#[test]
#[ignore = "four desk-scale training runs, over an hour on one core"]
fn training_criteria() {
    // advection: speed 0.7, 64 points, 512/64/64 trajectories, 41 frames
    let adv = PresetSpec::new(DataPreset::AdvectionFixed, Scale::Desk).generate(1).unwrap();
    let main = desk_run(&adv, 1.0, 4);
    let no_l3 = desk_run(&adv, 0.0, 4);
    // Burgers with viscosity 0.1 on the same grid and split sizes
    let burgers = PresetSpec::new(DataPreset::BurgersFixed, Scale::Desk).generate(1).unwrap();
    let b4 = desk_run(&burgers, 1.0, 4);
    let b1 = desk_run(&burgers, 1.0, 1);

    let first = main.out.log.first().unwrap().ltr;
    let last = main.out.log.last().unwrap().ltr;
    let drop = first / last;
    let c6 = report(
        6,
        main.nrmse[0] < 0.10 && drop >= 10.0,
        format!(
            "test nRMSE {:.4} (< 0.10), training loss {first:.4} -> {last:.4} ({drop:.1}x, >= 10x), {:.0}s on {} thread(s)",
            main.nrmse[0],
            main.secs,
            rayon::current_num_threads()
        ),
    );
    let c7 = report(
        7,
        main.ratio() <= 1.5 && no_l3.ratio() > main.ratio(),
        format!(
            "nRMSE(dt/5)/nRMSE(dt) {:.4} with time-generalization term (<= 1.5), {:.4} without (must be larger)",
            main.ratio(),
            no_l3.ratio()
        ),
    );
    let c8 = report(
        8,
        b1.ratio() > b4.ratio(),
        format!(
            "Burgers degradation ratio q=1 {:.4} vs q=4 {:.4} (nRMSE at dt {:.3e} and {:.3e})",
            b1.ratio(),
            b4.ratio(),
            b1.nrmse[0],
            b4.nrmse[0]
        ),
    );
    assert_all(&[c6, c7, c8]);
}
