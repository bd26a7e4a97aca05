use std::fs;
use std::path::Path;

use latent_pde::autodiff::Tape;
use latent_pde::data::{normalize, DataPreset, DatasetSplits, GridSpec, PresetSpec, Scale, SplitRanges, TimeGrid};
use latent_pde::model::{ModelConfig, SurrogateModel};
use latent_pde::training::{train_loss, Adam, Batch, LossWeights, TrainPlan, Trainer};
use proptest::prelude::*;

fn data(frames: usize) -> DatasetSplits {
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

fn model(seed: u64) -> SurrogateModel {
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

fn plan(epochs: usize) -> TrainPlan {
    TrainPlan {
        strategy: 2,
        gamma0: 0.1,
        k2_period: 2,
        lr: 2e-3,
        batch_size: 4,
        shard_size: 2,
        max_epochs: epochs,
        patience: 1000,
        seed: 5,
        ..TrainPlan::default()
    }
}

fn train_into(dir: &Path, d: &DatasetSplits, epochs: usize) {
    Trainer::new(model(1), plan(epochs), &d.train, &d.val)
        .unwrap()
        .with_output(dir)
        .unwrap()
        .run()
        .unwrap();
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    ["log.csv", "best.ckpt", "last.ckpt"]
        .iter()
        .map(|f| (f.to_string(), fs::read(dir.join(f)).unwrap()))
        .collect()
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[test]
fn single_threaded_runs_are_byte_identical() {
    let d = data(5);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pool(1).install(|| train_into(a.path(), &d, 6));
    pool(1).install(|| train_into(b.path(), &d, 6));
    assert_eq!(files(a.path()), files(b.path()));
}

#[test]
fn worker_count_does_not_change_results() {
    let d = data(5);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pool(1).install(|| train_into(a.path(), &d, 4));
    pool(3).install(|| train_into(b.path(), &d, 4));
    assert_eq!(files(a.path()), files(b.path()));
}

#[test]
fn interrupted_and_resumed_run_matches_an_uninterrupted_one() {
    let d = data(5);
    let (full, split) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train_into(full.path(), &d, 6);
    train_into(split.path(), &d, 3);
    let resumed = Trainer::resume(split.path(), Some(plan(6)), &d.train, &d.val).unwrap();
    assert_eq!(resumed.epoch(), 3);
    let out = resumed.run().unwrap();
    assert_eq!(out.log.len(), 6);
    assert_eq!(files(full.path()), files(split.path()));
}

#[test]
fn resume_rejects_a_different_plan() {
    let d = data(5);
    let dir = tempfile::tempdir().unwrap();
    train_into(dir.path(), &d, 2);
    let other = TrainPlan { lr: 1e-2, ..plan(4) };
    assert!(Trainer::resume(dir.path(), Some(other), &d.train, &d.val).is_err());
}

#[test]
fn strategy_two_schedules_follow_the_closed_forms() {
    let d = data(6);
    let f = 5;
    let g0 = 1.0 / 60.0;
    let p = TrainPlan {
        strategy: 2,
        gamma0: g0,
        k2_period: 30,
        max_epochs: 100,
        patience: 1000,
        batch_size: 6,
        lr: 1e-3,
        ..TrainPlan::default()
    };
    let out = Trainer::new(model(2), p, &d.train, &d.val).unwrap().run().unwrap();
    assert_eq!(out.log.len(), 100);
    for row in &out.log {
        let e = row.epoch;
        assert_eq!(row.gamma, (e as f64 * g0).min(1.0), "epoch {e}");
        assert_eq!(row.k2, f.min(1 + e / 30), "epoch {e}");
    }
}

#[test]
fn adam_step_is_reproducible() {
    let m = model(3);
    let grads: Vec<Vec<f64>> = m
        .params()
        .tensors()
        .iter()
        .map(|t| (0..t.len()).map(|i| ((i * 37) % 11) as f64 * 0.1 - 0.5).collect())
        .collect();
    let run = || {
        let mut p = m.params().clone();
        let mut adam = Adam::new(&p);
        for _ in 0..3 {
            adam.step(&mut p, &grads, 1e-3).unwrap();
        }
        p.tensors().iter().flat_map(|t| t.data().to_vec()).map(f64::to_bits).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn loss_terms_are_nonnegative_and_sum_to_the_total(
        seed in 0u64..1000,
        alpha in 0.0f64..2.0, beta in 0.0f64..2.0, gamma in 0.0f64..2.0,
        delta in 0.0f64..2.0, lambda_rg in 0.0f64..0.1,
        k1 in 1usize..5, k2 in 1usize..5,
    ) {
        prop_assume!(alpha + beta + gamma + delta > 0.0);
        let d = data(5);
        let train = normalize(&d.train, d.train.norm.as_ref().unwrap()).unwrap();
        let batch = Batch::from_dataset(&train, &[0, 1, 2]).unwrap();
        let split: Vec<f64> = (0..12).map(|r| 0.1 * ((r * 7) % 10) as f64 / 10.0).collect();
        let w = LossWeights { alpha, beta, gamma, delta, lambda_rg, k1, k2 };
        let m = model(seed);
        let tape = Tape::new();
        let p = m.bind(&tape, false);
        let (_, parts) = train_loss(&m, &p, &tape, &batch, &w, Some(&split)).unwrap();
        for v in [parts.l1, parts.l2t, parts.l2a, parts.l3, parts.lrg] {
            prop_assert!(v >= 0.0);
        }
        let sum = alpha * parts.l1 + beta * parts.l2t + gamma * parts.l2a + delta * parts.l3 + parts.lrg;
        prop_assert!((sum - parts.total).abs() <= 1e-12 * sum.max(1.0));
    }

    #[test]
    fn ramps_are_monotone_and_capped(gamma0 in 1e-4f64..1.0, period in 1usize..60, f in 1usize..50) {
        let p = TrainPlan { strategy: 2, gamma0, k2_period: period, ..TrainPlan::default() };
        let mut prev = (0.0, 0);
        for e in 1..=3000 {
            let (g, k) = (p.gamma_at(e), p.k2_at(e, f));
            prop_assert!(g >= prev.0 && k >= prev.1);
            prop_assert!(g <= 1.0 && k <= f);
            prev = (g, k);
        }
        let full = (1.0 / gamma0).ceil() as usize;
        prop_assert_eq!(p.gamma_at(full + 1), 1.0);
        prop_assert_eq!(p.k2_at(f * period, f), f);
    }
}
