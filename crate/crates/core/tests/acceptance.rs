//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line.
//!
//! Run with `cargo test -p contrail-core --test acceptance -- --nocapture`.

mod common;

use common::{brute_force_accumulate, finite_difference, max_relative_error};
use contrail_core::data::{make_step_stream, AugmentationConfig};
use contrail_core::hough::{extract_lines, HoughGrid, LineExtraction};
use contrail_core::ingest::read_manifest;
use contrail_core::losses::{
    dice_loss, dice_loss_grad, focal_loss, focal_loss_grad, log_dice_loss, log_dice_loss_grad,
    FocalConfig, LossId, SrLoss, SrLossConfig,
};
use contrail_core::model::ModelConfig;
use contrail_core::pipeline::{
    evaluate_scenes, load_checkpoint, train_on, RunConfig, TileConfig, TrainOutcome,
    predict_probabilities, METRICS_FILE,
};
use contrail_core::synthetic::{draw_segments, synthetic_dataset, synthetic_scene, Segment, SyntheticConfig};
use contrail_core::ingest::Split;
use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::Instant;

fn report(n: u32, what: &str, pass: bool, detail: String, started: Instant) -> bool {
    println!(
        "criterion {n} ({what}): {} [{detail}; {:.1} s]",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    pass
}

fn random_pair(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> (Array3<f64>, Array3<f64>) {
    let p = Array3::from_shape_fn(shape, |_| rng.gen_range(0.02..0.98f64).powi(3).max(0.01));
    let g = Array3::from_shape_fn(shape, |_| f64::from(u8::from(rng.gen_bool(0.3))));
    (p, g)
}

#[test]
fn criterion_1_loss_unit_values() {
    let t = Instant::now();
    let focal = focal_loss(
        ndarray::arr1(&[0.9]).view(),
        ndarray::arr1(&[1.0]).view(),
        &FocalConfig { gamma: 2.0 },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mask = Array2::from_shape_fn((16, 16), |_| f64::from(u8::from(rng.gen_bool(0.2))));
    let dice = dice_loss(mask.view(), mask.view()).unwrap();
    let ones = Array2::<f64>::ones((2, 2));
    let zeros = Array2::<f64>::zeros((2, 2));
    let logdice = log_dice_loss(ones.view(), zeros.view()).unwrap();
    let pass = (focal - 1.0536e-3).abs() <= 1e-7
        && dice.abs() <= 1e-9
        && (logdice - 1.6094).abs() <= 1e-4
        && t.elapsed().as_secs_f64() < 1.0;
    assert!(report(
        1,
        "loss unit values",
        pass,
        format!("focal {focal:.7e}, dice(p=g) {dice:.1e}, logdice {logdice:.5}"),
        t
    ));
}

#[test]
fn criterion_2_hough_matches_vote_loop() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let n_theta = [180, 45, 7][trial % 3];
        let res = [1.0, 0.5][trial % 2];
        let mask = Array2::from_shape_fn((h, w), |_| {
            if rng.gen_bool(0.4) {
                rng.gen_range(0.0..1.0)
            } else {
                0.0
            }
        });
        let grid = HoughGrid::new(h, w, n_theta, res).unwrap();
        let got = grid.soft_accumulate(mask.view()).unwrap().values;
        let (_, want) = brute_force_accumulate(mask.view(), n_theta, res);
        assert_eq!(got.dim(), want.dim());
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    let pass = worst <= 1e-6 && t.elapsed().as_secs() < 60;
    assert!(report(2, "Hough vs vote loop", pass, format!("max abs error {worst:.2e} over 200 masks"), t));
}

#[test]
fn criterion_3_gradient_checks() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let focal = FocalConfig { gamma: 2.0 };
    let sr = SrLoss::new(SrLossConfig::default(), 16, 16).unwrap();
    let mut worst = [0.0f64; 4];
    for _ in 0..20 {
        let (p, g) = random_pair(&mut rng, (1, 16, 16));
        let fd = |f: &dyn Fn(&Array3<f64>) -> f64| finite_difference(&p, 1e-4, f);
        let checks = [
            (
                dice_loss_grad(p.view(), g.view()).unwrap().1,
                fd(&|x| dice_loss(x.view(), g.view()).unwrap()),
            ),
            (
                focal_loss_grad(p.view(), g.view(), &focal).unwrap().1,
                fd(&|x| focal_loss(x.view(), g.view(), &focal).unwrap()),
            ),
            (
                log_dice_loss_grad(p.view(), g.view()).unwrap().1,
                fd(&|x| log_dice_loss(x.view(), g.view()).unwrap()),
            ),
            (
                sr.value_and_grad(p.view(), g.view()).unwrap().1,
                fd(&|x| sr.value(x.view(), g.view()).unwrap()),
            ),
        ];
        for (k, (analytic, numeric)) in checks.iter().enumerate() {
            worst[k] = worst[k].max(max_relative_error(analytic, numeric, 1e-8));
        }
    }
    let pass = worst.iter().all(|&e| e < 1e-3) && t.elapsed().as_secs() < 300;
    assert!(report(
        3,
        "gradient checks",
        pass,
        format!(
            "max relative error dice {:.1e}, focal {:.1e}, logdice {:.1e}, sr {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
        t
    ));
}

#[test]
fn criterion_4_line_beats_dots_in_hough_space() {
    let t = Instant::now();
    let n = 32;
    let g = draw_segments(n, n, &[Segment::new(2.0, 9.6, 29.0, 17.6)], 2.0).mapv(f64::from);
    let p = draw_segments(n, n, &[Segment::new(2.0, 12.6, 29.0, 20.6)], 2.0).mapv(f64::from);
    let mut free: Vec<(usize, usize)> = g
        .indexed_iter()
        .filter(|(_, &v)| v == 0.0)
        .map(|(i, _)| i)
        .collect();
    free.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
    let mut dots = Array2::zeros((n, n));
    for &i in free.iter().take(p.sum() as usize) {
        dots[i] = 1.0;
    }
    let sr = SrLoss::new(SrLossConfig::default(), n, n).unwrap();
    let batch = |m: &Array2<f64>| m.clone().insert_axis(Axis(0));
    let line = sr.terms(batch(&p).view(), batch(&g).view()).unwrap();
    let scattered = sr.terms(batch(&dots).view(), batch(&g).view()).unwrap();
    let margin = scattered.hough - line.hough;
    let pass = (line.pixel - scattered.pixel).abs() < 1e-12 && margin > 0.05 && t.elapsed().as_secs() < 10;
    assert!(report(
        4,
        "line vs dots",
        pass,
        format!(
            "pixel dice {:.4} both, hough term line {:.4} vs dots {:.4}, margin {margin:.4}",
            line.pixel, line.hough, scattered.hough
        ),
        t
    ));
}

#[test]
fn criterion_5_parallel_lines_resolved() {
    let t = Instant::now();
    let grid = HoughGrid::for_image(64, 64).unwrap();
    let mut counts = Vec::new();
    for (a, b) in [((0.0, 25.5), (63.0, 25.5)), ((3.0, 13.0), (59.0, 45.0))] {
        let segs = [
            Segment::new(a.0, a.1, b.0, b.1),
            Segment::new(a.0, a.1 + 6.0, b.0, b.1 + 6.0),
        ];
        let m = draw_segments(64, 64, &segs, 2.0).mapv(f64::from);
        let lines = extract_lines(&grid.soft_accumulate(m.view()).unwrap(), &LineExtraction::default());
        counts.push(lines.len());
    }
    let pass = counts.iter().all(|&c| c == 2) && t.elapsed().as_secs() < 10;
    assert!(report(5, "parallel lines 6 px apart", pass, format!("lines found {counts:?}"), t));
}

struct OverfitRun {
    _dir: tempfile::TempDir,
    outcome: TrainOutcome,
    seconds: f64,
}

/// The overfit run, shared by the overfit and tiling criteria.
fn overfit_run() -> &'static OverfitRun {
    static RUN: OnceLock<OverfitRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let t = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            loss: LossId::Dice,
            steps: Some(300),
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 1,
            eval_every: 100,
            checkpoint_every: 300,
            output_dir: dir.path().to_path_buf(),
            augmentation: AugmentationConfig {
                out_size: 64,
                ..Default::default()
            },
            model: ModelConfig::compact(4),
            ..Default::default()
        };
        let scenes = synthetic_dataset(3, 2, &SyntheticConfig::sized(64, 64), 1).unwrap();
        let outcome = train_on(&cfg, scenes, false).unwrap();
        OverfitRun {
            _dir: dir,
            outcome,
            seconds: t.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_6_overfit_three_scenes() {
    let t = Instant::now();
    let run = overfit_run();
    let last = run.outcome.history.last().unwrap();
    let pass = last.train_iou >= 0.5 && run.seconds <= 900.0;
    assert!(report(
        6,
        "overfit 3 scenes, 300 steps",
        pass,
        format!(
            "train IoU {:.4}, eval IoU {:.4}, training took {:.0} s",
            last.train_iou, last.eval_iou, run.seconds
        ),
        t
    ));
}

/// Needs the published labeled scenes, ingested into a manifest named by
/// `CONTRAIL_DATASET_MANIFEST`; without it the criterion is reported as skipped.
#[test]
fn criterion_7_paper_scale_reproduction() {
    let t = Instant::now();
    let Some(manifest) = std::env::var_os("CONTRAIL_DATASET_MANIFEST") else {
        println!(
            "criterion 7 (paper-scale reproduction): SKIP [published dataset not available; \
             set CONTRAIL_DATASET_MANIFEST to run]"
        );
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        loss: LossId::Dice,
        steps: Some(2000),
        eval_every: 100,
        manifest: Some(manifest.clone().into()),
        output_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    let scenes = read_manifest(std::path::Path::new(&manifest))
        .unwrap()
        .iter()
        .map(|e| e.load())
        .collect::<contrail_core::Result<Vec<_>>>()
        .unwrap();
    let eval: Vec<_> = scenes.iter().filter(|s| s.split == Split::Eval).cloned().collect();
    let outcome = train_on(&cfg, scenes, false).unwrap();
    let (model, meta) = load_checkpoint(&outcome.final_checkpoint, &candle_core::Device::Cpu).unwrap();
    let report_ = evaluate_scenes(&model, &eval, meta.out_size, meta.batch_size).unwrap();
    let pass = (0.12..=0.25).contains(&report_.mean_iou);
    assert!(report(
        7,
        "paper-scale reproduction",
        pass,
        format!("mean eval IoU {:.4} over {} scenes", report_.mean_iou, eval.len()),
        t
    ));
}

#[test]
fn criterion_8_determinism() {
    let t = Instant::now();
    let scenes = synthetic_dataset(3, 1, &SyntheticConfig::sized(48, 48), 8).unwrap();
    let train: Vec<_> = scenes.iter().filter(|s| s.split == Split::Train).cloned().collect();
    let aug = AugmentationConfig {
        out_size: 32,
        ..Default::default()
    };
    let a = make_step_stream(train.clone(), aug.clone(), 8, 2).unwrap();
    let b = make_step_stream(train, aug.clone(), 8, 2).unwrap();
    let bits = |x: &Array3<f32>| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let streams_equal = (0..50).all(|s| {
        let (x, y) = (a.batch_at(s), b.batch_at(s));
        bits(&x.images()) == bits(&y.images()) && x.masks() == y.masks()
    });

    let run = |dir: &std::path::Path| {
        let cfg = RunConfig {
            loss: LossId::Dice,
            steps: Some(50),
            batch_size: 2,
            learning_rate: 1e-3,
            seed: 8,
            eval_every: 10,
            checkpoint_every: 50,
            output_dir: dir.to_path_buf(),
            augmentation: aug.clone(),
            model: ModelConfig::compact(3),
            ..Default::default()
        };
        train_on(&cfg, scenes.clone(), false).unwrap();
        std::fs::read(dir.join(METRICS_FILE)).unwrap()
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (log1, log2) = (run(d1.path()), run(d2.path()));
    let logs_equal = log1 == log2 && !log1.is_empty();
    let pass = streams_equal && logs_equal && t.elapsed().as_secs() < 600;
    assert!(report(
        8,
        "determinism",
        pass,
        format!("50-step streams identical {streams_equal}, metric logs identical {logs_equal}"),
        t
    ));
}

#[test]
fn criterion_9_tiled_inference_agrees() {
    let run = overfit_run();
    let t = Instant::now();
    let (model, meta) = load_checkpoint(&run.outcome.final_checkpoint, &candle_core::Device::Cpu).unwrap();
    let scene = synthetic_scene("big", Split::Eval, &SyntheticConfig::sized(640, 640), 9).unwrap();
    let whole = predict_probabilities(
        &model,
        scene.image.view(),
        &TileConfig {
            window: 640,
            overlap: 32,
            batch_size: 1,
        },
    )
    .unwrap();
    let tiled = predict_probabilities(
        &model,
        scene.image.view(),
        &TileConfig {
            window: meta.out_size,
            overlap: 32,
            batch_size: 8,
        },
    )
    .unwrap();
    let agree = whole
        .iter()
        .zip(&tiled)
        .filter(|(a, b)| (**a >= 0.5) == (**b >= 0.5))
        .count() as f64
        / whole.len() as f64;
    let pass = agree > 0.98 && t.elapsed().as_secs() < 120;
    assert!(report(
        9,
        "whole vs tiled inference",
        pass,
        format!("{:.2}% of pixels agree, window {}", 100.0 * agree, meta.out_size),
        t
    ));
}
