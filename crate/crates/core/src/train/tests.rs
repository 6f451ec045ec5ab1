use ndarray::Array2;
use proptest::prelude::*;

use super::*;
use crate::audio::rng_from_seed;
use crate::echo::dataset::Sources;
use crate::echo::{Corpus, RoomRanges, SignalKind, SynthConfig};
use crate::laec::{laec_manifest, FdkfConfig};
use crate::metrics::{total_loss, ItemMetrics};
use crate::model::{ModelConfig, Variant};

fn toy_example(len: usize, seed: u64) -> Example {
    let mut rng = rng_from_seed(seed);
    let s: Vec<f64> = (0..len)
        .map(|n| 0.3 * (n as f64 * 0.07).sin() * (n as f64 * 0.003).cos())
        .collect();
    let d_hat: Vec<f64> = (0..len).map(|_| rng.random_range(-0.2..0.2)).collect();
    let s_aec = s.iter().zip(&d_hat).map(|(a, b)| a + 0.5 * b).collect();
    Example {
        id: format!("toy{seed}"),
        s_aec,
        d_hat,
        s,
    }
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        steps_per_epoch: Some(2),
        ..TrainConfig::default()
    }
}

#[test]
fn lr_halves_after_four_flat_epochs() {
    let mut sch = LrSchedule::new(1e-3, 4);
    let halved: Vec<bool> = (0..10).map(|_| sch.observe(5.0)).collect();
    // Epoch 1 sets the best; epochs 2..=5 do not improve.
    assert_eq!(halved.iter().position(|&h| h), Some(4));
    assert_eq!(halved.iter().filter(|&&h| h).count(), 2);
    assert_eq!(sch.lr, 1e-3 / 4.0);
}

#[test]
fn improvement_resets_counter() {
    let mut sch = LrSchedule::new(1.0, 2);
    assert!(!sch.observe(3.0));
    assert!(!sch.observe(3.5));
    assert!(!sch.observe(2.0));
    assert_eq!(sch.epochs_since_improvement, 0);
    assert!(!sch.observe(2.0));
    assert!(sch.observe(2.0));
    assert_eq!(sch.lr, 0.5);
}

proptest! {
    #[test]
    fn lr_schedule_invariants(losses in prop::collection::vec(0.0f64..10.0, 1..60), patience in 1usize..6) {
        let mut sch = LrSchedule::new(1e-3, patience);
        let mut prev = sch.lr;
        for v in losses {
            sch.observe(v);
            prop_assert!(sch.lr <= prev);
            prop_assert_eq!(sch.lr, 1e-3 * 0.5f64.powi(sch.halvings as i32));
            prop_assert!(sch.epochs_since_improvement < patience);
            prev = sch.lr;
        }
    }
}

#[test]
fn example_loss_matches_metric_path() {
    let model = TasNet::new(ModelConfig::tiny(Variant::Mi), 1).unwrap();
    let ex = toy_example(400, 2);
    let cfg = TrainConfig::default();
    let (b, g) = example_loss(&model, &ex, &cfg, true).unwrap();
    assert!(g.unwrap().is_finite());
    let out = model
        .forward(
            &crate::Waveform::new(ex.s_aec.clone(), 16000),
            Some(&crate::Waveform::new(ex.d_hat.clone(), 16000)),
        )
        .unwrap();
    let inter: Vec<Vec<f64>> = out.intermediates.iter().map(|w| w.samples.clone()).collect();
    let reference = total_loss(&out.s_hat.samples, &inter, &ex.s, cfg.loss_weight, 3, true).unwrap();
    assert!((b.total - reference.total).abs() < 1e-12);
}

#[test]
fn single_stream_variant_uses_last_output_only() {
    let model = TasNet::new(ModelConfig::tiny(Variant::O), 1).unwrap();
    let ex = toy_example(300, 3);
    let (b, _) = example_loss(&model, &ex, &TrainConfig::default(), false).unwrap();
    assert!(b.loss_i.is_empty());
    assert_eq!(b.total, b.loss_last);
}

#[test]
fn clipped_norms_and_curve() {
    let mut model = TasNet::new(ModelConfig::tiny(Variant::Mi), 4).unwrap();
    let data: Vec<Example> = (0..3).map(|i| toy_example(300, i)).collect();
    let cfg = TrainConfig {
        clip_norm: 0.05,
        ..quick_cfg()
    };
    let out = train(&mut model, &data, &[], &cfg, 1, |_, _, _| {}).unwrap();
    assert_eq!(out.curve.len(), 6);
    assert_eq!(out.val_losses.len(), 3);
    for p in &out.curve {
        assert!(p.grad_norm <= 0.05 + 1e-9, "{}", p.grad_norm);
    }
    assert!(out.curve.windows(2).all(|w| w[1].lr <= w[0].lr));
    assert_eq!(out.state.step, 6);
    assert_eq!(out.state.optimizer.steps(), 6);
}

#[test]
fn deterministic_across_runs_and_thread_counts() {
    let data: Vec<Example> = (0..4).map(|i| toy_example(300, i)).collect();
    let run = |jobs| {
        let mut model = TasNet::new(ModelConfig::tiny(Variant::L), 9).unwrap();
        let out = train(&mut model, &data, &data[..1], &quick_cfg(), jobs, |_, _, _| {}).unwrap();
        (curve_csv(&out.curve), model.params().clone())
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(2));
}

#[test]
fn segment_crops_are_deterministic_and_used() {
    let data: Vec<Example> = (0..2).map(|i| toy_example(600, i)).collect();
    let cfg = TrainConfig {
        segment_len: Some(250),
        ..quick_cfg()
    };
    let run = || {
        let mut model = TasNet::new(ModelConfig::tiny(Variant::Mi), 3).unwrap();
        train(&mut model, &data, &[], &cfg, 1, |_, _, _| {}).unwrap();
        model.params().clone()
    };
    let a = run();
    assert_eq!(a, run());
    let mut full = TasNet::new(ModelConfig::tiny(Variant::Mi), 3).unwrap();
    train(&mut full, &data, &[], &quick_cfg(), 1, |_, _, _| {}).unwrap();
    assert_ne!(&a, full.params());
    let c = data[0].crop(100, 50);
    assert_eq!(c.s_aec[..], data[0].s_aec[100..150]);
    assert_eq!(c.s.len(), 50);
}

#[test]
fn max_steps_stops_early() {
    let mut model = TasNet::new(ModelConfig::tiny(Variant::O), 0).unwrap();
    let data = vec![toy_example(300, 0)];
    let cfg = TrainConfig {
        max_steps: Some(3),
        ..quick_cfg()
    };
    let out = train(&mut model, &data, &[], &cfg, 1, |_, _, _| {}).unwrap();
    assert_eq!(out.curve.len(), 3);
    assert_eq!(out.val_losses.len(), 2);
}

#[test]
fn checkpoints_and_curve_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = TasNet::new(ModelConfig::tiny(Variant::Mi), 2).unwrap();
    let data: Vec<Example> = (0..2).map(|i| toy_example(300, i)).collect();
    let cfg = TrainConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..quick_cfg()
    };
    let mut epochs = 0;
    train(&mut model, &data, &[], &cfg, 1, |_, _, _| epochs += 1).unwrap();
    assert_eq!(epochs, 3);
    let csv = std::fs::read_to_string(dir.path().join(LOSS_CURVE)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,train_loss,val_loss,lr");
    assert_eq!(lines.len(), 7);
    assert_eq!(lines.iter().filter(|l| !l.contains(",,")).count(), 4);
    let last = TasNet::load(dir.path().join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(last.params(), model.params());
    assert!(dir.path().join(BEST_CHECKPOINT).exists());
}

#[test]
fn non_finite_loss_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = TasNet::new(ModelConfig::tiny(Variant::Mi), 2).unwrap();
    let id = model.params().id("dec.w").unwrap();
    model.params_mut().get_mut(id).value[[0, 0]] = f64::NAN;
    let data = vec![toy_example(300, 0)];
    let cfg = TrainConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..quick_cfg()
    };
    let err = train(&mut model, &data, &[], &cfg, 1, |_, _, _| {}).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { step: 0, .. }), "{err}");
    assert!(err.to_string().contains("last good checkpoint: none"));
}

#[test]
fn empty_training_set_rejected() {
    let mut model = TasNet::new(ModelConfig::tiny(Variant::O), 0).unwrap();
    assert!(train(&mut model, &[], &[], &quick_cfg(), 1, |_, _, _| {}).is_err());
    let bad = TrainConfig {
        lr_halve_patience: 0,
        ..quick_cfg()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn validation_split_is_deterministic() {
    let data: Vec<Example> = (0..16).map(|i| toy_example(20, i)).collect();
    let (t, v) = split_validation(data, 0.25);
    assert_eq!((t.len(), v.len()), (12, 4));
    assert_eq!(v[0].id, "toy3");
}

/// Model whose encoder/decoder pair reconstructs its input: the encoder
/// holds `[I; -I]`, so `relu(x) - relu(-x)` recovers the frame.
fn reconstructing_model() -> TasNet {
    let base = ModelConfig::tiny(Variant::Mi);
    let l = base.enc_len;
    let cfg = ModelConfig {
        enc_filters: 2 * l,
        ..base
    };
    let mut model = TasNet::new(cfg, 0).unwrap();
    let enc = Array2::from_shape_fn((2 * l, l), |(r, c)| {
        if r == c {
            1.0
        } else if r == c + l {
            -1.0
        } else {
            0.0
        }
    });
    let overlap = (l / model.config().enc_hop) as f64;
    let dec = enc.t().mapv(|v| v / overlap);
    let store = model.params_mut();
    let e = store.id("enc_a.w").unwrap();
    store.get_mut(e).value = enc;
    let d = store.id("dec.w").unwrap();
    store.get_mut(d).value = dec;
    model
}

fn synth_manifest(dir: &std::path::Path) -> Manifest {
    let (a, b, c) = (
        Corpus::Synthetic(SignalKind::Speech),
        Corpus::Synthetic(SignalKind::Music),
        Corpus::Synthetic(SignalKind::Speech),
    );
    let cfg = SynthConfig {
        items: 6,
        item_secs: 1.5,
        rooms: 2,
        single_talk_fraction: 0.4,
        room_ranges: RoomRanges {
            t60_max: 0.2,
            ..Default::default()
        },
        ..Default::default()
    };
    let sources = Sources {
        far_speech: &a,
        far_music: &b,
        near: &c,
    };
    let mut m = crate::echo::synth_dataset(&cfg, &sources, 5, dir, 1).unwrap();
    let fdkf = FdkfConfig {
        block_len: 256,
        ..Default::default()
    };
    laec_manifest(&mut m, &fdkf, 1).unwrap();
    m
}

#[test]
fn laec_stage_and_evaluation_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_manifest(dir.path());
    let back = Manifest::read(dir.path()).unwrap();
    assert!(back.records.iter().all(|r| r.paths.s_aec.is_some() && r.paths.d_hat.is_some()));
    assert!(back.records.iter().any(|r| r.talk == Talk::Single));
    assert!(back.records.iter().any(|r| r.talk == Talk::Double));

    let model = reconstructing_model();
    let opts = EvalOptions {
        systems: vec![System::Laec, System::Model, System::PassThrough, System::OracleMask],
        ..Default::default()
    };
    let report = evaluate(&m, &model, &opts).unwrap();
    report.validate().unwrap();
    let items = &report.items;
    fn pick<'a>(items: &'a [ItemMetrics], sys: &'a str) -> impl Iterator<Item = &'a ItemMetrics> {
        items.iter().filter(move |r| r.system == sys)
    }
    let rows = |sys: &'static str| pick(items, sys);
    for r in rows("pass-through") {
        if let Some(x) = r.extra_erle_db {
            assert!(x.abs() < 0.05, "pass-through extra ERLE {x}");
        }
    }
    let mean_sisnr = |sys: &'static str| {
        let v: Vec<f64> = rows(sys).filter_map(|r| r.sisnr_db).collect();
        assert!(!v.is_empty());
        v.iter().sum::<f64>() / v.len() as f64
    };
    let laec = mean_sisnr("LAEC");
    let pass = mean_sisnr("pass-through");
    assert!((laec - pass).abs() < 0.05, "{laec} vs {pass}");
    assert!(mean_sisnr("oracle-mask") > pass + 1.0);
    for r in rows("oracle-mask") {
        assert_eq!(r.talk, Talk::Double);
        let p = rows("pass-through").find(|p| p.id == r.id).unwrap();
        assert!(r.sisnr_db > p.sisnr_db && r.sdr_db > p.sdr_db && r.stoi >= p.stoi);
    }
    assert!(rows("TasNet-MI").count() == m.records.len());
}

#[test]
fn checkpoint_round_trip_preserves_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_manifest(&dir.path().join("data"));
    let model = TasNet::new(ModelConfig::tiny(Variant::Mi), 8).unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let loaded = TasNet::load(&path).unwrap();
    let opts = EvalOptions {
        systems: vec![System::Model],
        ..Default::default()
    };
    let a = evaluate(&m, &model, &opts).unwrap();
    let b = evaluate(&m, &loaded, &opts).unwrap();
    assert_eq!(a.items.len(), b.items.len());
    for (x, y) in a.items.iter().zip(&b.items) {
        for (u, v) in [(x.sisnr_db, y.sisnr_db), (x.erle_db, y.erle_db), (x.stoi, y.stoi)] {
            assert_eq!(u.is_some(), v.is_some());
            if let (Some(u), Some(v)) = (u, v) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn evaluation_requires_laec_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = synth_manifest(dir.path());
    m.records[0].paths.s_aec = None;
    let model = TasNet::new(ModelConfig::tiny(Variant::O), 0).unwrap();
    let err = evaluate(&m, &model, &EvalOptions::default()).unwrap_err();
    assert!(err.to_string().contains("laec"), "{err}");
}
