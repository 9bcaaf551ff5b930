use std::sync::OnceLock;

use proptest::prelude::*;
use tavg_core::dataset::*;
use tavg_core::nn::Params;
use tavg_core::synth::{synthesize, SynthSpec};
use tavg_core::tensor::Tensor;
use tavg_core::trainer::*;
use tavg_core::Error;

fn tiny_config(mode: TrainMode) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.mode = mode;
    c.batch_size = 4;
    c.iterations = 10;
    c.seed = 11;
    c.model.image_size = 8;
    c.model.noise_dim = 8;
    c.model.gen_base_channels = 4;
    c.model.disc_base_channels = 4;
    c.model.disc_gru_channels = 4;
    c.model.encoder_channels = vec![4, 4, 8, 8, 8];
    c
}

/// 30 triplets and 3 baseline pairs from a 3 s synthetic clip at 8x8.
fn datasets() -> &'static (Dataset, Dataset) {
    static DATA: OnceLock<(Dataset, Dataset)> = OnceLock::new();
    DATA.get_or_init(|| {
        let clip = synthesize(&SynthSpec {
            width: 32,
            height: 32,
            ..SynthSpec::default()
        })
        .unwrap();
        let frames = FrameSequence {
            fps: 30.0,
            frames: clip.frames.clone(),
        };
        let audio = clip.audio.to_mono().unwrap();
        let t = build_dataset(&frames, &audio, &clip.annotations, DatasetMode::Triplet, 8).unwrap();
        let b = build_dataset(&frames, &audio, &clip.annotations, DatasetMode::Baseline, 8).unwrap();
        (t, b)
    })
}

fn first_batch(ds: &Dataset, n: usize) -> Batch {
    Batch::from_dataset(ds, &(0..n).collect::<Vec<_>>()).unwrap()
}

#[test]
fn discriminator_loss_examples() {
    let ln2 = std::f64::consts::LN_2;
    assert!((d_loss(&[0.5], &[0.5]).unwrap() - 2.0 * ln2).abs() < 1e-12);
    assert!((d_loss(&[0.8], &[0.3]).unwrap() - (-(0.8f64).ln() - (0.7f64).ln())).abs() < 1e-12);
    assert!((d_loss(&[0.8], &[0.3]).unwrap() - 0.5798).abs() < 1e-4);
    assert!(d_loss(&[1.0 - 1e-12], &[1e-12]).unwrap() < 1e-6);
    assert!(matches!(d_loss(&[], &[0.5]), Err(Error::EmptyScores)));
    assert!(matches!(d_loss(&[0.5], &[]), Err(Error::EmptyScores)));
}

#[test]
fn generator_loss_examples() {
    assert!((g_loss(&[0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((g_loss(&[0.25]).unwrap() - 4f64.ln()).abs() < 1e-12);
    assert!(g_loss(&[1.0 - 1e-12]).unwrap() < 1e-6);
    assert!(matches!(g_loss(&[]), Err(Error::EmptyScores)));
}

#[test]
fn logit_gradients_match_finite_differences() {
    let sig = |l: f64| 1.0 / (1.0 + (-l).exp());
    let logits_r = [0.3, -1.2, 2.0];
    let logits_f = [-0.4, 0.9];
    let pr: Vec<f64> = logits_r.iter().map(|&l| sig(l)).collect();
    let pf: Vec<f64> = logits_f.iter().map(|&l| sig(l)).collect();
    let (gr, gf) = d_loss_logit_grads(&pr, &pf);
    let h = 1e-6;
    for i in 0..3 {
        let mut up = pr.clone();
        let mut dn = pr.clone();
        up[i] = sig(logits_r[i] + h);
        dn[i] = sig(logits_r[i] - h);
        let fd = (d_loss(&up, &pf).unwrap() - d_loss(&dn, &pf).unwrap()) / (2.0 * h);
        assert!((fd - gr[i]).abs() < 1e-8);
    }
    for i in 0..2 {
        let mut up = pf.clone();
        let mut dn = pf.clone();
        up[i] = sig(logits_f[i] + h);
        dn[i] = sig(logits_f[i] - h);
        let fd = (d_loss(&pr, &up).unwrap() - d_loss(&pr, &dn).unwrap()) / (2.0 * h);
        assert!((fd - gf[i]).abs() < 1e-8);
        let fdg = (g_loss(&up).unwrap() - g_loss(&dn).unwrap()) / (2.0 * h);
        assert!((fdg - g_loss_logit_grads(&pf)[i]).abs() < 1e-8);
    }
    let (gr, gf) = d_loss_logit_grads(&[1.0 - 1e-9], &[1e-9]);
    assert_eq!((gr[0], gf[0]), (0.0, 0.0));
}

proptest! {
    #[test]
    fn losses_are_finite_under_clamping(
        real in proptest::collection::vec(0.0f64..=1.0, 1..8),
        fake in proptest::collection::vec(0.0f64..=1.0, 1..8),
    ) {
        let d = d_loss(&real, &fake).unwrap();
        let g = g_loss(&fake).unwrap();
        prop_assert!(d.is_finite() && d >= 0.0);
        prop_assert!(g.is_finite() && g >= 0.0);
    }
}

#[test]
fn one_step_is_finite_and_deterministic() {
    let (ds, _) = datasets();
    let batch = first_batch(ds, 4);
    let mut a = TrainState::new(tiny_config(TrainMode::WithGru)).unwrap();
    let mut b = a.clone();
    let ra = a.train_step(&batch).unwrap();
    let rb = b.train_step(&batch).unwrap();
    assert!(ra.is_finite());
    assert_eq!(ra, rb);
    assert_eq!(a, b);
    assert_eq!(encode_checkpoint(&a), encode_checkpoint(&b));
    assert_eq!(a.iteration, 1);
}

#[test]
fn phases_touch_only_their_own_networks() {
    let (ds, bs) = datasets();
    for (mode, data) in [
        (TrainMode::WithGru, ds),
        (TrainMode::NoGru, ds),
        (TrainMode::Baseline, bs),
    ] {
        let mut state = TrainState::new(tiny_config(mode)).unwrap();
        let batch = first_batch(data, 3);
        let before = state.clone();
        let prep = state.prepare(&batch).unwrap();
        state.discriminator_step(&batch.frames, &prep.fakes, &prep.y).unwrap();
        assert_eq!(state.models.generator, before.models.generator, "{mode}");
        assert_eq!(state.models.encoder, before.models.encoder, "{mode}");
        assert_eq!(state.optimizers.generator, before.optimizers.generator);
        assert_ne!(state.models.discriminator.flatten(), before.models.discriminator.flatten());

        let after_d = state.clone();
        state.generator_step(&prep).unwrap();
        assert_eq!(state.models.discriminator, after_d.models.discriminator, "{mode}");
        assert_eq!(state.optimizers.discriminator, after_d.optimizers.discriminator);
        assert_ne!(state.models.generator.flatten(), after_d.models.generator.flatten());
        assert_ne!(state.models.encoder.flatten(), after_d.models.encoder.flatten());
    }
}

#[test]
fn ten_iterations_write_checkpoint_and_log() {
    let (ds, _) = datasets();
    assert_eq!(ds.len(), 30);
    let dir = tempfile::tempdir().unwrap();
    let outputs = TrainOutputs {
        checkpoint: Some(dir.path().join("model.ckpt")),
        losses: Some(dir.path().join("losses.tsv")),
    };
    let mut config = tiny_config(TrainMode::WithGru);
    config.checkpoint_every = 4;
    let mut seen = 0;
    let (state, records) = train(&config, ds, &outputs, |_| seen += 1).unwrap();
    assert_eq!(state.iteration, 10);
    assert_eq!(seen, 10);
    assert!(records.iter().all(LossRecord::is_finite));
    let loaded = load_checkpoint(outputs.checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(loaded.iteration, 10);
    assert_eq!(loaded, state);
    let log = read_loss_log(outputs.losses.as_ref().unwrap()).unwrap();
    assert_eq!(log, records);
    assert_eq!(log.iter().map(|r| r.iteration).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
}

#[test]
fn repeated_seed_gives_identical_checkpoint_bytes() {
    let (ds, _) = datasets();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let outputs = TrainOutputs {
            checkpoint: Some(path.clone()),
            losses: None,
        };
        train(&tiny_config(TrainMode::NoGru), ds, &outputs, |_| {}).unwrap();
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.ckpt"), run("b.ckpt"));
    let mut other = tiny_config(TrainMode::NoGru);
    other.seed = 12;
    let (s, _) = train(&other, ds, &TrainOutputs::default(), |_| {}).unwrap();
    assert_ne!(encode_checkpoint(&s), run("c.ckpt"));
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let (ds, _) = datasets();
    let mut short = tiny_config(TrainMode::WithGru);
    short.iterations = 4;
    let (mut state, _) = train(&short, ds, &TrainOutputs::default(), |_| {}).unwrap();
    let restored = decode_checkpoint(&encode_checkpoint(&state)).unwrap();
    assert_eq!(restored, state);
    state = restored;
    state.config.iterations = 10;
    resume(&mut state, ds, &TrainOutputs::default(), |_| {}).unwrap();
    let (full, _) = train(&tiny_config(TrainMode::WithGru), ds, &TrainOutputs::default(), |_| {}).unwrap();
    // The embedded config differs only in `iterations`, which is now equal.
    assert_eq!(state, full);
}

#[test]
fn mode_and_dataset_preconditions() {
    let (ds, bs) = datasets();
    let err = train(&tiny_config(TrainMode::Baseline), ds, &TrainOutputs::default(), |_| {}).unwrap_err();
    assert!(matches!(err, Error::ModeMismatch { .. }));
    let err = train(&tiny_config(TrainMode::WithGru), bs, &TrainOutputs::default(), |_| {}).unwrap_err();
    assert!(matches!(err, Error::ModeMismatch { .. }));
    let empty = Dataset::triplet(8, vec![]);
    let err = train(&tiny_config(TrainMode::WithGru), &empty, &TrainOutputs::default(), |_| {}).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset));
    let mut wrong_size = tiny_config(TrainMode::WithGru);
    wrong_size.model.image_size = 16;
    assert!(train(&wrong_size, ds, &TrainOutputs::default(), |_| {}).is_err());
}

#[test]
fn baseline_trains_on_single_frames() {
    let (_, bs) = datasets();
    assert_eq!(bs.len(), 3);
    let mut c = tiny_config(TrainMode::Baseline);
    c.iterations = 3;
    let (state, records) = train(&c, bs, &TrainOutputs::default(), |_| {}).unwrap();
    assert_eq!(state.iteration, 3);
    assert!(records.iter().all(LossRecord::is_finite));
    assert_eq!(state.models.encoder.config.input_len, 16_000);
}

#[test]
fn checkpoint_errors() {
    let (ds, _) = datasets();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut c = tiny_config(TrainMode::NoGru);
    c.iterations = 1;
    let outputs = TrainOutputs {
        checkpoint: Some(path.clone()),
        losses: None,
    };
    train(&c, ds, &outputs, |_| {}).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    assert!(load_checkpoint_for(&path, TrainMode::NoGru).is_ok());
    assert!(matches!(
        load_checkpoint_for(&path, TrainMode::WithGru),
        Err(Error::ModeMismatch { .. })
    ));

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(decode_checkpoint(&flipped), Err(Error::CorruptCheckpoint(_))));
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::CorruptCheckpoint(_))));
    assert!(matches!(decode_checkpoint(b"hello"), Err(Error::CorruptCheckpoint(_))));

    let mut future = bytes.clone();
    future[4] = b'2';
    assert!(matches!(decode_checkpoint(&future), Err(Error::CheckpointVersion(v)) if v == "TAVG2"));
    assert!(matches!(load_checkpoint(&dir.path().join("absent")), Err(Error::MissingFile(_))));
}

#[test]
fn sampler_is_a_seeded_permutation_per_epoch() {
    let mut s = Sampler::new(5, 10);
    let epoch0: Vec<usize> = (0..5).flat_map(|i| s.batch(i, 2)).collect();
    let mut sorted = epoch0.clone();
    sorted.sort();
    assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    let again: Vec<usize> = (0..5).flat_map(|i| Sampler::new(5, 10).batch(i, 2)).collect();
    assert_eq!(epoch0, again);
    // Positions 9, 10, 11 cross into the second epoch.
    let straddle = s.batch(3, 3);
    assert_eq!(straddle[0], epoch0[9]);
    let epoch1: Vec<usize> = (5..10).flat_map(|i| s.batch(i, 2)).collect();
    assert_eq!(&straddle[1..], &epoch1[..2]);
    assert_ne!(epoch0, epoch1);
}

/// Discriminator-only toy: constant-bright real triplets against fixed
/// constant-dark fakes must become separable.
#[test]
fn discriminator_separates_bright_from_dark() {
    let mut c = tiny_config(TrainMode::WithGru);
    c.batch_size = 8;
    let mut state = TrainState::new(c).unwrap();
    let n = 8;
    let real: Vec<Tensor> = (0..3).map(|_| Tensor::full(&[n, 3, 8, 8], 0.9)).collect();
    let fake: Vec<Tensor> = (0..3).map(|_| Tensor::full(&[n, 3, 8, 8], -0.9)).collect();
    let y = noise_batch(3, 0, n, 128).map(|v| 0.1 * v);
    let mut reached = None;
    for step in 0..200 {
        let out = state.discriminator_step(&real, &fake, &y).unwrap();
        if out.accuracy() > 0.95 && reached.is_none() {
            reached = Some(step);
        }
    }
    let last = state.discriminator_step(&real, &fake, &y).unwrap();
    assert!(reached.is_some(), "accuracy never exceeded 95%");
    assert!(last.accuracy() > 0.95, "final accuracy {}", last.accuracy());
}
