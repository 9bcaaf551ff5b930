use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tavg_core::dataset::*;
use tavg_core::metrics::*;
use tavg_core::synth::{synthesize, SynthSpec};
use tavg_core::tensor::Tensor;
use tavg_core::trainer::{TrainConfig, TrainMode, TrainState};
use tavg_core::Error;

fn random_image(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn mse_oracle(a: &Tensor, b: &Tensor) -> f64 {
    let (c, h, w) = (a.dim(0), a.dim(1), a.dim(2));
    let mut total = 0.0;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let i = (ch * h + y) * w + x;
                let d = a.data()[i] - b.data()[i];
                total += d * d;
            }
        }
    }
    total / (c * h * w) as f64
}

#[test]
fn mse_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_image(&mut rng, &[3, 8, 8]);
    assert_eq!(mse(&a, &a).unwrap(), 0.0);
    let zero = Tensor::zeros(&[3, 8, 8]);
    let half = Tensor::full(&[3, 8, 8], 0.5);
    assert!((mse(&zero, &half).unwrap() - 0.25).abs() < 1e-15);
    assert!(matches!(
        mse(&zero, &Tensor::zeros(&[3, 8, 7])),
        Err(Error::ShapeMismatch { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mse_matches_loop_oracle_and_is_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, &[3, 8, 8]);
        let b = random_image(&mut rng, &[3, 8, 8]);
        let m = mse(&a, &b).unwrap();
        prop_assert!((m - mse_oracle(&a, &b)).abs() < 1e-12);
        prop_assert_eq!(m, mse(&b, &a).unwrap());
        prop_assert!(m >= 0.0);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, &[3, 8, 8]);
        let b = random_image(&mut rng, &[3, 8, 8]);
        let p = SsimParams::with_window(7);
        let s = ssim(&a, &b, &p).unwrap();
        prop_assert_eq!(s, ssim(&b, &a, &p).unwrap());
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn ssim_default_parameters() {
    let p = SsimParams::default();
    assert_eq!((p.window, p.sigma, p.k1, p.k2, p.dynamic_range), (11, 1.5, 0.01, 0.03, 2.0));
    let k = p.kernel();
    assert_eq!(k.len(), 121);
    assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(k[60] > k[0]);
}

#[test]
fn ssim_identity_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_image(&mut rng, &[3, 16, 16]);
    assert!((ssim(&a, &a, &SsimParams::default()).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn ssim_constant_images_reduce_to_luminance_term() {
    let p = SsimParams {
        dynamic_range: 1.0,
        ..SsimParams::default()
    };
    let a = Tensor::full(&[16, 16], 0.2);
    let b = Tensor::full(&[16, 16], 0.6);
    let c1 = (0.01f64 * 1.0).powi(2);
    let expected = (2.0 * 0.2 * 0.6 + c1) / (0.2f64.powi(2) + 0.6f64.powi(2) + c1);
    let got = ssim(&a, &b, &p).unwrap();
    assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    assert!((got - 0.6002).abs() < 2e-4);
}

#[test]
fn ssim_with_unit_window_is_mean_luminance_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_image(&mut rng, &[1, 6, 5]).reshape(&[6, 5]).unwrap();
    let b = random_image(&mut rng, &[1, 6, 5]).reshape(&[6, 5]).unwrap();
    let p = SsimParams::with_window(1);
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let oracle: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (2.0 * x * y + c1) / (x * x + y * y + c1))
        .sum::<f64>()
        / 30.0;
    assert!((ssim(&a, &b, &p).unwrap() - oracle).abs() < 1e-12);
}

#[test]
fn ssim_rejects_small_images() {
    let a = Tensor::zeros(&[3, 8, 8]);
    assert!(matches!(
        ssim(&a, &a, &SsimParams::default()),
        Err(Error::ImageSmallerThanWindow { size: 8, window: 11 })
    ));
    assert_eq!(SsimParams::fitted(8).window, 7);
    assert_eq!(SsimParams::fitted(9).window, 9);
    assert_eq!(SsimParams::fitted(64).window, 11);
}

#[test]
fn lpips_identity_positivity_symmetry() {
    let fx = ConvFeatureExtractor::random(0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_image(&mut rng, &[3, 16, 16]);
    let b = random_image(&mut rng, &[3, 16, 16]);
    assert_eq!(lpips(&a, &a, &fx).unwrap(), 0.0);
    let ab = lpips(&a, &b, &fx).unwrap();
    assert!(ab > 0.0);
    assert_eq!(ab, lpips(&b, &a, &fx).unwrap());
    assert_eq!(fx, ConvFeatureExtractor::random(0));
}

struct Failing;

impl FeatureExtractor for Failing {
    fn features(&self, _: &Tensor) -> tavg_core::Result<Vec<Tensor>> {
        Err(Error::Extractor("backbone unavailable".into()))
    }
}

#[test]
fn lpips_propagates_extractor_failure() {
    let a = Tensor::zeros(&[3, 8, 8]);
    assert!(matches!(lpips(&a, &a, &Failing), Err(Error::Extractor(_))));
}

#[test]
fn extractor_weights_round_trip() {
    let fx = ConvFeatureExtractor::random(9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fx.bin");
    fx.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], EXTRACTOR_MAGIC);
    assert_eq!(ConvFeatureExtractor::load(&path).unwrap(), fx);
    assert!(matches!(
        ConvFeatureExtractor::decode(&bytes[..bytes.len() - 1]),
        Err(Error::Extractor(_))
    ));
    assert!(matches!(ConvFeatureExtractor::decode(b"garbage!...."), Err(Error::Extractor(_))));
}

fn tiny_state(mode: TrainMode) -> TrainState {
    let mut c = TrainConfig::default();
    c.mode = mode;
    c.seed = 5;
    c.model.image_size = 8;
    c.model.noise_dim = 8;
    c.model.gen_base_channels = 4;
    c.model.disc_base_channels = 4;
    c.model.disc_gru_channels = 4;
    c.model.encoder_channels = vec![4, 4, 8, 8, 8];
    TrainState::new(c).unwrap()
}

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

fn options() -> EvalOptions {
    EvalOptions {
        seed: 3,
        ssim: SsimParams::fitted(8),
        ..EvalOptions::default()
    }
}

#[test]
fn ground_truth_row_is_perfect() {
    let (t, _) = datasets();
    let fx = ConvFeatureExtractor::random(0);
    let report = evaluate(
        &[Condition {
            name: "ground_truth",
            model: None,
            dataset: t,
        }],
        &fx,
        &options(),
    )
    .unwrap();
    let r = &report.rows[0];
    assert_eq!(r.mse, 0.0);
    assert!((r.ssim - 1.0).abs() < 1e-9);
    assert_eq!(r.lpips, 0.0);
    assert_eq!(r.samples, t.len());
}

#[test]
fn three_conditions_give_three_rows_in_column_order() {
    let (t, b) = datasets();
    let states = [
        tiny_state(TrainMode::Baseline),
        tiny_state(TrainMode::NoGru),
        tiny_state(TrainMode::WithGru),
    ];
    let conds = [
        Condition {
            name: "baseline",
            model: Some(&states[0]),
            dataset: b,
        },
        Condition {
            name: "no_gru",
            model: Some(&states[1]),
            dataset: t,
        },
        Condition {
            name: "with_gru",
            model: Some(&states[2]),
            dataset: t,
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let opts = EvalOptions {
        grid_dir: Some(dir.path().to_path_buf()),
        ..options()
    };
    let report = evaluate(&conds, &ConvFeatureExtractor::random(0), &opts).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.condition.as_str()).collect();
    assert_eq!(names, ["baseline", "no_gru", "with_gru"]);
    for r in &report.rows {
        assert!(r.mse >= 0.0 && r.lpips >= 0.0 && (-1.0..=1.0).contains(&r.ssim));
    }
    assert!(report.row("baseline").unwrap().temporal_mse.is_none());
    assert!(report.row("with_gru").unwrap().temporal_mse.unwrap() >= 0.0);
    let tsv = report.to_tsv();
    assert!(tsv.starts_with("condition\tMSE\tSSIM\tLPIPS\n"));
    assert_eq!(tsv.lines().count(), 4);
    let parsed = MetricReport::parse_tsv(&tsv).unwrap();
    assert_eq!(parsed.rows.len(), 3);
    assert!((parsed.rows[1].mse - report.rows[1].mse).abs() < 1e-6);
    for c in &conds {
        let png = image::open(dir.path().join(format!("{}.png", c.name))).unwrap();
        assert_eq!(png.height() as usize, 8 * c.dataset.len().min(8));
        assert_eq!(png.width() as usize, 8 * 2 * c.dataset.frames(0).len());
    }
}

#[test]
fn evaluation_is_deterministic_and_permutation_invariant() {
    let (t, _) = datasets();
    let state = tiny_state(TrainMode::WithGru);
    let fx = ConvFeatureExtractor::random(0);
    let run = |ds: &Dataset| {
        evaluate(
            &[Condition {
                name: "with_gru",
                model: Some(&state),
                dataset: ds,
            }],
            &fx,
            &options(),
        )
        .unwrap()
    };
    let forward = run(t);
    assert_eq!(forward, run(t));
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.reverse();
    order.swap(0, 7);
    let shuffled = t.subset(&order);
    assert_eq!(forward, run(&shuffled));
}

#[test]
fn evaluation_errors() {
    let (t, b) = datasets();
    let fx = ConvFeatureExtractor::random(0);
    let empty = t.subset(&[]);
    let err = evaluate(
        &[Condition {
            name: "with_gru",
            model: None,
            dataset: &empty,
        }],
        &fx,
        &options(),
    )
    .unwrap_err();
    assert_eq!(err.to_string(), "empty evaluation set");

    let state = tiny_state(TrainMode::WithGru);
    let wrong = Condition {
        name: "with_gru",
        model: Some(&state),
        dataset: b,
    };
    assert!(matches!(
        evaluate(&[wrong], &fx, &options()),
        Err(Error::ModeMismatch { .. })
    ));

    let mut available = BTreeMap::new();
    available.insert("with_gru".to_string(), PathBuf::from("w.ckpt"));
    available.insert("no_gru".to_string(), PathBuf::from("n.ckpt"));
    assert_eq!(select_checkpoints(&["no_gru"], &available).unwrap()[0].1, PathBuf::from("n.ckpt"));
    assert!(matches!(
        select_checkpoints(&["with_gru", "baseline"], &available),
        Err(Error::MissingCheckpoint(name)) if name == "baseline"
    ));
}

#[test]
fn temporal_mse_of_static_sequence_is_zero() {
    let f = Tensor::full(&[3, 4, 4], 0.3);
    assert_eq!(temporal_mse(&[f.clone(), f.clone(), f.clone()]).unwrap(), 0.0);
    let g = Tensor::full(&[3, 4, 4], 0.5);
    assert!((temporal_mse(&[f.clone(), g, f.clone()]).unwrap() - 0.04).abs() < 1e-12);
    assert!(matches!(temporal_mse(&[f]), Err(Error::EmptySequence)));
}
