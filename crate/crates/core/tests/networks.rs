use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tavg_core::discriminator::{discriminate, init_discriminator, DiscriminatorConfig};
use tavg_core::encoder::{encode, init_encoder, AudioEmbedding, EncoderConfig, SEGMENT_LEN};
use tavg_core::generator::{generate, init_generator, GeneratorConfig, GeneratorHead, GeneratorMode, NoiseVector};
use tavg_core::nn::Params;
use tavg_core::Tensor;

fn gen_config(mode: GeneratorMode) -> GeneratorConfig {
    GeneratorConfig {
        mode,
        base_channels: 8,
        out_size: 16,
        ..GeneratorConfig::default()
    }
}

fn disc_config() -> DiscriminatorConfig {
    DiscriminatorConfig {
        in_size: 16,
        base_channels: 8,
        gru_channels: 8,
        ..DiscriminatorConfig::default()
    }
}

fn embedding(rng: &mut ChaCha8Rng) -> AudioEmbedding {
    AudioEmbedding::new(Tensor::randn(&[128], 1.0, rng).into_data()).unwrap()
}

fn frames(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    (0..3)
        .map(|_| Tensor::randn(&[3, 16, 16], 1.0, rng).map(f64::tanh))
        .collect()
}

#[test]
fn both_generator_modes_emit_three_frames_of_equal_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = NoiseVector::sample(100, &mut rng);
    let y = embedding(&mut rng);
    for mode in [GeneratorMode::WithGru, GeneratorMode::NoGru] {
        let w = init_generator(&gen_config(mode), 3).unwrap();
        let out = generate(&z, &y, &w).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|f| f.shape() == [3, 16, 16]));
        assert_eq!(out, generate(&z, &y, &w).unwrap());
    }
}

#[test]
fn zero_recurrent_head_gives_gray_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut w = init_generator(&gen_config(GeneratorMode::WithGru), 4).unwrap();
    match &mut w.head {
        GeneratorHead::Gru(g) => g.visit_mut(&mut |t| t.fill(0.0)),
        GeneratorHead::Conv(_) => panic!("expected a recurrent head"),
    }
    let out = generate(&NoiseVector::sample(100, &mut rng), &embedding(&mut rng), &w).unwrap();
    assert!(out.iter().all(|f| f.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn encoder_is_deterministic() {
    let w = init_encoder(&EncoderConfig::default(), 7).unwrap();
    let seg: Vec<f32> = (0..SEGMENT_LEN).map(|i| ((i as f32) * 0.01).sin()).collect();
    let a = encode(&seg, &w).unwrap();
    assert_eq!(a.values().len(), 128);
    assert_eq!(a, encode(&seg, &w).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generator_pixels_in_range_and_condition_matters(seed in any::<u64>(), gru in any::<bool>()) {
        let mode = if gru { GeneratorMode::WithGru } else { GeneratorMode::NoGru };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = init_generator(&gen_config(mode), seed).unwrap();
        w.visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|v| *v *= 30.0));
        let z = NoiseVector::sample(100, &mut rng);
        let a = generate(&z, &embedding(&mut rng), &w).unwrap();
        let b = generate(&z, &embedding(&mut rng), &w).unwrap();
        prop_assert!(a.iter().chain(&b).all(|f| f.data().iter().all(|v| (-1.0..=1.0).contains(v))));
        let diff = a.iter().zip(&b).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max);
        prop_assert!(diff > 0.0);
    }

    #[test]
    fn discriminator_is_order_and_condition_sensitive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = init_discriminator(&disc_config(), seed).unwrap();
        let f = frames(&mut rng);
        let y = embedding(&mut rng);
        let p = discriminate(&f, &y, &w).unwrap().0;
        let reversed: Vec<Tensor> = f.iter().rev().cloned().collect();
        let q = discriminate(&reversed, &y, &w).unwrap().0;
        let r = discriminate(&f, &embedding(&mut rng), &w).unwrap().0;
        prop_assert!(p > 0.0 && p < 1.0);
        prop_assert!(p != q);
        prop_assert!(p != r);
    }
}
