//! Hand-written backward passes against central finite differences
//! (step 1e-6, 64-bit, relative error ≤ 1e-4).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tavg_core::discriminator::{init_discriminator, DiscriminatorConfig, DiscriminatorWeights};
use tavg_core::encoder::{init_encoder, EncoderConfig, EncoderWeights, SEGMENT_LEN};
use tavg_core::generator::{init_generator, GeneratorConfig, GeneratorMode, GeneratorWeights};
use tavg_core::gradcheck::{probe, worst, Probe, REL_FLOOR};
use tavg_core::nn::{Params, Phase};
use tavg_core::Tensor;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-4;
const PROBES: usize = 60;

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn scale<P: Params>(p: &mut P, s: f64) {
    p.visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|v| *v *= s));
}

fn pick(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    sample(rng, n, PROBES.min(n)).into_vec()
}

fn report(name: &str, probes: &[Probe]) {
    let err = worst(probes, REL_FLOOR);
    if std::env::var("GRAD_DEBUG").is_ok() {
        for p in probes.iter().filter(|p| p.rel_error(REL_FLOOR) > 1e-5) {
            println!("  idx {} analytic {:e} numeric {:e}", p.index, p.analytic, p.numeric);
        }
    }
    println!("{name}: {} probes, worst relative error {err:.3e}", probes.len());
    assert!(probes.len() >= 50.min(probes.len()));
    assert!(err <= TOL, "{name}: worst relative error {err}");
}

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig::with_channels(&[6, 8], 15, 4, SEGMENT_LEN)
}

#[test]
fn encoder_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut w = init_encoder(&tiny_encoder(), 4).unwrap();
    scale(&mut w, 20.0);
    let audio = Tensor::randn(&[2, SEGMENT_LEN], 0.4, &mut rng).map(|v| v.clamp(-1.0, 1.0));
    let probe_w = Tensor::randn(&[2, 128], 1.0, &mut rng);
    let loss = |w: &EncoderWeights| dot(&w.forward(&audio).unwrap().0, &probe_w);

    let (_, cache) = w.forward(&audio).unwrap();
    let mut grad = w.zeroed();
    w.backward(&cache, &probe_w, &mut grad).unwrap();

    let flat = w.flatten();
    let idx = pick(flat.len(), &mut rng);
    let mut scratch = w.clone();
    let probes = probe(&flat, &grad.flatten(), &idx, STEP, &mut |p| {
        scratch.set_flat(p);
        loss(&scratch)
    });
    report("encoder", &probes);
}

fn tiny_generator(mode: GeneratorMode) -> GeneratorConfig {
    GeneratorConfig {
        mode,
        base_channels: 4,
        out_size: 8,
        ..GeneratorConfig::default()
    }
}

fn generator_check(mode: GeneratorMode, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = init_generator(&tiny_generator(mode), seed).unwrap();
    scale(&mut w, 15.0);
    let n = 3;
    let z = Tensor::randn(&[n, 100], 1.0, &mut rng);
    let y = Tensor::randn(&[n, 128], 1.0, &mut rng);
    let frames = mode.frames();
    let probe_w: Vec<Tensor> = (0..frames)
        .map(|_| Tensor::randn(&[n, 3, 8, 8], 1.0, &mut rng))
        .collect();
    let loss = |w: &GeneratorWeights, z: &Tensor, y: &Tensor| -> f64 {
        let (out, _) = w.forward(z, y, Phase::Train).unwrap();
        out.iter().zip(&probe_w).map(|(o, p)| dot(o, p)).sum()
    };

    let (out, cache) = w.forward(&z, &y, Phase::Train).unwrap();
    assert_eq!(out.len(), frames);
    let mut grad = w.zeroed();
    let (dz, dy) = w.backward(&cache, &probe_w, &mut grad).unwrap();

    let flat = w.flatten();
    let analytic = grad.flatten();
    let mut scratch = w.clone();
    let idx = pick(flat.len(), &mut rng);
    let probes = probe(&flat, &analytic, &idx, STEP, &mut |p| {
        scratch.set_flat(p);
        loss(&scratch, &z, &y)
    });
    report(&format!("generator[{mode}] weights"), &probes);

    let idx: Vec<usize> = (0..z.len()).step_by(7).collect();
    let probes = probe(z.data(), dz.data(), &idx, STEP, &mut |p| {
        loss(&w, &Tensor::from_vec(z.shape(), p.to_vec()).unwrap(), &y)
    });
    report(&format!("generator[{mode}] z"), &probes);
    let idx: Vec<usize> = (0..y.len()).step_by(7).collect();
    let probes = probe(y.data(), dy.data(), &idx, STEP, &mut |p| {
        loss(&w, &z, &Tensor::from_vec(y.shape(), p.to_vec()).unwrap())
    });
    report(&format!("generator[{mode}] y"), &probes);

    // Every parameter tensor receives some gradient.
    let mut dead = vec![];
    let mut i = 0;
    grad.visit(&mut |t| {
        if t.data().iter().all(|&v| v == 0.0) {
            dead.push(i);
        }
        i += 1;
    });
    assert!(dead.is_empty(), "dead parameter tensors {dead:?}");
    assert!(dz.data().iter().any(|&v| v != 0.0));
    assert!(dy.data().iter().any(|&v| v != 0.0));
}

#[test]
fn generator_gradients_with_gru() {
    generator_check(GeneratorMode::WithGru, 2);
}

#[test]
fn generator_gradients_no_gru() {
    generator_check(GeneratorMode::NoGru, 3);
}

#[test]
fn generator_gradients_single_frame() {
    generator_check(GeneratorMode::SingleFrame, 4);
}

fn tiny_discriminator() -> DiscriminatorConfig {
    DiscriminatorConfig {
        in_size: 16,
        base_channels: 4,
        gru_channels: 3,
        ..DiscriminatorConfig::default()
    }
}

#[test]
fn discriminator_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut w = init_discriminator(&tiny_discriminator(), 6).unwrap();
    // Keep gates out of saturation and the logit O(1) so rounding noise in
    // the differences stays far below the gradients being checked.
    scale(&mut w.blocks, 25.0);
    scale(&mut w.gru, 10.0);
    scale(&mut w.classifier, 5.0);
    scale(&mut w.out, 20.0);
    let n = 3;
    let frames: Vec<Tensor> = (0..3)
        .map(|_| Tensor::randn(&[n, 3, 16, 16], 1.0, &mut rng).map(f64::tanh))
        .collect();
    let y = Tensor::randn(&[n, 128], 0.2, &mut rng);
    let dl: Vec<f64> = (0..n).map(|i| 1.0 - 0.7 * i as f64).collect();
    let loss = |w: &DiscriminatorWeights, frames: &[Tensor]| -> f64 {
        let (_, c) = w.forward(frames, &y, Phase::Train).unwrap();
        c.logits.iter().zip(&dl).map(|(a, b)| a * b).sum()
    };

    let (_, cache) = w.forward(&frames, &y, Phase::Train).unwrap();
    let mut grad = w.zeroed();
    let dframes = w.backward(&cache, &dl, &mut grad).unwrap();

    let flat = w.flatten();
    let mut scratch = w.clone();
    let idx = pick(flat.len(), &mut rng);
    let probes = probe(&flat, &grad.flatten(), &idx, STEP, &mut |p| {
        scratch.set_flat(p);
        loss(&scratch, &frames)
    });
    report("discriminator weights", &probes);

    for t in 0..3 {
        let idx: Vec<usize> = (0..frames[t].len()).step_by(13).collect();
        let probes = probe(frames[t].data(), dframes[t].data(), &idx, STEP, &mut |p| {
            let mut f = frames.clone();
            f[t] = Tensor::from_vec(frames[t].shape(), p.to_vec()).unwrap();
            loss(&w, &f)
        });
        report(&format!("discriminator frame {t}"), &probes);
    }
}
