use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tavg_core::convgru::{
    blend, gates, init_gru, unroll, unroll_backward, unroll_cached, GruConfig, GruWeights,
    StepInputs,
};
use tavg_core::gradcheck::{probe, worst, REL_FLOOR};
use tavg_core::nn::Params;
use tavg_core::Tensor;

/// Scalar GRU written out by hand: weights are
/// `[xz, hz, xr, hr, xc, hc]`.
fn scalar_gru(w: [f64; 6], xs: &[f64], h0: f64) -> Vec<f64> {
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h = h0;
    let mut out = vec![];
    for &x in xs {
        let z = sig(w[0] * x + w[1] * h);
        let r = sig(w[2] * x + w[3] * h);
        let c = (w[4] * x + r * (w[5] * h)).tanh();
        h = (1.0 - z) * c + z * h;
        out.push(h);
    }
    out
}

fn scalar_weights(w: [f64; 6]) -> GruWeights {
    let mut g = init_gru(GruConfig::new(1, 1, 1, 1, 1), 0).unwrap();
    g.set_flat(&w);
    g
}

fn scalar(v: f64) -> Tensor {
    Tensor::full(&[1, 1, 1, 1], v)
}

#[test]
fn scalar_oracle_unrolled() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_err: f64 = 0.0;
    for _ in 0..200 {
        let w: [f64; 6] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let xs: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let h0 = rng.random_range(-1.0..1.0);
        let expected = scalar_gru(w, &xs, h0);
        let inputs: Vec<Tensor> = xs.iter().map(|&x| scalar(x)).collect();
        let got = unroll(StepInputs::Sequence(&inputs), &scalar(h0), &scalar_weights(w)).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            worst_err = worst_err.max((g.data()[0] - e).abs());
        }
    }
    assert!(worst_err <= 1e-9, "max abs error {worst_err}");
}

#[test]
fn repeat_matches_sequence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = init_gru(GruConfig::new(2, 3, 4, 4, 3), 4).unwrap();
    let x = Tensor::randn(&[2, 2, 4, 4], 1.0, &mut rng);
    let h0 = w.zero_state(2);
    let a = unroll(StepInputs::Repeat(&x, 3), &h0, &w).unwrap();
    let seq = vec![x.clone(), x.clone(), x];
    let b = unroll(StepInputs::Sequence(&seq), &h0, &w).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    assert!(a.iter().all(|h| h.shape() == [2, 3, 4, 4]));
}

#[test]
fn gates_in_open_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut w = init_gru(GruConfig::new(2, 2, 5, 5, 3), 1).unwrap();
    w.visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|v| *v *= 20.0));
    let x = Tensor::randn(&[3, 2, 5, 5], 1.0, &mut rng);
    let h = Tensor::randn(&[3, 2, 5, 5], 0.5, &mut rng);
    let g = gates(&x, &h, &w).unwrap();
    for v in g.update.data().iter().chain(g.reset.data()) {
        assert!(*v > 0.0 && *v < 1.0);
    }
    assert!(g.candidate.data().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn gradient_matches_finite_differences() {
    // Hidden state 2×3×3, two steps.
    let cfg = GruConfig::new(2, 2, 3, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut w = init_gru(cfg, 3).unwrap();
    w.visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|v| *v *= 25.0));
    let xs: Vec<Tensor> = (0..2).map(|_| Tensor::randn(&[1, 2, 3, 3], 1.0, &mut rng)).collect();
    let h0 = Tensor::randn(&[1, 2, 3, 3], 0.5, &mut rng).map(f64::tanh);
    let probes_w: Vec<Tensor> = (0..2).map(|_| Tensor::randn(&[1, 2, 3, 3], 1.0, &mut rng)).collect();

    let loss_of = |w: &GruWeights| -> f64 {
        let hs = unroll(StepInputs::Sequence(&xs), &h0, w).unwrap();
        hs.iter()
            .zip(&probes_w)
            .map(|(h, p)| h.data().iter().zip(p.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };

    let (_, caches) = unroll_cached(StepInputs::Sequence(&xs), &h0, &w).unwrap();
    let mut grad = w.zeroed();
    let d: Vec<Option<Tensor>> = probes_w.iter().cloned().map(Some).collect();
    unroll_backward(&caches, &d, &w, &mut grad).unwrap();

    let flat = w.flatten();
    let analytic = grad.flatten();
    let indices: Vec<usize> = (0..flat.len()).collect();
    let mut scratch = w.clone();
    let mut f = |p: &[f64]| {
        scratch.set_flat(p);
        loss_of(&scratch)
    };
    let probes = probe(&flat, &analytic, &indices, 1e-6, &mut f);
    assert_eq!(probes.len(), cfg.param_count());
    let err = worst(&probes, REL_FLOOR);
    assert!(err <= 1e-4, "worst relative error {err}");
}

#[test]
fn input_and_state_gradients() {
    let cfg = GruConfig::new(1, 2, 3, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut w = init_gru(cfg, 7).unwrap();
    w.visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|v| *v *= 25.0));
    let x = Tensor::randn(&[1, 1, 3, 3], 1.0, &mut rng);
    let h0 = Tensor::randn(&[1, 2, 3, 3], 0.3, &mut rng);
    let (_, caches) = unroll_cached(StepInputs::Repeat(&x, 2), &h0, &w).unwrap();
    let ones = Tensor::full(&[1, 2, 3, 3], 1.0);
    let mut grad = w.zeroed();
    let (dxs, dh0) =
        unroll_backward(&caches, &[None, Some(ones)], &w, &mut grad).unwrap();
    let mut dx = dxs[0].clone();
    dx.add_assign(&dxs[1]);

    let loss = |x: &Tensor, h0: &Tensor| -> f64 {
        unroll(StepInputs::Repeat(x, 2), h0, &w).unwrap()[1].sum()
    };
    for i in 0..9 {
        let mut p = x.clone();
        p.data_mut()[i] += 1e-6;
        let mut m = x.clone();
        m.data_mut()[i] -= 1e-6;
        let num = (loss(&p, &h0) - loss(&m, &h0)) / 2e-6;
        assert!((num - dx.data()[i]).abs() < 1e-8);
    }
    for i in 0..18 {
        let mut p = h0.clone();
        p.data_mut()[i] += 1e-6;
        let mut m = h0.clone();
        m.data_mut()[i] -= 1e-6;
        let num = (loss(&x, &p) - loss(&x, &m)) / 2e-6;
        assert!((num - dh0.data()[i]).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hidden_state_stays_bounded(seed in any::<u64>(), scale in 1.0f64..200.0, steps in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = init_gru(GruConfig::new(2, 2, 3, 3, 3), seed).unwrap();
        w.visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|v| *v *= scale));
        let x = Tensor::randn(&[1, 2, 3, 3], 3.0, &mut rng);
        let h0 = Tensor::randn(&[1, 2, 3, 3], 1.0, &mut rng).map(|v| v.clamp(-1.0, 1.0));
        for h in unroll(StepInputs::Repeat(&x, steps), &h0, &w).unwrap() {
            prop_assert!(h.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn blend_is_convex(z in 0.0f64..=1.0, c in -1.0f64..=1.0, h in -1.0f64..=1.0) {
        let t = |v| Tensor::full(&[1, 1, 1, 1], v);
        let out = blend(&t(z), &t(c), &t(h)).unwrap().data()[0];
        prop_assert!(out >= c.min(h) - 1e-15 && out <= c.max(h) + 1e-15);
    }
}
