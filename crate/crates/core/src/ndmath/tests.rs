use super::*;
use crate::rng::SplitMix64;

fn randn(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| rng.next_gaussian())
}

/// Scalar probe `L = Σ c ⊙ y` with fixed random weights `c`.
fn probe(y: &Tensor2, c: &Tensor2) -> f64 {
    dot(y.data(), c.data())
}

fn with_data(t: &Tensor2, data: &[f64]) -> Tensor2 {
    Tensor2::new(t.rows(), t.cols(), data.to_vec()).unwrap()
}

/// Independent Φ(x) by composite Simpson quadrature of the normal density.
fn phi_quadrature(x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(0.0) + pdf(x);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

#[test]
fn gelu_values() {
    assert_eq!(gelu_scalar(0.0), 0.0);
    let oracle = 1.0 * phi_quadrature(1.0);
    assert!((oracle - 0.841345).abs() < 1e-6);
    assert!((gelu_scalar(1.0) - oracle).abs() < 1e-12);
    assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-9);
    assert!((gelu_scalar(-0.7) - (-0.7 * phi_quadrature(-0.7))).abs() < 1e-12);
}

#[test]
fn gelu_gradient_at_half() {
    let err = grad_check(|x| gelu_scalar(x[0]), &[0.5], &[gelu_grad_scalar(0.5)], DEFAULT_EPS);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn gelu_backward_matches_fd() {
    for seed in 0..20 {
        let mut rng = SplitMix64::new(seed);
        let x = randn(3, 4, &mut rng);
        let c = randn(3, 4, &mut rng);
        let dx = gelu_backward(&x, &c).unwrap();
        let f = |d: &[f64]| probe(&gelu(&with_data(&x, d)), &c);
        assert!(grad_check(f, x.data(), dx.data(), DEFAULT_EPS) < 1e-5);
    }
}

#[test]
fn linear_identity_and_hand_case() {
    let x = Tensor2::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
    let id = Linear::new(Tensor2::identity(2), vec![0.0, 0.0]).unwrap();
    assert_eq!(id.forward(&x).unwrap(), x);

    let layer = Linear::new(Tensor2::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap(), vec![1.0, 0.0]).unwrap();
    let y = layer.forward(&Tensor2::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
    assert_eq!(y.data(), &[4.0, 2.0]);
}

#[test]
fn linear_gradients_match_fd() {
    for seed in 0..20 {
        let mut rng = SplitMix64::new(100 + seed);
        let layer = Linear::new(randn(3, 5, &mut rng), randn(1, 3, &mut rng).into_data()).unwrap();
        let x = randn(4, 5, &mut rng);
        let c = randn(4, 3, &mut rng);
        let (dx, grads) = layer.backward(&x, &c).unwrap();

        let fw = |w: &[f64]| {
            probe(&Linear::new(with_data(&layer.weight, w), layer.bias.clone()).unwrap().forward(&x).unwrap(), &c)
        };
        assert!(grad_check(fw, layer.weight.data(), grads.weight.data(), DEFAULT_EPS) < 1e-7);
        let fb = |b: &[f64]| probe(&Linear::new(layer.weight.clone(), b.to_vec()).unwrap().forward(&x).unwrap(), &c);
        assert!(grad_check(fb, &layer.bias, &grads.bias, DEFAULT_EPS) < 1e-7);
        let fx = |d: &[f64]| probe(&layer.forward(&with_data(&x, d)).unwrap(), &c);
        assert!(grad_check(fx, x.data(), dx.data(), DEFAULT_EPS) < 1e-7);
    }
}

#[test]
fn batchnorm_standardized_input_passes_through() {
    // Columns already mean 0 / biased variance 1.
    let x = Tensor2::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
    let bn = BatchNorm::new(2);
    let (y, _) = bn.forward(&x, Mode::Train).unwrap();
    let shrink = 1.0 / (1.0 + bn.eps).sqrt();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - b * shrink).abs() < 1e-15);
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn batchnorm_constant_column_gives_beta() {
    let x = Tensor2::from_rows(&[vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let mut bn = BatchNorm::new(2);
    bn.beta = vec![0.25, -1.0];
    let (y, _) = bn.forward(&x, Mode::Train).unwrap();
    for i in 0..3 {
        assert_eq!(y.get(i, 0), 0.25);
    }
}

#[test]
fn batchnorm_train_statistics() {
    let mut rng = SplitMix64::new(5);
    let n = 64;
    let x = Tensor2::from_fn(n, 3, |_, j| 4.0 + (j as f64 + 0.5) * rng.next_gaussian());
    let bn = BatchNorm::new(3);
    let (y, _) = bn.forward(&x, Mode::Train).unwrap();
    let xm = x.col_means();
    for j in 0..3 {
        let var = (0..n).map(|i| (x.get(i, j) - xm[j]).powi(2)).sum::<f64>() / n as f64;
        let ym = (0..n).map(|i| y.get(i, j)).sum::<f64>() / n as f64;
        let yv = (0..n).map(|i| (y.get(i, j) - ym).powi(2)).sum::<f64>() / n as f64;
        assert!(ym.abs() < 1e-10 * n as f64);
        assert!((yv - var / (var + bn.eps)).abs() < 1e-12);
    }
}

#[test]
fn batchnorm_requires_two_rows_in_train() {
    let bn = BatchNorm::new(2);
    let x = Tensor2::zeros(1, 2);
    assert_eq!(bn.forward(&x, Mode::Train).unwrap_err(), NdError::BatchTooSmall { n: 1 });
    assert!(bn.forward(&x, Mode::Eval).is_ok());
}

#[test]
fn batchnorm_running_update() {
    let x = Tensor2::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
    let mut bn = BatchNorm::new(1);
    let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
    bn.commit(&cache);
    assert!((bn.running_mean[0] - 0.1).abs() < 1e-15);
    assert!((bn.running_var[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-15);
    let (_, eval_cache) = bn.forward(&x, Mode::Eval).unwrap();
    let before = bn.clone();
    bn.commit(&eval_cache);
    assert_eq!(bn, before);
}

#[test]
fn batchnorm_backward_matches_fd() {
    for seed in 0..20 {
        let mut rng = SplitMix64::new(200 + seed);
        let mut bn = BatchNorm::new(3);
        bn.gamma = randn(1, 3, &mut rng).into_data();
        bn.beta = randn(1, 3, &mut rng).into_data();
        bn.running_mean = randn(1, 3, &mut rng).into_data();
        bn.running_var = (0..3).map(|_| 0.5 + rng.next_f64()).collect();
        let x = randn(5, 3, &mut rng);
        let c = randn(5, 3, &mut rng);
        for mode in [Mode::Train, Mode::Eval] {
            let (_, cache) = bn.forward(&x, mode).unwrap();
            let (dx, grads) = bn.backward(&cache, &c).unwrap();
            let fx = |d: &[f64]| probe(&bn.forward(&with_data(&x, d), mode).unwrap().0, &c);
            let err = grad_check(fx, x.data(), dx.data(), DEFAULT_EPS);
            assert!(err < 1e-5, "{mode:?} dx {err}");
            let fg = |g: &[f64]| {
                let mut b = bn.clone();
                b.gamma = g.to_vec();
                probe(&b.forward(&x, mode).unwrap().0, &c)
            };
            assert!(grad_check(fg, &bn.gamma, &grads.gamma, DEFAULT_EPS) < 1e-5);
            let fb = |g: &[f64]| {
                let mut b = bn.clone();
                b.beta = g.to_vec();
                probe(&b.forward(&x, mode).unwrap().0, &c)
            };
            assert!(grad_check(fb, &bn.beta, &grads.beta, DEFAULT_EPS) < 1e-5);
        }
    }
}

#[test]
fn dropout_identity_cases() {
    let mut rng = SplitMix64::new(1);
    let x = randn(4, 4, &mut rng);
    for mode in [Mode::Train, Mode::Eval] {
        assert_eq!(dropout(&x, 0.0, mode, &mut rng).unwrap().0, x);
    }
    assert_eq!(dropout(&x, 0.9, Mode::Eval, &mut rng).unwrap().0, x);
    assert_eq!(dropout(&x, 1.0, Mode::Train, &mut rng).unwrap_err(), NdError::InvalidProbability(1.0));
}

#[test]
fn dropout_preserves_mean() {
    let mut rng = SplitMix64::new(2);
    let x = Tensor2::from_fn(100, 1000, |_, _| 1.0 + rng.next_f64());
    let (y, mask) = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
    let mx = x.data().iter().sum::<f64>() / 1e5;
    let my = y.data().iter().sum::<f64>() / 1e5;
    assert!(((my - mx) / mx).abs() < 0.02, "{mx} vs {my}");
    let ones = Tensor2::filled(100, 1000, 1.0);
    let back = mask.backward(&ones);
    for (b, (yv, xv)) in back.data().iter().zip(y.data().iter().zip(x.data())) {
        assert!((b * xv - yv).abs() < 1e-12);
    }
}

#[test]
fn lora_zero_b_is_base() {
    let mut rng = SplitMix64::new(3);
    let base = Linear::uniform_init(6, 4, &mut rng);
    let lora = LoraAdapter::init(6, 4, 2, 8.0, &mut rng).unwrap();
    for _ in 0..20 {
        let x = randn(3, 6, &mut rng);
        assert_eq!(lora_forward(&x, &base, &lora).unwrap().0, base.forward(&x).unwrap());
    }
}

#[test]
fn lora_scale_is_linear() {
    let mut rng = SplitMix64::new(4);
    let base = Linear::uniform_init(5, 3, &mut rng);
    let mut lora = LoraAdapter::new(randn(2, 5, &mut rng), randn(3, 2, &mut rng), 2.0).unwrap();
    assert_eq!(lora.scale(), 1.0);
    let x = randn(2, 5, &mut rng);
    let d1 = lora_forward(&x, &base, &lora).unwrap().0.sub(&base.forward(&x).unwrap()).unwrap();
    lora.alpha = 4.0;
    let d2 = lora_forward(&x, &base, &lora).unwrap().0.sub(&base.forward(&x).unwrap()).unwrap();
    for (a, b) in d1.data().iter().zip(d2.data()) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
}

#[test]
fn lora_rank_validation() {
    let mut rng = SplitMix64::new(0);
    assert!(matches!(LoraAdapter::init(3, 8, 4, 1.0, &mut rng), Err(NdError::InvalidRank { .. })));
    assert!(matches!(LoraAdapter::init(8, 8, 2, 0.0, &mut rng), Err(NdError::InvalidAlpha(_))));
}

#[test]
fn lora_gradients_match_fd() {
    for seed in 0..20 {
        let mut rng = SplitMix64::new(300 + seed);
        let base = Linear::new(randn(4, 6, &mut rng), randn(1, 4, &mut rng).into_data()).unwrap();
        let lora = LoraAdapter::new(randn(2, 6, &mut rng), randn(4, 2, &mut rng), 3.0).unwrap();
        let x = randn(3, 6, &mut rng);
        let c = randn(3, 4, &mut rng);
        let (_, cache) = lora_forward(&x, &base, &lora).unwrap();
        let (dx, _, grads) = lora_backward(&x, &base, &lora, &cache, &c).unwrap();
        let fa = |a: &[f64]| {
            let l = LoraAdapter::new(with_data(&lora.a, a), lora.b.clone(), lora.alpha).unwrap();
            probe(&lora_forward(&x, &base, &l).unwrap().0, &c)
        };
        assert!(grad_check(fa, lora.a.data(), grads.a.data(), DEFAULT_EPS) < 1e-6);
        let fb = |b: &[f64]| {
            let l = LoraAdapter::new(lora.a.clone(), with_data(&lora.b, b), lora.alpha).unwrap();
            probe(&lora_forward(&x, &base, &l).unwrap().0, &c)
        };
        assert!(grad_check(fb, lora.b.data(), grads.b.data(), DEFAULT_EPS) < 1e-6);
        let fx = |d: &[f64]| probe(&lora_forward(&with_data(&x, d), &base, &lora).unwrap().0, &c);
        assert!(grad_check(fx, x.data(), dx.data(), DEFAULT_EPS) < 1e-6);
    }
}

#[test]
fn gate_saturation_and_midpoint() {
    let mut rng = SplitMix64::new(6);
    let u = randn(3, 4, &mut rng);
    let v = randn(3, 4, &mut rng);
    let sat = GateUnit::new(Tensor2::zeros(4, 8), vec![20.0; 4]).unwrap();
    let out = gated_fuse(&u, &v, &sat).unwrap();
    for (o, a) in out.data().iter().zip(u.data()) {
        assert!((o - a).abs() < 1e-8);
    }
    let half = GateUnit::new(Tensor2::zeros(4, 8), vec![0.0; 4]).unwrap();
    let out = gated_fuse(&u, &v, &half).unwrap();
    for ((o, a), b) in out.data().iter().zip(u.data()).zip(v.data()) {
        assert!((o - (a + b) / 2.0).abs() < 1e-15);
    }
}

#[test]
fn gate_is_convex_combination() {
    for seed in 0..20 {
        let mut rng = SplitMix64::new(400 + seed);
        let gate = GateUnit::new(randn(5, 10, &mut rng).scale(3.0), randn(1, 5, &mut rng).into_data()).unwrap();
        let u = randn(6, 5, &mut rng);
        let v = randn(6, 5, &mut rng);
        let out = gated_fuse(&u, &v, &gate).unwrap();
        for ((o, a), b) in out.data().iter().zip(u.data()).zip(v.data()) {
            assert!(*o >= a.min(*b) - 1e-15 && *o <= a.max(*b) + 1e-15);
        }
    }
}

#[test]
fn gate_gradients_match_fd() {
    for seed in 0..20 {
        let mut rng = SplitMix64::new(500 + seed);
        let gate = GateUnit::new(randn(3, 6, &mut rng), randn(1, 3, &mut rng).into_data()).unwrap();
        let u = randn(4, 3, &mut rng);
        let v = randn(4, 3, &mut rng);
        let c = randn(4, 3, &mut rng);
        let (_, cache) = gate.forward(&u, &v).unwrap();
        let (du, dv, grads) = gate.backward(&u, &v, &cache, &c).unwrap();
        let fu = |d: &[f64]| probe(&gated_fuse(&with_data(&u, d), &v, &gate).unwrap(), &c);
        assert!(grad_check(fu, u.data(), du.data(), DEFAULT_EPS) < 1e-5);
        let fv = |d: &[f64]| probe(&gated_fuse(&u, &with_data(&v, d), &gate).unwrap(), &c);
        assert!(grad_check(fv, v.data(), dv.data(), DEFAULT_EPS) < 1e-5);
        let fw = |d: &[f64]| {
            let g = GateUnit::new(with_data(&gate.weight, d), gate.bias.clone()).unwrap();
            probe(&gated_fuse(&u, &v, &g).unwrap(), &c)
        };
        assert!(grad_check(fw, gate.weight.data(), grads.weight.data(), DEFAULT_EPS) < 1e-5);
        let fb = |d: &[f64]| {
            let g = GateUnit::new(gate.weight.clone(), d.to_vec()).unwrap();
            probe(&gated_fuse(&u, &v, &g).unwrap(), &c)
        };
        assert!(grad_check(fb, &gate.bias, &grads.bias, DEFAULT_EPS) < 1e-5);
    }
}

#[test]
fn gate_shape_mismatch() {
    let gate = GateUnit::new(Tensor2::zeros(2, 4), vec![0.0; 2]).unwrap();
    assert!(gated_fuse(&Tensor2::zeros(1, 2), &Tensor2::zeros(2, 2), &gate).is_err());
    assert!(GateUnit::new(Tensor2::zeros(2, 3), vec![0.0; 2]).is_err());
}

#[test]
fn mean_pool_backward_matches_fd() {
    let mut rng = SplitMix64::new(8);
    let x = randn(5, 3, &mut rng);
    let c = randn(1, 3, &mut rng);
    let dx = mean_pool_rows_backward(&c, 5);
    let f = |d: &[f64]| probe(&mean_pool_rows(&with_data(&x, d)), &c);
    assert!(grad_check(f, x.data(), dx.data(), DEFAULT_EPS) < 1e-7);
}
