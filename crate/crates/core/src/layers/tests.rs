use super::*;
use proptest::prelude::*;

fn fc(n_in: usize, n_out: usize, act: Activation) -> LayerSpec {
    LayerSpec::fully_connected(&[n_in], n_out, act)
}

fn random_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    uniform_init(shape, -1.0, 1.0, rng).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[test]
fn fully_connected_hand_sum() {
    let spec = fc(2, 2, Activation::Relu);
    let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let weights = LayerWeights::reciprocal(&spec, w).unwrap();
    let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
    let out = layer_forward(&spec, &weights, &x, &mut SeededRng::new(0), true).unwrap();
    assert_eq!(out.pre_activation.data(), &[4.0, 6.0]);
    assert_eq!(out.activation.data(), &[4.0, 6.0]);
    assert_eq!(out.gate.data(), &[1.0, 1.0]);
}

#[test]
fn table_unit_counts() {
    let c1 = LayerSpec::conv2d(&[28, 28, 1], 32, (3, 3), (1, 1), (0, 0)).unwrap();
    assert_eq!(c1.out_units(), 21632);
    let c2 = LayerSpec::conv2d(&c1.out_shape, 32, (3, 3), (2, 2), (1, 1)).unwrap();
    assert_eq!(c2.out_units(), 5408);
    let c1 = LayerSpec::conv2d(&[32, 32, 3], 32, (3, 3), (1, 1), (0, 0)).unwrap();
    assert_eq!(c1.out_units(), 28800);
    let c2 = LayerSpec::conv2d(&c1.out_shape, 32, (3, 3), (2, 2), (1, 1)).unwrap();
    assert_eq!(c2.out_units(), 7200);
    // without padding the strided layer would give 12x12 / 14x14
    let bad = LayerSpec::conv2d(&[26, 26, 32], 32, (3, 3), (2, 2), (0, 0)).unwrap();
    assert_eq!(bad.out_units(), 12 * 12 * 32);
}

#[test]
fn spec_validation() {
    assert!(LayerSpec::dropout(&[4], 1.0).is_err());
    assert!(LayerSpec::dropout(&[4], -0.1).is_err());
    assert!(LayerSpec::conv2d(&[2, 2, 1], 1, (3, 3), (1, 1), (0, 0)).is_err());
    assert!(LayerSpec::conv2d(&[4, 4], 1, (3, 3), (1, 1), (0, 0)).is_err());
    let mut s = LayerSpec::conv2d(&[5, 5, 1], 2, (3, 3), (1, 1), (0, 0)).unwrap();
    assert!(s.validate().is_ok());
    s.out_shape = vec![4, 4, 2];
    assert!(s.validate().is_err());
}

#[test]
fn forward_rejects_wrong_input_shape() {
    let spec = fc(3, 2, Activation::Relu);
    let w = LayerWeights::init_reciprocal(&spec, 0.1, &mut SeededRng::new(0)).unwrap();
    let x = Tensor::zeros(&[1, 4]);
    assert!(matches!(
        layer_forward(&spec, &w, &x, &mut SeededRng::new(0), false),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn zero_gate_blocks_feedback() {
    let spec = fc(5, 3, Activation::Relu);
    let w = LayerWeights::init_reciprocal(&spec, 1.0, &mut SeededRng::new(1)).unwrap();
    let fb_up = Tensor::new(vec![1, 3], vec![0.3, -2.0, 1.0]).unwrap();
    let fb = layer_feedback(&spec, &w, &fb_up, &Tensor::zeros(&[1, 3]), None).unwrap();
    assert_eq!(fb.data(), &[0.0; 5]);
}

#[test]
fn single_active_upstream_unit() {
    let spec = fc(1, 1, Activation::Relu);
    let w = LayerWeights::reciprocal(&spec, Tensor::new(vec![1, 1], vec![0.7]).unwrap()).unwrap();
    let one = Tensor::ones(&[1, 1]);
    let fb = layer_feedback(&spec, &w, &one, &one, None).unwrap();
    assert_eq!(fb.data(), &[0.7]);
}

#[test]
fn dense_feedback_matches_brute_force_sum() {
    let mut rng = SeededRng::new(11);
    let spec = fc(6, 4, Activation::Relu);
    let w = LayerWeights::init_reciprocal(&spec, 1.0, &mut rng).unwrap();
    let fb_up = random_tensor(&[1, 4], &mut rng);
    let gate = Tensor::new(vec![1, 4], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
    let fb = layer_feedback(&spec, &w, &fb_up, &gate, None).unwrap();
    let fbw = w.feedback.data();
    for p in 0..6 {
        let mut expected = 0.0;
        for m in 0..4 {
            expected += gate.data()[m] * fbw[m * 6 + p] * fb_up.data()[m];
        }
        assert!((fb.data()[p] - expected).abs() < 1e-14);
    }
}

#[test]
fn scalar_four_factor_update() {
    let spec = fc(1, 1, Activation::Relu);
    let x = Tensor::full(&[1, 1], 2.0);
    let g = layer_update_grads(&spec, &x, &Tensor::ones(&[1, 1]), &Tensor::full(&[1, 1], 0.5), &[0.1]).unwrap();
    assert!((g.data()[0] - 0.1).abs() < 1e-15);
}

#[test]
fn dense_update_matches_independent_loop() {
    let mut rng = SeededRng::new(5);
    let spec = fc(3, 2, Activation::Relu);
    let x = random_tensor(&[1, 3], &mut rng);
    let fb = random_tensor(&[1, 2], &mut rng);
    let gate = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let delta = 0.37;
    let g = layer_update_grads(&spec, &x, &gate, &fb, &[delta]).unwrap();
    for p in 0..3 {
        for m in 0..2 {
            let expected = delta * x.data()[p] * gate.data()[m] * fb.data()[m];
            assert!((g.data()[p * 2 + m] - expected).abs() < 1e-15);
        }
        assert_eq!(g.data()[p * 2 + 1], 0.0, "silent unit must not learn");
    }
}

#[test]
fn batched_update_is_sum_of_trials() {
    let mut rng = SeededRng::new(8);
    let spec = LayerSpec::conv2d(&[5, 5, 2], 3, (3, 3), (2, 2), (1, 1)).unwrap();
    let x = random_tensor(&[4, 5, 5, 2], &mut rng);
    let fb = random_tensor(&[4, 3, 3, 3], &mut rng);
    let gate = relu_gate(&random_tensor(&[4, 3, 3, 3], &mut rng));
    let delta = [0.5, -0.2, 1.0, 0.0];
    let batched = layer_update_grads(&spec, &x, &gate, &fb, &delta).unwrap();
    let mut summed = Tensor::zeros(batched.shape());
    for b in 0..4 {
        let xb = Tensor::new(vec![1, 5, 5, 2], x.row(b).to_vec()).unwrap();
        let fbb = Tensor::new(vec![1, 3, 3, 3], fb.row(b).to_vec()).unwrap();
        let gb = Tensor::new(vec![1, 3, 3, 3], gate.row(b).to_vec()).unwrap();
        let g = layer_update_grads(&spec, &xb, &gb, &fbb, &[delta[b]]).unwrap();
        summed.add_scaled(&g, 1.0).unwrap();
    }
    assert!(batched.max_abs_diff(&summed).unwrap() < 1e-13);
}

#[test]
fn apply_grad_examples() {
    let spec = fc(2, 2, Activation::Relu);
    let mut w = LayerWeights::init_reciprocal(&spec, 0.05, &mut SeededRng::new(2)).unwrap();
    let before = w.clone();
    apply_grad(&spec, &mut w, &Tensor::zeros(&[2, 2]), 0.5).unwrap();
    assert_eq!(w, before);

    let mut g = Tensor::zeros(&[2, 2]);
    g.data_mut()[1] = 0.2; // forward (0, 1) pairs with feedback (1, 0)
    apply_grad(&spec, &mut w, &g, 0.5).unwrap();
    assert!((w.forward.data()[1] - before.forward.data()[1] - 0.1).abs() < 1e-15);
    assert!((w.feedback.data()[2] - before.feedback.data()[2] - 0.1).abs() < 1e-15);
    assert_eq!(reciprocity_gap(&spec, &w), 0.0);
}

fn spatial_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv2d(&[6, 5, 2], 3, (3, 3), (1, 1), (0, 0)).unwrap(),
        LayerSpec::conv2d(&[6, 6, 2], 2, (3, 3), (2, 2), (1, 1)).unwrap(),
        LayerSpec::conv2d(&[5, 7, 1], 2, (2, 3), (1, 2), (1, 0)).unwrap(),
        LayerSpec::locally_connected(&[6, 5, 2], 3, (3, 3), (1, 1), (0, 0)).unwrap(),
        LayerSpec::locally_connected(&[6, 6, 2], 2, (3, 3), (2, 2), (1, 1)).unwrap(),
        fc(7, 3, Activation::Relu),
        LayerSpec::fully_connected(&[2, 3, 2], 4, Activation::Linear),
    ]
}

#[test]
fn adjoints_satisfy_dot_product_identity() {
    // <A x, s> == <x, A^T s> for both the forward-weight and feedback-weight adjoints
    let mut rng = SeededRng::new(21);
    for spec in spatial_specs() {
        let w = LayerWeights::init_reciprocal(&spec, 1.0, &mut rng).unwrap();
        let mut xs = vec![3];
        xs.extend_from_slice(&spec.in_shape);
        let mut ss = vec![3];
        ss.extend_from_slice(&spec.out_shape);
        let x = random_tensor(&xs, &mut rng);
        let s = random_tensor(&ss, &mut rng);
        let ax = layer_forward(&spec, &w, &x, &mut rng, false).unwrap().pre_activation;
        let ones = Tensor::ones(&ss);
        let back_fwd = layer_backprop_error(&spec, &w, &s, &ones, None).unwrap();
        let back_fb = layer_feedback(&spec, &w, &s, &ones, None).unwrap();
        let lhs = dot(&ax, &s);
        assert!((lhs - dot(&x, &back_fwd)).abs() < 1e-10 * (1.0 + lhs.abs()), "{spec:?}");
        assert!((lhs - dot(&x, &back_fb)).abs() < 1e-10 * (1.0 + lhs.abs()), "{spec:?}");
    }
}

#[test]
fn weight_grads_are_derivative_of_bilinear_form() {
    // d/dw <A_w x, s> = weight_grads(x, s); A_w is linear in w so one probe per weight is exact
    let mut rng = SeededRng::new(4);
    for spec in spatial_specs() {
        let w = LayerWeights::init_reciprocal(&spec, 1.0, &mut rng).unwrap();
        let mut xs = vec![2];
        xs.extend_from_slice(&spec.in_shape);
        let mut ss = vec![2];
        ss.extend_from_slice(&spec.out_shape);
        let x = random_tensor(&xs, &mut rng);
        let s = random_tensor(&ss, &mut rng);
        let grads = layer_weight_grads(&spec, &x, &s).unwrap();
        for i in (0..w.forward.len()).step_by(7) {
            let mut unit = Tensor::zeros(w.forward.shape());
            unit.data_mut()[i] = 1.0;
            let probe = LayerWeights::reciprocal(&spec, unit).unwrap();
            let out = layer_forward(&spec, &probe, &x, &mut rng, false).unwrap();
            let expected = dot(&out.pre_activation, &s);
            assert!((grads.data()[i] - expected).abs() < 1e-12, "{spec:?} idx {i}");
        }
    }
}

#[test]
fn local_with_broadcast_kernel_equals_conv() {
    let mut rng = SeededRng::new(13);
    for (stride, pad) in [((1, 1), (0, 0)), ((2, 2), (1, 1))] {
        let conv = LayerSpec::conv2d(&[7, 7, 3], 4, (3, 3), stride, pad).unwrap();
        let local = LayerSpec::locally_connected(&[7, 7, 3], 4, (3, 3), stride, pad).unwrap();
        let cw = LayerWeights::init_reciprocal(&conv, 0.5, &mut rng).unwrap();
        let kernel = cw.forward.data();
        let mut lw = Vec::with_capacity(local.forward_weight_shape().iter().product());
        for _ in 0..local.positions() {
            lw.extend_from_slice(kernel);
        }
        let lw = LayerWeights::reciprocal(
            &local,
            Tensor::new(local.forward_weight_shape(), lw).unwrap(),
        )
        .unwrap();
        let x = random_tensor(&[2, 7, 7, 3], &mut rng);
        let a = layer_forward(&conv, &cw, &x, &mut rng, false).unwrap();
        let b = layer_forward(&local, &lw, &x, &mut rng, false).unwrap();
        assert!(a.pre_activation.max_abs_diff(&b.pre_activation).unwrap() < 1e-14);
        assert_eq!(a.gate, b.gate);
    }
}

#[test]
fn dropout_masks() {
    let spec = LayerSpec::dropout(&[1000], 0.8).unwrap();
    let x = Tensor::ones(&[2, 1000]);
    let mut rng = SeededRng::new(3);
    let eval = layer_forward(&spec, &LayerWeights::none(), &x, &mut rng, false).unwrap();
    assert_eq!(eval.activation, x);
    assert!(eval.dropout_mask.is_none());

    let train = layer_forward(&spec, &LayerWeights::none(), &x, &mut rng, true).unwrap();
    let mask = train.dropout_mask.clone().unwrap();
    let kept = mask.data().iter().filter(|&&m| m > 0.0).count();
    assert!(mask.data().iter().all(|&m| m == 0.0 || (m - 5.0).abs() < 1e-12));
    // 2000 Bernoulli(0.2) draws: mean 400, sd ~17.9
    assert!((kept as f64 - 400.0).abs() < 5.0 * 17.9, "kept {kept}");
    assert_eq!(train.activation, mask);

    let fb = layer_feedback(&spec, &LayerWeights::none(), &x, &train.gate, Some(&mask)).unwrap();
    assert_eq!(fb, mask);
}

proptest! {
    #[test]
    fn reciprocity_survives_update_sequences(seed in 0u64..1000, steps in 1usize..20, alpha in 0.001f64..2.0) {
        let mut rng = SeededRng::new(seed);
        for spec in spatial_specs() {
            let mut w = LayerWeights::init_reciprocal(&spec, 0.02, &mut rng).unwrap();
            for _ in 0..steps {
                let g = random_tensor(&spec.forward_weight_shape(), &mut rng);
                apply_grad(&spec, &mut w, &g, alpha).unwrap();
            }
            prop_assert!(reciprocity_gap(&spec, &w) <= 1e-12 * steps as f64);
        }
    }

    #[test]
    fn silent_units_neither_relay_nor_learn(seed in 0u64..500) {
        let mut rng = SeededRng::new(seed);
        for spec in spatial_specs() {
            let w = LayerWeights::init_reciprocal(&spec, 1.0, &mut rng).unwrap();
            let mut xs = vec![1];
            xs.extend_from_slice(&spec.in_shape);
            let x = random_tensor(&xs, &mut rng);
            let out = layer_forward(&spec, &w, &x, &mut rng, true).unwrap();
            let fb_up = random_tensor(out.gate.shape(), &mut rng);
            // garbage in the silent units must change nothing
            let mut noisy = fb_up.clone();
            for (v, g) in noisy.data_mut().iter_mut().zip(out.gate.data()) {
                if *g == 0.0 { *v += 1e3; }
            }
            let a = layer_feedback(&spec, &w, &fb_up, &out.gate, None).unwrap();
            let b = layer_feedback(&spec, &w, &noisy, &out.gate, None).unwrap();
            prop_assert_eq!(a, b);
            let ga = layer_update_grads(&spec, &x, &out.gate, &fb_up, &[0.3]).unwrap();
            let gb = layer_update_grads(&spec, &x, &out.gate, &noisy, &[0.3]).unwrap();
            prop_assert_eq!(ga, gb);
        }
    }
}
