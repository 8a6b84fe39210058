use qagrel_core::backprop::{backprop_grads, softmax_xent};
use qagrel_core::oracle::{
    compare_grads, masks_from_trace, network_finite_diff, random_input, random_network,
    reference_forward, selective_backprop_grads, FirstLayer, Masks,
};
use qagrel_core::{compute_rpe, select_action, LayerKind, Network, SeededRng, Tensor};

const STEP: f64 = 1e-5;

struct Case {
    net: Network,
    input: Tensor,
    masks: Masks,
    trace: qagrel_core::ForwardTrace,
}

fn sample_case(rng: &mut SeededRng, i: usize) -> Case {
    loop {
        let net = random_network(rng, FirstLayer::ALL[i % 4], 2 + (i / 4) % 3, !i.is_multiple_of(3)).unwrap();
        let input = random_input(&net, rng);
        let trace = net.forward_pass(&input, rng, true).unwrap();
        let masks = masks_from_trace(&trace, 0);
        let pass = reference_forward(&net, input.data(), &masks).unwrap();
        // stay clear of the ReLU kink so central differences are valid
        if pass.min_abs_relu_pre_activation(&net) > 10.0 * STEP {
            return Case { net, input, masks, trace };
        }
    }
}

#[test]
fn qagrel_equals_selective_backprop() {
    let mut rng = SeededRng::new(2024);
    for i in 0..400 {
        let case = sample_case(&mut rng, i);
        let q = case.trace.q_values().row(0).to_vec();
        let sel = select_action(&q, 0.5, &mut rng).unwrap().selected;
        let reward = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
        let delta = compute_rpe(reward, q[sel]);
        let mut z = Tensor::zeros(&[1, q.len()]);
        z.data_mut()[sel] = 1.0;
        let fb = case.net.backward_feedback(&case.trace, &z).unwrap();
        let ours = case.net.trial_grads(&case.trace, &fb, &[delta]).unwrap();
        let oracle = selective_backprop_grads(&case.net, case.input.data(), &case.masks, sel, delta).unwrap();
        let cmp = compare_grads(&ours, &oracle, 1e-10, 1e-13).unwrap();
        assert!(cmp.passed, "case {i}: {:?}", cmp.first_failure());
    }
}

#[test]
fn selective_backprop_matches_finite_differences() {
    let mut rng = SeededRng::new(77);
    for i in 0..60 {
        let case = sample_case(&mut rng, i);
        let q = case.trace.q_values().row(0).to_vec();
        let sel = i % q.len();
        let reward = (i % 2) as f64;
        let delta = reward - q[sel];
        let analytic = selective_backprop_grads(&case.net, case.input.data(), &case.masks, sel, delta).unwrap();
        let masks = case.masks.clone();
        let x = case.input.data().to_vec();
        let fd = network_finite_diff(
            &case.net,
            |n| {
                let q = reference_forward(n, &x, &masks).unwrap().q_values()[sel];
                0.5 * (reward - q).powi(2)
            },
            STEP,
        )
        .unwrap();
        // analytic is the descent direction
        let neg_fd: Vec<Tensor> = fd.into_iter().map(|t| t.map(|v| -v)).collect();
        let cmp = compare_grads(&analytic, &neg_fd, 1e-6, 1e-9).unwrap();
        assert!(cmp.passed, "case {i}: {:?}", cmp.first_failure());
    }
}

#[test]
fn backprop_matches_finite_differences_on_every_kind() {
    let mut rng = SeededRng::new(78);
    let mut kinds = std::collections::HashSet::new();
    for i in 0..60 {
        let case = sample_case(&mut rng, i);
        for l in case.net.layers() {
            kinds.insert(format!("{:?}-{:?}", l.spec.kind, l.spec.stride));
        }
        let label = i % case.net.output_dim();
        let q = case.trace.q_values();
        let (_, gl) = softmax_xent(q.row(0), label).unwrap();
        let gl = Tensor::new(q.shape().to_vec(), gl).unwrap();
        let analytic = backprop_grads(&case.net, &case.trace, &gl).unwrap();
        let masks = case.masks.clone();
        let x = case.input.data().to_vec();
        let fd = network_finite_diff(
            &case.net,
            |n| softmax_xent(reference_forward(n, &x, &masks).unwrap().q_values(), label).unwrap().0,
            STEP,
        )
        .unwrap();
        let cmp = compare_grads(&analytic, &fd, 1e-6, 1e-9).unwrap();
        assert!(cmp.passed, "case {i}: {:?}", cmp.first_failure());
    }
    for k in ["Conv2d-(2, 2)", "Conv2d-(1, 1)", "FullyConnected-(1, 1)", "Dropout-(1, 1)"] {
        assert!(kinds.contains(k), "{k} not covered: {kinds:?}");
    }
    assert!(kinds.iter().any(|k| k.starts_with("LocallyConnected2d")));
}

#[test]
fn reciprocity_holds_through_training() {
    let mut rng = SeededRng::new(5);
    let mut net = random_network(&mut rng, FirstLayer::LocallyConnected, 4, true).unwrap();
    for _ in 0..500 {
        let x = random_input(&net, &mut rng);
        let label = rng.below(net.output_dim());
        let t = net.run_trial(&x, label, 0.1, &mut rng).unwrap();
        net.apply_grads(&t.grads, 0.01).unwrap();
    }
    assert!(net.reciprocity_gap() <= 1e-12);
    assert!(net.layers().iter().any(|l| l.spec.kind == LayerKind::LocallyConnected2d));
}

#[test]
fn broken_reciprocity_is_caught_by_the_oracle() {
    let mut rng = SeededRng::new(31);
    let mut caught = 0;
    for i in 0..20 {
        let mut case = sample_case(&mut rng, i);
        // detune every feedback weight of the output layer
        let last = case.net.layers().len() - 1;
        for v in case.net.weights_mut(last).feedback.data_mut() {
            *v *= 1.5;
        }
        let trace = case.net.forward_pass(&case.input, &mut rng, false).unwrap();
        let masks: Masks = vec![None; case.net.layers().len()];
        let mut z = Tensor::zeros(trace.q_values().shape());
        z.data_mut()[0] = 1.0;
        let fb = case.net.backward_feedback(&trace, &z).unwrap();
        let ours = case.net.trial_grads(&trace, &fb, &[0.5]).unwrap();
        let oracle = selective_backprop_grads(&case.net, case.input.data(), &masks, 0, 0.5).unwrap();
        if !compare_grads(&ours, &oracle, 1e-10, 1e-13).unwrap().passed {
            caught += 1;
        }
    }
    assert!(caught >= 15, "only {caught} of 20 mismatches detected");
}
