//! Randomized checks of the learning rule against the independent oracle in
//! `qagrel_core::oracle`. Used by `qagrel verify` and the acceptance tests.

use std::collections::BTreeSet;
use std::fmt;

use qagrel_core::backprop::{backprop_grads, softmax_xent};
use qagrel_core::layers::layer_update_grads;
use qagrel_core::oracle::{
    compare_grads, connections, masks_from_trace, network_finite_diff, random_input, random_network,
    reference_forward, selective_backprop_grads, FirstLayer, Masks,
};
use qagrel_core::{compute_reward, compute_rpe, select_action, Activation, ForwardTrace, LayerKind, Network, SeededRng, Tensor};

use crate::Result;

pub const THEOREM_REL_TOL: f64 = 1e-10;
pub const THEOREM_ABS_TOL: f64 = 1e-13;
pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-6;
pub const FD_ABS_TOL: f64 = 1e-9;
const SIGNIFICANT: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest relative deviation among elements at least `SIGNIFICANT`
    /// times the absolute floor in magnitude.
    pub worst_rel: f64,
    pub first_failure: Option<String>,
    /// Layer kinds exercised, as `Kind` or `Kind/stride`.
    pub kinds: BTreeSet<String>,
}

impl CheckReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            worst_rel: 0.0,
            first_failure: None,
            kinds: BTreeSet::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }

    fn fail(&mut self, msg: String) {
        self.failures += 1;
        self.first_failure.get_or_insert(msg);
    }

    fn note_kinds(&mut self, net: &Network) {
        for l in net.layers() {
            let kind = match (l.spec.kind, l.spec.stride) {
                (LayerKind::Conv2d, (1, 1)) => "Conv".to_string(),
                (LayerKind::Conv2d, _) => "StridedConv".to_string(),
                (LayerKind::LocallyConnected2d, _) => "LocallyConnected".to_string(),
                (LayerKind::FullyConnected, _) => "FullyConnected".to_string(),
                (LayerKind::Dropout, _) => "Dropout".to_string(),
            };
            self.kinds.insert(kind);
        }
    }

    fn record(&mut self, case: usize, ours: &[Tensor], reference: &[Tensor], rel: f64, abs: f64) -> Result<()> {
        let cmp = compare_grads(ours, reference, rel, abs)?;
        for (a, b) in ours.iter().zip(reference) {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                let scale = x.abs().max(y.abs());
                if scale >= SIGNIFICANT * abs {
                    self.worst_rel = self.worst_rel.max((x - y).abs() / scale);
                }
            }
        }
        if !cmp.passed {
            self.fail(format!("case {case}: {:?}", cmp.first_failure()));
        }
        Ok(())
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} cases, {} failures, worst rel {:.2e}",
            self.name, self.cases, self.failures, self.worst_rel
        )?;
        if let Some(m) = &self.first_failure {
            write!(f, "; first failure {m}")?;
        }
        Ok(())
    }
}

/// A random network, input and sampled dropout masks, with every ReLU
/// pre-activation at least `margin` away from zero.
pub struct Case {
    pub net: Network,
    pub input: Tensor,
    pub trace: ForwardTrace,
    pub masks: Masks,
}

/// Cycles first-layer kinds, depths 2 to 4 and dropout on two of three cases.
pub fn sample_case(rng: &mut SeededRng, i: usize, margin: f64) -> Result<Case> {
    loop {
        let net = random_network(rng, FirstLayer::ALL[i % 4], 2 + (i / 4) % 3, !i.is_multiple_of(3))?;
        let input = random_input(&net, rng);
        let trace = net.forward_pass(&input, rng, true)?;
        let masks = masks_from_trace(&trace, 0);
        let pass = reference_forward(&net, input.data(), &masks)?;
        if pass.min_abs_relu_pre_activation(&net) > margin {
            return Ok(Case { net, input, trace, masks });
        }
    }
}

fn one_hot(n: usize, k: usize) -> Tensor {
    let mut z = Tensor::zeros(&[1, n]);
    z.data_mut()[k] = 1.0;
    z
}

/// Q-AGREL trial grads against selective backprop on `cases` random networks.
pub fn check_theorem(cases: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("equivalence");
    let mut rng = SeededRng::new(seed);
    for i in 0..cases {
        let case = sample_case(&mut rng, i, 0.0)?;
        report.note_kinds(&case.net);
        let q = case.trace.q_values().row(0).to_vec();
        let label = rng.below(q.len());
        let sel = select_action(&q, 0.5, &mut rng)?.selected;
        let delta = compute_rpe(compute_reward(sel, label), q[sel]);
        let fb = case.net.backward_feedback(&case.trace, &one_hot(q.len(), sel))?;
        let ours = case.net.trial_grads(&case.trace, &fb, &[delta])?;
        let oracle = selective_backprop_grads(&case.net, case.input.data(), &case.masks, sel, delta)?;
        report.record(i, &ours, &oracle, THEOREM_REL_TOL, THEOREM_ABS_TOL)?;
        report.cases += 1;
    }
    Ok(report)
}

/// Selective-backprop grads against central differences of `0.5 * (r - q_s)^2`.
pub fn check_selective_fd(cases: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("selective backprop vs finite differences");
    let mut rng = SeededRng::new(seed);
    for i in 0..cases {
        let case = sample_case(&mut rng, i, 10.0 * FD_STEP)?;
        report.note_kinds(&case.net);
        let q = case.trace.q_values().row(0).to_vec();
        let sel = rng.below(q.len());
        let reward = (i % 2) as f64;
        let analytic = selective_backprop_grads(&case.net, case.input.data(), &case.masks, sel, reward - q[sel])?;
        let x = case.input.data();
        let fd = network_finite_diff(
            &case.net,
            |n| {
                let q = reference_forward(n, x, &case.masks).expect("reference pass").q_values()[sel];
                0.5 * (reward - q).powi(2)
            },
            FD_STEP,
        )?;
        let descent: Vec<Tensor> = fd.into_iter().map(|t| t.map(|v| -v)).collect();
        report.record(i, &analytic, &descent, FD_REL_TOL, FD_ABS_TOL)?;
        report.cases += 1;
    }
    Ok(report)
}

/// Backprop cross-entropy grads against central differences.
pub fn check_backprop_fd(cases: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("backprop vs finite differences");
    let mut rng = SeededRng::new(seed);
    for i in 0..cases {
        let case = sample_case(&mut rng, i, 10.0 * FD_STEP)?;
        report.note_kinds(&case.net);
        let q = case.trace.q_values();
        let label = rng.below(case.net.output_dim());
        let (_, g) = softmax_xent(q.row(0), label)?;
        let analytic = backprop_grads(&case.net, &case.trace, &Tensor::new(q.shape().to_vec(), g)?)?;
        let x = case.input.data();
        let fd = network_finite_diff(
            &case.net,
            |n| {
                let pass = reference_forward(n, x, &case.masks).expect("reference pass");
                softmax_xent(pass.q_values(), label).expect("valid label").0
            },
            FD_STEP,
        )?;
        report.record(i, &analytic, &fd, FD_REL_TOL, FD_ABS_TOL)?;
        report.cases += 1;
    }
    Ok(report)
}

/// Every silent hidden unit (ReLU output 0, or dropped by the dropout layer
/// above it) has zero feedback activity and receives zero updates.
pub fn check_gating(cases: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("plasticity gating");
    let mut rng = SeededRng::new(seed);
    let mut silent_seen = 0usize;
    for i in 0..cases {
        let net = random_network(&mut rng, FirstLayer::ALL[i % 4], 2 + (i / 4) % 3, i % 2 == 0)?;
        report.note_kinds(&net);
        let input = random_input(&net, &mut rng);
        let trace = net.forward_pass(&input, &mut rng, true)?;
        let q = trace.q_values().row(0).to_vec();
        let label = rng.below(q.len());
        let sel = select_action(&q, 0.3, &mut rng)?.selected;
        let delta = compute_rpe(compute_reward(sel, label), q[sel]);
        let fb = net.backward_feedback(&trace, &one_hot(q.len(), sel))?;
        let grads = net.trial_grads(&trace, &fb, &[delta])?;

        for (li, layer) in net.layers().iter().enumerate() {
            if !layer.spec.has_weights() || layer.spec.activation != Activation::Relu {
                continue;
            }
            let out = &trace.layers[li];
            let dropped = net
                .layers()
                .get(li + 1)
                .filter(|l| l.spec.kind == LayerKind::Dropout)
                .map(|_| trace.layers[li + 1].gate.data().to_vec());
            let silent: Vec<bool> = (0..out.activation.len())
                .map(|u| out.activation.data()[u] == 0.0 || dropped.as_ref().is_some_and(|g| g[u] == 0.0))
                .collect();
            for (u, &s) in silent.iter().enumerate() {
                if s {
                    silent_seen += 1;
                    if fb.fb[li].data()[u] != 0.0 {
                        report.fail(format!("case {i} layer {li} unit {u}: fb {}", fb.fb[li].data()[u]));
                    }
                }
            }
            match layer.spec.kind {
                LayerKind::Conv2d => {
                    // shared kernels: silent units' feedback must not matter
                    let mut noisy = fb.fb[li].clone();
                    for (u, v) in noisy.data_mut().iter_mut().enumerate() {
                        if out.gate.data()[u] == 0.0 {
                            *v = rng.uniform(-1.0, 1.0);
                        }
                    }
                    let x = trace.layer_input(li).clone().reshape(&{
                        let mut s = vec![1];
                        s.extend_from_slice(&layer.spec.in_shape);
                        s
                    })?;
                    let g = layer_update_grads(&layer.spec, &x, &out.gate, &noisy, &[delta])?;
                    if g != grads[li] {
                        report.fail(format!("case {i} layer {li}: silent units change the conv update"));
                    }
                }
                _ => {
                    for c in connections(&layer.spec) {
                        if silent[c.output] && grads[li].data()[c.weight] != 0.0 {
                            report.fail(format!(
                                "case {i} layer {li}: weight {} into silent unit {} has grad {}",
                                c.weight,
                                c.output,
                                grads[li].data()[c.weight]
                            ));
                        }
                    }
                }
            }
        }
        report.cases += 1;
    }
    if silent_seen == 0 {
        report.fail("no silent units were generated".into());
    }
    Ok(report)
}

/// Runs `updates` single-trial Q-AGREL updates on a random network and
/// returns the final reciprocity gap.
pub fn reciprocity_after_updates(updates: usize, seed: u64) -> Result<f64> {
    let mut rng = SeededRng::new(seed);
    let mut net = random_network(&mut rng, FirstLayer::LocallyConnected, 4, true)?;
    for _ in 0..updates {
        let x = random_input(&net, &mut rng);
        let label = rng.below(net.output_dim());
        let t = net.run_trial(&x, label, 0.1, &mut rng)?;
        net.apply_grads(&t.grads, 0.05)?;
    }
    Ok(net.reciprocity_gap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_runs_pass() {
        assert!(check_theorem(40, 1).unwrap().passed());
        assert!(check_selective_fd(8, 2).unwrap().passed());
        assert!(check_backprop_fd(8, 3).unwrap().passed());
        let g = check_gating(20, 4).unwrap();
        assert!(g.passed(), "{g}");
        assert!(reciprocity_after_updates(50, 5).unwrap() <= 1e-12);
    }
}
