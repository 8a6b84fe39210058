use std::path::{Path, PathBuf};

use qagrel_core::{Activation, Layer, LayerSpec, LayerWeights, Network, SeededRng, Tensor};
use qagrel_data::fixtures::write_synthetic_mnist;
use qagrel_data::{load_dataset, split_validation, Dataset, DatasetId};
use qagrel_harness::train::build_network;
use qagrel_harness::{early_stop, evaluate, preset, run_and_write, run_seed, train_epoch, ExperimentConfig, ExperimentData, Rule};

fn tiny_config(rule: Rule, out: &Path) -> ExperimentConfig {
    let mut cfg = preset(match rule {
        Rule::Qagrel => "mnist-desk-qagrel",
        Rule::Backprop => "mnist-desk-bp",
    })
    .unwrap();
    cfg.architecture = "full12; drop.3; full8".into();
    cfg.batch_size = 10;
    cfg.validation_size = 20;
    cfg.max_epochs = 3;
    cfg.seeds = vec![5];
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn synthetic(dir: &Path) -> ExperimentData {
    write_synthetic_mnist(dir, 120, 30, 9).unwrap();
    let (train, test) = load_dataset(dir, DatasetId::Mnist).unwrap();
    ExperimentData { train, test: Some(test) }
}

fn one_hot_dataset(n: usize) -> Dataset {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    Dataset::new(Tensor::new(vec![n, 1, 1, n], data).unwrap(), (0..n).collect(), n).unwrap()
}

fn identity_net(n: usize, scale: f64) -> Network {
    let eye = |s: f64| {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = s;
        }
        Tensor::new(vec![n, n], d).unwrap()
    };
    let hidden = LayerSpec::fully_connected(&[1, 1, n], n, Activation::Relu);
    let out = LayerSpec::fully_connected(&[n], n, Activation::Linear);
    Network::new(vec![
        Layer { weights: LayerWeights::reciprocal(&hidden, eye(scale)).unwrap(), spec: hidden },
        Layer { weights: LayerWeights::reciprocal(&out, eye(scale)).unwrap(), spec: out },
    ])
    .unwrap()
}

#[test]
fn early_stop_semantics() {
    let rising: Vec<f64> = (0..100).map(|i| i as f64).collect();
    assert_eq!(early_stop(&rising, 20), None);
    assert_eq!(early_stop(&[0.5; 21], 20), Some(21));
    // best at 3, improvement at epoch 22 (19 stale epochs later) resets the count
    let mut h = vec![0.1, 0.2, 0.3];
    h.extend(vec![0.25; 18]);
    h.push(0.4);
    h.extend(vec![0.0; 25]);
    assert_eq!(early_stop(&h, 20), Some(22 + 20));
}

#[test]
fn evaluate_examples() {
    let ds = one_hot_dataset(10);
    assert_eq!(evaluate(&identity_net(10, 1.0), &ds).unwrap(), 1.0);
    // all-zero weights: every q is 0 and the lowest index wins
    assert_eq!(evaluate(&identity_net(10, 0.0), &ds).unwrap(), 0.1);
}

#[test]
fn zero_alpha_leaves_weights_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(dir.path());
    for rule in [Rule::Qagrel, Rule::Backprop] {
        let mut cfg = tiny_config(rule, dir.path());
        cfg.alpha = 0.0;
        let split = split_validation(data.train.clone(), 20, 0).unwrap();
        let mut net = build_network(&cfg, 1).unwrap();
        let before = net.clone();
        train_epoch(&mut net, rule, &split.pool, &split.train, &cfg, 1, &mut SeededRng::new(1), &mut SeededRng::new(2)).unwrap();
        for (a, b) in net.layers().iter().zip(before.layers()) {
            assert_eq!(a.weights, b.weights);
        }
    }
}

#[test]
fn batch_update_is_mean_of_trial_updates() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(dir.path());
    let mut cfg = tiny_config(Rule::Qagrel, dir.path());
    cfg.architecture = "full12; full8".into();
    cfg.epsilon = 0.0;
    let split = split_validation(data.train.clone(), 20, 0).unwrap();
    let batch: Vec<usize> = split.train[..cfg.batch_size].to_vec();

    let mut batched = build_network(&cfg, 3).unwrap();
    let mut per_trial = batched.clone();
    train_epoch(&mut batched, Rule::Qagrel, &split.pool, &batch, &cfg, 1, &mut SeededRng::new(0), &mut SeededRng::new(0)).unwrap();

    // greedy selection without dropout needs no randomness, so trials are independent of order
    let mut sum: Option<Vec<Tensor>> = None;
    for &i in &batch {
        let (x, labels) = split.pool.gather(&[i]);
        let t = per_trial.run_trial(&x, labels[0], 0.0, &mut SeededRng::new(0)).unwrap();
        sum = Some(match sum {
            None => t.grads,
            Some(mut s) => {
                for (acc, g) in s.iter_mut().zip(&t.grads) {
                    if !g.is_empty() {
                        acc.add_scaled(g, 1.0).unwrap();
                    }
                }
                s
            }
        });
    }
    per_trial.apply_grads(&sum.unwrap(), cfg.alpha / batch.len() as f64).unwrap();
    for (a, b) in batched.layers().iter().zip(per_trial.layers()) {
        let diff = a.weights.forward.max_abs_diff(&b.weights.forward).unwrap();
        assert!(diff < 1e-14, "{diff}");
    }
}

#[test]
fn identical_samples_give_single_trial_grads() {
    let mut cfg = tiny_config(Rule::Qagrel, Path::new("unused"));
    cfg.architecture = "full12; full8".into();
    let net = build_network(&cfg, 4).unwrap();
    let x = qagrel_core::tensor::uniform_init(&[1, 28, 28, 1], 0.0, 1.0, &mut SeededRng::new(1)).unwrap();
    let mut batch = Vec::new();
    for _ in 0..5 {
        batch.extend_from_slice(x.data());
    }
    let xb = Tensor::new(vec![5, 28, 28, 1], batch).unwrap();
    let single = net.run_trial(&x, 3, 0.0, &mut SeededRng::new(0)).unwrap();
    let many = net.run_batch(&xb, &[3; 5], 0.0, &mut SeededRng::new(0)).unwrap();
    for (s, m) in single.grads.iter().zip(&many.grads) {
        if s.is_empty() {
            continue;
        }
        let mean = m.map(|v| v / 5.0);
        assert!(s.max_abs_diff(&mean).unwrap() <= 1e-15 * s.max_abs().max(1.0));
    }
}

#[test]
fn runs_are_deterministic_and_written() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(dir.path());
    for rule in [Rule::Qagrel, Rule::Backprop] {
        let out_a: PathBuf = dir.path().join(format!("a-{rule}"));
        let out_b: PathBuf = dir.path().join(format!("b-{rule}"));
        let cfg_a = tiny_config(rule, &out_a);
        let cfg_b = tiny_config(rule, &out_b);
        let (ra, _) = run_seed(&cfg_a, &data, 5).unwrap();
        let (rb, _) = run_seed(&cfg_b, &data, 5).unwrap();
        assert_eq!(ra.epochs, rb.epochs);
        for (x, y) in ra.reports.iter().zip(&rb.reports) {
            assert_eq!((x.train_metric, x.validation_accuracy), (y.train_metric, y.validation_accuracy));
        }
        run_and_write(&cfg_a, &data).unwrap();
        run_and_write(&cfg_b, &data).unwrap();
        let csv_a = std::fs::read(out_a.join("seed-5.csv")).unwrap();
        assert_eq!(csv_a, std::fs::read(out_b.join("seed-5.csv")).unwrap());
        assert!(out_a.join("summary.json").is_file());
        let snap = qagrel_harness::weights::load(&out_a.join("seed-5.weights.json")).unwrap();
        let net = snap.into_network().unwrap();
        assert_eq!(net.hidden_units(), vec![12, 8]);
    }
}

#[test]
fn mnist_split_has_590_batches() {
    let root = std::env::var_os(qagrel_data::DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    let Ok((train, _)) = load_dataset(&root, DatasetId::Mnist) else {
        eprintln!("MNIST not available, skipping");
        return;
    };
    let split = split_validation(train, 1000, 0).unwrap();
    assert_eq!(split.train.len().div_ceil(100), 590);
}

#[test]
fn learning_succeeds_across_epsilon() {
    let root = std::env::var_os(qagrel_data::DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    let Ok((train, test)) = load_dataset(&root, DatasetId::Mnist) else {
        eprintln!("MNIST not available, skipping");
        return;
    };
    let (train, test) = (train.truncated(20_000), test.truncated(2_000));
    for eps in [0.01, 0.05, 0.1] {
        let mut cfg = preset("mnist-desk-qagrel").unwrap();
        cfg.epsilon = eps;
        cfg.max_epochs = 5;
        let data = ExperimentData::new(train.clone(), Some(test.clone()), &cfg);
        let (run, _) = run_seed(&cfg, &data, 0).unwrap();
        let acc = run.test_accuracy.unwrap();
        eprintln!("eps {eps}: test accuracy {acc}");
        assert!(acc > 0.88, "eps {eps}: test accuracy {acc}");
        let explored = run.reports[0].exploration_fraction;
        assert!((explored - eps).abs() < 0.02, "eps {eps}: explored {explored}");
    }
}
