use std::time::Instant;

use qagrel_core::backprop::supervised_batch;
use qagrel_core::{Network, SeededRng, Tensor};
use qagrel_data::{split_validation, Dataset};
use serde::{Deserialize, Serialize};

use crate::arch::parse_architecture;
use crate::config::{ExperimentConfig, Rule};
use crate::{HarnessError, Result};

const EVAL_CHUNK: usize = 500;

// independent generator streams per run seed
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_TRIALS: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    /// Mean reward (Q-AGREL) or mean cross-entropy (backprop) over the epoch.
    pub train_metric: f64,
    /// Fraction of training trials whose prediction was correct, dropout on.
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    /// Fraction of trials that sampled from the Boltzmann distribution.
    pub exploration_fraction: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    /// Epoch at which training ended (early stop or `max_epochs`).
    pub epochs: usize,
    pub best_epoch: usize,
    pub early_stopped: bool,
    pub best_validation_accuracy: f64,
    /// Greedy accuracy of the best-epoch weights on the official test set.
    pub test_accuracy: Option<f64>,
    pub reports: Vec<EpochReport>,
    pub failure: Option<String>,
    /// Exit code class of the failure, if any.
    pub failure_code: Option<i32>,
}

impl RunResult {
    fn failed(seed: u64, err: &HarnessError) -> Self {
        Self {
            seed,
            epochs: 0,
            best_epoch: 0,
            early_stopped: false,
            best_validation_accuracy: f64::NAN,
            test_accuracy: None,
            reports: Vec::new(),
            failure: Some(err.to_string()),
            failure_code: Some(err.exit_code()),
        }
    }
}

/// Patience against the running best: training stops once `patience`
/// consecutive epochs fail to exceed the best validation accuracy so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records `accuracy` for `epoch`; true means stop now.
    pub fn observe(&mut self, epoch: usize, accuracy: f64) -> bool {
        if accuracy > self.best {
            self.best = accuracy;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Replays a whole accuracy history; returns the stop epoch, if any.
pub fn early_stop(history: &[f64], patience: usize) -> Option<usize> {
    let mut es = EarlyStopping::new(patience);
    history
        .iter()
        .enumerate()
        .find_map(|(i, &acc)| es.observe(i + 1, acc).then_some(i + 1))
}

/// Greedy accuracy with dropout disabled.
pub fn evaluate(net: &Network, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(HarnessError::Other("cannot evaluate on an empty split".into()));
    }
    let mut correct = 0;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, labels) = ds.gather(chunk);
        let pred = net.predict(&x)?;
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

pub fn build_network(cfg: &ExperimentConfig, seed: u64) -> Result<Network> {
    let specs = parse_architecture(&cfg.architecture, &cfg.dataset.image_shape(), cfg.dataset.num_classes())?;
    let mut rng = SeededRng::stream(seed, STREAM_INIT);
    Ok(Network::from_specs(specs, cfg.init_range, &mut rng)?)
}

fn check_finite(grads: &[Tensor], epoch: usize, batch: usize) -> Result<()> {
    match grads.iter().position(|g| !g.all_finite()) {
        None => Ok(()),
        Some(layer) => Err(HarnessError::Numerical(format!(
            "non-finite gradient in layer {layer} at epoch {epoch}, batch {batch}; try a smaller alpha"
        ))),
    }
}

/// Training-side statistics of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_metric: f64,
    pub train_accuracy: f64,
    pub exploration_fraction: f64,
}

/// One pass over `train` (indices into `pool`) in a freshly shuffled order.
///
/// Per batch the summed per-trial grads are divided by the batch size and
/// applied with `alpha`: to forward and feedback weights for Q-AGREL, to
/// forward weights only for backprop.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    net: &mut Network,
    rule: Rule,
    pool: &Dataset,
    train: &[usize],
    cfg: &ExperimentConfig,
    epoch: usize,
    shuffle_rng: &mut SeededRng,
    trial_rng: &mut SeededRng,
) -> Result<EpochStats> {
    let mut order = train.to_vec();
    shuffle_rng.shuffle(&mut order);
    let (mut metric, mut correct, mut explored) = (0.0, 0usize, 0usize);
    for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
        let (x, labels) = pool.gather(batch);
        let scale = cfg.alpha / batch.len() as f64;
        match rule {
            Rule::Qagrel => {
                let trial = net.run_batch(&x, &labels, cfg.epsilon, trial_rng)?;
                check_finite(&trial.grads, epoch, b)?;
                for o in &trial.outcomes {
                    metric += o.reward;
                    correct += usize::from(o.reward > 0.0);
                    explored += usize::from(!o.greedy);
                }
                net.apply_grads(&trial.grads, scale)?;
            }
            Rule::Backprop => {
                let sup = supervised_batch(net, &x, &labels, trial_rng)?;
                check_finite(&sup.grads, epoch, b)?;
                if !sup.total_loss.is_finite() {
                    return Err(HarnessError::Numerical(format!("non-finite loss at epoch {epoch}, batch {b}")));
                }
                metric += sup.total_loss;
                correct += sup.correct;
                net.apply_forward_grads(&sup.grads, -scale)?;
            }
        }
    }
    let n = order.len().max(1) as f64;
    Ok(EpochStats {
        train_metric: metric / n,
        train_accuracy: correct as f64 / n,
        exploration_fraction: explored as f64 / n,
    })
}

/// Training pool and official test set, after `train_limit`.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

impl ExperimentData {
    pub fn new(train: Dataset, test: Option<Dataset>, cfg: &ExperimentConfig) -> Self {
        let train = match cfg.train_limit {
            Some(n) => train.truncated(n),
            None => train,
        };
        Self { train, test }
    }
}

/// One full run: init, train with early stopping, test the best weights.
/// Returns the result and the best-epoch network.
pub fn run_seed(cfg: &ExperimentConfig, data: &ExperimentData, seed: u64) -> Result<(RunResult, Network)> {
    let split = split_validation(data.train.clone(), cfg.validation_size, cfg.split_seed.unwrap_or(seed))?;
    let validation = split.validation_set();
    let mut net = build_network(cfg, seed)?;
    let mut best = net.clone();
    let mut shuffle_rng = SeededRng::stream(seed, STREAM_SHUFFLE);
    let mut trial_rng = SeededRng::stream(seed, STREAM_TRIALS);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut reports = Vec::new();
    let mut early_stopped = false;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let stats = train_epoch(
            &mut net,
            cfg.rule,
            &split.pool,
            &split.train,
            cfg,
            epoch,
            &mut shuffle_rng,
            &mut trial_rng,
        )?;
        let validation_accuracy = evaluate(&net, &validation)?;
        let report = EpochReport {
            epoch,
            train_metric: stats.train_metric,
            train_accuracy: stats.train_accuracy,
            validation_accuracy,
            exploration_fraction: stats.exploration_fraction,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} seed {seed} epoch {epoch}: train {:.4} val {:.4} ({:.1}s)",
            cfg.name,
            report.train_accuracy,
            report.validation_accuracy,
            report.wall_time
        );
        reports.push(report);
        let stop = stopper.observe(epoch, validation_accuracy);
        if stopper.improved_at(epoch) {
            best = net.clone();
        }
        if stop {
            early_stopped = true;
            break;
        }
    }
    let test_accuracy = data.test.as_ref().map(|t| evaluate(&best, t)).transpose()?;
    let result = RunResult {
        seed,
        epochs: reports.len(),
        best_epoch: stopper.best_epoch(),
        early_stopped,
        best_validation_accuracy: stopper.best(),
        test_accuracy,
        reports,
        failure: None,
        failure_code: None,
    };
    Ok((result, best))
}

/// All seeds of an experiment, in seed order. A failing seed is recorded in
/// its `RunResult` rather than aborting the others.
pub fn run_experiment(cfg: &ExperimentConfig, data: &ExperimentData) -> Vec<(RunResult, Option<Network>)> {
    let one = |seed: u64| match run_seed(cfg, data, seed) {
        Ok((r, net)) => (r, Some(net)),
        Err(e) => {
            log::error!("{} seed {seed} failed: {e}", cfg.name);
            (RunResult::failed(seed, &e), None)
        }
    };
    if cfg.parallel_seeds {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfg.seeds.iter().map(|&seed| s.spawn(move || one(seed))).collect();
            handles.into_iter().map(|h| h.join().expect("seed thread panicked")).collect()
        })
    } else {
        cfg.seeds.iter().map(|&seed| one(seed)).collect()
    }
}
