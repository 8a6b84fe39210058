//! Experiment orchestration for Q-AGREL and error-backprop training:
//! configs and presets, epoch loop with early stopping, multi-seed runs,
//! metric files, and the checks behind `qagrel verify`.

pub mod arch;
pub mod config;
mod error;
pub mod fetch;
pub mod metrics;
pub mod train;
pub mod verify;
pub mod weights;

use std::path::Path;

pub use config::{preset, preset_names, ExperimentConfig, Rule};
pub use error::{HarnessError, Result};
pub use metrics::ExperimentSummary;
pub use train::{early_stop, evaluate, run_experiment, run_seed, train_epoch, EarlyStopping, EpochReport, ExperimentData, RunResult};

/// Loads the configured dataset from `root`.
pub fn load_data(cfg: &ExperimentConfig, root: &Path) -> Result<ExperimentData> {
    let (train, test) = qagrel_data::load_dataset(root, cfg.dataset)?;
    Ok(ExperimentData::new(train, Some(test), cfg))
}

/// Runs every seed and writes `seed-<s>.csv`, `seed-<s>.weights.json` and
/// `summary.json` into the configured output directory.
pub fn run_and_write(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentSummary> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(format!("creating {}", dir.display()), e))?;
    let hidden_units = train::build_network(cfg, 0)?.hidden_units();
    let results = run_experiment(cfg, data);
    let mut runs = Vec::with_capacity(results.len());
    for (run, net) in results {
        if run.failure.is_none() {
            metrics::write_run_csv(dir, &run, cfg.rule)?;
        }
        if let Some(net) = net {
            let snap = weights::Snapshot::of(&net, cfg.dataset, &cfg.architecture);
            weights::save(&dir.join(format!("seed-{}.weights.json", run.seed)), &snap)?;
        }
        runs.push(run);
    }
    let summary = ExperimentSummary::new(cfg, hidden_units, &runs);
    metrics::write_summary(dir, &summary)?;
    Ok(summary)
}
