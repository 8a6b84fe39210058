//! Run outputs.
//!
//! Each run writes `seed-<s>.csv` with the header `epoch,split,metric,value`.
//! Rows per epoch, in order:
//!
//! | split      | metric                 | rule     |
//! |------------|------------------------|----------|
//! | train      | `mean_reward`          | qagrel   |
//! | train      | `mean_loss`            | backprop |
//! | train      | `accuracy`             | both     |
//! | train      | `exploration_fraction` | qagrel   |
//! | validation | `accuracy`             | both     |
//!
//! followed by one `<best_epoch>,test,accuracy,<v>` row when a test set is
//! present. Values use Rust's shortest round-trip float formatting. Wall
//! times are kept out of the CSV so identical runs give identical bytes; they
//! go to `summary.json` instead.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Rule};
use crate::train::RunResult;
use crate::{HarnessError, Result};

pub const CSV_HEADER: &str = "epoch,split,metric,value";

pub fn run_csv(run: &RunResult, rule: Rule) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let mut row = |epoch: usize, split: &str, metric: &str, value: f64| {
        writeln!(out, "{epoch},{split},{metric},{value}").expect("write to string");
    };
    for r in &run.reports {
        match rule {
            Rule::Qagrel => row(r.epoch, "train", "mean_reward", r.train_metric),
            Rule::Backprop => row(r.epoch, "train", "mean_loss", r.train_metric),
        }
        row(r.epoch, "train", "accuracy", r.train_accuracy);
        if rule == Rule::Qagrel {
            row(r.epoch, "train", "exploration_fraction", r.exploration_fraction);
        }
        row(r.epoch, "validation", "accuracy", r.validation_accuracy);
    }
    if let Some(acc) = run.test_accuracy {
        row(run.best_epoch, "test", "accuracy", acc);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub early_stopped: bool,
    pub best_validation_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub wall_time: f64,
    pub failure: Option<String>,
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Some(Self { mean, std: var.sqrt(), n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub hidden_units: Vec<usize>,
    pub runs: Vec<RunSummary>,
    pub completed: usize,
    pub epochs: Option<Stat>,
    pub validation_accuracy: Option<Stat>,
    pub test_accuracy: Option<Stat>,
}

impl ExperimentSummary {
    pub fn new(config: &ExperimentConfig, hidden_units: Vec<usize>, runs: &[RunResult]) -> Self {
        let ok: Vec<&RunResult> = runs.iter().filter(|r| r.failure.is_none()).collect();
        let epochs: Vec<f64> = ok.iter().map(|r| r.epochs as f64).collect();
        let val: Vec<f64> = ok.iter().map(|r| r.best_validation_accuracy).collect();
        let test: Vec<f64> = ok.iter().filter_map(|r| r.test_accuracy).collect();
        Self {
            config: config.clone(),
            hidden_units,
            runs: runs
                .iter()
                .map(|r| RunSummary {
                    seed: r.seed,
                    epochs: r.epochs,
                    best_epoch: r.best_epoch,
                    early_stopped: r.early_stopped,
                    best_validation_accuracy: r.failure.is_none().then_some(r.best_validation_accuracy),
                    test_accuracy: r.test_accuracy,
                    wall_time: r.reports.iter().map(|e| e.wall_time).sum(),
                    failure: r.failure.clone(),
                })
                .collect(),
            completed: ok.len(),
            epochs: Stat::of(&epochs),
            validation_accuracy: Stat::of(&val),
            test_accuracy: Stat::of(&test),
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| HarnessError::io(format!("writing {}", path.display()), e))
}

pub fn write_run_csv(dir: &Path, run: &RunResult, rule: Rule) -> Result<()> {
    write(&dir.join(format!("seed-{}.csv", run.seed)), &run_csv(run, rule))
}

pub fn write_summary(dir: &Path, summary: &ExperimentSummary) -> Result<()> {
    let json = serde_json::to_string_pretty(summary).map_err(|e| HarnessError::Other(e.to_string()))?;
    write(&dir.join("summary.json"), &json)
}

pub fn read_summary(path: &Path) -> Result<ExperimentSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Other(format!("{}: {e}", path.display())))
}

fn fmt_stat(s: &Option<Stat>, scale: f64, digits: usize) -> String {
    match s {
        Some(s) => format!("{:.*} ({:.*})", digits, s.mean * scale, digits, s.std * scale),
        None => "-".into(),
    }
}

/// Markdown table in the layout of the paper's results table, one row per
/// experiment summary.
pub fn report_table(summaries: &[ExperimentSummary]) -> String {
    let mut out = String::from(
        "| Dataset | Rule | 1st layer | Hidden units | alpha | Epochs | Val. acc. [%] | Test acc. [%] | Seeds |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for s in summaries {
        let c = &s.config;
        let first = c
            .architecture
            .split(';')
            .next()
            .map(|t| {
                let t = t.trim();
                if t.starts_with("loccon") {
                    "LocCon"
                } else if t.starts_with("conv") {
                    "Conv"
                } else {
                    "Full"
                }
            })
            .unwrap_or("-");
        let units: Vec<String> = s.hidden_units.iter().map(|u| u.to_string()).collect();
        writeln!(
            out,
            "| {} | {} | {} | {} | {:.0e} | {} | {} | {} | {}/{} |",
            c.dataset,
            c.rule,
            first,
            units.join("-"),
            c.alpha,
            fmt_stat(&s.epochs, 1.0, 0),
            fmt_stat(&s.validation_accuracy, 100.0, 2),
            fmt_stat(&s.test_accuracy, 100.0, 2),
            s.completed,
            s.runs.len()
        )
        .expect("write to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::EpochReport;

    fn run() -> RunResult {
        RunResult {
            seed: 3,
            epochs: 1,
            best_epoch: 1,
            early_stopped: false,
            best_validation_accuracy: 0.5,
            test_accuracy: Some(0.25),
            reports: vec![EpochReport {
                epoch: 1,
                train_metric: 0.1,
                train_accuracy: 0.1,
                validation_accuracy: 0.5,
                exploration_fraction: 0.05,
                wall_time: 12.0,
            }],
            failure: None,
            failure_code: None,
        }
    }

    #[test]
    fn csv_layout() {
        assert_eq!(
            run_csv(&run(), Rule::Qagrel),
            "epoch,split,metric,value\n1,train,mean_reward,0.1\n1,train,accuracy,0.1\n\
             1,train,exploration_fraction,0.05\n1,validation,accuracy,0.5\n1,test,accuracy,0.25\n"
        );
        assert!(run_csv(&run(), Rule::Backprop).contains("1,train,mean_loss,0.1\n"));
        assert!(!run_csv(&run(), Rule::Backprop).contains("exploration"));
    }

    #[test]
    fn stats() {
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std, s.n), (2.0, 2f64.sqrt(), 2));
        assert_eq!(Stat::of(&[5.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn table_row() {
        let cfg = crate::config::preset("mnist-desk-qagrel").unwrap();
        let s = ExperimentSummary::new(&cfg, vec![300, 100], &[run()]);
        let t = report_table(&[s]);
        assert!(t.contains("| mnist | qagrel | Full | 300-100 | 5e-1 | 1 (0) | 50.00 (0.00) | 25.00 (0.00) | 1/1 |"), "{t}");
    }
}
