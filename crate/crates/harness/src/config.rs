//! Experiment configuration.
//!
//! Config files are flat TOML. Every key is optional when `preset` is given;
//! explicit keys override the preset.
//!
//! ```toml
//! preset = "mnist-desk-qagrel"
//! dataset = "mnist"                  # mnist | cifar10 | cifar100
//! architecture = "full300; full100"  # see `arch`
//! rule = "qagrel"                    # qagrel | backprop
//! alpha = 0.5
//! batch_size = 100
//! epsilon = 0.05
//! seeds = [0, 1, 2]
//! early_stop_patience = 20
//! max_epochs = 60
//! init_range = 0.05                  # weights drawn from [-init_range, init_range]
//! validation_size = 1000
//! split_seed = 7                     # omit to split with each run's seed
//! train_limit = 5000                 # optional: use only the first n training samples
//! output_dir = "runs/desk"
//! parallel_seeds = false
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qagrel_data::DatasetId;
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Qagrel,
    #[serde(alias = "bp")]
    Backprop,
}

impl Rule {
    pub fn short_name(self) -> &'static str {
        match self {
            Rule::Qagrel => "qagrel",
            Rule::Backprop => "bp",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Qagrel => "qagrel",
            Rule::Backprop => "backprop",
        })
    }
}

impl FromStr for Rule {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qagrel" => Ok(Rule::Qagrel),
            "backprop" | "bp" => Ok(Rule::Backprop),
            other => Err(HarnessError::Config(format!("unknown rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetId,
    pub architecture: String,
    pub rule: Rule,
    pub alpha: f64,
    pub batch_size: usize,
    pub epsilon: f64,
    pub seeds: Vec<u64>,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub init_range: f64,
    pub validation_size: usize,
    pub split_seed: Option<u64>,
    pub train_limit: Option<usize>,
    pub output_dir: PathBuf,
    pub parallel_seeds: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    name: Option<String>,
    dataset: Option<DatasetId>,
    architecture: Option<String>,
    rule: Option<Rule>,
    alpha: Option<f64>,
    batch_size: Option<usize>,
    epsilon: Option<f64>,
    seeds: Option<Vec<u64>>,
    early_stop_patience: Option<usize>,
    max_epochs: Option<usize>,
    init_range: Option<f64>,
    validation_size: Option<usize>,
    split_seed: Option<u64>,
    train_limit: Option<usize>,
    output_dir: Option<PathBuf>,
    parallel_seeds: Option<bool>,
}

const ARCH_CONV: &str = "conv32 3x3; conv32 3x3 str(2,2); drop.8; full500; drop.3";
const ARCH_CONV_DEEP: &str = "conv32 3x3; conv32 3x3 str(2,2); drop.8; full 1,000; full500; drop.3";
const ARCH_FULL: &str = "full1500; full1000; full500";
const ARCH_DESK: &str = "full300; full100";

/// Names of all shipped presets.
pub fn preset_names() -> Vec<String> {
    let mut names = Vec::new();
    for dataset in ["mnist", "cifar10", "cifar100"] {
        let firsts: &[&str] = if dataset == "mnist" {
            &["full", "conv", "conv-deep", "loccon", "loccon-deep"]
        } else {
            &["conv", "conv-deep", "loccon", "loccon-deep"]
        };
        for first in firsts {
            for rule in ["qagrel", "bp"] {
                names.push(format!("{dataset}-{first}-{rule}"));
            }
        }
    }
    names.push("mnist-desk-qagrel".into());
    names.push("mnist-desk-bp".into());
    names
}

/// Looks up a preset: one per Table 1 row, plus the desk-scale MNIST pair.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let unknown = || HarnessError::Config(format!("unknown preset {name:?}; known: {}", preset_names().join(", ")));
    let (dataset, rest) = name.split_once('-').ok_or_else(unknown)?;
    let (first, rule) = rest.rsplit_once('-').ok_or_else(unknown)?;
    let dataset: DatasetId = dataset.parse().map_err(|_| unknown())?;
    let rule: Rule = rule.parse().map_err(|_| unknown())?;

    let loccon = |arch: &str| arch.replacen("conv32 3x3;", "loccon32 3x3;", 1);
    let (architecture, init_range, max_epochs) = match (dataset, first) {
        (DatasetId::Mnist, "full") => (ARCH_FULL.to_string(), 0.05, 500),
        (DatasetId::Mnist, "desk") => (ARCH_DESK.to_string(), 0.05, 60),
        (_, "conv") => (ARCH_CONV.to_string(), 0.02, 500),
        (_, "conv-deep") => (ARCH_CONV_DEEP.to_string(), 0.02, 500),
        (_, "loccon") => (loccon(ARCH_CONV), 0.02, 500),
        (_, "loccon-deep") => (loccon(ARCH_CONV_DEEP), 0.02, 500),
        _ => return Err(unknown()),
    };
    let fully_connected = matches!(first, "full" | "desk");
    let alpha = match (rule, fully_connected, dataset) {
        (Rule::Qagrel, true, _) => 0.5,
        (Rule::Qagrel, false, _) => 1.0,
        (Rule::Backprop, true, _) => 0.1,
        (Rule::Backprop, false, DatasetId::Mnist) => 1e-2,
        (Rule::Backprop, false, _) => 1e-3,
    };
    let seeds = if first == "desk" { vec![0, 1, 2] } else { (0..10).collect() };
    Ok(ExperimentConfig {
        name: name.to_string(),
        dataset,
        architecture,
        rule,
        alpha,
        batch_size: 100,
        epsilon: 0.05,
        seeds,
        early_stop_patience: 20,
        max_epochs,
        init_range,
        validation_size: 1000,
        split_seed: None,
        train_limit: None,
        output_dir: PathBuf::from("runs").join(name),
        parallel_seeds: false,
    })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut cfg = match &raw.preset {
            Some(p) => preset(p)?,
            None => {
                let missing = |key: &str| HarnessError::Config(format!("{key} is required without a preset"));
                let name = raw.name.clone().unwrap_or_else(|| "experiment".into());
                ExperimentConfig {
                    output_dir: PathBuf::from("runs").join(&name),
                    name,
                    dataset: raw.dataset.ok_or_else(|| missing("dataset"))?,
                    architecture: raw.architecture.clone().ok_or_else(|| missing("architecture"))?,
                    rule: raw.rule.ok_or_else(|| missing("rule"))?,
                    alpha: raw.alpha.ok_or_else(|| missing("alpha"))?,
                    batch_size: 100,
                    epsilon: 0.05,
                    seeds: vec![0],
                    early_stop_patience: 20,
                    max_epochs: 500,
                    init_range: raw.init_range.ok_or_else(|| missing("init_range"))?,
                    validation_size: 1000,
                    split_seed: None,
                    train_limit: None,
                    parallel_seeds: false,
                }
            }
        };
        let RawConfig {
            preset: _,
            name,
            dataset,
            architecture,
            rule,
            alpha,
            batch_size,
            epsilon,
            seeds,
            early_stop_patience,
            max_epochs,
            init_range,
            validation_size,
            split_seed,
            train_limit,
            output_dir,
            parallel_seeds,
        } = raw;
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = $field { cfg.$field = v; } )* };
        }
        set!(name, dataset, architecture, rule, alpha, batch_size, epsilon, seeds);
        set!(early_stop_patience, max_epochs, init_range, validation_size, output_dir, parallel_seeds);
        cfg.split_seed = split_seed.or(cfg.split_seed);
        cfg.train_limit = train_limit.or(cfg.train_limit);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.early_stop_patience == 0 {
            return fail("early_stop_patience must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if !(self.init_range.is_finite() && self.init_range > 0.0) {
            return fail(format!("init_range must be positive, got {}", self.init_range));
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        let [h, w, c] = self.dataset.image_shape();
        crate::arch::parse_architecture(&self.architecture, &[h, w, c], self.dataset.num_classes())?;
        Ok(())
    }
}
