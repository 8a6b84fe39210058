use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qagrel_data::{data_root, load_dataset, split_validation};
use qagrel_harness::fetch::{fetch, Manifest};
use qagrel_harness::metrics::{read_summary, report_table};
use qagrel_harness::{evaluate, load_data, preset, preset_names, run_and_write, verify, weights, ExperimentConfig, HarnessError, Result, Rule};

#[derive(Parser)]
#[command(name = "qagrel", version, about = "Train and check Q-AGREL and error-backprop networks")]
struct Cli {
    /// Dataset root; defaults to $QAGREL_DATA_DIR, then ./data.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download dataset files listed in a manifest, verifying SHA-256 digests.
    Fetch {
        #[arg(long)]
        manifest: PathBuf,
        /// Re-download files that already exist.
        #[arg(long)]
        force: bool,
    },
    /// Train one experiment (all configured seeds unless --seed is given).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rule: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        train_limit: Option<usize>,
    },
    /// Greedy accuracy of saved weights on a dataset split.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 1000)]
        validation_size: usize,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Check the learning rule against the gradient oracle on random networks.
    Verify {
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        #[arg(long, default_value_t = 100)]
        fd_cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize summary.json files (or directories containing them) as a table.
    Report { paths: Vec<PathBuf> },
    /// List the shipped presets.
    Presets,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Validation,
    Test,
}

fn find_summaries(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    let entries = std::fs::read_dir(path).map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))?;
    let mut children: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    children.sort();
    for child in children {
        if child.is_dir() {
            find_summaries(&child, out)?;
        } else if child.file_name().is_some_and(|n| n == "summary.json") {
            out.push(child);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.data_dir.unwrap_or_else(data_root);
    match cli.command {
        Command::Fetch { manifest, force } => {
            let text = std::fs::read_to_string(&manifest)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", manifest.display())))?;
            let n = fetch(&Manifest::from_toml_str(&text)?, &root, force)?;
            println!("fetched {n} file(s) into {}", root.display());
        }
        Command::Train {
            config,
            preset: preset_name,
            seed,
            rule,
            out,
            max_epochs,
            train_limit,
        } => {
            let mut cfg = match (config, preset_name) {
                (Some(path), None) => ExperimentConfig::from_file(&path)?,
                (None, Some(name)) => preset(&name)?,
                _ => return Err(HarnessError::Config("give exactly one of --config or --preset".into())),
            };
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(r) = rule {
                cfg.rule = r.parse::<Rule>()?;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(m) = max_epochs {
                cfg.max_epochs = m;
            }
            cfg.train_limit = train_limit.or(cfg.train_limit);
            cfg.validate()?;
            let data = load_data(&cfg, &root)?;
            let summary = run_and_write(&cfg, &data)?;
            print!("{}", report_table(std::slice::from_ref(&summary)));
            println!("outputs in {}", cfg.output_dir.display());
            if summary.completed == 0 {
                let code = summary.runs.iter().find_map(|r| r.failure.clone()).unwrap_or_default();
                return Err(HarnessError::Numerical(format!("every seed failed; first: {code}")));
            }
        }
        Command::Eval {
            weights: path,
            split,
            validation_size,
            split_seed,
        } => {
            let snap = weights::load(&path)?;
            let dataset = snap.dataset;
            let net = snap.into_network()?;
            let (train, test) = load_dataset(&root, dataset)?;
            let ds = match split {
                Split::Test => test,
                Split::Train => split_validation(train, validation_size, split_seed)?.train_set(),
                Split::Validation => split_validation(train, validation_size, split_seed)?.validation_set(),
            };
            println!("accuracy {:.4} on {} samples", evaluate(&net, &ds)?, ds.len());
        }
        Command::Verify { cases, fd_cases, seed } => {
            let reports = [
                verify::check_theorem(cases, seed)?,
                verify::check_selective_fd(fd_cases, seed + 1)?,
                verify::check_backprop_fd(fd_cases, seed + 2)?,
                verify::check_gating(fd_cases, seed + 3)?,
            ];
            let mut ok = true;
            for r in &reports {
                println!("{} {r}", if r.passed() { "PASS" } else { "FAIL" });
                ok &= r.passed();
            }
            let gap = verify::reciprocity_after_updates(10_000, seed + 4)?;
            println!("{} reciprocity gap after 10000 updates: {gap:.3e}", if gap <= 1e-9 { "PASS" } else { "FAIL" });
            if !ok || gap > 1e-9 {
                return Err(HarnessError::Numerical("verification failed".into()));
            }
        }
        Command::Report { paths } => {
            let mut files = Vec::new();
            for p in &paths {
                find_summaries(p, &mut files)?;
            }
            let summaries = files.iter().map(|f| read_summary(f)).collect::<Result<Vec<_>>>()?;
            print!("{}", report_table(&summaries));
        }
        Command::Presets => {
            for name in preset_names() {
                let p = preset(&name)?;
                println!("{name:28} alpha {:<6} {}", p.alpha, p.architecture);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
