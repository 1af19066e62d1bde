use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use spikelearn_cli::commands::{self, RunError};
use spikelearn_cli::config::{ConfigError, ExperimentConfig};

/// Default root for run directories when `--out` is not given.
const OUTPUT_ROOT_ENV: &str = "SPIKELEARN_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "spikelearn", version, about = "Spiking attractor-network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (`[section]` headers and `key = value` lines).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set synapse.j_pot=0.12`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Set every seed stream to this value.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory. Must not exist or be empty.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Single-neuron gain curve.
    NeuronTf {
        #[command(flatten)]
        common: Common,
        /// Comma-separated per-source input rates, Hz.
        #[arg(long)]
        rates: Option<String>,
    },
    /// LTP/LTD transition probability map.
    LtpLtd {
        #[command(flatten)]
        common: Common,
    },
    /// Effective transfer functions and their fixed points.
    Etf {
        #[command(flatten)]
        common: Common,
        /// Comma-separated potentiated fractions.
        #[arg(long)]
        fractions: Option<String>,
        /// `pattern:K` or E indices such as `0-9;20`.
        #[arg(long)]
        subpopulation: Option<String>,
    },
    /// Unsupervised learning under the presentation schedule.
    Learn {
        #[command(flatten)]
        common: Common,
        /// Presentations of each pattern between snapshots.
        #[arg(long)]
        snapshot_every: Option<usize>,
        /// Stop at this simulated time, leaving a truncated log.
        #[arg(long)]
        stop_at: Option<f64>,
    },
    /// Pattern completion from degraded input.
    Recall {
        #[command(flatten)]
        common: Common,
        /// Fraction of active cells removed from the stimulus.
        #[arg(long)]
        removal: Option<f64>,
        /// Trained matrix written by `learn` (final_snapshot.txt).
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Number of recall trials; trial k cues pattern k mod n.
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn effective_config(common: &Common, extra: &[(&str, Option<String>)]) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.apply_overrides(&common.overrides)?;
    for (key, value) in extra {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn is_empty_dir(p: &Path) -> bool {
    p.read_dir().map(|mut d| d.next().is_none()).unwrap_or(false)
}

/// Creates a fresh run directory. An explicit path must be absent or
/// empty; otherwise the first free `<root>/<name>-seed<S>[-k]` is used.
fn run_dir(common: &Common, name: &str, cfg: &ExperimentConfig) -> Result<PathBuf, RunError> {
    let dir = match &common.out {
        Some(p) => {
            if p.exists() && !is_empty_dir(p) {
                return Err(ConfigError(format!("{} already holds a run; outputs are write-once", p.display())).into());
            }
            p.clone()
        }
        None => {
            let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
            let base = format!("{name}-seed{}", cfg.network.seeds.topology);
            let mut k = 1;
            loop {
                let cand = if k == 1 { root.join(&base) } else { root.join(format!("{base}-{k}")) };
                if !cand.exists() {
                    break cand;
                }
                k += 1;
            }
        }
    };
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.txt"), cfg.render())?;
    Ok(dir)
}

fn run(cli: Cli) -> Result<(PathBuf, String), RunError> {
    match cli.command {
        Command::NeuronTf { common, rates } => {
            let cfg = effective_config(&common, &[("neuron_tf.rates", rates)])?;
            let dir = run_dir(&common, "neuron-tf", &cfg)?;
            let r = commands::cmd_neuron_tf(&cfg, &dir)?;
            Ok((dir, r))
        }
        Command::LtpLtd { common } => {
            let cfg = effective_config(&common, &[])?;
            let dir = run_dir(&common, "ltp-ltd", &cfg)?;
            let r = commands::cmd_ltp_ltd(&cfg, &dir)?;
            Ok((dir, r))
        }
        Command::Etf { common, fractions, subpopulation } => {
            let cfg = effective_config(&common, &[("etf.fractions", fractions), ("etf.subpopulation", subpopulation)])?;
            // Catch malformed subpopulations before any directory exists.
            commands::check_subpopulation(&cfg)?;
            let dir = run_dir(&common, "etf", &cfg)?;
            let r = commands::cmd_etf(&cfg, &dir)?;
            Ok((dir, r))
        }
        Command::Learn { common, snapshot_every, stop_at } => {
            let cfg = effective_config(
                &common,
                &[
                    ("learn.snapshot_every", snapshot_every.map(|v| v.to_string())),
                    ("learn.stop_at", stop_at.map(|v| v.to_string())),
                ],
            )?;
            let dir = run_dir(&common, "learn", &cfg)?;
            let interrupted = Arc::new(AtomicBool::new(false));
            let flag = interrupted.clone();
            // A second handler registration fails only in tests that call run() twice.
            let _ = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst));
            let r = commands::cmd_learn(&cfg, &dir, || interrupted.load(Ordering::SeqCst))?;
            Ok((dir, r))
        }
        Command::Recall { common, removal, snapshot, trials } => {
            let cfg = effective_config(
                &common,
                &[
                    ("recall.removal", removal.map(|v| v.to_string())),
                    ("recall.snapshot", snapshot.map(|p| p.display().to_string())),
                    ("recall.trials", trials.map(|v| v.to_string())),
                ],
            )?;
            if !cfg.recall.snapshot.is_empty() && !Path::new(&cfg.recall.snapshot).is_file() {
                return Err(ConfigError(format!("recall.snapshot: no file at {}", cfg.recall.snapshot)).into());
            }
            let dir = run_dir(&common, "recall", &cfg)?;
            let r = commands::cmd_recall(&cfg, &dir)?;
            Ok((dir, r))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok((dir, report)) => {
            print!("{report}");
            println!("outputs: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("spikelearn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
