use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use swarm_refine::SwarmConfig;
use swarm_refine_cli::{
    config_help, run_cohort, run_single, run_sweep, threads_from_env, ExperimentSpec, Format, DEFAULT_FRACTIONS,
    THREADS_ENV,
};

/// Cooperative 3D position refinement experiments for UAV swarms.
#[derive(Parser)]
#[command(name = "swarm-refine", version)]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Subcommand)]
enum Mode {
    /// Per-epoch local vs refined error (aggregated over seeds).
    Single {
        #[command(flatten)]
        common: Common,
        /// Also write a position snapshot of the first seed after this epoch.
        #[arg(long, value_name = "N")]
        snapshot_epoch: Option<usize>,
        /// Snapshot destination; defaults to `<out>.snapshot.json`.
        #[arg(long, value_name = "PATH")]
        snapshot_out: Option<PathBuf>,
    },
    /// Cold-start cohort study: window means, win rates, recovery epochs.
    Cohort {
        #[command(flatten)]
        common: Common,
    },
    /// Final-epoch error vs malicious fraction, trust on and off.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated malicious fractions in [0, 0.5].
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FRACTIONS)]
        fractions: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat TOML file of config overrides.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed; runs use seeds SEED..SEED+RUNS-1.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds [default: 1 for single, 100 otherwise].
    #[arg(long, value_name = "N")]
    runs: Option<usize>,
    /// Shorthand for --set n_epochs=N.
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Disable range-consistency trust.
    #[arg(long)]
    no_trust: bool,
    /// Override one config field; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output file; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl Common {
    fn spec(&self, default_runs: usize) -> Result<ExperimentSpec> {
        let mut config = SwarmConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("config: reading {}", path.display()))?;
            config.apply_toml(&text)?;
        }
        for kv in &self.overrides {
            let (key, value) = kv
                .split_once('=')
                .with_context(|| format!("--set: expected KEY=VALUE, got {kv:?}"))?;
            config.set(key.trim(), value)?;
        }
        if let Some(n) = self.epochs {
            config.n_epochs = n;
            config.cold_start_epochs = config.cold_start_epochs.min(n);
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if self.no_trust {
            config.trust_enabled = false;
        }
        config.validate()?;
        Ok(ExperimentSpec {
            seeds: ExperimentSpec::seed_range(config.seed, self.runs.unwrap_or(default_runs)),
            config,
            format: match self.format {
                OutFormat::Csv => Format::Csv,
                OutFormat::Json => Format::Json,
            },
            threads: threads_from_env()?,
        })
    }
}

fn write_output(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, body).with_context(|| format!("out: writing {}", path.display())),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn run(mode: Mode) -> Result<()> {
    match mode {
        Mode::Single {
            common,
            snapshot_epoch,
            snapshot_out,
        } => {
            let spec = common.spec(1)?;
            let snapshot_path = match (snapshot_epoch, snapshot_out, &common.out) {
                (None, _, _) => None,
                (Some(_), Some(p), _) => Some(p),
                (Some(_), None, Some(out)) => {
                    let mut p = out.clone().into_os_string();
                    p.push(".snapshot.json");
                    Some(PathBuf::from(p))
                }
                (Some(_), None, None) => anyhow::bail!("snapshot-epoch: needs --out or --snapshot-out"),
            };
            let output = run_single(&spec, snapshot_epoch)?;
            write_output(common.out.as_deref(), &output.body)?;
            if let (Some(path), Some(snap)) = (snapshot_path, output.snapshot) {
                let mut text = serde_json::to_string_pretty(&snap)?;
                text.push('\n');
                write_output(Some(&path), &text)?;
            }
        }
        Mode::Cohort { common } => {
            let spec = common.spec(100)?;
            write_output(common.out.as_deref(), &run_cohort(&spec)?)?;
        }
        Mode::Sweep { common, fractions } => {
            let spec = common.spec(100)?;
            write_output(common.out.as_deref(), &run_sweep(&spec, &fractions)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let help = format!("{}\nEnvironment:\n  {THREADS_ENV}  maximum worker threads (0 or unset: all cores)\n", config_help());
    let command = Cli::command()
        .after_help(help.clone())
        .mut_subcommands(|sub| sub.after_help(help.clone()));
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli.mode) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
