//! Experiment runner behind the `swarm-refine` binary.
//!
//! Every mode renders its whole output into a `String`, so the binary only
//! parses flags and writes bytes. Runs over a seed list execute on a rayon
//! pool; results are collected in seed order.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use swarm_refine::sim::{
    aggregate_runs, mean, percentile, recovery_epoch, run_simulation, run_simulation_with_snapshot, RecoveryCriterion,
    RunSummary, Snapshot,
};
use swarm_refine::{EpochMetrics, SwarmConfig};

pub const THREADS_ENV: &str = "SWARM_REFINE_THREADS";
pub const DEFAULT_FRACTIONS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

pub const SINGLE_HEADER: &str = "epoch,mean_local_error_m,mean_refined_error_m,p10_refined,p90_refined,n_flagged";
pub const COHORT_HEADER: &str =
    "seed,cold_local_mean_m,cold_refined_mean_m,post_local_mean_m,post_refined_mean_m,local_recovery_epoch,refined_recovery_epoch";
pub const SWEEP_HEADER: &str = "fraction,trust,final_epoch_mean_error_m,p10,p90";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// One fully resolved experiment request.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub config: SwarmConfig,
    pub seeds: Vec<u64>,
    pub format: Format,
    /// Thread cap; `None` lets rayon decide.
    pub threads: Option<usize>,
}

impl ExperimentSpec {
    /// Seeds `base, base + 1, ..., base + runs - 1`.
    pub fn seed_range(base: u64, runs: usize) -> Vec<u64> {
        (0..runs as u64).map(|k| base.wrapping_add(k)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("runs: at least one seed is required");
        }
        self.config.validate()?;
        Ok(())
    }

    fn config_for(&self, seed: u64) -> SwarmConfig {
        SwarmConfig {
            seed,
            ..self.config.clone()
        }
    }
}

/// Reads the thread cap from [`THREADS_ENV`]; unset or `0` means no cap.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV}: expected a non-negative integer, got {v:?}"))?;
            Ok((n > 0).then_some(n))
        }
    }
}

/// Maps `f` over `items` on a bounded pool, keeping input order.
fn par_map<T, U, F>(threads: Option<usize>, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("building thread pool")?;
    pool.install(|| items.par_iter().map(&f).collect())
}

fn run_seeds(spec: &ExperimentSpec, config: &SwarmConfig) -> Result<Vec<Vec<EpochMetrics>>> {
    par_map(spec.threads, &spec.seeds, |&seed| {
        Ok(run_simulation(&SwarmConfig {
            seed,
            ..config.clone()
        })?)
    })
}

fn csv_float(v: f64) -> String {
    format!("{v:.6}")
}

#[derive(Serialize)]
struct ConfigLine<'a> {
    config: &'a SwarmConfig,
    seeds: &'a [u64],
}

#[derive(Serialize)]
struct EpochLine<'a> {
    seed: u64,
    #[serde(flatten)]
    metrics: &'a EpochMetrics,
}

/// Output of `single`: the rendered table and an optional snapshot of the first seed.
pub struct SingleOutput {
    pub body: String,
    pub snapshot: Option<Snapshot>,
}

/// Per-epoch errors, aggregated over seeds when more than one is given.
pub fn run_single(spec: &ExperimentSpec, snapshot_epoch: Option<usize>) -> Result<SingleOutput> {
    spec.validate()?;
    if let Some(e) = snapshot_epoch {
        if e >= spec.config.n_epochs {
            bail!("snapshot-epoch: {e} is not below n_epochs = {}", spec.config.n_epochs);
        }
    }
    let runs = run_seeds(spec, &spec.config)?;
    let snapshot = match snapshot_epoch {
        Some(e) => run_simulation_with_snapshot(&spec.config_for(spec.seeds[0]), Some(e))?.1,
        None => None,
    };

    let mut body = String::new();
    match spec.format {
        Format::Csv => {
            body.push_str(&spec.config.comment_header());
            body.push_str(SINGLE_HEADER);
            body.push('\n');
            for e in 0..spec.config.n_epochs {
                let at = |f: fn(&EpochMetrics) -> f64| runs.iter().map(|r| f(&r[e])).collect::<Vec<f64>>();
                let local = at(|m| m.mean_local_error_honest);
                let refined = at(|m| m.mean_refined_error_honest);
                let flagged = at(|m| m.flagged_count as f64);
                let _ = writeln!(
                    body,
                    "{e},{},{},{},{},{:.3}",
                    csv_float(mean(&local)),
                    csv_float(mean(&refined)),
                    csv_float(percentile(&refined, 10.0)),
                    csv_float(percentile(&refined, 90.0)),
                    mean(&flagged),
                );
            }
        }
        Format::Json => {
            let head = ConfigLine {
                config: &spec.config,
                seeds: &spec.seeds,
            };
            body.push_str(&serde_json::to_string(&head)?);
            body.push('\n');
            for (seed, run) in spec.seeds.iter().zip(&runs) {
                for m in run {
                    body.push_str(&serde_json::to_string(&EpochLine { seed: *seed, metrics: m })?);
                    body.push('\n');
                }
            }
        }
    }
    Ok(SingleOutput { body, snapshot })
}

#[derive(Serialize)]
struct CohortReport<'a> {
    config: &'a SwarmConfig,
    seeds: &'a [u64],
    summary: RunSummary,
}

/// Cold-start and post-cold-start comparison of local vs refined error.
pub fn run_cohort(spec: &ExperimentSpec) -> Result<String> {
    spec.validate()?;
    let runs = run_seeds(spec, &spec.config)?;
    let split = spec.config.cold_start_epochs;
    match spec.format {
        Format::Json => {
            let summary = aggregate_runs(&runs, split)?;
            let report = CohortReport {
                config: &spec.config,
                seeds: &spec.seeds,
                summary,
            };
            let mut s = serde_json::to_string_pretty(&report)?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => {
            let criterion = RecoveryCriterion::new(split);
            let mut body = spec.config.comment_header();
            body.push_str(COHORT_HEADER);
            body.push('\n');
            for (seed, run) in spec.seeds.iter().zip(&runs) {
                let window_mean = |range: &[EpochMetrics], f: fn(&EpochMetrics) -> f64| {
                    if range.is_empty() {
                        String::new()
                    } else {
                        csv_float(mean(&range.iter().map(f).collect::<Vec<_>>()))
                    }
                };
                let (cold, post) = run.split_at(split.min(run.len()));
                let rec = |f: fn(&EpochMetrics) -> f64| {
                    recovery_epoch(&run.iter().map(f).collect::<Vec<_>>(), &criterion)
                        .map(|e| e.to_string())
                        .unwrap_or_default()
                };
                let _ = writeln!(
                    body,
                    "{seed},{},{},{},{},{},{}",
                    window_mean(cold, |m| m.mean_local_error_honest),
                    window_mean(cold, |m| m.mean_refined_error_honest),
                    window_mean(post, |m| m.mean_local_error_honest),
                    window_mean(post, |m| m.mean_refined_error_honest),
                    rec(|m| m.mean_local_error_honest),
                    rec(|m| m.mean_refined_error_honest),
                );
            }
            Ok(body)
        }
    }
}

/// One row of the malicious-fraction sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub trust: bool,
    pub final_epoch_mean_error_m: f64,
    pub p10: f64,
    pub p90: f64,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    config: &'a SwarmConfig,
    seeds: &'a [u64],
    rows: &'a [SweepRow],
}

/// Final-epoch honest refined error per fraction, trust on and off.
///
/// Both trust settings use the same seeds, so each pair differs only in
/// the weighting.
pub fn sweep_rows(spec: &ExperimentSpec, fractions: &[f64]) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    if fractions.is_empty() {
        bail!("fractions: at least one fraction is required");
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=0.5).contains(*f)) {
        bail!("fractions: {f} is outside [0, 0.5]");
    }
    if spec.config.n_epochs == 0 {
        bail!("n_epochs: sweep needs at least one epoch");
    }
    let cases: Vec<(f64, bool)> = fractions.iter().flat_map(|&f| [(f, true), (f, false)]).collect();
    for &(f, _) in &cases {
        SwarmConfig {
            malicious_fraction: f,
            ..spec.config.clone()
        }
        .validate()?;
    }
    // Flatten (case, seed) so the pool stays busy across cases.
    let jobs: Vec<(usize, u64)> = (0..cases.len())
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let finals = par_map(spec.threads, &jobs, |&(c, seed)| {
        let (fraction, trust) = cases[c];
        let config = SwarmConfig {
            seed,
            malicious_fraction: fraction,
            trust_enabled: trust,
            ..spec.config.clone()
        };
        let run = run_simulation(&config)?;
        Ok(run.last().map(|m| m.mean_refined_error_honest).unwrap_or(f64::NAN))
    })?;
    Ok(cases
        .iter()
        .zip(finals.chunks(spec.seeds.len()))
        .map(|(&(fraction, trust), v)| SweepRow {
            fraction,
            trust,
            final_epoch_mean_error_m: mean(v),
            p10: percentile(v, 10.0),
            p90: percentile(v, 90.0),
        })
        .collect())
}

pub fn run_sweep(spec: &ExperimentSpec, fractions: &[f64]) -> Result<String> {
    let rows = sweep_rows(spec, fractions)?;
    match spec.format {
        Format::Csv => {
            let mut body = spec.config.comment_header();
            body.push_str(SWEEP_HEADER);
            body.push('\n');
            for r in &rows {
                let _ = writeln!(
                    body,
                    "{:.2},{},{},{},{}",
                    r.fraction,
                    if r.trust { "on" } else { "off" },
                    csv_float(r.final_epoch_mean_error_m),
                    csv_float(r.p10),
                    csv_float(r.p90),
                );
            }
            Ok(body)
        }
        Format::Json => {
            let report = SweepReport {
                config: &spec.config,
                seeds: &spec.seeds,
                rows: &rows,
            };
            let mut s = serde_json::to_string_pretty(&report)?;
            s.push('\n');
            Ok(s)
        }
    }
}

/// Help text listing every config key with its default value.
pub fn config_help() -> String {
    let defaults = SwarmConfig::default().entries();
    let width = defaults.iter().map(|(k, v)| k.len() + v.len()).max().unwrap_or(0) + 3;
    let mut out = String::from("Config fields (set with --set KEY=VALUE or in a --config TOML file):\n");
    for ((key, value), (_, doc)) in defaults.iter().zip(SwarmConfig::FIELDS) {
        let kv = format!("{key} = {value}");
        let _ = writeln!(out, "  {kv:<width$} {doc}");
    }
    out
}
