use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UavId;

/// Error statistics for one epoch. Means are over honest UAVs only; the
/// per-UAV vectors cover every UAV, indexed by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_local_error_honest: f64,
    pub mean_refined_error_honest: f64,
    /// Total flagged neighbors across honest UAVs' ledgers.
    pub flagged_count: usize,
    pub local_errors: Vec<f64>,
    pub refined_errors: Vec<f64>,
    /// Local fix missing this epoch.
    pub loss_flags: Vec<bool>,
    /// No fix and no history: the broad fallback prior was used.
    pub fallback_flags: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trust: Option<Vec<BTreeMap<UavId, f64>>>,
}

/// Recovery means honest mean error at or below `threshold_m` for `window`
/// consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCriterion {
    pub start_epoch: usize,
    pub threshold_m: f64,
    pub window: usize,
}

impl RecoveryCriterion {
    pub fn new(start_epoch: usize) -> Self {
        Self {
            start_epoch,
            threshold_m: 5.0,
            window: 3,
        }
    }
}

/// First epoch `>= start_epoch` that opens a qualifying window.
pub fn recovery_epoch(errors: &[f64], c: &RecoveryCriterion) -> Option<usize> {
    if c.window == 0 {
        return Some(c.start_epoch).filter(|&s| s <= errors.len());
    }
    (c.start_epoch..errors.len())
        .find(|&e| e + c.window <= errors.len() && errors[e..e + c.window].iter().all(|&v| v <= c.threshold_m))
}

/// Linearly interpolated percentile (`q` in `[0, 100]`) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty data");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean and 10th/90th percentiles of one quantity across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub p10: f64,
    pub p90: f64,
}

impl Band {
    pub fn of(values: &[f64]) -> Band {
        Band {
            mean: mean(values),
            p10: percentile(values, 10.0),
            p90: percentile(values, 90.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub local: Band,
    pub refined: Band,
    pub mean_flagged: f64,
}

/// Local vs refined over a range of epochs, one mean per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub first_epoch: usize,
    /// Exclusive.
    pub end_epoch: usize,
    pub local: Band,
    pub refined: Band,
    /// Fraction of runs whose refined window mean is strictly below local.
    pub refined_win_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub recovered_runs: usize,
    pub total_runs: usize,
    pub median_epoch: Option<f64>,
    pub p90_epoch: Option<f64>,
    /// Per run, `None` when the run never recovers.
    pub per_run: Vec<Option<usize>>,
}

impl RecoveryStats {
    fn from_epochs(per_run: Vec<Option<usize>>) -> Self {
        let hit: Vec<f64> = per_run.iter().flatten().map(|&e| e as f64).collect();
        Self {
            recovered_runs: hit.len(),
            total_runs: per_run.len(),
            median_epoch: (!hit.is_empty()).then(|| percentile(&hit, 50.0)),
            p90_epoch: (!hit.is_empty()).then(|| percentile(&hit, 90.0)),
            per_run,
        }
    }
}

/// Cross-run summary of a batch of equally long runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_runs: usize,
    pub epochs: Vec<EpochSummary>,
    pub cold_start: Option<WindowSummary>,
    pub post_cold_start: Option<WindowSummary>,
    pub recovery_criterion: RecoveryCriterion,
    pub local_recovery: RecoveryStats,
    pub refined_recovery: RecoveryStats,
}

fn window(runs: &[Vec<EpochMetrics>], first: usize, end: usize) -> Option<WindowSummary> {
    if first >= end {
        return None;
    }
    let per_run = |f: fn(&EpochMetrics) -> f64| -> Vec<f64> {
        runs.iter().map(|r| mean(&r[first..end].iter().map(f).collect::<Vec<_>>())).collect()
    };
    let local = per_run(|m| m.mean_local_error_honest);
    let refined = per_run(|m| m.mean_refined_error_honest);
    let wins = local.iter().zip(&refined).filter(|(l, r)| r < l).count();
    Some(WindowSummary {
        first_epoch: first,
        end_epoch: end,
        local: Band::of(&local),
        refined: Band::of(&refined),
        refined_win_rate: wins as f64 / runs.len() as f64,
    })
}

/// Aggregates runs that share a config but differ in seed.
pub fn aggregate_runs(runs: &[Vec<EpochMetrics>], cold_start_epochs: usize) -> Result<RunSummary> {
    let first = runs.first().ok_or(Error::EmptyRuns)?;
    let len = first.len();
    if let Some(r) = runs.iter().find(|r| r.len() != len) {
        return Err(Error::RaggedRuns {
            expected: len,
            found: r.len(),
        });
    }
    let epochs = (0..len)
        .map(|e| {
            let local: Vec<f64> = runs.iter().map(|r| r[e].mean_local_error_honest).collect();
            let refined: Vec<f64> = runs.iter().map(|r| r[e].mean_refined_error_honest).collect();
            let flagged: Vec<f64> = runs.iter().map(|r| r[e].flagged_count as f64).collect();
            EpochSummary {
                epoch: first[e].epoch,
                local: Band::of(&local),
                refined: Band::of(&refined),
                mean_flagged: mean(&flagged),
            }
        })
        .collect();
    let split = cold_start_epochs.min(len);
    let criterion = RecoveryCriterion::new(cold_start_epochs);
    let series = |f: fn(&EpochMetrics) -> f64| -> Vec<Option<usize>> {
        runs.iter()
            .map(|r| recovery_epoch(&r.iter().map(f).collect::<Vec<_>>(), &criterion))
            .collect()
    };
    Ok(RunSummary {
        n_runs: runs.len(),
        epochs,
        cold_start: window(runs, 0, split),
        post_cold_start: window(runs, split, len),
        recovery_criterion: criterion,
        local_recovery: RecoveryStats::from_epochs(series(|m| m.mean_local_error_honest)),
        refined_recovery: RecoveryStats::from_epochs(series(|m| m.mean_refined_error_honest)),
    })
}
