//! Per-UAV epoch pipeline: prior preparation for cold start and loss, then
//! staleness filtering, neighbor selection, trust and refinement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Estimate, RefinedState, StateSummary, UavId, Vec3};
use crate::link::{filter_stale, select_neighbors, LinkParams, NeighborMessage};
use crate::refine::{refine_position, NeighborConstraint, SolverParams};
use crate::trust::{NeighborReport, RangeObservation, TrustLedger, TrustParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryParams {
    /// Covariance trace (m^2) above which the local fix counts as low-confidence.
    pub sigma_max: f64,
    pub gamma_boot: f64,
    /// Applied to the previous refined covariance on every epoch without a fix.
    pub gamma_loss: f64,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        Self {
            sigma_max: 75.0,
            gamma_boot: 10.0,
            gamma_loss: 4.0,
        }
    }
}

impl RecoveryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_max.is_finite() && self.sigma_max > 0.0) {
            return Err(Error::param("sigma_max", "must be positive and finite"));
        }
        for (name, v) in [("gamma_boot", self.gamma_boot), ("gamma_loss", self.gamma_loss)] {
            if !(v.is_finite() && v >= 1.0) {
                return Err(Error::param(name, format!("must be finite and >= 1, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which branch produced the solver prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorCase {
    Confident,
    LowConfidence,
    Loss,
    /// No fix and no history: the broad fallback prior was used.
    Fallback,
}

/// Builds the solver prior from the local fix or, when it is missing, from
/// the previous refined state. Returns [`Error::NoPrior`] when neither exists.
pub fn prepare_prior(
    local: &StateSummary,
    last_refined: Option<&RefinedState>,
    params: &RecoveryParams,
) -> Result<(Estimate, PriorCase)> {
    match (local.fix(), last_refined) {
        (Some(fix), _) if fix.covariance.trace() <= params.sigma_max => Ok((*fix, PriorCase::Confident)),
        (Some(fix), _) => Ok((
            Estimate::new(fix.position, fix.covariance.inflate(params.gamma_boot)?),
            PriorCase::LowConfidence,
        )),
        (None, Some(prev)) => Ok((
            Estimate::new(prev.position, prev.covariance.inflate(params.gamma_loss)?),
            PriorCase::Loss,
        )),
        (None, None) => Err(Error::NoPrior),
    }
}

/// Everything the pipeline needs besides the per-epoch inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub link: LinkParams,
    pub trust: TrustParams,
    pub recovery: RecoveryParams,
    pub solver: SolverParams,
    /// When false every neighbor weight is its link quality alone.
    pub trust_enabled: bool,
    /// Broad prior used when there is neither a fix nor any history.
    pub fallback_prior: Estimate,
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.trust.validate()?;
        self.recovery.validate()?;
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UavPipelineState {
    pub last_refined: Option<RefinedState>,
    pub trust_ledger: TrustLedger,
}

/// Diagnostics from one [`UavPipelineState::refine_epoch`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub refined: RefinedState,
    pub prior_case: PriorCase,
    /// Influence weight per selected neighbor.
    pub weights: BTreeMap<UavId, f64>,
    pub n_flagged: usize,
}

impl UavPipelineState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs one epoch for this UAV. `local.epoch` is taken as the current epoch.
    ///
    /// Messages from `local.uav_id` itself, without a matching range, or
    /// without a reported position are ignored. If a sender appears more than
    /// once only its newest message is used.
    pub fn refine_epoch(
        &mut self,
        local: &StateSummary,
        messages: &[NeighborMessage],
        ranges: &BTreeMap<UavId, RangeObservation>,
        params: &PipelineParams,
    ) -> Result<EpochOutcome> {
        let now = local.epoch;
        let (prior, prior_case) = match prepare_prior(local, self.last_refined.as_ref(), &params.recovery) {
            Ok(p) => p,
            Err(Error::NoPrior) => (params.fallback_prior, PriorCase::Fallback),
            Err(e) => return Err(e),
        };

        let fresh = filter_stale(&newest_per_sender(local.uav_id, messages, ranges), now, params.link.max_age);
        let mut selected = select_neighbors(&fresh, &params.link)?;
        // Fixed summation order in the solver.
        selected.sort_by_key(|s| s.message.sender);

        let reports: Vec<NeighborReport> = selected
            .iter()
            .filter_map(|s| {
                Some(NeighborReport {
                    id: s.message.sender,
                    position: s.message.state.position()?,
                    obs: *ranges.get(&s.message.sender)?,
                    quality: s.quality,
                })
            })
            .collect();

        let weights = if params.trust_enabled {
            let p_ref = local.position().or(self.last_refined.map(|r| r.position));
            match p_ref {
                Some(p) => self.trust_ledger.evaluate(p, &reports, &params.trust),
                None => self.trust_ledger.evaluate_without_reference(&reports, &params.trust),
            }
        } else {
            reports.iter().map(|r| (r.id, r.quality)).collect()
        };
        let n_flagged = if params.trust_enabled {
            self.trust_ledger.flagged().len()
        } else {
            0
        };

        let constraints: Vec<NeighborConstraint> = reports
            .iter()
            .map(|r| NeighborConstraint {
                id: r.id,
                p_j: r.position,
                obs: r.obs,
                omega: weights[&r.id],
            })
            .collect();

        let usable = constraints.iter().any(|c| c.omega > 0.0);
        let estimate = if prior_case == PriorCase::Fallback && !usable {
            prior
        } else {
            refine_position(&prior, &constraints, &params.solver)?.estimate
        };
        let refined = RefinedState {
            position: estimate.position,
            covariance: estimate.covariance,
            epoch: now,
        };
        self.last_refined = Some(refined);
        Ok(EpochOutcome {
            refined,
            prior_case,
            weights,
            n_flagged,
        })
    }
}

/// Newest message per sender, excluding self and senders without a range or position.
fn newest_per_sender(
    me: UavId,
    messages: &[NeighborMessage],
    ranges: &BTreeMap<UavId, RangeObservation>,
) -> Vec<NeighborMessage> {
    let mut best: BTreeMap<UavId, NeighborMessage> = BTreeMap::new();
    for m in messages {
        if m.sender == me || !ranges.contains_key(&m.sender) || m.state.is_missing() {
            continue;
        }
        best.entry(m.sender)
            .and_modify(|cur| {
                if m.sent_epoch > cur.sent_epoch {
                    *cur = *m;
                }
            })
            .or_insert(*m);
    }
    best.into_values().collect()
}

/// Center of an axis-aligned box with covariance `diag(hx^2, hy^2, hz^2)`
/// from its half extents.
pub fn broad_prior(min: Vec3, max: Vec3) -> Result<Estimate> {
    let center = (min + max).scale(0.5);
    let half = (max - min).scale(0.5);
    let cov = crate::geometry::make_cov_diag(half.x * half.x, half.y * half.y, half.z * half.z)?;
    Ok(Estimate::new(center, cov))
}
