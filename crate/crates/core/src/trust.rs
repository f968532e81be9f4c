//! Range-consistency trust.
//!
//! Each UAV checks every neighbor's reported position against the range it
//! measured to that neighbor. The normalized mismatch goes through a Gaussian
//! kernel, is smoothed with an exponential moving average, and neighbors whose
//! smoothed trust drops below `s_min` are flagged and get zero influence.
//! Ledgers are strictly per-UAV.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{UavId, Vec3};

/// A measured inter-UAV range and its standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeObservation {
    d_hat: f64,
    sigma_d: f64,
}

impl RangeObservation {
    pub fn new(d_hat: f64, sigma_d: f64) -> Result<Self> {
        if !(d_hat.is_finite() && d_hat >= 0.0) {
            return Err(Error::param("d_hat", format!("must be finite and >= 0, got {d_hat}")));
        }
        if !(sigma_d.is_finite() && sigma_d > 0.0) {
            return Err(Error::param("sigma_d", format!("must be finite and > 0, got {sigma_d}")));
        }
        Ok(Self { d_hat, sigma_d })
    }

    pub fn d_hat(&self) -> f64 {
        self.d_hat
    }

    pub fn sigma_d(&self) -> f64 {
        self.sigma_d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustParams {
    /// Kernel width, in units of normalized mismatch.
    pub lambda: f64,
    /// EMA memory; 1 freezes trust, 0 is memoryless.
    pub eta: f64,
    pub s_min: f64,
    /// Smoothed trust assumed for a neighbor seen for the first time.
    pub s_init: f64,
}

impl Default for TrustParams {
    fn default() -> Self {
        Self {
            lambda: 3.0,
            eta: 0.7,
            s_min: 0.2,
            s_init: 0.5,
        }
    }
}

impl TrustParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::param("lambda", "must be positive and finite"));
        }
        for (name, v) in [("eta", self.eta), ("s_min", self.s_min), ("s_init", self.s_init)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// `| ||p_ref - p_j|| - d_hat | / sigma_d`
pub fn range_mismatch(p_ref: Vec3, p_j: Vec3, obs: &RangeObservation) -> f64 {
    (p_ref.distance(p_j) - obs.d_hat).abs() / obs.sigma_d
}

/// Gaussian kernel `exp(-eps^2 / (2 lambda^2))`.
pub fn instantaneous_trust(epsilon: f64, lambda: f64) -> f64 {
    let r = epsilon / lambda;
    (-0.5 * r * r).exp()
}

pub fn update_trust(prev: f64, inst: f64, eta: f64) -> f64 {
    (eta * prev + (1.0 - eta) * inst).clamp(0.0, 1.0)
}

/// One neighbor as seen by the trust check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborReport {
    pub id: UavId,
    pub position: Vec3,
    pub obs: RangeObservation,
    /// Link quality in `[0, 1]`.
    pub quality: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrustLedger {
    smoothed: BTreeMap<UavId, f64>,
    flagged: BTreeSet<UavId>,
}

impl TrustLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn smoothed(&self) -> &BTreeMap<UavId, f64> {
        &self.smoothed
    }

    pub fn trust_of(&self, id: UavId) -> Option<f64> {
        self.smoothed.get(&id).copied()
    }

    pub fn flagged(&self) -> &BTreeSet<UavId> {
        &self.flagged
    }

    pub fn is_flagged(&self, id: UavId) -> bool {
        self.flagged.contains(&id)
    }

    /// Scores every report against `p_ref`, updates smoothed trust, rebuilds
    /// the flagged set from this epoch's reports and returns the influence
    /// weights `q * s~` (zero when flagged).
    ///
    /// Report ids are expected to be unique. Neighbors absent from `reports`
    /// keep their smoothed trust untouched.
    pub fn evaluate(
        &mut self,
        p_ref: Vec3,
        reports: &[NeighborReport],
        params: &TrustParams,
    ) -> BTreeMap<UavId, f64> {
        debug_assert!(unique_ids(reports));
        self.flagged.clear();
        for r in reports {
            let eps = range_mismatch(p_ref, r.position, &r.obs);
            let inst = instantaneous_trust(eps, params.lambda);
            let prev = self.smoothed.get(&r.id).copied().unwrap_or(params.s_init);
            let s = update_trust(prev, inst, params.eta);
            self.smoothed.insert(r.id, s);
            if s < params.s_min {
                self.flagged.insert(r.id);
            }
        }
        self.weights(reports, params)
    }

    /// Weights when no reference position exists to run the consistency
    /// check: smoothed trust is left as is and flags follow the stored values.
    pub fn evaluate_without_reference(
        &mut self,
        reports: &[NeighborReport],
        params: &TrustParams,
    ) -> BTreeMap<UavId, f64> {
        self.flagged = reports
            .iter()
            .filter(|r| self.smoothed.get(&r.id).copied().unwrap_or(params.s_init) < params.s_min)
            .map(|r| r.id)
            .collect();
        self.weights(reports, params)
    }

    fn weights(&self, reports: &[NeighborReport], params: &TrustParams) -> BTreeMap<UavId, f64> {
        reports
            .iter()
            .map(|r| {
                let w = if self.flagged.contains(&r.id) {
                    0.0
                } else {
                    let s = self.smoothed.get(&r.id).copied().unwrap_or(params.s_init);
                    r.quality * s
                };
                (r.id, w)
            })
            .collect()
    }
}

fn unique_ids(reports: &[NeighborReport]) -> bool {
    let ids: BTreeSet<_> = reports.iter().map(|r| r.id).collect();
    ids.len() == reports.len()
}

/// Functional form of [`TrustLedger::evaluate`].
pub fn evaluate_neighbors(
    p_ref: Vec3,
    reports: &[NeighborReport],
    ledger: &TrustLedger,
    params: &TrustParams,
) -> (BTreeMap<UavId, f64>, TrustLedger) {
    let mut next = ledger.clone();
    let w = next.evaluate(p_ref, reports, params);
    (w, next)
}
