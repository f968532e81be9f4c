//! Link quality, neighbor budget and staleness filtering.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{StateSummary, UavId};

/// Normalized link observables, both in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkObservables {
    pub rssi_score: f64,
    pub prr: f64,
}

impl LinkObservables {
    pub fn new(rssi_score: f64, prr: f64) -> Result<Self> {
        check_unit("rssi_score", rssi_score)?;
        check_unit("prr", prr)?;
        Ok(Self { rssi_score, prr })
    }
}

/// A state summary received from a neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborMessage {
    pub sender: UavId,
    pub state: StateSummary,
    pub sent_epoch: u64,
    pub link: LinkObservables,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Exponent on the RSSI factor; `1 - alpha` goes to PRR.
    pub alpha: f64,
    /// Maximum number of neighbors fused per epoch.
    pub budget: usize,
    pub q_min: f64,
    /// Maximum message age in epochs.
    pub max_age: u64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            budget: 5,
            q_min: 0.05,
            max_age: 1,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        check_unit("alpha", self.alpha)?;
        check_unit("q_min", self.q_min)?;
        if self.budget == 0 {
            return Err(Error::param("budget", "must be at least 1"));
        }
        Ok(())
    }
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(name, format!("must lie in [0, 1], got {v}")))
    }
}

/// `rssi^alpha * prr^(1 - alpha)`, with `0^0 = 1`.
pub fn link_quality(obs: &LinkObservables, alpha: f64) -> Result<f64> {
    check_unit("alpha", alpha)?;
    // f64::powf already yields 0^0 = 1.
    let q = obs.rssi_score.powf(alpha) * obs.prr.powf(1.0 - alpha);
    Ok(q.clamp(0.0, 1.0))
}

/// Keeps messages with `now - sent_epoch <= max_age`, preserving order.
/// Messages stamped in the future are kept as age zero.
pub fn filter_stale(messages: &[NeighborMessage], now: u64, max_age: u64) -> Vec<NeighborMessage> {
    messages
        .iter()
        .filter(|m| now.saturating_sub(m.sent_epoch) <= max_age)
        .copied()
        .collect()
}

/// A message paired with its computed link quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredMessage {
    pub message: NeighborMessage,
    pub quality: f64,
}

/// Drops links below `q_min` and keeps the `budget` best, sorted by
/// descending quality with ties going to the smaller sender id.
pub fn select_neighbors(messages: &[NeighborMessage], params: &LinkParams) -> Result<Vec<ScoredMessage>> {
    params.validate()?;
    let mut scored = Vec::with_capacity(messages.len());
    for m in messages {
        let quality = link_quality(&m.link, params.alpha)?;
        if quality >= params.q_min {
            scored.push(ScoredMessage {
                message: *m,
                quality,
            });
        }
    }
    scored.sort_by(by_quality_then_id);
    scored.truncate(params.budget);
    Ok(scored)
}

fn by_quality_then_id(a: &ScoredMessage, b: &ScoredMessage) -> Ordering {
    b.quality
        .total_cmp(&a.quality)
        .then_with(|| a.message.sender.cmp(&b.message.sender))
        .then_with(|| b.message.sent_epoch.cmp(&a.message.sent_epoch))
}
