//! Decentralized, uncertainty-aware 3D position refinement for UAV swarms.
//!
//! Each UAV fuses its own local fix (as a prior weighted by its covariance)
//! with range constraints to neighbors, weighted by link quality and a
//! range-consistency trust score. Weak or missing fixes are inflated or
//! replaced so that trusted neighbors can bootstrap the estimate.
//!
//! Module map:
//! - [`geometry`]: vectors, covariances, state summaries
//! - [`link`]: link quality, neighbor budget, staleness
//! - [`trust`]: range-consistency trust and influence weights
//! - [`refine`]: damped Gauss-Newton fusion
//! - [`recovery`]: per-UAV epoch pipeline with cold-start / loss handling
//! - [`sim`]: seeded swarm simulator and metrics

pub mod error;
pub mod geometry;
pub mod link;
pub mod recovery;
pub mod refine;
pub mod sim;
pub mod trust;

pub use error::{Error, Result};
pub use geometry::{cov_trace, inflate_cov, make_cov_diag, Cov3, Estimate, Mat3, RefinedState, StateSummary, UavId, Vec3};
pub use link::{filter_stale, link_quality, select_neighbors, LinkObservables, LinkParams, NeighborMessage};
pub use recovery::{prepare_prior, PipelineParams, PriorCase, RecoveryParams, UavPipelineState};
pub use refine::{gauss_newton_step, refine_position, residual, NeighborConstraint, SolverParams};
pub use sim::{run_simulation, EpochMetrics, SwarmConfig};
pub use trust::{
    evaluate_neighbors, instantaneous_trust, range_mismatch, update_trust, NeighborReport, RangeObservation,
    TrustLedger, TrustParams,
};
