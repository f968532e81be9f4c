//! Seeded swarm simulation: reflective random-walk motion, heterogeneous
//! local sensing with cold start and intermittent loss, distance-dependent
//! ranging, spoofing adversaries, and honest-UAV error metrics.

mod config;
mod metrics;
mod world;

pub use config::SwarmConfig;
pub use metrics::{
    aggregate_runs, mean, percentile, recovery_epoch, Band, EpochMetrics, EpochSummary, RecoveryCriterion,
    RecoveryStats, RunSummary, WindowSummary,
};
pub use world::{
    apply_step, draw_spoof_offset, link_observables_from_distance, measure_range, range_from_draw,
    run_simulation, run_simulation_with_snapshot, sense_local, spoof_report, step_motion, stream, Purpose, Role,
    SensorProfile, Simulation, Snapshot, SnapshotEntry, MIN_STD, SWARM_STREAM,
};
