use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{make_cov_diag, Cov3, StateSummary, UavId, Vec3};
use crate::link::{LinkObservables, NeighborMessage};
use crate::recovery::{PipelineParams, PriorCase, UavPipelineState};
use crate::trust::RangeObservation;

use super::config::SwarmConfig;
use super::metrics::EpochMetrics;

/// Floor on any std used to build a reported covariance or range sigma (m).
pub const MIN_STD: f64 = 0.01;

/// Independent random stream per UAV and purpose, so that changing one
/// consumer (e.g. trust on/off) never shifts the draws seen by another.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    NoiseScale = 2,
    Motion = 3,
    Sensing = 4,
    Loss = 5,
    Range = 6,
    Spoof = 7,
    Roles = 8,
    Cohort = 9,
}

/// Stream owner for swarm-wide draws.
pub const SWARM_STREAM: u32 = u32::MAX;

pub fn stream(seed: u64, owner: u32, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((owner as u64) << 8) | purpose as u64);
    rng
}

fn normal3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

fn reflect(mut v: f64, lo: f64, hi: f64) -> f64 {
    while v < lo || v > hi {
        if v > hi {
            v = 2.0 * hi - v;
        }
        if v < lo {
            v = 2.0 * lo - v;
        }
    }
    v
}

/// Adds `step` to `p` and reflects each axis back into the box.
pub fn apply_step(p: Vec3, step: Vec3, min: Vec3, max: Vec3) -> Vec3 {
    let q = p + step;
    Vec3::new(
        reflect(q.x, min.x, max.x),
        reflect(q.y, min.y, max.y),
        reflect(q.z, min.z, max.z),
    )
}

/// Reflective random-walk step with per-axis std `step_scale`.
pub fn step_motion<R: Rng + ?Sized>(p: Vec3, step_scale: f64, min: Vec3, max: Vec3, rng: &mut R) -> Vec3 {
    apply_step(p, normal3(rng).scale(step_scale), min, max)
}

/// Static sensing characteristics of one UAV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorProfile {
    pub horizontal_std: f64,
    /// Member of the cold-start cohort (no fix during cold start).
    pub cold_start_cohort: bool,
}

/// Produces a local fix for one UAV. The three normal draws are always
/// consumed so the stream stays aligned whether or not the fix is missing.
pub fn sense_local<R: Rng + ?Sized>(
    truth: Vec3,
    uav: UavId,
    profile: &SensorProfile,
    config: &SwarmConfig,
    epoch: usize,
    lost: bool,
    rng: &mut R,
) -> Result<StateSummary> {
    let z = normal3(rng);
    let cold = epoch < config.cold_start_epochs;
    if lost || (cold && profile.cold_start_cohort) {
        return Ok(StateSummary::missing(uav, epoch as u64));
    }
    let factor = if cold { config.cold_start_noise_factor } else { 1.0 };
    let h = profile.horizontal_std * factor;
    let v = h * config.vertical_factor;
    let noise = Vec3::new(z.x * h, z.y * h, z.z * v);
    let (hr, vr) = (h.max(MIN_STD), v.max(MIN_STD));
    Ok(StateSummary::present(
        uav,
        epoch as u64,
        truth + noise,
        make_cov_diag(hr * hr, hr * hr, vr * vr)?,
    ))
}

/// Range observation from a standard-normal draw `z`.
pub fn range_from_draw(p_i: Vec3, p_j: Vec3, config: &SwarmConfig, z: f64) -> Result<RangeObservation> {
    let d = p_i.distance(p_j);
    let sigma = config.range_noise_base + config.range_noise_slope * d;
    RangeObservation::new((d + sigma * z).max(0.0), sigma.max(MIN_STD))
}

pub fn measure_range<R: Rng + ?Sized>(
    p_i: Vec3,
    p_j: Vec3,
    config: &SwarmConfig,
    rng: &mut R,
) -> Result<RangeObservation> {
    range_from_draw(p_i, p_j, config, rng.sample(StandardNormal))
}

/// Linear falloff `1 - d / radius`, used for both RSSI score and PRR.
pub fn link_observables_from_distance(d: f64, comm_radius: f64) -> LinkObservables {
    let q = (1.0 - d / comm_radius).clamp(0.0, 1.0);
    LinkObservables { rssi_score: q, prr: q }
}

/// Offset with uniform direction and magnitude in `[spoof_min, spoof_max]`.
pub fn draw_spoof_offset<R: Rng + ?Sized>(config: &SwarmConfig, rng: &mut R) -> Vec3 {
    let dir = loop {
        let v = normal3(rng);
        let n = v.norm();
        if n > 1e-9 {
            break v.scale(1.0 / n);
        }
    };
    let mag = if config.spoof_max > config.spoof_min {
        rng.random_range(config.spoof_min..=config.spoof_max)
    } else {
        config.spoof_min
    };
    dir.scale(mag)
}

/// A spoofed broadcast position: the true position plus a fresh offset.
pub fn spoof_report<R: Rng + ?Sized>(truth: Vec3, config: &SwarmConfig, rng: &mut R) -> Vec3 {
    truth + draw_spoof_offset(config, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Honest,
    Malicious,
}

/// Per-UAV truth, local and refined positions at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seed: u64,
    pub epoch: usize,
    pub uavs: Vec<SnapshotEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub id: UavId,
    pub role: Role,
    pub truth: Vec3,
    pub local: Option<Vec3>,
    pub refined: Vec3,
}

struct Streams {
    motion: Vec<ChaCha8Rng>,
    sensing: Vec<ChaCha8Rng>,
    loss: Vec<ChaCha8Rng>,
    range: Vec<ChaCha8Rng>,
}

/// A seeded swarm advanced one epoch at a time.
pub struct Simulation {
    config: SwarmConfig,
    params: PipelineParams,
    epoch: usize,
    truth: Vec<Vec3>,
    roles: Vec<Role>,
    profiles: Vec<SensorProfile>,
    spoof_offsets: Vec<Vec3>,
    pipelines: Vec<UavPipelineState>,
    /// Last local fix per UAV, the no-cooperation baseline during outages.
    baseline: Vec<Option<Vec3>>,
    locals: Vec<StateSummary>,
    streams: Streams,
}

fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

impl Simulation {
    pub fn new(config: SwarmConfig) -> Result<Self> {
        config.validate()?;
        let params = config.pipeline_params()?;
        let n = config.n_uavs;
        let seed = config.seed;
        let (min, max) = (config.bounds_min(), config.bounds_max());

        let truth = (0..n)
            .map(|i| {
                let mut r = stream(seed, i as u32, Purpose::Init);
                Vec3::new(
                    r.random_range(min.x..=max.x),
                    r.random_range(min.y..=max.y),
                    r.random_range(min.z..=max.z),
                )
            })
            .collect();

        let mut roles = vec![Role::Honest; n];
        let order = shuffled_indices(n, &mut stream(seed, SWARM_STREAM, Purpose::Roles));
        for &i in order.iter().take(config.n_malicious()) {
            roles[i] = Role::Malicious;
        }
        let mut cohort = vec![false; n];
        let order = shuffled_indices(n, &mut stream(seed, SWARM_STREAM, Purpose::Cohort));
        for &i in order.iter().take(config.cohort_size) {
            cohort[i] = true;
        }

        let (lo, hi) = (config.noise_std_min, config.noise_std_max);
        let profiles = (0..n)
            .map(|i| {
                let mut r = stream(seed, i as u32, Purpose::NoiseScale);
                let u: f64 = r.random();
                let horizontal_std = if lo > 0.0 && hi > lo {
                    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + u * (hi - lo)
                };
                SensorProfile {
                    horizontal_std,
                    cold_start_cohort: cohort[i],
                }
            })
            .collect();

        let spoof_offsets = (0..n)
            .map(|i| draw_spoof_offset(&config, &mut stream(seed, i as u32, Purpose::Spoof)))
            .collect();

        let per_uav = |p: Purpose| (0..n).map(|i| stream(seed, i as u32, p)).collect::<Vec<_>>();
        let streams = Streams {
            motion: per_uav(Purpose::Motion),
            sensing: per_uav(Purpose::Sensing),
            loss: per_uav(Purpose::Loss),
            range: per_uav(Purpose::Range),
        };

        Ok(Self {
            params,
            epoch: 0,
            truth,
            roles,
            profiles,
            spoof_offsets,
            pipelines: vec![UavPipelineState::new(); n],
            baseline: vec![None; n],
            locals: (0..n).map(|i| StateSummary::missing(UavId(i as u32), 0)).collect(),
            streams,
            config,
        })
    }

    pub fn config(&self) -> &SwarmConfig {
        &self.config
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.n_epochs
    }

    pub fn true_positions(&self) -> &[Vec3] {
        &self.truth
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn profiles(&self) -> &[SensorProfile] {
        &self.profiles
    }

    pub fn spoof_offsets(&self) -> &[Vec3] {
        &self.spoof_offsets
    }

    pub fn pipelines(&self) -> &[UavPipelineState] {
        &self.pipelines
    }

    fn is_honest(&self, i: usize) -> bool {
        self.roles[i] == Role::Honest
    }

    /// What UAV `i` broadcasts this epoch: its fresh fix, else its last
    /// refined state, else nothing. Malicious UAVs always broadcast, with the
    /// position replaced by their true position plus a fixed offset.
    fn broadcast(&self, i: usize) -> Option<(StateSummary, u64)> {
        let id = UavId(i as u32);
        let t = self.epoch as u64;
        let own = match (self.locals[i].fix(), self.pipelines[i].last_refined) {
            (Some(fix), _) => Some((fix.position, fix.covariance, t)),
            (None, Some(r)) => Some((r.position, r.covariance, r.epoch)),
            (None, None) => None,
        };
        match self.roles[i] {
            Role::Honest => own.map(|(p, c, sent)| (StateSummary::present(id, sent, p, c), sent)),
            Role::Malicious => {
                let cov = own.map(|(_, c, _)| c).unwrap_or_else(Cov3::identity);
                let p = self.truth[i] + self.spoof_offsets[i];
                Some((StateSummary::present(id, t, p, cov), t))
            }
        }
    }

    /// Advances the world by one epoch and refines every UAV.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        if self.is_done() {
            return Err(Error::param("epoch", "simulation already finished"));
        }
        let n = self.config.n_uavs;
        let t = self.epoch;
        let (min, max) = (self.config.bounds_min(), self.config.bounds_max());

        for i in 0..n {
            self.truth[i] = step_motion(self.truth[i], self.config.step_scale, min, max, &mut self.streams.motion[i]);
        }

        let mut loss_flags = vec![false; n];
        for i in 0..n {
            let u: f64 = self.streams.loss[i].random();
            let lost = t >= self.config.cold_start_epochs && u < self.config.loss_prob;
            let local = sense_local(
                self.truth[i],
                UavId(i as u32),
                &self.profiles[i],
                &self.config,
                t,
                lost,
                &mut self.streams.sensing[i],
            )?;
            loss_flags[i] = local.is_missing();
            if let Some(p) = local.position() {
                self.baseline[i] = Some(p);
            }
            self.locals[i] = local;
        }

        // One symmetric range per unordered pair; draws are consumed for every
        // pair so connectivity never shifts the stream.
        let mut ranges: Vec<BTreeMap<UavId, RangeObservation>> = vec![BTreeMap::new(); n];
        for i in 0..n {
            for j in i + 1..n {
                let z: f64 = self.streams.range[i].sample(StandardNormal);
                if self.truth[i].distance(self.truth[j]) <= self.config.comm_radius {
                    let obs = range_from_draw(self.truth[i], self.truth[j], &self.config, z)?;
                    ranges[i].insert(UavId(j as u32), obs);
                    ranges[j].insert(UavId(i as u32), obs);
                }
            }
        }

        let outgoing: Vec<Option<(StateSummary, u64)>> = (0..n).map(|i| self.broadcast(i)).collect();

        let mut outcomes = Vec::with_capacity(n);
        for i in 0..n {
            let inbox: Vec<NeighborMessage> = ranges[i]
                .keys()
                .filter_map(|&j| {
                    let (state, sent_epoch) = outgoing[j.0 as usize]?;
                    let d = self.truth[i].distance(self.truth[j.0 as usize]);
                    Some(NeighborMessage {
                        sender: j,
                        state,
                        sent_epoch,
                        link: link_observables_from_distance(d, self.config.comm_radius),
                    })
                })
                .collect();
            let local = self.locals[i];
            outcomes.push(self.pipelines[i].refine_epoch(&local, &inbox, &ranges[i], &self.params)?);
        }

        let center = self.params.fallback_prior.position;
        let local_errors: Vec<f64> = (0..n)
            .map(|i| self.baseline[i].unwrap_or(center).distance(self.truth[i]))
            .collect();
        let refined_errors: Vec<f64> = (0..n)
            .map(|i| outcomes[i].refined.position.distance(self.truth[i]))
            .collect();
        let honest: Vec<usize> = (0..n).filter(|&i| self.is_honest(i)).collect();
        let mean = |v: &[f64]| honest.iter().map(|&i| v[i]).sum::<f64>() / honest.len() as f64;

        let metrics = EpochMetrics {
            epoch: t,
            mean_local_error_honest: mean(&local_errors),
            mean_refined_error_honest: mean(&refined_errors),
            flagged_count: honest.iter().map(|&i| outcomes[i].n_flagged).sum(),
            local_errors,
            refined_errors,
            loss_flags,
            fallback_flags: outcomes.iter().map(|o| o.prior_case == PriorCase::Fallback).collect(),
            trust: self.config.export_trust.then(|| {
                self.pipelines
                    .iter()
                    .map(|p| p.trust_ledger.smoothed().clone())
                    .collect()
            }),
        };
        self.epoch += 1;
        Ok(metrics)
    }

    /// State after the most recently completed epoch.
    pub fn snapshot(&self) -> Snapshot {
        let uavs = (0..self.config.n_uavs)
            .map(|i| SnapshotEntry {
                id: UavId(i as u32),
                role: self.roles[i],
                truth: self.truth[i],
                local: self.locals[i].position(),
                refined: self.pipelines[i]
                    .last_refined
                    .map(|r| r.position)
                    .unwrap_or(self.params.fallback_prior.position),
            })
            .collect();
        Snapshot {
            seed: self.config.seed,
            epoch: self.epoch.saturating_sub(1),
            uavs,
        }
    }
}

/// Runs every epoch of a configured experiment.
pub fn run_simulation(config: &SwarmConfig) -> Result<Vec<EpochMetrics>> {
    Ok(run_simulation_with_snapshot(config, None)?.0)
}

/// Like [`run_simulation`], also capturing a snapshot after `snapshot_epoch`.
pub fn run_simulation_with_snapshot(
    config: &SwarmConfig,
    snapshot_epoch: Option<usize>,
) -> Result<(Vec<EpochMetrics>, Option<Snapshot>)> {
    let mut sim = Simulation::new(config.clone())?;
    let mut out = Vec::with_capacity(config.n_epochs);
    let mut snap = None;
    while !sim.is_done() {
        let e = sim.epoch();
        out.push(sim.run_epoch()?);
        if snapshot_epoch == Some(e) {
            snap = Some(sim.snapshot());
        }
    }
    Ok((out, snap))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LO: Vec3 = Vec3::ZERO;
    const HI: Vec3 = Vec3::new(50.0, 50.0, 50.0);

    fn profile(std: f64, cohort: bool) -> SensorProfile {
        SensorProfile {
            horizontal_std: std,
            cold_start_cohort: cohort,
        }
    }

    #[test]
    fn reflection_examples() {
        let c = Vec3::new(25.0, 25.0, 25.0);
        assert_eq!(apply_step(c, Vec3::ZERO, LO, HI), c);
        assert_eq!(
            apply_step(Vec3::new(49.0, 25.0, 25.0), Vec3::new(3.0, 0.0, 0.0), LO, HI),
            Vec3::new(48.0, 25.0, 25.0)
        );
        assert_eq!(
            apply_step(Vec3::new(1.0, 25.0, 25.0), Vec3::new(-4.0, 0.0, 0.0), LO, HI),
            Vec3::new(3.0, 25.0, 25.0)
        );
        // Several wall bounces in one step.
        assert_eq!(reflect(125.0, 0.0, 50.0), 25.0);
        assert_eq!(reflect(-120.0, 0.0, 50.0), 20.0);
    }

    #[test]
    fn range_sigma_grows_with_distance() {
        let config = SwarmConfig {
            range_noise_base: 0.1,
            range_noise_slope: 0.02,
            ..SwarmConfig::default()
        };
        let a = Vec3::ZERO;
        let b = Vec3::new(6.0, 8.0, 0.0);
        let obs = range_from_draw(a, b, &config, 0.0).unwrap();
        assert!((obs.sigma_d() - 0.3).abs() < 1e-12);
        assert_eq!(obs.d_hat(), 10.0);
        assert_eq!(range_from_draw(a, b, &config, -1e3).unwrap().d_hat(), 0.0);
    }

    #[test]
    fn noiseless_range_keeps_floor_on_sigma() {
        let config = SwarmConfig {
            range_noise_base: 0.0,
            range_noise_slope: 0.0,
            ..SwarmConfig::default()
        };
        let obs = range_from_draw(Vec3::ZERO, Vec3::new(0.0, 0.0, 7.0), &config, 2.5).unwrap();
        assert_eq!((obs.d_hat(), obs.sigma_d()), (7.0, MIN_STD));
    }

    #[test]
    fn link_falloff() {
        assert_eq!(link_observables_from_distance(0.0, 30.0), LinkObservables { rssi_score: 1.0, prr: 1.0 });
        assert_eq!(link_observables_from_distance(30.0, 30.0).prr, 0.0);
        assert_eq!(link_observables_from_distance(15.0, 30.0).rssi_score, 0.5);
    }

    #[test]
    fn sensing_covariance_and_cases() {
        let config = SwarmConfig::default();
        let truth = Vec3::new(10.0, 20.0, 30.0);
        let mut rng = stream(1, 0, Purpose::Sensing);
        let fix = sense_local(truth, UavId(0), &profile(2.0, false), &config, 10, false, &mut rng).unwrap();
        assert_eq!(fix.fix().unwrap().covariance, Cov3::diag(4.0, 4.0, 16.0).unwrap());

        // Cold start multiplies the std by the configured factor.
        let cold = sense_local(truth, UavId(0), &profile(2.0, false), &config, 0, false, &mut rng).unwrap();
        assert_eq!(cold.fix().unwrap().covariance, Cov3::diag(64.0, 64.0, 256.0).unwrap());

        let cohort = sense_local(truth, UavId(0), &profile(2.0, true), &config, 9, false, &mut rng).unwrap();
        assert!(cohort.is_missing());
        let lost = sense_local(truth, UavId(0), &profile(2.0, false), &config, 12, true, &mut rng).unwrap();
        assert!(lost.is_missing());

        let exact = sense_local(truth, UavId(0), &profile(0.0, false), &config, 12, false, &mut rng).unwrap();
        let est = exact.fix().unwrap();
        assert_eq!(est.position, truth);
        assert!((est.covariance.trace() - 3.0 * MIN_STD * MIN_STD).abs() < 1e-15);
    }

    #[test]
    fn missing_fix_consumes_same_draws() {
        let config = SwarmConfig::default();
        let mut a = stream(3, 2, Purpose::Sensing);
        let mut b = stream(3, 2, Purpose::Sensing);
        sense_local(Vec3::ZERO, UavId(2), &profile(1.0, false), &config, 12, true, &mut a).unwrap();
        sense_local(Vec3::ZERO, UavId(2), &profile(1.0, false), &config, 12, false, &mut b).unwrap();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn spoof_offset_magnitude_in_band() {
        let config = SwarmConfig::default();
        let mut rng = stream(9, 0, Purpose::Spoof);
        for _ in 0..200 {
            let m = draw_spoof_offset(&config, &mut rng).norm();
            assert!((15.0 - 1e-9..=30.0 + 1e-9).contains(&m), "{m}");
        }
        let fixed = SwarmConfig {
            spoof_min: 20.0,
            spoof_max: 20.0,
            ..config.clone()
        };
        let truth = Vec3::new(5.0, 5.0, 5.0);
        assert!((spoof_report(truth, &fixed, &mut rng).distance(truth) - 20.0).abs() < 1e-9);
        let none = SwarmConfig {
            spoof_min: 0.0,
            spoof_max: 0.0,
            ..config
        };
        assert_eq!(spoof_report(truth, &none, &mut rng), truth);
    }

    #[test]
    fn streams_are_independent_per_owner_and_purpose() {
        let x: u64 = stream(1, 0, Purpose::Motion).random();
        assert_ne!(x, stream(1, 1, Purpose::Motion).random::<u64>());
        assert_ne!(x, stream(1, 0, Purpose::Sensing).random::<u64>());
        assert_eq!(x, stream(1, 0, Purpose::Motion).random::<u64>());
    }
}
