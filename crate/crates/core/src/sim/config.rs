use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::link::LinkParams;
use crate::recovery::{broad_prior, PipelineParams, RecoveryParams};
use crate::refine::SolverParams;
use crate::trust::TrustParams;

/// Full description of one simulated experiment.
///
/// The config is flat on the outside: every field, including the embedded
/// parameter groups, has a unique key usable in config files and `--set`
/// overrides (see [`SwarmConfig::FIELDS`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub n_uavs: usize,
    pub n_epochs: usize,
    /// Arena extents; the box spans `[0, bounds_x] x [0, bounds_y] x [0, bounds_z]`.
    pub bounds_x: f64,
    pub bounds_y: f64,
    pub bounds_z: f64,
    /// Random-walk step std per axis (m / epoch).
    pub step_scale: f64,
    pub comm_radius: f64,
    /// Per-UAV horizontal noise std is log-uniform in `[noise_std_min, noise_std_max]`.
    pub noise_std_min: f64,
    pub noise_std_max: f64,
    pub vertical_factor: f64,
    pub cold_start_epochs: usize,
    /// Std multiplier applied to fixes of non-cohort UAVs during cold start.
    pub cold_start_noise_factor: f64,
    pub loss_prob: f64,
    pub cohort_size: usize,
    pub malicious_fraction: f64,
    pub spoof_min: f64,
    pub spoof_max: f64,
    pub range_noise_base: f64,
    pub range_noise_slope: f64,
    pub seed: u64,
    pub trust_enabled: bool,
    /// Include per-UAV smoothed trust in epoch metrics.
    pub export_trust: bool,
    pub link: LinkParams,
    pub trust: TrustParams,
    pub recovery: RecoveryParams,
    pub solver: SolverParams,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            n_uavs: 10,
            n_epochs: 30,
            bounds_x: 50.0,
            bounds_y: 50.0,
            bounds_z: 50.0,
            step_scale: 1.0,
            comm_radius: 30.0,
            noise_std_min: 0.5,
            noise_std_max: 4.0,
            vertical_factor: 2.0,
            cold_start_epochs: 10,
            cold_start_noise_factor: 4.0,
            loss_prob: 0.05,
            cohort_size: 4,
            malicious_fraction: 0.2,
            spoof_min: 15.0,
            spoof_max: 30.0,
            range_noise_base: 1.0,
            range_noise_slope: 0.05,
            seed: 570687052,
            trust_enabled: true,
            export_trust: false,
            link: LinkParams::default(),
            trust: TrustParams::default(),
            recovery: RecoveryParams::default(),
            solver: SolverParams::default(),
        }
    }
}

macro_rules! config_fields {
    ($( $key:literal => $($field:ident).+ : $ty:ty, $doc:literal; )*) => {
        impl SwarmConfig {
            /// Every config key with a one-line description.
            pub const FIELDS: &'static [(&'static str, &'static str)] = &[$(($key, $doc)),*];

            /// Sets one field from its textual value.
            pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
                let raw = raw.trim();
                match key {
                    $($key => {
                        self.$($field).+ = raw.parse::<$ty>().map_err(|e| {
                            Error::Config(vec![format!("{}: cannot parse {:?}: {}", $key, raw, e)])
                        })?;
                    })*
                    _ => return Err(Error::Config(vec![format!("unknown config field `{key}`")])),
                }
                Ok(())
            }

            /// `(key, value)` pairs in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self.$($field).+.to_string())),*]
            }
        }
    };
}

config_fields! {
    "n_uavs" => n_uavs: usize, "number of UAVs";
    "n_epochs" => n_epochs: usize, "number of epochs";
    "bounds_x" => bounds_x: f64, "arena extent along x (m)";
    "bounds_y" => bounds_y: f64, "arena extent along y (m)";
    "bounds_z" => bounds_z: f64, "arena extent along z (m)";
    "step_scale" => step_scale: f64, "random-walk step std per axis (m)";
    "comm_radius" => comm_radius: f64, "communication radius (m)";
    "noise_std_min" => noise_std_min: f64, "lower bound of per-UAV horizontal noise std (m)";
    "noise_std_max" => noise_std_max: f64, "upper bound of per-UAV horizontal noise std (m)";
    "vertical_factor" => vertical_factor: f64, "vertical / horizontal noise std ratio";
    "cold_start_epochs" => cold_start_epochs: usize, "length of the cold-start window (epochs)";
    "cold_start_noise_factor" => cold_start_noise_factor: f64, "noise std multiplier during cold start";
    "loss_prob" => loss_prob: f64, "per-epoch probability of losing the local fix after cold start";
    "cohort_size" => cohort_size: usize, "UAVs with no local fix during cold start";
    "malicious_fraction" => malicious_fraction: f64, "fraction of UAVs broadcasting spoofed positions";
    "spoof_min" => spoof_min: f64, "minimum spoof offset (m)";
    "spoof_max" => spoof_max: f64, "maximum spoof offset (m)";
    "range_noise_base" => range_noise_base: f64, "ranging noise std at zero distance (m)";
    "range_noise_slope" => range_noise_slope: f64, "ranging noise std growth per meter";
    "seed" => seed: u64, "base random seed";
    "trust_enabled" => trust_enabled: bool, "use range-consistency trust";
    "export_trust" => export_trust: bool, "record smoothed trust in epoch metrics";
    "alpha" => link.alpha: f64, "RSSI exponent in the link-quality score";
    "budget" => link.budget: usize, "neighbor budget";
    "q_min" => link.q_min: f64, "minimum link quality";
    "max_age" => link.max_age: u64, "maximum message age (epochs)";
    "lambda" => trust.lambda: f64, "trust kernel width";
    "eta" => trust.eta: f64, "trust EMA memory";
    "s_min" => trust.s_min: f64, "flagging threshold on smoothed trust";
    "s_init" => trust.s_init: f64, "smoothed trust at first contact";
    "sigma_max" => recovery.sigma_max: f64, "low-confidence threshold on covariance trace (m^2)";
    "gamma_boot" => recovery.gamma_boot: f64, "low-confidence covariance inflation";
    "gamma_loss" => recovery.gamma_loss: f64, "per-epoch covariance inflation during loss";
    "max_iters" => solver.max_iters: usize, "Gauss-Newton iteration limit";
    "damping" => solver.damping: f64, "normal-matrix damping";
    "step_tol" => solver.step_tol: f64, "convergence threshold on the step norm (m)";
    "min_dist" => solver.min_dist: f64, "linearization distance floor (m)";
}

impl SwarmConfig {
    /// Applies a flat `key = value` TOML document on top of `self`.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![format!("config file: {}", e.message())]))?;
        let mut errors = Vec::new();
        for (key, value) in &table {
            let raw = match value {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(_) | toml::Value::Float(_) | toml::Value::Boolean(_) => value.to_string(),
                _ => {
                    errors.push(format!("{key}: expected a scalar value"));
                    continue;
                }
            };
            if let Err(Error::Config(mut e)) = self.set(key, &raw) {
                errors.append(&mut e);
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// The effective config as `# key = value` comment lines.
    pub fn comment_header(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        need(self.n_uavs >= 1, "n_uavs: must be at least 1");
        need(pos(self.bounds_x), "bounds_x: must be positive");
        need(pos(self.bounds_y), "bounds_y: must be positive");
        need(pos(self.bounds_z), "bounds_z: must be positive");
        need(pos(self.step_scale), "step_scale: must be positive");
        need(pos(self.comm_radius), "comm_radius: must be positive");
        need(nonneg(self.noise_std_min), "noise_std_min: must be >= 0");
        need(
            nonneg(self.noise_std_max) && self.noise_std_max >= self.noise_std_min,
            "noise_std_max: must be >= noise_std_min",
        );
        need(self.vertical_factor.is_finite() && self.vertical_factor >= 1.0, "vertical_factor: must be >= 1");
        need(self.cold_start_epochs <= self.n_epochs, "cold_start_epochs: must not exceed n_epochs");
        need(
            self.cold_start_noise_factor.is_finite() && self.cold_start_noise_factor >= 1.0,
            "cold_start_noise_factor: must be >= 1",
        );
        need(unit(self.loss_prob), "loss_prob: must lie in [0, 1]");
        need(self.cohort_size <= self.n_uavs, "cohort_size: must not exceed n_uavs");
        need(unit(self.malicious_fraction), "malicious_fraction: must lie in [0, 1]");
        need(
            self.n_malicious() < self.n_uavs,
            "malicious_fraction: leaves no honest UAV",
        );
        need(nonneg(self.spoof_min), "spoof_min: must be >= 0");
        need(
            nonneg(self.spoof_max) && self.spoof_max >= self.spoof_min,
            "spoof_max: must be >= spoof_min",
        );
        need(nonneg(self.range_noise_base), "range_noise_base: must be >= 0");
        need(nonneg(self.range_noise_slope), "range_noise_slope: must be >= 0");
        for r in [
            self.link.validate(),
            self.trust.validate(),
            self.recovery.validate(),
            self.solver.validate(),
        ] {
            if let Err(Error::InvalidParameter { name, reason }) = r {
                errs.push(format!("{name}: {reason}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn bounds_min(&self) -> Vec3 {
        Vec3::ZERO
    }

    pub fn bounds_max(&self) -> Vec3 {
        Vec3::new(self.bounds_x, self.bounds_y, self.bounds_z)
    }

    pub fn n_malicious(&self) -> usize {
        (self.malicious_fraction * self.n_uavs as f64).round() as usize
    }

    pub fn pipeline_params(&self) -> Result<PipelineParams> {
        Ok(PipelineParams {
            link: self.link,
            trust: self.trust,
            recovery: self.recovery,
            solver: self.solver,
            trust_enabled: self.trust_enabled,
            fallback_prior: broad_prior(self.bounds_min(), self.bounds_max())?,
        })
    }
}
