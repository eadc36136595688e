//! `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected so a
//! typo does not silently fall back to a default.

use std::path::Path;

use thiserror::Error;

use crate::dfa::{Thresholds, DEFAULT_WINDOW_LEN};
use crate::filter::NoiseConfig;
use crate::imu::{DEFAULT_BATCH_SIZE, DEFAULT_SAMPLE_INTERVAL_S};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything the fusion pipeline needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub noise: NoiseConfig,
    pub batch_size: usize,
    pub imu_dt_s: f64,
    pub stale_fix_horizon_s: f64,
    pub window_len: usize,
    pub thresholds: Thresholds,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            batch_size: DEFAULT_BATCH_SIZE,
            imu_dt_s: DEFAULT_SAMPLE_INTERVAL_S,
            stale_fix_horizon_s: 5.0,
            window_len: DEFAULT_WINDOW_LEN,
            thresholds: Thresholds::default(),
        }
    }
}

impl FusionConfig {
    /// Seconds per filter cycle.
    pub fn cycle_period_s(&self) -> f64 {
        self.batch_size as f64 * self.imu_dt_s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.noise.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be at least 1".into()));
        }
        if self.window_len == 0 {
            return Err(ConfigError::Invalid("window_len must be at least 1".into()));
        }
        if !(self.imu_dt_s > 0.0) {
            return Err(ConfigError::Invalid("imu_dt_s must be positive".into()));
        }
        if !(self.stale_fix_horizon_s > 0.0) {
            return Err(ConfigError::Invalid("stale_fix_horizon_s must be positive".into()));
        }
        Ok(())
    }
}

/// Simulated sensor noise, used by `simulate` and the game service.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimNoise {
    pub gps_sigma_m: f64,
    pub accel_sigma: f64,
    pub gps_period_s: f64,
}

impl Default for SimNoise {
    fn default() -> Self {
        Self {
            gps_sigma_m: 2.5,
            accel_sigma: 0.05,
            gps_period_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameConfig {
    pub hit_threshold_m: f64,
    pub decay_constant: f64,
    pub arena_radius_m: f64,
    pub item_count: usize,
    pub min_item_spacing_m: f64,
    pub max_accel: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            hit_threshold_m: 2.0,
            decay_constant: 5.0,
            arena_radius_m: 100.0,
            item_count: 8,
            min_item_spacing_m: 10.0,
            max_accel: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Config {
    pub fusion: FusionConfig,
    pub sim: SimNoise,
    pub game: GameConfig,
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |reason: String| ConfigError::BadValue {
                line: line_no,
                key: key.to_string(),
                reason,
            };
            let num = || value.parse::<f64>().map_err(|e| bad(e.to_string()));
            let int = || value.parse::<usize>().map_err(|e| bad(e.to_string()));
            match key {
                "sigma_gps_m" => cfg.fusion.noise.sigma_gps_m = num()?,
                "sigma_accel" => cfg.fusion.noise.sigma_accel = num()?,
                "p0_pos_m" => cfg.fusion.noise.p0_pos_m = num()?,
                "p0_vel" => cfg.fusion.noise.p0_vel = num()?,
                "batch_size" => cfg.fusion.batch_size = int()?,
                "imu_dt_s" => cfg.fusion.imu_dt_s = num()?,
                "stale_fix_horizon_s" => cfg.fusion.stale_fix_horizon_s = num()?,
                "window_len" => cfg.fusion.window_len = int()?,
                "thresholds" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    let [low, high] = parts[..] else {
                        return Err(bad("expected `low, high`".into()));
                    };
                    let low: f64 = low.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
                    let high: f64 = high.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
                    cfg.fusion.thresholds = Thresholds::new(low, high).map_err(|e| bad(e.to_string()))?;
                }
                "sim_gps_sigma_m" => cfg.sim.gps_sigma_m = num()?,
                "sim_accel_sigma" => cfg.sim.accel_sigma = num()?,
                "gps_period_s" => cfg.sim.gps_period_s = num()?,
                "hit_threshold_m" => cfg.game.hit_threshold_m = num()?,
                "decay_constant" => cfg.game.decay_constant = num()?,
                "arena_radius_m" => cfg.game.arena_radius_m = num()?,
                "item_count" => cfg.game.item_count = int()?,
                "min_item_spacing_m" => cfg.game.min_item_spacing_m = num()?,
                "max_accel" => cfg.game.max_accel = num()?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line: line_no,
                        key: key.to_string(),
                    })
                }
            }
        }
        cfg.fusion.validate()?;
        if !(cfg.sim.gps_sigma_m >= 0.0 && cfg.sim.accel_sigma >= 0.0 && cfg.sim.gps_period_s > 0.0) {
            return Err(ConfigError::Invalid("simulator sigmas must be >= 0 and gps_period_s > 0".into()));
        }
        Ok(cfg)
    }
}
