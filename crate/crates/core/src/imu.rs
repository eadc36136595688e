//! Accelerometer dead reckoning over short sample batches.
//!
//! Samples are assumed gravity-compensated and already expressed in the
//! local navigation (ENU) frame; no orientation handling happens here.
//! Integration is semi-implicit Euler: within each step the velocity is
//! advanced first and the new velocity moves the position.

use nalgebra::Vector3;
use thiserror::Error;

/// Default number of samples integrated per filter cycle.
pub const DEFAULT_BATCH_SIZE: usize = 4;
/// Default accelerometer sample interval, seconds.
pub const DEFAULT_SAMPLE_INTERVAL_S: f64 = 0.020;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImuError {
    #[error("empty batch")]
    Empty,
    #[error("sample {0} is not strictly after its predecessor")]
    NonMonotonic(usize),
    #[error("sample {0} has a non-finite component")]
    NonFinite(usize),
    #[error("sample interval must be positive, got {0}")]
    BadInterval(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Seconds, same time base as GPS fix timestamps.
    pub t: f64,
    /// Linear acceleration (east, north, up), m/s².
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, ax: f64, ay: f64, az: f64) -> Self {
        Self {
            t,
            accel: Vector3::new(ax, ay, az),
        }
    }
}

/// A run of consecutive samples integrated as one unit. Sample `k` covers
/// the interval `(t[k-1], t[k]]`; the first sample covers `dt_each`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuBatch {
    samples: Vec<ImuSample>,
    dt_each: f64,
}

impl ImuBatch {
    pub fn new(samples: Vec<ImuSample>, dt_each: f64) -> Result<Self, ImuError> {
        if !(dt_each > 0.0 && dt_each.is_finite()) {
            return Err(ImuError::BadInterval(dt_each));
        }
        if samples.is_empty() {
            return Err(ImuError::Empty);
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.accel.iter().all(|a| a.is_finite())) {
                return Err(ImuError::NonFinite(i));
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(ImuError::NonMonotonic(i));
            }
        }
        Ok(Self { samples, dt_each })
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt_each(&self) -> f64 {
        self.dt_each
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Each sample paired with the interval it integrates over.
    pub fn steps(&self) -> impl Iterator<Item = (&ImuSample, f64)> + '_ {
        self.samples.iter().enumerate().map(move |(k, s)| {
            let dt = if k == 0 { self.dt_each } else { s.t - self.samples[k - 1].t };
            (s, dt)
        })
    }
}

/// Position and velocity change accumulated over one or more batches.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Displacement {
    /// (dx, dy, dz), meters.
    pub position: Vector3<f64>,
    /// (dvx, dvy, dvz), m/s.
    pub velocity: Vector3<f64>,
}

impl Displacement {
    pub fn zero() -> Self {
        Self::default()
    }
}

/// `v0 + Σ a_k·dt_k` over the batch.
pub fn integrate_velocity(batch: &ImuBatch, v0: &Vector3<f64>) -> Vector3<f64> {
    batch.steps().fold(*v0, |v, (s, dt)| v + s.accel * dt)
}

/// Semi-implicit double integration starting from velocity `v0`.
pub fn integrate_position(batch: &ImuBatch, v0: &Vector3<f64>) -> Displacement {
    let mut v = *v0;
    let mut p = Vector3::zeros();
    for (s, dt) in batch.steps() {
        v += s.accel * dt;
        p += v * dt;
    }
    Displacement {
        position: p,
        velocity: v - v0,
    }
}

/// Running dead-reckoning state between GPS fixes: the velocity carried
/// through the integration and the displacement since the last reset.
/// Velocity is never re-zeroed by a reset; it integrates every sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OffsetAccumulator {
    velocity: Vector3<f64>,
    offset: Displacement,
    since: f64,
}

impl OffsetAccumulator {
    /// Zeroes the displacement and starts a new accumulation at `since`.
    pub fn reset(&mut self, since: f64) {
        self.offset = Displacement::zero();
        self.since = since;
    }

    pub fn set_velocity(&mut self, v: Vector3<f64>) {
        self.velocity = v;
    }

    /// Integrates `batch`. Samples at or before the reset time still
    /// advance the velocity but add no displacement.
    pub fn accumulate(&mut self, batch: &ImuBatch) {
        for (s, dt) in batch.steps() {
            let dv = s.accel * dt;
            self.velocity += dv;
            if s.t <= self.since {
                continue;
            }
            self.offset.velocity += dv;
            self.offset.position += self.velocity * dt;
        }
    }

    pub fn offset(&self) -> &Displacement {
        &self.offset
    }

    pub fn velocity(&self) -> &Vector3<f64> {
        &self.velocity
    }

    pub fn since(&self) -> f64 {
        self.since
    }
}
