//! Motion-model selection driven by innovation magnitude.
//!
//! Each filter cycle the innovation magnitude is classified into one of
//! three symbols, the automaton maps the symbol to a raw motion model, and a
//! short sliding window averages the raw picks so the active model does not
//! chatter. The smoothed model parameterizes the next prediction.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DfaError {
    #[error("innovation magnitude must be a non-negative number, got {0}")]
    BadMagnitude(f64),
    #[error("thresholds must satisfy 0 <= low < high, got ({0}, {1})")]
    BadThresholds(f64, f64),
    #[error("window length must be at least 1")]
    EmptyWindow,
}

/// Filter divergence sample for one cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnovationRecord {
    pub y: Vector3<f64>,
    pub magnitude: f64,
    pub t: f64,
}

impl InnovationRecord {
    pub fn new(y: Vector3<f64>, t: f64) -> Self {
        Self {
            magnitude: (y.x * y.x + y.y * y.y + y.z * y.z).sqrt(),
            y,
            t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InnovationClass {
    I0,
    I1,
    I2,
}

impl InnovationClass {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for InnovationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "I{}", self.index())
    }
}

/// Class boundaries in meters. A magnitude equal to a boundary belongs to
/// the upper class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    low: f64,
    high: f64,
}

impl Thresholds {
    pub fn new(low: f64, high: f64) -> Result<Self, DfaError> {
        if !(low.is_finite() && high.is_finite() && low >= 0.0 && low < high) {
            return Err(DfaError::BadThresholds(low, high));
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { low: 3.0, high: 7.5 }
    }
}

pub fn classify(magnitude: f64, thresholds: &Thresholds) -> Result<InnovationClass, DfaError> {
    if !(magnitude >= 0.0) {
        return Err(DfaError::BadMagnitude(magnitude));
    }
    Ok(if magnitude < thresholds.low {
        InnovationClass::I0
    } else if magnitude < thresholds.high {
        InnovationClass::I1
    } else {
        InnovationClass::I2
    })
}

/// Automaton state. The model index doubles as the velocity coefficient
/// applied in the prediction step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MotionModel {
    /// Stationary: position is not advanced by velocity.
    P0,
    /// Nominal constant velocity.
    P1,
    /// Doubled velocity, catches up after sudden changes.
    P2,
}

impl MotionModel {
    pub const ALL: [MotionModel; 3] = [MotionModel::P0, MotionModel::P1, MotionModel::P2];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn velocity_coefficient(self) -> f64 {
        f64::from(self.index())
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(usize::from(i)).copied()
    }
}

impl fmt::Display for MotionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.index())
    }
}

use MotionModel::{P0, P1, P2};

/// Transition function, indexed `[current][input class]`.
const TRANSITIONS: [[MotionModel; 3]; 3] = [
    [P0, P1, P2], // from P0
    [P0, P1, P2], // from P1
    [P0, P1, P2], // from P2
];

pub fn transition(current: MotionModel, input: InnovationClass) -> MotionModel {
    TRANSITIONS[current.index() as usize][input.index()]
}

/// Most recent raw model picks, oldest evicted first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelWindow {
    entries: VecDeque<MotionModel>,
    capacity: usize,
}

pub const DEFAULT_WINDOW_LEN: usize = 5;

impl ModelWindow {
    pub fn new(capacity: usize) -> Result<Self, DfaError> {
        if capacity == 0 {
            return Err(DfaError::EmptyWindow);
        }
        Ok(Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn from_models(capacity: usize, models: &[MotionModel]) -> Result<Self, DfaError> {
        let mut w = Self::new(capacity)?;
        for &m in models {
            w.push(m);
        }
        Ok(w)
    }

    pub fn push(&mut self, m: MotionModel) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(m);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = MotionModel> + '_ {
        self.entries.iter().copied()
    }

    /// Mean of the window contents rounded half-up, computed in integers.
    /// `None` while empty.
    pub fn rounded_mean(&self) -> Option<MotionModel> {
        let n = self.entries.len() as u64;
        if n == 0 {
            return None;
        }
        let sum: u64 = self.entries.iter().map(|m| u64::from(m.index())).sum();
        // floor(sum/n + 1/2)
        let idx = (2 * sum + n) / (2 * n);
        MotionModel::from_index(idx as u8)
    }
}

/// Pushes `raw` and returns the averaged model.
pub fn smooth(window: &mut ModelWindow, raw: MotionModel) -> MotionModel {
    window.push(raw);
    window.rounded_mean().unwrap_or(raw)
}

/// One line of the per-cycle model trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelTraceRecord {
    pub t: f64,
    pub raw_model: MotionModel,
    pub smoothed_model: MotionModel,
    pub magnitude: f64,
    pub class: InnovationClass,
}

/// classify → transition → smooth, carried across cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct DfaSelector {
    thresholds: Thresholds,
    current: MotionModel,
    window: ModelWindow,
}

impl DfaSelector {
    pub fn new(thresholds: Thresholds, window_len: usize) -> Result<Self, DfaError> {
        Ok(Self {
            thresholds,
            current: MotionModel::P1,
            window: ModelWindow::new(window_len)?,
        })
    }

    pub fn current(&self) -> MotionModel {
        self.current
    }

    pub fn window(&self) -> &ModelWindow {
        &self.window
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    /// Returns the smoothed model to use for the next prediction.
    pub fn select(&mut self, record: &InnovationRecord) -> Result<ModelTraceRecord, DfaError> {
        let class = classify(record.magnitude, &self.thresholds)?;
        let raw = transition(self.current, class);
        self.current = raw;
        let smoothed = smooth(&mut self.window, raw);
        Ok(ModelTraceRecord {
            t: record.t,
            raw_model: raw,
            smoothed_model: smoothed,
            magnitude: record.magnitude,
            class,
        })
    }
}

impl Default for DfaSelector {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            current: MotionModel::P1,
            window: ModelWindow {
                entries: VecDeque::with_capacity(DEFAULT_WINDOW_LEN),
                capacity: DEFAULT_WINDOW_LEN,
            },
        }
    }
}
