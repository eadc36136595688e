//! The predict–measure–update cycle, run once per IMU batch.

use crate::config::FusionConfig;
use crate::dfa::{DfaSelector, InnovationRecord, ModelTraceRecord, MotionModel};
use crate::filter::{check_covariance, compose_measurement, predict, update, FilterState, FusionError, TransitionModel};
use crate::geodesy::{geodetic_to_ecef, LocalFrame};
use crate::imu::{Displacement, ImuBatch, OffsetAccumulator};
use crate::nmea::GpsFix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Model fixed at P1 for the whole run.
    Static,
    Dfa,
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(FusionMode::Static),
            "dfa" => Ok(FusionMode::Dfa),
            other => Err(format!("unknown mode `{other}` (expected static or dfa)")),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Static => "static",
            FusionMode::Dfa => "dfa",
        })
    }
}

/// Result of one filter cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleOutput {
    pub state: FilterState,
    /// Model used for this cycle's prediction.
    pub active_model: MotionModel,
    /// `None` on the initializing cycle and while coasting on a stale fix.
    pub innovation: Option<InnovationRecord>,
    pub trace: Option<ModelTraceRecord>,
    /// Age of the last fix when it exceeded the horizon; the cycle then
    /// only predicts.
    pub stale_fix_age_s: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct FixAnchor {
    fix: GpsFix,
    frame: LocalFrame,
}

/// Owns the filter, the model selector and the dead-reckoning accumulator.
#[derive(Debug, Clone)]
pub struct FusionPipeline {
    config: FusionConfig,
    mode: FusionMode,
    filter: Option<FilterState>,
    selector: DfaSelector,
    active_model: MotionModel,
    anchor: Option<FixAnchor>,
    accumulator: OffsetAccumulator,
    cycles: u64,
}

impl FusionPipeline {
    pub fn new(config: FusionConfig, mode: FusionMode) -> Result<Self, FusionError> {
        config.noise.validate()?;
        let selector = DfaSelector::new(config.thresholds, config.window_len)
            .map_err(|e| FusionError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            config,
            mode,
            filter: None,
            selector,
            active_model: MotionModel::P1,
            anchor: None,
            accumulator: OffsetAccumulator::default(),
            cycles: 0,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn state(&self) -> Option<&FilterState> {
        self.filter.as_ref()
    }

    pub fn active_model(&self) -> MotionModel {
        self.active_model
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    /// Dead-reckoned displacement since the last fix, local ENU axes.
    pub fn imu_offset(&self) -> &Displacement {
        self.accumulator.offset()
    }

    pub fn last_fix(&self) -> Option<&GpsFix> {
        self.anchor.as_ref().map(|a| &a.fix)
    }

    /// Runs one cycle. Batches that arrive before the first fix are
    /// discarded and yield `Ok(None)`.
    pub fn step(&mut self, batch: &ImuBatch, fix: Option<&GpsFix>) -> Result<Option<CycleOutput>, FusionError> {
        if let Some(fix) = fix {
            self.accumulator.reset(fix.timestamp);
            self.anchor = Some(FixAnchor {
                fix: *fix,
                frame: LocalFrame::new(fix.position),
            });
        }
        // velocity integrates from the start of the log, fix or not
        self.accumulator.accumulate(batch);
        let Some(anchor) = self.anchor else {
            return Ok(None);
        };
        let t = batch.end_time();
        let offset_enu = self.accumulator.offset();
        let offset_ecef = Displacement {
            position: anchor.frame.rotate_to_ecef(&offset_enu.position),
            velocity: anchor.frame.rotate_to_ecef(&offset_enu.velocity),
        };

        let Some(prior) = self.filter else {
            let z = geodetic_to_ecef(&anchor.fix.position).to_vector() + offset_ecef.position;
            let state = FilterState::initial(z, t, &self.config.noise);
            self.filter = Some(state);
            self.cycles += 1;
            return Ok(Some(CycleOutput {
                state,
                active_model: self.active_model,
                innovation: None,
                trace: None,
                stale_fix_age_s: None,
            }));
        };

        if !(t > prior.t) {
            return Err(FusionError::NonIncreasingTime {
                previous: prior.t,
                current: t,
            });
        }
        let active_model = self.active_model;
        let transition = TransitionModel::new(t - prior.t, active_model)?;
        let mut predicted = predict(&prior, &transition, &self.config.noise);
        // keep the cycle clock exact rather than accumulating dt round-off
        predicted.t = t;
        check_covariance(&predicted.covariance, "predict")?;

        let measurement = match compose_measurement(&anchor.fix, &offset_ecef, t, self.config.stale_fix_horizon_s) {
            Ok(m) => m,
            Err(FusionError::StaleFix { age_s, .. }) => {
                self.filter = Some(predicted);
                self.cycles += 1;
                return Ok(Some(CycleOutput {
                    state: predicted,
                    active_model,
                    innovation: None,
                    trace: None,
                    stale_fix_age_s: Some(age_s),
                }));
            }
            Err(e) => return Err(e),
        };

        let (posterior, y) = update(&predicted, &measurement, &self.config.noise)?;
        check_covariance(&posterior.covariance, "update")?;
        let record = InnovationRecord::new(y, t);
        let trace = match self.mode {
            FusionMode::Dfa => {
                let trace = self
                    .selector
                    .select(&record)
                    .map_err(|e| FusionError::InvalidConfig(e.to_string()))?;
                self.active_model = trace.smoothed_model;
                trace
            }
            FusionMode::Static => ModelTraceRecord {
                t,
                raw_model: MotionModel::P1,
                smoothed_model: MotionModel::P1,
                magnitude: record.magnitude,
                class: crate::dfa::classify(record.magnitude, self.selector.thresholds())
                    .map_err(|e| FusionError::InvalidConfig(e.to_string()))?,
            },
        };
        self.filter = Some(posterior);
        self.cycles += 1;
        Ok(Some(CycleOutput {
            state: posterior,
            active_model,
            innovation: Some(record),
            trace: Some(trace),
            stale_fix_age_s: None,
        }))
    }
}
