//! Log replay: runs recorded or simulated streams through the pipeline and
//! summarizes the result.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::FusionConfig;
use crate::dfa::{ModelTraceRecord, MotionModel};
use crate::filter::{covariance_health, FusionError};
use crate::geodesy::{ecef_to_geodetic, EcefPosition, GeodeticPosition, LocalFrame};
use crate::imu::{ImuBatch, ImuSample};
use crate::nmea::{stream_fixes, GpsFix, StreamTally};
use crate::pipeline::{FusionMode, FusionPipeline};
use crate::sim::{SimStreams, TruthSample};

/// Length of the report's per-segment breakdown.
pub const SEGMENT_S: f64 = 60.0;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {reason}", path.display())]
    UnparseableLog { path: PathBuf, line: usize, reason: String },
    #[error("GPS and IMU logs do not overlap in time")]
    EmptyOverlap,
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("reports come from different inputs: {0}")]
    MismatchedInputs(String),
}

impl ReplayError {
    /// True for failures of the filter itself rather than of its input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ReplayError::Fusion(FusionError::CovarianceViolation { .. } | FusionError::SingularInnovationCovariance)
        )
    }
}

/// Parsed sensor logs ready for replay.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInputs {
    pub fixes: Vec<GpsFix>,
    pub imu: Vec<ImuSample>,
    pub gps_tally: StreamTally,
}

impl FusionInputs {
    pub fn new(fixes: Vec<GpsFix>, imu: Vec<ImuSample>) -> Self {
        Self {
            fixes,
            imu,
            gps_tally: StreamTally::default(),
        }
    }

    /// Parses NMEA lines. Bad lines are tallied, not fatal.
    pub fn from_nmea_lines<I, S>(lines: I, imu: Vec<ImuSample>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let mut stream = stream_fixes(lines);
        let fixes: Vec<GpsFix> = stream.by_ref().collect();
        Self {
            fixes,
            imu,
            gps_tally: stream.tally().clone(),
        }
    }

    pub fn from_sim(streams: &SimStreams) -> Self {
        Self::from_nmea_lines(&streams.nmea, streams.imu.clone())
    }

    /// SHA-256 over the parsed values, so the same data read from disk or
    /// memory gives the same fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.fixes {
            h.update(f.timestamp.to_le_bytes());
            for v in [f.position.latitude_deg(), f.position.longitude_deg(), f.position.altitude_m()] {
                h.update(v.to_le_bytes());
            }
        }
        h.update(b"|");
        for s in &self.imu {
            for v in [s.t, s.accel.x, s.accel.y, s.accel.z] {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, ReplayError> {
    std::fs::read(path).map_err(|source| ReplayError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads an IMU CSV with header `t,ax,ay,az`.
pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>, ReplayError> {
    parse_imu_csv(&read_file(path)?, path)
}

pub fn parse_imu_csv(data: &[u8], path: &Path) -> Result<Vec<ImuSample>, ReplayError> {
    let unparseable = |line: usize, reason: String| ReplayError::UnparseableLog {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(data);
    let header = reader.headers().map_err(|e| unparseable(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != ["t", "ax", "ay", "az"] {
        return Err(unparseable(1, "expected header `t,ax,ay,az`".into()));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            unparseable(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut v = [0.0; 4];
        if record.len() != 4 {
            return Err(unparseable(line, format!("expected 4 fields, found {}", record.len())));
        }
        for (slot, field) in v.iter_mut().zip(record.iter()) {
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| unparseable(line, format!("bad number `{field}`")))?;
        }
        if out.last().is_some_and(|prev: &ImuSample| v[0] <= prev.t) {
            return Err(unparseable(line, "timestamps must increase".into()));
        }
        out.push(ImuSample::new(v[0], v[1], v[2], v[3]));
    }
    Ok(out)
}

/// Reads a truth CSV with header `t,east,north,up,ve,vn,vu`.
pub fn read_truth_csv(path: &Path) -> Result<Vec<TruthSample>, ReplayError> {
    let data = read_file(path)?;
    let unparseable = |line: usize, reason: String| ReplayError::UnparseableLog {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(&data[..]);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| unparseable(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let v: Vec<f64> = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| unparseable(line, e.to_string())))
            .collect::<Result<_, _>>()?;
        if v.len() != 7 {
            return Err(unparseable(line, format!("expected 7 fields, found {}", v.len())));
        }
        out.push(TruthSample {
            t: v[0],
            position: Vector3::new(v[1], v[2], v[3]),
            velocity: Vector3::new(v[4], v[5], v[6]),
            acceleration: Vector3::zeros(),
        });
    }
    Ok(out)
}

/// Reads both logs. GGA time of day is taken as seconds on the IMU clock.
pub fn load_inputs(gps_path: &Path, imu_path: &Path) -> Result<FusionInputs, ReplayError> {
    let gps = read_file(gps_path)?;
    let imu = read_imu_csv(imu_path)?;
    Ok(FusionInputs::from_nmea_lines(gps.split(|&b| b == b'\n'), imu))
}

/// One row per filter cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub cycle: u64,
    pub t: f64,
    pub ecef: Vector3<f64>,
    pub geodetic: GeodeticPosition,
    pub velocity: Vector3<f64>,
    /// Smoothed model that drove this cycle's prediction.
    pub model: MotionModel,
}

/// One row per update, i.e. per cycle that had a usable measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub cycle: u64,
    pub t: f64,
    pub innovation: Vector3<f64>,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentStat {
    pub index: usize,
    pub start_s: f64,
    pub updates: usize,
    pub rms_innovation_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: FusionMode,
    pub cycles: u64,
    pub updates: u64,
    pub coasting_cycles: u64,
    pub rms_innovation_m: f64,
    pub max_innovation_m: f64,
    /// Fraction of updates whose smoothed model was P0, P1, P2.
    pub occupancy: [f64; 3],
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub gps_lines_rejected: usize,
    pub segments: Vec<SegmentStat>,
    /// RMS 3D distance to ground truth, when truth was supplied.
    pub truth_rms_m: Option<f64>,
    pub input_fingerprint: String,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionRun {
    pub trajectory: Vec<TrajectoryRow>,
    pub errors: Vec<ErrorRow>,
    pub models: Vec<ModelTraceRecord>,
    pub report: RunReport,
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Groups IMU samples into batches and assigns each fix to the first batch
/// ending at or after its timestamp. When several fixes land in one batch
/// only the latest is used.
fn schedule<'a>(
    inputs: &'a FusionInputs,
    config: &FusionConfig,
) -> Result<Vec<(ImuBatch, Option<&'a GpsFix>)>, ReplayError> {
    let mut fixes = inputs.fixes.iter().peekable();
    let mut out = Vec::with_capacity(inputs.imu.len() / config.batch_size + 1);
    for chunk in inputs.imu.chunks_exact(config.batch_size) {
        let batch = ImuBatch::new(chunk.to_vec(), config.imu_dt_s).map_err(|e| ReplayError::UnparseableLog {
            path: PathBuf::from("<imu>"),
            line: 0,
            reason: e.to_string(),
        })?;
        let mut fix = None;
        while let Some(f) = fixes.next_if(|f| f.timestamp <= batch.end_time()) {
            fix = Some(f);
        }
        out.push((batch, fix));
    }
    Ok(out)
}

/// Replays `inputs` through a fresh pipeline.
pub fn run_fusion(inputs: &FusionInputs, config: &FusionConfig, mode: FusionMode) -> Result<FusionRun, ReplayError> {
    config.validate().map_err(|e| FusionError::InvalidConfig(e.to_string()))?;
    let (Some(first), Some(last)) = (inputs.imu.first(), inputs.imu.last()) else {
        return Err(ReplayError::EmptyOverlap);
    };
    if !inputs.fixes.iter().any(|f| f.timestamp >= first.t && f.timestamp <= last.t) {
        return Err(ReplayError::EmptyOverlap);
    }
    let started = Instant::now();
    let mut pipeline = FusionPipeline::new(*config, mode)?;
    let mut trajectory = Vec::new();
    let mut errors = Vec::new();
    let mut models = Vec::new();
    let (mut max_asymmetry, mut min_eigenvalue) = (0.0f64, f64::INFINITY);
    let mut coasting = 0;

    for (batch, fix) in schedule(inputs, config)? {
        let Some(out) = pipeline.step(&batch, fix)? else {
            continue;
        };
        let cycle = pipeline.cycles() - 1;
        let (asym, min_eig) = covariance_health(&out.state.covariance);
        max_asymmetry = max_asymmetry.max(asym);
        min_eigenvalue = min_eigenvalue.min(min_eig);
        coasting += u64::from(out.stale_fix_age_s.is_some());
        trajectory.push(TrajectoryRow {
            cycle,
            t: out.state.t,
            ecef: out.state.position,
            geodetic: ecef_to_geodetic(&EcefPosition::from_vector(&out.state.position)),
            velocity: out.state.velocity,
            model: out.active_model,
        });
        if let Some(rec) = out.innovation {
            errors.push(ErrorRow {
                cycle,
                t: rec.t,
                innovation: rec.y,
                magnitude: rec.magnitude,
            });
        }
        if let Some(trace) = out.trace {
            models.push(trace);
        }
    }
    if trajectory.is_empty() {
        return Err(ReplayError::EmptyOverlap);
    }

    let mut occupancy = [0.0; 3];
    for m in &models {
        occupancy[usize::from(m.smoothed_model.index())] += 1.0;
    }
    if !models.is_empty() {
        occupancy.iter_mut().for_each(|o| *o /= models.len() as f64);
    }
    let t0 = trajectory[0].t;
    let mut segments: Vec<SegmentStat> = Vec::new();
    let mut seg_sums: Vec<f64> = Vec::new();
    for e in &errors {
        let index = ((e.t - t0) / SEGMENT_S).floor().max(0.0) as usize;
        while segments.len() <= index {
            segments.push(SegmentStat {
                index: segments.len(),
                start_s: t0 + segments.len() as f64 * SEGMENT_S,
                updates: 0,
                rms_innovation_m: 0.0,
            });
            seg_sums.push(0.0);
        }
        segments[index].updates += 1;
        seg_sums[index] += e.magnitude * e.magnitude;
    }
    for (s, sum) in segments.iter_mut().zip(seg_sums) {
        if s.updates > 0 {
            s.rms_innovation_m = (sum / s.updates as f64).sqrt();
        }
    }

    let report = RunReport {
        mode,
        cycles: trajectory.len() as u64,
        updates: errors.len() as u64,
        coasting_cycles: coasting,
        rms_innovation_m: rms(errors.iter().map(|e| e.magnitude)),
        max_innovation_m: errors.iter().map(|e| e.magnitude).fold(0.0, f64::max),
        occupancy,
        max_asymmetry,
        min_eigenvalue,
        gps_lines_rejected: inputs.gps_tally.error_count(),
        segments,
        truth_rms_m: None,
        input_fingerprint: inputs.fingerprint(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(FusionRun {
        trajectory,
        errors,
        models,
        report,
    })
}

/// Linear interpolation of truth position at `t`; `truth` must be sorted.
fn truth_position_at(truth: &[TruthSample], t: f64) -> Option<Vector3<f64>> {
    let i = truth.partition_point(|s| s.t < t);
    let hi = truth.get(i)?;
    if hi.t == t || i == 0 {
        return (hi.t == t).then_some(hi.position);
    }
    let lo = &truth[i - 1];
    let w = (t - lo.t) / (hi.t - lo.t);
    Some(lo.position + (hi.position - lo.position) * w)
}

/// Per-cycle 3D distance between the fused position and ENU truth about
/// `origin`. Cycles outside the truth time span are skipped.
pub fn truth_errors(run: &FusionRun, truth: &[TruthSample], origin: &GeodeticPosition) -> Vec<(f64, f64)> {
    let frame = LocalFrame::new(*origin);
    run.trajectory
        .iter()
        .filter_map(|row| {
            let truth = truth_position_at(truth, row.t)?;
            let fused = frame.to_enu(&EcefPosition::from_vector(&row.ecef)).to_vector();
            Some((row.t, (fused - truth).norm()))
        })
        .collect()
}

impl FusionRun {
    /// Fills `report.truth_rms_m` and returns the per-cycle errors.
    pub fn attach_truth(&mut self, truth: &[TruthSample], origin: &GeodeticPosition) -> Vec<(f64, f64)> {
        let errs = truth_errors(self, truth, origin);
        self.report.truth_rms_m = (!errs.is_empty()).then(|| rms(errs.iter().map(|e| e.1)));
        errs
    }

    /// Smoothed-model occupancy over updates after the first `skip`.
    pub fn occupancy_after(&self, skip: usize) -> [f64; 3] {
        let rest = self.models.get(skip..).unwrap_or_default();
        let mut occ = [0.0; 3];
        for m in rest {
            occ[usize::from(m.smoothed_model.index())] += 1.0;
        }
        if !rest.is_empty() {
            occ.iter_mut().for_each(|o| *o /= rest.len() as f64);
        }
        occ
    }

    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("cycle,t,x,y,z,lat,lon,alt,vx,vy,vz,model\n");
        for r in &self.trajectory {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.cycle,
                r.t,
                r.ecef.x,
                r.ecef.y,
                r.ecef.z,
                r.geodetic.latitude_deg(),
                r.geodetic.longitude_deg(),
                r.geodetic.altitude_m(),
                r.velocity.x,
                r.velocity.y,
                r.velocity.z,
                r.model.index()
            );
        }
        out
    }

    pub fn errors_csv(&self) -> String {
        let mut out = String::from("cycle,t,yx,yy,yz,magnitude\n");
        for e in &self.errors {
            let y = e.innovation;
            let _ = writeln!(out, "{},{},{},{},{},{}", e.cycle, e.t, y.x, y.y, y.z, e.magnitude);
        }
        out
    }

    pub fn models_csv(&self) -> String {
        let mut out = String::from("t,magnitude,class,raw_model,smoothed_model\n");
        for m in &self.models {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                m.t,
                m.magnitude,
                m.class.index(),
                m.raw_model.index(),
                m.smoothed_model.index()
            );
        }
        out
    }

    /// GeoJSON FeatureCollection with one LineString per run of cycles that
    /// share a model. Consecutive features share their boundary point.
    pub fn geojson(&self) -> serde_json::Value {
        let mut features = Vec::new();
        let mut start = 0;
        while start < self.trajectory.len() {
            let model = self.trajectory[start].model;
            let mut end = start;
            while end + 1 < self.trajectory.len() && self.trajectory[end + 1].model == model {
                end += 1;
            }
            let stop = (end + 1).min(self.trajectory.len() - 1);
            let mut coords: Vec<[f64; 2]> = self.trajectory[start..=stop]
                .iter()
                .map(|r| [r.geodetic.longitude_deg(), r.geodetic.latitude_deg()])
                .collect();
            if coords.len() == 1 {
                // a LineString needs two positions
                coords.push(coords[0]);
            }
            features.push(serde_json::json!({
                "type": "Feature",
                "properties": {
                    "model": model.index(),
                    "start_t": self.trajectory[start].t,
                    "end_t": self.trajectory[end].t,
                },
                "geometry": { "type": "LineString", "coordinates": coords },
            }));
            start = end + 1;
        }
        serde_json::json!({ "type": "FeatureCollection", "features": features })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SegmentWinner {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentComparison {
    pub index: usize,
    pub start_s: f64,
    pub rms_a_m: f64,
    pub rms_b_m: f64,
    pub winner: SegmentWinner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mode_a: FusionMode,
    pub mode_b: FusionMode,
    pub rms_a_m: f64,
    pub rms_b_m: f64,
    /// `rms_a - rms_b`; negative when A has the smaller error.
    pub rms_delta_m: f64,
    /// Reduction of A's RMS innovation relative to B's, percent.
    pub improvement_pct: f64,
    pub segments: Vec<SegmentComparison>,
}

pub fn improvement_pct(rms_a: f64, rms_b: f64) -> f64 {
    if rms_b == 0.0 {
        0.0
    } else {
        (rms_b - rms_a) / rms_b * 100.0
    }
}

/// Compares two runs over the same inputs, typically A = dfa, B = static.
pub fn compare(a: &RunReport, b: &RunReport) -> Result<Comparison, ReplayError> {
    if a.input_fingerprint != b.input_fingerprint {
        return Err(ReplayError::MismatchedInputs("input fingerprints differ".into()));
    }
    if a.segments.len() != b.segments.len() {
        return Err(ReplayError::MismatchedInputs("segment counts differ".into()));
    }
    let segments = a
        .segments
        .iter()
        .zip(&b.segments)
        .map(|(sa, sb)| SegmentComparison {
            index: sa.index,
            start_s: sa.start_s,
            rms_a_m: sa.rms_innovation_m,
            rms_b_m: sb.rms_innovation_m,
            winner: match sa.rms_innovation_m.partial_cmp(&sb.rms_innovation_m) {
                Some(std::cmp::Ordering::Less) => SegmentWinner::A,
                Some(std::cmp::Ordering::Greater) => SegmentWinner::B,
                _ => SegmentWinner::Tie,
            },
        })
        .collect();
    Ok(Comparison {
        mode_a: a.mode,
        mode_b: b.mode,
        rms_a_m: a.rms_innovation_m,
        rms_b_m: b.rms_innovation_m,
        rms_delta_m: a.rms_innovation_m - b.rms_innovation_m,
        improvement_pct: improvement_pct(a.rms_innovation_m, b.rms_innovation_m),
        segments,
    })
}

impl Comparison {
    /// Plain-text summary with one line per segment.
    pub fn table(&self) -> String {
        let mut out = format!(
            "A ({}) rms {:.4} m, B ({}) rms {:.4} m, delta {:+.4} m, improvement {:.2}%\n",
            self.mode_a, self.rms_a_m, self.mode_b, self.rms_b_m, self.rms_delta_m, self.improvement_pct
        );
        out.push_str("segment  start_s    rms_a     rms_b     winner\n");
        for s in &self.segments {
            let _ = writeln!(
                out,
                "{:>7}  {:>7.1}  {:>8.4}  {:>8.4}  {:?}",
                s.index, s.start_s, s.rms_a_m, s.rms_b_m, s.winner
            );
        }
        out
    }
}
