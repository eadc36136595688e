//! Synthetic ground truth and sensor streams.
//!
//! Trajectories live in a local ENU frame about a configurable origin and
//! are built from constant-acceleration phases, so position, velocity and
//! acceleration are exact at any time. GPS samples are truth plus isotropic
//! Gaussian noise, written as checksummed GGA. IMU samples report the mean
//! acceleration over their sample interval plus Gaussian noise, which is
//! what an integrating accelerometer outputs and keeps velocity integration
//! exact across speed steps.
//!
//! Randomness comes from ChaCha8 with one stream per sensor, so a seed
//! reproduces byte-identical output on any platform.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::SimNoise;
use crate::geodesy::{EnuPosition, GeodeticPosition, LocalFrame};
use crate::imu::{ImuSample, DEFAULT_SAMPLE_INTERVAL_S};
use crate::nmea::format_gga;

const GPS_STREAM: u64 = 1;
const IMU_STREAM: u64 = 2;
const MAX_EXTENT_M: f64 = 10_000.0;
/// Satellites and HDOP written into simulated GGA sentences.
const SIM_SATELLITES: u32 = 9;
const SIM_HDOP: f64 = 0.9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("unknown profile `{0}` (expected stationary, constant_walk, varying_speed or scripted_waypoints)")]
    UnknownProfile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedChange {
    pub at_s: f64,
    pub speed: f64,
}

/// Heading is in degrees clockwise from north.
#[derive(Debug, Clone, PartialEq)]
pub enum MotionProfile {
    Stationary,
    ConstantWalk {
        speed: f64,
        heading_deg: f64,
    },
    /// Straight line; speed ramps linearly over `ramp_s` at each change.
    VaryingSpeed {
        heading_deg: f64,
        schedule: Vec<SpeedChange>,
        ramp_s: f64,
    },
    /// Stop-and-go along a polyline with trapezoidal speed on each leg.
    ScriptedWaypoints {
        waypoints: Vec<[f64; 2]>,
        speed: f64,
        ramp_s: f64,
    },
}

pub const PROFILE_NAMES: [&str; 4] = ["stationary", "constant_walk", "varying_speed", "scripted_waypoints"];

/// Walking pace used by the named profiles, m/s.
pub const WALK_SPEED: f64 = 1.4;

impl MotionProfile {
    /// Built-in profiles; timed events scale with `duration_s`.
    pub fn named(name: &str, duration_s: f64) -> Result<Self, SimError> {
        Ok(match name {
            "stationary" => MotionProfile::Stationary,
            "constant_walk" => MotionProfile::ConstantWalk {
                speed: WALK_SPEED,
                heading_deg: 90.0,
            },
            "varying_speed" => MotionProfile::VaryingSpeed {
                heading_deg: 60.0,
                schedule: [0.0, WALK_SPEED, 0.0, 2.0 * WALK_SPEED]
                    .iter()
                    .enumerate()
                    .map(|(i, &speed)| SpeedChange {
                        at_s: duration_s * i as f64 / 4.0,
                        speed,
                    })
                    .collect(),
                ramp_s: 2.0,
            },
            "scripted_waypoints" => MotionProfile::ScriptedWaypoints {
                waypoints: vec![[0.0, 0.0], [40.0, 0.0], [40.0, 40.0], [0.0, 40.0], [0.0, 0.0]],
                speed: WALK_SPEED,
                ramp_s: 1.0,
            },
            other => return Err(SimError::UnknownProfile(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Phase {
    t0: f64,
    p0: Vector3<f64>,
    v0: Vector3<f64>,
    a: Vector3<f64>,
}

impl Phase {
    fn at(&self, t: f64) -> TruthSample {
        let dt = t - self.t0;
        TruthSample {
            t,
            position: self.p0 + self.v0 * dt + self.a * (0.5 * dt * dt),
            velocity: self.v0 + self.a * dt,
            acceleration: self.a,
        }
    }
}

/// Ground truth at one instant, ENU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl TruthSample {
    pub fn enu(&self) -> EnuPosition {
        EnuPosition::from_vector(&self.position)
    }
}

/// A profile compiled into consecutive constant-acceleration phases. The
/// last phase extends indefinitely.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    phases: Vec<Phase>,
}

fn heading_unit(heading_deg: f64) -> Vector3<f64> {
    let (s, c) = heading_deg.to_radians().sin_cos();
    Vector3::new(s, c, 0.0)
}

struct PhaseBuilder {
    phases: Vec<Phase>,
    t: f64,
    p: Vector3<f64>,
    v: Vector3<f64>,
}

impl PhaseBuilder {
    fn new(p: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self {
            phases: Vec::new(),
            t: 0.0,
            p,
            v,
        }
    }

    fn push(&mut self, duration: f64, a: Vector3<f64>) {
        if duration <= 0.0 {
            return;
        }
        let phase = Phase {
            t0: self.t,
            p0: self.p,
            v0: self.v,
            a,
        };
        let end = phase.at(self.t + duration);
        self.phases.push(phase);
        self.t += duration;
        self.p = end.position;
        self.v = end.velocity;
    }

    /// Instantaneous velocity change (zero-length ramp).
    fn jump(&mut self, v: Vector3<f64>) {
        self.v = v;
    }

    fn finish(mut self) -> Trajectory {
        self.phases.push(Phase {
            t0: self.t,
            p0: self.p,
            v0: self.v,
            a: Vector3::zeros(),
        });
        Trajectory { phases: self.phases }
    }
}

impl Trajectory {
    pub fn new(profile: &MotionProfile) -> Result<Self, SimError> {
        let bad = |msg: &str| Err(SimError::Profile(msg.to_string()));
        match profile {
            MotionProfile::Stationary => Ok(PhaseBuilder::new(Vector3::zeros(), Vector3::zeros()).finish()),
            MotionProfile::ConstantWalk { speed, heading_deg } => {
                if !(*speed >= 0.0 && speed.is_finite()) {
                    return bad("speed must be >= 0");
                }
                Ok(PhaseBuilder::new(Vector3::zeros(), heading_unit(*heading_deg) * *speed).finish())
            }
            MotionProfile::VaryingSpeed {
                heading_deg,
                schedule,
                ramp_s,
            } => {
                if !(*ramp_s >= 0.0) {
                    return bad("ramp must be >= 0");
                }
                let dir = heading_unit(*heading_deg);
                let mut b = PhaseBuilder::new(Vector3::zeros(), Vector3::zeros());
                let mut speed = 0.0;
                for change in schedule {
                    if !(change.speed >= 0.0 && change.speed.is_finite()) {
                        return bad("speeds must be >= 0");
                    }
                    if change.at_s < b.t {
                        return bad("speed changes must be ordered and at least one ramp apart");
                    }
                    b.push(change.at_s - b.t, Vector3::zeros());
                    if *ramp_s > 0.0 {
                        b.push(*ramp_s, dir * ((change.speed - speed) / ramp_s));
                    } else {
                        b.jump(dir * change.speed);
                    }
                    speed = change.speed;
                }
                Ok(b.finish())
            }
            MotionProfile::ScriptedWaypoints {
                waypoints,
                speed,
                ramp_s,
            } => {
                if waypoints.is_empty() {
                    return bad("at least one waypoint required");
                }
                if !(*speed >= 0.0 && speed.is_finite() && *ramp_s >= 0.0) {
                    return bad("speed and ramp must be >= 0");
                }
                if waypoints.iter().any(|w| w[0].hypot(w[1]) > MAX_EXTENT_M) {
                    return bad("waypoints must lie within 10 km of the origin");
                }
                let start = Vector3::new(waypoints[0][0], waypoints[0][1], 0.0);
                let mut b = PhaseBuilder::new(start, Vector3::zeros());
                for pair in waypoints.windows(2) {
                    let from = Vector3::new(pair[0][0], pair[0][1], 0.0);
                    let to = Vector3::new(pair[1][0], pair[1][1], 0.0);
                    let length = (to - from).norm();
                    if length == 0.0 || *speed == 0.0 {
                        continue;
                    }
                    let dir = (to - from) / length;
                    if *ramp_s == 0.0 {
                        b.jump(dir * *speed);
                        b.push(length / speed, Vector3::zeros());
                        b.jump(Vector3::zeros());
                        continue;
                    }
                    let accel = speed / ramp_s;
                    // triangular profile when the leg is too short to reach cruise speed
                    let peak = speed.min((length * accel).sqrt());
                    let ramp = peak / accel;
                    let cruise = (length - peak * ramp) / peak;
                    b.push(ramp, dir * accel);
                    b.push(cruise, Vector3::zeros());
                    b.push(ramp, -dir * accel);
                    // cancel round-off so the next leg starts from rest
                    b.jump(Vector3::zeros());
                }
                Ok(b.finish())
            }
        }
    }

    /// Truth at `t` seconds. Times before zero are clamped to zero.
    pub fn truth_at(&self, t: f64) -> TruthSample {
        let t = t.max(0.0);
        let idx = self.phases.partition_point(|p| p.t0 <= t).saturating_sub(1);
        self.phases[idx].at(t)
    }
}

/// Truth of `profile` at time `t`.
pub fn truth_at(profile: &MotionProfile, t: f64) -> Result<TruthSample, SimError> {
    Ok(Trajectory::new(profile)?.truth_at(t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub duration_s: f64,
    pub gps_period_s: f64,
    pub imu_period_s: f64,
    pub gps_sigma_m: f64,
    pub accel_sigma: f64,
    pub origin: GeodeticPosition,
}

/// Default simulation origin (an open field; any valid position works).
pub fn default_origin() -> GeodeticPosition {
    GeodeticPosition::new(39.9334, 32.8597, 938.0).expect("valid origin")
}

impl Default for SimConfig {
    fn default() -> Self {
        let noise = SimNoise::default();
        Self {
            seed: 0,
            duration_s: 600.0,
            gps_period_s: noise.gps_period_s,
            imu_period_s: DEFAULT_SAMPLE_INTERVAL_S,
            gps_sigma_m: noise.gps_sigma_m,
            accel_sigma: noise.accel_sigma,
            origin: default_origin(),
        }
    }
}

impl SimConfig {
    pub fn with_noise(mut self, noise: &SimNoise) -> Self {
        self.gps_sigma_m = noise.gps_sigma_m;
        self.accel_sigma = noise.accel_sigma;
        self.gps_period_s = noise.gps_period_s;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.gps_period_s > 0.0 && self.imu_period_s > 0.0) {
            return bad("periods must be positive");
        }
        if !(self.gps_sigma_m >= 0.0 && self.accel_sigma >= 0.0) {
            return bad("sigmas must be >= 0");
        }
        Ok(())
    }

    pub fn imu_count(&self) -> usize {
        (self.duration_s / self.imu_period_s).round() as usize
    }

    pub fn gps_count(&self) -> usize {
        (self.duration_s / self.gps_period_s).round() as usize
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated as finite and >= 0")
}

fn noise_vector(rng: &mut ChaCha8Rng, dist: &Normal<f64>, dims: usize) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    for i in 0..dims {
        v[i] = dist.sample(rng);
    }
    v
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// All three outputs of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStreams {
    pub nmea: Vec<String>,
    pub imu: Vec<ImuSample>,
    pub truth: Vec<TruthSample>,
}

pub fn emit_streams(profile: &MotionProfile, cfg: &SimConfig) -> Result<SimStreams, SimError> {
    cfg.validate()?;
    let trajectory = Trajectory::new(profile)?;
    let frame = LocalFrame::new(cfg.origin);

    let gps_noise = normal(cfg.gps_sigma_m);
    let mut gps_rng = rng_for(cfg.seed, GPS_STREAM);
    let nmea = (0..cfg.gps_count())
        .map(|k| {
            let t = k as f64 * cfg.gps_period_s;
            let noisy = trajectory.truth_at(t).position + noise_vector(&mut gps_rng, &gps_noise, 3);
            format_gga(t, &frame.enu_to_geodetic(&EnuPosition::from_vector(&noisy)), SIM_SATELLITES, SIM_HDOP)
        })
        .collect();

    let accel_noise = normal(cfg.accel_sigma);
    let mut imu_rng = rng_for(cfg.seed, IMU_STREAM);
    let dt = cfg.imu_period_s;
    let mut imu = Vec::with_capacity(cfg.imu_count());
    let mut truth = Vec::with_capacity(cfg.imu_count());
    for k in 0..cfg.imu_count() {
        let t = k as f64 * dt;
        let now = trajectory.truth_at(t);
        let before = trajectory.truth_at(t - dt);
        let a = (now.velocity - before.velocity) / dt + noise_vector(&mut imu_rng, &accel_noise, 3);
        imu.push(ImuSample { t, accel: a });
        truth.push(now);
    }
    Ok(SimStreams { nmea, imu, truth })
}

impl SimStreams {
    pub fn nmea_text(&self) -> String {
        let mut out = String::with_capacity(self.nmea.len() * 90);
        for line in &self.nmea {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn imu_csv(&self) -> String {
        let mut out = String::from("t,ax,ay,az\n");
        for s in &self.imu {
            let _ = writeln!(out, "{},{},{},{}", s.t, s.accel.x, s.accel.y, s.accel.z);
        }
        out
    }

    pub fn truth_csv(&self) -> String {
        let mut out = String::from("t,east,north,up,ve,vn,vu\n");
        for s in &self.truth {
            let (p, v) = (s.position, s.velocity);
            let _ = writeln!(out, "{},{},{},{},{},{},{}", s.t, p.x, p.y, p.z, v.x, v.y, v.z);
        }
        out
    }

    /// Writes `gps.nmea`, `imu.csv` and `truth.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("gps.nmea"), self.nmea_text())?;
        std::fs::write(dir.join("imu.csv"), self.imu_csv())?;
        std::fs::write(dir.join("truth.csv"), self.truth_csv())?;
        Ok(())
    }
}

/// Step-driven simulator for interactive use: the caller supplies the
/// horizontal acceleration for each IMU interval.
#[derive(Debug, Clone)]
pub struct LiveSimulator {
    frame: LocalFrame,
    noise: SimNoise,
    imu_dt: f64,
    gps_rng: ChaCha8Rng,
    imu_rng: ChaCha8Rng,
    gps_dist: Normal<f64>,
    imu_dist: Normal<f64>,
    sample_index: u64,
    next_gps_epoch: u64,
    position: Vector3<f64>,
    velocity: Vector3<f64>,
}

/// One IMU interval of the live simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveStep {
    pub imu: ImuSample,
    pub gga: Option<String>,
    pub truth: TruthSample,
}

impl LiveSimulator {
    pub fn new(origin: GeodeticPosition, noise: SimNoise, imu_dt: f64, seed: u64) -> Result<Self, SimError> {
        if !(noise.gps_sigma_m >= 0.0 && noise.accel_sigma >= 0.0 && noise.gps_period_s > 0.0 && imu_dt > 0.0) {
            return Err(SimError::Config("sigmas must be >= 0 and periods positive".into()));
        }
        Ok(Self {
            frame: LocalFrame::new(origin),
            noise,
            imu_dt,
            gps_rng: rng_for(seed, GPS_STREAM),
            imu_rng: rng_for(seed, IMU_STREAM),
            gps_dist: normal(noise.gps_sigma_m),
            imu_dist: normal(noise.accel_sigma),
            sample_index: 0,
            next_gps_epoch: 0,
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
        })
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    /// Current truth position and velocity, ENU.
    pub fn state(&self) -> (Vector3<f64>, Vector3<f64>) {
        (self.position, self.velocity)
    }

    pub fn time(&self) -> f64 {
        self.sample_index as f64 * self.imu_dt
    }

    /// Advances to the next sample time under constant acceleration
    /// `(east, north)` over the interval. The first call only reports the
    /// initial state.
    pub fn step(&mut self, accel_en: [f64; 2]) -> LiveStep {
        let a = if self.sample_index == 0 {
            Vector3::zeros()
        } else {
            let a = Vector3::new(accel_en[0], accel_en[1], 0.0);
            let dt = self.imu_dt;
            self.position += self.velocity * dt + a * (0.5 * dt * dt);
            self.velocity += a * dt;
            a
        };
        let t = self.time();
        let truth = TruthSample {
            t,
            position: self.position,
            velocity: self.velocity,
            acceleration: a,
        };
        let imu = ImuSample {
            t,
            accel: a + noise_vector(&mut self.imu_rng, &self.imu_dist, 3),
        };
        let epoch_t = self.next_gps_epoch as f64 * self.noise.gps_period_s;
        let gga = (t >= epoch_t - 1e-9).then(|| {
            self.next_gps_epoch += 1;
            let noisy = self.position + noise_vector(&mut self.gps_rng, &self.gps_dist, 3);
            format_gga(t, &self.frame.enu_to_geodetic(&EnuPosition::from_vector(&noisy)), SIM_SATELLITES, SIM_HDOP)
        });
        self.sample_index += 1;
        LiveStep { imu, gga, truth }
    }
}
