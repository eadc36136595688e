//! Six-state (position, velocity) Kalman filter in ECEF.
//!
//! Prediction uses the constant-velocity transition with the velocity term
//! scaled by the active motion model's coefficient. Only position is
//! observed; velocity is corrected through the gain.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use thiserror::Error;

use crate::dfa::MotionModel;
use crate::geodesy::geodetic_to_ecef;
use crate::imu::Displacement;
use crate::nmea::GpsFix;

/// Asymmetry bound, infinity norm of `C - Cᵀ`.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Smallest eigenvalue tolerated after symmetrization.
pub const PSD_TOL: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("GPS fix is {age_s:.2} s old, horizon is {horizon_s} s")]
    StaleFix { age_s: f64, horizon_s: f64 },
    #[error("innovation covariance is singular")]
    SingularInnovationCovariance,
    #[error("covariance not symmetric PSD after {stage}: asymmetry {asymmetry:e}, min eigenvalue {min_eigenvalue:e}")]
    CovarianceViolation {
        stage: &'static str,
        asymmetry: f64,
        min_eigenvalue: f64,
    },
    #[error("time step must be positive: {previous} -> {current}")]
    NonIncreasingTime { previous: f64, current: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Noise parameters for the filter. All strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// GPS position std per axis, meters; R = σ²·I₃.
    pub sigma_gps_m: f64,
    /// White-noise acceleration intensity, m/s²; spectral density σ².
    pub sigma_accel: f64,
    /// Initial position std, meters.
    pub p0_pos_m: f64,
    /// Initial velocity std, m/s.
    pub p0_vel: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_gps_m: 2.5,
            sigma_accel: 0.5,
            p0_pos_m: 10.0,
            p0_vel: 1.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        let fields = [
            ("sigma_gps_m", self.sigma_gps_m),
            ("sigma_accel", self.sigma_accel),
            ("p0_pos_m", self.p0_pos_m),
            ("p0_vel", self.p0_vel),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FusionError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn measurement_covariance(&self) -> Matrix3<f64> {
        Matrix3::identity() * (self.sigma_gps_m * self.sigma_gps_m)
    }

    /// Continuous white-noise-acceleration process noise discretized over `dt`.
    pub fn process_covariance(&self, dt: f64) -> Matrix6<f64> {
        let q = self.sigma_accel * self.sigma_accel;
        let pp = q * dt * dt * dt / 3.0;
        let pv = q * dt * dt / 2.0;
        let vv = q * dt;
        let mut out = Matrix6::zeros();
        for i in 0..3 {
            out[(i, i)] = pp;
            out[(i, i + 3)] = pv;
            out[(i + 3, i)] = pv;
            out[(i + 3, i + 3)] = vv;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    /// ECEF meters.
    pub position: Vector3<f64>,
    /// ECEF m/s.
    pub velocity: Vector3<f64>,
    pub covariance: Matrix6<f64>,
    pub t: f64,
}

impl FilterState {
    /// Zero velocity with diagonal initial covariance.
    pub fn initial(position: Vector3<f64>, t: f64, noise: &NoiseConfig) -> Self {
        let mut covariance = Matrix6::zeros();
        for i in 0..3 {
            covariance[(i, i)] = noise.p0_pos_m * noise.p0_pos_m;
            covariance[(i + 3, i + 3)] = noise.p0_vel * noise.p0_vel;
        }
        Self {
            position,
            velocity: Vector3::zeros(),
            covariance,
            t,
        }
    }

    pub fn state_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionModel {
    dt: f64,
    model: MotionModel,
}

impl TransitionModel {
    pub fn new(dt: f64, model: MotionModel) -> Result<Self, FusionError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(FusionError::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { dt, model })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn model(&self) -> MotionModel {
        self.model
    }

    pub fn velocity_coefficient(&self) -> f64 {
        self.model.velocity_coefficient()
    }

    /// The constant-velocity transition with `c·dt` in the position/velocity block.
    pub fn matrix(&self) -> Matrix6<f64> {
        let mut f = Matrix6::identity();
        let k = self.velocity_coefficient() * self.dt;
        for i in 0..3 {
            f[(i, i + 3)] = k;
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// ECEF meters.
    pub z: Vector3<f64>,
    pub t: f64,
}

pub fn predict(state: &FilterState, model: &TransitionModel, noise: &NoiseConfig) -> FilterState {
    let f = model.matrix();
    let p = f * state.covariance * f.transpose() + noise.process_covariance(model.dt);
    FilterState {
        position: state.position + state.velocity * (model.velocity_coefficient() * model.dt),
        velocity: state.velocity,
        covariance: symmetrize(&p),
        t: state.t + model.dt,
    }
}

/// Last GPS fix plus the dead-reckoned displacement since it.
///
/// `offset_ecef` must already be expressed along ECEF axes.
pub fn compose_measurement(
    fix: &GpsFix,
    offset_ecef: &Displacement,
    t: f64,
    horizon_s: f64,
) -> Result<Measurement, FusionError> {
    let age_s = t - fix.timestamp;
    if age_s > horizon_s {
        return Err(FusionError::StaleFix { age_s, horizon_s });
    }
    Ok(Measurement {
        z: geodetic_to_ecef(&fix.position).to_vector() + offset_ecef.position,
        t,
    })
}

/// Kalman update with H = [I₃ | 0₃] and Joseph-form covariance.
/// Returns the posterior and the pre-update innovation `z − H·x̂`.
pub fn update(
    state: &FilterState,
    z: &Measurement,
    noise: &NoiseConfig,
) -> Result<(FilterState, Vector3<f64>), FusionError> {
    let r = noise.measurement_covariance();
    let p = &state.covariance;
    let y = z.z - state.position;

    let s = p.fixed_view::<3, 3>(0, 0) + r;
    let s_inv = s.try_inverse().ok_or(FusionError::SingularInnovationCovariance)?;
    if !s_inv.iter().all(|v| v.is_finite()) {
        return Err(FusionError::SingularInnovationCovariance);
    }
    // P·Hᵀ is the first three columns of P.
    let pht = p.fixed_view::<6, 3>(0, 0).into_owned();
    let k = pht * s_inv;

    let dx = k * y;
    let mut i_kh = Matrix6::identity();
    let mut block = i_kh.fixed_view_mut::<6, 3>(0, 0);
    block -= &k;
    let joseph = i_kh * p * i_kh.transpose() + k * r * k.transpose();

    Ok((
        FilterState {
            position: state.position + dx.fixed_rows::<3>(0),
            velocity: state.velocity + dx.fixed_rows::<3>(3),
            covariance: symmetrize(&joseph),
            t: state.t,
        },
        y,
    ))
}

fn symmetrize(p: &Matrix6<f64>) -> Matrix6<f64> {
    (p + p.transpose()) * 0.5
}

/// Asymmetry (infinity norm of `C − Cᵀ`) and smallest eigenvalue of the
/// symmetrized matrix.
pub fn covariance_health(c: &Matrix6<f64>) -> (f64, f64) {
    let diff = c - c.transpose();
    let asymmetry = diff
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let eig = SymmetricEigen::new(symmetrize(c));
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    (asymmetry, min_eigenvalue)
}

pub fn check_covariance(c: &Matrix6<f64>, stage: &'static str) -> Result<(), FusionError> {
    let (asymmetry, min_eigenvalue) = covariance_health(c);
    if asymmetry < SYMMETRY_TOL && min_eigenvalue >= PSD_TOL {
        Ok(())
    } else {
        Err(FusionError::CovarianceViolation {
            stage,
            asymmetry,
            min_eigenvalue,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::GeodeticPosition;
    use crate::nmea::FixQuality;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn state_at(p: [f64; 3], v: [f64; 3]) -> FilterState {
        let mut s = FilterState::initial(Vector3::from(p), 0.0, &NoiseConfig::default());
        s.velocity = Vector3::from(v);
        s
    }

    fn fix_at(t: f64) -> GpsFix {
        GpsFix {
            timestamp: t,
            position: GeodeticPosition::new(45.0, 10.0, 100.0).unwrap(),
            fix_quality: FixQuality::Gps,
            num_satellites: 8,
            hdop: 0.9,
        }
    }

    #[test]
    fn predict_respects_velocity_coefficient() {
        let noise = NoiseConfig::default();
        let s = state_at([10.0, 20.0, 30.0], [1.0, 0.0, 0.0]);
        for (model, shift) in [(MotionModel::P0, 0.0), (MotionModel::P1, 1.0), (MotionModel::P2, 2.0)] {
            let p = predict(&s, &TransitionModel::new(1.0, model).unwrap(), &noise);
            assert_eq!(p.position, Vector3::new(10.0 + shift, 20.0, 30.0));
            assert_eq!(p.velocity, s.velocity);
            assert_eq!(p.t, 1.0);
        }
        let fast = state_at([0.0; 3], [5.0, -3.0, 2.0]);
        let p = predict(&fast, &TransitionModel::new(0.08, MotionModel::P0).unwrap(), &noise);
        assert_eq!(p.position, fast.position);
    }

    #[test]
    fn transition_rejects_bad_dt() {
        assert!(TransitionModel::new(0.0, MotionModel::P1).is_err());
        assert!(TransitionModel::new(-0.1, MotionModel::P1).is_err());
    }

    #[test]
    fn predict_covariance_matches_explicit_product() {
        let noise = NoiseConfig::default();
        let s = state_at([0.0; 3], [0.0; 3]);
        let tm = TransitionModel::new(0.08, MotionModel::P2).unwrap();
        let p = predict(&s, &tm, &noise);
        // position variance: p0² + (c·dt)²·v0² + q·dt³/3
        let expected = 100.0 + (0.16f64).powi(2) * 1.0 + 0.25 * 0.08f64.powi(3) / 3.0;
        assert_abs_diff_eq!(p.covariance[(0, 0)], expected, epsilon = 1e-12);
        let expected_pv = 0.16 * 1.0 + 0.25 * 0.08f64.powi(2) / 2.0;
        assert_abs_diff_eq!(p.covariance[(0, 3)], expected_pv, epsilon = 1e-12);
        check_covariance(&p.covariance, "predict").unwrap();
    }

    #[test]
    fn compose_measurement_adds_offset() {
        let fix = fix_at(10.0);
        let p = geodetic_to_ecef(&fix.position).to_vector();
        let z = compose_measurement(&fix, &Displacement::zero(), 10.5, 5.0).unwrap();
        assert_eq!(z.z, p);
        let offset = Displacement {
            position: Vector3::new(0.004, 0.0, 0.0),
            velocity: Vector3::zeros(),
        };
        let z = compose_measurement(&fix, &offset, 10.5, 5.0).unwrap();
        assert_eq!(z.z, p + Vector3::new(0.004, 0.0, 0.0));
        assert_eq!(
            compose_measurement(&fix, &offset, 16.0, 5.0),
            Err(FusionError::StaleFix { age_s: 6.0, horizon_s: 5.0 })
        );
    }

    #[test]
    fn update_with_matching_measurement_is_idle() {
        let noise = NoiseConfig::default();
        let s = state_at([1.0, 2.0, 3.0], [0.5, 0.0, 0.0]);
        let (post, y) = update(&s, &Measurement { z: s.position, t: 0.0 }, &noise).unwrap();
        assert_eq!(y, Vector3::zeros());
        assert_abs_diff_eq!((post.position - s.position).norm(), 0.0, epsilon = 1e-12);
        assert!(post.covariance[(0, 0)] < s.covariance[(0, 0)]);
    }

    #[test]
    fn singular_innovation_covariance_is_reported() {
        let noise = NoiseConfig {
            sigma_gps_m: 1e-200,
            ..NoiseConfig::default()
        };
        let mut s = state_at([0.0; 3], [0.0; 3]);
        s.covariance = Matrix6::zeros();
        let r = update(&s, &Measurement { z: Vector3::new(1.0, 0.0, 0.0), t: 0.0 }, &noise);
        assert_eq!(r.unwrap_err(), FusionError::SingularInnovationCovariance);
    }

    /// Scalar Gaussian fusion reference for one axis: product of the prior
    /// and likelihood densities evaluated on a grid, mean by quadrature.
    fn grid_posterior_mean(prior_mean: f64, prior_var: f64, z: f64, r: f64) -> f64 {
        let reach = 40.0 * prior_var.max(r).sqrt();
        let (lo, hi, n) = (prior_mean.min(z) - reach, prior_mean.max(z) + reach, 400_001);
        let h = (hi - lo) / (n - 1) as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let x = lo + i as f64 * h;
            let w = (-(x - prior_mean).powi(2) / (2.0 * prior_var) - (x - z).powi(2) / (2.0 * r)).exp();
            num += x * w;
            den += w;
        }
        num / den
    }

    #[test]
    fn posterior_matches_scalar_bayes_over_three_steps() {
        for sigma in [0.3, 2.5, 30.0] {
            let noise = NoiseConfig {
                sigma_gps_m: sigma,
                ..NoiseConfig::default()
            };
            let mut s = state_at([0.0; 3], [0.0; 3]);
            let mut mean = 0.0;
            let mut var = s.covariance[(0, 0)];
            for z in [4.0, -1.0, 2.5] {
                let (post, _) = update(&s, &Measurement { z: Vector3::new(z, 0.0, 0.0), t: 0.0 }, &noise).unwrap();
                mean = grid_posterior_mean(mean, var, z, sigma * sigma);
                var = 1.0 / (1.0 / var + 1.0 / (sigma * sigma));
                assert_abs_diff_eq!(post.position.x, mean, epsilon = 1e-6);
                s = post;
            }
        }
    }

    #[test]
    fn repeated_measurements_converge() {
        let noise = NoiseConfig::default();
        let target = Vector3::new(3.0, -4.0, 12.0);
        let mut s = state_at([0.0; 3], [0.0; 3]);
        let mut mags = Vec::new();
        for _ in 0..200 {
            let tm = TransitionModel::new(0.08, MotionModel::P1).unwrap();
            s = predict(&s, &tm, &noise);
            let (post, y) = update(&s, &Measurement { z: target, t: s.t }, &noise).unwrap();
            mags.push(y.norm());
            s = post;
        }
        assert!((s.position - target).norm() < 1e-2);
        // velocity rings, so compare the envelope over 50-cycle blocks
        let peaks: Vec<f64> = mags[1..].chunks(50).map(|c| c.iter().cloned().fold(0.0, f64::max)).collect();
        assert!(peaks.windows(2).all(|w| w[1] < w[0]), "{peaks:?}");
    }

    #[test]
    fn noiseless_model_consistent_measurements_give_zero_innovation() {
        let noise = NoiseConfig::default();
        let mut truth = Vector6::new(4_000_000.0, 1_000_000.0, 4_800_000.0, 1.2, -0.7, 0.3);
        let mut s = FilterState::initial(truth.fixed_rows::<3>(0).into_owned(), 0.0, &noise);
        s.velocity = truth.fixed_rows::<3>(3).into_owned();
        for k in 0..500 {
            let tm = TransitionModel::new(0.08, MotionModel::ALL[k % 3]).unwrap();
            truth = tm.matrix() * truth;
            s = predict(&s, &tm, &noise);
            let (post, y) = update(&s, &Measurement { z: truth.fixed_rows::<3>(0).into_owned(), t: s.t }, &noise).unwrap();
            assert!(y.norm() < 1e-6, "cycle {k}: {}", y.norm());
            s = post;
        }
    }

    proptest! {
        #[test]
        fn extreme_noise_limits(zx in -50.0f64..50.0, zy in -50.0f64..50.0, vx in -3.0f64..3.0) {
            let s = state_at([100.0, 200.0, 300.0], [vx, 0.0, 0.0]);
            let z = Measurement { z: Vector3::new(100.0 + zx, 200.0 + zy, 300.0), t: 0.0 };

            let vague = NoiseConfig { sigma_gps_m: 1e12, ..NoiseConfig::default() };
            let (post, _) = update(&s, &z, &vague).unwrap();
            prop_assert!((post.state_vector() - s.state_vector()).norm() <= 1e-9 * s.state_vector().norm());

            let sharp = NoiseConfig { sigma_gps_m: 1e-9, ..NoiseConfig::default() };
            let (post, _) = update(&s, &z, &sharp).unwrap();
            prop_assert!((post.position - z.z).norm() <= 1e-6 * z.z.norm());
        }

        #[test]
        fn covariance_stays_psd(models in proptest::collection::vec(0u8..3, 1..60),
                                sigma in 0.01f64..50.0, dt in 0.001f64..2.0) {
            let noise = NoiseConfig { sigma_gps_m: sigma, ..NoiseConfig::default() };
            let mut s = state_at([0.0; 3], [1.0, 2.0, 3.0]);
            for m in models {
                let tm = TransitionModel::new(dt, MotionModel::from_index(m).unwrap()).unwrap();
                s = predict(&s, &tm, &noise);
                check_covariance(&s.covariance, "predict").unwrap();
                let (post, _) = update(&s, &Measurement { z: s.position + Vector3::new(1.0, -1.0, 0.5), t: s.t }, &noise).unwrap();
                check_covariance(&post.covariance, "update").unwrap();
                s = post;
            }
        }
    }
}
