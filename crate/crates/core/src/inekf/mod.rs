//! Contact-aided right-invariant EKF.
//!
//! The state is an element of `SE_{2+K}(3)` holding orientation, velocity,
//! position and one world-frame point per active contact, plus IMU biases in
//! a Euclidean appendix. Errors are right-invariant, `η = X̄ X⁻¹ = exp(ξ)`,
//! and the bias error is `ζ = b̄ − b`. Covariance rows are ordered
//! `[ξ_R, ξ_v, ξ_p, ξ_d1 .. ξ_dK, ζ_g, ζ_a]`.

mod estimator;
mod filter;

pub use estimator::{Estimator, FrameReport, InitialState};
pub use filter::{
    augment_contact, correct_contact, error_dynamics, marginalize_contact, propagate, ContactCovariance, CorrectionOutcome,
    MAX_PROPAGATION_DT,
};

use nalgebra::{DMatrix, Matrix3, Vector3};
use thiserror::Error;

use crate::liegroup::{GroupElement, Rotation};
use crate::shape::{EndcapId, ShapeError, ShapeSolverConfig};

/// Chi-square 99.9% quantile with three degrees of freedom.
pub const CHI2_3_999: f64 = 16.266_236_196_238_134;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("rejected IMU sample: {0}")]
    RejectedSample(String),
    #[error("contact {0} is already active")]
    DuplicateContact(EndcapId),
    #[error("contact {0} is not active")]
    InactiveContact(EndcapId),
    #[error("bias calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Specific force in the body frame [m/s²].
    pub accel: Vector3<f64>,
    /// Angular rate in the body frame [rad/s].
    pub gyro: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuBias {
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactVector {
    pub timestamp: f64,
    pub c: [bool; 6],
}

/// Sensor noise model.
///
/// `gyro` and `accel` are per-sample covariances of the IMU white noise at
/// `imu_period`; they enter the continuous model as densities `Σ·imu_period`.
/// The bias and contact entries are random-walk densities per second.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub gyro: Matrix3<f64>,
    pub accel: Matrix3<f64>,
    pub gyro_bias: Matrix3<f64>,
    pub accel_bias: Matrix3<f64>,
    /// Contact-point velocity noise, expressed in the contact frame.
    pub contact: Matrix3<f64>,
    pub gravity: Vector3<f64>,
    pub imu_period: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let d = |s: f64| Matrix3::identity() * (s * s);
        NoiseConfig {
            gyro: d(0.002),
            accel: d(0.043),
            gyro_bias: d(0.001),
            accel_bias: d(0.001),
            contact: d(0.05),
            gravity: Vector3::new(0.0, 0.0, -9.81),
            imu_period: 1.0 / 200.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        for (name, m) in [
            ("gyro", &self.gyro),
            ("accel", &self.accel),
            ("gyro_bias", &self.gyro_bias),
            ("accel_bias", &self.accel_bias),
            ("contact", &self.contact),
        ] {
            let sym = (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
            if !sym || m.symmetric_eigenvalues().min() < -1e-12 {
                return Err(FilterError::InvalidConfig(format!("{name} covariance is not symmetric PSD")));
            }
        }
        if !(self.imu_period > 0.0) {
            return Err(FilterError::InvalidConfig("imu_period must be > 0".into()));
        }
        Ok(())
    }
}

/// How the contact forward-kinematics noise is modelled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContactNoiseModel {
    /// `R̄ J_p Σ_l J_pᵀ R̄ᵀ` with `Σ_l = σ_l² I` and `J_p` by finite differences.
    Jacobian { cable_std: f64 },
    /// Constant isotropic world-frame covariance `σ² I`.
    Empirical { std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub noise: NoiseConfig,
    pub contact_noise: ContactNoiseModel,
    /// Standard deviation used when the Jacobian path is unavailable [m].
    pub fallback_fk_std: f64,
    /// Mahalanobis gate on the contact innovation; `None` disables it.
    pub outlier_gate: Option<f64>,
    pub max_condition_number: f64,
    /// Consecutive contact samples required before augmenting.
    pub debounce_on: usize,
    /// Consecutive no-contact samples required before marginalizing.
    pub debounce_off: usize,
    /// Initial standard deviations (orientation, velocity, position, biases).
    pub init_std_rotation: f64,
    pub init_std_velocity: f64,
    pub init_std_position: f64,
    pub init_std_bias: f64,
    pub shape: ShapeSolverConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            noise: NoiseConfig::default(),
            contact_noise: ContactNoiseModel::Jacobian { cable_std: 0.01 },
            fallback_fk_std: 0.01,
            outlier_gate: Some(CHI2_3_999),
            max_condition_number: 1e12,
            debounce_on: 2,
            debounce_off: 2,
            init_std_rotation: 0.01,
            init_std_velocity: 0.1,
            init_std_position: 0.0,
            init_std_bias: 0.01,
            shape: ShapeSolverConfig::default(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        self.noise.validate()?;
        self.shape.validate()?;
        let std_ok = match self.contact_noise {
            ContactNoiseModel::Jacobian { cable_std } => cable_std >= 0.0,
            ContactNoiseModel::Empirical { std } => std >= 0.0,
        };
        if !std_ok || !(self.fallback_fk_std >= 0.0) {
            return Err(FilterError::InvalidConfig("contact noise std must be >= 0".into()));
        }
        if self.debounce_on == 0 || self.debounce_off == 0 {
            return Err(FilterError::InvalidConfig("debounce counts must be >= 1".into()));
        }
        if !(self.max_condition_number > 1.0) {
            return Err(FilterError::InvalidConfig("max_condition_number must exceed 1".into()));
        }
        Ok(())
    }

    /// Initial covariance with no active contacts.
    pub fn initial_covariance(&self) -> DMatrix<f64> {
        let mut diag = Vec::with_capacity(15);
        for s in [
            self.init_std_rotation,
            self.init_std_velocity,
            self.init_std_position,
            self.init_std_bias,
            self.init_std_bias,
        ] {
            diag.extend([s * s; 3]);
        }
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub group: GroupElement,
    /// Contact endcaps in column order: `d_k` belongs to `active_contacts[k]`.
    pub active_contacts: Vec<EndcapId>,
    pub bias: ImuBias,
    pub covariance: DMatrix<f64>,
    pub timestamp: f64,
}

impl EstimatorState {
    pub fn new(
        rotation: Rotation,
        velocity: Vector3<f64>,
        position: Vector3<f64>,
        bias: ImuBias,
        covariance: DMatrix<f64>,
        timestamp: f64,
    ) -> Result<Self, FilterError> {
        if covariance.shape() != (15, 15) {
            return Err(FilterError::InvalidConfig(format!(
                "initial covariance must be 15x15, got {:?}",
                covariance.shape()
            )));
        }
        let group = GroupElement::new(rotation, vec![velocity, position]).expect("two columns");
        Ok(EstimatorState {
            group,
            active_contacts: Vec::new(),
            bias,
            covariance,
            timestamp,
        })
    }

    pub fn dim(&self) -> usize {
        9 + 3 * self.active_contacts.len() + 6
    }

    pub fn rotation(&self) -> &Rotation {
        self.group.rotation()
    }

    pub fn velocity(&self) -> &Vector3<f64> {
        self.group.velocity()
    }

    pub fn position(&self) -> &Vector3<f64> {
        self.group.position()
    }

    pub fn contact_position(&self, id: EndcapId) -> Option<&Vector3<f64>> {
        self.contact_slot(id).map(|k| self.group.column(2 + k))
    }

    pub(crate) fn contact_slot(&self, id: EndcapId) -> Option<usize> {
        self.active_contacts.iter().position(|&c| c == id)
    }

    /// Index of the first bias row (gyro), followed by the accel bias.
    pub(crate) fn bias_index(&self) -> usize {
        9 + 3 * self.active_contacts.len()
    }
}

pub(crate) fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
}

/// Gyro bias, accel bias and roll/pitch from a stationary window.
///
/// Yaw is unobservable and set to zero; the accelerometer bias absorbs only
/// the magnitude mismatch between the mean specific force and gravity.
pub fn init_bias_calibration(
    stationary: &[ImuSample],
    gravity: &Vector3<f64>,
) -> Result<(ImuBias, Rotation), FilterError> {
    const MAX_GYRO_STD: f64 = 0.05;
    const MAX_ACCEL_STD: f64 = 0.5;
    let (Some(first), Some(last)) = (stationary.first(), stationary.last()) else {
        return Err(FilterError::CalibrationFailed("no samples".into()));
    };
    if last.timestamp - first.timestamp < 1.0 - 1e-9 {
        return Err(FilterError::CalibrationFailed(format!(
            "window spans {:.3} s, need at least 1 s",
            last.timestamp - first.timestamp
        )));
    }
    let n = stationary.len() as f64;
    let mean_g = stationary.iter().map(|s| s.gyro).sum::<Vector3<f64>>() / n;
    let mean_a = stationary.iter().map(|s| s.accel).sum::<Vector3<f64>>() / n;
    let std = |f: &dyn Fn(&ImuSample) -> Vector3<f64>, m: &Vector3<f64>| {
        let var = stationary.iter().map(|s| (f(s) - m).map(|x| x * x)).sum::<Vector3<f64>>() / n;
        var.map(f64::sqrt).max()
    };
    let (sg, sa) = (std(&|s| s.gyro, &mean_g), std(&|s| s.accel, &mean_a));
    if sg > MAX_GYRO_STD || sa > MAX_ACCEL_STD {
        return Err(FilterError::CalibrationFailed(format!(
            "motion detected: gyro std {sg:.4} rad/s, accel std {sa:.4} m/s²"
        )));
    }
    let roll = mean_a.y.atan2(mean_a.z);
    let pitch = (-mean_a.x).atan2((mean_a.y * mean_a.y + mean_a.z * mean_a.z).sqrt());
    let r0 = Rotation::from_euler(roll, pitch, 0.0);
    let bias = ImuBias {
        gyro: mean_g,
        accel: mean_a - r0.matrix().transpose() * (-gravity),
    };
    Ok((bias, r0))
}
