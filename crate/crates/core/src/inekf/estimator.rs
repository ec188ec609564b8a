//! Sensor-rate orchestration: IMU propagation, per-frame shape solves and
//! the debounced contact lifecycle.

use log::{debug, warn};
use nalgebra::Vector3;

use super::filter::{
    augment_contact, correct_contact, marginalize_contact, propagate, ContactCovariance, CorrectionOutcome,
    MAX_PROPAGATION_DT,
};
use super::{init_bias_calibration, ContactNoiseModel, ContactVector, EstimatorState, FilterConfig, FilterError, ImuBias, ImuSample};
use crate::liegroup::Rotation;
use crate::shape::{
    contact_frame, h_p, reconstruct_shape_warm, shape_jacobian, CableMeasurements, EndcapId, Multipliers, RobotShape,
    ShapeJacobian,
};

/// Largest accepted offset between a cable frame and its contact vector [s].
const ASSOCIATION_TOL: f64 = 5e-3;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub rotation: Rotation,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
    pub bias: ImuBias,
    pub timestamp: f64,
}

/// What happened while processing one cable/contact frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameReport {
    pub timestamp: f64,
    pub shape: Option<RobotShape>,
    pub shape_error: Option<String>,
    pub augmented: Vec<EndcapId>,
    pub marginalized: Vec<EndcapId>,
    pub corrections: Vec<(EndcapId, CorrectionOutcome)>,
    /// Set when the finite-difference Jacobian failed and the fallback
    /// covariance was used instead.
    pub jacobian_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct Estimator {
    cfg: FilterConfig,
    state: EstimatorState,
    held_imu: Option<ImuSample>,
    on_count: [usize; 6],
    off_count: [usize; 6],
    last_shape: Option<(RobotShape, Multipliers)>,
}

impl Estimator {
    pub fn new(cfg: FilterConfig, init: InitialState) -> Result<Self, FilterError> {
        cfg.validate()?;
        let state = EstimatorState::new(
            init.rotation,
            init.velocity,
            init.position,
            init.bias,
            cfg.initial_covariance(),
            init.timestamp,
        )?;
        Ok(Estimator {
            cfg,
            state,
            held_imu: None,
            on_count: [0; 6],
            off_count: [0; 6],
            last_shape: None,
        })
    }

    /// Starts at rest at the origin, with biases and roll/pitch from a
    /// stationary window; the clock starts at the last calibration sample.
    pub fn from_calibration(cfg: FilterConfig, stationary: &[ImuSample]) -> Result<Self, FilterError> {
        let (bias, rotation) = init_bias_calibration(stationary, &cfg.noise.gravity)?;
        let last = stationary.last().expect("calibration checked length");
        let mut est = Estimator::new(
            cfg,
            InitialState {
                rotation,
                velocity: Vector3::zeros(),
                position: Vector3::zeros(),
                bias,
                timestamp: last.timestamp,
            },
        )?;
        est.held_imu = Some(*last);
        Ok(est)
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    /// Propagates to `t` holding the latest IMU sample.
    fn advance_to(&mut self, t: f64) -> Result<(), FilterError> {
        if t < self.state.timestamp - TIME_EPS {
            return Err(FilterError::RejectedSample(format!(
                "time {t} precedes filter time {}",
                self.state.timestamp
            )));
        }
        let Some(imu) = self.held_imu else {
            self.state.timestamp = self.state.timestamp.max(t);
            return Ok(());
        };
        let mut remaining = t - self.state.timestamp;
        if remaining > MAX_PROPAGATION_DT {
            warn!("IMU gap of {remaining:.3} s before t = {t:.3}");
        }
        while remaining > TIME_EPS {
            let dt = remaining.min(MAX_PROPAGATION_DT);
            let frame = if self.state.active_contacts.is_empty() {
                Rotation::identity()
            } else {
                let g = self.cfg.noise.gravity.norm();
                contact_frame(&(imu.accel - self.state.bias.accel), g).rotation
            };
            propagate(&mut self.state, &imu, dt, &self.cfg.noise, &frame)?;
            remaining -= dt;
        }
        self.state.timestamp = t;
        Ok(())
    }

    /// Integrates up to the sample time and holds the sample until the next.
    pub fn process_imu(&mut self, imu: &ImuSample) -> Result<(), FilterError> {
        if let Some(prev) = self.held_imu {
            if imu.timestamp <= prev.timestamp {
                return Err(FilterError::RejectedSample(format!(
                    "IMU timestamp {} not after {}",
                    imu.timestamp, prev.timestamp
                )));
            }
        }
        self.advance_to(imu.timestamp)?;
        self.held_imu = Some(*imu);
        Ok(())
    }

    fn fk_covariance(&self, jac: Option<&ShapeJacobian>, id: EndcapId) -> ContactCovariance {
        match (self.cfg.contact_noise, jac) {
            (ContactNoiseModel::Empirical { std }, _) => ContactCovariance::isotropic(std),
            (ContactNoiseModel::Jacobian { cable_std }, Some(j)) => {
                let ji = j.endcap(id);
                ContactCovariance::Body(ji * ji.transpose() * (cable_std * cable_std))
            }
            (ContactNoiseModel::Jacobian { .. }, None) => ContactCovariance::isotropic(self.cfg.fallback_fk_std),
        }
    }

    /// Shape solve and contact lifecycle for one cable frame.
    ///
    /// Endcaps whose contact flag has dropped long enough are marginalized,
    /// active contacts still touching are corrected, and newly confirmed
    /// contacts are augmented, in that order.
    pub fn process_frame(
        &mut self,
        meas: &CableMeasurements,
        contacts: &ContactVector,
    ) -> Result<FrameReport, FilterError> {
        if (meas.timestamp - contacts.timestamp).abs() > ASSOCIATION_TOL {
            return Err(FilterError::RejectedSample(format!(
                "cable frame at {} and contact vector at {} are not associated",
                meas.timestamp, contacts.timestamp
            )));
        }
        self.advance_to(meas.timestamp)?;
        let mut report = FrameReport {
            timestamp: meas.timestamp,
            ..Default::default()
        };
        for i in 0..6 {
            if contacts.c[i] {
                self.on_count[i] += 1;
                self.off_count[i] = 0;
            } else {
                self.off_count[i] += 1;
                self.on_count[i] = 0;
            }
        }

        for id in EndcapId::all() {
            let active = self.state.contact_slot(id).is_some();
            if active && self.off_count[id.index()] >= self.cfg.debounce_off {
                marginalize_contact(&mut self.state, id)?;
                report.marginalized.push(id);
            }
        }

        let prior = self.last_shape.as_ref();
        let solved = reconstruct_shape_warm(meas, prior.map(|p| &p.0), prior.map(|p| &p.1), &self.cfg.shape);
        let (shape, mult) = match solved {
            Ok((shape, mult, _)) => (shape, mult),
            Err(e) => {
                debug!("frame {:.3}: shape solve failed: {e}", meas.timestamp);
                report.shape_error = Some(e.to_string());
                return Ok(report);
            }
        };

        let to_correct: Vec<EndcapId> = self
            .state
            .active_contacts
            .iter()
            .copied()
            .filter(|id| contacts.c[id.index()])
            .collect();
        let to_augment: Vec<EndcapId> = EndcapId::all()
            .filter(|id| self.state.contact_slot(*id).is_none() && self.on_count[id.index()] >= self.cfg.debounce_on)
            .collect();

        let mut jac = None;
        if matches!(self.cfg.contact_noise, ContactNoiseModel::Jacobian { .. })
            && !(to_correct.is_empty() && to_augment.is_empty())
        {
            match shape_jacobian(meas, &shape, Some(&mult), &self.cfg.shape) {
                Ok(j) => jac = Some(j),
                Err(e) => {
                    debug!("frame {:.3}: {e}; using fallback covariance", meas.timestamp);
                    report.jacobian_fallback = true;
                }
            }
        }

        for id in to_correct {
            let fk = self.fk_covariance(jac.as_ref(), id);
            let outcome = correct_contact(
                &mut self.state,
                id,
                &h_p(&shape, id),
                &fk,
                self.cfg.outlier_gate,
                self.cfg.max_condition_number,
            )?;
            if !matches!(outcome, CorrectionOutcome::Applied { .. }) {
                debug!("frame {:.3}: correction of {id} skipped: {outcome:?}", meas.timestamp);
            }
            report.corrections.push((id, outcome));
        }
        for id in to_augment {
            let fk = self.fk_covariance(jac.as_ref(), id);
            augment_contact(&mut self.state, id, &h_p(&shape, id), &fk)?;
            report.augmented.push(id);
        }

        self.last_shape = Some((shape.clone(), mult));
        report.shape = Some(shape);
        Ok(report)
    }

    /// One IMU sample, optionally followed by the cable frame and contact
    /// vector stamped at the same time.
    pub fn step(
        &mut self,
        imu: &ImuSample,
        frame: Option<(&CableMeasurements, &ContactVector)>,
    ) -> Result<Option<FrameReport>, FilterError> {
        self.process_imu(imu)?;
        frame.map(|(m, c)| self.process_frame(m, c)).transpose()
    }
}
