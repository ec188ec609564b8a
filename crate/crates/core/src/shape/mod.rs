//! Shape reconstruction for the 3-bar prism.
//!
//! Endcaps `0, 2, 4` sit on one side of the prism and `1, 3, 5` on the other;
//! rods join `0-1`, `2-3` and `4-5`. The body frame lives on the base rod
//! `0-1` with its z-axis along the rod, so `q0` and `q1` are constants and
//! only the remaining twelve coordinates are solved for.
//!
//! Solving only the nine measured distances leaves the spin of the structure
//! about the base rod free. [`geometry::fix_gauge`] pins it by placing the
//! centroid of endcaps `2..=5` on the positive body x half-plane; the
//! simulator uses the same convention when it defines the body frame.

mod geometry;
mod kinematics;
mod solver;

pub use geometry::{
    body_frame_from_world, check_constraints, fix_gauge, mirror, pairwise_distance_rmse, ConstraintReport,
    PrismParams,
};
pub use kinematics::{contact_frame, h_p, h_p_with_radius, j_p, shape_jacobian, ContactFrame, ShapeJacobian};
pub use solver::{reconstruct_shape, reconstruct_shape_warm, Multipliers, SolveStats};

use nalgebra::Vector3;
use thiserror::Error;

/// Cable endpoints in their canonical order.
pub const CABLES: [(usize, usize); 9] = [
    (0, 4),
    (0, 2),
    (2, 4),
    (1, 5),
    (1, 3),
    (3, 5),
    (1, 4),
    (0, 3),
    (2, 5),
];

/// Rod endpoints, base rod first.
pub const RODS: [(usize, usize); 3] = [(0, 1), (2, 3), (4, 5)];

pub const NUM_ENDCAPS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("endcap id {0} out of range 0..6")]
    InvalidEndcap(usize),
    #[error("cable ({0},{1}) is not one of the nine actuated cables")]
    UnknownCable(usize, usize),
    #[error("missing cable ({0},{1})")]
    MissingCable(usize, usize),
    #[error("cable ({i},{j}) length {length} outside (0, {max})")]
    LengthOutOfRange {
        i: usize,
        j: usize,
        length: f64,
        max: f64,
    },
    #[error("measurement rejected: {0}")]
    MeasurementRejected(String),
    #[error("shape solver failed: {reason}")]
    SolverFailure {
        reason: String,
        best: Box<RobotShape>,
        report: Box<ConstraintReport>,
    },
    #[error("contact Jacobian unavailable: {0}")]
    JacobianUnavailable(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

/// Endcap index in `0..6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EndcapId(u8);

impl EndcapId {
    pub fn new(i: usize) -> Result<Self, ShapeError> {
        if i < NUM_ENDCAPS {
            Ok(EndcapId(i as u8))
        } else {
            Err(ShapeError::InvalidEndcap(i))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = EndcapId> {
        (0..NUM_ENDCAPS as u8).map(EndcapId)
    }
}

impl std::fmt::Display for EndcapId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Position of `(i, j)` in [`CABLES`], accepting either orientation.
pub fn cable_index(i: usize, j: usize) -> Option<usize> {
    CABLES
        .iter()
        .position(|&(a, b)| (a, b) == (i, j) || (b, a) == (i, j))
}

/// One reading of the nine cable lengths, stored in [`CABLES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct CableMeasurements {
    pub timestamp: f64,
    lengths: [f64; 9],
}

impl CableMeasurements {
    /// Validates that every length lies in `(0, 2 L_rod)`.
    pub fn new(timestamp: f64, lengths: [f64; 9], rod_length: f64) -> Result<Self, ShapeError> {
        let max = 2.0 * rod_length;
        for (k, &l) in lengths.iter().enumerate() {
            if !(l > 0.0 && l < max) {
                let (i, j) = CABLES[k];
                return Err(ShapeError::LengthOutOfRange { i, j, length: l, max });
            }
        }
        Ok(CableMeasurements { timestamp, lengths })
    }

    /// Builds a measurement from `(i, j, length)` triples in any order.
    pub fn from_pairs(
        timestamp: f64,
        pairs: &[(usize, usize, f64)],
        rod_length: f64,
    ) -> Result<Self, ShapeError> {
        let mut lengths = [f64::NAN; 9];
        for &(i, j, l) in pairs {
            let k = cable_index(i, j).ok_or(ShapeError::UnknownCable(i, j))?;
            lengths[k] = l;
        }
        if let Some(k) = lengths.iter().position(|l| l.is_nan()) {
            return Err(ShapeError::MissingCable(CABLES[k].0, CABLES[k].1));
        }
        Self::new(timestamp, lengths, rod_length)
    }

    /// Exact distances between the cable endpoints of `q`.
    pub fn from_shape(timestamp: f64, q: &[Vector3<f64>; 6]) -> Self {
        let lengths = CABLES.map(|(i, j)| (q[i] - q[j]).norm());
        CableMeasurements { timestamp, lengths }
    }

    /// Lengths without range validation; used for finite-difference probes.
    pub(crate) fn from_raw(timestamp: f64, lengths: [f64; 9]) -> Self {
        CableMeasurements { timestamp, lengths }
    }

    pub fn lengths(&self) -> &[f64; 9] {
        &self.lengths
    }

    pub fn length(&self, i: usize, j: usize) -> Option<f64> {
        cable_index(i, j).map(|k| self.lengths[k])
    }
}

/// Endcap positions in the body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotShape {
    pub timestamp: f64,
    pub q: [Vector3<f64>; 6],
    /// Sum of squared cable residuals at the solution [m²].
    pub residual: f64,
}

impl RobotShape {
    pub fn new(timestamp: f64, q: [Vector3<f64>; 6]) -> Self {
        RobotShape {
            timestamp,
            q,
            residual: 0.0,
        }
    }

    pub fn endcap(&self, id: EndcapId) -> &Vector3<f64> {
        &self.q[id.index()]
    }

    /// Distances between the cable endpoints, in [`CABLES`] order.
    pub fn cable_lengths(&self) -> [f64; 9] {
        CABLES.map(|(i, j)| (self.q[i] - self.q[j]).norm())
    }

    /// Sum of squared differences between modelled and given cable lengths.
    pub fn objective(&self, lengths: &[f64; 9]) -> f64 {
        self.cable_lengths()
            .iter()
            .zip(lengths)
            .map(|(a, b)| (a - b).powi(2))
            .sum()
    }
}

/// Settings for [`reconstruct_shape`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSolverConfig {
    /// Rod length [m].
    pub rod_length: f64,
    /// IMU offset from the base-rod centre towards endcap 0 [m].
    pub d_offset: f64,
    /// Tolerance on the rod-length equalities [m].
    pub rod_tol: f64,
    /// Margin for the strict inequalities, `g(q) >= margin`.
    pub inequality_margin: f64,
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    /// Bound on the infinity norm of the Lagrangian gradient.
    pub convergence_tol: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// Slack allowed in the cable triangle inequalities before rejection [m].
    pub triangle_tol: f64,
    /// Additive per-cable calibration, in [`CABLES`] order [m].
    pub cable_offsets: [f64; 9],
    /// Finite-difference step for the contact Jacobian [m].
    pub jacobian_step: f64,
    /// Cold-start prism geometry.
    pub cold_start: PrismParams,
}

impl Default for ShapeSolverConfig {
    fn default() -> Self {
        ShapeSolverConfig {
            rod_length: 1.45,
            d_offset: 0.0,
            rod_tol: 1e-6,
            inequality_margin: 1e-4,
            max_outer_iterations: 40,
            max_inner_iterations: 60,
            convergence_tol: 1e-9,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_penalty: 1e10,
            triangle_tol: 1e-3,
            cable_offsets: [0.0; 9],
            jacobian_step: 1e-4,
            cold_start: PrismParams::symmetric(0.5, 2.0 * std::f64::consts::PI / 3.0),
        }
    }
}

impl ShapeSolverConfig {
    pub fn validate(&self) -> Result<(), ShapeError> {
        let bad = |m: &str| Err(ShapeError::InvalidConfig(m.to_string()));
        if !(self.rod_length > 0.0) {
            return bad("rod_length must be > 0");
        }
        if !(self.rod_tol > 0.0) {
            return bad("rod_tol must be > 0");
        }
        if !(self.inequality_margin > 0.0) {
            return bad("inequality_margin must be > 0");
        }
        if !(self.jacobian_step > 0.0) {
            return bad("jacobian_step must be > 0");
        }
        if self.penalty_growth <= 1.0 || self.initial_penalty <= 0.0 {
            return bad("penalty schedule must start > 0 and grow by > 1");
        }
        Ok(())
    }

    /// Fixed body-frame position of endcap 0.
    pub fn q0(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, 0.5 * self.rod_length - self.d_offset)
    }

    /// Fixed body-frame position of endcap 1.
    pub fn q1(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -0.5 * self.rod_length - self.d_offset)
    }

    /// Cold-start shape: the symmetric prism from `cold_start` in the body frame.
    pub fn canonical_shape(&self) -> RobotShape {
        self.cold_start.body_shape(self.rod_length, self.d_offset)
    }
}
