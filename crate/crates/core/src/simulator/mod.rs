//! Kinematic rolling simulator producing ground truth and sensor streams.
//!
//! The prism alternates smooth pivots about a support edge with settle
//! phases in which the raised endcaps swing and return while the three
//! grounded endcaps stay put. Turns use a tapered prism, which rolls along
//! an arc like a cone. IMU samples are interval-consistent: strapdown
//! integration with a zero-order hold reproduces the truth at every sample.

mod motion;
mod noise;

use nalgebra::Vector3;
use thiserror::Error;

pub use motion::Terrain;
pub use noise::{corrupt, SensorNoise};

use crate::inekf::{ContactVector, ImuSample};
use crate::liegroup::Rotation;
use crate::shape::{body_frame_from_world, CableMeasurements, PrismParams, RobotShape};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("endcap {endcap} left the terrain patch at t = {t:.2} s")]
    OffPatch { t: f64, endcap: usize },
    #[error("unsupported maneuver: {0}")]
    Unsupported(String),
}

/// One entry of the maneuver script.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Maneuver {
    RollForward(usize),
    RollBackward(usize),
    TurnLeft(usize),
    TurnRight(usize),
    /// Stand still for the given number of seconds.
    Dwell(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub rod_length: f64,
    pub d_offset: f64,
    /// Prism used for straight rolling.
    pub prism: PrismParams,
    /// Radius difference from the mean on each end of the turning prism [m].
    pub turn_taper: f64,
    pub script: Vec<Maneuver>,
    pub terrain: Terrain,
    /// Endcaps must stay within `|x|, |y| <= patch_extent` [m].
    pub patch_extent: f64,
    pub imu_rate: f64,
    pub cable_rate: f64,
    pub initial_dwell: f64,
    pub final_dwell: f64,
    pub pivot_duration: f64,
    pub settle_duration: f64,
    /// Peak swing of the raised endcaps during a settle [rad].
    pub breathing_amplitude: f64,
    /// Endcaps closer than this to the ground count as in contact [m].
    pub contact_threshold: f64,
    pub gravity: Vector3<f64>,
    pub noise: SensorNoise,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            rod_length: 1.45,
            d_offset: 0.0,
            prism: PrismParams::default(),
            turn_taper: 0.05,
            script: Vec::new(),
            terrain: Terrain::Flat,
            patch_extent: 50.0,
            imu_rate: 200.0,
            cable_rate: 100.0,
            initial_dwell: 3.0,
            final_dwell: 1.0,
            pivot_duration: 1.5,
            settle_duration: 2.5,
            breathing_amplitude: 0.1,
            contact_threshold: 1e-3,
            gravity: Vector3::new(0.0, 0.0, -9.81),
            noise: SensorNoise::default(),
        }
    }
}

impl SimConfig {
    /// Straight roll of about 7.5 m.
    pub fn forward() -> Self {
        SimConfig {
            script: vec![Maneuver::RollForward(11)],
            ..Default::default()
        }
    }

    /// Straight roll of about 6.7 m in the opposite direction.
    pub fn backward() -> Self {
        SimConfig {
            script: vec![Maneuver::RollBackward(11)],
            ..Default::default()
        }
    }

    /// Arc of about 15.7 m curving to the right.
    pub fn right_turn() -> Self {
        SimConfig {
            script: vec![Maneuver::TurnRight(23)],
            ..Default::default()
        }
    }

    /// Forward roll across a 15° downhill followed by a 15° uphill.
    pub fn valley() -> Self {
        SimConfig {
            script: vec![Maneuver::RollForward(11)],
            terrain: Terrain::Valley {
                start: 1.5,
                slope_length: 2.5,
                angle: 15f64.to_radians(),
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        if !(self.imu_rate > 0.0 && self.cable_rate > 0.0) {
            return bad("rates must be > 0");
        }
        if !(self.rod_length > 0.0) {
            return bad("rod_length must be > 0");
        }
        if !(self.initial_dwell >= 3.0) {
            return bad("initial_dwell must be at least 3 s");
        }
        if !(self.pivot_duration > 0.0 && self.settle_duration >= 0.0 && self.final_dwell >= 0.0) {
            return bad("phase durations must be positive");
        }
        if self.script.iter().any(|m| matches!(m, Maneuver::Dwell(s) if !(*s >= 0.0))) {
            return bad("dwell durations must be >= 0");
        }
        let p = &self.prism;
        if !(p.bottom_radius > self.turn_taper && p.top_radius > self.turn_taper && self.turn_taper >= 0.0) {
            return bad("turn_taper must be smaller than the prism radii");
        }
        if !(self.contact_threshold > 0.0) {
            return bad("contact_threshold must be > 0");
        }
        self.noise.validate()
    }
}

/// True state at one cable/contact sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub timestamp: f64,
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    /// World-frame velocity of the body origin [m/s].
    pub velocity: Vector3<f64>,
    pub shape: RobotShape,
    pub contacts: [bool; 6],
    /// World endcap positions.
    pub endcaps: [Vector3<f64>; 6],
}

/// Time-ordered sensor samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorStreams {
    pub imu: Vec<ImuSample>,
    pub cables: Vec<CableMeasurements>,
    pub contacts: Vec<ContactVector>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    /// One frame per cable sample.
    pub truth: Vec<GroundTruthFrame>,
    /// Noise-free streams.
    pub streams: SensorStreams,
    pub duration: f64,
}

fn grid(duration: f64, rate: f64) -> impl Iterator<Item = f64> {
    let n = (duration * rate + 1e-9).floor() as usize + 1;
    (0..n).map(move |k| k as f64 / rate)
}

/// Runs the maneuver script and returns ground truth with clean streams.
pub fn generate(cfg: &SimConfig) -> Result<Simulation, SimError> {
    cfg.validate()?;
    let timeline = motion::plan(cfg)?;
    let duration = timeline.duration();
    let pose = |t: f64| {
        let (r, p, _) = body_frame_from_world(&timeline.endcaps(t), cfg.rod_length, cfg.d_offset);
        (r, p)
    };
    let h = 1e-3;
    let velocity = |t: f64| {
        let p = |s: f64| pose(t + s * h).1;
        (p(-2.0) - p(2.0) + (p(1.0) - p(-1.0)) * 8.0) / (12.0 * h)
    };

    let dt = 1.0 / cfg.imu_rate;
    let imu = grid(duration, cfg.imu_rate)
        .map(|t| {
            let (r0, _) = pose(t);
            let (r1, _) = pose(t + dt);
            let gyro = r0.inverse().compose(&r1).log() / dt;
            let accel = r0.inverse().apply(&((velocity(t + dt) - velocity(t)) / dt - cfg.gravity));
            ImuSample {
                timestamp: t,
                accel,
                gyro,
            }
        })
        .collect();

    let mut truth = Vec::new();
    let mut cables = Vec::new();
    let mut contacts = Vec::new();
    for t in grid(duration, cfg.cable_rate) {
        let w = timeline.endcaps(t);
        let (rotation, position, mut shape) = body_frame_from_world(&w, cfg.rod_length, cfg.d_offset);
        shape.timestamp = t;
        let c = w.map(|p| cfg.terrain.clearance(&p) < cfg.contact_threshold);
        cables.push(CableMeasurements::from_shape(t, &shape.q));
        contacts.push(ContactVector { timestamp: t, c });
        truth.push(GroundTruthFrame {
            timestamp: t,
            rotation,
            position,
            velocity: velocity(t),
            shape,
            contacts: c,
            endcaps: w,
        });
    }
    Ok(Simulation {
        truth,
        streams: SensorStreams { imu, cables, contacts },
        duration,
    })
}

/// Arc length of the body-origin path [m].
pub fn path_length(truth: &[GroundTruthFrame]) -> f64 {
    truth.windows(2).map(|w| (w[1].position - w[0].position).norm()).sum()
}
