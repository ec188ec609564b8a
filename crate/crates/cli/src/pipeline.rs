//! Runs the estimator over a sensor stream.

use std::time::Instant;

use tensegrity_core::eval::{Pose, Trajectory};
use tensegrity_core::inekf::{ContactVector, Estimator, FilterConfig, FilterError, ImuSample};
use tensegrity_core::shape::CableMeasurements;
use tensegrity_core::simulator::SensorStreams;

/// One sensor record.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Imu(ImuSample),
    Cable(CableMeasurements),
    Contact(ContactVector),
}

impl Event {
    pub fn timestamp(&self) -> f64 {
        match self {
            Event::Imu(s) => s.timestamp,
            Event::Cable(c) => c.timestamp,
            Event::Contact(c) => c.timestamp,
        }
    }

    fn order(&self) -> u8 {
        match self {
            Event::Imu(_) => 0,
            Event::Cable(_) => 1,
            Event::Contact(_) => 2,
        }
    }
}

/// Merges the three channels into one time-ordered stream; at equal
/// timestamps IMU comes first, then cables, then contacts.
pub fn merge(streams: &SensorStreams) -> Vec<Event> {
    let mut events: Vec<Event> = streams
        .imu
        .iter()
        .map(|s| Event::Imu(*s))
        .chain(streams.cables.iter().map(|c| Event::Cable(c.clone())))
        .chain(streams.contacts.iter().map(|c| Event::Contact(*c)))
        .collect();
    sort_events(&mut events);
    events
}

pub fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| a.timestamp().total_cmp(&b.timestamp()).then(a.order().cmp(&b.order())));
}

/// Per-frame shape reconstruction result.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub residual: Option<f64>,
    pub solve_seconds: f64,
    pub contacts: usize,
    pub error: Option<String>,
    pub q: Option<[nalgebra::Vector3<f64>; 6]>,
}

#[derive(Debug, Clone)]
pub struct EstimateOutput {
    pub trajectory: Trajectory,
    pub frames: Vec<FrameRecord>,
}

/// Calibrates on the first `calibration_window` seconds of IMU data, then
/// filters the rest. One pose is reported per processed frame.
pub fn run_estimator(events: &[Event], cfg: &FilterConfig, calibration_window: f64) -> Result<EstimateOutput, FilterError> {
    let t0 = events.first().map_or(0.0, Event::timestamp);
    let t_cal = t0 + calibration_window;
    let stationary: Vec<ImuSample> = events
        .iter()
        .filter_map(|e| match e {
            Event::Imu(s) if s.timestamp <= t_cal + 1e-9 => Some(*s),
            _ => None,
        })
        .collect();
    let mut est = Estimator::from_calibration(cfg.clone(), &stationary)?;
    let start = est.state().timestamp;
    let mut poses = Vec::new();
    let mut frames = Vec::new();
    let mut cable: Option<&CableMeasurements> = None;
    let mut contact: Option<&ContactVector> = None;
    for e in events.iter().filter(|e| e.timestamp() > start + 1e-9) {
        match e {
            Event::Imu(s) => est.process_imu(s)?,
            Event::Cable(c) => cable = Some(c),
            Event::Contact(c) => contact = Some(c),
        }
        let (Some(m), Some(c)) = (cable, contact) else {
            continue;
        };
        if (m.timestamp - c.timestamp).abs() > 5e-3 {
            continue;
        }
        cable = None;
        contact = None;
        let clock = Instant::now();
        let report = est.process_frame(m, c)?;
        let elapsed = clock.elapsed().as_secs_f64();
        let s = est.state();
        poses.push(Pose {
            timestamp: report.timestamp,
            rotation: *s.rotation(),
            position: *s.position(),
        });
        frames.push(FrameRecord {
            timestamp: report.timestamp,
            residual: report.shape.as_ref().map(|q| q.residual),
            solve_seconds: elapsed,
            contacts: s.active_contacts.len(),
            error: report.shape_error,
            q: report.shape.map(|q| q.q),
        });
    }
    let trajectory = Trajectory::new(poses).expect("frames are processed in time order");
    Ok(EstimateOutput { trajectory, frames })
}
