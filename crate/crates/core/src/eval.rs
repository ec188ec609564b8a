//! Trajectory comparison: initial-segment alignment, final drift and
//! relative pose error per metre travelled.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::liegroup::Rotation;

/// Pairs further apart in time are not associated [s].
pub const ASSOCIATION_TOL: f64 = 0.01;
/// Ground-truth distance spanned by one relative-pose segment [m].
pub const RPE_SEGMENT: f64 = 1.0;
pub const DEFAULT_ALIGN_WINDOW: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("timestamps must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("alignment needs at least 3 associated poses in the window, found {0}")]
    InsufficientOverlap(usize),
    #[error("no estimate pose lies within 10 ms of a ground-truth pose")]
    EmptyAssociation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub timestamp: f64,
    pub rotation: Rotation,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Result<Self, EvalError> {
        if let Some(k) = poses.windows(2).position(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(EvalError::NotIncreasing(k + 1));
        }
        Ok(Trajectory { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|p| t.apply(p)).collect(),
        }
    }

    /// Index of the pose nearest in time to `t`, if within `tol`.
    pub fn nearest(&self, t: f64, tol: f64) -> Option<usize> {
        let k = self.poses.partition_point(|p| p.timestamp < t);
        [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|&i| i < self.poses.len())
            .map(|i| (i, (self.poses[i].timestamp - t).abs()))
            .filter(|(_, d)| *d <= tol)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

/// `x ↦ R x + t`, acting on poses from the left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Pose) -> Pose {
        Pose {
            timestamp: p.timestamp,
            rotation: self.rotation.compose(&p.rotation),
            position: self.rotation.apply(&p.position) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        RigidTransform {
            rotation: r,
            translation: -r.apply(&self.translation),
        }
    }
}

/// `(est index, gt index)` pairs of mutually nearest poses within
/// [`ASSOCIATION_TOL`]; each pose is used at most once.
pub fn associate(est: &Trajectory, gt: &Trajectory) -> Vec<(usize, usize)> {
    gt.poses
        .iter()
        .enumerate()
        .filter_map(|(j, g)| est.nearest(g.timestamp, ASSOCIATION_TOL).map(|i| (i, j)))
        .filter(|&(i, j)| gt.nearest(est.poses[i].timestamp, ASSOCIATION_TOL) == Some(j))
        .collect()
}

/// Rigid transform mapping the estimate onto ground truth over the first
/// `window` seconds, and the whole estimate with it applied.
///
/// Positions and orientations are fitted jointly (`Σ‖R p̂ + t − p‖² +
/// ‖R R̂ − R_gt‖²_F`), so the rotation is determined even when the robot
/// stands still during the window.
pub fn align_initial(est: &Trajectory, gt: &Trajectory, window: f64) -> Result<(RigidTransform, Trajectory), EvalError> {
    let t0 = gt.poses.first().map_or(0.0, |p| p.timestamp);
    let pairs: Vec<(usize, usize)> = associate(est, gt)
        .into_iter()
        .filter(|&(_, j)| gt.poses[j].timestamp <= t0 + window + 1e-9)
        .collect();
    if pairs.len() < 3 {
        return Err(EvalError::InsufficientOverlap(pairs.len()));
    }
    let n = pairs.len() as f64;
    let ce = pairs.iter().map(|&(i, _)| est.poses[i].position).sum::<Vector3<f64>>() / n;
    let cg = pairs.iter().map(|&(_, j)| gt.poses[j].position).sum::<Vector3<f64>>() / n;
    let mut m = Matrix3::zeros();
    for &(i, j) in &pairs {
        let (e, g) = (&est.poses[i], &gt.poses[j]);
        m += (g.position - cg) * (e.position - ce).transpose();
        m += g.rotation.matrix() * e.rotation.matrix().transpose();
    }
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = (u * vt).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, s)) * vt;
    let rotation = Rotation::from_matrix(r);
    let transform = RigidTransform {
        rotation,
        translation: cg - rotation.apply(&ce),
    };
    Ok((transform, est.transformed(&transform)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// Ground-truth arc length [m].
    pub length: f64,
    pub final_drift: f64,
    pub drift_percent: f64,
    /// RMSE of the relative translation error per metre [m/m].
    pub rpe_translation: f64,
    /// RMSE of the relative rotation error per metre [deg/m].
    pub rpe_rotation: f64,
    pub rpe_segments: usize,
}

pub fn drift_percentage(final_drift: f64, length: f64) -> f64 {
    if length > 0.0 {
        100.0 * final_drift / length
    } else {
        0.0
    }
}

/// Drift and relative pose error of an already aligned estimate.
pub fn drift_metrics(est: &Trajectory, gt: &Trajectory) -> Result<MetricsReport, EvalError> {
    let pairs = associate(est, gt);
    let (&(ie, ig), _) = pairs.split_last().ok_or(EvalError::EmptyAssociation)?;
    let g = |k: usize| &gt.poses[pairs[k].1];
    let e = |k: usize| &est.poses[pairs[k].0];
    let mut arc = vec![0.0];
    for k in 1..pairs.len() {
        arc.push(arc[k - 1] + (g(k).position - g(k - 1).position).norm());
    }
    let length = *arc.last().unwrap();
    let final_drift = (est.poses[ie].position - gt.poses[ig].position).norm();

    let (mut sum_t, mut sum_r, mut count) = (0.0, 0.0, 0usize);
    let mut start = 0;
    for k in 1..pairs.len() {
        let seg = arc[k] - arc[start];
        if seg < RPE_SEGMENT {
            continue;
        }
        let rel = |a: &Pose, b: &Pose| {
            let ri = a.rotation.inverse();
            (ri.compose(&b.rotation), ri.apply(&(b.position - a.position)))
        };
        let (rg, tg) = rel(g(start), g(k));
        let (re, te) = rel(e(start), e(k));
        let err_r = rg.inverse().compose(&re);
        let err_t = rg.inverse().apply(&(te - tg));
        sum_t += (err_t.norm() / seg).powi(2);
        sum_r += (err_r.angle().to_degrees() / seg).powi(2);
        count += 1;
        start = k;
    }
    let rms = |s: f64| if count > 0 { (s / count as f64).sqrt() } else { 0.0 };
    Ok(MetricsReport {
        length,
        final_drift,
        drift_percent: drift_percentage(final_drift, length),
        rpe_translation: rms(sum_t),
        rpe_rotation: rms(sum_r),
        rpe_segments: count,
    })
}

/// Aligns over the initial window, then computes the metrics.
pub fn evaluate(est: &Trajectory, gt: &Trajectory, window: f64) -> Result<(RigidTransform, MetricsReport), EvalError> {
    let (t, aligned) = align_initial(est, gt, window)?;
    Ok((t, drift_metrics(&aligned, gt)?))
}
