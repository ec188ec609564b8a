//! Terrain, rolling geometry and the piecewise motion timeline.

use nalgebra::Vector3;

use super::{Maneuver, SimConfig, SimError};
use crate::liegroup::Rotation;
use crate::shape::PrismParams;

/// Ground height as a function of horizontal position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Terrain {
    Flat,
    /// Downhill then uphill at `angle` along +x, starting at `start`, each
    /// slope `slope_length` long horizontally; flat elsewhere.
    Valley { start: f64, slope_length: f64, angle: f64 },
}

impl Terrain {
    pub fn height(&self, x: f64, _y: f64) -> f64 {
        match *self {
            Terrain::Flat => 0.0,
            Terrain::Valley {
                start,
                slope_length,
                angle,
            } => {
                let s = x - start;
                let t = angle.tan();
                if s <= 0.0 || s >= 2.0 * slope_length {
                    0.0
                } else if s <= slope_length {
                    -s * t
                } else {
                    -(2.0 * slope_length - s) * t
                }
            }
        }
    }

    /// Height above the terrain at `p`.
    pub fn clearance(&self, p: &Vector3<f64>) -> f64 {
        p.z - self.height(p.x, p.y)
    }
}

/// Side faces of the prism in rolling order; each has one endcap per rod.
pub(crate) const RING_FACES: [[usize; 3]; 6] = [[0, 2, 5], [1, 2, 5], [1, 2, 4], [1, 3, 4], [0, 3, 4], [0, 3, 5]];
/// `RING_EDGES[k]` is shared by faces `k` and `k + 1`.
pub(crate) const RING_EDGES: [[usize; 2]; 6] = [[2, 5], [1, 2], [1, 4], [3, 4], [0, 3], [0, 5]];

type Endcaps = [Vector3<f64>; 6];

pub(crate) fn smootherstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// Rises from 0 to 1 at `t = 0.5` and back, flat to second order at both ends.
pub(crate) fn bump(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    64.0 * (t * (1.0 - t)).powi(3)
}

fn rotate_about(w: &Endcaps, anchor: &Vector3<f64>, axis: &Vector3<f64>, angle: f64) -> Endcaps {
    let r = Rotation::from_axis_angle(axis, angle);
    w.map(|p| anchor + r.apply(&(p - anchor)))
}

fn centroid(w: &Endcaps) -> Vector3<f64> {
    w.iter().sum::<Vector3<f64>>() / 6.0
}

/// Places a prism-frame shape with `face` on the horizontal plane through
/// `targets`, rotated and shifted in that plane to best match them.
pub(crate) fn place_on_plane(q: &Endcaps, face: [usize; 3], targets: &[Vector3<f64>; 3]) -> Endcaps {
    let [a, b, c] = face.map(|i| q[i]);
    let mut n = (b - a).cross(&(c - a)).normalize();
    if n.dot(&(centroid(q) - a)) > 0.0 {
        n = -n;
    }
    let down = -Vector3::z();
    let axis = n.cross(&down);
    let r1 = if axis.norm() < 1e-12 {
        if n.dot(&down) > 0.0 {
            Rotation::identity()
        } else {
            Rotation::from_axis_angle(&Vector3::x(), std::f64::consts::PI)
        }
    } else {
        Rotation::from_axis_angle(&axis, axis.norm().atan2(n.dot(&down)))
    };
    let p = q.map(|x| r1.apply(&x));
    let pf = face.map(|i| p[i]);
    let mp = pf.iter().sum::<Vector3<f64>>() / 3.0;
    let mt = targets.iter().sum::<Vector3<f64>>() / 3.0;
    let (mut sc, mut ss) = (0.0, 0.0);
    for k in 0..3 {
        let (u, v) = (pf[k] - mp, targets[k] - mt);
        sc += u.x * v.x + u.y * v.y;
        ss += u.x * v.y - u.y * v.x;
    }
    let rz = Rotation::from_axis_angle(&Vector3::z(), ss.atan2(sc));
    p.map(|x| rz.apply(&(x - mp)) + mt)
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Motion {
    Hold,
    /// Rigid rotation about the support edge through `anchor`.
    Pivot {
        anchor: Vector3<f64>,
        axis: Vector3<f64>,
        angle: f64,
    },
    /// Raised endcaps swing about the vertical through their grounded rod
    /// partner and return; `(raised, grounded)` per rod.
    Breathe { pairs: [(usize, usize); 3], amplitude: f64 },
    /// Interpolates the prism parameters while resting on `face`.
    Morph {
        from: PrismParams,
        to: PrismParams,
        face: [usize; 3],
        targets: [Vector3<f64>; 3],
        rod_length: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Phase {
    pub start: f64,
    pub duration: f64,
    pub w0: Endcaps,
    pub motion: Motion,
}

impl Phase {
    pub fn endcaps(&self, t: f64) -> Endcaps {
        let tau = if self.duration > 0.0 {
            ((t - self.start) / self.duration).clamp(0.0, 1.0)
        } else {
            1.0
        };
        match &self.motion {
            Motion::Hold => self.w0,
            Motion::Pivot { anchor, axis, angle } => rotate_about(&self.w0, anchor, axis, angle * smootherstep(tau)),
            Motion::Breathe { pairs, amplitude } => {
                let mut w = self.w0;
                let r = Rotation::from_axis_angle(&Vector3::z(), amplitude * bump(tau));
                for &(up, down) in pairs {
                    w[up] = self.w0[down] + r.apply(&(self.w0[up] - self.w0[down]));
                }
                w
            }
            Motion::Morph {
                from,
                to,
                face,
                targets,
                rod_length,
            } => {
                let s = smootherstep(tau);
                let lerp = |a: f64, b: f64| a + (b - a) * s;
                let p = PrismParams {
                    bottom_radius: lerp(from.bottom_radius, to.bottom_radius),
                    top_radius: lerp(from.top_radius, to.top_radius),
                    twist: lerp(from.twist, to.twist),
                };
                place_on_plane(&p.world_endcaps(*rod_length), *face, targets)
            }
        }
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// Motion of all six endcaps over the whole run.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Timeline {
    pub phases: Vec<Phase>,
}

impl Timeline {
    pub fn duration(&self) -> f64 {
        self.phases.last().map_or(0.0, Phase::end)
    }

    pub fn endcaps(&self, t: f64) -> Endcaps {
        let idx = self.phases.partition_point(|p| p.end() <= t);
        let phase = &self.phases[idx.min(self.phases.len() - 1)];
        phase.endcaps(t)
    }
}

/// Which prism is used for a maneuver.
#[derive(Debug, Clone, Copy, PartialEq)]
enum ShapeClass {
    Symmetric,
    /// Narrow end of the taper on the robot's right or left.
    Taper { right: bool },
}

struct Planner<'a> {
    cfg: &'a SimConfig,
    phases: Vec<Phase>,
    w: Endcaps,
    face: usize,
    params: PrismParams,
    t: f64,
}

impl Planner<'_> {
    fn push(&mut self, duration: f64, motion: Motion) {
        let phase = Phase {
            start: self.t,
            duration,
            w0: self.w,
            motion,
        };
        self.w = phase.endcaps(phase.end());
        self.t = phase.end();
        self.phases.push(phase);
    }

    fn class_params(&self, class: ShapeClass) -> PrismParams {
        let base = self.cfg.prism;
        match class {
            ShapeClass::Symmetric => base,
            ShapeClass::Taper { right } => {
                // the robot turns towards its narrow end
                let top = self.w[0] + self.w[2] + self.w[4] - self.w[1] - self.w[3] - self.w[5];
                let right_dir = Vector3::new(0.0, -1.0, 0.0);
                let top_is_right = top.dot(&right_dir) > 0.0;
                let narrow_top = top_is_right == right;
                let (r, k) = (0.5 * (base.top_radius + base.bottom_radius), self.cfg.turn_taper);
                PrismParams {
                    top_radius: if narrow_top { r - k } else { r + k },
                    bottom_radius: if narrow_top { r + k } else { r - k },
                    twist: base.twist,
                }
            }
        }
    }

    fn reconfigure(&mut self, target: PrismParams) -> Result<(), SimError> {
        if target == self.params {
            return Ok(());
        }
        let face = RING_FACES[self.face];
        let targets = face.map(|i| self.w[i]);
        let planar = targets.iter().all(|p| (p.z - targets[0].z).abs() < 1e-9)
            && targets.iter().all(|p| self.cfg.terrain.clearance(p).abs() < 1e-9);
        if !planar {
            return Err(SimError::Unsupported(format!(
                "shape change at t = {:.2} s requires a horizontal support face",
                self.t
            )));
        }
        self.push(
            self.cfg.settle_duration,
            Motion::Morph {
                from: self.params,
                to: target,
                face,
                targets,
                rod_length: self.cfg.rod_length,
            },
        );
        self.params = target;
        Ok(())
    }

    /// One pivot to the neighbouring face in ring direction `dir`, then a
    /// settle phase.
    fn roll(&mut self, dir: isize) -> Result<(), SimError> {
        let next = (self.face as isize + dir).rem_euclid(6) as usize;
        let edge = if dir > 0 { RING_EDGES[self.face] } else { RING_EDGES[next] };
        let lifting = RING_FACES[self.face].into_iter().find(|i| !edge.contains(i)).unwrap();
        let landing = RING_FACES[next].into_iter().find(|i| !edge.contains(i)).unwrap();
        let anchor = self.w[edge[0]];
        let mut axis = (self.w[edge[1]] - anchor).normalize();
        if axis.cross(&(self.w[lifting] - anchor)).z < 0.0 {
            axis = -axis;
        }
        let terrain = self.cfg.terrain;
        let candidates: Vec<usize> = (0..6).filter(|i| !edge.contains(i) && *i != lifting).collect();
        let gap = |angle: f64| {
            let w = rotate_about(&self.w, &anchor, &axis, angle);
            candidates
                .iter()
                .map(|&i| (terrain.clearance(&w[i]), i))
                .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
        };
        let step = 2e-3;
        let mut lo = 0.0;
        let mut hi = None;
        while lo < std::f64::consts::PI {
            let next_angle = lo + step;
            if gap(next_angle).0 <= 0.0 {
                hi = Some(next_angle);
                break;
            }
            lo = next_angle;
        }
        let Some(mut hi) = hi else {
            return Err(SimError::Unsupported(format!("no landing found at t = {:.2} s", self.t)));
        };
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if gap(mid).0 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let angle = 0.5 * (lo + hi);
        let first = gap(angle).1;
        if first != landing {
            return Err(SimError::Unsupported(format!(
                "endcap {first} touched down before {landing} at t = {:.2} s",
                self.t
            )));
        }
        self.push(self.cfg.pivot_duration, Motion::Pivot { anchor, axis, angle });
        self.face = next;
        self.check_patch()?;
        self.settle();
        Ok(())
    }

    fn settle(&mut self) {
        let face = RING_FACES[self.face];
        let partner = |i: usize| i ^ 1;
        let pairs = face.map(|g| (partner(g), g));
        if self.cfg.breathing_amplitude != 0.0 {
            self.push(
                self.cfg.settle_duration,
                Motion::Breathe {
                    pairs,
                    amplitude: self.cfg.breathing_amplitude,
                },
            );
        } else {
            self.push(self.cfg.settle_duration, Motion::Hold);
        }
    }

    fn check_patch(&self) -> Result<(), SimError> {
        let e = self.cfg.patch_extent;
        for (i, p) in self.w.iter().enumerate() {
            if p.x.abs() > e || p.y.abs() > e {
                return Err(SimError::OffPatch { t: self.t, endcap: i });
            }
        }
        Ok(())
    }
}

/// Rests the prism on ring face 0 at the origin, yawed so that repeated
/// forward pivots on flat ground progress along +x on average.
fn initial_placement(cfg: &SimConfig, params: &PrismParams) -> Result<Endcaps, SimError> {
    let q = params.world_endcaps(cfg.rod_length);
    let tri = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)];
    let face = RING_FACES[0];
    let w = place_on_plane(&q, face, &tri);
    let shift = w[face[0]] + w[face[1]] + w[face[2]];
    let w = w.map(|p| p - Vector3::new(shift.x / 3.0, shift.y / 3.0, shift.z / 3.0));

    let flat = SimConfig {
        terrain: Terrain::Flat,
        patch_extent: f64::INFINITY,
        ..cfg.clone()
    };
    let mut probe = Planner {
        cfg: &flat,
        phases: Vec::new(),
        w,
        face: 0,
        params: *params,
        t: 0.0,
    };
    for _ in 0..6 {
        probe.roll(1)?;
    }
    let d = centroid(&probe.w) - centroid(&w);
    let yaw = -d.y.atan2(d.x);
    let r = Rotation::from_axis_angle(&Vector3::z(), yaw);
    Ok(w.map(|p| r.apply(&p)))
}

/// Builds the motion timeline for the maneuver script.
pub(crate) fn plan(cfg: &SimConfig) -> Result<Timeline, SimError> {
    let start_class = cfg
        .script
        .iter()
        .find_map(|m| match m {
            Maneuver::TurnLeft(_) => Some(ShapeClass::Taper { right: false }),
            Maneuver::TurnRight(_) => Some(ShapeClass::Taper { right: true }),
            Maneuver::RollForward(_) | Maneuver::RollBackward(_) => Some(ShapeClass::Symmetric),
            Maneuver::Dwell(_) => None,
        })
        .unwrap_or(ShapeClass::Symmetric);

    let mut planner = Planner {
        cfg,
        phases: Vec::new(),
        w: [Vector3::zeros(); 6],
        face: 0,
        params: cfg.prism,
        t: 0.0,
    };
    // resolve the taper side with the symmetric placement, then re-place
    let sym = initial_placement(cfg, &cfg.prism)?;
    planner.w = sym;
    let params = planner.class_params(start_class);
    planner.w = if params == cfg.prism { sym } else { initial_placement(cfg, &params)? };
    planner.params = params;
    let h0 = RING_FACES[0].map(|i| cfg.terrain.height(planner.w[i].x, planner.w[i].y));
    if h0.iter().any(|h| h.abs() > 1e-12) {
        return Err(SimError::InvalidConfig("the start pose must rest on flat ground".into()));
    }
    planner.check_patch()?;
    planner.push(cfg.initial_dwell, Motion::Hold);

    for m in &cfg.script {
        match *m {
            Maneuver::Dwell(s) => planner.push(s, Motion::Hold),
            Maneuver::RollForward(n) | Maneuver::RollBackward(n) => {
                planner.reconfigure(planner.class_params(ShapeClass::Symmetric))?;
                let dir = if matches!(m, Maneuver::RollForward(_)) { 1 } else { -1 };
                for _ in 0..n {
                    planner.roll(dir)?;
                }
            }
            Maneuver::TurnLeft(n) | Maneuver::TurnRight(n) => {
                let right = matches!(m, Maneuver::TurnRight(_));
                planner.reconfigure(planner.class_params(ShapeClass::Taper { right }))?;
                for _ in 0..n {
                    planner.roll(1)?;
                }
            }
        }
    }
    planner.push(cfg.final_dwell, Motion::Hold);
    Ok(Timeline {
        phases: planner.phases,
    })
}
