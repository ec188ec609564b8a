use nalgebra::{Matrix3, Vector3};

use super::{RobotShape, ShapeSolverConfig, CABLES};
use crate::liegroup::Rotation;

/// Parametric twisted prism: bottom triangle `1, 3, 5` of radius
/// `bottom_radius` at height zero, top triangle `0, 2, 4` of radius
/// `top_radius` rotated by `twist`. The height follows from the rod length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrismParams {
    pub bottom_radius: f64,
    pub top_radius: f64,
    /// Angle between the bottom and top endcap of each rod [rad].
    pub twist: f64,
}

impl Default for PrismParams {
    fn default() -> Self {
        PrismParams {
            bottom_radius: 0.5,
            top_radius: 0.5,
            twist: 13.0 * std::f64::consts::PI / 18.0,
        }
    }
}

impl PrismParams {
    pub fn symmetric(radius: f64, twist: f64) -> Self {
        PrismParams {
            bottom_radius: radius,
            top_radius: radius,
            twist,
        }
    }

    /// Endcap positions in the prism frame (axis along +z).
    pub fn world_endcaps(&self, rod_length: f64) -> [Vector3<f64>; 6] {
        let mut q = [Vector3::zeros(); 6];
        let step = 2.0 * std::f64::consts::PI / 3.0;
        for k in 0..3 {
            let th = step * k as f64;
            q[2 * k + 1] = Vector3::new(self.bottom_radius * th.cos(), self.bottom_radius * th.sin(), 0.0);
            let tt = th + self.twist;
            q[2 * k] = Vector3::new(self.top_radius * tt.cos(), self.top_radius * tt.sin(), 0.0);
        }
        let planar = (q[0] - q[1]).norm_squared();
        let h = (rod_length * rod_length - planar).max(0.0).sqrt();
        for k in 0..3 {
            q[2 * k].z = h;
        }
        q
    }

    /// The same prism expressed in the body frame.
    pub fn body_shape(&self, rod_length: f64, d_offset: f64) -> RobotShape {
        let (_, _, shape) = body_frame_from_world(&self.world_endcaps(rod_length), rod_length, d_offset);
        shape
    }
}

/// Splits world endcap positions into a body pose and body-frame shape.
///
/// Returns `(R_wb, origin, shape)` with `w_i = R_wb q_i + origin`. The
/// z-axis runs from endcap 1 to endcap 0 and the x-axis points towards the
/// centroid of endcaps `2..=5`.
pub fn body_frame_from_world(
    w: &[Vector3<f64>; 6],
    rod_length: f64,
    d_offset: f64,
) -> (Rotation, Vector3<f64>, RobotShape) {
    let z = (w[0] - w[1]).normalize();
    let origin = (w[0] + w[1]) * 0.5 + z * d_offset;
    let m = (w[2] + w[3] + w[4] + w[5]) * 0.25 - origin;
    let x = (m - z * m.dot(&z)).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_columns(&[x, y, z]);
    let rt = r.transpose();
    let mut q = w.map(|wi| rt * (wi - origin));
    q[0] = Vector3::new(0.0, 0.0, 0.5 * rod_length - d_offset);
    q[1] = Vector3::new(0.0, 0.0, -0.5 * rod_length - d_offset);
    (Rotation::from_matrix(r), origin, RobotShape::new(0.0, q))
}

/// Rotates endcaps `2..=5` about the body z-axis so their centroid has
/// zero y and positive x.
pub fn fix_gauge(q: &mut [Vector3<f64>; 6]) {
    let c = (q[2] + q[3] + q[4] + q[5]) * 0.25;
    let psi = c.y.atan2(c.x);
    if psi == 0.0 {
        return;
    }
    let (s, co) = (-psi).sin_cos();
    for p in q.iter_mut().skip(2) {
        let (x, y) = (p.x, p.y);
        p.x = co * x - s * y;
        p.y = s * x + co * y;
    }
}

/// Reflection through the body x-z plane: keeps every distance and every z
/// coordinate, flips the twist direction.
pub fn mirror(q: &[Vector3<f64>; 6]) -> [Vector3<f64>; 6] {
    q.map(|p| Vector3::new(p.x, -p.y, p.z))
}

/// Root-mean-square difference between the cable distances of two shapes.
pub fn pairwise_distance_rmse(a: &[Vector3<f64>; 6], b: &[Vector3<f64>; 6]) -> f64 {
    let s: f64 = CABLES
        .iter()
        .map(|&(i, j)| ((a[i] - a[j]).norm() - (b[i] - b[j]).norm()).powi(2))
        .sum();
    (s / CABLES.len() as f64).sqrt()
}

/// A vector expression `sum_k coef[k] * q_k`.
type LinComb = [f64; 6];

const fn diff(i: usize, j: usize) -> LinComb {
    let mut c = [0.0; 6];
    c[i] = 1.0;
    c[j] = -1.0;
    c
}

/// `center(a0, a1) - center(b0, b1)`.
const fn center_diff(a: (usize, usize), b: (usize, usize)) -> LinComb {
    let mut c = [0.0; 6];
    c[a.0] += 0.5;
    c[a.1] += 0.5;
    c[b.0] -= 0.5;
    c[b.1] -= 0.5;
    c
}

fn eval(c: &LinComb, q: &[Vector3<f64>; 6]) -> Vector3<f64> {
    c.iter().zip(q).map(|(k, p)| p * *k).sum()
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Inequality {
    /// `sign * q_i.z > 0`
    Height { endcap: usize, sign: f64 },
    /// `<u x w, z> > 0`
    Triple { u: LinComb, w: LinComb, z: LinComb },
    /// `<a, b> > 0`
    Dot { a: LinComb, b: LinComb },
}

const C01: (usize, usize) = (0, 1);
const C23: (usize, usize) = (2, 3);
const C45: (usize, usize) = (4, 5);

/// The ten strict inequalities, grouped as heights (4), rod crossing (3)
/// and chirality (3).
pub(crate) const INEQUALITIES: [Inequality; 10] = [
    Inequality::Height { endcap: 2, sign: 1.0 },
    Inequality::Height { endcap: 4, sign: 1.0 },
    Inequality::Height { endcap: 3, sign: -1.0 },
    Inequality::Height { endcap: 5, sign: -1.0 },
    Inequality::Triple {
        u: center_diff(C23, C01),
        w: center_diff(C45, C23),
        z: diff(2, 3),
    },
    Inequality::Triple {
        u: center_diff(C45, C23),
        w: center_diff(C01, C45),
        z: diff(4, 5),
    },
    // Cyclic counterpart of the two above; the axial vector points from
    // endcap 1 to endcap 0 like the other two rods.
    Inequality::Triple {
        u: center_diff(C01, C45),
        w: center_diff(C23, C01),
        z: diff(0, 1),
    },
    Inequality::Dot {
        a: diff(2, 4),
        b: diff(5, 1),
    },
    Inequality::Dot {
        a: diff(0, 2),
        b: diff(3, 5),
    },
    Inequality::Dot {
        a: diff(4, 0),
        b: diff(1, 3),
    },
];

impl Inequality {
    pub(crate) fn value(&self, q: &[Vector3<f64>; 6]) -> f64 {
        match *self {
            Inequality::Height { endcap, sign } => sign * q[endcap].z,
            Inequality::Triple { u, w, z } => eval(&u, q).cross(&eval(&w, q)).dot(&eval(&z, q)),
            Inequality::Dot { a, b } => eval(&a, q).dot(&eval(&b, q)),
        }
    }

    /// Value and gradient with respect to every endcap.
    pub(crate) fn value_grad(&self, q: &[Vector3<f64>; 6]) -> (f64, [Vector3<f64>; 6]) {
        let mut g = [Vector3::zeros(); 6];
        match *self {
            Inequality::Height { endcap, sign } => {
                g[endcap].z = sign;
                (sign * q[endcap].z, g)
            }
            Inequality::Triple { u, w, z } => {
                let (uu, ww, zz) = (eval(&u, q), eval(&w, q), eval(&z, q));
                let (du, dw, dz) = (ww.cross(&zz), zz.cross(&uu), uu.cross(&ww));
                for k in 0..6 {
                    g[k] = du * u[k] + dw * w[k] + dz * z[k];
                }
                (dz.dot(&zz), g)
            }
            Inequality::Dot { a, b } => {
                let (aa, bb) = (eval(&a, q), eval(&b, q));
                for k in 0..6 {
                    g[k] = bb * a[k] + aa * b[k];
                }
                (aa.dot(&bb), g)
            }
        }
    }
}

/// Signed margins for every constraint group. Inequality margins must be
/// strictly positive; equality entries are absolute deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    /// `|q0 - fixed|`, `|q1 - fixed|` [m].
    pub fixed_endcap_error: [f64; 2],
    /// `q2.z`, `q4.z` [m].
    pub upper_heights: [f64; 2],
    /// `-q3.z`, `-q5.z` [m].
    pub lower_heights: [f64; 2],
    /// `| |q_i - q_j| - L_rod |` for the three rods [m].
    pub rod_length_error: [f64; 3],
    /// Rod-crossing triple products [m³].
    pub crossing: [f64; 3],
    /// Chirality dot products [m²].
    pub chirality: [f64; 3],
    pub rod_tol: f64,
    pub passed: bool,
}

impl ConstraintReport {
    /// False for the mirror image of a valid shape.
    pub fn crossing_ok(&self) -> bool {
        self.crossing.iter().all(|&c| c > 0.0)
    }

    pub fn chirality_ok(&self) -> bool {
        self.chirality.iter().all(|&c| c > 0.0)
    }

    pub fn inequalities_ok(&self) -> bool {
        self.upper_heights
            .iter()
            .chain(&self.lower_heights)
            .chain(&self.crossing)
            .chain(&self.chirality)
            .all(|&m| m > 0.0)
    }

    pub fn equalities_ok(&self) -> bool {
        self.fixed_endcap_error
            .iter()
            .chain(&self.rod_length_error)
            .all(|&e| e <= self.rod_tol)
    }

    /// Named margins, one per constraint, for logging.
    pub fn margins(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("q0_fixed", -self.fixed_endcap_error[0]),
            ("q1_fixed", -self.fixed_endcap_error[1]),
            ("q2_z", self.upper_heights[0]),
            ("q4_z", self.upper_heights[1]),
            ("neg_q3_z", self.lower_heights[0]),
            ("neg_q5_z", self.lower_heights[1]),
            ("rod01", -self.rod_length_error[0]),
            ("rod23", -self.rod_length_error[1]),
            ("rod45", -self.rod_length_error[2]),
            ("crossing_23", self.crossing[0]),
            ("crossing_45", self.crossing[1]),
            ("crossing_01", self.crossing[2]),
            ("chirality_24_51", self.chirality[0]),
            ("chirality_02_35", self.chirality[1]),
            ("chirality_40_13", self.chirality[2]),
        ]
    }

    pub fn violations(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (k, (name, m)) in self.margins().into_iter().enumerate() {
            let equality = matches!(k, 0 | 1 | 6 | 7 | 8);
            let bad = if equality { -m > self.rod_tol } else { m <= 0.0 };
            if bad {
                out.push(name);
            }
        }
        out
    }
}

pub fn check_constraints(shape: &RobotShape, cfg: &ShapeSolverConfig) -> ConstraintReport {
    let q = &shape.q;
    let v: Vec<f64> = INEQUALITIES.iter().map(|c| c.value(q)).collect();
    let rod_err = super::RODS.map(|(i, j)| ((q[i] - q[j]).norm() - cfg.rod_length).abs());
    let mut report = ConstraintReport {
        fixed_endcap_error: [(q[0] - cfg.q0()).norm(), (q[1] - cfg.q1()).norm()],
        upper_heights: [v[0], v[1]],
        lower_heights: [v[2], v[3]],
        rod_length_error: rod_err,
        crossing: [v[4], v[5], v[6]],
        chirality: [v[7], v[8], v[9]],
        rod_tol: cfg.rod_tol,
        passed: false,
    };
    report.passed = report.inequalities_ok() && report.equalities_ok();
    report
}
