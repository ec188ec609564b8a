//! Contact kinematics: endcap position, gravity-aligned contact frame and
//! the sensitivity of endcap positions to cable lengths.

use log::warn;
use nalgebra::{Matrix3, SMatrix, Vector3};

use super::solver::{reconstruct_shape_warm, Multipliers};
use super::{CableMeasurements, EndcapId, RobotShape, ShapeError, ShapeSolverConfig};
use crate::liegroup::Rotation;

/// Body-frame contact point of endcap `id` under the point-contact model.
pub fn h_p(shape: &RobotShape, id: EndcapId) -> Vector3<f64> {
    shape.q[id.index()]
}

/// Contact point of a spherical endcap of `radius`, displaced towards the
/// body-frame gravity direction `down` (need not be normalized).
pub fn h_p_with_radius(shape: &RobotShape, id: EndcapId, radius: f64, down: &Vector3<f64>) -> Vector3<f64> {
    let n = down.norm();
    if n > 0.0 {
        shape.q[id.index()] + down * (radius / n)
    } else {
        shape.q[id.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactFrame {
    pub rotation: Rotation,
    /// Set when the accelerometer reading could not define the frame and the
    /// identity was returned instead.
    pub degenerate: bool,
}

/// Gravity-aligned contact frame from a body-frame specific force.
///
/// The third column is the gravity-down direction `-a/|a|`; the first is the
/// body x-axis projected onto the orthogonal plane. Readings weaker than
/// half of `gravity` or along body x give the identity with `degenerate` set.
pub fn contact_frame(accel: &Vector3<f64>, gravity: f64) -> ContactFrame {
    let n = accel.norm();
    let identity = ContactFrame {
        rotation: Rotation::identity(),
        degenerate: true,
    };
    if !(n > 0.5 * gravity) {
        warn!("contact frame: specific force {n:.3} too weak, using identity");
        return identity;
    }
    let z = -accel / n;
    let x = Vector3::x() - z * z.x;
    let xn = x.norm();
    if xn < 1e-6 {
        warn!("contact frame: specific force parallel to body x, using identity");
        return identity;
    }
    let x = x / xn;
    let y = z.cross(&x);
    ContactFrame {
        rotation: Rotation::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z])),
        degenerate: false,
    }
}

/// Derivative of all six body-frame endcap positions with respect to the
/// nine cable lengths, rows `3i..3i+3` belonging to endcap `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeJacobian {
    pub matrix: SMatrix<f64, 18, 9>,
}

impl ShapeJacobian {
    pub fn endcap(&self, id: EndcapId) -> SMatrix<f64, 3, 9> {
        self.matrix.fixed_rows::<3>(3 * id.index()).into()
    }
}

/// Central finite-difference shape Jacobian around `nominal`.
///
/// Every perturbed solve is warm-started from `nominal` and its multipliers.
pub fn shape_jacobian(
    meas: &CableMeasurements,
    nominal: &RobotShape,
    multipliers: Option<&Multipliers>,
    cfg: &ShapeSolverConfig,
) -> Result<ShapeJacobian, ShapeError> {
    shape_jacobian_step(meas, nominal, multipliers, cfg, cfg.jacobian_step)
}

pub(crate) fn shape_jacobian_step(
    meas: &CableMeasurements,
    nominal: &RobotShape,
    multipliers: Option<&Multipliers>,
    cfg: &ShapeSolverConfig,
    step: f64,
) -> Result<ShapeJacobian, ShapeError> {
    let solve = |k: usize, sign: f64| {
        let mut l = *meas.lengths();
        l[k] += sign * step;
        let m = CableMeasurements::from_raw(meas.timestamp, l);
        reconstruct_shape_warm(&m, Some(nominal), multipliers, cfg)
            .map(|(s, _, _)| s)
            .map_err(|e| ShapeError::JacobianUnavailable(format!("perturbed solve on cable {k}: {e}")))
    };
    let columns: Vec<Result<[Vector3<f64>; 6], ShapeError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..9)
            .map(|k| {
                scope.spawn(move || {
                    let plus = solve(k, 1.0)?;
                    let minus = solve(k, -1.0)?;
                    Ok(std::array::from_fn::<_, 6, _>(|i| (plus.q[i] - minus.q[i]) / (2.0 * step)))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("jacobian worker")).collect()
    });
    let mut matrix = SMatrix::<f64, 18, 9>::zeros();
    for (k, col) in columns.into_iter().enumerate() {
        let col = col?;
        for (i, c) in col.iter().enumerate() {
            matrix.fixed_view_mut::<3, 1>(3 * i, k).copy_from(c);
        }
    }
    Ok(ShapeJacobian { matrix })
}

/// Sensitivity of one endcap's contact point to the cable lengths, solving
/// the nominal shape from a cold start first.
pub fn j_p(meas: &CableMeasurements, id: EndcapId, cfg: &ShapeSolverConfig) -> Result<SMatrix<f64, 3, 9>, ShapeError> {
    let (nominal, mult, _) = reconstruct_shape_warm(meas, None, None, cfg)?;
    Ok(shape_jacobian(meas, &nominal, Some(&mult), cfg)?.endcap(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::{body_frame_from_world, reconstruct_shape, PrismParams};
    use approx::assert_abs_diff_eq;
    use nalgebra::SVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const G: f64 = 9.81;

    fn sample() -> (CableMeasurements, ShapeSolverConfig) {
        let params = PrismParams {
            bottom_radius: 0.53,
            top_radius: 0.48,
            twist: 2.2,
        };
        let (_, _, shape) = body_frame_from_world(&params.world_endcaps(1.45), 1.45, 0.0);
        (CableMeasurements::from_shape(0.0, &shape.q), ShapeSolverConfig::default())
    }

    #[test]
    fn fixed_endcaps() {
        let cfg = ShapeSolverConfig {
            d_offset: 0.1,
            ..Default::default()
        };
        let shape = cfg.canonical_shape();
        assert_eq!(h_p(&shape, EndcapId::new(0).unwrap()), Vector3::new(0.0, 0.0, 0.625));
        assert_eq!(h_p(&shape, EndcapId::new(1).unwrap()), Vector3::new(0.0, 0.0, -0.825));
        let down = Vector3::new(0.0, 0.0, -2.0);
        assert_abs_diff_eq!(
            h_p_with_radius(&shape, EndcapId::new(1).unwrap(), 0.02, &down),
            Vector3::new(0.0, 0.0, -0.845),
            epsilon = 1e-15
        );
    }

    #[test]
    fn contact_frame_along_gravity() {
        let f = contact_frame(&Vector3::new(0.0, 0.0, -G), G);
        assert!(!f.degenerate);
        assert_abs_diff_eq!(f.rotation.matrix().column(2).into_owned(), Vector3::z(), epsilon = 1e-15);
        let f = contact_frame(&Vector3::new(0.0, 0.0, G), G);
        assert_abs_diff_eq!(f.rotation.matrix().column(2).into_owned(), -Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn contact_frame_degenerate_inputs() {
        assert!(contact_frame(&Vector3::new(0.0, 0.1, 0.0), G).degenerate);
        let f = contact_frame(&Vector3::new(-G, 0.0, 0.0), G);
        assert!(f.degenerate);
        assert_eq!(f.rotation, Rotation::identity());
    }

    #[test]
    fn contact_frame_orthonormal_for_random_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let d = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if d.norm() < 1e-3 {
                continue;
            }
            let a = d.normalize() * G * rng.random_range(0.6..2.0);
            let f = contact_frame(&a, G);
            let r = f.rotation.matrix();
            assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            if !f.degenerate {
                assert_abs_diff_eq!(r.column(2).into_owned(), -a.normalize(), epsilon = 1e-12);
                assert!(r[(0, 0)] >= 0.0);
            }
        }
    }

    #[test]
    fn base_endcap_rows_are_zero() {
        let (meas, cfg) = sample();
        let j = j_p(&meas, EndcapId::new(0).unwrap(), &cfg).unwrap();
        assert_eq!(j, SMatrix::<f64, 3, 9>::zeros());
    }

    #[test]
    fn step_halving_agrees() {
        let (meas, cfg) = sample();
        let (nominal, mult, _) = reconstruct_shape_warm(&meas, None, None, &cfg).unwrap();
        let a = shape_jacobian_step(&meas, &nominal, Some(&mult), &cfg, 1e-4).unwrap();
        let b = shape_jacobian_step(&meas, &nominal, Some(&mult), &cfg, 5e-5).unwrap();
        let diff = (a.matrix - b.matrix).amax();
        assert!(diff < 1e-3, "step halving differs by {diff}");
    }

    #[test]
    fn predicts_small_length_change() {
        let (meas, cfg) = sample();
        let (nominal, mult, _) = reconstruct_shape_warm(&meas, None, None, &cfg).unwrap();
        let jac = shape_jacobian(&meas, &nominal, Some(&mult), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let dl = SVector::<f64, 9>::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize() * 1e-3;
            let mut l = *meas.lengths();
            for k in 0..9 {
                l[k] += dl[k];
            }
            let moved = reconstruct_shape(&CableMeasurements::from_raw(0.0, l), Some(&nominal), &cfg).unwrap();
            for i in 2..6 {
                let id = EndcapId::new(i).unwrap();
                let actual = moved.q[i] - nominal.q[i];
                let predicted = jac.endcap(id) * dl;
                let rel = (actual - predicted).norm() / actual.norm().max(1e-12);
                assert!(rel < 0.05, "endcap {i}: relative error {rel}");
            }
        }
    }
}
