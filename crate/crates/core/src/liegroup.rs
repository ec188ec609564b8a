//! Matrix Lie group primitives: SO(3) and the extended pose group SE_K(3).
//!
//! An element of SE_K(3) is a rotation together with `K` world-frame columns
//! (velocity, position, then any number of contact positions). Its matrix
//! embedding is
//!
//! ```text
//! | R  c_1 ... c_K |
//! | 0     I_K      |
//! ```
//!
//! Tangent vectors are laid out as `[phi, rho_1, ..., rho_K]`, three entries
//! per block. Elements are stored as rotation plus columns; the dense
//! embedding is only materialised on request.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

/// Below this angle the exponential and Jacobians switch to series expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Orthonormality drift that triggers a polar re-projection.
pub const ORTHO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("group elements need at least two columns, got {0}")]
    TooFewColumns(usize),
    #[error("tangent length {0} is not 3 (1 + K) with K >= 2")]
    BadTangentLength(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Skew-symmetric matrix such that `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`]; reads the antisymmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rotation matrix in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps `m`, projecting onto SO(3) if it has drifted.
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        Rotation(m).renormalized()
    }

    /// Wraps `m` without any check. Caller guarantees orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        so3_exp(&(axis * (angle / n)))
    }

    /// Z-Y-X (yaw, pitch, roll) composition `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let rx = so3_exp(&Vector3::new(roll, 0.0, 0.0));
        let ry = so3_exp(&Vector3::new(0.0, pitch, 0.0));
        let rz = so3_exp(&Vector3::new(0.0, 0.0, yaw));
        rz.compose(&ry).compose(&rx)
    }

    /// Returns `(roll, pitch, yaw)` for the Z-Y-X convention.
    pub fn euler(&self) -> (f64, f64, f64) {
        let m = &self.0;
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        (roll, pitch, yaw)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0).renormalized()
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn log(&self) -> Vector3<f64> {
        so3_log(self)
    }

    /// Largest absolute entry of `R Rᵀ - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0 * self.0.transpose() - Matrix3::identity()).abs().max()
    }

    /// Polar projection onto SO(3) when drift exceeds [`ORTHO_TOLERANCE`].
    pub fn renormalized(self) -> Self {
        if self.orthonormality_error() <= ORTHO_TOLERANCE {
            return self;
        }
        let svd = self.0.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Rotation(r)
    }

    /// Unit quaternion as `(x, y, z, w)`, scalar last.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let r = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&r);
        let mut out = [q.i, q.j, q.k, q.w];
        // pin the sign so file output is canonical
        if out[3] < 0.0 {
            out.iter_mut().for_each(|c| *c = -*c);
        }
        out
    }

    pub fn from_quaternion(x: f64, y: f64, z: f64, w: f64) -> Self {
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Rotation(*q.to_rotation_matrix().matrix())
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        so3_log(self).norm()
    }
}

/// Rodrigues exponential map with a second-order series near zero.
pub fn so3_exp(phi: &Vector3<f64>) -> Rotation {
    let theta = phi.norm();
    let k = skew(phi);
    let k2 = k * k;
    let m = if theta < SMALL_ANGLE {
        Matrix3::identity() + k + 0.5 * k2
    } else {
        Matrix3::identity() + (theta.sin() / theta) * k + one_minus_cos_over_t2(theta) * k2
    };
    Rotation(m).renormalized()
}

/// Below this angle the Jacobian coefficients use their Taylor series, which
/// avoids cancellation in `1 - cos` and `t - sin`.
const SERIES_ANGLE: f64 = 1e-2;

/// `(1 - cos t) / t²` written with the half angle to avoid cancellation.
fn one_minus_cos_over_t2(theta: f64) -> f64 {
    let h = 0.5 * theta;
    let s = h.sin() / h;
    0.5 * s * s
}

/// `(t - sin t) / t³`.
fn t_minus_sin_over_t3(theta: f64) -> f64 {
    if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (theta - theta.sin()) / (theta * theta * theta)
    }
}

/// Logarithm of SO(3), returning the rotation vector with norm in `[0, pi]`.
pub fn so3_log(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    let w = vee(m);
    let s = w.norm();
    let c = 0.5 * (m.trace() - 1.0);
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        return w * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // axis from the symmetric part: (R + Rᵀ + 2I) / 4 ~ u uᵀ near pi
        let b = (m + m.transpose() + Matrix3::identity() * 2.0) * 0.25;
        let (mut best, mut best_norm) = (0, -1.0);
        for j in 0..3 {
            let n = b.column(j).norm();
            if n > best_norm {
                best = j;
                best_norm = n;
            }
        }
        let mut axis: Vector3<f64> = b.column(best).into();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    w * (theta / s)
}

/// Left Jacobian of SO(3).
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * k + (1.0 / 6.0) * k2;
    }
    Matrix3::identity() + one_minus_cos_over_t2(theta) * k + t_minus_sin_over_t3(theta) * k2
}

/// Inverse of the left Jacobian of SO(3).
pub fn left_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - 0.5 * k + (1.0 / 12.0) * k2;
    }
    let t2 = theta * theta;
    let coeff = if theta < SERIES_ANGLE {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let h = 0.5 * theta;
        (1.0 - h / h.tan()) / t2
    };
    Matrix3::identity() - 0.5 * k + coeff * k2
}

/// Tangent vector of SE_K(3): `[phi, rho_1, ..., rho_K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(DVector<f64>);

impl TangentVector {
    pub fn new(coeffs: DVector<f64>) -> Result<Self, LieError> {
        let n = coeffs.len();
        if !n.is_multiple_of(3) || n < 9 {
            return Err(LieError::BadTangentLength(n));
        }
        Ok(TangentVector(coeffs))
    }

    pub fn zeros(columns: usize) -> Self {
        TangentVector(DVector::zeros(3 * (1 + columns)))
    }

    pub fn from_blocks(phi: Vector3<f64>, columns: &[Vector3<f64>]) -> Self {
        let mut v = DVector::zeros(3 * (1 + columns.len()));
        v.fixed_rows_mut::<3>(0).copy_from(&phi);
        for (k, c) in columns.iter().enumerate() {
            v.fixed_rows_mut::<3>(3 * (k + 1)).copy_from(c);
        }
        TangentVector(v)
    }

    /// Number of translational columns `K`.
    pub fn columns(&self) -> usize {
        self.0.len() / 3 - 1
    }

    pub fn rotation_part(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into()
    }

    pub fn column(&self, k: usize) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3 * (k + 1)).into()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    /// Dense Lie-algebra matrix of size `(3 + K) x (3 + K)`.
    pub fn hat(&self) -> DMatrix<f64> {
        let k = self.columns();
        let mut m = DMatrix::zeros(3 + k, 3 + k);
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&skew(&self.rotation_part()));
        for j in 0..k {
            m.fixed_view_mut::<3, 1>(0, 3 + j).copy_from(&self.column(j));
        }
        m
    }
}

/// Element of SE_K(3): rotation plus `K >= 2` columns (v, p, contacts...).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    rotation: Rotation,
    columns: Vec<Vector3<f64>>,
}

impl GroupElement {
    pub fn new(rotation: Rotation, columns: Vec<Vector3<f64>>) -> Result<Self, LieError> {
        if columns.len() < 2 {
            return Err(LieError::TooFewColumns(columns.len()));
        }
        Ok(GroupElement { rotation, columns })
    }

    pub fn identity(columns: usize) -> Result<Self, LieError> {
        Self::new(Rotation::identity(), vec![Vector3::zeros(); columns])
    }

    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    pub fn columns(&self) -> &[Vector3<f64>] {
        &self.columns
    }

    pub fn column(&self, k: usize) -> &Vector3<f64> {
        &self.columns[k]
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    /// Tangent-space dimension `3 (1 + K)`.
    pub fn dof(&self) -> usize {
        3 * (1 + self.columns.len())
    }

    pub fn velocity(&self) -> &Vector3<f64> {
        &self.columns[0]
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.columns[1]
    }

    pub(crate) fn set_rotation(&mut self, r: Rotation) {
        self.rotation = r;
    }

    pub(crate) fn column_mut(&mut self, k: usize) -> &mut Vector3<f64> {
        &mut self.columns[k]
    }

    pub(crate) fn push_column(&mut self, c: Vector3<f64>) {
        self.columns.push(c);
    }

    pub(crate) fn remove_column(&mut self, k: usize) -> Vector3<f64> {
        self.columns.remove(k)
    }

    fn check_same_size(&self, other: &GroupElement) -> Result<(), LieError> {
        if self.columns.len() != other.columns.len() {
            return Err(LieError::DimensionMismatch {
                expected: self.columns.len(),
                actual: other.columns.len(),
            });
        }
        Ok(())
    }

    /// Group product `self * other`.
    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement, LieError> {
        self.check_same_size(other)?;
        let r = self.rotation.matrix();
        let columns = self
            .columns
            .iter()
            .zip(&other.columns)
            .map(|(a, b)| r * b + a)
            .collect();
        Ok(GroupElement {
            rotation: self.rotation.compose(&other.rotation),
            columns,
        })
    }

    pub fn inverse(&self) -> GroupElement {
        let rt = self.rotation.inverse();
        let columns = self.columns.iter().map(|c| -(rt.matrix() * c)).collect();
        GroupElement {
            rotation: rt,
            columns,
        }
    }

    /// Adjoint matrix acting on tangent vectors laid out as `[phi, rho_1..rho_K]`.
    pub fn adjoint(&self) -> DMatrix<f64> {
        let n = self.dof();
        let r = self.rotation.matrix();
        let mut ad = DMatrix::zeros(n, n);
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        for (k, c) in self.columns.iter().enumerate() {
            let o = 3 * (k + 1);
            ad.fixed_view_mut::<3, 3>(o, 0).copy_from(&(skew(c) * r));
            ad.fixed_view_mut::<3, 3>(o, o).copy_from(r);
        }
        ad
    }

    /// Dense `(3 + K) x (3 + K)` matrix embedding.
    pub fn embedding(&self) -> DMatrix<f64> {
        let k = self.columns.len();
        let mut m = DMatrix::identity(3 + k, 3 + k);
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        for (j, c) in self.columns.iter().enumerate() {
            m.fixed_view_mut::<3, 1>(0, 3 + j).copy_from(c);
        }
        m
    }

    pub fn exp(xi: &TangentVector) -> Result<GroupElement, LieError> {
        sek3_exp(xi)
    }

    pub fn log(&self) -> TangentVector {
        sek3_log(self)
    }
}

/// Exponential map of SE_K(3); columns are mapped through the left Jacobian.
pub fn sek3_exp(xi: &TangentVector) -> Result<GroupElement, LieError> {
    let k = xi.columns();
    if k < 2 {
        return Err(LieError::TooFewColumns(k));
    }
    let phi = xi.rotation_part();
    let jl = left_jacobian(&phi);
    let columns = (0..k).map(|j| jl * xi.column(j)).collect();
    Ok(GroupElement {
        rotation: so3_exp(&phi),
        columns,
    })
}

/// Logarithm of SE_K(3).
pub fn sek3_log(x: &GroupElement) -> TangentVector {
    let phi = so3_log(&x.rotation);
    let jinv = left_jacobian_inverse(&phi);
    let cols: Vec<Vector3<f64>> = x.columns.iter().map(|c| jinv * c).collect();
    TangentVector::from_blocks(phi, &cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_vec(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    fn random_element(rng: &mut impl Rng, k: usize) -> GroupElement {
        let r = so3_exp(&random_vec(rng, 2.0));
        let cols = (0..k).map(|_| random_vec(rng, 3.0)).collect();
        GroupElement::new(r, cols).unwrap()
    }

    /// Truncated power series of the dense matrix exponential.
    fn dense_expm(a: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = a.nrows();
        let mut out = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for i in 1..terms {
            term = &term * a / i as f64;
            out += &term;
        }
        out
    }

    #[test]
    fn skew_basics() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let e = skew(&Vector3::x()) * Vector3::y();
        assert_eq!(e, Vector3::z());
        let v = Vector3::new(0.3, -1.2, 2.0);
        assert_eq!(skew(&v).transpose(), -skew(&v));
        assert_eq!(vee(&skew(&v)), v);
    }

    #[test]
    fn so3_exp_cases() {
        assert_eq!(*so3_exp(&Vector3::zeros()).matrix(), Matrix3::identity());
        let r = so3_exp(&Vector3::new(0.0, 0.0, PI / 2.0));
        assert_abs_diff_eq!(r.apply(&Vector3::x()), Vector3::y(), epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let phi = random_vec(&mut rng, 3.0);
            let p = so3_exp(&phi).compose(&so3_exp(&-phi));
            assert_abs_diff_eq!(*p.matrix(), Matrix3::identity(), epsilon = 1e-12);
        }
    }

    #[test]
    fn so3_log_near_pi() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        for theta in [PI - 1e-3, PI - 1e-7, PI] {
            let r = so3_exp(&(axis * theta));
            let back = so3_log(&r);
            assert_abs_diff_eq!(so3_exp(&back).matrix(), r.matrix(), epsilon = 1e-9);
        }
    }

    #[test]
    fn renormalize_restores_orthonormality() {
        let r = so3_exp(&Vector3::new(0.4, -0.2, 0.9));
        let noisy = Rotation::from_matrix(r.matrix() + Matrix3::repeat(1e-6));
        assert!(noisy.orthonormality_error() <= 1e-12);
        assert_abs_diff_eq!(noisy.matrix().determinant(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn euler_round_trip() {
        let r = Rotation::from_euler(0.1, -0.3, 2.0);
        let (roll, pitch, yaw) = r.euler();
        assert_abs_diff_eq!(roll, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(pitch, -0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(yaw, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn quaternion_round_trip() {
        let r = Rotation::from_euler(0.7, 0.2, -2.5);
        let [x, y, z, w] = r.to_quaternion();
        assert!(w >= 0.0);
        let back = Rotation::from_quaternion(x, y, z, w);
        assert_abs_diff_eq!(back.matrix(), r.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn sek3_exp_identity_and_pure_translation() {
        let id = sek3_exp(&TangentVector::zeros(3)).unwrap();
        assert_eq!(id, GroupElement::identity(3).unwrap());
        let cols = [Vector3::new(1.0, 2.0, 3.0), Vector3::new(-1.0, 0.5, 0.0)];
        let x = sek3_exp(&TangentVector::from_blocks(Vector3::zeros(), &cols)).unwrap();
        assert_eq!(x.columns(), &cols);
    }

    #[test]
    fn sek3_exp_rejects_short_tangent() {
        assert!(TangentVector::new(DVector::zeros(6)).is_err());
        assert!(TangentVector::new(DVector::zeros(10)).is_err());
        let a = GroupElement::identity(2).unwrap();
        let b = GroupElement::identity(3).unwrap();
        assert!(a.compose(&b).is_err());
        assert!(GroupElement::identity(1).is_err());
    }

    #[test]
    fn sek3_exp_matches_matrix_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 2..5 {
            for _ in 0..50 {
                let mut xi = DVector::from_fn(3 * (1 + k), |_, _| rng.random_range(-1.0..1.0));
                let n = xi.norm();
                if n > 1.0 {
                    xi /= n;
                }
                let tv = TangentVector::new(xi).unwrap();
                let dense = dense_expm(&tv.hat(), 30);
                let x = sek3_exp(&tv).unwrap();
                assert_abs_diff_eq!(x.embedding(), dense, epsilon = 1e-9);
                // and back
                let back = sek3_log(&x);
                assert_abs_diff_eq!(back.as_vector(), tv.as_vector(), epsilon = 1e-9);
                // ten-term truncation is what the contract names
                assert_abs_diff_eq!(x.embedding(), dense_expm(&tv.hat(), 11), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn compose_inverse_against_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = random_element(&mut rng, 4);
            let b = random_element(&mut rng, 4);
            let c = random_element(&mut rng, 4);
            let ab = a.compose(&b).unwrap();
            assert_abs_diff_eq!(ab.embedding(), a.embedding() * b.embedding(), epsilon = 1e-9);
            let id = a.compose(&a.inverse()).unwrap();
            assert_abs_diff_eq!(id.embedding(), DMatrix::identity(7, 7), epsilon = 1e-9);
            let lhs = ab.compose(&c).unwrap();
            let rhs = a.compose(&b.compose(&c).unwrap()).unwrap();
            assert_abs_diff_eq!(lhs.embedding(), rhs.embedding(), epsilon = 1e-9);
            let e = GroupElement::identity(4).unwrap();
            assert_abs_diff_eq!(e.compose(&b).unwrap().embedding(), b.embedding(), epsilon = 1e-15);
            assert_abs_diff_eq!(
                a.inverse().embedding(),
                a.embedding().try_inverse().unwrap(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn adjoint_cases() {
        let id = GroupElement::identity(3).unwrap();
        assert_eq!(id.adjoint(), DMatrix::identity(12, 12));
        let r = so3_exp(&Vector3::new(0.2, 0.5, -0.1));
        let x = GroupElement::new(r, vec![Vector3::zeros(); 3]).unwrap();
        let ad = x.adjoint();
        for i in 0..4 {
            for j in 0..4 {
                let blk = ad.fixed_view::<3, 3>(3 * i, 3 * j).into_owned();
                if i == j {
                    assert_eq!(blk, *r.matrix());
                } else {
                    assert_eq!(blk, Matrix3::zeros());
                }
            }
        }
    }

    #[test]
    fn adjoint_conjugation_and_homomorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let a = random_element(&mut rng, 3);
            let b = random_element(&mut rng, 3);
            let xi = TangentVector::new(DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0)))
                .unwrap();
            let lhs = a.embedding() * xi.hat() * a.inverse().embedding();
            let mapped = TangentVector::new(a.adjoint() * xi.as_vector()).unwrap();
            assert_abs_diff_eq!(lhs, mapped.hat(), epsilon = 1e-9);
            let ab = a.compose(&b).unwrap();
            assert_abs_diff_eq!(ab.adjoint(), a.adjoint() * b.adjoint(), epsilon = 1e-8);
        }
    }
}
