use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::{symmetrize, EstimatorState, FilterError, ImuSample, NoiseConfig};
use crate::liegroup::{skew, so3_exp, GroupElement, Rotation, TangentVector};
use crate::shape::EndcapId;

/// Longest interval a single propagation step accepts [s].
pub const MAX_PROPAGATION_DT: f64 = 0.1;

/// Covariance of a contact point predicted from forward kinematics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContactCovariance {
    /// Body-frame covariance `J_p Σ_l J_pᵀ`; rotated into the world frame.
    Body(Matrix3<f64>),
    /// World-frame covariance used as is.
    World(Matrix3<f64>),
}

impl ContactCovariance {
    pub fn isotropic(std: f64) -> Self {
        ContactCovariance::World(Matrix3::identity() * (std * std))
    }

    pub fn world(&self, r: &Rotation) -> Matrix3<f64> {
        match self {
            ContactCovariance::Body(m) => r.matrix() * m * r.matrix().transpose(),
            ContactCovariance::World(m) => *m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrectionOutcome {
    Applied { nis: f64 },
    /// Innovation failed the Mahalanobis gate; state untouched.
    Outlier { nis: f64 },
    /// Innovation covariance too poorly conditioned; state untouched.
    IllConditioned { condition: f64 },
}

/// Linearized error dynamics `ξ̇ = A ξ` for the current estimate and
/// bias-corrected inputs.
pub fn error_dynamics(state: &EstimatorState, gravity: &Vector3<f64>) -> DMatrix<f64> {
    let n = state.dim();
    let b = state.bias_index();
    let r = state.rotation().matrix();
    let mut a = DMatrix::zeros(n, n);
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(gravity));
    a.fixed_view_mut::<3, 3>(6, 3).copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 3>(0, b).copy_from(&-r);
    for (k, c) in state.group.columns().iter().enumerate() {
        a.fixed_view_mut::<3, 3>(3 + 3 * k, b).copy_from(&(-skew(c) * r));
    }
    a.fixed_view_mut::<3, 3>(3, b + 3).copy_from(&-r);
    a
}

/// Strapdown propagation over `dt` with `imu` held constant, and the
/// matching covariance prediction.
///
/// `contact_frame` orients the contact-velocity noise; pass the identity
/// when no contact frame is available.
pub fn propagate(
    state: &mut EstimatorState,
    imu: &ImuSample,
    dt: f64,
    noise: &NoiseConfig,
    contact_frame: &Rotation,
) -> Result<(), FilterError> {
    if !(dt > 0.0 && dt <= MAX_PROPAGATION_DT) {
        return Err(FilterError::RejectedSample(format!(
            "dt = {dt} outside (0, {MAX_PROPAGATION_DT}]"
        )));
    }
    if !imu.accel.iter().chain(imu.gyro.iter()).all(|x| x.is_finite()) {
        return Err(FilterError::RejectedSample("non-finite IMU reading".into()));
    }
    let n = state.dim();
    let b = state.bias_index();
    let g = noise.gravity;

    // covariance first: A is evaluated at the pre-update estimate
    let a = error_dynamics(state, &g);
    let mut phi = DMatrix::identity(n, n) + &a * dt;
    phi += (&a * &a) * (0.5 * dt * dt);

    let mut qc = DMatrix::zeros(n, n);
    qc.fixed_view_mut::<3, 3>(0, 0).copy_from(&(noise.gyro * noise.imu_period));
    qc.fixed_view_mut::<3, 3>(3, 3).copy_from(&(noise.accel * noise.imu_period));
    let hr = contact_frame.matrix();
    let qd = hr * noise.contact * hr.transpose();
    for k in 0..state.active_contacts.len() {
        qc.fixed_view_mut::<3, 3>(9 + 3 * k, 9 + 3 * k).copy_from(&qd);
    }
    qc.fixed_view_mut::<3, 3>(b, b).copy_from(&noise.gyro_bias);
    qc.fixed_view_mut::<3, 3>(b + 3, b + 3).copy_from(&noise.accel_bias);
    let mut gmat = DMatrix::identity(n, n);
    gmat.view_mut((0, 0), (b, b)).copy_from(&state.group.adjoint());
    let q = &phi * (&gmat * qc * gmat.transpose() * dt) * phi.transpose();
    let mut p = &phi * &state.covariance * phi.transpose() + q;
    symmetrize(&mut p);
    state.covariance = p;

    let w = imu.gyro - state.bias.gyro;
    let f = imu.accel - state.bias.accel;
    let r = *state.rotation().matrix();
    let v = *state.velocity();
    let acc = r * f + g;
    let new_r = Rotation::from_matrix_unchecked(r * so3_exp(&(w * dt)).matrix());
    let new_r = if new_r.orthonormality_error() > crate::liegroup::ORTHO_TOLERANCE {
        new_r.renormalized()
    } else {
        new_r
    };
    state.group.set_rotation(new_r);
    *state.group.column_mut(0) = v + acc * dt;
    *state.group.column_mut(1) += v * dt + acc * (0.5 * dt * dt);
    state.timestamp += dt;
    Ok(())
}

/// Adds `id` as a contact at world point `p + R h_p`.
///
/// The new error block copies the position error (`ξ_d = ξ_p + R̄ δh_p`) and
/// receives the forward-kinematics covariance.
pub fn augment_contact(
    state: &mut EstimatorState,
    id: EndcapId,
    h_p: &Vector3<f64>,
    fk: &ContactCovariance,
) -> Result<(), FilterError> {
    if state.contact_slot(id).is_some() {
        return Err(FilterError::DuplicateContact(id));
    }
    let n = state.dim();
    let b = state.bias_index();
    let mut f = DMatrix::zeros(n + 3, n);
    for i in 0..b {
        f[(i, i)] = 1.0;
    }
    for i in 0..3 {
        f[(b + i, 6 + i)] = 1.0;
    }
    for i in b..n {
        f[(i + 3, i)] = 1.0;
    }
    let mut p = &f * &state.covariance * f.transpose();
    let mut block = p.fixed_view_mut::<3, 3>(b, b);
    block += fk.world(state.rotation());
    symmetrize(&mut p);
    state.covariance = p;

    let d = state.position() + state.rotation().apply(h_p);
    state.group.push_column(d);
    state.active_contacts.push(id);
    Ok(())
}

/// Drops contact `id` and its covariance rows and columns.
pub fn marginalize_contact(state: &mut EstimatorState, id: EndcapId) -> Result<(), FilterError> {
    let k = state.contact_slot(id).ok_or(FilterError::InactiveContact(id))?;
    let n = state.dim();
    let start = 9 + 3 * k;
    let keep: Vec<usize> = (0..n).filter(|&i| i < start || i >= start + 3).collect();
    state.covariance = state.covariance.select_rows(&keep).select_columns(&keep);
    state.group.remove_column(2 + k);
    state.active_contacts.remove(k);
    Ok(())
}

/// Right-invariant correction with the body-frame contact point `h_p` of
/// active contact `id`.
///
/// The innovation is `z = R̄ h_p + p̄ − d̄` with `H = [0 0 −I I]` on the
/// position and contact blocks. The state is only modified when the outcome
/// is [`CorrectionOutcome::Applied`].
pub fn correct_contact(
    state: &mut EstimatorState,
    id: EndcapId,
    h_p: &Vector3<f64>,
    fk: &ContactCovariance,
    gate: Option<f64>,
    max_condition: f64,
) -> Result<CorrectionOutcome, FilterError> {
    let k = state.contact_slot(id).ok_or(FilterError::InactiveContact(id))?;
    let n = state.dim();
    let dk = 9 + 3 * k;
    let r = *state.rotation();
    let z = r.apply(h_p) + state.position() - state.group.column(2 + k);

    let p = &state.covariance;
    let pht: DMatrix<f64> = p.columns(dk, 3) - p.columns(6, 3);
    let hph: Matrix3<f64> = (pht.rows(dk, 3) - pht.rows(6, 3)).fixed_view::<3, 3>(0, 0).into();
    let noise = fk.world(&r);
    let mut s = hph + noise;
    s = (s + s.transpose()) * 0.5;

    let eig = s.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= max_condition) {
        return Ok(CorrectionOutcome::IllConditioned { condition });
    }
    let s_inv = s.try_inverse().expect("well-conditioned S");
    let nis = z.dot(&(s_inv * z));
    if gate.is_some_and(|g| nis > g) {
        return Ok(CorrectionOutcome::Outlier { nis });
    }

    let gain = &pht * s_inv;
    let delta = &gain * z;
    let b = state.bias_index();
    let xi = TangentVector::new(DVector::from_iterator(b, delta.iter().take(b).copied()))
        .expect("tangent of group dimension");
    let update = GroupElement::exp(&xi).expect("valid tangent");
    let mut group = update.compose(&state.group).expect("matching dimensions");
    if group.rotation().orthonormality_error() > crate::liegroup::ORTHO_TOLERANCE {
        let fixed = group.rotation().renormalized();
        group.set_rotation(fixed);
    }
    state.group = group;
    state.bias.gyro += Vector3::new(delta[b], delta[b + 1], delta[b + 2]);
    state.bias.accel += Vector3::new(delta[b + 3], delta[b + 4], delta[b + 5]);

    let mut ikh = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..3 {
            ikh[(i, 6 + j)] += gain[(i, j)];
            ikh[(i, dk + j)] -= gain[(i, j)];
        }
    }
    let mut pn = &ikh * &state.covariance * ikh.transpose() + &gain * noise * gain.transpose();
    symmetrize(&mut pn);
    state.covariance = pn;
    Ok(CorrectionOutcome::Applied { nis })
}
