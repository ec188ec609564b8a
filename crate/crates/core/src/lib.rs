//! Proprioceptive state estimation for 3-bar prism tensegrity robots.
//!
//! The crate is organised bottom-up:
//!
//! - [`liegroup`]: SO(3) and SE_K(3) primitives used by the filter.
//! - [`shape`]: endcap reconstruction from the nine cable lengths.
//! - [`inekf`]: contact-aided right-invariant EKF with IMU bias states.
//! - [`simulator`]: kinematic rolling simulator and sensor-noise models.
//! - [`eval`]: trajectory alignment, drift and relative pose error.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod inekf;
pub mod liegroup;
pub mod shape;
pub mod simulator;
