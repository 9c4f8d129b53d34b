//! Desk-scale simulation toolkit for atomic-frequency-comb (AFC) quantum
//! memories in erbium-doped crystals.
//!
//! The crate is organised by stage of the memory pipeline:
//!
//! * [`medium`]: inhomogeneously broadened absorption profiles.
//! * [`pumping`]: spectral tailoring with a three-reservoir rate model,
//!   continuous and interleaved pump schedules.
//! * [`echo`]: analytic AFC efficiency, causal transfer functions and
//!   time-domain pulse propagation, multi-window scheduling.
//! * [`polarization`]: Jones calculus and waveplate compensation solvers.
//! * [`tomography`]: single-qubit process tomography in the Pauli basis.
//! * [`analysis`]: physical formulas and curve fits used to characterise
//!   the crystal.
//! * [`optimizer`]: seeded random search over pump parameters.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod echo;
mod error;
pub mod lsq;
pub mod medium;
pub mod optimizer;
pub mod polarization;
pub mod pumping;
pub mod tomography;

pub use error::{Error, Result};
