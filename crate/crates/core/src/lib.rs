//! Wireless power transfer over a MISO link with imperfect channel state
//! information.
//!
//! The crate covers the whole chain from channel estimation to power
//! allocation:
//!
//! - [`channel`]: the Rayleigh channel law, Gaussian posteriors and the
//!   estimate-power transition kernel.
//! - [`estimation`]: LS / LMMSE estimators, their preambles, recursive
//!   updating and partial feedback.
//! - [`beamforming`]: conditional correlation matrices, the eigenmode
//!   beamformer and the closed-form stop/continue energies.
//! - [`dp_policy`]: the backward Bellman recursion on estimate power and the
//!   resulting threshold policy.
//! - [`fixed_length`]: order-statistics constants and the offline
//!   preamble-length optimizer.
//! - [`power_alloc`]: stopping-time distributions and the greedy power
//!   allocators with their LP oracle.
//! - [`harness`]: Monte Carlo frame simulation, scheme comparison and
//!   CSV/JSON output.

pub mod beamforming;
pub mod channel;
pub mod dp_policy;
pub mod error;
pub mod estimation;
pub mod fixed_length;
pub mod harness;
pub mod linalg;
pub mod numerics;
pub mod power_alloc;
pub mod rng;
pub mod special;

pub use error::{Error, Result};

pub use num_complex::Complex64;

/// Dense complex column vector.
pub type CVector = nalgebra::DVector<Complex64>;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
