//! Adiabatic Fock-state preparation in a driven Kerr cavity.
//!
//! The crate builds the rotating-frame Hamiltonian on a truncated Fock space,
//! evaluates the adiabatic penalty of drive/detuning paths, optimizes those
//! paths by vertex perturbation, turns them into time schedules that keep the
//! instantaneous penalty constant, and propagates closed and lossy dynamics.
//! Energies and rates are in units of the Kerr coefficient.

pub mod error;
pub mod dynamics;
pub mod fock;
pub mod harness;
pub mod model;
pub mod pathopt;
pub mod penalty;
pub mod schedule;
pub mod spectral;
pub mod variational;

pub use error::{Error, Result};
pub use fock::{DensityMatrix, Expectation, Operator, StateVector};
pub use model::{DriveKind, DrivePoint, KpoPoint};
pub use num_complex::Complex64 as C64;
