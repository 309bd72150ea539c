//! Floquet-engineered protection of a one-dimensional U(1) quantum link model.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`] fixes the interleaved matter/link basis and the Gauss-law bookkeeping.
//! * [`operators`] is a sparse tensor-string algebra over a per-dimension operator palette.
//! * [`magnus`] builds pulse protocols and their effective Hamiltonians.
//! * [`engine`] propagates state vectors and records stroboscopic observables.
//! * [`qmm`] is the reduced kink/defect ("marble") model.
//! * [`analysis`] extracts lifetimes, power laws and perturbative growth rates.

pub mod analysis;
pub mod dense;
pub mod engine;
pub mod error;
pub mod lattice;
pub mod magnus;
pub mod operators;
pub mod palette;
pub mod qmm;
pub mod series;

pub use error::{Error, Result};
pub use lattice::{Boundary, GaugeSpin, LatticeSpec, SectorConfig};
pub use operators::{OperatorSum, Pulse, PulseKind};

pub use num_complex::Complex64 as C64;
