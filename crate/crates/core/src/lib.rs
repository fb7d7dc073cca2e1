//! Entanglement-assisted weak-value amplification on dense qubit statevectors.
//!
//! Modules, bottom up:
//!
//! - [`statevec`]: kets, operators and spectra on labeled little-endian registers.
//! - [`weak_value`]: weak values, postselection probabilities and meter responses.
//! - [`optimal`]: optimal entangled preparations and postselections.
//! - [`fisher`]: quantum Fisher information with and without postselection.
//! - [`circuit`]: gate-level circuits, the sequential three-qubit schedule and a text format.
//! - [`experiments`]: parameter scans and report emission behind the CLI.

pub mod circuit;
pub mod error;
pub mod experiments;
pub mod fisher;
pub mod optimal;
pub mod statevec;
pub mod tol;
pub mod weak_value;

pub use error::{Error, Result};
pub use statevec::{Ket, Operator, Qubit, Register, Spectrum, C64};
