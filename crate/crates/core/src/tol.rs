//! Numerical tolerances shared by every module.
//!
//! | Name | Value | Used for |
//! |------|-------|----------|
//! | [`ALGEBRAIC`] | 1e-12 | single exact operations: norms, hermiticity, unitarity |
//! | [`ACCUMULATED`] | 1e-10 | results of several chained operations |
//! | [`ORTHOGONAL_POSTSELECTION`] | 1e-14 | `|⟨Ψf|Ψi⟩|` below which a weak value is undefined |
//! | [`DEGENERATE_VARIANCE`] | 1e-14 | variance below which a preparation is an eigenstate |
//! | [`UNDERFLOW`] | 1e-300 | smallest branch probability that can still be renormalized |

/// Tolerance for exact single-step algebra.
pub const ALGEBRAIC: f64 = 1e-12;

/// Tolerance for results accumulated over several operations.
pub const ACCUMULATED: f64 = 1e-10;

/// Overlap magnitude below which the weak value is reported as undefined.
pub const ORTHOGONAL_POSTSELECTION: f64 = 1e-14;

/// Variance below which an ancilla preparation is treated as an eigenstate.
pub const DEGENERATE_VARIANCE: f64 = 1e-14;

/// Branch probability below which a postselected branch is considered lost.
pub const UNDERFLOW: f64 = 1e-300;

/// Default maximum register size for dense simulation.
pub const DEFAULT_MAX_QUBITS: usize = 20;

/// Default central-difference step for the Fisher information oracle.
pub const FD_STEP: f64 = 1e-4;

/// Linear-response guard: `n·φ` and `φ·|A_w|` must not exceed this.
pub const LINEAR_RESPONSE: f64 = 0.1;

/// Relative slack applied to regime comparisons so that boundary values
/// such as `1e-3 * 100.0` are accepted.
pub const REGIME_SLACK: f64 = 1e-12;
