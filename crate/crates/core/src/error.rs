//! Error taxonomy shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument left its mathematical domain.
    #[error("domain error: {what} = {value} outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A profile was used in the wrong mode (CDF vs gamma).
    #[error("profile mode error: expected {expected} profile, got {got}")]
    Mode {
        expected: &'static str,
        got: &'static str,
    },

    /// Construction or validation of a domain object failed.
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    /// The requested operation is outside its proven/applicable regime.
    #[error("not applicable: {0}")]
    NotApplicable(String),

    /// The x-grid is too small for the requested solve.
    #[error(
        "grid underflow: edge slope drifted by {deviation:.3e} (> {tol:.1e}); \
         increase x_max beyond {x_max}"
    )]
    GridUnderflow {
        deviation: f64,
        tol: f64,
        x_max: f64,
    },

    /// Simulated paths left the PDE grid.
    #[error("grid escape: fraction {fraction:.3e} of paths left the x-grid")]
    GridEscape { fraction: f64 },

    /// An iteration failed to converge.
    #[error("no convergence in {what} after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// All optimizer starts failed; the trace lists per-start outcomes.
    #[error("optimizer failed: {trace}")]
    Optimizer { trace: String },

    /// Problem size exceeds an enumeration or memory cap.
    #[error("size error: {what} = {value} exceeds cap {cap}")]
    Size {
        what: &'static str,
        value: usize,
        cap: usize,
    },

    /// Vector length does not match the instance dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
