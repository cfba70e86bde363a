//! Numerics for mixed p-spin mean-field glasses.
//!
//! The crate is organized around one variational object — the functional
//! `P(alpha)` over step-function order parameters, whose infimum is the
//! limiting free energy — and its constrained soft-spin counterpart
//! `P_u(lambda, gamma)`, whose infimum plus the Onsager term traces the
//! limiting TAP free-energy curve. Everything else either feeds those two
//! (mixture scalars, step profiles, the backward PDE solver) or checks them
//! (stochastic-control diagnostics, exact finite-N enumeration).
//!
//! Modules:
//! - [`mixture`]: the model mixture ξ and scalar functions derived from it.
//! - [`measures`]: right-continuous nondecreasing step profiles (CDF / gamma).
//! - [`pde`]: backward Cole-Hopf recursion for both boundary conditions,
//!   and assembly of both functionals.
//! - [`optimizer`]: RS closed forms, k-atom minimization of both functionals,
//!   the TAP curve sweep, and directional-derivative verifiers.
//! - [`sde`]: Euler–Maruyama simulation of the optimal-control diffusion,
//!   optimality profiles, pure-state moments, and the Delta identity.
//! - [`finite_n`]: disorder sampling, exact enumeration, TAP gradient ascent,
//!   pure-state barycentres, entropy discrepancy.

pub mod error;
pub mod finite_n;
pub mod measures;
pub mod mixture;
pub mod optimizer;
pub mod pde;
pub mod quad;
pub mod rng;
pub mod sde;

pub use error::{Error, Result};
pub use measures::{ProfileMode, StepProfile};
pub use mixture::MixtureSpec;
