//! Optimal state-feedback synthesis for linear-quadratic control of a scalar
//! first-order hyperbolic PDE
//!
//! ```text
//!     x_t - c x_z = a x + b u,   x(z,0) = varphi(z),   x(l,t) = phi(t)
//! ```
//!
//! with a prescribed final profile `x(z,T) = eta(z)`. The pipeline solves the
//! backward Riccati PDE for the gain `g`, builds the characteristic factor `e`,
//! the terminal multiplier profile `gamma` and the offset field `psi`, then
//! runs the closed loop `u = -(b/r)(g x + psi)` and cross-checks it against an
//! independent costate solve, a closed-form cost, and a dense KKT solve of the
//! discretized problem.

pub mod cli;
pub mod cost;
pub mod error;
pub mod exprlang;
pub mod grid;
pub mod oracle;
pub mod pipeline;
pub mod problem;
pub mod riccati;
pub mod simulate;
pub mod synthesis;

pub use error::{Error, ErrorCategory, Result};
pub use grid::{Field, UniformGrid};
pub use problem::{ProblemSpec, ResolvedProblem, TargetMode};
