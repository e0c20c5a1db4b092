//! Exponential Runge–Kutta time integration for stiff semilinear problems
//! with state-dependent delay,
//!
//! ```text
//! u'(t) + A u(t) = f(t, u(t), u(t - tau(t, u(t)))),   t > 0,
//! u(t) = phi(t),                                      t <= 0,
//! ```
//!
//! where `A` is a discretised elliptic operator diagonalised by a fast sine
//! transform. Three families of schemes are provided: exponential Euler, a
//! second order explicit exponential Runge–Kutta method, and s-stage
//! exponential methods of collocation type. Every accepted step stores the
//! method's own continuous extension, so delayed arguments are evaluated with
//! dense output of matching order, including arguments that fall inside the
//! step currently being computed ("overlapping").
//!
//! Module map:
//!
//! - [`operator`]: sine-transform Laplacian, `phi_k` functions and the
//!   collocation weight functions `b_i(theta; -hA)`.
//! - [`problem`]: the delay problem definition and the built-in test problems.
//! - [`history`]: the piecewise continuous extension `U(t)`.
//! - [`steppers`]: single steps and fixed-mesh integration.
//! - [`breakpoints`]: switching-function tracking of derivative discontinuities.
//! - [`harness`]: convergence studies, references and CSV reports.
//! - [`dump`]: the little-endian binary history/snapshot format.
//! - [`verify`]: quadrature oracles for the operator kernels.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod breakpoints;
pub mod dump;
mod error;
pub mod harness;
pub mod history;
pub mod method;
pub mod operator;
pub mod problem;
pub mod steppers;
pub mod verify;

pub use breakpoints::{integrate_tracked, BreakpointSet, TrackingOptions};
pub use error::{Error, Result};
pub use history::{HistoryBuffer, Segment};
pub use method::Method;
pub use operator::{phi_scalar, DiscreteOperator, GridFunction, LagrangeBasis};
pub use problem::ProblemSpec;
pub use steppers::{integrate, IterationMode, IterationPolicy, SolveResult, StepOutcome};
