//! Feedback stabilization for measure-driven particle dynamics.
//!
//! The state of the system is a probability measure over `R^d`, represented
//! throughout as a uniform empirical measure on `N` particles. A vector field
//! `f(x, m, u)` moves every particle at once, a control-Lyapunov pair
//! `(phi, psi)` certifies that some control always pushes `phi` downhill, and
//! a sample-and-hold feedback picks that control at partition knots by running
//! a Wasserstein Moreau envelope (inf-convolution) of `phi` and applying the
//! extremal shift along the resulting optimal transport plan.
//!
//! Module map:
//!
//! - [`measures`]: empirical measures, exact optimal transport (assignment for
//!   equal particle counts, a transportation LP otherwise), plan disintegration.
//! - [`lyapunov`]: control-Lyapunov pairs, the ball moduli `S`, `I`, `Rcal`,
//!   the continuity modulus `omega`, and the derived constants consumed by the
//!   feedback-parameter selector.
//! - [`proximal`]: inf-convolution with Ekeland acceptance, the canonical
//!   subgradient lifted from the transport plan, and the runtime checks for the
//!   subgradient and Taylor-expansion inequalities.
//! - [`dynamics`]: vector fields, Lipschitz/sublinear constants, the RK4
//!   mean-field particle integrator, and the per-step drift bounds.
//! - [`stabilize`]: partitions, extremal-shift feedback (local and shell-based
//!   global), parameter selection, trajectory execution, and verdicts.
//! - [`harness`]: scenario files, property suites, reports, and the `stab` CLI
//!   commands.

// `!(a > b)` rejects NaN alongside the ordered failure case; the positive
// comparison would silently accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod lyapunov;
pub mod measures;
pub mod proximal;
pub mod rng;
pub mod sampling;
pub mod stabilize;

pub use error::StabError;
pub use measures::{EmpiricalMeasure, PlanCostReport, TransportPlan};

/// Shared absolute tolerance for inequality checks that should hold exactly
/// up to accumulated floating-point error.
pub const CHECK_TOL: f64 = 1e-9;

/// Relative tolerance under which two matching costs count as tied.
pub const COST_TIE_TOL: f64 = 1e-12;
