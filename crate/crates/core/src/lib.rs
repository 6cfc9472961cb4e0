//! Verification of first- and second-order optimality conditions at a
//! candidate point, for nonsmooth programs `min f(x) s.t. G(x) in K` with
//! piecewise-C² data and polyhedral `K`, and for bi-local solutions of
//! bilevel programs via the implicit-function (SP) and first-order (FP)
//! reformulations.
//!
//! The crate is a verifier, not a solver: every check either produces a
//! certificate (an LP optimum, a multiplier bundle, a margin) or a concrete
//! witness of failure. Sampling-based probes record their caveats instead of
//! overclaiming.
//!
//! Module map:
//!
//! - [`expr`] — piecewise expression DAGs with exact first/second
//!   directional derivatives, active selections, and regularity probes.
//! - [`linalg`] / [`lp`] — dense linear algebra and a deterministic simplex
//!   with duality certificates; vertex enumeration at desk scale.
//! - [`cones`] — polyhedral sets with tangent cones and second-order
//!   tangent sets.
//! - [`nsopt`] — first-/second-order condition checks for `G(x) in K`
//!   programs, one LP certificate per direction.
//! - [`bilevel`] — lower-level KKT analysis, piecewise sensitivity systems,
//!   solution-map derivatives, SP/FP first-, dual- and second-order checks,
//!   tracking and growth probes.
//! - [`sampling`] — deterministic seeded direction samplers.

pub mod bilevel;
pub mod cones;
pub mod expr;
pub mod linalg;
pub mod lp;
pub mod nsopt;
pub mod sampling;
pub mod tol;

#[doc(hidden)]
pub mod test_util;

pub use linalg::DenseMatrix;
pub use tol::Tolerances;
