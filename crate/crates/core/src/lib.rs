//! Exact, asymptotic and statistical analysis of a lattice random walk whose
//! transition law is modified at the origin only.
//!
//! The free walk steps with a symmetric kernel `P`; from the origin the step
//! law is `P + c` with `c = epsilon * s + a`. The crate computes `Pi_n(0, x)`
//! exactly by dynamic programming, rebuilds it from first-return
//! representations, evaluates the leading-order correction to the Gaussian
//! local limit in several equivalent forms, and samples trajectories as an
//! independent check.

pub mod asymptotics;
pub mod error;
pub mod exact;
pub mod field;
pub mod kernels;
pub mod montecarlo;
pub mod representation;
pub mod verify;

pub use error::{Error, Result};
pub use field::{BoxPolicy, MassField};
pub use kernels::{validate, LatticeVector, MomentData, SignedKernel, ValidatedSpec, WalkSpec};
