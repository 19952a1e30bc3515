//! Constrained maximum-entropy exploration in finite MDPs via penalty
//! regularization.
//!
//! The crate implements a single-loop, primal-only policy-gradient penalty
//! method for `max H(λ(θ)) s.t. R(λ(θ)) ≤ 0` over tabular softmax
//! policies, together with everything needed to check it at desk scale:
//! exact occupancy measures and policy gradients from dense linear
//! algebra, a Frank-Wolfe solver certifying the constrained optimum, a
//! primal-dual baseline, and a deterministic proximal-point penalty solver
//! for general hidden-convex constrained problems.

pub mod baselines;
pub mod error;
pub mod estimation;
pub mod gridworld;
pub mod ipppm;
pub mod mdp;
pub mod objectives;
pub mod oracle;
pub mod pgp;
pub mod policy;

pub use error::{Error, Result};
pub use estimation::{GradientEstimate, SmoothnessConstants};
pub use mdp::{OccupancyKind, OccupancyMeasure, TabularMdp, Trajectory};
pub use objectives::ConstraintSpec;
pub use oracle::OptimumCertificate;
pub use pgp::{OccupancyScale, PenaltyConfig, PenaltyKind, PgpRunConfig, RunRecord};
pub use policy::SoftmaxPolicy;
