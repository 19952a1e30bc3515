//! Shared fixtures for the benchmark targets.

use pgp_core::gridworld::{build_frozenlake, CostProfile, GridworldSpec};
use pgp_core::mdp::TabularMdp;
use pgp_core::objectives::ConstraintSpec;
use pgp_core::policy::SoftmaxPolicy;

/// The default 6×6 lake with the hole-penalizing cost.
pub fn lake(discount: f64) -> (TabularMdp, ConstraintSpec) {
    let spec = GridworldSpec::default_lake(discount, CostProfile::HolesPenalized);
    build_frozenlake(&spec).expect("built-in map is valid")
}

/// Uniform policy matching the lake dimensions.
pub fn lake_policy() -> SoftmaxPolicy {
    SoftmaxPolicy::uniform(36, 4, 6.0)
}
