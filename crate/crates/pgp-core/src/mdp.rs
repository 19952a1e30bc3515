//! Finite MDP representation, trajectory sampling and occupancy measures.
//!
//! Occupancy vectors are indexed by state-action pairs in row-major order,
//! `i = s * n_actions + a`. All occupancy quantities carry the `(1 - γ)`
//! normalization, so an exact occupancy sums to 1 and an `H`-truncated one
//! sums to `1 - γ^H`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::policy::SoftmaxPolicy;

const STOCHASTIC_TOL: f64 = 1e-12;

/// A finite discounted MDP `(S, A, P, γ, μ0)`.
///
/// Rewards are not part of the model; constraint costs and pseudo-rewards
/// are supplied as vectors over `S × A` wherever they are needed.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Flattened transition kernel, `transitions[(s * A + a) * S + s']`.
    transitions: Vec<f64>,
    /// Nonzero successors per `(s, a)`, for sampling without scanning
    /// full rows.
    successors: Vec<Vec<(usize, f64)>>,
    init_dist: Vec<f64>,
    discount: f64,
    absorbing: BTreeSet<usize>,
}

impl TabularMdp {
    /// Validates and builds an MDP. Every `P[s][a]` row and `μ0` must be a
    /// probability vector within `1e-12`; absorbing states must self-loop
    /// under every action.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        init_dist: Vec<f64>,
        discount: f64,
        absorbing: BTreeSet<usize>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidModel("empty state or action set".into()));
        }
        if transitions.len() != n_states * n_actions * n_states {
            return Err(Error::DimensionMismatch(format!(
                "transition tensor has {} entries, expected {}",
                transitions.len(),
                n_states * n_actions * n_states
            )));
        }
        if init_dist.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "initial distribution has {} entries, expected {}",
                init_dist.len(),
                n_states
            )));
        }
        if !(0.0..1.0).contains(&discount) || discount <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "discount {discount} outside (0, 1)"
            )));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transitions[(s * n_actions + a) * n_states..][..n_states];
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::InvalidModel(format!(
                        "P[{s}][{a}] sums to {sum}, not 1"
                    )));
                }
                if row.iter().any(|&p| p < 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "P[{s}][{a}] has a negative entry"
                    )));
                }
            }
        }
        let mu_sum: f64 = init_dist.iter().sum();
        if (mu_sum - 1.0).abs() > STOCHASTIC_TOL || init_dist.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidModel("μ0 is not a probability vector".into()));
        }
        for &s in &absorbing {
            if s >= n_states {
                return Err(Error::InvalidModel(format!(
                    "absorbing state {s} out of range"
                )));
            }
            for a in 0..n_actions {
                if (transitions[(s * n_actions + a) * n_states + s] - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::InvalidModel(format!(
                        "absorbing state {s} does not self-loop under action {a}"
                    )));
                }
            }
        }
        let successors = (0..n_states * n_actions)
            .map(|sa| {
                transitions[sa * n_states..(sa + 1) * n_states]
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(sp, &p)| (sp, p))
                    .collect()
            })
            .collect();
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            successors,
            init_dist,
            discount,
            absorbing,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of state-action pairs `|S| · |A|`.
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    pub fn absorbing(&self) -> &BTreeSet<usize> {
        &self.absorbing
    }

    /// Transition row `P[s][a][·]`.
    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        &self.transitions[(state * self.n_actions + action) * self.n_states..][..self.n_states]
    }

    fn check_policy(&self, policy: &SoftmaxPolicy) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::DimensionMismatch(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    /// State-to-state kernel `P_π[s][s'] = Σ_a π(a|s) P[s][a][s']`.
    pub fn policy_kernel(&self, probs: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n_states;
        let mut k = DMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.n_actions {
                let p = probs[(s, a)];
                if p == 0.0 {
                    continue;
                }
                let row = self.transition_row(s, a);
                for (sp, &t) in row.iter().enumerate() {
                    if t != 0.0 {
                        k[(s, sp)] += p * t;
                    }
                }
            }
        }
        k
    }
}

/// How an occupancy vector was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccupancyKind {
    /// Stationary solve; total mass 1.
    Exact,
    /// First `H` steps of the discounted series; total mass `1 - γ^H`.
    Truncated(usize),
    /// Monte-Carlo estimate from `batch` trajectories of length `horizon`.
    McEstimate { horizon: usize, batch: usize },
}

/// Discounted state-action visitation vector over `S × A`.
#[derive(Debug, Clone)]
pub struct OccupancyMeasure {
    pub values: DVector<f64>,
    pub kind: OccupancyKind,
    pub discount: f64,
}

impl OccupancyMeasure {
    pub fn total_mass(&self) -> f64 {
        self.values.sum()
    }
}

/// A sampled state-action path of fixed length.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
    /// RNG substream the trajectory was drawn from, for provenance.
    pub stream_id: u64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }
}

/// RNG for one trajectory substream. Streams drawn from the same master
/// seed are independent, so a batch can be sampled in any order.
pub fn substream_rng(master_seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id);
    rng
}

fn sample_categorical<R: Rng>(rng: &mut R, probs: impl Iterator<Item = f64>, len: usize) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    len - 1
}

/// Samples one `H`-step trajectory under `policy`, starting from `μ0`.
pub fn sample_trajectory<R: Rng>(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    mdp.check_policy(policy)?;
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let probs = policy.prob_matrix();
    Ok(sample_trajectory_from_probs(mdp, &probs, horizon, rng, 0))
}

/// Sampling core shared by the batch paths; `probs` is the policy's
/// precomputed action-probability matrix.
pub(crate) fn sample_trajectory_from_probs<R: Rng>(
    mdp: &TabularMdp,
    probs: &DMatrix<f64>,
    horizon: usize,
    rng: &mut R,
    stream_id: u64,
) -> Trajectory {
    let n_states = mdp.n_states;
    let n_actions = mdp.n_actions;
    let mut steps = Vec::with_capacity(horizon);
    let mut state = sample_categorical(rng, mdp.init_dist.iter().copied(), n_states);
    for _ in 0..horizon {
        let action = sample_categorical(rng, (0..n_actions).map(|a| probs[(state, a)]), n_actions);
        steps.push((state, action));
        let successors = &mdp.successors[state * n_actions + action];
        if successors.len() == 1 {
            state = successors[0].0;
        } else {
            let pick =
                sample_categorical(rng, successors.iter().map(|&(_, p)| p), successors.len());
            state = successors[pick].0;
        }
    }
    Trajectory { steps, stream_id }
}

/// Samples `batch` i.i.d. trajectories on independent substreams
/// `base_stream..base_stream + batch`. The result does not depend on the
/// order the substreams are consumed in.
pub fn sample_batch(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    horizon: usize,
    batch: usize,
    master_seed: u64,
    base_stream: u64,
) -> Result<Vec<Trajectory>> {
    mdp.check_policy(policy)?;
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    if batch == 0 {
        return Err(Error::InvalidConfig("batch must be non-empty".into()));
    }
    let probs = policy.prob_matrix();
    Ok((0..batch)
        .map(|b| {
            let stream = base_stream + b as u64;
            let mut rng = substream_rng(master_seed, stream);
            sample_trajectory_from_probs(mdp, &probs, horizon, &mut rng, stream)
        })
        .collect())
}

/// Normalized state occupancy `d = (1-γ) μ0 + γ P_π^T d`, solved densely.
pub fn state_occupancy(mdp: &TabularMdp, probs: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = mdp.n_states;
    let kernel = mdp.policy_kernel(probs);
    let mut system = DMatrix::identity(n, n);
    // I - γ P_π^T
    for s in 0..n {
        for sp in 0..n {
            system[(sp, s)] -= mdp.discount * kernel[(s, sp)];
        }
    }
    let rhs =
        DVector::from_iterator(n, mdp.init_dist.iter().map(|&p| (1.0 - mdp.discount) * p));
    let lu = system.lu();
    lu.solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular occupancy system (γ < 1 violated?)".into()))
}

/// Exact state-action occupancy `λ(s,a) = d(s) π(a|s)`; sums to 1.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<OccupancyMeasure> {
    mdp.check_policy(policy)?;
    let probs = policy.prob_matrix();
    let d = state_occupancy(mdp, &probs)?;
    let mut values = DVector::zeros(mdp.n_pairs());
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            values[s * mdp.n_actions + a] = d[s] * probs[(s, a)];
        }
    }
    Ok(OccupancyMeasure {
        values,
        kind: OccupancyKind::Exact,
        discount: mdp.discount,
    })
}

/// Occupancy restricted to the first `H` steps, computed by `H` forward
/// propagations of the state distribution; sums to `1 - γ^H`.
pub fn truncated_occupancy(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    horizon: usize,
) -> Result<OccupancyMeasure> {
    mdp.check_policy(policy)?;
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let probs = policy.prob_matrix();
    let kernel = mdp.policy_kernel(&probs);
    let n = mdp.n_states;
    let mut dist = DVector::from_column_slice(&mdp.init_dist);
    let mut values = DVector::zeros(mdp.n_pairs());
    let mut weight = 1.0 - mdp.discount;
    for t in 0..horizon {
        for s in 0..n {
            let ds = dist[s];
            if ds == 0.0 {
                continue;
            }
            for a in 0..mdp.n_actions {
                values[s * mdp.n_actions + a] += weight * ds * probs[(s, a)];
            }
        }
        weight *= mdp.discount;
        if t + 1 < horizon {
            dist = kernel.transpose() * dist;
        }
    }
    Ok(OccupancyMeasure {
        values,
        kind: OccupancyKind::Truncated(horizon),
        discount: mdp.discount,
    })
}

/// Upper bound on the ℓ2 diameter of the occupancy polytope. Two
/// distributions of total mass 1 are at most `√2` apart, and a one-pair
/// polytope is a point.
pub fn occupancy_diameter(mdp: &TabularMdp) -> f64 {
    if mdp.n_pairs() <= 1 {
        0.0
    } else {
        std::f64::consts::SQRT_2
    }
}
