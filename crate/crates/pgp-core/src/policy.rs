//! Tabular softmax policies `π_θ(a|s) = exp(θ[s,a]) / Σ_a' exp(θ[s,a'])`
//! over the box `Θ = [-R, R]^{S×A}`, with analytic score functions and the
//! density embedding of arbitrary stationary policies.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Softmax policy with parameter matrix `θ` of shape `S × A` and box
/// radius `R`. Every entry of `θ` lies in `[-R, R]`, making all policy
/// probabilities strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    theta: DMatrix<f64>,
    box_radius: f64,
}

impl SoftmaxPolicy {
    pub fn new(theta: DMatrix<f64>, box_radius: f64) -> Result<Self> {
        if box_radius <= 0.0 || !box_radius.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "box radius {box_radius} must be positive and finite"
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy parameters".into()));
        }
        if theta.iter().any(|&v| v.abs() > box_radius + 1e-12) {
            return Err(Error::InvalidConfig(
                "policy parameters outside the [-R, R] box".into(),
            ));
        }
        Ok(Self { theta, box_radius })
    }

    /// Uniform policy (`θ = 0`).
    pub fn uniform(n_states: usize, n_actions: usize, box_radius: f64) -> Self {
        Self {
            theta: DMatrix::zeros(n_states, n_actions),
            box_radius,
        }
    }

    pub fn n_states(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.theta.ncols()
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn box_radius(&self) -> f64 {
        self.box_radius
    }

    /// Replaces the parameters with `proj_Θ(theta)`.
    pub fn with_theta_projected(&self, theta: DMatrix<f64>) -> Self {
        Self {
            theta: project_box(theta, self.box_radius),
            box_radius: self.box_radius,
        }
    }

    /// `π_θ(·|s)`, computed with row-max subtraction so that radii up to
    /// several hundred stay overflow-free.
    pub fn action_probs(&self, state: usize) -> Vec<f64> {
        let row = self.theta.row(state);
        let max = row.max();
        let mut probs: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        probs
    }

    /// Full `S × A` action-probability matrix.
    pub fn prob_matrix(&self) -> DMatrix<f64> {
        let mut probs = self.theta.clone();
        for mut row in probs.row_iter_mut() {
            let max = row.max();
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        probs
    }

    /// Row-wise log-probabilities, computed from shifted logits directly
    /// rather than via `log(prob)`.
    pub fn log_prob_matrix(&self) -> DMatrix<f64> {
        let mut out = self.theta.clone();
        for mut row in out.row_iter_mut() {
            let max = row.max();
            let log_z = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            for v in row.iter_mut() {
                *v -= log_z;
            }
        }
        out
    }

    /// Score function `∇_θ log π_θ(a|s)`: row `s` holds `e_a − π(·|s)`,
    /// every other row is zero.
    pub fn score(&self, state: usize, action: usize) -> DMatrix<f64> {
        let mut grad = DMatrix::zeros(self.n_states(), self.n_actions());
        let probs = self.action_probs(state);
        for (a, &p) in probs.iter().enumerate() {
            grad[(state, a)] = if a == action { 1.0 - p } else { -p };
        }
        grad
    }

    /// Adds `w · ∇_θ log π_θ(a|s)` into `acc` without allocating.
    pub fn accumulate_score(
        &self,
        probs: &DMatrix<f64>,
        state: usize,
        action: usize,
        weight: f64,
        acc: &mut DMatrix<f64>,
    ) {
        for a in 0..self.n_actions() {
            let indicator = if a == action { 1.0 } else { 0.0 };
            acc[(state, a)] += weight * (indicator - probs[(state, a)]);
        }
    }

    /// Greedy action per state for visualization; ties break toward the
    /// lowest action index.
    pub fn argmax_actions(&self) -> Vec<usize> {
        (0..self.n_states())
            .map(|s| {
                let row = self.theta.row(s);
                let mut best = 0;
                for a in 1..self.n_actions() {
                    if row[a] > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Serializes as a text record: a header line with the shape and the
    /// radius, then the `θ` entries row-major, one state per line.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "states={} actions={} radius={}\n",
            self.n_states(),
            self.n_actions(),
            self.box_radius
        );
        for s in 0..self.n_states() {
            let row: Vec<String> = (0..self.n_actions())
                .map(|a| format!("{}", self.theta[(s, a)]))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig("empty policy record".into()))?;
        let mut n_states = None;
        let mut n_actions = None;
        let mut radius = None;
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("bad header field `{field}`")))?;
            match key {
                "states" => n_states = Some(value.parse::<usize>()),
                "actions" => n_actions = Some(value.parse::<usize>()),
                "radius" => radius = Some(value.parse::<f64>()),
                _ => return Err(Error::InvalidConfig(format!("unknown header key `{key}`"))),
            }
        }
        let n_states = n_states
            .transpose()
            .map_err(|e| Error::InvalidConfig(format!("states: {e}")))?
            .ok_or_else(|| Error::InvalidConfig("missing `states` in header".into()))?;
        let n_actions = n_actions
            .transpose()
            .map_err(|e| Error::InvalidConfig(format!("actions: {e}")))?
            .ok_or_else(|| Error::InvalidConfig("missing `actions` in header".into()))?;
        let radius = radius
            .transpose()
            .map_err(|e| Error::InvalidConfig(format!("radius: {e}")))?
            .ok_or_else(|| Error::InvalidConfig("missing `radius` in header".into()))?;
        let mut entries = Vec::with_capacity(n_states * n_actions);
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            for tok in line.split_whitespace() {
                entries.push(
                    tok.parse::<f64>()
                        .map_err(|e| Error::InvalidConfig(format!("θ entry `{tok}`: {e}")))?,
                );
            }
        }
        if entries.len() != n_states * n_actions {
            return Err(Error::InvalidConfig(format!(
                "expected {} θ entries, found {}",
                n_states * n_actions,
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n_states, n_actions, &entries), radius)
    }
}

/// Entrywise clamp onto `[-R, R]`; idempotent.
pub fn project_box(mut theta: DMatrix<f64>, radius: f64) -> DMatrix<f64> {
    for v in theta.iter_mut() {
        *v = v.clamp(-radius, radius);
    }
    theta
}

/// Vector variant of the box projection.
pub fn project_box_vec(mut theta: nalgebra::DVector<f64>, radius: f64) -> nalgebra::DVector<f64> {
    for v in theta.iter_mut() {
        *v = v.clamp(-radius, radius);
    }
    theta
}

/// Parameter-space diameter `D_Θ = 2R√(|S||A|)` of the box `[-R, R]^{S×A}`.
pub fn theta_diameter(radius: f64, n_states: usize, n_actions: usize) -> f64 {
    2.0 * radius * ((n_states * n_actions) as f64).sqrt()
}

/// Result of embedding a stochastic policy table into the softmax class.
#[derive(Debug, Clone)]
pub struct EmbeddedPolicy {
    pub policy: SoftmaxPolicy,
    /// Measured `max_s ‖π_θ(·|s) − π*(·|s)‖₁`.
    pub l1_gap: f64,
}

/// Embeds a stationary policy table `π*` (rows are probability vectors,
/// zeros allowed) into the softmax class via the mixture
/// `π*_ε = (1-ε) π* + ε/|A|` and `θ = log π*_ε`. The resulting radius is
/// `max |log π*_ε| ≤ log(|A|/ε)` and the row-wise ℓ1 error is at most
/// `2ε(1 - 1/|A|)`.
///
/// With `scale_to_target` set, ε is pre-divided by `2(1 - 1/|A|)` so the
/// measured gap meets the requested ε itself.
pub fn embed_policy(
    pi_star: &DMatrix<f64>,
    epsilon: f64,
    scale_to_target: bool,
) -> Result<EmbeddedPolicy> {
    if !(0.0..1.0).contains(&epsilon) || epsilon <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "embedding ε = {epsilon} outside (0, 1)"
        )));
    }
    let n_actions = pi_star.ncols();
    if n_actions == 0 {
        return Err(Error::InvalidConfig("empty action set".into()));
    }
    for s in 0..pi_star.nrows() {
        let sum: f64 = pi_star.row(s).iter().sum();
        if (sum - 1.0).abs() > 1e-9 || pi_star.row(s).iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "row {s} of π* is not a probability vector"
            )));
        }
    }
    let eps = if scale_to_target {
        epsilon / (2.0 * (1.0 - 1.0 / n_actions as f64))
    } else {
        epsilon
    };
    let mix = eps / n_actions as f64;
    let theta = pi_star.map(|p| ((1.0 - eps) * p + mix).ln());
    let radius = theta.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let policy = SoftmaxPolicy::new(theta, radius.max(f64::MIN_POSITIVE))?;
    let probs = policy.prob_matrix();
    let mut l1_gap: f64 = 0.0;
    for s in 0..pi_star.nrows() {
        let gap: f64 = (0..n_actions)
            .map(|a| (probs[(s, a)] - pi_star[(s, a)]).abs())
            .sum();
        l1_gap = l1_gap.max(gap);
    }
    Ok(EmbeddedPolicy { policy, l1_gap })
}
