//! Monte-Carlo occupancy estimation, the split-batch REINFORCE gradient
//! estimator, and the closed-form bias/variance constants attached to it.
//!
//! The batch of `B` trajectories is split into `I₁` (occupancy estimate,
//! which fixes the pseudo-reward) and `I₂` (score-function average), so a
//! single trajectory batch yields a full penalty gradient step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{sample_batch, OccupancyKind, OccupancyMeasure, TabularMdp, Trajectory};
use crate::policy::SoftmaxPolicy;

/// Discounted visit counts `(1/|I|) Σ_b Σ_t γ^t δ_{s_t,a_t}`, i.e. the
/// Monte-Carlo occupancy estimate before `(1-γ)` normalization. Each
/// trajectory contributes total mass `(1-γ^H)/(1-γ)` exactly.
pub fn discounted_visit_counts(
    trajectories: &[Trajectory],
    n_states: usize,
    n_actions: usize,
    gamma: f64,
) -> Result<DVector<f64>> {
    if trajectories.is_empty() {
        return Err(Error::InvalidConfig("empty trajectory batch".into()));
    }
    let horizon = trajectories[0].horizon();
    if trajectories.iter().any(|t| t.horizon() != horizon) {
        return Err(Error::InvalidConfig("unequal horizons in batch".into()));
    }
    let mut counts = DVector::zeros(n_states * n_actions);
    for traj in trajectories {
        let mut w = 1.0;
        for &(s, a) in &traj.steps {
            counts[s * n_actions + a] += w;
            w *= gamma;
        }
    }
    counts /= trajectories.len() as f64;
    Ok(counts)
}

/// Monte-Carlo occupancy estimate; unbiased for the truncated occupancy
/// and of total mass `1 - γ^H` exactly.
pub fn mc_occupancy(
    trajectories: &[Trajectory],
    n_states: usize,
    n_actions: usize,
    gamma: f64,
) -> Result<OccupancyMeasure> {
    let values =
        discounted_visit_counts(trajectories, n_states, n_actions, gamma)? * (1.0 - gamma);
    Ok(OccupancyMeasure {
        values,
        kind: OccupancyKind::McEstimate {
            horizon: trajectories[0].horizon(),
            batch: trajectories.len(),
        },
        discount: gamma,
    })
}

/// Single-trajectory REINFORCE term
/// `g_H(θ, τ, r) = Σ_t (Σ_{k=t}^{H-1} γ^k r(s_k, a_k)) ∇_θ log π(a_t|s_t)`.
///
/// This is the bare reward-to-go form; it estimates the gradient of the
/// *unnormalized* discounted return. Scale by `(1-γ)` for gradients of
/// `(1-γ)`-normalized occupancy functionals.
pub fn reinforce_grad(
    policy: &SoftmaxPolicy,
    trajectory: &Trajectory,
    pseudo_reward: &DVector<f64>,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    if pseudo_reward.len() != policy.n_states() * policy.n_actions() {
        return Err(Error::DimensionMismatch(format!(
            "pseudo-reward has {} entries, policy has {} pairs",
            pseudo_reward.len(),
            policy.n_states() * policy.n_actions()
        )));
    }
    if pseudo_reward.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pseudo-reward".into()));
    }
    let probs = policy.prob_matrix();
    Ok(reinforce_grad_with_probs(
        policy,
        &probs,
        trajectory,
        pseudo_reward,
        gamma,
    ))
}

pub(crate) fn reinforce_grad_with_probs(
    policy: &SoftmaxPolicy,
    probs: &DMatrix<f64>,
    trajectory: &Trajectory,
    pseudo_reward: &DVector<f64>,
    gamma: f64,
) -> DMatrix<f64> {
    let n_actions = policy.n_actions();
    let horizon = trajectory.horizon();
    // Reward-to-go with absolute discounting γ^k from the episode start.
    let mut to_go = vec![0.0; horizon + 1];
    let mut w = gamma.powi(horizon as i32 - 1);
    for t in (0..horizon).rev() {
        let (s, a) = trajectory.steps[t];
        to_go[t] = to_go[t + 1] + w * pseudo_reward[s * n_actions + a];
        w /= gamma;
    }
    let mut grad = DMatrix::zeros(policy.n_states(), n_actions);
    for t in 0..horizon {
        let (s, a) = trajectory.steps[t];
        policy.accumulate_score(probs, s, a, to_go[t], &mut grad);
    }
    grad
}

/// Mean of `g_H` over a batch, accumulated in slice order so the result
/// is independent of how the trajectories were produced.
pub(crate) fn reinforce_batch_mean(
    policy: &SoftmaxPolicy,
    probs: &DMatrix<f64>,
    trajectories: &[Trajectory],
    pseudo_reward: &DVector<f64>,
    gamma: f64,
) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(policy.n_states(), policy.n_actions());
    for traj in trajectories {
        acc += reinforce_grad_with_probs(policy, probs, traj, pseudo_reward, gamma);
    }
    acc / trajectories.len() as f64
}

/// Split-batch gradient estimator configuration.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub horizon: usize,
    pub batch: usize,
    /// Fraction of the batch assigned to the occupancy estimate `I₁`.
    pub i1_fraction: f64,
}

impl EstimatorConfig {
    pub fn new(horizon: usize, batch: usize) -> Self {
        Self {
            horizon,
            batch,
            i1_fraction: 0.5,
        }
    }

    pub fn split(&self) -> Result<(usize, usize)> {
        if self.batch < 2 {
            return Err(Error::InvalidConfig("batch must be at least 2".into()));
        }
        if self.i1_fraction == 0.5 && self.batch % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "batch {} must be even for the half/half split",
                self.batch
            )));
        }
        let i1 = ((self.batch as f64) * self.i1_fraction).round() as usize;
        if i1 == 0 || i1 >= self.batch {
            return Err(Error::InvalidConfig(format!(
                "split fraction {} leaves an empty index set",
                self.i1_fraction
            )));
        }
        Ok((i1, self.batch - i1))
    }
}

/// Split-batch REINFORCE estimate of `∇_θ F(λ_H(θ))` (with the `(1-γ)`
/// occupancy normalization), together with its closed-form error bounds.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub grad: DMatrix<f64>,
    pub horizon: usize,
    pub batch_split: (usize, usize),
    /// `D_{P,H} γ^H + D_{P,ĝ}/√|I₁|`, or `∞` when no constants were given.
    pub bias_bound: f64,
    /// `σ²_{P,H}/|I₂|`, or `∞` when no constants were given.
    pub variance_bound: f64,
}

/// Samples a batch, estimates `λ̂` on `I₁`, evaluates the pseudo-reward
/// there, and averages the REINFORCE terms over `I₂`.
///
/// `grad_lambda_fn` maps the `(1-γ)`-normalized `λ̂` to the pseudo-reward
/// vector `∇_λ F(λ)|_{λ=λ̂}`.
pub fn grad_estimate(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    grad_lambda_fn: impl Fn(&DVector<f64>) -> DVector<f64>,
    cfg: &EstimatorConfig,
    constants: Option<&SmoothnessConstants>,
    master_seed: u64,
    base_stream: u64,
) -> Result<GradientEstimate> {
    let (i1, i2) = cfg.split()?;
    let batch = sample_batch(mdp, policy, cfg.horizon, cfg.batch, master_seed, base_stream)?;
    let lambda_hat = mc_occupancy(&batch[..i1], mdp.n_states(), mdp.n_actions(), mdp.discount())?;
    let pseudo_reward = grad_lambda_fn(&lambda_hat.values);
    if pseudo_reward.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pseudo-reward".into()));
    }
    let probs = policy.prob_matrix();
    let mean =
        reinforce_batch_mean(policy, &probs, &batch[i1..], &pseudo_reward, mdp.discount());
    let grad = mean * (1.0 - mdp.discount());
    let (bias_bound, variance_bound) = match constants {
        Some(c) => bias_variance_bounds(c, cfg.horizon, i1, i2),
        None => (f64::INFINITY, f64::INFINITY),
    };
    Ok(GradientEstimate {
        grad,
        horizon: cfg.horizon,
        batch_split: (i1, i2),
        bias_bound,
        variance_bound,
    })
}

// ── Closed-form constants ───────────────────────────────────────────────

/// Regularity constants of the penalized objective, transcribed from
/// their printed closed forms. Setting `beta = 0` recovers the plain
/// (unpenalized) estimator constants.
///
/// The penalized λ-space constants mix the parameter-space diameter
/// `D_Θ` and the constraint range bound `R_UB` exactly as printed; the
/// empirically measured Lipschitz constants are logged separately by the
/// tests rather than silently repairing the formulas.
#[derive(Debug, Clone, Copy)]
pub struct SmoothnessConstants {
    pub ell_psi: f64,
    pub l_psi: f64,
    pub ell_lambda: f64,
    pub l_lambda: f64,
    pub l_lambda_inf: f64,
    pub gamma: f64,
    pub d_theta: f64,
    pub d_lambda: f64,
    /// `R_UB = max_λ |R(λ)|`.
    pub r_ub: f64,
    /// `|S| · |A|`.
    pub n_pairs: usize,
    pub beta: f64,
}

impl SmoothnessConstants {
    fn one_minus_gamma(&self) -> f64 {
        1.0 - self.gamma
    }

    /// `ℓ_{P,λ}(β) = ℓ_λ + 2 D_Θ β ℓ_λ`.
    pub fn ell_p_lambda(&self) -> f64 {
        self.ell_lambda + 2.0 * self.d_theta * self.beta * self.ell_lambda
    }

    /// `L_{P,λ}(β) = L_λ + 2β(R_UB L_λ + ℓ_λ²)`.
    pub fn l_p_lambda(&self) -> f64 {
        self.l_lambda + 2.0 * self.beta * (self.r_ub * self.l_lambda + self.ell_lambda.powi(2))
    }

    /// `L_{P,λ,∞}(β) = L_{λ,∞} + β(R_UB ℓ_λ + 2ℓ_λ²)`.
    pub fn l_p_lambda_inf(&self) -> f64 {
        self.l_lambda_inf
            + self.beta * (self.r_ub * self.ell_lambda + 2.0 * self.ell_lambda.powi(2))
    }

    /// Gradient bound of the plain objective in θ,
    /// `ℓ_{F,θ} = 2 ℓ_ψ ℓ_λ / (1-γ)²`.
    pub fn ell_f_theta(&self) -> f64 {
        2.0 * self.ell_psi * self.ell_lambda / self.one_minus_gamma().powi(2)
    }

    /// Penalty gradient bound in θ, as printed:
    /// `ℓ_{P,θ} = 2ℓ_ψ (L_λ + 2βℓ_λ(D_Θ L_λ + ℓ_λ)) / (1-γ)²`.
    pub fn ell_p_theta(&self) -> f64 {
        let inner = self.l_lambda
            + 2.0 * self.beta * self.ell_lambda * (self.d_theta * self.l_lambda + self.ell_lambda);
        2.0 * self.ell_psi * inner / self.one_minus_gamma().powi(2)
    }

    /// Smoothness of the penalty in θ:
    /// `L_{P,θ} = 4 L'_{λ,∞} ℓ_ψ²/(1-γ)² + 8 ℓ_ψ² ℓ_{P,λ}/(1-γ)³
    ///  + 2 ℓ_{P,λ}(L_ψ + ℓ_ψ²)/(1-γ)²`,
    /// with `L'_{λ,∞} = L_{λ,∞} + β(D_Θ ℓ_λ + 2ℓ_λ²)` as printed.
    pub fn l_p_theta(&self) -> f64 {
        let omg = self.one_minus_gamma();
        let l_inf_mixed = self.l_lambda_inf
            + self.beta * (self.d_theta * self.ell_lambda + 2.0 * self.ell_lambda.powi(2));
        let ell_p = self.ell_p_lambda();
        4.0 * l_inf_mixed * self.ell_psi.powi(2) / omg.powi(2)
            + 8.0 * self.ell_psi.powi(2) * ell_p / omg.powi(3)
            + 2.0 * ell_p * (self.l_psi + self.ell_psi.powi(2)) / omg.powi(2)
    }

    /// Squared truncation-bias constant:
    /// `D²_{P,H} = 6ℓ_ψ² L_{P,λ}'² /(1-γ)⁶
    ///  + 16 ℓ_ψ² ℓ_{P,λ}² ((H+1)²/(1-γ)² + 1/(1-γ)⁴)`,
    /// where `L_{P,λ}' = L_λ + 2βℓ_λ(D_Θ L_λ + ℓ_λ)` as printed.
    pub fn d2_p_h(&self, horizon: usize) -> f64 {
        let omg = self.one_minus_gamma();
        let l_mixed = self.l_lambda
            + 2.0 * self.beta * self.ell_lambda * (self.d_theta * self.l_lambda + self.ell_lambda);
        let ell_p = self.ell_p_lambda();
        let h1 = (horizon as f64 + 1.0).powi(2);
        6.0 * self.ell_psi.powi(2) * l_mixed.powi(2) / omg.powi(6)
            + 16.0 * self.ell_psi.powi(2) * ell_p.powi(2) * (h1 / omg.powi(2) + 1.0 / omg.powi(4))
    }

    pub fn d_p_h(&self, horizon: usize) -> f64 {
        self.d2_p_h(horizon).sqrt()
    }

    /// Occupancy-estimation bias constant:
    /// `D_{P,ĝ} = 2ℓ_ψ L'_{λ,∞} |S||A| / (1-γ)²`.
    pub fn d_p_ghat(&self) -> f64 {
        let l_inf_mixed = self.l_lambda_inf
            + self.beta * (self.d_theta * self.ell_lambda + 2.0 * self.ell_lambda.powi(2));
        2.0 * self.ell_psi * l_inf_mixed * self.n_pairs as f64 / self.one_minus_gamma().powi(2)
    }

    /// Variance constant `σ²_{P,H} = H ℓ_{P,λ} ℓ_ψ / (1-γ)`.
    pub fn sigma2_p_h(&self, horizon: usize) -> f64 {
        horizon as f64 * self.ell_p_lambda() * self.ell_psi / self.one_minus_gamma()
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

/// `(bias, variance)` bounds of the split-batch estimator:
/// bias `≤ D_{P,H} γ^H + D_{P,ĝ}/√|I₁|`, variance `≤ σ²_{P,H}/|I₂|`.
/// With `beta = 0` these are the plain-objective bounds.
pub fn bias_variance_bounds(
    constants: &SmoothnessConstants,
    horizon: usize,
    i1: usize,
    i2: usize,
) -> (f64, f64) {
    let bias = constants.d_p_h(horizon) * constants.gamma.powi(horizon as i32)
        + constants.d_p_ghat() / (i1 as f64).sqrt();
    let variance = constants.sigma2_p_h(horizon) / i2 as f64;
    (bias, variance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::test_support::{random_mdp, random_policy};
    use crate::mdp::{exact_occupancy, sample_batch, substream_rng, truncated_occupancy};
    use crate::oracle::exact_truncated_policy_gradient;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn tiny_constants(gamma: f64) -> SmoothnessConstants {
        SmoothnessConstants {
            ell_psi: 1.0,
            l_psi: 0.0,
            ell_lambda: 2.0,
            l_lambda: 1.0,
            l_lambda_inf: 1.0,
            gamma,
            d_theta: 4.0,
            d_lambda: std::f64::consts::SQRT_2,
            r_ub: 1.0,
            n_pairs: 4,
            beta: 0.0,
        }
    }

    #[test]
    fn single_trajectory_estimate() {
        let traj = Trajectory {
            steps: vec![(0, 0), (1, 0)],
            stream_id: 0,
        };
        let occ = mc_occupancy(&[traj], 2, 1, 0.5).unwrap();
        assert_abs_diff_eq!(occ.values[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(occ.values[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn estimate_mass_is_exact() {
        let mut rng = substream_rng(17, 0);
        let mdp = random_mdp(3, 2, 0.9, &mut rng);
        let policy = random_policy(3, 2, 2.0, &mut rng);
        let batch = sample_batch(&mdp, &policy, 12, 16, 5, 0).unwrap();
        let occ = mc_occupancy(&batch, 3, 2, 0.9).unwrap();
        assert_abs_diff_eq!(occ.total_mass(), 1.0 - 0.9f64.powi(12), epsilon = 1e-12);
    }

    #[test]
    fn empty_batch_is_config_error() {
        assert!(mc_occupancy(&[], 2, 2, 0.9).is_err());
    }

    #[test]
    fn estimate_mean_matches_truncated() {
        let mut rng = substream_rng(19, 0);
        let mdp = random_mdp(4, 2, 0.9, &mut rng);
        let policy = random_policy(4, 2, 2.0, &mut rng);
        let horizon = 15;
        let b = 4000;
        let batch = sample_batch(&mdp, &policy, horizon, b, 7, 0).unwrap();
        let n = mdp.n_pairs();
        // Per-entry mean and std over single-trajectory estimates.
        let singles: Vec<DVector<f64>> = batch
            .iter()
            .map(|t| {
                mc_occupancy(std::slice::from_ref(t), 4, 2, 0.9)
                    .unwrap()
                    .values
            })
            .collect();
        let mean = singles.iter().fold(DVector::zeros(n), |acc, v| acc + v) / b as f64;
        let truncated = truncated_occupancy(&mdp, &policy, horizon).unwrap().values;
        for i in 0..n {
            let var = singles
                .iter()
                .map(|v| (v[i] - mean[i]).powi(2))
                .sum::<f64>()
                / (b - 1) as f64;
            let band = 3.0 * var.sqrt() / (b as f64).sqrt() + 1e-12;
            assert!(
                (mean[i] - truncated[i]).abs() <= band,
                "entry {i}: |{} - {}| > {band}",
                mean[i],
                truncated[i]
            );
        }
    }

    #[test]
    fn reinforce_single_step() {
        let policy = SoftmaxPolicy::uniform(2, 2, 1.0);
        let traj = Trajectory {
            steps: vec![(1, 0)],
            stream_id: 0,
        };
        let reward = DVector::from_row_slice(&[0.0, 0.0, 2.0, 0.0]);
        let grad = reinforce_grad(&policy, &traj, &reward, 0.9).unwrap();
        let expected = policy.score(1, 0) * 2.0;
        assert!((grad - expected).amax() < 1e-14);
    }

    #[test]
    fn reinforce_zero_reward() {
        let mut rng = substream_rng(23, 0);
        let mdp = random_mdp(3, 3, 0.8, &mut rng);
        let policy = random_policy(3, 3, 2.0, &mut rng);
        let batch = sample_batch(&mdp, &policy, 9, 1, 3, 0).unwrap();
        let grad = reinforce_grad(&policy, &batch[0], &DVector::zeros(9), 0.8).unwrap();
        assert_eq!(grad.amax(), 0.0);
    }

    #[test]
    fn reinforce_expectation_matches_truncated_gradient() {
        let mut rng = substream_rng(29, 0);
        let mdp = random_mdp(3, 2, 0.8, &mut rng);
        let policy = random_policy(3, 2, 2.0, &mut rng);
        let reward = DVector::from_fn(6, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let horizon = 10;
        let b = 20000;
        let batch = sample_batch(&mdp, &policy, horizon, b, 11, 0).unwrap();
        let probs = policy.prob_matrix();
        let mut mean = DMatrix::zeros(3, 2);
        let mut sq = DMatrix::zeros(3, 2);
        for t in &batch {
            let g =
                reinforce_grad_with_probs(&policy, &probs, t, &reward, 0.8) * (1.0 - 0.8);
            mean += &g;
            sq += g.component_mul(&g);
        }
        mean /= b as f64;
        sq /= b as f64;
        let exact = exact_truncated_policy_gradient(&mdp, &policy, &reward, horizon).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let var = (sq[(i, j)] - mean[(i, j)].powi(2)).max(0.0);
                let band = 3.0 * (var / b as f64).sqrt() + 1e-9;
                assert!(
                    (mean[(i, j)] - exact[(i, j)]).abs() <= band,
                    "({i},{j}): {} vs {}",
                    mean[(i, j)],
                    exact[(i, j)]
                );
            }
        }
    }

    #[test]
    fn odd_batch_rejected() {
        let mut rng = substream_rng(31, 0);
        let mdp = random_mdp(3, 2, 0.9, &mut rng);
        let policy = random_policy(3, 2, 2.0, &mut rng);
        let cfg = EstimatorConfig::new(5, 7);
        let res = grad_estimate(&mdp, &policy, |l| l.clone(), &cfg, None, 1, 0);
        assert!(res.is_err());
    }

    #[test]
    fn lambda_hat_ignores_i2() {
        let mut rng = substream_rng(37, 0);
        let mdp = random_mdp(3, 2, 0.9, &mut rng);
        let policy = random_policy(3, 2, 2.0, &mut rng);
        let batch = sample_batch(&mdp, &policy, 8, 8, 13, 0).unwrap();
        let lambda = mc_occupancy(&batch[..4], 3, 2, 0.9).unwrap().values;
        let mut permuted = batch.clone();
        permuted[4..].reverse();
        let lambda_perm = mc_occupancy(&permuted[..4], 3, 2, 0.9).unwrap().values;
        assert_eq!(lambda, lambda_perm, "bitwise identical");
    }

    #[test]
    fn occupancy_is_lipschitz_in_theta() {
        // ‖λ(θ₁) − λ(θ₂)‖₁ ≤ 2ℓψ/(1−γ)² ‖θ₁ − θ₂‖ with ℓψ = 1.
        let mut rng = substream_rng(41, 0);
        let gamma = 0.8;
        let mdp = random_mdp(4, 3, gamma, &mut rng);
        for _ in 0..20 {
            let p1 = random_policy(4, 3, 2.0, &mut rng);
            let p2 = random_policy(4, 3, 2.0, &mut rng);
            let l1 = exact_occupancy(&mdp, &p1).unwrap().values;
            let l2 = exact_occupancy(&mdp, &p2).unwrap().values;
            let lhs: f64 = (l1 - l2).abs().sum();
            let rhs = 2.0 / (1.0 - gamma).powi(2) * (p1.theta() - p2.theta()).norm();
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn golden_constants() {
        let c = tiny_constants(0.5);
        // σ²_H = H ℓ_λ ℓ_ψ / (1-γ): H=10, ℓ_λ=2, ℓ_ψ=1, γ=0.5 → 40.
        assert_abs_diff_eq!(c.sigma2_p_h(10), 40.0, epsilon = 1e-12);
        // D_ĝ = 2 ℓ_ψ L_{λ,∞} |S||A| / (1-γ)²: 2·1·1·4/0.25 = 32.
        assert_abs_diff_eq!(c.d_p_ghat(), 32.0, epsilon = 1e-12);
        // β = 0 collapses ℓ_{P,λ} to ℓ_λ.
        assert_abs_diff_eq!(c.ell_p_lambda(), c.ell_lambda, epsilon = 1e-15);
        // and the penalized variants reduce to the plain Lemma forms.
        let cb = c.with_beta(0.0);
        assert_abs_diff_eq!(cb.l_p_lambda(), cb.l_lambda, epsilon = 1e-15);
        assert_abs_diff_eq!(cb.l_p_lambda_inf(), cb.l_lambda_inf, epsilon = 1e-15);
    }

    #[test]
    fn bias_bound_formula() {
        let c = tiny_constants(0.5).with_beta(0.0);
        let (bias, variance) = bias_variance_bounds(&c, 10, 16, 4);
        let expected_bias = c.d_p_h(10) * 0.5f64.powi(10) + c.d_p_ghat() / 4.0;
        assert_abs_diff_eq!(bias, expected_bias, epsilon = 1e-12);
        assert_abs_diff_eq!(variance, 10.0, epsilon = 1e-12);
        // β > 0 only grows every bound.
        let cb = tiny_constants(0.5).with_beta(2.0);
        let (bias_b, var_b) = bias_variance_bounds(&cb, 10, 16, 4);
        assert!(bias_b > bias && var_b > variance);
    }

    #[test]
    fn estimator_with_constant_pseudo_reward_is_unbiased() {
        let mut rng = substream_rng(43, 0);
        let gamma = 0.8;
        let mdp = random_mdp(4, 2, gamma, &mut rng);
        let policy = random_policy(4, 2, 2.0, &mut rng);
        let reward = DVector::from_fn(8, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let horizon = 12;
        let cfg = EstimatorConfig::new(horizon, 4);
        let reps = 8000;
        let mut means = DMatrix::zeros(4, 2);
        let mut sq = DMatrix::zeros(4, 2);
        for rep in 0..reps {
            let est = grad_estimate(
                &mdp,
                &policy,
                |_| reward.clone(),
                &cfg,
                None,
                101,
                (rep * cfg.batch) as u64,
            )
            .unwrap();
            means += &est.grad;
            sq += est.grad.component_mul(&est.grad);
        }
        means /= reps as f64;
        sq /= reps as f64;
        let exact = exact_truncated_policy_gradient(&mdp, &policy, &reward, horizon).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                let var = (sq[(i, j)] - means[(i, j)].powi(2)).max(0.0);
                let band = 3.0 * (var / reps as f64).sqrt() + 1e-9;
                assert!(
                    (means[(i, j)] - exact[(i, j)]).abs() <= band,
                    "({i},{j}): {} vs {} band {band}",
                    means[(i, j)],
                    exact[(i, j)]
                );
            }
        }
    }

    #[test]
    fn variance_scales_inversely_with_i2() {
        let mut rng = substream_rng(47, 0);
        let gamma = 0.8;
        let mdp = random_mdp(3, 2, gamma, &mut rng);
        let policy = random_policy(3, 2, 2.0, &mut rng);
        let reward = DVector::from_fn(6, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let horizon = 10;
        let reps = 600;
        let mut variances = Vec::new();
        let i2_grid = [8usize, 32, 128];
        let mut stream = 0u64;
        for &i2 in &i2_grid {
            let batch = 8 + i2;
            let cfg = EstimatorConfig {
                horizon,
                batch,
                i1_fraction: 8.0 / batch as f64,
            };
            let mut grads = Vec::with_capacity(reps);
            for _ in 0..reps {
                let est = grad_estimate(
                    &mdp,
                    &policy,
                    |_| reward.clone(),
                    &cfg,
                    None,
                    919,
                    stream,
                )
                .unwrap();
                assert_eq!(est.batch_split, (8, i2));
                stream += batch as u64;
                grads.push(est.grad);
            }
            let mean = grads.iter().fold(DMatrix::zeros(3, 2), |a, g| a + g) / reps as f64;
            let var = grads
                .iter()
                .map(|g| (g - &mean).norm_squared())
                .sum::<f64>()
                / (reps - 1) as f64;
            variances.push(var);
        }
        // Least-squares slope of log var against log |I₂|.
        let xs: Vec<f64> = i2_grid.iter().map(|&v| (v as f64).ln()).collect();
        let ys: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
        let xm = xs.iter().sum::<f64>() / 3.0;
        let ym = ys.iter().sum::<f64>() / 3.0;
        let slope = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - xm) * (y - ym))
            .sum::<f64>()
            / xs.iter().map(|x| (x - xm).powi(2)).sum::<f64>();
        assert!(
            (slope + 1.0).abs() <= 0.2,
            "variance slope {slope} not within 20% of -1"
        );
    }
}
