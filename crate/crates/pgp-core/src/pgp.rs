//! Single-loop projected stochastic gradient descent on the penalized
//! entropy objective `P(θ) = -H(λ(θ)) + β L(R(λ(θ)))`, driven entirely by
//! pseudo-rewards: the λ-gradient of the penalty is fed to the REINFORCE
//! estimator as if it were a reward vector, so one trajectory batch per
//! iteration yields the full penalty gradient.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimation::{discounted_visit_counts, reinforce_batch_mean, SmoothnessConstants};
use crate::mdp::{exact_occupancy, sample_batch, TabularMdp};
use crate::objectives::{constraint_grad, constraint_value, entropy, entropy_grad, ConstraintSpec};
use crate::policy::SoftmaxPolicy;

/// Penalty composition `L` applied to the constraint value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    /// `L(x) = [x]₊²`, smooth.
    Quadratic,
    /// `L(x) = [x]₊`; at the kink the zero subgradient is used.
    Exact,
}

#[derive(Debug, Clone, Copy)]
pub struct PenaltyConfig {
    pub beta: f64,
    pub kind: PenaltyKind,
}

impl PenaltyConfig {
    pub fn quadratic(beta: f64) -> Self {
        Self {
            beta,
            kind: PenaltyKind::Quadratic,
        }
    }

    pub fn exact(beta: f64) -> Self {
        Self {
            beta,
            kind: PenaltyKind::Exact,
        }
    }

    /// `L(x)`.
    pub fn compose(&self, x: f64) -> f64 {
        match self.kind {
            PenaltyKind::Quadratic => x.max(0.0).powi(2),
            PenaltyKind::Exact => x.max(0.0),
        }
    }

    /// `L'(x)` (a valid subgradient element for the exact penalty).
    pub fn compose_derivative(&self, x: f64) -> f64 {
        match self.kind {
            PenaltyKind::Quadratic => 2.0 * x.max(0.0),
            PenaltyKind::Exact => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `P = -H + β L(R)` from already-evaluated entropy and constraint values.
pub fn penalty_value(entropy_val: f64, constraint_val: f64, cfg: &PenaltyConfig) -> f64 {
    -entropy_val + cfg.beta * cfg.compose(constraint_val)
}

/// Combined pseudo-reward `g_O + β g_C` evaluated at `λ̂`:
/// `∇_λ(-H)(λ̂) + β L'(R(λ̂)) ∇_λ R(λ̂)`. Analytic; no autodiff.
pub fn penalty_pseudo_reward(
    lambda_hat: &DVector<f64>,
    spec: &ConstraintSpec,
    cfg: &PenaltyConfig,
    floor: f64,
) -> Result<DVector<f64>> {
    let mut reward = entropy_grad(lambda_hat, floor);
    let slope = cfg.beta * cfg.compose_derivative(constraint_value(spec, lambda_hat, floor)?);
    if slope != 0.0 {
        reward += constraint_grad(spec, lambda_hat, floor)? * slope;
    }
    Ok(reward)
}

/// Scale the occupancy estimate enters the pseudo-rewards in.
///
/// `DiscountedCounts` evaluates pseudo-rewards on the raw discounted
/// visit counts, the estimate exactly as the estimator formula sums it;
/// penalty weights quoted for the grid-world runs assume this scale.
/// `Normalized` applies the `(1-γ)` occupancy normalization first, so β
/// then weighs a constraint on a mass-1 occupancy. The gradient average
/// itself always carries the `(1-γ)` normalization of this crate's
/// occupancy-functional convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OccupancyScale {
    #[default]
    DiscountedCounts,
    Normalized,
}

#[derive(Debug, Clone)]
pub struct PgpRunConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub batch: usize,
    pub horizon: usize,
    pub penalty: PenaltyConfig,
    pub seed: u64,
    /// Logging cadence; the initial and final iterates are always logged.
    pub eval_every: usize,
    /// Floor applied to `λ̂` inside the pseudo-rewards. Logged metrics
    /// always use the crate default floor on the exact occupancy.
    pub entropy_floor: f64,
    pub scale: OccupancyScale,
}

impl PgpRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_size <= 0.0 {
            return Err(Error::InvalidConfig("step size must be positive".into()));
        }
        if self.batch < 2 || self.batch % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "batch {} must be even and at least 2",
                self.batch
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be at least 1".into()));
        }
        if self.penalty.beta < 0.0 || !self.penalty.beta.is_finite() {
            return Err(Error::InvalidConfig("β must be finite and ≥ 0".into()));
        }
        if self.entropy_floor <= 0.0 {
            return Err(Error::InvalidConfig("entropy floor must be positive".into()));
        }
        Ok(())
    }
}

/// One logged iterate. Entropy, constraint, violation and penalty are
/// evaluated on the exact `(1-γ)`-normalized occupancy of the iterate,
/// never on `λ̂`, so estimator noise stays out of the metrics.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub iter: usize,
    pub entropy: f64,
    pub constraint: f64,
    pub violation: f64,
    pub penalty: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
    pub nu: Option<f64>,
}

/// Log of one optimization run.
#[derive(Debug, Clone, Default)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
}

impl RunRecord {
    pub fn final_row(&self) -> &RunRow {
        self.rows.last().expect("run records always log the final iterate")
    }

    pub fn has_dual(&self) -> bool {
        self.rows.iter().any(|r| r.nu.is_some())
    }

    /// Comma-separated log. With `timing` off the wall-clock column is
    /// written as 0 so repeated runs are byte-identical.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from("iter,entropy,constraint,violation,penalty,grad_norm,wall_ms");
        let dual = self.has_dual();
        if dual {
            out.push_str(",nu");
        }
        out.push('\n');
        for row in &self.rows {
            let wall = if timing { row.wall_ms } else { 0.0 };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}",
                row.iter, row.entropy, row.constraint, row.violation, row.penalty, row.grad_norm, wall
            ));
            if dual {
                out.push_str(&format!(",{}", row.nu.unwrap_or(0.0)));
            }
            out.push('\n');
        }
        out
    }
}

struct Evaluator<'a> {
    mdp: &'a TabularMdp,
    spec: &'a ConstraintSpec,
    penalty: PenaltyConfig,
    floor: f64,
    started: Instant,
}

impl Evaluator<'_> {
    fn row(
        &self,
        iter: usize,
        policy: &SoftmaxPolicy,
        grad_norm: f64,
        nu: Option<f64>,
    ) -> Result<RunRow> {
        let lambda = exact_occupancy(self.mdp, policy)?.values;
        let ent = entropy(&lambda, self.floor);
        let cons = constraint_value(self.spec, &lambda, self.floor)?;
        Ok(RunRow {
            iter,
            entropy: ent,
            constraint: cons,
            violation: cons.max(0.0),
            penalty: penalty_value(ent, cons, &self.penalty),
            grad_norm,
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
            nu,
        })
    }
}

fn scaled_estimate(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    probs: &DMatrix<f64>,
    run_spec: &ConstraintSpec,
    penalty: &PenaltyConfig,
    cfg_scale: OccupancyScale,
    floor: f64,
    horizon: usize,
    batch: usize,
    seed: u64,
    base_stream: u64,
) -> Result<DMatrix<f64>> {
    let trajectories = sample_batch(mdp, policy, horizon, batch, seed, base_stream)?;
    let i1 = batch / 2;
    let mut lambda_hat = discounted_visit_counts(
        &trajectories[..i1],
        mdp.n_states(),
        mdp.n_actions(),
        mdp.discount(),
    )?;
    if cfg_scale == OccupancyScale::Normalized {
        lambda_hat *= 1.0 - mdp.discount();
    }
    let pseudo_reward = penalty_pseudo_reward(&lambda_hat, run_spec, penalty, floor)?;
    let grad =
        reinforce_batch_mean(policy, probs, &trajectories[i1..], &pseudo_reward, mdp.discount())
            * (1.0 - mdp.discount());
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient estimate at stream base {base_stream}"
        )));
    }
    Ok(grad)
}

/// Runs the penalty method for `cfg.iterations` projected SGD steps and
/// returns the last iterate with the full log. The guarantee is for the
/// last iterate, so there is no early stopping or averaging.
pub fn pgp_run(
    mdp: &TabularMdp,
    policy0: &SoftmaxPolicy,
    spec: &ConstraintSpec,
    cfg: &PgpRunConfig,
) -> Result<(SoftmaxPolicy, RunRecord)> {
    cfg.validate()?;
    let evaluator = Evaluator {
        mdp,
        spec,
        penalty: cfg.penalty,
        floor: crate::objectives::DEFAULT_ENTROPY_FLOOR,
        started: Instant::now(),
    };
    // The spec is stated on mass-1 occupancies; in counts mode the
    // pseudo-rewards see it rescaled onto raw visit counts.
    let run_spec = match cfg.scale {
        OccupancyScale::DiscountedCounts => spec.rescaled(1.0 / (1.0 - mdp.discount())),
        OccupancyScale::Normalized => spec.clone(),
    };
    let mut policy = policy0.clone();
    let mut record = RunRecord::default();
    for k in 0..=cfg.iterations {
        let probs = policy.prob_matrix();
        let grad = scaled_estimate(
            mdp,
            &policy,
            &probs,
            &run_spec,
            &cfg.penalty,
            cfg.scale,
            cfg.entropy_floor,
            cfg.horizon,
            cfg.batch,
            cfg.seed,
            (k * cfg.batch) as u64,
        )
        .map_err(|e| Error::Numerical(format!("iteration {k}: {e}")))?;
        if k % cfg.eval_every == 0 || k == cfg.iterations {
            record.rows.push(evaluator.row(k, &policy, grad.norm(), None)?);
        }
        if k == cfg.iterations {
            break;
        }
        let theta = policy.theta() - grad * cfg.step_size;
        policy = policy.with_theta_projected(theta);
    }
    Ok((policy, record))
}

// ── Theorem-driven parameter recommendation ─────────────────────────────

/// Inputs the closed-form schedule cannot supply itself: the inverse
/// Lipschitz modulus of the occupancy map and the initial penalty gap.
/// Neither is computable from the model alone, so both default to 1.
#[derive(Debug, Clone, Copy)]
pub struct RecommendOptions {
    pub mu_lambda: f64,
    pub delta0: f64,
}

impl Default for RecommendOptions {
    fn default() -> Self {
        Self {
            mu_lambda: 1.0,
            delta0: 1.0,
        }
    }
}

/// Parameter schedule derived from the convergence analysis.
#[derive(Debug, Clone, Copy)]
pub struct RecommendedParams {
    pub beta: f64,
    pub step_size: f64,
    pub horizon: usize,
    pub i1: usize,
    pub i2: usize,
    pub batch: usize,
    pub iterations: usize,
}

/// Accuracy-driven schedule: `β(ε) = (ν*+1)(ν* + √(ν*²+2))/ε`,
/// `η = 1/L_{P,θ}(β)`, the smallest `H` with `C(β)(1+H)γ^H ≤ ε/2`, batch
/// sizes from the variance and estimation-bias constants, and the
/// iteration count from the biased-SGD contraction.
pub fn recommend_params(
    epsilon: f64,
    nu_star: f64,
    constants: &SmoothnessConstants,
    opts: RecommendOptions,
) -> Result<RecommendedParams> {
    if !(0.0..1.0).contains(&epsilon) || epsilon <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "target accuracy {epsilon} outside (0, 1)"
        )));
    }
    if nu_star < 0.0 {
        return Err(Error::InvalidConfig("ν* must be nonnegative".into()));
    }
    let beta = (nu_star + 1.0) * (nu_star + (nu_star * nu_star + 2.0).sqrt()) / epsilon;
    let c = constants.with_beta(beta);
    let l_p_theta = c.l_p_theta();
    let step_size = 1.0 / l_p_theta;

    // D_{P,H} ≤ C(β)(1+H) with an H-free C(β).
    let omg = 1.0 - c.gamma;
    let l_mixed =
        c.l_lambda + 2.0 * beta * c.ell_lambda * (c.d_theta * c.l_lambda + c.ell_lambda);
    let c_beta = (6.0 * c.ell_psi.powi(2) * l_mixed.powi(2) / omg.powi(6)
        + 16.0 * c.ell_psi.powi(2) * c.ell_p_lambda().powi(2)
            * (1.0 / omg.powi(2) + 1.0 / omg.powi(4)))
    .sqrt();
    let mut horizon = 1usize;
    while c_beta * (1.0 + horizon as f64) * c.gamma.powi(horizon as i32) > epsilon / 2.0 {
        horizon += 1;
        if horizon > 10_000_000 {
            return Err(Error::Numerical(
                "horizon recommendation failed to settle".into(),
            ));
        }
    }

    let i1 = (c.sigma2_p_h(horizon) / (epsilon * epsilon)).ceil().max(1.0) as usize;
    let i2 = (4.0 * c.d_p_ghat().powi(2) / (epsilon * epsilon)).ceil().max(1.0) as usize;
    let mut batch = i1 + i2;
    if batch % 2 != 0 {
        batch += 1;
    }
    let iterations = (3.0 * c.d_lambda.powi(2) * opts.mu_lambda.powi(2) * l_p_theta / epsilon
        * (3.0 * opts.delta0 / epsilon).ln().max(1.0))
    .ceil() as usize;
    Ok(RecommendedParams {
        beta,
        step_size,
        horizon,
        i1,
        i2,
        batch,
        iterations,
    })
}

/// Translates a penalty optimality gap `E[Δ_{L,β}] ≤ ε_pen` into a
/// constraint-violation bound and the matching lower objective-gap bound
/// `ν* · violation` under strong duality.
pub fn translate_guarantee(
    eps_pen: f64,
    beta: f64,
    nu_star: f64,
    kind: PenaltyKind,
) -> Result<(f64, f64)> {
    if eps_pen < 0.0 || nu_star < 0.0 || beta <= 0.0 {
        return Err(Error::InvalidConfig(
            "translation needs ε ≥ 0, ν* ≥ 0, β > 0".into(),
        ));
    }
    let violation = match kind {
        PenaltyKind::Quadratic => {
            (nu_star + (nu_star * nu_star + 2.0 * beta * eps_pen).sqrt()) / beta
        }
        PenaltyKind::Exact => {
            if beta <= 2.0 * nu_star {
                return Err(Error::InvalidConfig(format!(
                    "exact-penalty translation needs β > 2ν* (β = {beta}, ν* = {nu_star})"
                )));
            }
            eps_pen / (beta / 2.0 - nu_star)
        }
    };
    Ok((violation, nu_star * violation))
}
