//! Comparison methods: a projected primal-dual policy gradient (PDPG)
//! baseline with a scalar dual variable, and the unconstrained
//! maximum-entropy run (the penalty method with β = 0).
//!
//! PDPG shares the whole estimator pipeline with the penalty method: given
//! the same seed both consume identical trajectory batches.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::estimation::{discounted_visit_counts, reinforce_batch_mean};
use crate::mdp::{exact_occupancy, sample_batch, TabularMdp};
use crate::objectives::{constraint_grad, constraint_value, entropy, entropy_grad, ConstraintSpec};
use crate::pgp::{
    pgp_run, penalty_value, OccupancyScale, PenaltyConfig, PgpRunConfig, RunRecord, RunRow,
};
use crate::policy::SoftmaxPolicy;

#[derive(Debug, Clone)]
pub struct PdpgConfig {
    /// Primal learning rate α_θ.
    pub primal_lr: f64,
    /// Dual learning rate α_μ.
    pub dual_lr: f64,
    /// Exponential-averaging factor α_t on the dual gradient; 1 disables
    /// the averaging, which is the best-performing reported setting.
    pub dual_momentum: f64,
    pub iterations: usize,
    pub batch: usize,
    pub horizon: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub entropy_floor: f64,
    pub scale: OccupancyScale,
}

impl PdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.primal_lr <= 0.0 || self.dual_lr <= 0.0 {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dual_momentum) || self.dual_momentum == 0.0 {
            return Err(Error::InvalidConfig(format!(
                "dual momentum {} outside (0, 1]",
                self.dual_momentum
            )));
        }
        if self.batch < 2 || self.batch % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "batch {} must be even and at least 2",
                self.batch
            )));
        }
        if self.horizon == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig(
                "horizon and eval_every must be at least 1".into(),
            ));
        }
        if self.entropy_floor <= 0.0 {
            return Err(Error::InvalidConfig("entropy floor must be positive".into()));
        }
        Ok(())
    }
}

/// Projected primal-dual loop:
/// `θ ← proj_Θ[θ - α_θ ĝ(∇_λ(-H + ν R))]`, `ν ← [ν + α_μ R(λ̂)]₊`,
/// with the dual gradient optionally exponentially averaged.
///
/// Returns the last policy, the full dual trace `ν_k`, and a run record
/// with the same schema as the penalty method plus a `nu` column.
pub fn pdpg_run(
    mdp: &TabularMdp,
    policy0: &SoftmaxPolicy,
    spec: &ConstraintSpec,
    cfg: &PdpgConfig,
) -> Result<(SoftmaxPolicy, Vec<f64>, RunRecord)> {
    cfg.validate()?;
    let started = Instant::now();
    // Logged penalty column uses the plain objective (β = 0): PDPG has no
    // penalty coefficient of its own.
    let no_penalty = PenaltyConfig::quadratic(0.0);

    let run_spec = match cfg.scale {
        OccupancyScale::DiscountedCounts => spec.rescaled(1.0 / (1.0 - mdp.discount())),
        OccupancyScale::Normalized => spec.clone(),
    };
    let mut policy = policy0.clone();
    let mut nu = 0.0;
    let mut dual_grad_avg = 0.0;
    let mut dual_trace = Vec::with_capacity(cfg.iterations + 1);
    let mut record = RunRecord::default();
    let i1 = cfg.batch / 2;

    for k in 0..=cfg.iterations {
        dual_trace.push(nu);
        let probs = policy.prob_matrix();
        let batch = sample_batch(mdp, &policy, cfg.horizon, cfg.batch, cfg.seed, (k * cfg.batch) as u64)?;
        let mut lambda_hat =
            discounted_visit_counts(&batch[..i1], mdp.n_states(), mdp.n_actions(), mdp.discount())?;
        if cfg.scale == OccupancyScale::Normalized {
            lambda_hat *= 1.0 - mdp.discount();
        }
        // Dual ascent on the constraint estimate, in the same scale the
        // pseudo-rewards see it.
        let constraint_hat = constraint_value(&run_spec, &lambda_hat, cfg.entropy_floor)?;
        // Lagrangian pseudo-reward ∇_λ(-H + ν R).
        let mut pseudo_reward = entropy_grad(&lambda_hat, cfg.entropy_floor);
        if nu != 0.0 {
            pseudo_reward += constraint_grad(&run_spec, &lambda_hat, cfg.entropy_floor)? * nu;
        }
        let grad =
            reinforce_batch_mean(&policy, &probs, &batch[i1..], &pseudo_reward, mdp.discount())
                * (1.0 - mdp.discount());
        if grad.iter().any(|v| !v.is_finite()) || !constraint_hat.is_finite() {
            return Err(Error::NonFinite(format!("PDPG update at iteration {k}")));
        }

        if k % cfg.eval_every == 0 || k == cfg.iterations {
            let eval_floor = crate::objectives::DEFAULT_ENTROPY_FLOOR;
            let lambda = exact_occupancy(mdp, &policy)?.values;
            let ent = entropy(&lambda, eval_floor);
            let cons = constraint_value(spec, &lambda, eval_floor)?;
            record.rows.push(RunRow {
                iter: k,
                entropy: ent,
                constraint: cons,
                violation: cons.max(0.0),
                penalty: penalty_value(ent, cons, &no_penalty),
                grad_norm: grad.norm(),
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
                nu: Some(nu),
            });
        }
        if k == cfg.iterations {
            break;
        }

        policy = policy.with_theta_projected(policy.theta() - grad * cfg.primal_lr);
        dual_grad_avg =
            (1.0 - cfg.dual_momentum) * dual_grad_avg + cfg.dual_momentum * constraint_hat;
        nu = (nu + cfg.dual_lr * dual_grad_avg).max(0.0);
    }
    Ok((policy, dual_trace, record))
}

/// Unconstrained maximum-entropy run: the penalty method with β = 0. The
/// constraint is still evaluated for the log so the violation of the
/// unconstrained optimum is visible.
pub fn unconstrained_me_run(
    mdp: &TabularMdp,
    policy0: &SoftmaxPolicy,
    spec: &ConstraintSpec,
    cfg: &PgpRunConfig,
) -> Result<(SoftmaxPolicy, RunRecord)> {
    let mut cfg = cfg.clone();
    cfg.penalty = PenaltyConfig {
        beta: 0.0,
        ..cfg.penalty
    };
    pgp_run(mdp, policy0, spec, &cfg)
}
