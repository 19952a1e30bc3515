//! Exact references for everything the stochastic pipeline estimates:
//! closed-form policy gradients from dense MDP linear algebra, a
//! Frank-Wolfe solver for the constrained entropy optimum over the
//! occupancy polytope, and central finite differences.
//!
//! Everything here is desk-scale by design and refuses to run on models
//! past the guardrail.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{state_occupancy, OccupancyKind, OccupancyMeasure, TabularMdp};
use crate::objectives::{entropy, entropy_grad, constraint_grad, constraint_value, ConstraintSpec};
use crate::policy::SoftmaxPolicy;

/// Largest `|S|·|A|` the dense oracles accept.
pub const ORACLE_PAIR_LIMIT: usize = 4096;

fn check_guardrail(mdp: &TabularMdp) -> Result<()> {
    if mdp.n_pairs() > ORACLE_PAIR_LIMIT {
        return Err(Error::OracleGuardrail {
            size: mdp.n_pairs(),
            limit: ORACLE_PAIR_LIMIT,
        });
    }
    Ok(())
}

/// Exact `∇_θ ⟨λ(θ), r⟩` for the tabular softmax class.
///
/// Uses the advantage form: with `w` solving the policy evaluation system
/// for the state value of `r` and `q(s,a) = r(s,a) + γ ⟨P[s][a], w⟩`,
/// the gradient entry is `d(s) π(a|s) (q(s,a) - Σ_a' π(a'|s) q(s,a'))`.
pub fn exact_policy_gradient(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    reward: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_guardrail(mdp)?;
    let n_states = mdp.n_states();
    let n_actions = mdp.n_actions();
    if reward.len() != mdp.n_pairs() {
        return Err(Error::DimensionMismatch(format!(
            "reward has {} entries, expected {}",
            reward.len(),
            mdp.n_pairs()
        )));
    }
    let probs = policy.prob_matrix();
    let d = state_occupancy(mdp, &probs)?;
    let kernel = mdp.policy_kernel(&probs);

    // r_π(s) = Σ_a π(a|s) r(s,a)
    let r_pi = DVector::from_fn(n_states, |s, _| {
        (0..n_actions)
            .map(|a| probs[(s, a)] * reward[s * n_actions + a])
            .sum::<f64>()
    });
    // w = (I - γ P_π)^{-1} r_π
    let mut system = DMatrix::identity(n_states, n_states);
    for s in 0..n_states {
        for sp in 0..n_states {
            system[(s, sp)] -= mdp.discount() * kernel[(s, sp)];
        }
    }
    let w = system
        .lu()
        .solve(&r_pi)
        .ok_or_else(|| Error::Numerical("singular policy evaluation system".into()))?;

    let mut grad = DMatrix::zeros(n_states, n_actions);
    for s in 0..n_states {
        let q: Vec<f64> = (0..n_actions)
            .map(|a| {
                let row = mdp.transition_row(s, a);
                reward[s * n_actions + a]
                    + mdp.discount() * row.iter().zip(w.iter()).map(|(&p, &v)| p * v).sum::<f64>()
            })
            .collect();
        let q_bar: f64 = (0..n_actions).map(|a| probs[(s, a)] * q[a]).sum();
        for a in 0..n_actions {
            grad[(s, a)] = d[s] * probs[(s, a)] * (q[a] - q_bar);
        }
    }
    Ok(grad)
}

/// Exact `∇_θ ⟨λ_H(θ), r⟩` by dynamic programming over the first `H`
/// steps. `W_m(s,a)` is the expected `m`-step discounted return of `r`
/// started from `(s,a)`.
pub fn exact_truncated_policy_gradient(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    reward: &DVector<f64>,
    horizon: usize,
) -> Result<DMatrix<f64>> {
    check_guardrail(mdp)?;
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let n_states = mdp.n_states();
    let n_actions = mdp.n_actions();
    let probs = policy.prob_matrix();
    let kernel = mdp.policy_kernel(&probs);

    // Returns W_m for m = 1..=H; W_{m+1}(s,a) = r(s,a) + γ Σ_{s'} P W̄_m(s').
    let mut returns: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    let mut current = DMatrix::from_fn(n_states, n_actions, |s, a| reward[s * n_actions + a]);
    returns.push(current.clone());
    for _ in 1..horizon {
        let w_bar = DVector::from_fn(n_states, |s, _| {
            (0..n_actions)
                .map(|a| probs[(s, a)] * current[(s, a)])
                .sum::<f64>()
        });
        let mut next = DMatrix::from_fn(n_states, n_actions, |s, a| reward[s * n_actions + a]);
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = mdp.transition_row(s, a);
                next[(s, a)] += mdp.discount()
                    * row.iter().zip(w_bar.iter()).map(|(&p, &v)| p * v).sum::<f64>();
            }
        }
        returns.push(next.clone());
        current = next;
    }

    let mut dist = DVector::from_column_slice(mdp.init_dist());
    let mut grad = DMatrix::zeros(n_states, n_actions);
    let mut weight = 1.0 - mdp.discount();
    for t in 0..horizon {
        let w_m = &returns[horizon - 1 - t];
        for s in 0..n_states {
            if dist[s] == 0.0 {
                continue;
            }
            let w_bar: f64 = (0..n_actions).map(|a| probs[(s, a)] * w_m[(s, a)]).sum();
            for a in 0..n_actions {
                grad[(s, a)] += weight * dist[s] * probs[(s, a)] * (w_m[(s, a)] - w_bar);
            }
        }
        weight *= mdp.discount();
        if t + 1 < horizon {
            dist = kernel.transpose() * dist;
        }
    }
    Ok(grad)
}

/// Central finite differences of a scalar function of `θ`.
pub fn finite_diff_grad(
    f: impl Fn(&DMatrix<f64>) -> f64,
    theta: &DMatrix<f64>,
    step: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(theta.nrows(), theta.ncols(), |i, j| {
        let mut up = theta.clone();
        up[(i, j)] += step;
        let mut dn = theta.clone();
        dn[(i, j)] -= step;
        (f(&up) - f(&dn)) / (2.0 * step)
    })
}

/// Central finite differences of a scalar function of a λ vector.
pub fn finite_diff_grad_vec(
    f: impl Fn(&DVector<f64>) -> f64,
    lambda: &DVector<f64>,
    step: f64,
) -> DVector<f64> {
    DVector::from_fn(lambda.len(), |i, _| {
        let mut up = lambda.clone();
        up[i] += step;
        let mut dn = lambda.clone();
        dn[i] -= step;
        (f(&up) - f(&dn)) / (2.0 * step)
    })
}

// ── Frank-Wolfe solver for the constrained entropy optimum ─────────────

/// Certified solution of `max H(λ) s.t. R(λ) ≤ 0` over the occupancy
/// polytope, with the recovered dual multiplier.
#[derive(Debug, Clone)]
pub struct OptimumCertificate {
    pub f_star: f64,
    pub lambda_star: OccupancyMeasure,
    pub nu_star: f64,
    /// `[R(λ*)]₊` of the certified primal point.
    pub feasibility_residual: f64,
    /// `|ν* · R(λ*)|`.
    pub slackness_residual: f64,
    /// Dual upper bound minus primal lower bound on `F*`.
    pub duality_gap: f64,
    /// False when the solver hit its iteration caps before certifying.
    pub usable: bool,
}

/// Optimal deterministic policy for `reward`, by policy iteration. Exact:
/// each evaluation is a dense solve and the loop terminates finitely.
fn best_response(mdp: &TabularMdp, reward: &DVector<f64>) -> Result<Vec<usize>> {
    let n_states = mdp.n_states();
    let n_actions = mdp.n_actions();
    let greedy = |values: &DVector<f64>| -> Vec<usize> {
        (0..n_states)
            .map(|s| {
                let mut best = 0;
                let mut best_q = f64::NEG_INFINITY;
                for a in 0..n_actions {
                    let row = mdp.transition_row(s, a);
                    let q = reward[s * n_actions + a]
                        + mdp.discount()
                            * row.iter().zip(values.iter()).map(|(&p, &v)| p * v).sum::<f64>();
                    if q > best_q {
                        best_q = q;
                        best = a;
                    }
                }
                best
            })
            .collect()
    };

    let mut actions = greedy(&DVector::zeros(n_states));
    for _ in 0..(n_states * n_actions + 16) {
        // Evaluate the deterministic policy.
        let mut system = DMatrix::identity(n_states, n_states);
        let mut r_pi = DVector::zeros(n_states);
        for s in 0..n_states {
            let a = actions[s];
            r_pi[s] = reward[s * n_actions + a];
            let row = mdp.transition_row(s, a);
            for sp in 0..n_states {
                system[(s, sp)] -= mdp.discount() * row[sp];
            }
        }
        let values = system
            .lu()
            .solve(&r_pi)
            .ok_or_else(|| Error::Numerical("singular evaluation in policy iteration".into()))?;
        let improved = greedy(&values);
        if improved == actions {
            return Ok(actions);
        }
        actions = improved;
    }
    Err(Error::Numerical("policy iteration failed to settle".into()))
}

/// Exact occupancy of a deterministic policy given by its action map.
fn occupancy_of_deterministic(mdp: &TabularMdp, actions: &[usize]) -> Result<DVector<f64>> {
    let n_states = mdp.n_states();
    let n_actions = mdp.n_actions();
    let mut system = DMatrix::identity(n_states, n_states);
    for s in 0..n_states {
        let row = mdp.transition_row(s, actions[s]);
        for sp in 0..n_states {
            system[(sp, s)] -= mdp.discount() * row[sp];
        }
    }
    let rhs = DVector::from_iterator(
        n_states,
        mdp.init_dist().iter().map(|&p| (1.0 - mdp.discount()) * p),
    );
    let d = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular occupancy system".into()))?;
    let mut lambda = DVector::zeros(mdp.n_pairs());
    for s in 0..n_states {
        lambda[s * n_actions + actions[s]] = d[s];
    }
    Ok(lambda)
}

struct FwOutcome {
    lambda: DVector<f64>,
    value: f64,
    gap: f64,
}

/// Maximizes a smooth concave objective over the occupancy polytope by
/// Frank-Wolfe with exact linear minimization oracles (MDP solves) and
/// bisection line search.
fn frank_wolfe_max(
    mdp: &TabularMdp,
    start: DVector<f64>,
    value_fn: &dyn Fn(&DVector<f64>) -> f64,
    grad_fn: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    gap_tol: f64,
    max_iters: usize,
) -> Result<FwOutcome> {
    let mut lambda = start;
    let mut gap = f64::INFINITY;
    for _ in 0..max_iters {
        let grad = grad_fn(&lambda);
        let actions = best_response(mdp, &grad)?;
        let vertex = occupancy_of_deterministic(mdp, &actions)?;
        let direction = &vertex - &lambda;
        gap = grad.dot(&direction);
        if gap <= gap_tol {
            return Ok(FwOutcome {
                value: value_fn(&lambda),
                lambda,
                gap: gap.max(0.0),
            });
        }
        // Directional derivative is decreasing in t; bisect for the root.
        let deriv = |t: f64| grad_fn(&(&lambda + &direction * t)).dot(&direction);
        let step = if deriv(1.0) >= 0.0 {
            1.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if deriv(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        lambda += direction * step;
    }
    Ok(FwOutcome {
        value: value_fn(&lambda),
        lambda,
        gap,
    })
}

/// Solves `max H(λ) s.t. R(λ) ≤ 0` by a ramped quadratic-penalty
/// Frank-Wolfe scheme.
///
/// The multiplier is recovered as `ν̂ = 2μ [R(λ_μ)]₊` at the final ramp
/// stage and cross-checked by a grid search over the dual function. The
/// primal point is made feasible by mixing toward the safest occupancy,
/// and the reported gap is `max_λ(H - ν̂ R) - H(λ*)`, a true primal-dual
/// certificate.
pub fn solve_constrained_optimum(
    mdp: &TabularMdp,
    spec: &ConstraintSpec,
    penalty_for_fw: f64,
    tolerance: f64,
    floor: f64,
) -> Result<OptimumCertificate> {
    check_guardrail(mdp)?;
    if penalty_for_fw <= 0.0 || tolerance <= 0.0 {
        return Err(Error::InvalidConfig(
            "penalty ramp start and tolerance must be positive".into(),
        ));
    }
    let uniform = SoftmaxPolicy::uniform(mdp.n_states(), mdp.n_actions(), 1.0);
    let start = crate::mdp::exact_occupancy(mdp, &uniform)?.values;

    let fw_iters = 6000;
    let inner_tol = tolerance * 0.1;

    // Penalty ramp: μ doubles until the penalized optimum is nearly
    // feasible and the multiplier estimate has settled.
    let mut mu = penalty_for_fw;
    let mut current = start.clone();
    let mut nu_hat = 0.0;
    for _stage in 0..32 {
        let value_fn = |l: &DVector<f64>| {
            let viol = constraint_value(spec, l, floor).unwrap_or(f64::INFINITY).max(0.0);
            entropy(l, floor) - mu * viol * viol
        };
        let grad_fn = |l: &DVector<f64>| {
            let viol = constraint_value(spec, l, floor).unwrap_or(0.0).max(0.0);
            let mut g = -entropy_grad(l, floor);
            if viol > 0.0 {
                g -= constraint_grad(spec, l, floor).unwrap() * (2.0 * mu * viol);
            }
            g
        };
        let outcome = frank_wolfe_max(mdp, current, &value_fn, &grad_fn, inner_tol, fw_iters)?;
        current = outcome.lambda;
        let viol = constraint_value(spec, &current, floor)?.max(0.0);
        let new_nu = 2.0 * mu * viol;
        let settled = viol <= tolerance * 1e-2 && (new_nu - nu_hat).abs() <= tolerance.max(1e-3);
        nu_hat = new_nu;
        if settled || viol == 0.0 {
            break;
        }
        mu *= 4.0;
    }

    // Small grid around ν̂: the dual function d(ν) = max_λ (H - νR) upper
    // bounds F* for every ν ≥ 0; keep the tightest.
    // The remaining Frank-Wolfe gap is added to the dual value, so the
    // bound stays valid even when the inner solve hits its cap.
    let dual_bound = |nu: f64| -> Result<f64> {
        let value_fn = |l: &DVector<f64>| {
            entropy(l, floor) - nu * constraint_value(spec, l, floor).unwrap_or(0.0)
        };
        let grad_fn = |l: &DVector<f64>| {
            -entropy_grad(l, floor) - constraint_grad(spec, l, floor).unwrap() * nu
        };
        let outcome =
            frank_wolfe_max(mdp, start.clone(), &value_fn, &grad_fn, inner_tol, fw_iters)?;
        Ok(outcome.value + outcome.gap.max(0.0))
    };
    let mut best_nu = nu_hat;
    let mut best_ub = f64::INFINITY;
    let mut candidates = vec![nu_hat];
    if nu_hat > 0.0 {
        candidates.extend([nu_hat * 0.7, nu_hat * 0.85, nu_hat * 1.15, nu_hat * 1.3]);
    }
    for nu in candidates {
        let ub = dual_bound(nu)?;
        if ub < best_ub {
            best_ub = ub;
            best_nu = nu;
        }
    }

    // Feasible primal point: mix toward the safest occupancy if needed.
    let mut lambda_star = current.clone();
    let mut viol = constraint_value(spec, &lambda_star, floor)?;
    if viol > 0.0 {
        let safe_grad = -constraint_grad(spec, &current, floor)?;
        let actions = best_response(mdp, &safe_grad)?;
        let mut safe = occupancy_of_deterministic(mdp, &actions)?;
        // One extra descent pass on R for the nonlinear constraints.
        let outcome = frank_wolfe_max(
            mdp,
            safe.clone(),
            &|l| -constraint_value(spec, l, floor).unwrap_or(f64::INFINITY),
            &|l| -constraint_grad(spec, l, floor).unwrap(),
            1e-10,
            200,
        )?;
        safe = outcome.lambda;
        let r_safe = constraint_value(spec, &safe, floor)?;
        if r_safe < viol {
            // Convexity: R((1-t)λ + t λ_safe) ≤ (1-t)R(λ) + t R_safe.
            let t = (viol / (viol - r_safe)).clamp(0.0, 1.0);
            lambda_star = &current * (1.0 - t) + safe * t;
            viol = constraint_value(spec, &lambda_star, floor)?;
        }
    }

    let f_star = entropy(&lambda_star, floor);
    let feasibility_residual = viol.max(0.0);
    let slackness_residual = (best_nu * constraint_value(spec, &lambda_star, floor)?).abs();
    let duality_gap = best_ub - f_star;
    let usable = duality_gap <= tolerance
        && duality_gap >= -1e-9
        && feasibility_residual <= 1e-6;
    Ok(OptimumCertificate {
        f_star,
        lambda_star: OccupancyMeasure {
            values: lambda_star,
            kind: OccupancyKind::Exact,
            discount: mdp.discount(),
        },
        nu_star: best_nu,
        feasibility_residual,
        slackness_residual,
        duality_gap,
        usable,
    })
}
