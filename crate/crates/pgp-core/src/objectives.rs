//! Entropy objective and constraint functionals over occupancy vectors,
//! with analytic λ-gradients. These gradients are the pseudo-rewards the
//! policy-gradient estimator consumes.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Default clamp applied to occupancy entries before taking logs.
pub const DEFAULT_ENTROPY_FLOOR: f64 = 1e-6;

/// Smoothed entropy `H(λ) = -Σ λ_i log(max(λ_i, ε_H))`.
pub fn entropy(lambda: &DVector<f64>, floor: f64) -> f64 {
    -lambda
        .iter()
        .map(|&v| v * v.max(floor).ln())
        .sum::<f64>()
}

/// Gradient of the *negative* smoothed entropy,
/// `∇_λ(-H)(λ) = log(max(λ, ε_H)) + 1` elementwise. This is the entropy
/// pseudo-reward `g_O`.
pub fn entropy_grad(lambda: &DVector<f64>, floor: f64) -> DVector<f64> {
    lambda.map(|v| v.max(floor).ln() + 1.0)
}

/// Single scalar constraint `R(λ) ≤ 0` over the occupancy polytope.
#[derive(Debug, Clone)]
pub enum ConstraintSpec {
    /// `R(λ) = ⟨c, λ⟩ - c_max`.
    Linear { cost: DVector<f64>, c_max: f64 },
    /// `R(λ) = KL(λ ‖ λ_ref) - r_max`; both arguments are floored before
    /// taking logs.
    KlRef { lambda_ref: DVector<f64>, r_max: f64 },
    /// `R(λ) = ‖λ - λ_ref‖₂ - b`. Nonsmooth at `λ = λ_ref`, where the zero
    /// subgradient is returned.
    NormRef { lambda_ref: DVector<f64>, b: f64 },
}

impl ConstraintSpec {
    /// The same constraint expressed on `factor`-scaled occupancies:
    /// `R_scaled(factor · λ) = factor · R(λ)` exactly, for all three
    /// variants. Used to evaluate pseudo-rewards on raw discounted visit
    /// counts while the spec itself stays in mass-1 units.
    pub fn rescaled(&self, factor: f64) -> ConstraintSpec {
        match self {
            ConstraintSpec::Linear { cost, c_max } => ConstraintSpec::Linear {
                cost: cost.clone(),
                c_max: c_max * factor,
            },
            ConstraintSpec::KlRef { lambda_ref, r_max } => ConstraintSpec::KlRef {
                lambda_ref: lambda_ref * factor,
                r_max: r_max * factor,
            },
            ConstraintSpec::NormRef { lambda_ref, b } => ConstraintSpec::NormRef {
                lambda_ref: lambda_ref * factor,
                b: b * factor,
            },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConstraintSpec::Linear { cost, .. } => cost.len(),
            ConstraintSpec::KlRef { lambda_ref, .. } => lambda_ref.len(),
            ConstraintSpec::NormRef { lambda_ref, .. } => lambda_ref.len(),
        }
    }

    fn check_dim(&self, lambda: &DVector<f64>) -> Result<()> {
        if self.dim() != lambda.len() {
            return Err(Error::DimensionMismatch(format!(
                "constraint over {} pairs applied to λ of length {}",
                self.dim(),
                lambda.len()
            )));
        }
        Ok(())
    }
}

/// `R(λ)` for the given constraint.
pub fn constraint_value(spec: &ConstraintSpec, lambda: &DVector<f64>, floor: f64) -> Result<f64> {
    spec.check_dim(lambda)?;
    match spec {
        ConstraintSpec::Linear { cost, c_max } => Ok(cost.dot(lambda) - c_max),
        ConstraintSpec::KlRef { lambda_ref, r_max } => {
            if lambda_ref.iter().any(|&r| r.max(floor) <= 0.0) {
                return Err(Error::InvalidConfig(
                    "KL reference has a zero entry after flooring".into(),
                ));
            }
            let kl: f64 = lambda
                .iter()
                .zip(lambda_ref.iter())
                .map(|(&l, &r)| {
                    let lf = l.max(floor);
                    lf * (lf / r.max(floor)).ln()
                })
                .sum();
            Ok(kl - r_max)
        }
        ConstraintSpec::NormRef { lambda_ref, b } => Ok((lambda - lambda_ref).norm() - b),
    }
}

/// `∇_λ R(λ)`. Nonsmooth points of `NormRef` return the zero subgradient.
pub fn constraint_grad(
    spec: &ConstraintSpec,
    lambda: &DVector<f64>,
    floor: f64,
) -> Result<DVector<f64>> {
    spec.check_dim(lambda)?;
    match spec {
        ConstraintSpec::Linear { cost, .. } => Ok(cost.clone()),
        ConstraintSpec::KlRef { lambda_ref, .. } => Ok(DVector::from_iterator(
            lambda.len(),
            lambda
                .iter()
                .zip(lambda_ref.iter())
                .map(|(&l, &r)| (l.max(floor) / r.max(floor)).ln() + 1.0),
        )),
        ConstraintSpec::NormRef { lambda_ref, .. } => {
            let diff = lambda - lambda_ref;
            let norm = diff.norm();
            if norm == 0.0 {
                Ok(DVector::zeros(lambda.len()))
            } else {
                Ok(diff / norm)
            }
        }
    }
}

/// λ-space regularity constants `(ℓ_λ, L_λ, L_{λ,∞})` of a functional.
#[derive(Debug, Clone, Copy)]
pub struct LambdaSmoothness {
    /// Sup-norm bound on the gradient.
    pub ell_lambda: f64,
    /// Gradient Lipschitz constant against `‖·‖₂`.
    pub l_lambda: f64,
    /// Gradient Lipschitz constant against `‖·‖₁`.
    pub l_lambda_inf: f64,
    /// False when the functional is nonsmooth and the `L` entries are `∞`.
    pub smooth: bool,
}

impl LambdaSmoothness {
    /// Pointwise maximum, for the pair `{-H, R}` feeding one estimator.
    pub fn combine(self, other: LambdaSmoothness) -> LambdaSmoothness {
        LambdaSmoothness {
            ell_lambda: self.ell_lambda.max(other.ell_lambda),
            l_lambda: self.l_lambda.max(other.l_lambda),
            l_lambda_inf: self.l_lambda_inf.max(other.l_lambda_inf),
            smooth: self.smooth && other.smooth,
        }
    }
}

/// Constants of the floored entropy: `ℓ_λ = |log ε_H| + 1`,
/// `L_λ = L_{λ,∞} = 1/ε_H`.
pub fn entropy_smoothness(floor: f64) -> LambdaSmoothness {
    LambdaSmoothness {
        ell_lambda: floor.ln().abs() + 1.0,
        l_lambda: 1.0 / floor,
        l_lambda_inf: 1.0 / floor,
        smooth: true,
    }
}

/// Constants of a constraint functional under the same flooring.
pub fn constraint_smoothness(spec: &ConstraintSpec, floor: f64) -> LambdaSmoothness {
    match spec {
        ConstraintSpec::Linear { cost, .. } => LambdaSmoothness {
            ell_lambda: cost.amax(),
            l_lambda: 0.0,
            l_lambda_inf: 0.0,
            smooth: true,
        },
        ConstraintSpec::KlRef { lambda_ref, .. } => {
            let min_ref = lambda_ref.iter().fold(f64::INFINITY, |m, &v| m.min(v.max(floor)));
            LambdaSmoothness {
                ell_lambda: (1.0 / (floor * min_ref)).ln().abs() + 1.0,
                l_lambda: 1.0 / floor,
                l_lambda_inf: 1.0 / floor,
                smooth: true,
            }
        }
        ConstraintSpec::NormRef { .. } => LambdaSmoothness {
            ell_lambda: 1.0,
            l_lambda: f64::INFINITY,
            l_lambda_inf: f64::INFINITY,
            smooth: false,
        },
    }
}
