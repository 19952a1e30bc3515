//! Deterministic proximal-point penalty solver for constrained problems
//! with hidden convexity: `min F₁(θ) s.t. F₂(θ) ≤ 0` where `F_i = H_i ∘ c`
//! for convex `H_i` and a bi-Lipschitz reparametrization `c`.
//!
//! Each outer step lifts the weakly convex penalized objective
//! `F₁ + β L(F₂)` into a strongly convex proximal subproblem
//! `φ_k(θ) = F₁(θ) + (ρ̂/2)‖θ - θ_k‖² + β L(F₂(θ))` and solves it inexactly
//! with gradient descent (smooth quadratic penalty) or the strongly convex
//! subgradient method (exact penalty).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::pgp::{PenaltyConfig, PenaltyKind};
use crate::policy::project_box_vec;

/// Convex functional on the transformed space with value and
/// (sub)gradient evaluators.
pub struct UFunctional {
    pub value: Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
    pub grad: Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
}

/// Weak-convexity and regularity bookkeeping for `F₁` and `F₂`.
#[derive(Debug, Clone, Copy)]
pub struct WeakConvexityConstants {
    /// Weak-convexity modulus of `F₁`.
    pub rho1: f64,
    /// Subgradient bound of `F₁`.
    pub g1: f64,
    /// Smoothness of `F₁`, when it is smooth.
    pub l1: Option<f64>,
    /// Weak-convexity modulus of `F₂`.
    pub rho2: f64,
    /// Subgradient bound of `F₂`.
    pub g2: f64,
    /// Smoothness of `F₂`, when it is smooth.
    pub l2: Option<f64>,
    /// `max_θ |F₂(θ)|`.
    pub f2_ub: f64,
}

/// Known constrained optimum, used for certificates and stopping.
#[derive(Debug, Clone)]
pub struct KnownOptimum {
    pub f_star: f64,
    pub u_star: DVector<f64>,
    pub nu_star: f64,
}

/// A hidden-convex constrained problem over the box `Θ = [-R, R]^dim`.
pub struct HiddenConvexProblem {
    pub dim: usize,
    pub box_radius: f64,
    /// Bi-Lipschitz lower constant: `‖c(θ) - c(θ')‖ ≥ μ_c ‖θ - θ'‖`.
    pub mu_c: f64,
    /// Strong-convexity modulus of the objective `H₁` (0 allowed). The
    /// constraint `H₂` is only required to be convex.
    pub mu_h: f64,
    pub d_theta: f64,
    pub d_u: f64,
    pub constants: WeakConvexityConstants,
    pub known_opt: Option<KnownOptimum>,
    c_map: Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
    c_inverse: Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
    c_jacobian: Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>,
    h1: UFunctional,
    h2: UFunctional,
}

impl HiddenConvexProblem {
    pub fn c(&self, theta: &DVector<f64>) -> DVector<f64> {
        (self.c_map)(theta)
    }

    pub fn c_inverse(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.c_inverse)(u)
    }

    pub fn f1(&self, theta: &DVector<f64>) -> f64 {
        (self.h1.value)(&self.c(theta))
    }

    pub fn f2(&self, theta: &DVector<f64>) -> f64 {
        (self.h2.value)(&self.c(theta))
    }

    pub fn f1_grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        (self.c_jacobian)(theta).transpose() * (self.h1.grad)(&self.c(theta))
    }

    pub fn f2_grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        (self.c_jacobian)(theta).transpose() * (self.h2.grad)(&self.c(theta))
    }

    /// `θ_α = c⁻¹((1-α) c(θ) + α c(θ̃))`, the hidden convex combination.
    pub fn theta_alpha(
        &self,
        theta: &DVector<f64>,
        theta_tilde: &DVector<f64>,
        alpha: f64,
    ) -> DVector<f64> {
        let mix = self.c(theta) * (1.0 - alpha) + self.c(theta_tilde) * alpha;
        self.c_inverse(&mix)
    }
}

// ── Penalty-term composition constants ──────────────────────────────────

/// Properties of the constraint `f` entering the penalty composition.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintProps {
    pub rho: f64,
    pub g: f64,
    /// Present iff `f` is L-smooth.
    pub l: Option<f64>,
    pub f_ub: f64,
    pub d_theta: f64,
}

/// Constants of the composed penalty term `g = L ∘ f`.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyTermProps {
    pub rho_phi: f64,
    pub g_phi: f64,
    pub l_phi: Option<f64>,
}

/// Weak-convexity, subgradient and (when available) smoothness constants
/// of the penalty term:
/// exact `[·]₊` keeps `(ρ, G_f)`; quadratic `[·]₊²` over a smooth `f` is
/// `(2 G_f D_Θ min{ρ, L})`-weakly convex with `G = 2 D_Θ G_f²` and
/// `L_g = 2(F_UB L + G_f²)`; over a nonsmooth `f` the modulus is
/// `2 G_f D_Θ ρ`. Requesting smooth constants without `L` is an error.
pub fn compose_penalty_constants(
    f: &ConstraintProps,
    kind: PenaltyKind,
    require_smooth: bool,
) -> Result<PenaltyTermProps> {
    match kind {
        PenaltyKind::Exact => {
            if require_smooth {
                return Err(Error::InvalidConfig(
                    "the exact penalty composition is nonsmooth".into(),
                ));
            }
            Ok(PenaltyTermProps {
                rho_phi: f.rho,
                g_phi: f.g,
                l_phi: None,
            })
        }
        PenaltyKind::Quadratic => match f.l {
            Some(l) => Ok(PenaltyTermProps {
                rho_phi: 2.0 * f.g * f.d_theta * f.rho.min(l),
                g_phi: 2.0 * f.d_theta * f.g * f.g,
                l_phi: Some(2.0 * (f.f_ub * l + f.g * f.g)),
            }),
            None if require_smooth => Err(Error::InvalidConfig(
                "smooth quadratic-penalty constants need the smoothness L of f".into(),
            )),
            None => Ok(PenaltyTermProps {
                rho_phi: 2.0 * f.g * f.d_theta * f.rho,
                g_phi: 2.0 * f.d_theta * f.g * f.g,
                l_phi: None,
            }),
        },
    }
}

// ── Inner solvers ───────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub theta: DVector<f64>,
    pub iters: usize,
    pub converged: bool,
}

/// Projected gradient descent with step `1/L_φ` on a smooth `μ_φ`-strongly
/// convex objective, stopped by the gap surrogate `‖∇φ‖²/(2μ_φ) ≤ ε_in`.
/// An already-optimal start exits after the convergence check alone.
pub fn inner_gd(
    grad: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    theta_start: &DVector<f64>,
    box_radius: f64,
    l_phi: f64,
    mu_phi: f64,
    eps_in: f64,
    cap: usize,
) -> InnerOutcome {
    let mut theta = theta_start.clone();
    for iters in 0..cap {
        let g = grad(&theta);
        if g.norm_squared() / (2.0 * mu_phi) <= eps_in {
            return InnerOutcome {
                theta,
                iters,
                converged: true,
            };
        }
        theta = project_box_vec(theta - g / l_phi, box_radius);
    }
    let converged = grad(&theta).norm_squared() / (2.0 * mu_phi) <= eps_in;
    InnerOutcome {
        theta,
        iters: cap,
        converged,
    }
}

/// Step schedule of the strongly convex subgradient method, `2/(μ(k+1))`
/// with 1-based `k`.
pub fn subgradient_step(mu_phi: f64, k: usize) -> f64 {
    2.0 / (mu_phi * (k as f64 + 1.0))
}

/// Strongly convex subgradient method with the `2/(μ(k+1))` schedule and
/// `k`-weighted averaging; the expected-gap budget `4G²/(μ ε_in)` caps at
/// `cap` and a truncated run is flagged.
pub fn inner_subgradient(
    subgrad: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    theta_start: &DVector<f64>,
    box_radius: f64,
    mu_phi: f64,
    g_bound: f64,
    eps_in: f64,
    cap: usize,
) -> InnerOutcome {
    let budget = (4.0 * g_bound * g_bound / (mu_phi * eps_in)).ceil();
    let (iters, converged) = if budget <= cap as f64 {
        (budget as usize, true)
    } else {
        (cap, false)
    };
    let iters = iters.max(1);
    let mut theta = theta_start.clone();
    let mut average = DVector::zeros(theta.len());
    let weight_total = (iters * (iters + 1)) as f64 / 2.0;
    for k in 1..=iters {
        average += &theta * (k as f64 / weight_total);
        let g = subgrad(&theta);
        theta = project_box_vec(theta - g * subgradient_step(mu_phi, k), box_radius);
    }
    InnerOutcome {
        theta: average,
        iters,
        converged,
    }
}

// ── Outer loop ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSolver {
    GradientDescent,
    SubgradientMethod,
}

#[derive(Debug, Clone)]
pub struct IpppmConfig {
    pub outer_iters: usize,
    /// Inner accuracy ε_in the solvers certify (GD) or budget for (SM).
    pub inner_tolerance: f64,
    /// Hard cap on inner iterations per outer step.
    pub inner_cap: usize,
    pub solver: InnerSolver,
    /// Proximal lifting ρ̂; must exceed the composed weak-convexity
    /// modulus of `F₁ + β L(F₂)`.
    pub rho_hat: f64,
    pub penalty: PenaltyConfig,
    /// Stop once `|F₁ - F*| ≤ target` and `[F₂]₊ ≤ target`; needs a
    /// known optimum.
    pub stop_at_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OuterRow {
    pub iter: usize,
    pub f1: f64,
    pub f2: f64,
    pub violation: f64,
    /// `F₁ - F* + β L(F₂)` when a certificate is available.
    pub opt_gap: Option<f64>,
    pub inner_iters: usize,
    pub inner_converged: bool,
}

#[derive(Debug, Clone, Default)]
pub struct IpppmRecord {
    pub rows: Vec<OuterRow>,
    /// First outer iteration at which the stop target held.
    pub reached_target: Option<usize>,
}

impl IpppmRecord {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,F1,F2,violation,opt_gap,inner_iters\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter,
                r.f1,
                r.f2,
                r.violation,
                r.opt_gap.map_or(String::from("nan"), |g| format!("{g}")),
                r.inner_iters
            ));
        }
        out
    }
}

/// Composed weak-convexity modulus of `F₁ + β L(F₂)`.
pub fn composed_weak_convexity(
    constants: &WeakConvexityConstants,
    d_theta: f64,
    penalty: &PenaltyConfig,
) -> Result<f64> {
    let f_props = ConstraintProps {
        rho: constants.rho2,
        g: constants.g2,
        l: constants.l2,
        f_ub: constants.f2_ub,
        d_theta,
    };
    let term = compose_penalty_constants(&f_props, penalty.kind, false)?;
    Ok(constants.rho1 + penalty.beta * term.rho_phi)
}

/// Runs the inexact proximal point penalty method from `theta0`.
pub fn ipppm_run(
    problem: &HiddenConvexProblem,
    cfg: &IpppmConfig,
    theta0: &DVector<f64>,
) -> Result<(DVector<f64>, IpppmRecord)> {
    if theta0.len() != problem.dim {
        return Err(Error::DimensionMismatch(format!(
            "θ0 has {} entries, problem dimension is {}",
            theta0.len(),
            problem.dim
        )));
    }
    if cfg.inner_tolerance <= 0.0 {
        return Err(Error::InvalidConfig("inner tolerance must be positive".into()));
    }
    if cfg.stop_at_accuracy.is_some() && problem.known_opt.is_none() {
        return Err(Error::MissingCertificate(
            "accuracy-based stopping needs a known optimum".into(),
        ));
    }
    let beta = cfg.penalty.beta;
    let rho_total = composed_weak_convexity(&problem.constants, problem.d_theta, &cfg.penalty)?;
    if cfg.rho_hat <= rho_total {
        return Err(Error::InvalidConfig(format!(
            "lifting ρ̂ = {} must exceed the composed modulus {rho_total}",
            cfg.rho_hat
        )));
    }
    let mu_inner = cfg.rho_hat - rho_total;

    let f_props = ConstraintProps {
        rho: problem.constants.rho2,
        g: problem.constants.g2,
        l: problem.constants.l2,
        f_ub: problem.constants.f2_ub,
        d_theta: problem.d_theta,
    };
    let (l_phi, g_phi) = match cfg.solver {
        InnerSolver::GradientDescent => {
            let l1 = problem.constants.l1.ok_or_else(|| {
                Error::InvalidConfig("gradient-descent inner solver needs smooth F₁".into())
            })?;
            let l_term = if beta > 0.0 {
                compose_penalty_constants(&f_props, cfg.penalty.kind, true)?
                    .l_phi
                    .expect("smooth composition")
            } else {
                0.0
            };
            (l1 + cfg.rho_hat + beta * l_term, 0.0)
        }
        InnerSolver::SubgradientMethod => {
            let term = compose_penalty_constants(&f_props, cfg.penalty.kind, false)?;
            (
                0.0,
                problem.constants.g1 + cfg.rho_hat * problem.d_theta + beta * term.g_phi,
            )
        }
    };

    let mut theta = project_box_vec(theta0.clone(), problem.box_radius);
    let mut record = IpppmRecord::default();
    let log_row = |record: &mut IpppmRecord, k: usize, theta: &DVector<f64>, inner: (usize, bool)| {
        let f1 = problem.f1(theta);
        let f2 = problem.f2(theta);
        let opt_gap = problem
            .known_opt
            .as_ref()
            .map(|opt| f1 - opt.f_star + beta * cfg.penalty.compose(f2));
        record.rows.push(OuterRow {
            iter: k,
            f1,
            f2,
            violation: f2.max(0.0),
            opt_gap,
            inner_iters: inner.0,
            inner_converged: inner.1,
        });
        if let (Some(target), Some(opt)) = (cfg.stop_at_accuracy, problem.known_opt.as_ref()) {
            if record.reached_target.is_none()
                && (f1 - opt.f_star).abs() <= target
                && f2.max(0.0) <= target
            {
                record.reached_target = Some(k);
            }
        }
    };
    log_row(&mut record, 0, &theta, (0, true));

    for k in 0..cfg.outer_iters {
        if record.reached_target.is_some() {
            break;
        }
        let center = theta.clone();
        let phi_grad = |t: &DVector<f64>| -> DVector<f64> {
            let mut g = problem.f1_grad(t);
            g += (t - &center) * cfg.rho_hat;
            let slope = beta * cfg.penalty.compose_derivative(problem.f2(t));
            if slope != 0.0 {
                g += problem.f2_grad(t) * slope;
            }
            g
        };
        let outcome = match cfg.solver {
            InnerSolver::GradientDescent => inner_gd(
                &phi_grad,
                &theta,
                problem.box_radius,
                l_phi,
                mu_inner,
                cfg.inner_tolerance,
                cfg.inner_cap,
            ),
            InnerSolver::SubgradientMethod => inner_subgradient(
                &phi_grad,
                &theta,
                problem.box_radius,
                mu_inner,
                g_phi,
                cfg.inner_tolerance,
                cfg.inner_cap,
            ),
        };
        // Inner failures are flagged in the record; inexactness is the
        // operating model, so the run continues.
        theta = outcome.theta;
        log_row(&mut record, k + 1, &theta, (outcome.iters, outcome.converged));
    }
    Ok((theta, record))
}

/// Weighting of the penalty term inside the optimality gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapWeighting {
    /// `F₁ - F* + β L(F₂)`, matching the implemented penalty.
    Full,
    /// `F₁ - F* + (β/2) L(F₂)`, the form the translation bounds assume.
    Half,
}

/// Penalty optimality gap at `θ`; needs the problem's certificate.
pub fn penalty_opt_gap(
    problem: &HiddenConvexProblem,
    theta: &DVector<f64>,
    penalty: &PenaltyConfig,
    weighting: GapWeighting,
) -> Result<f64> {
    let opt = problem
        .known_opt
        .as_ref()
        .ok_or_else(|| Error::MissingCertificate("penalty_opt_gap needs F*".into()))?;
    let weight = match weighting {
        GapWeighting::Full => penalty.beta,
        GapWeighting::Half => penalty.beta / 2.0,
    };
    Ok(problem.f1(theta) - opt.f_star + weight * penalty.compose(problem.f2(theta)))
}

// ── Synthetic certificate family ────────────────────────────────────────

/// Parameters of the synthetic hidden-convex family used as the test
/// backbone: `c(θ)_i = θ_i + 0.5 sin θ_i` elementwise (bi-Lipschitz with
/// `μ_c = 0.5`), `H₁(u) = ‖u - u°‖²`, `H₂(u) = ⟨a, u⟩ - b`.
#[derive(Debug, Clone)]
pub struct SyntheticParams {
    pub dim: usize,
    pub box_radius: f64,
    pub u_center: DVector<f64>,
    pub a: DVector<f64>,
    pub b: f64,
}

impl SyntheticParams {
    /// Two-dimensional instance with an active constraint and `ν* = 2`.
    pub fn standard() -> Self {
        Self {
            dim: 2,
            box_radius: 1.0,
            u_center: DVector::from_element(2, 1.0),
            a: DVector::from_element(2, 0.5),
            b: 0.5,
        }
    }
}

fn warp(theta: &DVector<f64>) -> DVector<f64> {
    theta.map(|x| x + 0.5 * x.sin())
}

/// Inverse of `x ↦ x + 0.5 sin x` by bisection; the map is strictly
/// increasing with slope in `[0.5, 1.5]`.
fn unwarp_scalar(u: f64) -> f64 {
    // Slope ≥ 0.5 brackets the root within |x - u| ≤ |u| + 1.
    let mut lo = u - u.abs() - 1.0;
    let mut hi = u + u.abs() + 1.0;
    while lo + 0.5 * lo.sin() > u {
        lo -= 1.0;
    }
    while hi + 0.5 * hi.sin() < u {
        hi += 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid + 0.5 * mid.sin() < u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Builds a synthetic certificate problem with its KKT optimum computed
/// in the (convex) transformed space: if `⟨a, u°⟩ ≤ b` the unconstrained
/// minimum is feasible and `ν* = 0`; otherwise the optimum projects `u°`
/// onto the constraint plane and `ν* = 2(⟨a,u°⟩ - b)/‖a‖²`.
pub fn synthetic_certificate_problem(params: &SyntheticParams) -> Result<HiddenConvexProblem> {
    let dim = params.dim;
    if params.u_center.len() != dim || params.a.len() != dim {
        return Err(Error::DimensionMismatch(
            "u_center and a must match the problem dimension".into(),
        ));
    }
    if params.a.norm() == 0.0 {
        return Err(Error::InvalidConfig("constraint normal a must be nonzero".into()));
    }
    let r = params.box_radius;
    let c_hi = r + 0.5 * r.sin().abs().max(0.5);

    // KKT in u-space.
    let excess = params.a.dot(&params.u_center) - params.b;
    let (u_star, f_star, nu_star) = if excess <= 0.0 {
        (params.u_center.clone(), 0.0, 0.0)
    } else {
        let scale = excess / params.a.norm_squared();
        let u_star = &params.u_center - &params.a * scale;
        let f_star = excess * excess / params.a.norm_squared();
        (u_star, f_star, 2.0 * scale)
    };
    let c_lo_bound = -(r + 0.5 * r.sin().abs());
    let c_hi_bound = r + 0.5 * r.sin().abs();
    if u_star.iter().any(|&v| v <= c_lo_bound || v >= c_hi_bound) {
        return Err(Error::InvalidConfig(
            "constrained optimum falls outside c(Θ); enlarge the box".into(),
        ));
    }

    // Conservative regularity bounds over the box.
    let sup_dist_sq: f64 = (0..dim)
        .map(|i| (c_hi + params.u_center[i].abs()).powi(2))
        .sum();
    let sup_dist = sup_dist_sq.sqrt();
    let sup_dist_inf = (0..dim)
        .map(|i| c_hi + params.u_center[i].abs())
        .fold(0.0f64, f64::max);
    let a_max = params.a.amax();
    let constants = WeakConvexityConstants {
        rho1: sup_dist_inf,
        g1: 3.0 * sup_dist,
        l1: Some(2.0 * 1.5f64.powi(2) + sup_dist_inf),
        rho2: 0.5 * a_max,
        g2: 1.5 * params.a.norm(),
        l2: Some(0.5 * a_max),
        f2_ub: params.a.iter().map(|v| v.abs()).sum::<f64>() * c_hi + params.b.abs(),
    };

    let u_center = params.u_center.clone();
    let u_center_grad = params.u_center.clone();
    let a_val = params.a.clone();
    let a_grad = params.a.clone();
    let b = params.b;
    Ok(HiddenConvexProblem {
        dim,
        box_radius: r,
        mu_c: 0.5,
        mu_h: 2.0,
        d_theta: 2.0 * r * (dim as f64).sqrt(),
        d_u: 2.0 * c_hi_bound * (dim as f64).sqrt(),
        constants,
        known_opt: Some(KnownOptimum {
            f_star,
            u_star,
            nu_star,
        }),
        c_map: Box::new(|theta| warp(theta)),
        c_inverse: Box::new(|u| u.map(unwarp_scalar)),
        c_jacobian: Box::new(|theta| {
            DMatrix::from_diagonal(&theta.map(|x| 1.0 + 0.5 * x.cos()))
        }),
        h1: UFunctional {
            value: Box::new(move |u| (u - &u_center).norm_squared()),
            grad: Box::new(move |u| (u - &u_center_grad) * 2.0),
        },
        h2: UFunctional {
            value: Box::new(move |u| a_val.dot(u) - b),
            grad: Box::new(move |_| a_grad.clone()),
        },
    })
}
