//! Experiment configuration: a TOML file with nested sections, validated
//! with precise key paths, plus dotted-path overrides from the command
//! line.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use pgp_core::baselines::PdpgConfig;
use pgp_core::error::Error;
use pgp_core::gridworld::{build_frozenlake, CostProfile, GridworldSpec};
use pgp_core::ipppm::{self, IpppmConfig, SyntheticParams};
use pgp_core::mdp::TabularMdp;
use pgp_core::objectives::ConstraintSpec;
use pgp_core::pgp::{OccupancyScale, PenaltyConfig, PenaltyKind, PgpRunConfig};
use pgp_core::policy::SoftmaxPolicy;

pub type Result<T> = std::result::Result<T, Error>;

fn config_err(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentSection {
    /// `"default"` for the built-in 6×6 lake, otherwise an inline ASCII
    /// map (rows separated by newlines).
    pub map: String,
    pub slip_prob: f64,
    pub discount: f64,
    pub cost_profile: String,
}

impl Default for EnvironmentSection {
    fn default() -> Self {
        Self {
            map: "default".into(),
            slip_prob: 0.0,
            discount: 0.9975,
            cost_profile: "holes_penalized".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintSection {
    /// `linear`, `kl_ref` or `norm_ref`.
    pub kind: String,
    pub c_max: f64,
    /// Budget of the KL constraint.
    pub r_max: f64,
    /// Budget `b` of the norm constraint.
    pub budget: f64,
    /// Mixture ε used to embed the reference policy.
    pub ref_epsilon: f64,
}

impl Default for ConstraintSection {
    fn default() -> Self {
        Self {
            kind: "linear".into(),
            c_max: 0.0,
            r_max: 0.1,
            budget: 0.0,
            ref_epsilon: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub box_radius: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { box_radius: 6.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmSection {
    /// `pgp`, `pdpg`, `unconstrained` or `ipppm`.
    pub kind: String,
    pub iterations: usize,
    pub batch: usize,
    pub horizon: usize,
    pub step_size: f64,
    pub beta: f64,
    /// `quadratic` or `exact`.
    pub penalty: String,
    pub eval_every: usize,
    pub entropy_floor: f64,
    /// `counts` (pseudo-rewards on discounted visit counts) or
    /// `normalized`.
    pub scale: String,
    pub primal_lr: f64,
    pub dual_lr: f64,
    pub dual_momentum: f64,
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        Self {
            kind: "pgp".into(),
            iterations: 150_000,
            batch: 8,
            horizon: 600,
            step_size: 0.01,
            beta: 0.005,
            penalty: "quadratic".into(),
            eval_every: 250,
            entropy_floor: (-1.0f64).exp(),
            scale: "counts".into(),
            primal_lr: 0.01,
            dual_lr: 0.001,
            dual_momentum: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub beta: Vec<f64>,
    pub batch: Vec<usize>,
    pub step_size: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            beta: vec![5e-4, 1e-3, 5e-3, 1e-2],
            batch: vec![8],
            step_size: vec![1e-3, 1e-2],
            seeds: (0..10).collect(),
        }
    }
}

/// Synthetic hidden-convex certificate problem section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IpppmSection {
    pub dim: usize,
    pub box_radius: f64,
    pub u_center: Vec<f64>,
    pub normal: Vec<f64>,
    pub offset: f64,
    pub target_accuracy: f64,
    pub outer_iters: usize,
    pub inner_cap: usize,
    /// `gd` or `subgradient`.
    pub solver: String,
    /// ρ̂ as a multiple of the composed weak-convexity modulus.
    pub lift_factor: f64,
}

impl Default for IpppmSection {
    fn default() -> Self {
        Self {
            dim: 2,
            box_radius: 1.0,
            u_center: vec![1.0, 1.0],
            normal: vec![0.5, 0.5],
            offset: 0.5,
            target_accuracy: 1e-2,
            outer_iters: 200_000,
            inner_cap: 50_000,
            solver: "gd".into(),
            lift_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Write measured wall-clock columns. Off by default so repeated runs
    /// produce byte-identical logs.
    pub timing: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSection,
    pub constraint: ConstraintSection,
    pub policy: PolicySection,
    pub algorithm: AlgorithmSection,
    pub sweep: SweepSection,
    pub ipppm: IpppmSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    /// Parses with dotted-path `key=value` overrides applied to the raw
    /// TOML tree first.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree: toml::Table = text
            .parse()
            .map_err(|e| config_err(format!("config parse error: {e}")))?;
        for entry in overrides {
            let (path, value) = entry
                .split_once('=')
                .ok_or_else(|| config_err(format!("override `{entry}` is not key=value")))?;
            apply_override(&mut tree, path.trim(), value.trim())?;
        }
        toml::Value::Table(tree)
            .try_into()
            .map_err(|e| config_err(format!("config validation error: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn gridworld_spec(&self) -> Result<GridworldSpec> {
        let profile = CostProfile::parse(&self.environment.cost_profile)?;
        let map = if self.environment.map == "default" {
            pgp_core::gridworld::DEFAULT_LAKE_MAP.to_string()
        } else {
            self.environment.map.clone()
        };
        GridworldSpec::parse(
            &map,
            self.environment.slip_prob,
            self.environment.discount,
            profile,
        )
    }

    /// Builds the MDP, the configured constraint, and the initial policy.
    pub fn build_environment(&self) -> Result<(GridworldSpec, TabularMdp, ConstraintSpec, SoftmaxPolicy)> {
        let spec = self.gridworld_spec()?;
        let (mdp, linear) = build_frozenlake(&spec)?;
        let constraint = match self.constraint.kind.as_str() {
            "linear" => match linear {
                ConstraintSpec::Linear { cost, .. } => ConstraintSpec::Linear {
                    cost,
                    c_max: self.constraint.c_max,
                },
                _ => unreachable!("lake constraint is linear"),
            },
            "kl_ref" => {
                let (_, occupancy) = pgp_core::gridworld::reference_trajectory_policy(
                    &spec,
                    &mdp,
                    self.constraint.ref_epsilon,
                )?;
                ConstraintSpec::KlRef {
                    lambda_ref: occupancy.values,
                    r_max: self.constraint.r_max,
                }
            }
            "norm_ref" => {
                let (_, occupancy) = pgp_core::gridworld::reference_trajectory_policy(
                    &spec,
                    &mdp,
                    self.constraint.ref_epsilon,
                )?;
                ConstraintSpec::NormRef {
                    lambda_ref: occupancy.values,
                    b: self.constraint.budget,
                }
            }
            other => {
                return Err(config_err(format!(
                    "constraint.kind `{other}` (expected linear, kl_ref, norm_ref)"
                )))
            }
        };
        let policy0 = SoftmaxPolicy::uniform(
            mdp.n_states(),
            mdp.n_actions(),
            self.policy.box_radius,
        );
        Ok((spec, mdp, constraint, policy0))
    }

    pub fn penalty_kind(&self) -> Result<PenaltyKind> {
        match self.algorithm.penalty.as_str() {
            "quadratic" => Ok(PenaltyKind::Quadratic),
            "exact" => Ok(PenaltyKind::Exact),
            other => Err(config_err(format!(
                "algorithm.penalty `{other}` (expected quadratic or exact)"
            ))),
        }
    }

    pub fn occupancy_scale(&self) -> Result<OccupancyScale> {
        match self.algorithm.scale.as_str() {
            "counts" => Ok(OccupancyScale::DiscountedCounts),
            "normalized" => Ok(OccupancyScale::Normalized),
            other => Err(config_err(format!(
                "algorithm.scale `{other}` (expected counts or normalized)"
            ))),
        }
    }

    pub fn pgp_config(&self, seed: u64) -> Result<PgpRunConfig> {
        let cfg = PgpRunConfig {
            iterations: self.algorithm.iterations,
            step_size: self.algorithm.step_size,
            batch: self.algorithm.batch,
            horizon: self.algorithm.horizon,
            penalty: PenaltyConfig {
                beta: self.algorithm.beta,
                kind: self.penalty_kind()?,
            },
            seed,
            eval_every: self.algorithm.eval_every,
            entropy_floor: self.algorithm.entropy_floor,
            scale: self.occupancy_scale()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pdpg_config(&self, seed: u64) -> Result<PdpgConfig> {
        let cfg = PdpgConfig {
            primal_lr: self.algorithm.primal_lr,
            dual_lr: self.algorithm.dual_lr,
            dual_momentum: self.algorithm.dual_momentum,
            iterations: self.algorithm.iterations,
            batch: self.algorithm.batch,
            horizon: self.algorithm.horizon,
            seed,
            eval_every: self.algorithm.eval_every,
            entropy_floor: self.algorithm.entropy_floor,
            scale: self.occupancy_scale()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synthetic_problem(&self) -> Result<ipppm::HiddenConvexProblem> {
        ipppm::synthetic_certificate_problem(&SyntheticParams {
            dim: self.ipppm.dim,
            box_radius: self.ipppm.box_radius,
            u_center: DVector::from_vec(self.ipppm.u_center.clone()),
            a: DVector::from_vec(self.ipppm.normal.clone()),
            b: self.ipppm.offset,
        })
    }

    pub fn ipppm_config(&self, problem: &ipppm::HiddenConvexProblem) -> Result<IpppmConfig> {
        let penalty = PenaltyConfig {
            beta: self.algorithm.beta,
            kind: self.penalty_kind()?,
        };
        let rho = ipppm::composed_weak_convexity(&problem.constants, problem.d_theta, &penalty)?;
        let solver = match self.ipppm.solver.as_str() {
            "gd" => ipppm::InnerSolver::GradientDescent,
            "subgradient" => ipppm::InnerSolver::SubgradientMethod,
            other => {
                return Err(config_err(format!(
                    "ipppm.solver `{other}` (expected gd or subgradient)"
                )))
            }
        };
        Ok(IpppmConfig {
            outer_iters: self.ipppm.outer_iters,
            inner_tolerance: self.ipppm.target_accuracy * 1e-4,
            inner_cap: self.ipppm.inner_cap,
            solver,
            rho_hat: self.ipppm.lift_factor * rho,
            penalty,
            stop_at_accuracy: Some(self.ipppm.target_accuracy),
        })
    }
}

fn apply_override(tree: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let segments: Vec<&str> = path.split('.').collect();
    if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(config_err(format!("bad override path `{path}`")));
    }
    let mut current = tree;
    for segment in &segments[..segments.len() - 1] {
        current = current
            .entry(segment.to_string())
            .or_insert(toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| {
                config_err(format!("override path `{path}`: `{segment}` is not a table"))
            })?;
    }
    let leaf = segments[segments.len() - 1];
    // Interpret the value as a TOML literal, falling back to a string.
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|t| t.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    current.insert(leaf.to_string(), value);
    Ok(())
}
