//! Experiment harness: deterministic runs, ablation sweeps, gradient
//! checks, optimum certificates and policy tables for the penalty
//! exploration stack.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use config::ExperimentConfig;
use pgp_core::baselines::{pdpg_run, unconstrained_me_run};
use pgp_core::error::Error;
use pgp_core::gridworld::policy_tables;
use pgp_core::ipppm::ipppm_run;
use pgp_core::mdp::{exact_occupancy, substream_rng, TabularMdp};
use pgp_core::objectives::{
    constraint_grad, constraint_value, entropy, entropy_grad, ConstraintSpec,
};
use pgp_core::oracle::{
    exact_policy_gradient, finite_diff_grad, finite_diff_grad_vec, solve_constrained_optimum,
};
use pgp_core::pgp::{penalty_pseudo_reward, pgp_run, PenaltyConfig, RunRecord};
use pgp_core::policy::SoftmaxPolicy;

#[derive(Parser)]
#[command(name = "pgp", about = "Constrained maximum-entropy exploration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment configuration file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path overrides, e.g. `--override algorithm.beta=0.01`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment cell and write logs plus a summary.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full sweep over the configured grid with per-cell seed aggregation.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient suites; nonzero exit on failure.
    CheckGradients {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        samples: usize,
    },
    /// Certify the constrained entropy optimum for the configured
    /// environment.
    SolveOracle {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Render argmax-policy and occupancy grids for a saved policy.
    PolicyTable {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let text = match &args.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?,
        None => String::new(),
    };
    ExperimentConfig::from_toml_with_overrides(&text, &args.overrides)
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, seed, out } => {
            let cfg = load_config(&config)?;
            run_cell(&cfg, seed, &out)
        }
        Command::Ablate { config, out } => {
            let cfg = load_config(&config)?;
            ablate(&cfg, &out)
        }
        Command::CheckGradients { seed, samples } => check_gradients(seed, samples),
        Command::SolveOracle {
            config,
            out,
            tolerance,
        } => {
            let cfg = load_config(&config)?;
            solve_oracle(&cfg, tolerance, &out)
        }
        Command::PolicyTable {
            config,
            policy,
            out,
        } => {
            let cfg = load_config(&config)?;
            policy_table(&cfg, &policy, &out)
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct RunSummary<'a> {
    algorithm: &'a str,
    seed: u64,
    final_entropy: f64,
    final_constraint: f64,
    final_violation: f64,
    iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_ms: Option<f64>,
    config: &'a ExperimentConfig,
}

fn emit_run(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    seed: u64,
    record: &RunRecord,
    policy: Option<&SoftmaxPolicy>,
) -> Result<(), Error> {
    let last = record.final_row();
    let summary = RunSummary {
        algorithm: &cfg.algorithm.kind,
        seed,
        final_entropy: last.entropy,
        final_constraint: last.constraint,
        final_violation: last.violation,
        iterations: last.iter,
        final_nu: last.nu,
        wall_ms: cfg.output.timing.then_some(last.wall_ms),
        config: cfg,
    };
    write(&out_dir.join("run.csv"), &record.to_csv(cfg.output.timing))?;
    write(
        &out_dir.join("summary.toml"),
        &toml::to_string_pretty(&summary)
            .map_err(|e| Error::InvalidConfig(format!("summary serialization: {e}")))?,
    )?;
    if let Some(policy) = policy {
        write(&out_dir.join("policy.txt"), &policy.to_text())?;
    }
    Ok(())
}

fn run_cell(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<(), Error> {
    match cfg.algorithm.kind.as_str() {
        "pgp" => {
            let (_, mdp, constraint, policy0) = cfg.build_environment()?;
            let run_cfg = cfg.pgp_config(seed)?;
            let (policy, record) = pgp_run(&mdp, &policy0, &constraint, &run_cfg)?;
            emit_run(out, cfg, seed, &record, Some(&policy))
        }
        "unconstrained" => {
            let (_, mdp, constraint, policy0) = cfg.build_environment()?;
            let run_cfg = cfg.pgp_config(seed)?;
            let (policy, record) = unconstrained_me_run(&mdp, &policy0, &constraint, &run_cfg)?;
            emit_run(out, cfg, seed, &record, Some(&policy))
        }
        "pdpg" => {
            let (_, mdp, constraint, policy0) = cfg.build_environment()?;
            let run_cfg = cfg.pdpg_config(seed)?;
            let (policy, _, record) = pdpg_run(&mdp, &policy0, &constraint, &run_cfg)?;
            emit_run(out, cfg, seed, &record, Some(&policy))
        }
        "ipppm" => {
            let problem = cfg.synthetic_problem()?;
            let run_cfg = cfg.ipppm_config(&problem)?;
            let theta0 = DVector::zeros(problem.dim);
            let (_, record) = ipppm_run(&problem, &run_cfg, &theta0)?;
            write(&out.join("run.csv"), &record.to_csv())?;
            let reached = record
                .reached_target
                .map_or(String::from("never"), |k| format!("{k}"));
            let last = record.rows.last().expect("at least the initial row");
            let summary = format!(
                "algorithm = \"ipppm\"\nreached_target_at = \"{reached}\"\nfinal_f1 = {}\nfinal_violation = {}\n\n[config]\n{}",
                last.f1,
                last.violation,
                indent_toml(&cfg.to_toml())
            );
            write(&out.join("summary.toml"), &summary)
        }
        other => Err(Error::InvalidConfig(format!(
            "algorithm.kind `{other}` (expected pgp, pdpg, unconstrained, ipppm)"
        ))),
    }
}

/// Nests a whole config document under the `[config]` table by
/// prefixing its section headers.
fn indent_toml(text: &str) -> String {
    text.lines()
        .map(|line| {
            if let Some(rest) = line.strip_prefix('[') {
                format!("[config.{rest}")
            } else {
                line.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn ablate(cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    if cfg.sweep.seeds.is_empty()
        || cfg.sweep.beta.is_empty()
        || cfg.sweep.batch.is_empty()
        || cfg.sweep.step_size.is_empty()
    {
        return Err(Error::InvalidConfig("sweep axes must be non-empty".into()));
    }
    {
        let mut seen = cfg.sweep.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != cfg.sweep.seeds.len() {
            return Err(Error::InvalidConfig("sweep seeds must be distinct".into()));
        }
    }
    let mut table = String::from(
        "beta,step_size,batch,seeds,mean_entropy,std_entropy,mean_violation,std_violation\n",
    );
    for &beta in &cfg.sweep.beta {
        for &step in &cfg.sweep.step_size {
            for &batch in &cfg.sweep.batch {
                let mut entropies = Vec::new();
                let mut violations = Vec::new();
                for &seed in &cfg.sweep.seeds {
                    let mut cell = cfg.clone();
                    cell.algorithm.beta = beta;
                    cell.algorithm.step_size = step;
                    cell.algorithm.batch = batch;
                    let cell_dir = out.join(format!("beta{beta}_eta{step}_B{batch}/seed{seed}"));
                    // A failing cell aborts the sweep rather than being
                    // silently dropped from the aggregate.
                    run_cell(&cell, seed, &cell_dir)?;
                    let summary = fs::read_to_string(cell_dir.join("summary.toml"))
                        .map_err(|e| Error::InvalidConfig(format!("cell summary: {e}")))?;
                    let value: toml::Value = summary
                        .parse()
                        .map_err(|e| Error::InvalidConfig(format!("cell summary: {e}")))?;
                    entropies.push(
                        value
                            .get("final_entropy")
                            .and_then(|v| v.as_float())
                            .ok_or_else(|| Error::InvalidConfig("missing final_entropy".into()))?,
                    );
                    violations.push(
                        value
                            .get("final_violation")
                            .and_then(|v| v.as_float())
                            .ok_or_else(|| {
                                Error::InvalidConfig("missing final_violation".into())
                            })?,
                    );
                }
                let (me, se) = mean_std(&entropies);
                let (mv, sv) = mean_std(&violations);
                table.push_str(&format!(
                    "{beta},{step},{batch},{},{me},{se},{mv},{sv}\n",
                    cfg.sweep.seeds.len()
                ));
            }
        }
    }
    write(&out.join("ablation.csv"), &table)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

// ── check-gradients ─────────────────────────────────────────────────────

fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, rng: &mut ChaCha8Rng) -> TabularMdp {
    let mut transitions = vec![0.0; n_states * n_actions * n_states];
    for sa in 0..n_states * n_actions {
        let row = &mut transitions[sa * n_states..(sa + 1) * n_states];
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = rng.random::<f64>() + 1e-3;
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let mut init: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
    let z: f64 = init.iter().sum();
    init.iter_mut().for_each(|v| *v /= z);
    TabularMdp::new(n_states, n_actions, transitions, init, gamma, Default::default())
        .expect("random model is valid")
}

fn check_gradients(seed: u64, samples: usize) -> Result<(), Error> {
    let mut rng = substream_rng(seed, 0);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let floor = 1e-9;

    let interior = |rng: &mut ChaCha8Rng, n: usize| -> DVector<f64> {
        let mut v = DVector::from_fn(n, |_, _| rng.random::<f64>() + 0.05);
        let z = v.sum();
        v /= z;
        v
    };

    let mut max_rel: f64 = 0.0;
    for _ in 0..samples {
        let lambda = interior(&mut rng, 8);
        let grad = entropy_grad(&lambda, floor);
        let fd = finite_diff_grad_vec(|l| -entropy(l, floor), &lambda, 1e-6);
        max_rel = max_rel.max((grad - &fd).amax() / fd.amax().max(1.0));
    }
    worst.push(("entropy_grad", max_rel));

    let lambda_ref = interior(&mut rng, 8);
    let specs: Vec<(&str, ConstraintSpec)> = vec![
        (
            "linear_grad",
            ConstraintSpec::Linear {
                cost: DVector::from_fn(8, |_, _| rng.random::<f64>() * 4.0 - 2.0),
                c_max: 0.1,
            },
        ),
        (
            "kl_grad",
            ConstraintSpec::KlRef {
                lambda_ref: lambda_ref.clone(),
                r_max: 0.1,
            },
        ),
        (
            "norm_grad",
            ConstraintSpec::NormRef {
                lambda_ref,
                b: 0.05,
            },
        ),
    ];
    for (name, spec) in &specs {
        let mut max_rel: f64 = 0.0;
        for _ in 0..samples {
            let lambda = interior(&mut rng, 8);
            let grad = constraint_grad(spec, &lambda, floor)?;
            let fd = finite_diff_grad_vec(
                |l| constraint_value(spec, l, floor).expect("dims fixed"),
                &lambda,
                1e-6,
            );
            max_rel = max_rel.max((grad - &fd).amax() / fd.amax().max(1.0));
        }
        worst.push((name, max_rel));
    }

    let mut max_rel: f64 = 0.0;
    let cfg = PenaltyConfig::quadratic(1.7);
    let (_, lin_spec) = &specs[0];
    for _ in 0..samples {
        let lambda = interior(&mut rng, 8);
        let grad = penalty_pseudo_reward(&lambda, lin_spec, &cfg, floor)?;
        let fd = finite_diff_grad_vec(
            |l| {
                -entropy(l, floor)
                    + cfg.beta * cfg.compose(constraint_value(lin_spec, l, floor).expect("dims"))
            },
            &lambda,
            1e-6,
        );
        max_rel = max_rel.max((grad - &fd).amax() / fd.amax().max(1.0));
    }
    worst.push(("penalty_pseudo_reward", max_rel));

    let mut max_rel: f64 = 0.0;
    for _ in 0..samples.min(20) {
        let mdp = random_mdp(4, 3, 0.9, &mut rng);
        let theta = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let policy = SoftmaxPolicy::new(theta.clone(), 5.0)?;
        let reward = DVector::from_fn(12, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let grad = exact_policy_gradient(&mdp, &policy, &reward)?;
        let fd = finite_diff_grad(
            |t| {
                let p = SoftmaxPolicy::new(t.clone(), 6.0).expect("inside box");
                exact_occupancy(&mdp, &p).expect("valid").values.dot(&reward)
            },
            &theta,
            1e-5,
        );
        max_rel = max_rel.max((grad - &fd).amax() / fd.amax().max(1e-3));
    }
    worst.push(("exact_policy_gradient", max_rel));

    let mut failed = false;
    for (name, rel) in &worst {
        let status = if *rel <= 1e-5 { "ok" } else { "FAIL" };
        println!("{name}: max relative error {rel:.3e} [{status}]");
        failed |= *rel > 1e-5;
    }
    if failed {
        Err(Error::Numerical("gradient checks failed".into()))
    } else {
        Ok(())
    }
}

fn solve_oracle(cfg: &ExperimentConfig, tolerance: f64, out: &Path) -> Result<(), Error> {
    let (_, mdp, constraint, _) = cfg.build_environment()?;
    let certificate = solve_constrained_optimum(
        &mdp,
        &constraint,
        1.0,
        tolerance,
        pgp_core::objectives::DEFAULT_ENTROPY_FLOOR,
    )?;
    let lambda: Vec<String> = certificate
        .lambda_star
        .values
        .iter()
        .map(|v| format!("{v}"))
        .collect();
    let text = format!(
        "f_star = {}\nnu_star = {}\nfeasibility_residual = {}\nslackness_residual = {}\nduality_gap = {}\nusable = {}\nlambda_star = [{}]\n",
        certificate.f_star,
        certificate.nu_star,
        certificate.feasibility_residual,
        certificate.slackness_residual,
        certificate.duality_gap,
        certificate.usable,
        lambda.join(", ")
    );
    write(&out.join("certificate.toml"), &text)?;
    println!(
        "F* = {:.6}, ν* = {:.6}, gap = {:.2e}, usable = {}",
        certificate.f_star, certificate.nu_star, certificate.duality_gap, certificate.usable
    );
    Ok(())
}

fn policy_table(cfg: &ExperimentConfig, policy_path: &Path, out: &Path) -> Result<(), Error> {
    let text = fs::read_to_string(policy_path)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", policy_path.display())))?;
    let policy = SoftmaxPolicy::from_text(&text)?;
    let (spec, mdp, _, _) = cfg.build_environment()?;
    let (actions, occupancy) = policy_tables(&spec, &mdp, &policy)?;
    write(&out.join("policy_actions.csv"), &actions)?;
    write(&out.join("occupancy.csv"), &occupancy)?;
    Ok(())
}
