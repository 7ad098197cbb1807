//! `lrr`: validate models, evaluate policies robustly, run experiment sweeps.
//!
//! Exit status is 0 on success, 1 on invalid input (including a model that
//! fails validation) and 2 when an inner solver fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lowrank_robust::bilinear::{solver_for, BilinearBallProblem, Method, SolverError};
use lowrank_robust::harness::{run_experiment, ConfigValues, HarnessError};
use lowrank_robust::mdp::{LowRankMdp, MdpError};
use lowrank_robust::policy::Policy;
use lowrank_robust::policy_opt::NpgError;
use lowrank_robust::robust::{robust_policy_eval, robust_value_at_init, AmbiguityRadii, RobustError};
use lowrank_robust::scenarios::{self, ScenarioError};

#[derive(Parser)]
#[command(name = "lrr", version, about = "Robust evaluation and planning in low-rank MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file and list every violated condition.
    Validate { mdp: PathBuf },
    /// Robust value of a policy.
    EvalRobust {
        mdp: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// One radius for every step, or one per step, comma separated.
        #[arg(long = "r-xi", value_delimiter = ',', required = true)]
        r_xi: Vec<f64>,
        #[arg(long = "r-eta", value_delimiter = ',', required = true)]
        r_eta: Vec<f64>,
        #[arg(long, default_value = "sdp")]
        method: Method,
        /// Print the full evaluation (values, Q-functions, minimisers) as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run an experiment sweep from a config file and/or flags.
    Run(RunArgs),
    /// Build a built-in scenario.
    Scenario {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(scenarios::SCENARIO_NAMES))]
        name: String,
        #[arg(long)]
        horizon: Option<usize>,
        /// Write the model as JSON here instead of printing it.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Minimise ⟨a+x, b+y⟩ over ‖x‖ ≤ rx, ‖y‖ ≤ ry.
    SolveInner {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        a: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        b: Vec<f64>,
        #[arg(long)]
        rx: f64,
        #[arg(long)]
        ry: f64,
        #[arg(long, default_value = "sdp")]
        method: Method,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML config; flags below override its values.
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long = "K", alias = "episodes")]
    episodes: Option<usize>,
    #[arg(long = "r-xi", value_delimiter = ',')]
    r_xi: Option<Vec<f64>>,
    #[arg(long = "r-eta", value_delimiter = ',')]
    r_eta: Option<Vec<f64>>,
    #[arg(long = "step-size")]
    step_size: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "num-perturbed")]
    num_perturbed: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    solver: Option<String>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }

    fn solver(e: impl std::fmt::Display) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

fn from_robust(e: RobustError) -> Failure {
    match e {
        RobustError::Solver { .. } => Failure::solver(e),
        _ => Failure::input(e),
    }
}

fn from_npg(e: NpgError) -> Failure {
    match e {
        NpgError::Episode {
            source: RobustError::Solver { .. },
            ..
        } => Failure::solver(e),
        _ => Failure::input(e),
    }
}

fn from_harness(e: HarnessError) -> Failure {
    match e {
        HarnessError::Robust(e) | HarnessError::Scenario(ScenarioError::Robust(e)) => from_robust(e),
        HarnessError::Npg(e) => from_npg(e),
        _ => Failure::input(e),
    }
}

/// A single value is repeated for every step.
fn per_step(name: &str, v: Vec<f64>, horizon: usize) -> Result<Vec<f64>, Failure> {
    match v.len() {
        1 => Ok(vec![v[0]; horizon]),
        n if n == horizon => Ok(v),
        n => Err(Failure::input(format!(
            "--{name} takes 1 or {horizon} values, got {n}"
        ))),
    }
}

fn load_model(path: &PathBuf) -> Result<LowRankMdp, Failure> {
    LowRankMdp::load_valid(path).map_err(|e| match e {
        MdpError::Invalid(report) => Failure::input(format!("{}: invalid model\n{report}", path.display())),
        e => Failure::input(format!("{}: {e}", path.display())),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { mdp } => {
            let m = LowRankMdp::load(&mdp).map_err(|e| Failure::input(format!("{}: {e}", mdp.display())))?;
            let report = m.validate();
            if report.is_valid() {
                println!("{}: valid", mdp.display());
                Ok(())
            } else {
                Err(Failure::input(format!(
                    "{}: {} violation(s)\n{report}",
                    mdp.display(),
                    report.violations.len()
                )))
            }
        }
        Command::EvalRobust {
            mdp,
            policy,
            r_xi,
            r_eta,
            method,
            json,
        } => {
            let m = load_model(&mdp)?;
            let text = std::fs::read_to_string(&policy)
                .map_err(|e| Failure::input(format!("{}: {e}", policy.display())))?;
            let pi = Policy::from_json(&text).map_err(|e| Failure::input(format!("{}: {e}", policy.display())))?;
            let hh = m.horizon();
            let radii = AmbiguityRadii::new(per_step("r-xi", r_xi, hh)?, per_step("r-eta", r_eta, hh)?)
                .map_err(Failure::input)?;
            let res = robust_policy_eval(&m, &pi, &radii, solver_for(method).as_ref()).map_err(from_robust)?;
            if json {
                println!("{}", res.to_json());
            } else {
                println!("{}", robust_value_at_init(&res, m.rho()));
            }
            Ok(())
        }
        Command::Run(args) => {
            let file = match &args.config {
                Some(p) => ConfigValues::from_file(p).map_err(from_harness)?,
                None => ConfigValues::default(),
            };
            let flags = ConfigValues {
                scenario: args.scenario,
                mdp: args.mdp,
                horizon: args.horizon,
                r_xi: args.r_xi,
                r_eta: args.r_eta,
                episodes: args.episodes,
                step_size: args.step_size,
                delta: args.delta,
                num_perturbed: args.num_perturbed,
                seed: args.seed,
                out: args.out,
                solver: args.solver,
            };
            let cfg = file.overridden_by(flags).resolve().map_err(from_harness)?;
            let (res, written) = run_experiment(&cfg).map_err(from_harness)?;
            for p in &res.points {
                let last = p.trace.episodes() - 1;
                println!(
                    "r_xi={} r_eta={}: robust {:.6}, empirical {:.6}, nominal {:.6}, bound {} ({:.3}s)",
                    p.r_xi,
                    p.r_eta,
                    p.trace.robust_values[last],
                    p.empirical[last],
                    p.trace.nominal_values[last],
                    if p.bound.pass { "holds" } else { "violated" },
                    p.seconds
                );
            }
            for w in written {
                println!("wrote {}", w.display());
            }
            Ok(())
        }
        Command::Scenario { name, horizon, export } => {
            let m = scenarios::builtin(&name, horizon).map_err(from_scenario)?;
            match export {
                Some(path) => {
                    m.save(&path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
                    println!("wrote {}", path.display());
                }
                None => println!("{}", m.to_json()),
            }
            Ok(())
        }
        Command::SolveInner { a, b, rx, ry, method } => {
            let p = BilinearBallProblem::new(a, b, rx, ry).map_err(Failure::input)?;
            let r = solver_for(method).solve(&p).map_err(|e| match e {
                SolverError::InvalidProblem(_) => Failure::input(e),
                _ => Failure::solver(e),
            })?;
            println!("{}", serde_json::to_string_pretty(&r).expect("plain data serialises"));
            Ok(())
        }
    }
}

fn from_scenario(e: ScenarioError) -> Failure {
    match e {
        ScenarioError::Robust(e) => from_robust(e),
        e => Failure::input(e),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
