//! Perturbed-model evaluation and the experiment sweep.
//!
//! A sweep runs the robust planner once per `(R_ξ, R_η)` pair and scores
//! every episode's policy-so-far mixture against a fixed set of randomly
//! perturbed copies of the nominal model. Results go to one CSV per sweep
//! point plus a summary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bilinear::{solver_for, Method};
use crate::dp::{nominal_dp_unchecked, optimal_dp, policy_value_at_init};
use crate::fmt::sig17;
use crate::mdp::{LowRankMdp, MdpError};
use crate::policy::Policy;
use crate::policy_opt::{
    csv_io, run_r2pg, suboptimality_check, surrogate_optimum, NpgConfig, NpgError, R2pgTrace, Surrogate,
    SuboptimalityReport, EXHAUSTIVE_LIMIT,
};
use crate::rng;
use crate::robust::{AmbiguityRadii, RobustError};
use crate::scenarios::{self, ScenarioError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {message}", path.display())]
    ConfigFile { path: PathBuf, message: String },
    #[error("perturbation of row (h={h},s={s},a={a}) left no probability mass")]
    DegenerateRow { h: usize, s: usize, a: usize },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Npg(#[from] NpgError),
    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationSpec {
    pub delta: f64,
    pub num_perturbed: usize,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(delta: f64, num_perturbed: usize, seed: u64) -> Result<Self, HarnessError> {
        if !(0.0..1.0).contains(&delta) {
            return Err(HarnessError::Config(format!("delta must lie in [0,1), got {delta}")));
        }
        if num_perturbed == 0 {
            return Err(HarnessError::Config("num_perturbed must be at least 1".into()));
        }
        Ok(PerturbationSpec {
            delta,
            num_perturbed,
            seed,
        })
    }
}

/// Adds independent `U[−δ, δ]` noise to every transition probability, clips
/// negatives to zero and renormalises each row.
///
/// Tabular models keep their features and get a new `μ`; any other model is
/// returned as the equivalent explicit tabular model.
pub fn perturb_mdp(mdp: &LowRankMdp, delta: f64, seed: u64) -> Result<LowRankMdp, HarnessError> {
    perturb_with(mdp, delta, &mut rng::stream(seed, 0))
}

fn perturb_with(mdp: &LowRankMdp, delta: f64, r: &mut rng::StreamRng) -> Result<LowRankMdp, HarnessError> {
    if !(0.0..1.0).contains(&delta) {
        return Err(HarnessError::Config(format!("delta must lie in [0,1), got {delta}")));
    }
    if delta == 0.0 {
        return Ok(mdp.clone());
    }
    let (hh, ss, aa) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut kernel = Vec::with_capacity(hh * ss * aa * ss);
    for h in 0..hh {
        for s in 0..ss {
            for a in 0..aa {
                let row = noisy_row(mdp.transition_row(h, s, a), delta, r);
                let total: f64 = row.iter().sum();
                if total <= 0.0 {
                    return Err(HarnessError::DegenerateRow { h, s, a });
                }
                kernel.extend(row.into_iter().map(|p| p / total));
            }
        }
    }
    if mdp.is_tabular_orthonormal() {
        let d = ss * aa;
        let mut mu = vec![0.0; hh * ss * d];
        for h in 0..hh {
            for j in 0..d {
                for sn in 0..ss {
                    mu[(h * ss + sn) * d + j] = kernel[((h * ss) * aa + j) * ss + sn];
                }
            }
        }
        return Ok(mdp.with_mu(mu)?);
    }
    let rewards: Vec<f64> = (0..hh)
        .flat_map(|h| (0..ss).flat_map(move |s| (0..aa).map(move |a| (h, s, a))))
        .map(|(h, s, a)| mdp.reward(h, s, a))
        .collect();
    Ok(LowRankMdp::tabular(hh, ss, aa, &kernel, &rewards, mdp.rho().to_vec())?)
}

/// `row` plus `U[−δ, δ]` noise per entry, clipped at zero but not renormalised.
fn noisy_row(row: &[f64], delta: f64, r: &mut rng::StreamRng) -> Vec<f64> {
    row.iter().map(|&p| (p + r.gen_range(-delta..=delta)).max(0.0)).collect()
}

/// `spec.num_perturbed` perturbed models, model `i` drawn from stream `i`.
pub fn perturbed_set(mdp: &LowRankMdp, spec: &PerturbationSpec) -> Result<Vec<LowRankMdp>, HarnessError> {
    (0..spec.num_perturbed as u64)
        .map(|i| perturb_with(mdp, spec.delta, &mut rng::stream(spec.seed, i)))
        .collect()
}

fn value_in(model: &LowRankMdp, pi: &Policy) -> f64 {
    policy_value_at_init(&nominal_dp_unchecked(model, pi), model.rho())
}

/// Lowest exact value of `pi` over `models`.
pub fn empirical_robust_value(pi: &Policy, models: &[LowRankMdp]) -> f64 {
    models.iter().map(|m| value_in(m, pi)).fold(f64::INFINITY, f64::min)
}

/// For every `k`, the lowest value over `models` of the uniform mixture of
/// `π^1..π^k`. Inside one model the mixture's value is the mean of the
/// members' values.
pub fn empirical_robust_mixture_curve(policies: &[Policy], models: &[LowRankMdp]) -> Vec<f64> {
    let mut curve = vec![f64::INFINITY; policies.len()];
    for m in models {
        let mut running = 0.0;
        for (k, pi) in policies.iter().enumerate() {
            running += value_in(m, pi);
            curve[k] = curve[k].min(running / (k + 1) as f64);
        }
    }
    curve
}

/// Where the nominal model comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MdpSource {
    Builtin { name: String, horizon: Option<usize> },
    File(PathBuf),
}

impl MdpSource {
    pub fn load(&self) -> Result<LowRankMdp, HarnessError> {
        match self {
            MdpSource::Builtin { name, horizon } => Ok(scenarios::builtin(name, *horizon)?),
            MdpSource::File(p) => Ok(LowRankMdp::load_valid(p)?),
        }
    }
}

/// Resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: MdpSource,
    pub r_xi: Vec<f64>,
    pub r_eta: Vec<f64>,
    pub episodes: usize,
    /// `None` selects the default step size for the model.
    pub step_size: Option<f64>,
    pub perturbation: PerturbationSpec,
    pub solver: Method,
    pub out: PathBuf,
}

/// Keys of the flat config file. Every key is optional so that command-line
/// flags can fill in or override any of them.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigValues {
    pub scenario: Option<String>,
    pub mdp: Option<PathBuf>,
    pub horizon: Option<usize>,
    pub r_xi: Option<Vec<f64>>,
    pub r_eta: Option<Vec<f64>>,
    pub episodes: Option<usize>,
    pub step_size: Option<f64>,
    pub delta: Option<f64>,
    pub num_perturbed: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub solver: Option<String>,
}

pub const DEFAULT_EPISODES: usize = 200;
pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_NUM_PERTURBED: usize = 20;
pub const DEFAULT_SEED: u64 = 7;

impl ConfigValues {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads a config file. A relative `mdp` path is taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let fail = |message: String| HarnessError::ConfigFile {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let mut v = Self::parse(&text).map_err(fail)?;
        if let (Some(m), Some(dir)) = (v.mdp.as_mut(), path.parent()) {
            if m.is_relative() {
                *m = dir.join(&*m);
            }
        }
        Ok(v)
    }

    /// Values from `over` win wherever they are set.
    pub fn overridden_by(self, over: ConfigValues) -> ConfigValues {
        ConfigValues {
            scenario: over.scenario.or(self.scenario),
            mdp: over.mdp.or(self.mdp),
            horizon: over.horizon.or(self.horizon),
            r_xi: over.r_xi.or(self.r_xi),
            r_eta: over.r_eta.or(self.r_eta),
            episodes: over.episodes.or(self.episodes),
            step_size: over.step_size.or(self.step_size),
            delta: over.delta.or(self.delta),
            num_perturbed: over.num_perturbed.or(self.num_perturbed),
            seed: over.seed.or(self.seed),
            out: over.out.or(self.out),
            solver: over.solver.or(self.solver),
        }
    }

    pub fn resolve(self) -> Result<ExperimentConfig, HarnessError> {
        let cfg = |m: &str| HarnessError::Config(m.to_string());
        let source = match (self.scenario, self.mdp) {
            (Some(_), Some(_)) => return Err(cfg("set either `scenario` or `mdp`, not both")),
            (Some(name), None) => {
                if !scenarios::SCENARIO_NAMES.contains(&name.as_str()) {
                    return Err(HarnessError::Config(format!(
                        "unknown scenario `{name}` (known: {})",
                        scenarios::SCENARIO_NAMES.join(", ")
                    )));
                }
                MdpSource::Builtin {
                    name,
                    horizon: self.horizon,
                }
            }
            (None, Some(p)) => {
                if self.horizon.is_some() {
                    return Err(cfg("`horizon` only applies to built-in scenarios"));
                }
                MdpSource::File(p)
            }
            (None, None) => return Err(cfg("missing `scenario` or `mdp`")),
        };
        let r_xi = self.r_xi.ok_or_else(|| cfg("missing `r_xi` list"))?;
        let r_eta = self.r_eta.ok_or_else(|| cfg("missing `r_eta` list"))?;
        for (name, list) in [("r_xi", &r_xi), ("r_eta", &r_eta)] {
            if list.is_empty() {
                return Err(HarnessError::Config(format!("`{name}` must not be empty")));
            }
            if list.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                return Err(HarnessError::Config(format!("`{name}` entries must be finite and nonnegative")));
            }
        }
        let episodes = self.episodes.unwrap_or(DEFAULT_EPISODES);
        if episodes == 0 {
            return Err(cfg("`episodes` must be at least 1"));
        }
        if let Some(a) = self.step_size {
            if !(a > 0.0 && a.is_finite()) {
                return Err(HarnessError::Config(format!("`step_size` must be positive, got {a}")));
            }
        }
        let perturbation = PerturbationSpec::new(
            self.delta.unwrap_or(DEFAULT_DELTA),
            self.num_perturbed.unwrap_or(DEFAULT_NUM_PERTURBED),
            self.seed.unwrap_or(DEFAULT_SEED),
        )?;
        let solver = match self.solver {
            Some(s) => s.parse::<Method>().map_err(HarnessError::Config)?,
            None => Method::Sdp,
        };
        Ok(ExperimentConfig {
            source,
            r_xi,
            r_eta,
            episodes,
            step_size: self.step_size,
            perturbation,
            solver,
            out: self.out.unwrap_or_else(|| PathBuf::from("results")),
        })
    }
}

/// Outcome of one `(R_ξ, R_η)` sweep point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub r_xi: f64,
    pub r_eta: f64,
    pub trace: R2pgTrace,
    /// Empirical robust value of the mixture of `π^1..π^k`, per `k`.
    pub empirical: Vec<f64>,
    pub surrogate: Surrogate,
    pub bound: SuboptimalityReport,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub points: Vec<SweepPoint>,
    /// Empirical robust value of the nominal optimal policy, for comparison.
    pub nominal_optimal_empirical: f64,
    pub nominal_optimal_value: f64,
}

/// `results_<Rxi>_<Reta>.csv`.
pub fn results_file_name(r_xi: f64, r_eta: f64) -> String {
    format!("results_{r_xi}_{r_eta}.csv")
}

/// Runs every sweep point in memory.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let mdp = cfg.source.load()?;
    let models = perturbed_set(&mdp, &cfg.perturbation)?;
    let npg = match cfg.step_size {
        Some(a) => NpgConfig::new(a, cfg.episodes, false)?,
        None => NpgConfig::with_default_step(&mdp, cfg.episodes, false)?,
    };
    let solver = solver_for(cfg.solver);
    let hh = mdp.horizon();
    let mut points = Vec::with_capacity(cfg.r_xi.len() * cfg.r_eta.len());
    for &r_eta in &cfg.r_eta {
        for &r_xi in &cfg.r_xi {
            let start = Instant::now();
            let radii = AmbiguityRadii::uniform(hh, r_xi, r_eta)?;
            let trace = run_r2pg(&mdp, &radii, &npg, solver.as_ref())?;
            let empirical = empirical_robust_mixture_curve(&trace.policies, &models);
            let surrogate = surrogate_optimum(&mdp, &radii, &trace, solver.as_ref(), EXHAUSTIVE_LIMIT)?;
            let bound = suboptimality_check(&mdp, &radii, &trace, surrogate.value);
            points.push(SweepPoint {
                r_xi,
                r_eta,
                trace,
                empirical,
                surrogate,
                bound,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    let (vt, opt) = optimal_dp(&mdp);
    Ok(ExperimentResult {
        points,
        nominal_optimal_empirical: empirical_robust_value(&opt, &models),
        nominal_optimal_value: policy_value_at_init(&vt, mdp.rho()),
    })
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

/// Per-episode rows: `episode, robust_value_internal, empirical_robust_value, nominal_value`.
///
/// The internal robust and nominal values belong to `π^k`; the empirical
/// value belongs to the mixture of `π^1..π^k`.
pub fn write_results_csv<W: Write>(point: &SweepPoint, out: W) -> std::io::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["episode", "robust_value_internal", "empirical_robust_value", "nominal_value"])
        .map_err(csv_io)?;
    for k in 0..point.trace.episodes() {
        w.write_record([
            (k + 1).to_string(),
            sig17(point.trace.robust_values[k]),
            sig17(point.empirical[k]),
            sig17(point.trace.nominal_values[k]),
        ])
        .map_err(csv_io)?;
    }
    w.flush()
}

/// One row per sweep point with final values and the convergence-bound report.
pub fn write_summary_csv<W: Write>(res: &ExperimentResult, out: W) -> std::io::Result<()> {
    let mut w = csv_writer(out);
    w.write_record([
        "r_xi",
        "r_eta",
        "episodes",
        "step_size",
        "final_robust_value_internal",
        "final_empirical_robust_value",
        "final_nominal_value",
        "mixture_robust_value",
        "nominal_optimal_value",
        "nominal_optimal_empirical_robust_value",
        "surrogate_optimum",
        "surrogate_source",
        "bound_lhs",
        "bound_rhs",
        "bound_optimisation_term",
        "bound_misspecification_term",
        "bound_pass",
        "wall_clock_s",
    ])
    .map_err(csv_io)?;
    for p in &res.points {
        let last = p.trace.episodes() - 1;
        let source = match p.surrogate.source {
            crate::policy_opt::SurrogateSource::Exhaustive => "exhaustive",
            crate::policy_opt::SurrogateSource::BestOfTrace => "best_of_trace",
        };
        w.write_record([
            sig17(p.r_xi),
            sig17(p.r_eta),
            p.trace.episodes().to_string(),
            sig17(p.trace.step_size),
            sig17(p.trace.robust_values[last]),
            sig17(p.empirical[last]),
            sig17(p.trace.nominal_values[last]),
            sig17(p.trace.mixture_value),
            sig17(res.nominal_optimal_value),
            sig17(res.nominal_optimal_empirical),
            sig17(p.surrogate.value),
            source.to_string(),
            sig17(p.bound.lhs),
            sig17(p.bound.rhs),
            sig17(p.bound.optimisation_term),
            sig17(p.bound.misspecification_term),
            p.bound.pass.to_string(),
            format!("{:.3}", p.seconds),
        ])
        .map_err(csv_io)?;
    }
    w.flush()
}

/// Runs the sweep and writes `results_*.csv` and `summary.csv` into `cfg.out`.
/// Returns the written paths, summary last.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentResult, Vec<PathBuf>), HarnessError> {
    let res = run_sweep(cfg)?;
    let out_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Output { path, source }
    };
    fs::create_dir_all(&cfg.out).map_err(out_err(&cfg.out))?;
    let mut written = Vec::new();
    for p in &res.points {
        let path = cfg.out.join(results_file_name(p.r_xi, p.r_eta));
        let f = fs::File::create(&path).map_err(out_err(&path))?;
        write_results_csv(p, std::io::BufWriter::new(f)).map_err(out_err(&path))?;
        written.push(path);
    }
    let path = cfg.out.join("summary.csv");
    let f = fs::File::create(&path).map_err(out_err(&path))?;
    write_summary_csv(&res, std::io::BufWriter::new(f)).map_err(out_err(&path))?;
    written.push(path);
    Ok((res, written))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::build_ring;

    #[test]
    fn zero_delta_is_the_identity() {
        let m = build_ring(3).unwrap();
        assert_eq!(perturb_mdp(&m, 0.0, 1).unwrap(), m);
    }

    #[test]
    fn ring_perturbation_is_deterministic_and_stochastic() {
        let m = build_ring(4).unwrap();
        let a = perturb_mdp(&m, 0.1, 9).unwrap();
        assert_eq!(a, perturb_mdp(&m, 0.1, 9).unwrap());
        assert!(a.is_tabular_orthonormal());
        assert!(a.validate().is_valid());
        for h in 0..4 {
            for s in 0..4 {
                for act in 0..3 {
                    let row = a.transition_row(h, s, act);
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                    assert_eq!(a.reward(h, s, act), m.reward(h, s, act));
                }
            }
        }
    }

    #[test]
    fn noise_before_projection_is_bounded_by_delta() {
        let mut r = rng::stream(4, 0);
        let row = [0.7, 0.0, 0.3, 0.0];
        for _ in 0..1000 {
            let n = noisy_row(&row, 0.1, &mut r);
            for (p, q) in n.iter().zip(&row) {
                assert!((p - q).abs() <= 0.1);
            }
        }
    }

    #[test]
    fn renormalising_can_move_an_entry_by_more_than_two_delta() {
        // one-hot row, mass pushed down on the support and up elsewhere
        let noisy = [0.9, 0.1, 0.1, 0.1];
        let total: f64 = noisy.iter().sum();
        assert!(1.0 - noisy[0] / total > 0.2);
    }

    #[test]
    fn nontabular_models_become_tabular() {
        let m = scenarios::builtin("gamble", Some(4)).unwrap();
        assert!(!m.is_tabular_orthonormal());
        let p = perturb_mdp(&m, 0.2, 3).unwrap();
        assert!(p.is_tabular_orthonormal());
        assert!(p.validate().is_valid());
    }

    #[test]
    fn empirical_value_of_nominal_set() {
        let m = build_ring(3).unwrap();
        let pi = Policy::uniform(3, 4, 3);
        let v = value_in(&m, &pi);
        assert_eq!(empirical_robust_value(&pi, std::slice::from_ref(&m)), v);
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        let err = ConfigValues::parse("scenario = \"ring\"\nr_xi = [0.1,\nepisodes = 3\n").unwrap_err();
        assert!(err.contains("line"), "{err}");
        let err = ConfigValues::parse("scenario = \"ring\"\nbogus = 1\n").unwrap_err();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn flags_override_file_values() {
        let file = ConfigValues::parse("scenario = \"ring\"\nr_xi = [0.1]\nr_eta = [0.0]\nepisodes = 5\n").unwrap();
        let flags = ConfigValues {
            episodes: Some(2),
            ..Default::default()
        };
        let cfg = file.overridden_by(flags).resolve().unwrap();
        assert_eq!(cfg.episodes, 2);
        assert_eq!(cfg.r_xi, vec![0.1]);
        assert_eq!(cfg.perturbation.num_perturbed, DEFAULT_NUM_PERTURBED);
    }

    #[test]
    fn resolve_rejects_incomplete_configs() {
        assert!(ConfigValues::default().resolve().is_err());
        let v = ConfigValues::parse("scenario = \"ring\"\nr_xi = []\nr_eta = [0.0]\n").unwrap();
        assert!(v.resolve().is_err());
        let v = ConfigValues::parse("scenario = \"maze\"\nr_xi = [0.1]\nr_eta = [0.0]\n").unwrap();
        assert!(v.resolve().is_err());
    }
}
