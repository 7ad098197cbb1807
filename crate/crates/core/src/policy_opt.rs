//! Natural policy gradient on robust Q-functions and the outer planning loop.
//!
//! Each episode evaluates the current policy robustly (one backward pass with
//! its own `(ξ*_h, η*_h)`), then applies the exponentiated update
//! `π_h(a|s) ∝ π_h(a|s)·exp(α Q̂_h(s,a))` at every `(h,s)`. The returned
//! object is the uniform mixture over the visited policies.

use std::io::Write;

use serde::Serialize;

use crate::bilinear::InnerSolver;
use crate::dp::{nominal_dp_unchecked, occupancy, policy_value_at_init};
use crate::fmt::sig17;
use crate::mdp::LowRankMdp;
use crate::policy::Policy;
use crate::robust::{robust_policy_eval_with, robust_value_at_init, AmbiguityRadii, RobustError};
use crate::vecops::{dot, max_abs, norm};

#[derive(Debug, thiserror::Error)]
pub enum NpgError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid NPG input: {0}")]
    Input(String),
    #[error("episode k={}: {source}", episode + 1)]
    Episode {
        episode: usize,
        #[source]
        source: RobustError,
    },
    #[error("trace has no Q-table log; rerun with log_q enabled")]
    MissingQLog,
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpgConfig {
    pub step_size: f64,
    pub episodes: usize,
    /// Keep every episode's `Q̂` table in the trace (needed by [`regret_check`]).
    pub log_q: bool,
}

impl NpgConfig {
    pub fn new(step_size: f64, episodes: usize, log_q: bool) -> Result<Self, NpgError> {
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(NpgError::Config(format!("step size must be positive, got {step_size}")));
        }
        if episodes == 0 {
            return Err(NpgError::Config("need at least one episode".into()));
        }
        Ok(NpgConfig {
            step_size,
            episodes,
            log_q,
        })
    }

    /// Configuration with [`default_step_size`].
    pub fn with_default_step(mdp: &LowRankMdp, episodes: usize, log_q: bool) -> Result<Self, NpgError> {
        let alpha = default_step_size(episodes, mdp.horizon(), mdp.num_actions())?;
        Self::new(alpha, episodes, log_q)
    }
}

/// `α = √(2 ln A / (K H²))`.
pub fn default_step_size(episodes: usize, horizon: usize, num_actions: usize) -> Result<f64, NpgError> {
    if episodes == 0 || horizon == 0 {
        return Err(NpgError::Config("K and H must be at least 1".into()));
    }
    if num_actions < 2 {
        return Err(NpgError::Config(format!(
            "default step size needs at least two actions, got {num_actions}"
        )));
    }
    let (k, h) = (episodes as f64, horizon as f64);
    Ok((2.0 * (num_actions as f64).ln() / (k * h * h)).sqrt())
}

/// One exponentiated-gradient update of a single action distribution.
pub fn npg_step(pi: &[f64], q: &[f64], alpha: f64) -> Result<Vec<f64>, NpgError> {
    if pi.len() != q.len() || pi.is_empty() {
        return Err(NpgError::Input(format!("lengths {} and {} differ", pi.len(), q.len())));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(NpgError::Input(format!("step size must be positive, got {alpha}")));
    }
    if pi.iter().any(|&p| !(p >= 0.0 && p.is_finite())) || q.iter().any(|v| !v.is_finite()) {
        return Err(NpgError::Input("distribution or Q-values not finite and nonnegative".into()));
    }
    if pi.iter().all(|&p| p == 0.0) {
        return Err(NpgError::Input("all-zero action distribution".into()));
    }
    let mut out = vec![0.0; pi.len()];
    npg_step_into(pi, q, alpha, &mut out);
    Ok(out)
}

fn npg_step_into(pi: &[f64], q: &[f64], alpha: f64, out: &mut [f64]) {
    // Only actions in the support matter; shifting by their max keeps exp ≤ 1.
    let top = q
        .iter()
        .zip(pi)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for ((o, &p), &v) in out.iter_mut().zip(pi).zip(q) {
        *o = if p > 0.0 { p * (alpha * (v - top)).exp() } else { 0.0 };
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// `π'_h(·|s) = npg_step(π_h(·|s), Q_h(s,·), α)` at every `(h,s)`; `q` is flat `[h][s][a]`.
pub fn npg_update(pi: &Policy, q: &[f64], alpha: f64) -> Policy {
    let (hh, ss, aa) = (pi.horizon(), pi.num_states(), pi.num_actions());
    let mut next = pi.clone();
    for h in 0..hh {
        for s in 0..ss {
            let base = (h * ss + s) * aa;
            npg_step_into(pi.dist(h, s), &q[base..base + aa], alpha, next.dist_mut(h, s));
        }
    }
    next
}

/// Minimiser chosen at one step of one episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepPerturbation {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct R2pgTrace {
    /// `π^1, …, π^K`.
    pub policies: Vec<Policy>,
    /// `V̂^{π^k}_1(ρ)`.
    pub robust_values: Vec<f64>,
    /// `V^{π^k}_1(ρ)` in the nominal model.
    pub nominal_values: Vec<f64>,
    /// `[k][h]`.
    pub xi_eta_log: Vec<Vec<StepPerturbation>>,
    /// `Q̂^{π^k}` flat `[h][s][a]`, when logging was requested.
    pub q_log: Option<Vec<Vec<f64>>>,
    /// Expected robust value of a uniform draw from the policies.
    pub mixture_value: f64,
    pub step_size: f64,
}

impl R2pgTrace {
    pub fn episodes(&self) -> usize {
        self.policies.len()
    }

    /// One row per episode: `k, robust_value, nominal_value`, then `‖ξ_h‖`
    /// and `‖η_h‖` for each step.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), NpgError> {
        let horizon = self.xi_eta_log.first().map_or(0, |r| r.len());
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let mut header = vec!["k".to_string(), "robust_value".into(), "nominal_value".into()];
        header.extend((1..=horizon).map(|h| format!("xi_norm_h{h}")));
        header.extend((1..=horizon).map(|h| format!("eta_norm_h{h}")));
        w.write_record(&header).map_err(csv_io)?;
        for k in 0..self.episodes() {
            let mut row = vec![(k + 1).to_string(), sig17(self.robust_values[k]), sig17(self.nominal_values[k])];
            row.extend(self.xi_eta_log[k].iter().map(|p| sig17(norm(&p.xi))));
            row.extend(self.xi_eta_log[k].iter().map(|p| sig17(norm(&p.eta))));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// Robust policy gradient: `K` episodes of robust evaluation followed by NPG.
pub fn run_r2pg(
    mdp: &LowRankMdp,
    radii: &AmbiguityRadii,
    cfg: &NpgConfig,
    solver: &dyn InnerSolver,
) -> Result<R2pgTrace, NpgError> {
    let cfg = NpgConfig::new(cfg.step_size, cfg.episodes, cfg.log_q)?;
    let (hh, ss, aa) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut pi = Policy::uniform(hh, ss, aa);
    let mut trace = R2pgTrace {
        policies: Vec::with_capacity(cfg.episodes),
        robust_values: Vec::with_capacity(cfg.episodes),
        nominal_values: Vec::with_capacity(cfg.episodes),
        xi_eta_log: Vec::with_capacity(cfg.episodes),
        q_log: cfg.log_q.then(Vec::new),
        mixture_value: 0.0,
        step_size: cfg.step_size,
    };
    for k in 0..cfg.episodes {
        let wrap = |source: RobustError| NpgError::Episode { episode: k, source };
        let occ = occupancy(mdp, &pi).map_err(|e| wrap(e.into()))?;
        let res = robust_policy_eval_with(mdp, &pi, &occ, radii, solver).map_err(wrap)?;
        let q: Vec<f64> = res.q_hat.iter().flatten().flatten().copied().collect();

        trace.robust_values.push(robust_value_at_init(&res, mdp.rho()));
        trace
            .nominal_values
            .push(policy_value_at_init(&nominal_dp_unchecked(mdp, &pi), mdp.rho()));
        trace.xi_eta_log.push(
            res.xi_star
                .into_iter()
                .zip(res.eta_star)
                .map(|(xi, eta)| StepPerturbation { xi, eta })
                .collect(),
        );
        let next = npg_update(&pi, &q, cfg.step_size);
        if let Some(log) = trace.q_log.as_mut() {
            log.push(q);
        }
        trace.policies.push(std::mem::replace(&mut pi, next));
    }
    trace.mixture_value = trace.robust_values.iter().sum::<f64>() / cfg.episodes as f64;
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretEntry {
    pub h: usize,
    pub s: usize,
    /// `Σ_k ⟨Q̂^k_h(s,·), π*(·|s) − π^k_h(·|s)⟩`.
    pub lhs: f64,
    /// `ln A/α + (α/2) Σ_k ‖Q̂^k_h(s,·)‖∞²`.
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretReport {
    pub entries: Vec<RegretEntry>,
}

impl RegretReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn worst_slack(&self) -> f64 {
        self.entries.iter().map(|e| e.rhs - e.lhs).fold(f64::INFINITY, f64::min)
    }
}

/// Per-`(h,s)` experts regret of the trace against `comparator`.
pub fn regret_check(trace: &R2pgTrace, comparator: &Policy) -> Result<RegretReport, NpgError> {
    let q_log = trace.q_log.as_ref().ok_or(NpgError::MissingQLog)?;
    let first = trace.policies.first().ok_or_else(|| NpgError::Config("empty trace".into()))?;
    let (hh, ss, aa) = (first.horizon(), first.num_states(), first.num_actions());
    comparator
        .check_shape(hh, ss, aa)
        .map_err(|e| NpgError::Config(e.to_string()))?;
    let alpha = trace.step_size;
    let ln_a = (aa as f64).ln();
    let mut entries = Vec::with_capacity(hh * ss);
    for h in 0..hh {
        for s in 0..ss {
            let base = (h * ss + s) * aa;
            let mut lhs = 0.0;
            let mut sq = 0.0;
            for (pi_k, q_k) in trace.policies.iter().zip(q_log) {
                let q = &q_k[base..base + aa];
                lhs += dot(q, comparator.dist(h, s)) - dot(q, pi_k.dist(h, s));
                sq += max_abs(q).powi(2);
            }
            let rhs = ln_a / alpha + 0.5 * alpha * sq;
            entries.push(RegretEntry {
                h,
                s,
                lhs,
                rhs,
                pass: lhs <= rhs + 1e-9 * (1.0 + rhs.abs()),
            });
        }
    }
    Ok(RegretReport { entries })
}

/// Deterministic policy maximising `Σ_k Q̂^k_h(s,·)` at every `(h,s)`: the
/// hardest comparator for [`regret_check`].
pub fn best_in_hindsight(trace: &R2pgTrace) -> Result<Policy, NpgError> {
    let q_log = trace.q_log.as_ref().ok_or(NpgError::MissingQLog)?;
    let first = trace.policies.first().ok_or_else(|| NpgError::Config("empty trace".into()))?;
    let (hh, ss, aa) = (first.horizon(), first.num_states(), first.num_actions());
    let mut actions = vec![vec![0; ss]; hh];
    for (h, row) in actions.iter_mut().enumerate() {
        for (s, act) in row.iter_mut().enumerate() {
            let base = (h * ss + s) * aa;
            let mut tot = vec![0.0; aa];
            for q in q_log {
                for a in 0..aa {
                    tot[a] += q[base + a];
                }
            }
            *act = argmax(&tot);
        }
    }
    Policy::deterministic(aa, &actions).map_err(|e| NpgError::Config(e.to_string()))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuboptimalityReport {
    /// `surrogate − mixture_value`.
    pub lhs: f64,
    /// `√(2H⁴ ln A / K) + Σ_h (2R_ξ,h(1+R_η,h) + 6R_η,h√d)`.
    pub rhs: f64,
    pub optimisation_term: f64,
    pub misspecification_term: f64,
    pub pass: bool,
}

/// Checks the convergence bound for the mixture output, given a lower bound
/// `surrogate_opt` on the optimal robust value.
pub fn suboptimality_check(
    mdp: &LowRankMdp,
    radii: &AmbiguityRadii,
    trace: &R2pgTrace,
    surrogate_opt: f64,
) -> SuboptimalityReport {
    let h = mdp.horizon() as f64;
    let k = trace.episodes().max(1) as f64;
    let opt_term = (2.0 * h.powi(4) * (mdp.num_actions() as f64).ln() / k).sqrt();
    let sd = (mdp.feature_dim() as f64).sqrt();
    let mis: f64 = (0..radii.horizon())
        .map(|t| 2.0 * radii.xi(t) * (1.0 + radii.eta(t)) + 6.0 * radii.eta(t) * sd)
        .sum();
    let lhs = surrogate_opt - trace.mixture_value;
    let rhs = opt_term + mis;
    SuboptimalityReport {
        lhs,
        rhs,
        optimisation_term: opt_term,
        misspecification_term: mis,
        pass: lhs <= rhs + 1e-9,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateSource {
    /// Every deterministic policy was evaluated.
    Exhaustive,
    /// Best robust value among the trace's policies.
    BestOfTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Surrogate {
    pub value: f64,
    pub source: SurrogateSource,
    pub policies_checked: u64,
}

/// Budget for evaluating deterministic policies with the full robust recursion.
pub const EXHAUSTIVE_LIMIT: u64 = 1_000_000;
/// Budget for the forward search used when every `R_η,h` is zero.
pub const FORWARD_LIMIT: u64 = 200_000_000;

/// `A^{S·H}`, saturating.
pub fn deterministic_policy_count(mdp: &LowRankMdp) -> u64 {
    let exp = (mdp.num_states() * mdp.horizon()) as u32;
    (mdp.num_actions() as u64).checked_pow(exp).unwrap_or(u64::MAX)
}

/// A lower bound on the optimal robust value `V̂*_1(ρ)`.
///
/// Deterministic policies are searched exhaustively when affordable: with
/// `R_η ≡ 0` by the forward search of [`best_deterministic_forward`], otherwise
/// by full robust evaluation up to `limit` policies. Failing both, the best
/// value in the trace is used.
pub fn surrogate_optimum(
    mdp: &LowRankMdp,
    radii: &AmbiguityRadii,
    trace: &R2pgTrace,
    solver: &dyn InnerSolver,
    limit: u64,
) -> Result<Surrogate, NpgError> {
    let count = deterministic_policy_count(mdp);
    let best_of_trace = trace.robust_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if radii.r_eta().iter().all(|&r| r == 0.0) && count <= FORWARD_LIMIT {
        let (v, _) = best_deterministic_forward(mdp, radii.r_xi())?;
        return Ok(Surrogate {
            value: v,
            source: SurrogateSource::Exhaustive,
            policies_checked: count,
        });
    }
    if count <= limit {
        let mut best = f64::NEG_INFINITY;
        let (hh, ss, aa) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
        let mut digits = vec![0usize; hh * ss];
        loop {
            let actions: Vec<Vec<usize>> = digits.chunks(ss).map(|c| c.to_vec()).collect();
            let pi = Policy::deterministic(aa, &actions).expect("digits are in range");
            let occ = occupancy(mdp, &pi).expect("deterministic policy is valid");
            let res = robust_policy_eval_with(mdp, &pi, &occ, radii, solver)
                .map_err(|source| NpgError::Episode { episode: 0, source })?;
            best = best.max(robust_value_at_init(&res, mdp.rho()));
            if !increment(&mut digits, aa) {
                break;
            }
        }
        return Ok(Surrogate {
            value: best.max(best_of_trace),
            source: SurrogateSource::Exhaustive,
            policies_checked: count,
        });
    }
    Ok(Surrogate {
        value: best_of_trace,
        source: SurrogateSource::BestOfTrace,
        policies_checked: trace.episodes() as u64,
    })
}

fn increment(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// Best deterministic policy when `R_η ≡ 0`.
///
/// With no feature perturbation the minimiser at step `h` is
/// `ξ = −R_ξ,h·unit(ā_h)`, and the robust value telescopes to
/// `Σ_h (E_{d_h}[r_h] − R_ξ,h‖ā_h‖)`, which depends only on the forward
/// occupancies. The search walks the tree of per-step action tuples.
pub fn best_deterministic_forward(mdp: &LowRankMdp, r_xi: &[f64]) -> Result<(f64, Policy), NpgError> {
    let (hh, ss, aa, dd) = (mdp.horizon(), mdp.num_states(), mdp.num_actions(), mdp.feature_dim());
    if r_xi.len() != hh {
        return Err(NpgError::Config(format!("{} radii for horizon {hh}", r_xi.len())));
    }
    let count = deterministic_policy_count(mdp);
    if count > FORWARD_LIMIT {
        return Err(NpgError::Config(format!("{count} deterministic policies exceed the search budget")));
    }
    let mut search = Forward {
        mdp,
        r_xi,
        ss,
        aa,
        dd,
        best: f64::NEG_INFINITY,
        best_actions: vec![vec![0; ss]; hh],
        current: vec![vec![0; ss]; hh],
    };
    search.descend(0, mdp.rho().to_vec(), 0.0);
    let pi = Policy::deterministic(aa, &search.best_actions).expect("actions are in range");
    Ok((search.best, pi))
}

struct Forward<'a> {
    mdp: &'a LowRankMdp,
    r_xi: &'a [f64],
    ss: usize,
    aa: usize,
    dd: usize,
    best: f64,
    best_actions: Vec<Vec<usize>>,
    current: Vec<Vec<usize>>,
}

impl Forward<'_> {
    fn descend(&mut self, h: usize, rho: Vec<f64>, acc: f64) {
        let hh = self.mdp.horizon();
        let reached: Vec<usize> = (0..self.ss).filter(|&s| rho[s] > 0.0).collect();
        // Unreached states do not affect the value; fix their action to 0.
        let mut tuple = vec![0usize; reached.len()];
        let mut abar = vec![0.0; self.dd];
        loop {
            abar.iter_mut().for_each(|x| *x = 0.0);
            let mut reward = 0.0;
            for (i, &s) in reached.iter().enumerate() {
                let a = tuple[i];
                let phi = self.mdp.phi(h, s, a);
                for (x, p) in abar.iter_mut().zip(phi) {
                    *x += rho[s] * p;
                }
                reward += rho[s] * self.mdp.reward(h, s, a);
            }
            let value = acc + reward - self.r_xi[h] * norm(&abar);
            for s in 0..self.ss {
                self.current[h][s] = 0;
            }
            for (i, &s) in reached.iter().enumerate() {
                self.current[h][s] = tuple[i];
            }
            if h + 1 == hh {
                if value > self.best {
                    self.best = value;
                    self.best_actions.clone_from(&self.current);
                }
            } else {
                let mut next = vec![0.0; self.ss];
                for (i, &s) in reached.iter().enumerate() {
                    let row = self.mdp.transition_row(h, s, tuple[i]);
                    for (n, p) in next.iter_mut().zip(row) {
                        *n += rho[s] * p;
                    }
                }
                self.descend(h + 1, next, value);
            }
            if !increment(&mut tuple, self.aa) {
                break;
            }
        }
    }
}
