//! Robust policy evaluation under `(ξ,η)`-rectangular ambiguity.
//!
//! At step `h` the nominal backup `⟨φ_h(s,a), ω_h⟩` with
//! `ω_h = ν_h + Σ_{s'} V̂_{h+1}(s') μ_h(s')` is replaced by
//! `⟨φ_h(s,a) + η_h, ω_h + ξ_h⟩`, where `(ξ_h, η_h)` minimises the
//! occupancy-averaged value `⟨ā_h + η, ω_h + ξ⟩` over `‖ξ‖ ≤ R_ξ,h`,
//! `‖η‖ ≤ R_η,h`, and `ā_h` averages the features under the nominal
//! occupancy of the evaluated policy.

use serde::Serialize;

use crate::bilinear::{BilinearBallProblem, InnerSolver, Method, SolverError};
use crate::dp::{occupancy, weighted_factor, OccupancyMeasures};
use crate::mdp::LowRankMdp;
use crate::policy::{Policy, PolicyError};
use crate::vecops::{add, axpy, dot, norm, scale, unit};

#[derive(Debug, thiserror::Error)]
pub enum RobustError {
    #[error("invalid radii: {0}")]
    Radii(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("inner solver failed at step h={}: {source}", step + 1)]
    Solver {
        step: usize,
        #[source]
        source: SolverError,
    },
}

/// Per-step radii `(R_ξ,h, R_η,h)` of the ambiguity set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmbiguityRadii {
    r_xi: Vec<f64>,
    r_eta: Vec<f64>,
}

fn check_nonneg(name: &str, v: &[f64]) -> Result<(), RobustError> {
    if let Some((h, x)) = v.iter().enumerate().find(|(_, x)| !(**x >= 0.0 && x.is_finite())) {
        return Err(RobustError::Radii(format!("{name}[h={}] = {x} is not a finite nonnegative number", h + 1)));
    }
    Ok(())
}

impl AmbiguityRadii {
    pub fn new(r_xi: Vec<f64>, r_eta: Vec<f64>) -> Result<Self, RobustError> {
        if r_xi.len() != r_eta.len() {
            return Err(RobustError::Radii(format!(
                "R_xi has {} steps but R_eta has {}",
                r_xi.len(),
                r_eta.len()
            )));
        }
        check_nonneg("R_xi", &r_xi)?;
        check_nonneg("R_eta", &r_eta)?;
        Ok(AmbiguityRadii { r_xi, r_eta })
    }

    /// Same radii at every step.
    pub fn uniform(horizon: usize, r_xi: f64, r_eta: f64) -> Result<Self, RobustError> {
        Self::new(vec![r_xi; horizon], vec![r_eta; horizon])
    }

    pub fn zero(horizon: usize) -> Self {
        AmbiguityRadii {
            r_xi: vec![0.0; horizon],
            r_eta: vec![0.0; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.r_xi.len()
    }
    pub fn xi(&self, h: usize) -> f64 {
        self.r_xi[h]
    }
    pub fn eta(&self, h: usize) -> f64 {
        self.r_eta[h]
    }
    pub fn r_xi(&self) -> &[f64] {
        &self.r_xi
    }
    pub fn r_eta(&self) -> &[f64] {
        &self.r_eta
    }

    pub fn is_zero(&self) -> bool {
        self.r_xi.iter().chain(&self.r_eta).all(|&r| r == 0.0)
    }

    fn check_horizon(&self, horizon: usize) -> Result<(), RobustError> {
        if self.horizon() != horizon {
            return Err(RobustError::Radii(format!(
                "radii cover {} steps, model horizon is {horizon}",
                self.horizon()
            )));
        }
        Ok(())
    }
}

/// Per-step radii `(R_φ,h, R_μ,h, R_ν,h)` of the factor-wise ambiguity set.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardRadii {
    pub r_phi: Vec<f64>,
    pub r_mu: Vec<f64>,
    pub r_nu: Vec<f64>,
}

impl StandardRadii {
    pub fn uniform(horizon: usize, r_phi: f64, r_mu: f64, r_nu: f64) -> Self {
        StandardRadii {
            r_phi: vec![r_phi; horizon],
            r_mu: vec![r_mu; horizon],
            r_nu: vec![r_nu; horizon],
        }
    }
}

/// `S·(H−h)` for 1-based `h`: each of the `S` next-step values is at most the
/// number of remaining rewards.
pub fn default_v_bound(num_states: usize, horizon: usize) -> Vec<f64> {
    (0..horizon).map(|h| (num_states * (horizon - 1 - h)) as f64).collect()
}

/// `R_ξ,h = R_ν,h + v_bound_h·R_μ,h`, `R_η,h = R_φ,h`, where `v_bound_h`
/// bounds `Σ_{s'} |V_{h+1}(s')|`.
pub fn radii_transform(std: &StandardRadii, v_bound: &[f64]) -> Result<AmbiguityRadii, RobustError> {
    let h = std.r_phi.len();
    if std.r_mu.len() != h || std.r_nu.len() != h || v_bound.len() != h {
        return Err(RobustError::Radii("standard radii and value bounds must share one horizon".into()));
    }
    check_nonneg("R_phi", &std.r_phi)?;
    check_nonneg("R_mu", &std.r_mu)?;
    check_nonneg("R_nu", &std.r_nu)?;
    check_nonneg("v_bound", v_bound)?;
    let r_xi = (0..h).map(|t| std.r_nu[t] + v_bound[t] * std.r_mu[t]).collect();
    AmbiguityRadii::new(r_xi, std.r_phi.clone())
}

/// `Σ_{τ ≥ h} (2 R_η,τ √d + (1 + R_η,τ) R_ξ,τ)` for 0-based `h ∈ 0..=H`.
pub fn gap_bound(radii: &AmbiguityRadii, feature_dim: usize, h: usize) -> f64 {
    let sd = (feature_dim as f64).sqrt();
    (h..radii.horizon())
        .map(|t| 2.0 * radii.eta(t) * sd + (1.0 + radii.eta(t)) * radii.xi(t))
        .sum()
}

/// `ω_h = ν_h + Σ_{s'} V(s') μ_h(s')`.
pub fn omega_nominal(mdp: &LowRankMdp, v_next: &[f64], h: usize) -> Vec<f64> {
    let mut w = weighted_factor(mdp, h, v_next);
    axpy(&mut w, 1.0, mdp.nu(h));
    w
}

/// Minimiser of the averaged inner problem at one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerStep {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub value: f64,
    pub method: Method,
}

/// `min ⟨ā + η, ω + ξ⟩` over `‖ξ‖ ≤ r_xi`, `‖η‖ ≤ r_eta`.
///
/// Cases with a linear objective are solved in closed form; the rest go to
/// `solver`. When `ā = 0` every `ξ` is optimal for `η = 0`, so a fixed
/// choice is made: `η = −r_eta·unit(ω)`, then `ξ = −r_xi·unit(ā + η)`.
pub fn inner_step(
    abar: &[f64],
    omega: &[f64],
    r_xi: f64,
    r_eta: f64,
    solver: &dyn InnerSolver,
) -> Result<InnerStep, SolverError> {
    let d = abar.len();
    let closed = |xi: Vec<f64>, eta: Vec<f64>| {
        let value = dot(&add(abar, &eta), &add(omega, &xi));
        Ok(InnerStep {
            xi,
            eta,
            value,
            method: Method::ClosedForm,
        })
    };
    if r_xi == 0.0 && r_eta == 0.0 {
        return closed(vec![0.0; d], vec![0.0; d]);
    }
    if norm(abar) == 0.0 {
        let eta = scale(&unit(omega), -r_eta);
        let xi = scale(&unit(&add(abar, &eta)), -r_xi);
        return closed(xi, eta);
    }
    if r_eta == 0.0 {
        return closed(scale(&unit(abar), -r_xi), vec![0.0; d]);
    }
    if r_xi == 0.0 {
        return closed(vec![0.0; d], scale(&unit(omega), -r_eta));
    }
    let p = BilinearBallProblem::new(omega.to_vec(), abar.to_vec(), r_xi, r_eta)?;
    let rep = solver.solve(&p)?;
    Ok(InnerStep {
        value: dot(&add(abar, &rep.y_star), &add(omega, &rep.x_star)),
        xi: rep.x_star,
        eta: rep.y_star,
        method: rep.method,
    })
}

/// `(ξ*_h, η*_h)` and the attained averaged value for policy `pi` at step `h`.
#[allow(clippy::too_many_arguments)]
pub fn robust_bellman_step(
    mdp: &LowRankMdp,
    pi: &Policy,
    occ: &OccupancyMeasures,
    v_next: &[f64],
    h: usize,
    radii: &AmbiguityRadii,
    solver: &dyn InnerSolver,
) -> Result<InnerStep, RobustError> {
    pi.check_shape(mdp.horizon(), mdp.num_states(), mdp.num_actions())?;
    let b = robust_backup(mdp, occ, v_next, h, radii, solver)?;
    Ok(b.step)
}

/// Result of applying the robust operator `B̂^π_h` to a value vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustBackup {
    pub omega: Vec<f64>,
    pub step: InnerStep,
    /// `Q̂_h(s,a) = ⟨φ_h(s,a) + η*, ω + ξ*⟩`, flat `[s][a]`.
    pub q: Vec<f64>,
}

/// `B̂^π_h V` for an arbitrary next-step value vector, with `π` entering
/// through its nominal occupancy `occ`.
pub fn robust_backup(
    mdp: &LowRankMdp,
    occ: &OccupancyMeasures,
    v_next: &[f64],
    h: usize,
    radii: &AmbiguityRadii,
    solver: &dyn InnerSolver,
) -> Result<RobustBackup, RobustError> {
    radii.check_horizon(mdp.horizon())?;
    let omega = omega_nominal(mdp, v_next, h);
    let abar = occ.averaged_feature(mdp, h);
    let step = inner_step(&abar, &omega, radii.xi(h), radii.eta(h), solver)
        .map_err(|source| RobustError::Solver { step: h, source })?;
    let w = add(&omega, &step.xi);
    let (ss, aa) = (mdp.num_states(), mdp.num_actions());
    let mut q = vec![0.0; ss * aa];
    for s in 0..ss {
        for a in 0..aa {
            q[s * aa + a] = dot(mdp.phi(h, s, a), &w) + dot(&step.eta, &w);
        }
    }
    Ok(RobustBackup { omega, step, q })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustEvalResult {
    /// `V̂_h(s)` for `h ∈ 0..=H`; the last row is zero.
    pub v_hat: Vec<Vec<f64>>,
    /// `Q̂_h(s,a)`.
    pub q_hat: Vec<Vec<Vec<f64>>>,
    pub omega_nominal: Vec<Vec<f64>>,
    pub xi_star: Vec<Vec<f64>>,
    pub eta_star: Vec<Vec<f64>>,
    pub inner_values: Vec<f64>,
}

impl RobustEvalResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serialises")
    }
}

/// Backward robust recursion for `pi`.
pub fn robust_policy_eval(
    mdp: &LowRankMdp,
    pi: &Policy,
    radii: &AmbiguityRadii,
    solver: &dyn InnerSolver,
) -> Result<RobustEvalResult, RobustError> {
    let occ = occupancy(mdp, pi)?;
    robust_policy_eval_with(mdp, pi, &occ, radii, solver)
}

/// As [`robust_policy_eval`] with the nominal occupancy of `pi` supplied.
pub fn robust_policy_eval_with(
    mdp: &LowRankMdp,
    pi: &Policy,
    occ: &OccupancyMeasures,
    radii: &AmbiguityRadii,
    solver: &dyn InnerSolver,
) -> Result<RobustEvalResult, RobustError> {
    radii.check_horizon(mdp.horizon())?;
    pi.check_shape(mdp.horizon(), mdp.num_states(), mdp.num_actions())?;
    let (hh, ss, aa) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut v_hat = vec![vec![0.0; ss]; hh + 1];
    let mut q_hat = vec![Vec::new(); hh];
    let mut omegas = vec![Vec::new(); hh];
    let mut xis = vec![Vec::new(); hh];
    let mut etas = vec![Vec::new(); hh];
    let mut inner = vec![0.0; hh];
    for h in (0..hh).rev() {
        let b = robust_backup(mdp, occ, &v_hat[h + 1], h, radii, solver)?;
        let q: Vec<Vec<f64>> = (0..ss).map(|s| b.q[s * aa..(s + 1) * aa].to_vec()).collect();
        v_hat[h] = (0..ss).map(|s| dot(pi.dist(h, s), &q[s])).collect();
        q_hat[h] = q;
        omegas[h] = b.omega;
        xis[h] = b.step.xi;
        etas[h] = b.step.eta;
        inner[h] = b.step.value;
    }
    Ok(RobustEvalResult {
        v_hat,
        q_hat,
        omega_nominal: omegas,
        xi_star: xis,
        eta_star: etas,
        inner_values: inner,
    })
}

/// `⟨ρ, V̂_1⟩`.
pub fn robust_value_at_init(result: &RobustEvalResult, rho: &[f64]) -> f64 {
    dot(&result.v_hat[0], rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilinear::SdpSolver;

    #[test]
    fn zero_radii_give_nominal_average() {
        let r = inner_step(&[0.5, 0.5], &[1.0, 2.0], 0.0, 0.0, &SdpSolver::default()).unwrap();
        assert_eq!(r.xi, vec![0.0, 0.0]);
        assert_eq!(r.eta, vec![0.0, 0.0]);
        assert_eq!(r.value, 1.5);
    }

    #[test]
    fn feature_only_radius_is_linear() {
        let abar = [0.6, 0.8];
        let omega = [1.0, 3.0];
        let r = inner_step(&abar, &omega, 0.5, 0.0, &SdpSolver::default()).unwrap();
        assert!((r.xi[0] + 0.3).abs() < 1e-15 && (r.xi[1] + 0.4).abs() < 1e-15);
        assert!((r.value - (3.0 - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn zero_average_feature_tie_break() {
        let omega = [3.0, 4.0];
        let r = inner_step(&[0.0, 0.0], &omega, 0.5, 0.1, &SdpSolver::default()).unwrap();
        assert!((r.eta[0] + 0.06).abs() < 1e-15 && (r.eta[1] + 0.08).abs() < 1e-15);
        // ξ = −R_ξ·unit(η) points along +ω
        assert!((r.xi[0] - 0.3).abs() < 1e-15 && (r.xi[1] - 0.4).abs() < 1e-15);
        assert!((r.value - (-0.1 * 5.5)).abs() < 1e-14);
        let z = inner_step(&[0.0, 0.0], &[0.0, 0.0], 0.5, 0.1, &SdpSolver::default()).unwrap();
        assert_eq!((z.xi, z.eta, z.value), (vec![0.0, 0.0], vec![0.0, 0.0], 0.0));
    }

    #[test]
    fn radii_transform_cases() {
        let z = radii_transform(&StandardRadii::uniform(3, 0.0, 0.0, 0.0), &default_v_bound(2, 3)).unwrap();
        assert!(z.is_zero());
        let r = radii_transform(&StandardRadii::uniform(3, 0.2, 0.0, 0.1), &default_v_bound(2, 3)).unwrap();
        assert_eq!(r.r_xi(), &[0.1, 0.1, 0.1]);
        assert_eq!(r.r_eta(), &[0.2, 0.2, 0.2]);
        let bad = StandardRadii::uniform(2, -0.1, 0.0, 0.0);
        assert!(radii_transform(&bad, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn default_value_bound() {
        assert_eq!(default_v_bound(4, 3), vec![8.0, 4.0, 0.0]);
    }

    #[test]
    fn gap_bound_sums_tail() {
        let r = AmbiguityRadii::new(vec![0.1, 0.2], vec![0.0, 0.5]).unwrap();
        let d = 4;
        assert_eq!(gap_bound(&r, d, 2), 0.0);
        let tail = 2.0 * 0.5 * 2.0 + 1.5 * 0.2;
        assert!((gap_bound(&r, d, 1) - tail).abs() < 1e-15);
        assert!((gap_bound(&r, d, 0) - (tail + 0.1)).abs() < 1e-15);
        assert_eq!(gap_bound(&AmbiguityRadii::zero(5), 9, 0), 0.0);
    }

    #[test]
    fn radii_validation() {
        assert!(AmbiguityRadii::new(vec![0.1], vec![]).is_err());
        assert!(AmbiguityRadii::new(vec![-0.1], vec![0.0]).is_err());
        assert!(AmbiguityRadii::new(vec![f64::NAN], vec![0.0]).is_err());
    }
}
