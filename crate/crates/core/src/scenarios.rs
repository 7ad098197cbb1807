//! The three worked examples: string guessing, gamble-or-guarantee and the
//! four-state ring, with their closed-form values.

use serde::Serialize;

use crate::bilinear::InnerSolver;
use crate::mdp::{LowRankMdp, MdpError};
use crate::policy::Policy;
use crate::robust::{robust_policy_eval, robust_value_at_init, AmbiguityRadii, RobustError};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Robust(#[from] RobustError),
}

// ---------------------------------------------------------------------------
// String guessing

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StringGuessingParams {
    /// Number of bits.
    pub m: usize,
    pub horizon: usize,
    pub delta: f64,
}

impl StringGuessingParams {
    pub fn new(m: usize, horizon: usize, delta: f64) -> Result<Self, ScenarioError> {
        if m == 0 || horizon <= m {
            return Err(ScenarioError::Params(format!("need H > m >= 1, got m={m}, H={horizon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(ScenarioError::Params(format!("delta must lie in [0,1), got {delta}")));
        }
        Ok(StringGuessingParams { m, horizon, delta })
    }
}

/// State indices of the string-guessing model.
pub mod sg {
    pub const LOSE: usize = 0;
    pub const WIN: usize = 1;
    /// Progress state `s_i` for `i ∈ 1..=m`.
    pub fn bit(i: usize) -> usize {
        i + 1
    }
    pub const A0: usize = 0;
    pub const A1: usize = 1;
}

/// States `[s₋, s₊, s₁, …, s_m]`, actions `[a₀, a₁]`, `d = 4`, start at `s₁`.
///
/// Action `a₁` from a progress state at step `h` leads to `s_{h+1}` (with
/// `s_{m+1} = s₊`); `a₀` leads to `s₋`. Both absorbing states keep their
/// factor at every step so every row of the kernel is a distribution.
///
/// The radii are `R_ξ,h = (H−h)δ` while the bits are being guessed
/// (`h ≤ m`) and zero once the game has been decided, `R_η,h = 0`.
pub fn build_string_guessing(p: &StringGuessingParams) -> Result<(LowRankMdp, AmbiguityRadii), ScenarioError> {
    let p = StringGuessingParams::new(p.m, p.horizon, p.delta)?;
    let (m, hh) = (p.m, p.horizon);
    let ss = m + 2;
    let (aa, d) = (2, 4);
    let e = |i: usize| {
        let mut v = [0.0; 4];
        v[i] = 1.0;
        v
    };
    let mut phi = Vec::with_capacity(hh * ss * aa * d);
    let mut mu = Vec::with_capacity(hh * ss * d);
    let mut nu = Vec::with_capacity(hh * d);
    for h1 in 1..=hh {
        for s in 0..ss {
            for a in 0..aa {
                let f = match s {
                    sg::LOSE => e(0),
                    sg::WIN => e(3),
                    _ if a == sg::A0 => e(1),
                    _ => e(2),
                };
                phi.extend_from_slice(&f);
            }
        }
        // a₁ at step h reaches s_{min(h,m)+1}
        let target = if h1 >= m { sg::WIN } else { sg::bit(h1 + 1) };
        for sn in 0..ss {
            let mut v = [0.0; 4];
            if sn == sg::LOSE {
                v[0] = 1.0;
                v[1] = 1.0;
            }
            if sn == sg::WIN {
                v[3] = 1.0;
            }
            if sn == target {
                v[2] = 1.0;
            }
            mu.extend_from_slice(&v);
        }
        nu.extend_from_slice(&e(3));
    }
    let mut rho = vec![0.0; ss];
    rho[sg::bit(1)] = 1.0;
    let mdp = LowRankMdp::new(hh, ss, aa, d, phi, mu, nu, rho)?;
    let r_xi = (1..=hh)
        .map(|h| if h <= m { (hh - h) as f64 * p.delta } else { 0.0 })
        .collect();
    let radii = AmbiguityRadii::new(r_xi, vec![0.0; hh])?;
    Ok((mdp, radii))
}

/// `R_ξ,h = (H−h)δ` at every step, `R_η,h = 0`.
pub fn string_guessing_full_radii(p: &StringGuessingParams) -> Result<AmbiguityRadii, ScenarioError> {
    let hh = p.horizon;
    Ok(AmbiguityRadii::new(
        (1..=hh).map(|h| (hh - h) as f64 * p.delta).collect(),
        vec![0.0; hh],
    )?)
}

/// The policy that always answers `1`.
pub fn string_guessing_all_ones(p: &StringGuessingParams) -> Policy {
    let acts = vec![vec![sg::A1; p.m + 2]; p.horizon];
    Policy::deterministic(2, &acts).expect("valid action index")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StringGuessingValues {
    /// Nominal value `H − m`.
    pub v: f64,
    /// Factor-wise robust value `(1−δ)^m (H−m)`.
    pub v_tilde: f64,
    /// Low-rank robust value `(H−m) − Σ_{h ≤ m} (H−h)δ`.
    pub v_hat: f64,
}

/// Values of the all-ones policy at `s₁`.
pub fn string_guessing_closed_forms(p: &StringGuessingParams) -> StringGuessingValues {
    let (m, hh) = (p.m as f64, p.horizon as f64);
    let v = hh - m;
    let v_tilde = (1.0 - p.delta).powi(p.m as i32) * v;
    let loss: f64 = (1..=p.m).map(|h| (p.horizon - h) as f64 * p.delta).sum();
    StringGuessingValues {
        v,
        v_tilde,
        v_hat: v - loss,
    }
}

// ---------------------------------------------------------------------------
// Gamble or guarantee

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GambleParams {
    /// Per-step probability of falling from `s₁` into `s₀`.
    pub p: f64,
    /// Per-step reward of the guarantee branch.
    pub alpha_reward: f64,
    pub horizon: usize,
    pub delta: f64,
}

impl GambleParams {
    pub fn new(p: f64, alpha_reward: f64, horizon: usize, delta: f64) -> Result<Self, ScenarioError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(ScenarioError::Params(format!("p must lie in (0,1), got {p}")));
        }
        if !(alpha_reward > 0.0 && alpha_reward <= 1.0) {
            return Err(ScenarioError::Params(format!("alpha must lie in (0,1], got {alpha_reward}")));
        }
        if horizon < 2 {
            return Err(ScenarioError::Params(format!("need H >= 2, got {horizon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(ScenarioError::Params(format!("delta must lie in [0,1), got {delta}")));
        }
        Ok(GambleParams {
            p,
            alpha_reward,
            horizon,
            delta,
        })
    }
}

/// State indices of the gamble-or-guarantee model.
pub mod gamble {
    pub const GUARANTEE: usize = 0;
    pub const FALLEN: usize = 1;
    pub const GAMBLING: usize = 2;
    pub const START: usize = 3;
    /// Enter the guarantee branch.
    pub const A0: usize = 0;
    /// Enter the gamble branch.
    pub const A1: usize = 1;
}

/// States `[s_α, s₀, s₁, s₊]`, actions `[a₀, a₁]`, `d = 5`, start at `s₊`.
///
/// The reward factor of `s₁` is `1 − p`: a unit reward paid only when the
/// step survives, in expectation. This is what makes the optimal values
/// `V*_h(s₁) = ((1−p)/p)(1 − (1−p)^{H−h+1})`.
pub fn build_gamble(p: &GambleParams) -> Result<(LowRankMdp, AmbiguityRadii), ScenarioError> {
    let p = GambleParams::new(p.p, p.alpha_reward, p.horizon, p.delta)?;
    let (hh, ss, aa, d) = (p.horizon, 4, 2, 5);
    let e = |i: usize| {
        let mut v = [0.0; 5];
        v[i] = 1.0;
        v
    };
    let mut phi = Vec::with_capacity(hh * ss * aa * d);
    let mut mu = Vec::with_capacity(hh * ss * d);
    let mut nu = Vec::with_capacity(hh * d);
    for _ in 0..hh {
        for s in 0..ss {
            for a in 0..aa {
                let f = match s {
                    gamble::START => e(a),
                    gamble::GUARANTEE => e(2),
                    gamble::GAMBLING => e(3),
                    _ => e(4),
                };
                phi.extend_from_slice(&f);
            }
        }
        mu.extend_from_slice(&[1.0, 0.0, 1.0, 0.0, 0.0]); // s_α
        mu.extend_from_slice(&[0.0, 0.0, 0.0, p.p, 1.0]); // s₀
        mu.extend_from_slice(&[0.0, 1.0, 0.0, 1.0 - p.p, 0.0]); // s₁
        mu.extend_from_slice(&[0.0; 5]); // s₊
        nu.extend_from_slice(&[0.0, 0.0, p.alpha_reward, 1.0 - p.p, 0.0]);
    }
    let mut rho = vec![0.0; ss];
    rho[gamble::START] = 1.0;
    let mdp = LowRankMdp::new(hh, ss, aa, d, phi, mu, nu, rho)?;
    let radii = AmbiguityRadii::uniform(hh, p.delta, 0.0)?;
    Ok((mdp, radii))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GambleValues {
    /// `V̂*_h(s_α) = ((1−δ)α/δ)(1 − (1−δ)^{H−h+1})`, or `α(H−h+1)` at `δ = 0`.
    pub v_guarantee: f64,
    /// `(1−p−δ)/(p+δ)`: an upper bound on `V̂*_h(s₁)`, not a value.
    pub v_gamble_upper: f64,
    /// `V*_h(s₁) = ((1−p)/p)(1 − (1−p)^{H−h+1})`.
    pub v_nominal_gamble: f64,
    /// `V*_h(s_α) = α(H−h+1)`.
    pub v_nominal_guarantee: f64,
}

/// Closed forms at 1-based step `h`.
pub fn gamble_closed_forms(p: &GambleParams, h: usize) -> GambleValues {
    let n = (p.horizon + 1).saturating_sub(h) as i32;
    let (q, a, dl) = (p.p, p.alpha_reward, p.delta);
    let v_guarantee = if dl == 0.0 {
        a * n as f64
    } else {
        (1.0 - dl) * a / dl * (1.0 - (1.0 - dl).powi(n))
    };
    GambleValues {
        v_guarantee,
        v_gamble_upper: (1.0 - q - dl) / (q + dl),
        v_nominal_gamble: (1.0 - q) / q * (1.0 - (1.0 - q).powi(n)),
        v_nominal_guarantee: a * n as f64,
    }
}

/// Deterministic policy taking `first` at the start and `a₀` elsewhere
/// (the other states ignore the action).
pub fn gamble_policy(horizon: usize, first: usize) -> Policy {
    let mut acts = vec![vec![gamble::A0; 4]; horizon];
    acts[0][gamble::START] = first;
    Policy::deterministic(2, &acts).expect("valid action index")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GambleDecision {
    pub params: GambleParams,
    pub nominal_guarantee: f64,
    pub nominal_gamble: f64,
    pub robust_guarantee: f64,
    pub robust_gamble: f64,
}

impl GambleDecision {
    pub fn nominal_action(&self) -> usize {
        if self.nominal_gamble > self.nominal_guarantee {
            gamble::A1
        } else {
            gamble::A0
        }
    }

    pub fn robust_action(&self) -> usize {
        if self.robust_gamble > self.robust_guarantee {
            gamble::A1
        } else {
            gamble::A0
        }
    }
}

/// Nominal and robust values of both initial actions.
pub fn gamble_decision(p: &GambleParams, solver: &dyn InnerSolver) -> Result<GambleDecision, ScenarioError> {
    let (mdp, radii) = build_gamble(p)?;
    let zero = AmbiguityRadii::zero(p.horizon);
    let value = |first: usize, r: &AmbiguityRadii| -> Result<f64, ScenarioError> {
        let pi = gamble_policy(p.horizon, first);
        let res = robust_policy_eval(&mdp, &pi, r, solver)?;
        Ok(robust_value_at_init(&res, mdp.rho()))
    };
    Ok(GambleDecision {
        params: *p,
        nominal_guarantee: value(gamble::A0, &zero)?,
        nominal_gamble: value(gamble::A1, &zero)?,
        robust_guarantee: value(gamble::A0, &radii)?,
        robust_gamble: value(gamble::A1, &radii)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlipSearch {
    pub checked: usize,
    /// Nominal play gambles, robust play takes the guarantee.
    pub towards_guarantee: Vec<GambleDecision>,
    /// Nominal play takes the guarantee, robust play gambles.
    pub towards_gamble: Vec<GambleDecision>,
}

/// Parameter grid searched for a change of the optimal initial action.
pub fn flip_search_grid() -> Vec<GambleParams> {
    let mut out = Vec::new();
    for &p in &[0.02, 0.05, 0.1, 0.2, 0.3, 0.5] {
        for &a in &[0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9] {
            for &h in &[3usize, 5, 10, 20, 30] {
                for &dl in &[0.01, 0.05, 0.1, 0.2, 0.4] {
                    out.push(GambleParams::new(p, a, h, dl).expect("grid values are valid"));
                }
            }
        }
    }
    out
}

/// Evaluates both initial actions on every parameter set and collects the
/// sets where nominal and robust play disagree.
pub fn flip_search(grid: &[GambleParams], solver: &dyn InnerSolver) -> Result<FlipSearch, ScenarioError> {
    let mut out = FlipSearch {
        checked: 0,
        towards_guarantee: Vec::new(),
        towards_gamble: Vec::new(),
    };
    for p in grid {
        let dec = gamble_decision(p, solver)?;
        out.checked += 1;
        match (dec.nominal_action(), dec.robust_action()) {
            (gamble::A1, gamble::A0) => out.towards_guarantee.push(dec),
            (gamble::A0, gamble::A1) => out.towards_gamble.push(dec),
            _ => {}
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Ring

pub const RING_STATES: usize = 4;
pub const RING_ACTIONS: usize = 3;
pub const RING_REWARDS: [f64; 4] = [0.0, 0.90, 0.89, 0.91];

/// Ring actions.
pub mod ring {
    pub const CCW: usize = 0;
    pub const STAY: usize = 1;
    pub const CW: usize = 2;
}

/// Deterministic four-state ring with one-hot features (`d = 12`) and a
/// uniform initial distribution.
pub fn build_ring(horizon: usize) -> Result<LowRankMdp, ScenarioError> {
    if horizon == 0 {
        return Err(ScenarioError::Params("horizon must be at least 1".into()));
    }
    let (ss, aa) = (RING_STATES, RING_ACTIONS);
    let mut kernel = vec![0.0; horizon * ss * aa * ss];
    let mut rewards = vec![0.0; horizon * ss * aa];
    for h in 0..horizon {
        for s in 0..ss {
            for a in 0..aa {
                let next = match a {
                    ring::CCW => (s + ss - 1) % ss,
                    ring::STAY => s,
                    _ => (s + 1) % ss,
                };
                kernel[((h * ss + s) * aa + a) * ss + next] = 1.0;
                rewards[(h * ss + s) * aa + a] = RING_REWARDS[s];
            }
        }
    }
    Ok(LowRankMdp::tabular(horizon, ss, aa, &kernel, &rewards, vec![0.25; ss])?)
}

/// Built-in scenarios with default parameters, by name.
pub fn builtin(name: &str, horizon: Option<usize>) -> Result<LowRankMdp, ScenarioError> {
    match name {
        "string-guessing" => {
            let p = StringGuessingParams::new(3, horizon.unwrap_or(10), 0.05)?;
            Ok(build_string_guessing(&p)?.0)
        }
        "gamble" => {
            let p = GambleParams::new(0.2, 0.5, horizon.unwrap_or(30), 0.05)?;
            Ok(build_gamble(&p)?.0)
        }
        "ring" => build_ring(horizon.unwrap_or(10)),
        other => Err(ScenarioError::Params(format!(
            "unknown scenario '{other}' (expected string-guessing, gamble or ring)"
        ))),
    }
}

pub const SCENARIO_NAMES: [&str; 3] = ["string-guessing", "gamble", "ring"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilinear::SdpSolver;
    use crate::dp::{nominal_dp, policy_value_at_init};

    #[test]
    fn string_guessing_is_valid_and_pays_h_minus_m() {
        let p = StringGuessingParams::new(3, 10, 0.05).unwrap();
        let (mdp, _) = build_string_guessing(&p).unwrap();
        assert!(mdp.validate().is_valid(), "{}", mdp.validate());
        let v = nominal_dp(&mdp, &string_guessing_all_ones(&p)).unwrap();
        assert_eq!(policy_value_at_init(&v, mdp.rho()), 7.0);
    }

    #[test]
    fn string_guessing_closed_form_examples() {
        let c = string_guessing_closed_forms(&StringGuessingParams::new(3, 10, 0.05).unwrap());
        assert_eq!(c.v, 7.0);
        assert!((c.v_tilde - 6.001625).abs() < 1e-12);
        assert!((c.v_hat - 5.8).abs() < 1e-12);
        let c = string_guessing_closed_forms(&StringGuessingParams::new(1, 2, 0.5).unwrap());
        assert_eq!((c.v, c.v_tilde, c.v_hat), (1.0, 0.5, 0.5));
    }

    #[test]
    fn string_guessing_rejects_bad_params() {
        assert!(StringGuessingParams::new(3, 3, 0.1).is_err());
        assert!(StringGuessingParams::new(0, 3, 0.1).is_err());
        assert!(StringGuessingParams::new(2, 3, 1.0).is_err());
    }

    #[test]
    fn gamble_is_valid_with_expected_nominal_values() {
        let p = GambleParams::new(0.2, 0.5, 30, 0.05).unwrap();
        let (mdp, radii) = build_gamble(&p).unwrap();
        assert!(mdp.validate().is_valid(), "{}", mdp.validate());
        assert_eq!(radii.r_xi()[0], 0.05);
        let d = gamble_decision(&p, &SdpSolver::default()).unwrap();
        // V*_2 of the chosen branch, reached after one zero-reward step
        let c = gamble_closed_forms(&p, 2);
        assert!((d.nominal_gamble - c.v_nominal_gamble).abs() < 1e-12);
        assert!((d.nominal_guarantee - c.v_nominal_guarantee).abs() < 1e-12);
    }

    #[test]
    fn gamble_guarantee_closed_form() {
        let p = GambleParams::new(0.2, 0.5, 30, 0.05).unwrap();
        let c = gamble_closed_forms(&p, 2);
        assert!((c.v_guarantee - 9.5 * (1.0 - 0.95f64.powi(29))).abs() < 1e-12);
        let z = gamble_closed_forms(&GambleParams::new(0.2, 0.5, 30, 0.0).unwrap(), 2);
        assert_eq!(z.v_guarantee, 0.5 * 29.0);
    }

    #[test]
    fn ring_rewards_and_validity() {
        let mdp = build_ring(6).unwrap();
        assert!(mdp.validate().is_valid(), "{}", mdp.validate());
        assert!(mdp.is_tabular_orthonormal());
        let stay = Policy::deterministic(3, &vec![vec![ring::STAY; 4]; 6]).unwrap();
        let v = nominal_dp(&mdp, &stay).unwrap();
        assert!((v.v(0)[3] - 0.91 * 6.0).abs() < 1e-12);
        assert!((v.v(0)[2] - 0.89 * 6.0).abs() < 1e-12);
        assert_eq!(v.v(0)[0], 0.0);
    }

    #[test]
    fn builtin_names() {
        for n in SCENARIO_NAMES {
            assert!(builtin(n, None).unwrap().validate().is_valid());
        }
        assert!(builtin("pendulum", None).is_err());
    }
}
