//! Finite-horizon low-rank MDPs: storage, JSON I/O and validation.
//!
//! Steps, states and actions are 0-based in the API. Messages produced for
//! people (validation reports, CLI output) print them 1-based.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::vecops::{dot, norm};

/// Tolerance on `Σ_s' P(s'|s,a) = 1`.
pub const KERNEL_SUM_TOL: f64 = 1e-8;
/// Tolerance on individual probabilities and on simplex sums.
pub const PROB_TOL: f64 = 1e-10;
/// Number of random value vectors used when checking the factor-norm bound.
pub const FACTOR_NORM_DRAWS: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum MdpError {
    #[error("shape mismatch in `{field}`: expected {expected}, found {found}")]
    Shape {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("dimension `{0}` must be positive")]
    ZeroDimension(&'static str),
    #[error("invalid MDP:\n{0}")]
    Invalid(ValidationReport),
    #[error("malformed MDP JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Nominal model `P_h(s'|s,a) = ⟨φ_h(s,a), μ_h(s')⟩`, `r_h(s,a) = ⟨φ_h(s,a), ν_h⟩`.
///
/// The tabular kernel and rewards implied by the factors are materialised at
/// construction, so repeated evaluations do not recompute inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankMdp {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    feature_dim: usize,
    phi: Vec<f64>,
    mu: Vec<f64>,
    nu: Vec<f64>,
    rho: Vec<f64>,
    kernel: Vec<f64>,
    rewards: Vec<f64>,
}

fn check_len(field: &str, expected: usize, found: usize) -> Result<(), MdpError> {
    if expected != found {
        return Err(MdpError::Shape {
            field: field.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

impl LowRankMdp {
    /// Builds a model from flat row-major arrays: `phi[h][s][a][d]`,
    /// `mu[h][s'][d]`, `nu[h][d]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        feature_dim: usize,
        phi: Vec<f64>,
        mu: Vec<f64>,
        nu: Vec<f64>,
        rho: Vec<f64>,
    ) -> Result<Self, MdpError> {
        for (name, v) in [
            ("H", horizon),
            ("S", num_states),
            ("A", num_actions),
            ("d", feature_dim),
        ] {
            if v == 0 {
                return Err(MdpError::ZeroDimension(name));
            }
        }
        let (h, s, a, d) = (horizon, num_states, num_actions, feature_dim);
        check_len("phi", h * s * a * d, phi.len())?;
        check_len("mu", h * s * d, mu.len())?;
        check_len("nu", h * d, nu.len())?;
        check_len("rho", s, rho.len())?;
        let mut m = LowRankMdp {
            horizon,
            num_states,
            num_actions,
            feature_dim,
            phi,
            mu,
            nu,
            rho,
            kernel: Vec::new(),
            rewards: Vec::new(),
        };
        m.materialise();
        Ok(m)
    }

    fn materialise(&mut self) {
        let (hh, ss, aa) = (self.horizon, self.num_states, self.num_actions);
        let mut kernel = vec![0.0; hh * ss * aa * ss];
        let mut rewards = vec![0.0; hh * ss * aa];
        for h in 0..hh {
            for s in 0..ss {
                for a in 0..aa {
                    let f = self.phi(h, s, a);
                    rewards[(h * ss + s) * aa + a] = dot(f, self.nu(h));
                    let base = ((h * ss + s) * aa + a) * ss;
                    for sn in 0..ss {
                        kernel[base + sn] = dot(f, self.mu(h, sn));
                    }
                }
            }
        }
        self.kernel = kernel;
        self.rewards = rewards;
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn phi(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let d = self.feature_dim;
        let i = ((h * self.num_states + s) * self.num_actions + a) * d;
        &self.phi[i..i + d]
    }

    pub fn mu(&self, h: usize, s_next: usize) -> &[f64] {
        let d = self.feature_dim;
        let i = (h * self.num_states + s_next) * d;
        &self.mu[i..i + d]
    }

    pub fn nu(&self, h: usize) -> &[f64] {
        let d = self.feature_dim;
        &self.nu[h * d..(h + 1) * d]
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// `P_h(·|s,a)` as a slice of length S.
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let ss = self.num_states;
        let i = ((h * ss + s) * self.num_actions + a) * ss;
        &self.kernel[i..i + ss]
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[(h * self.num_states + s) * self.num_actions + a]
    }

    /// Same model with a different initial distribution.
    pub fn with_rho(&self, rho: Vec<f64>) -> Result<Self, MdpError> {
        check_len("rho", self.num_states, rho.len())?;
        let mut m = self.clone();
        m.rho = rho;
        Ok(m)
    }

    /// Same features and rewards, new `μ` table (flat `[h][s'][d]`).
    pub fn with_mu(&self, mu: Vec<f64>) -> Result<Self, MdpError> {
        check_len("mu", self.horizon * self.num_states * self.feature_dim, mu.len())?;
        let mut m = self.clone();
        m.mu = mu;
        m.materialise();
        Ok(m)
    }

    /// Exact tabular representation of an arbitrary finite-horizon MDP:
    /// one-hot features `e_(s,a)`, `μ_h(s')[(s,a)] = P_h(s'|s,a)`,
    /// `ν_h[(s,a)] = r_h(s,a)`.
    ///
    /// `kernel` is `[h][s][a][s']`, `rewards` is `[h][s][a]`.
    pub fn tabular(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        kernel: &[f64],
        rewards: &[f64],
        rho: Vec<f64>,
    ) -> Result<Self, MdpError> {
        let (hh, ss, aa) = (horizon, num_states, num_actions);
        let d = ss * aa;
        check_len("kernel", hh * ss * aa * ss, kernel.len())?;
        check_len("rewards", hh * ss * aa, rewards.len())?;
        let mut phi = vec![0.0; hh * ss * aa * d];
        let mut mu = vec![0.0; hh * ss * d];
        let mut nu = vec![0.0; hh * d];
        for h in 0..hh {
            for s in 0..ss {
                for a in 0..aa {
                    let j = s * aa + a;
                    phi[((h * ss + s) * aa + a) * d + j] = 1.0;
                    nu[h * d + j] = rewards[(h * ss + s) * aa + a];
                    for sn in 0..ss {
                        mu[(h * ss + sn) * d + j] = kernel[((h * ss + s) * aa + a) * ss + sn];
                    }
                }
            }
        }
        LowRankMdp::new(hh, ss, aa, d, phi, mu, nu, rho)
    }

    /// True when every `φ_h(s,a)` is the standard basis vector `e_(s·A+a)`.
    pub fn is_tabular_orthonormal(&self) -> bool {
        if self.feature_dim != self.num_states * self.num_actions {
            return false;
        }
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    let j = s * self.num_actions + a;
                    let f = self.phi(h, s, a);
                    if f.iter().enumerate().any(|(i, x)| *x != if i == j { 1.0 } else { 0.0 }) {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn mu_flat(&self) -> &[f64] {
        &self.mu
    }

    /// Checks every model invariant and reports all violations found.
    pub fn validate(&self) -> ValidationReport {
        validate_mdp(self)
    }

    // ---- JSON ----

    pub fn to_file_format(&self) -> MdpFile {
        let (hh, ss, aa) = (self.horizon, self.num_states, self.num_actions);
        MdpFile {
            h: hh,
            s: ss,
            a: aa,
            d: self.feature_dim,
            rho: self.rho.clone(),
            phi: (0..hh)
                .map(|h| {
                    (0..ss)
                        .map(|s| (0..aa).map(|a| self.phi(h, s, a).to_vec()).collect())
                        .collect()
                })
                .collect(),
            mu: (0..hh)
                .map(|h| (0..ss).map(|s| self.mu(h, s).to_vec()).collect())
                .collect(),
            nu: (0..hh).map(|h| self.nu(h).to_vec()).collect(),
        }
    }

    pub fn from_file_format(f: MdpFile) -> Result<Self, MdpError> {
        let (hh, ss, aa, d) = (f.h, f.s, f.a, f.d);
        check_len("rho", ss, f.rho.len())?;
        check_len("phi", hh, f.phi.len())?;
        check_len("mu", hh, f.mu.len())?;
        check_len("nu", hh, f.nu.len())?;
        let mut phi = Vec::with_capacity(hh * ss * aa * d);
        for (h, ph) in f.phi.iter().enumerate() {
            check_len(&format!("phi[{h}]"), ss, ph.len())?;
            for (s, ps) in ph.iter().enumerate() {
                check_len(&format!("phi[{h}][{s}]"), aa, ps.len())?;
                for (a, pa) in ps.iter().enumerate() {
                    check_len(&format!("phi[{h}][{s}][{a}]"), d, pa.len())?;
                    phi.extend_from_slice(pa);
                }
            }
        }
        let mut mu = Vec::with_capacity(hh * ss * d);
        for (h, mh) in f.mu.iter().enumerate() {
            check_len(&format!("mu[{h}]"), ss, mh.len())?;
            for (s, ms) in mh.iter().enumerate() {
                check_len(&format!("mu[{h}][{s}]"), d, ms.len())?;
                mu.extend_from_slice(ms);
            }
        }
        let mut nu = Vec::with_capacity(hh * d);
        for (h, nh) in f.nu.iter().enumerate() {
            check_len(&format!("nu[{h}]"), d, nh.len())?;
            nu.extend_from_slice(nh);
        }
        LowRankMdp::new(hh, ss, aa, d, phi, mu, nu, f.rho)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file_format()).expect("plain data serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        let f: MdpFile = serde_json::from_str(text)?;
        Self::from_file_format(f)
    }

    pub fn load(path: &Path) -> Result<Self, MdpError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// [`Self::load`] followed by [`validate_mdp`]; any violation is an error.
    pub fn load_valid(path: &Path) -> Result<Self, MdpError> {
        let m = Self::load(path)?;
        let report = m.validate();
        if report.is_valid() {
            Ok(m)
        } else {
            Err(MdpError::Invalid(report))
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), MdpError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// On-disk JSON layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "A")]
    pub a: usize,
    pub d: usize,
    pub rho: Vec<f64>,
    pub phi: Vec<Vec<Vec<Vec<f64>>>>,
    pub mu: Vec<Vec<Vec<f64>>>,
    pub nu: Vec<Vec<f64>>,
}

/// One violated model invariant. Indices are 0-based; `Display` prints them 1-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RhoNegative { s: usize, value: f64 },
    RhoSum { sum: f64 },
    TransitionEntry { h: usize, s: usize, a: usize, s_next: usize, value: f64 },
    TransitionSum { h: usize, s: usize, a: usize, sum: f64 },
    RewardRange { h: usize, s: usize, a: usize, value: f64 },
    FeatureNorm { h: usize, s: usize, a: usize, norm: f64 },
    RewardFactorNorm { h: usize, norm: f64, bound: f64 },
    /// `‖Σ_s V(s) μ_h(s)‖` exceeded its bound; `draw` is `None` for `V ≡ H`.
    FactorNorm { h: usize, draw: Option<usize>, norm: f64, bound: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::RhoNegative { s, value } => {
                write!(f, "initial distribution negative at s={}: {value:e}", s + 1)
            }
            Violation::RhoSum { sum } => {
                write!(f, "initial distribution sums to {sum} (off by {:e})", (sum - 1.0).abs())
            }
            Violation::TransitionEntry { h, s, a, s_next, value } => write!(
                f,
                "transition probability out of [0,1] at (h={},s={},a={},s'={}): {value:e}",
                h + 1,
                s + 1,
                a + 1,
                s_next + 1
            ),
            Violation::TransitionSum { h, s, a, sum } => write!(
                f,
                "transition row does not sum to 1 at (h={},s={},a={}): {sum} (off by {:e})",
                h + 1,
                s + 1,
                a + 1,
                (sum - 1.0).abs()
            ),
            Violation::RewardRange { h, s, a, value } => write!(
                f,
                "reward out of [0,1] at (h={},s={},a={}): {value}",
                h + 1,
                s + 1,
                a + 1
            ),
            Violation::FeatureNorm { h, s, a, norm } => write!(
                f,
                "feature norm exceeds 1 at (h={},s={},a={}): {norm}",
                h + 1,
                s + 1,
                a + 1
            ),
            Violation::RewardFactorNorm { h, norm, bound } => {
                write!(f, "reward factor norm at h={}: {norm} > {bound}", h + 1)
            }
            Violation::FactorNorm { h, draw, norm, bound } => match draw {
                None => write!(f, "factor norm at h={} for V = H: {norm} > {bound}", h + 1),
                Some(k) => write!(
                    f,
                    "factor norm at h={} for random V #{}: {norm} > {bound}",
                    h + 1,
                    k + 1
                ),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Bound used for `‖Σ_s V(s) μ_h(s)‖` with `V` ranging over `[0,H]`.
///
/// The value bound is stated per unit of value range: `√d` for `V ∈ [0,1]`,
/// hence `H·√d` over `[0,H]`. A bound of `√d` irrespective of `H` cannot hold
/// for any valid kernel once `H > √d`, because `‖Σ_s μ_h(s)‖ ≥ 1`.
pub fn factor_norm_bound(horizon: usize, feature_dim: usize) -> f64 {
    horizon as f64 * (feature_dim as f64).sqrt()
}

pub fn validate_mdp(m: &LowRankMdp) -> ValidationReport {
    validate_mdp_with(m, factor_norm_bound(m.horizon, m.feature_dim))
}

/// [`validate_mdp`] with an explicit bound on `‖Σ_s V(s) μ_h(s)‖` over
/// `V ∈ [0,H]^S`. Passing `√d` gives the unscaled condition, which only
/// models with `H ≤ √d` can meet.
pub fn validate_mdp_with(m: &LowRankMdp, factor_bound: f64) -> ValidationReport {
    let mut out = Vec::new();
    let (hh, ss, aa, d) = (m.horizon, m.num_states, m.num_actions, m.feature_dim);

    for (s, &p) in m.rho.iter().enumerate() {
        if p < -PROB_TOL {
            out.push(Violation::RhoNegative { s, value: p });
        }
    }
    let rho_sum: f64 = m.rho.iter().sum();
    if (rho_sum - 1.0).abs() > PROB_TOL {
        out.push(Violation::RhoSum { sum: rho_sum });
    }

    for h in 0..hh {
        for s in 0..ss {
            for a in 0..aa {
                let row = m.transition_row(h, s, a);
                for (sn, &p) in row.iter().enumerate() {
                    if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&p) {
                        out.push(Violation::TransitionEntry { h, s, a, s_next: sn, value: p });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > KERNEL_SUM_TOL || !sum.is_finite() {
                    out.push(Violation::TransitionSum { h, s, a, sum });
                }
                let r = m.reward(h, s, a);
                if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&r) {
                    out.push(Violation::RewardRange { h, s, a, value: r });
                }
                let n = norm(m.phi(h, s, a));
                if n > 1.0 + PROB_TOL {
                    out.push(Violation::FeatureNorm { h, s, a, norm: n });
                }
            }
        }
    }

    let sqrt_d = (d as f64).sqrt();
    let bound = factor_bound;
    let top = hh as f64;
    let mut draws = rng::stream(0x5eed_0f_fac7, 0);
    let random_vs: Vec<Vec<f64>> = (0..FACTOR_NORM_DRAWS)
        .map(|_| (0..ss).map(|_| draws.gen::<f64>() * top).collect())
        .collect();
    for h in 0..hh {
        let nn = norm(m.nu(h));
        if nn > sqrt_d + PROB_TOL {
            out.push(Violation::RewardFactorNorm { h, norm: nn, bound: sqrt_d });
        }
        let weighted = |v: &[f64]| {
            let mut acc = vec![0.0; d];
            for (sn, &vs) in v.iter().enumerate() {
                crate::vecops::axpy(&mut acc, vs, m.mu(h, sn));
            }
            norm(&acc)
        };
        let n_top = weighted(&vec![top; ss]);
        if n_top > bound * (1.0 + PROB_TOL) {
            out.push(Violation::FactorNorm { h, draw: None, norm: n_top, bound });
        }
        for (k, v) in random_vs.iter().enumerate() {
            let n = weighted(v);
            if n > bound * (1.0 + PROB_TOL) {
                out.push(Violation::FactorNorm { h, draw: Some(k), norm: n, bound });
            }
        }
    }
    ValidationReport { violations: out }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(nu: f64) -> LowRankMdp {
        LowRankMdp::new(1, 1, 1, 1, vec![1.0], vec![1.0], vec![nu], vec![1.0]).unwrap()
    }

    #[test]
    fn identity_kernel_is_valid() {
        assert!(validate_mdp(&single(0.5)).is_valid());
    }

    #[test]
    fn reward_above_one_is_reported_with_indices() {
        let r = validate_mdp(&single(1.5));
        assert_eq!(
            r.violations,
            vec![
                Violation::RewardRange { h: 0, s: 0, a: 0, value: 1.5 },
                Violation::RewardFactorNorm { h: 0, norm: 1.5, bound: 1.0 },
            ]
        );
        assert!(r.violations[0].to_string().contains("(h=1,s=1,a=1)"));
    }

    #[test]
    fn shape_errors_are_structural() {
        let e = LowRankMdp::new(1, 1, 1, 2, vec![1.0], vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0]);
        assert!(matches!(e, Err(MdpError::Shape { ref field, .. }) if field == "phi"));
    }

    #[test]
    fn json_round_trip() {
        let m = single(0.25);
        let back = LowRankMdp::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn json_loader_rejects_ragged_arrays() {
        let text = r#"{"H":1,"S":1,"A":1,"d":2,"rho":[1.0],
            "phi":[[[[1.0]]]],"mu":[[[1.0,0.0]]],"nu":[[0.0,0.0]]}"#;
        match LowRankMdp::from_json(text) {
            Err(MdpError::Shape { field, expected, found }) => {
                assert_eq!(field, "phi[0][0][0]");
                assert_eq!((expected, found), (2, 1));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn bad_kernel_row_is_reported() {
        let m = LowRankMdp::new(1, 2, 1, 1, vec![1.0, 1.0], vec![0.7, 0.7], vec![0.0], vec![0.5, 0.5])
            .unwrap();
        let r = validate_mdp(&m);
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::TransitionSum { h: 0, s: 1, a: 0, .. })));
    }

    #[test]
    fn tabular_representation_reproduces_kernel() {
        let kernel = [0.2, 0.8, 1.0, 0.0, 0.5, 0.5, 0.0, 1.0];
        let rewards = [0.1, 0.2, 0.3, 0.4];
        let m = LowRankMdp::tabular(1, 2, 2, &kernel, &rewards, vec![1.0, 0.0]).unwrap();
        assert!(m.is_tabular_orthonormal());
        assert!(validate_mdp(&m).is_valid());
        assert_eq!(m.transition_row(0, 1, 0), &[0.5, 0.5]);
        assert_eq!(m.reward(0, 1, 1), 0.4);
    }
}
