//! Occupancy measures and nominal dynamic programming.

use crate::mdp::LowRankMdp;
use crate::policy::{Policy, PolicyError};
use crate::vecops::{axpy, dot};

/// `ρ^π_h(s)` and `d^π_h(s,a)` in the nominal model, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasures {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    state_occ: Vec<f64>,
    state_action_occ: Vec<f64>,
}

impl OccupancyMeasures {
    pub fn state(&self, h: usize) -> &[f64] {
        let s = self.num_states;
        &self.state_occ[h * s..(h + 1) * s]
    }

    /// `d^π_h` as a flat `[s][a]` slice.
    pub fn state_action(&self, h: usize) -> &[f64] {
        let n = self.num_states * self.num_actions;
        &self.state_action_occ[h * n..(h + 1) * n]
    }

    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.state_action(h)[s * self.num_actions + a]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Occupancy-weighted feature `ā_h = Σ_{s,a} d^π_h(s,a) φ_h(s,a)`.
    pub fn averaged_feature(&self, mdp: &LowRankMdp, h: usize) -> Vec<f64> {
        let mut acc = vec![0.0; mdp.feature_dim()];
        let occ = self.state_action(h);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let w = occ[s * self.num_actions + a];
                if w != 0.0 {
                    axpy(&mut acc, w, mdp.phi(h, s, a));
                }
            }
        }
        acc
    }
}

/// `V^π_h(s)` for `h ∈ 0..=H` (row `H` is identically zero) and `Q^π_h(s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    v: Vec<f64>,
    q: Vec<f64>,
}

impl ValueTable {
    pub(crate) fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        ValueTable {
            horizon,
            num_states,
            num_actions,
            v: vec![0.0; (horizon + 1) * num_states],
            q: vec![0.0; horizon * num_states * num_actions],
        }
    }

    pub fn v(&self, h: usize) -> &[f64] {
        let s = self.num_states;
        &self.v[h * s..(h + 1) * s]
    }

    /// `Q_h` as a flat `[s][a]` slice.
    pub fn q(&self, h: usize) -> &[f64] {
        let n = self.num_states * self.num_actions;
        &self.q[h * n..(h + 1) * n]
    }

    pub fn q_sa(&self, h: usize, s: usize) -> &[f64] {
        let a = self.num_actions;
        &self.q(h)[s * a..(s + 1) * a]
    }

    pub(crate) fn v_mut(&mut self, h: usize) -> &mut [f64] {
        let s = self.num_states;
        &mut self.v[h * s..(h + 1) * s]
    }

    pub(crate) fn q_mut(&mut self, h: usize) -> &mut [f64] {
        let n = self.num_states * self.num_actions;
        &mut self.q[h * n..(h + 1) * n]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

fn check_policy(mdp: &LowRankMdp, pi: &Policy) -> Result<(), PolicyError> {
    pi.check_shape(mdp.horizon(), mdp.num_states(), mdp.num_actions())?;
    pi.check_simplex()
}

/// Forward recursion `d_1 = ρ·π_1`, `d_{h+1}(s',a') = Σ d_h(s,a) P_h(s'|s,a) π_{h+1}(a'|s')`.
pub fn occupancy(mdp: &LowRankMdp, pi: &Policy) -> Result<OccupancyMeasures, PolicyError> {
    check_policy(mdp, pi)?;
    Ok(occupancy_unchecked(mdp, pi))
}

pub(crate) fn occupancy_unchecked(mdp: &LowRankMdp, pi: &Policy) -> OccupancyMeasures {
    let (hh, ss, aa) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut state_occ = vec![0.0; hh * ss];
    let mut sa_occ = vec![0.0; hh * ss * aa];
    state_occ[..ss].copy_from_slice(mdp.rho());
    for h in 0..hh {
        for s in 0..ss {
            let rs = state_occ[h * ss + s];
            let dist = pi.dist(h, s);
            for a in 0..aa {
                sa_occ[(h * ss + s) * aa + a] = rs * dist[a];
            }
        }
        if h + 1 < hh {
            let next = &mut state_occ[(h + 1) * ss..(h + 2) * ss];
            for s in 0..ss {
                for a in 0..aa {
                    let w = sa_occ[(h * ss + s) * aa + a];
                    if w != 0.0 {
                        axpy(next, w, mdp.transition_row(h, s, a));
                    }
                }
            }
        }
    }
    OccupancyMeasures {
        horizon: hh,
        num_states: ss,
        num_actions: aa,
        state_occ,
        state_action_occ: sa_occ,
    }
}

/// `Σ_{s'} V(s') μ_h(s')`.
pub fn weighted_factor(mdp: &LowRankMdp, h: usize, v_next: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; mdp.feature_dim()];
    for (sn, &v) in v_next.iter().enumerate() {
        if v != 0.0 {
            axpy(&mut acc, v, mdp.mu(h, sn));
        }
    }
    acc
}

/// Nominal Bellman backup `[B_h V](s,a) = ⟨φ_h(s,a), ν_h + Σ_{s'} V(s') μ_h(s')⟩`,
/// returned as a flat `[s][a]` table.
pub fn bellman_backup(mdp: &LowRankMdp, h: usize, v_next: &[f64]) -> Vec<f64> {
    let (ss, aa) = (mdp.num_states(), mdp.num_actions());
    let mut w = weighted_factor(mdp, h, v_next);
    axpy(&mut w, 1.0, mdp.nu(h));
    let mut q = vec![0.0; ss * aa];
    for s in 0..ss {
        for a in 0..aa {
            q[s * aa + a] = dot(mdp.phi(h, s, a), &w);
        }
    }
    q
}

/// Policy evaluation by backward recursion from `V_{H+1} ≡ 0`.
pub fn nominal_dp(mdp: &LowRankMdp, pi: &Policy) -> Result<ValueTable, PolicyError> {
    check_policy(mdp, pi)?;
    Ok(nominal_dp_unchecked(mdp, pi))
}

pub(crate) fn nominal_dp_unchecked(mdp: &LowRankMdp, pi: &Policy) -> ValueTable {
    let (hh, ss, aa) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut vt = ValueTable::zeros(hh, ss, aa);
    for h in (0..hh).rev() {
        let q = bellman_backup(mdp, h, vt.v(h + 1));
        let v: Vec<f64> = (0..ss).map(|s| dot(pi.dist(h, s), &q[s * aa..(s + 1) * aa])).collect();
        vt.q_mut(h).copy_from_slice(&q);
        vt.v_mut(h).copy_from_slice(&v);
    }
    vt
}

/// `V_1(ρ) = Σ_s ρ(s) V_1(s)`.
pub fn policy_value_at_init(vt: &ValueTable, rho: &[f64]) -> f64 {
    dot(vt.v(0), rho)
}

/// Optimal values and a greedy deterministic optimal policy (ties go to the
/// lowest action index).
pub fn optimal_dp(mdp: &LowRankMdp) -> (ValueTable, Policy) {
    let (hh, ss, aa) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut vt = ValueTable::zeros(hh, ss, aa);
    let mut actions = vec![vec![0usize; ss]; hh];
    for h in (0..hh).rev() {
        let q = bellman_backup(mdp, h, vt.v(h + 1));
        let mut v = vec![0.0; ss];
        for s in 0..ss {
            let row = &q[s * aa..(s + 1) * aa];
            let (best, val) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (a, &x)| if x > acc.1 { (a, x) } else { acc });
            actions[h][s] = best;
            v[s] = val;
        }
        vt.q_mut(h).copy_from_slice(&q);
        vt.v_mut(h).copy_from_slice(&v);
    }
    let pi = Policy::deterministic(aa, &actions).expect("actions in range");
    (vt, pi)
}
