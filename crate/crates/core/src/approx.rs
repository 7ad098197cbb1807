//! Sample-based replacements for the exact quantities used by robust
//! evaluation: rollouts from the nominal model, a ridge estimate of `ω_h`,
//! a Monte-Carlo estimate of the averaged feature `ā_h`, and stochastic
//! gradient descent on a penalised form of the inner problem.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::fmt::sig17;
use crate::mdp::LowRankMdp;
use crate::policy::Policy;
use crate::policy_opt::csv_io;
use crate::rng;
use crate::vecops::{add, axpy, dot, project_ball, scale};

#[derive(Debug, thiserror::Error)]
pub enum ApproxError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("SGD diverged at step {step} (objective {value})")]
    Divergence { step: usize, value: f64 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    /// `[i][h]`.
    pub trajectories: Vec<Vec<Transition>>,
    /// Rewards `r_h(s,a)` aligned with `trajectories`.
    pub rewards: Vec<Vec<f64>>,
    pub seed: u64,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Flat CSV `i,h,s,a,r,s_next` with 1-based `h`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ApproxError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["i", "h", "s", "a", "r", "s_next"]).map_err(csv_io)?;
        for (i, (traj, rs)) in self.trajectories.iter().zip(&self.rewards).enumerate() {
            for (h, (t, r)) in traj.iter().zip(rs).enumerate() {
                w.write_record([
                    i.to_string(),
                    (h + 1).to_string(),
                    t.s.to_string(),
                    t.a.to_string(),
                    sig17(*r),
                    t.s_next.to_string(),
                ])
                .map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` independent rollouts of `pi` in the nominal model. Trajectory `i`
/// draws from its own stream of `seed`, so the batch does not depend on the
/// order in which trajectories are generated.
pub fn sample_trajectories(mdp: &LowRankMdp, pi: &Policy, n: usize, seed: u64) -> Result<TrajectoryBatch, ApproxError> {
    pi.check_shape(mdp.horizon(), mdp.num_states(), mdp.num_actions())
        .map_err(|e| ApproxError::Input(e.to_string()))?;
    let hh = mdp.horizon();
    let mut trajectories = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream(seed, i as u64);
        let mut s = rng::categorical(&mut r, mdp.rho());
        let mut traj = Vec::with_capacity(hh);
        let mut rs = Vec::with_capacity(hh);
        for h in 0..hh {
            let a = rng::categorical(&mut r, pi.dist(h, s));
            let s_next = rng::categorical(&mut r, mdp.transition_row(h, s, a));
            traj.push(Transition { s, a, s_next });
            rs.push(mdp.reward(h, s, a));
            s = s_next;
        }
        trajectories.push(traj);
        rewards.push(rs);
    }
    Ok(TrajectoryBatch {
        trajectories,
        rewards,
        seed,
    })
}

/// `argmin_ω Σ_i (y_i − ⟨x_i, ω⟩)² + λ‖ω‖²` via the normal equations.
pub fn ridge_regression(features: &[Vec<f64>], targets: &[f64], lambda: f64) -> Result<Vec<f64>, ApproxError> {
    if !(lambda > 0.0) {
        return Err(ApproxError::Input(format!("ridge weight must be positive, got {lambda}")));
    }
    if features.len() != targets.len() {
        return Err(ApproxError::Input(format!(
            "{} feature rows but {} targets",
            features.len(),
            targets.len()
        )));
    }
    let d = match features.first() {
        Some(f) => f.len(),
        None => return Err(ApproxError::Input("no samples".into())),
    };
    let mut gram = DMatrix::<f64>::identity(d, d) * lambda;
    let mut rhs = DVector::<f64>::zeros(d);
    for (x, &y) in features.iter().zip(targets) {
        if x.len() != d {
            return Err(ApproxError::Input("feature rows of different lengths".into()));
        }
        for i in 0..d {
            rhs[i] += x[i] * y;
            for j in 0..d {
                gram[(i, j)] += x[i] * x[j];
            }
        }
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| ApproxError::Input("normal equations are not positive definite".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Ridge estimate of `ω_h` from the step-`h` transitions of `batch`, with
/// targets `r + V_{h+1}(s')`.
pub fn estimate_omega_lsq(
    batch: &TrajectoryBatch,
    mdp: &LowRankMdp,
    h: usize,
    v_next: &[f64],
    lambda: f64,
) -> Result<Vec<f64>, ApproxError> {
    if v_next.len() != mdp.num_states() {
        return Err(ApproxError::Input(format!("value vector has length {}", v_next.len())));
    }
    let mut xs = Vec::with_capacity(batch.len());
    let mut ys = Vec::with_capacity(batch.len());
    for (traj, rs) in batch.trajectories.iter().zip(&batch.rewards) {
        let t = traj.get(h).ok_or_else(|| ApproxError::Input(format!("step {h} beyond trajectory")))?;
        xs.push(mdp.phi(h, t.s, t.a).to_vec());
        ys.push(rs[h] + v_next[t.s_next]);
    }
    ridge_regression(&xs, &ys, lambda)
}

/// `(1/N) Σ_i φ_h(s^i_h, a^i_h)`.
pub fn mc_average_feature(batch: &TrajectoryBatch, mdp: &LowRankMdp, h: usize) -> Result<Vec<f64>, ApproxError> {
    if batch.is_empty() {
        return Err(ApproxError::Input("empty batch".into()));
    }
    let mut acc = vec![0.0; mdp.feature_dim()];
    for traj in &batch.trajectories {
        let t = traj.get(h).ok_or_else(|| ApproxError::Input(format!("step {h} beyond trajectory")))?;
        axpy(&mut acc, 1.0, mdp.phi(h, t.s, t.a));
    }
    let n = batch.len() as f64;
    acc.iter_mut().for_each(|x| *x /= n);
    Ok(acc)
}

/// Weighted feature vectors standing in for the occupancy at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSamples {
    pub features: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl FeatureSamples {
    /// Equal weights on every sampled `(s,a)` at step `h`.
    pub fn from_batch(batch: &TrajectoryBatch, mdp: &LowRankMdp, h: usize) -> Self {
        let features: Vec<Vec<f64>> = batch
            .trajectories
            .iter()
            .map(|t| mdp.phi(h, t[h].s, t[h].a).to_vec())
            .collect();
        let w = 1.0 / features.len().max(1) as f64;
        FeatureSamples {
            weights: vec![w; features.len()],
            features,
        }
    }

    /// Every `(s,a)` weighted by the exact occupancy `d_h(s,a)`.
    pub fn exact(mdp: &LowRankMdp, occ: &crate::dp::OccupancyMeasures, h: usize) -> Self {
        let (ss, aa) = (mdp.num_states(), mdp.num_actions());
        let mut features = Vec::new();
        let mut weights = Vec::new();
        for s in 0..ss {
            for a in 0..aa {
                let w = occ.get(h, s, a);
                if w > 0.0 {
                    features.push(mdp.phi(h, s, a).to_vec());
                    weights.push(w);
                }
            }
        }
        FeatureSamples { features, weights }
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.features.first().map_or(0, |f| f.len());
        let mut acc = vec![0.0; d];
        let tot: f64 = self.weights.iter().sum();
        for (f, &w) in self.features.iter().zip(&self.weights) {
            axpy(&mut acc, w / tot, f);
        }
        acc
    }
}

/// The penalised inner objective
/// `⟨ā+η, ω+ξ⟩ + λ_ξ(‖ξ‖² − R_ξ²) + λ_η(‖η‖² − R_η²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularised<'a> {
    pub abar: &'a [f64],
    pub omega: &'a [f64],
    pub r_xi: f64,
    pub r_eta: f64,
    pub lambda_xi: f64,
    pub lambda_eta: f64,
}

impl Regularised<'_> {
    pub fn value(&self, xi: &[f64], eta: &[f64]) -> f64 {
        dot(&add(self.abar, eta), &add(self.omega, xi))
            + self.lambda_xi * (dot(xi, xi) - self.r_xi * self.r_xi)
            + self.lambda_eta * (dot(eta, eta) - self.r_eta * self.r_eta)
    }

    /// `(∇_ξ, ∇_η) = (ā + η + 2λ_ξ ξ, ω + ξ + 2λ_η η)`.
    pub fn gradient(&self, xi: &[f64], eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let gx = (0..xi.len())
            .map(|i| self.abar[i] + eta[i] + 2.0 * self.lambda_xi * xi[i])
            .collect();
        let gy = (0..eta.len())
            .map(|i| self.omega[i] + xi[i] + 2.0 * self.lambda_eta * eta[i])
            .collect();
        (gx, gy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    /// Initial penalty weights.
    pub lambda_xi: f64,
    pub lambda_eta: f64,
    /// Learning rate at step `t` is `lr0/√t`.
    pub lr0: f64,
    pub steps: usize,
    pub minibatch: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lambda_xi: 1.0,
            lambda_eta: 1.0,
            lr0: 0.1,
            steps: 20_000,
            minibatch: 16,
            seed: 0x56d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SgdResult {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    /// `⟨ā+η, ω+ξ⟩` after projection onto the balls, with `ā` the weighted mean.
    pub value: f64,
    pub lambda_xi: f64,
    pub lambda_eta: f64,
}

/// Stochastic gradient descent on the penalised inner objective.
///
/// The penalty weights act as Lagrange multipliers. They are moved by
/// multiplicative dual ascent on the relative constraint violation, so the
/// iterates approach the constrained minimiser rather than the minimiser
/// for fixed weights. The weights stay in `{λ_ξ λ_η ≥ ¼(1+10⁻³)}`, where the
/// penalised objective is strongly convex. Each primal block is scaled by
/// its curvature `1/(2λ)`, which keeps the step stable however large the
/// weights grow. The returned point is the average over the second half of
/// the run, projected onto the balls. A zero radius pins its block to zero.
pub fn sgd_regularized_inner(
    samples: &FeatureSamples,
    omega: &[f64],
    r_xi: f64,
    r_eta: f64,
    cfg: &SgdConfig,
) -> Result<SgdResult, ApproxError> {
    if samples.features.is_empty() || samples.features.len() != samples.weights.len() {
        return Err(ApproxError::Input("need a nonempty weighted sample set".into()));
    }
    let d = omega.len();
    if samples.features.iter().any(|f| f.len() != d) {
        return Err(ApproxError::Input("feature and factor dimensions differ".into()));
    }
    if !(cfg.lambda_xi > 0.0 && cfg.lambda_eta > 0.0) {
        return Err(ApproxError::Input("penalty weights must be positive".into()));
    }
    if !(r_xi >= 0.0 && r_eta >= 0.0) {
        return Err(ApproxError::Input("radii must be nonnegative".into()));
    }
    let mut r = rng::stream(cfg.seed, 0);
    let total: f64 = samples.weights.iter().sum();
    let cdf: Vec<f64> = samples
        .weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect();
    let draw = |r: &mut rng::StreamRng| {
        let u: f64 = r.gen();
        cdf.partition_point(|&c| c < u).min(cdf.len() - 1)
    };

    let mut xi = vec![0.0; d];
    let mut eta = vec![0.0; d];
    let (mut lx, mut ly) = (cfg.lambda_xi, cfg.lambda_eta);
    let floor = 0.25 * (1.0 + 1e-3);
    let batch = cfg.minibatch.max(1);
    let burn_in = cfg.steps / 2;
    let mut phi_bar = vec![0.0; d];
    let (mut avg_xi, mut avg_eta) = (vec![0.0; d], vec![0.0; d]);
    let mut averaged = 0usize;
    // multiplicative update; clipping keeps it on the primal time scale
    let dual = |lam: f64, v: &[f64], radius: f64, lr: f64| {
        let rel = dot(v, v) / (radius * radius) - 1.0;
        lam * (lr * rel.clamp(-1.0, 1.0)).exp()
    };
    for t in 1..=cfg.steps {
        phi_bar.iter_mut().for_each(|x| *x = 0.0);
        for _ in 0..batch {
            axpy(&mut phi_bar, 1.0 / batch as f64, &samples.features[draw(&mut r)]);
        }
        let obj = Regularised {
            abar: &phi_bar,
            omega,
            r_xi,
            r_eta,
            lambda_xi: lx,
            lambda_eta: ly,
        };
        let (gx, gy) = obj.gradient(&xi, &eta);
        let lr = cfg.lr0 / (t as f64).sqrt();
        if r_xi > 0.0 {
            axpy(&mut xi, -lr / (2.0 * lx), &gx);
            lx = dual(lx, &xi, r_xi, lr);
        }
        if r_eta > 0.0 {
            axpy(&mut eta, -lr / (2.0 * ly), &gy);
            ly = dual(ly, &eta, r_eta, lr);
        }
        if lx * ly < floor {
            // rescale both weights onto the boundary of the convex region
            let c = (floor / (lx * ly)).sqrt();
            lx *= c;
            ly *= c;
        }
        let v = obj.value(&xi, &eta);
        if !v.is_finite() || !lx.is_finite() || !ly.is_finite() {
            return Err(ApproxError::Divergence { step: t, value: v });
        }
        if t > burn_in {
            axpy(&mut avg_xi, 1.0, &xi);
            axpy(&mut avg_eta, 1.0, &eta);
            averaged += 1;
        }
    }
    if averaged > 0 {
        xi = scale(&avg_xi, 1.0 / averaged as f64);
        eta = scale(&avg_eta, 1.0 / averaged as f64);
    }
    project_ball(&mut xi, r_xi);
    project_ball(&mut eta, r_eta);
    let abar = samples.mean();
    let value = dot(&add(&abar, &eta), &add(omega, &xi));
    Ok(SgdResult {
        xi,
        eta,
        value,
        lambda_xi: lx,
        lambda_eta: ly,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ridge_shrinks_to_zero() {
        let xs = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let w = ridge_regression(&xs, &[3.0, -2.0], 1e12).unwrap();
        assert!(w.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn ridge_exact_recovery() {
        let truth = [0.5, -1.5, 2.0];
        let xs: Vec<Vec<f64>> = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ];
        let ys: Vec<f64> = xs.iter().map(|x| dot(x, &truth)).collect();
        let w = ridge_regression(&xs, &ys, 1e-8).unwrap();
        for (a, b) in w.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(ridge_regression(&xs, &ys, 0.0).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let abar = [0.3, -0.1, 0.5];
        let omega = [1.0, 2.0, -0.5];
        let f = Regularised {
            abar: &abar,
            omega: &omega,
            r_xi: 0.4,
            r_eta: 0.2,
            lambda_xi: 1.0,
            lambda_eta: 0.7,
        };
        let xi = [0.1, 0.2, -0.3];
        let eta = [-0.05, 0.02, 0.1];
        let (gx, _) = f.gradient(&xi, &eta);
        let hstep = 1e-5;
        for i in 0..3 {
            let mut p = xi;
            let mut m = xi;
            p[i] += hstep;
            m[i] -= hstep;
            let fd = (f.value(&p, &eta) - f.value(&m, &eta)) / (2.0 * hstep);
            assert!((fd - gx[i]).abs() < 1e-8);
        }
    }
}
