//! Random valid models and policies, for property tests and benchmarks.
//!
//! Models are latent-mixture MDPs: `φ_h(s,a)` is a probability vector over
//! `d` latent components, `μ_h(·)_i` is the next-state distribution of
//! component `i`, and `ν_h ∈ [0,1]^d`. Every such model satisfies the
//! validation checks of [`crate::mdp`].

use rand::Rng;

use crate::mdp::LowRankMdp;
use crate::policy::Policy;
use crate::rng::StreamRng;

/// Shape of a random model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    pub features: usize,
}

impl Dims {
    /// Uniform draw with every dimension in `1..=max` (`H`, `S`, `A`) and `d ∈ 1..=max_d`.
    pub fn draw(r: &mut StreamRng, max_h: usize, max_sa: usize, max_d: usize) -> Self {
        Dims {
            horizon: r.gen_range(1..=max_h),
            states: r.gen_range(1..=max_sa),
            actions: r.gen_range(1..=max_sa),
            features: r.gen_range(1..=max_d),
        }
    }
}

/// Random point of the simplex; `sparsity` is the chance each coordinate is
/// forced to zero (at least one coordinate stays positive).
pub fn simplex(r: &mut StreamRng, n: usize, sparsity: f64) -> Vec<f64> {
    let keep = r.gen_range(0..n);
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            if i != keep && r.gen::<f64>() < sparsity {
                0.0
            } else {
                -(r.gen::<f64>().max(1e-300)).ln()
            }
        })
        .collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

pub fn random_mdp(r: &mut StreamRng, dims: Dims) -> LowRankMdp {
    let Dims {
        horizon: hh,
        states: ss,
        actions: aa,
        features: d,
    } = dims;
    let mut phi = Vec::with_capacity(hh * ss * aa * d);
    let mut mu = vec![0.0; hh * ss * d];
    let mut nu = Vec::with_capacity(hh * d);
    for h in 0..hh {
        for _ in 0..ss * aa {
            phi.extend(simplex(r, d, 0.5));
        }
        for i in 0..d {
            let q = simplex(r, ss, 0.5);
            for (sn, p) in q.into_iter().enumerate() {
                mu[(h * ss + sn) * d + i] = p;
            }
        }
        nu.extend((0..d).map(|_| r.gen::<f64>()));
    }
    let rho = simplex(r, ss, 0.3);
    LowRankMdp::new(hh, ss, aa, d, phi, mu, nu, rho).expect("shapes are consistent")
}

/// Random model meeting `‖Σ_s V(s) μ_h(s)‖ ≤ √d` for every `V ∈ [0,H]^S`.
///
/// Features are `H·p` with `p` a spread-out point of the simplex and each
/// `μ_h(·)_i` a distribution divided by `H`, so the kernel is unchanged in
/// form while `‖Σ_s μ_h(s)‖ = √d/H`. Needs `d ≥ H²`, so that `‖H·p‖ ≤ 1` is
/// reachable.
pub fn random_mdp_unscaled_bound(r: &mut StreamRng, dims: Dims) -> Option<LowRankMdp> {
    let Dims {
        horizon: hh,
        states: ss,
        actions: aa,
        features: d,
    } = dims;
    if d < hh * hh {
        return None;
    }
    let t = hh as f64;
    let uniform = 1.0 / d as f64;
    let mut phi = Vec::with_capacity(hh * ss * aa * d);
    let mut mu = vec![0.0; hh * ss * d];
    let mut nu = Vec::with_capacity(hh * d);
    for h in 0..hh {
        for _ in 0..ss * aa {
            let mut p = simplex(r, d, 0.3);
            // pull towards uniform until `‖t·p‖ ≤ 1`
            while t * crate::vecops::norm(&p) > 1.0 {
                p.iter_mut().for_each(|x| *x = 0.5 * (*x + uniform));
            }
            phi.extend(p.iter().map(|x| t * x));
        }
        for i in 0..d {
            let q = simplex(r, ss, 0.5);
            for (sn, p) in q.into_iter().enumerate() {
                mu[(h * ss + sn) * d + i] = p / t;
            }
        }
        nu.extend((0..d).map(|_| r.gen::<f64>() / t));
    }
    let rho = simplex(r, ss, 0.3);
    Some(LowRankMdp::new(hh, ss, aa, d, phi, mu, nu, rho).expect("shapes are consistent"))
}

/// Random stochastic policy; some rows are made deterministic.
pub fn random_policy(r: &mut StreamRng, horizon: usize, states: usize, actions: usize) -> Policy {
    let mut flat = Vec::with_capacity(horizon * states * actions);
    for _ in 0..horizon * states {
        let sparsity = if r.gen::<f64>() < 0.2 { 1.0 } else { 0.0 };
        flat.extend(simplex(r, actions, sparsity));
    }
    Policy::from_flat(horizon, states, actions, flat).expect("rows are distributions")
}

/// Random value vector in `[0, top]^n`.
pub fn random_values(r: &mut StreamRng, n: usize, top: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen::<f64>() * top).collect()
}
