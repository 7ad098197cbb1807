//! Non-stationary stochastic policies `π_h(a|s)`.

use serde::{Deserialize, Serialize};

use crate::mdp::PROB_TOL;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("policy shape {found:?} does not match model (H,S,A) = {expected:?}")]
    Shape {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("pi[h={h}][s={s}] is not a probability vector (sum {sum}, min {min})")]
    NotSimplex { h: usize, s: usize, sum: f64, min: f64 },
    #[error("action {action} out of range for {num_actions} actions")]
    ActionOutOfRange { action: usize, num_actions: usize },
    #[error("malformed policy JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Policy {
            horizon,
            num_states,
            num_actions,
            probs: vec![p; horizon * num_states * num_actions],
        }
    }

    /// Deterministic policy from `actions[h][s]`.
    pub fn deterministic(num_actions: usize, actions: &[Vec<usize>]) -> Result<Self, PolicyError> {
        let horizon = actions.len();
        let num_states = actions.first().map_or(0, |r| r.len());
        let mut probs = vec![0.0; horizon * num_states * num_actions];
        for (h, row) in actions.iter().enumerate() {
            if row.len() != num_states {
                return Err(PolicyError::Shape {
                    expected: (horizon, num_states, num_actions),
                    found: (horizon, row.len(), num_actions),
                });
            }
            for (s, &a) in row.iter().enumerate() {
                if a >= num_actions {
                    return Err(PolicyError::ActionOutOfRange { action: a, num_actions });
                }
                probs[(h * num_states + s) * num_actions + a] = 1.0;
            }
        }
        Ok(Policy {
            horizon,
            num_states,
            num_actions,
            probs,
        })
    }

    /// Policy from a flat `[h][s][a]` table; checks simplex membership.
    pub fn from_flat(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        probs: Vec<f64>,
    ) -> Result<Self, PolicyError> {
        if probs.len() != horizon * num_states * num_actions {
            return Err(PolicyError::Shape {
                expected: (horizon, num_states, num_actions),
                found: (probs.len(), 1, 1),
            });
        }
        let p = Policy {
            horizon,
            num_states,
            num_actions,
            probs,
        };
        p.check_simplex()?;
        Ok(p)
    }

    pub fn from_nested(pi: &[Vec<Vec<f64>>]) -> Result<Self, PolicyError> {
        let horizon = pi.len();
        let num_states = pi.first().map_or(0, |r| r.len());
        let num_actions = pi.first().and_then(|r| r.first()).map_or(0, |r| r.len());
        let mut probs = Vec::with_capacity(horizon * num_states * num_actions);
        for row in pi {
            for dist in row {
                if row.len() != num_states || dist.len() != num_actions {
                    return Err(PolicyError::Shape {
                        expected: (horizon, num_states, num_actions),
                        found: (horizon, row.len(), dist.len()),
                    });
                }
                probs.extend_from_slice(dist);
            }
        }
        Self::from_flat(horizon, num_states, num_actions, probs)
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.horizon)
            .map(|h| (0..self.num_states).map(|s| self.dist(h, s).to_vec()).collect())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PolicyFile { pi: self.to_nested() })
            .expect("plain data serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let f: PolicyFile = serde_json::from_str(text).map_err(|e| PolicyError::Json(e.to_string()))?;
        Self::from_nested(&f.pi)
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

    pub fn dist(&self, h: usize, s: usize) -> &[f64] {
        let a = self.num_actions;
        let i = (h * self.num_states + s) * a;
        &self.probs[i..i + a]
    }

    pub(crate) fn dist_mut(&mut self, h: usize, s: usize) -> &mut [f64] {
        let a = self.num_actions;
        let i = (h * self.num_states + s) * a;
        &mut self.probs[i..i + a]
    }

    pub fn flat(&self) -> &[f64] {
        &self.probs
    }

    pub fn check_shape(&self, horizon: usize, num_states: usize, num_actions: usize) -> Result<(), PolicyError> {
        if (self.horizon, self.num_states, self.num_actions) != (horizon, num_states, num_actions) {
            return Err(PolicyError::Shape {
                expected: (horizon, num_states, num_actions),
                found: (self.horizon, self.num_states, self.num_actions),
            });
        }
        Ok(())
    }

    pub fn check_simplex(&self) -> Result<(), PolicyError> {
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                let d = self.dist(h, s);
                let sum: f64 = d.iter().sum();
                let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
                if min < 0.0 || (sum - 1.0).abs() > PROB_TOL || !sum.is_finite() {
                    return Err(PolicyError::NotSimplex { h, s, sum, min });
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    pi: Vec<Vec<Vec<f64>>>,
}
