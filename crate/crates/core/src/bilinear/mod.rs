//! The inner problem `min ⟨a+x, b+y⟩` over `‖x‖ ≤ R_x`, `‖y‖ ≤ R_y`.
//!
//! Three independent solvers are provided: a lifted semidefinite program
//! solved by a dual barrier method ([`sdp`]), alternating closed-form block
//! minimisation ([`alternating`]), and a structured brute-force search
//! ([`oracle`]) used as a test oracle.

pub mod alternating;
pub mod oracle;
pub mod qc2qp;
pub mod sdp;

use serde::Serialize;

use crate::vecops::{add, dot, norm, scale, unit};

pub use alternating::{solve_alternating, AlternatingSolver};
pub use oracle::{oracle_grid, GridOracle};
pub use qc2qp::{lift, to_qc2qp, to_sdp, Qc2qpInstance, SdpInstance};
pub use sdp::{recover_solution, solve_sdp, SdpSolution, SdpSolver};

/// Slack allowed on the ball constraints of returned solutions.
pub const FEAS_TOL: f64 = 1e-8;
/// Accepted gap between a returned value and the certified lower bound.
pub const CERT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BilinearBallProblem {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub r_x: f64,
    pub r_y: f64,
}

impl BilinearBallProblem {
    pub fn new(a: Vec<f64>, b: Vec<f64>, r_x: f64, r_y: f64) -> Result<Self, SolverError> {
        if a.len() != b.len() || a.is_empty() {
            return Err(SolverError::InvalidProblem(format!(
                "vector lengths {} and {} must match and be positive",
                a.len(),
                b.len()
            )));
        }
        if !(r_x >= 0.0 && r_y >= 0.0 && r_x.is_finite() && r_y.is_finite()) {
            return Err(SolverError::InvalidProblem(format!(
                "radii must be finite and nonnegative, got ({r_x}, {r_y})"
            )));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidProblem("non-finite vector entry".into()));
        }
        Ok(BilinearBallProblem { a, b, r_x, r_y })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn objective(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(&add(&self.a, x), &add(&self.b, y))
    }

    pub fn is_feasible(&self, x: &[f64], y: &[f64], tol: f64) -> bool {
        norm(x) <= self.r_x + tol && norm(y) <= self.r_y + tol
    }

    /// Same problem scaled by `t`: the optimal value scales by `t²`.
    pub fn scaled(&self, t: f64) -> Self {
        BilinearBallProblem {
            a: scale(&self.a, t),
            b: scale(&self.b, t),
            r_x: self.r_x * t,
            r_y: self.r_y * t,
        }
    }

    /// Exact solution when one of the radii is zero (the problem is then linear).
    pub fn closed_form(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        if self.r_y == 0.0 {
            let x = scale(&unit(&self.b), -self.r_x);
            return Some((x, vec![0.0; d]));
        }
        if self.r_x == 0.0 {
            let y = scale(&unit(&self.a), -self.r_y);
            return Some((vec![0.0; d], y));
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sdp,
    Alternating,
    Oracle,
    ClosedForm,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sdp" => Ok(Method::Sdp),
            "alt" | "alternating" => Ok(Method::Alternating),
            "oracle" => Ok(Method::Oracle),
            _ => Err(format!("unknown method `{s}` (expected sdp, alt or oracle)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Sdp => "sdp",
            Method::Alternating => "alternating",
            Method::Oracle => "oracle",
            Method::ClosedForm => "closed-form",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub x_star: Vec<f64>,
    pub y_star: Vec<f64>,
    pub value: f64,
    /// A value no larger than the optimum. `-inf` when the method certifies nothing.
    pub certified_lower_bound: f64,
    pub method: Method,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e}, best value {best_value})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best_value: f64,
        best: Option<(Vec<f64>, Vec<f64>)>,
    },
    #[error("recovered point violates the balls by {violation:e}; relaxation solution is not rank one")]
    RankRecovery { violation: f64 },
}

/// Anything that can minimise a [`BilinearBallProblem`].
pub trait InnerSolver: Sync {
    fn solve(&self, p: &BilinearBallProblem) -> Result<SolveReport, SolverError>;
}

/// Solver for the named method with default settings.
pub fn solver_for(method: Method) -> Box<dyn InnerSolver> {
    match method {
        Method::Sdp | Method::ClosedForm => Box::new(SdpSolver::default()),
        Method::Alternating => Box::new(AlternatingSolver::default()),
        Method::Oracle => Box::new(GridOracle::default()),
    }
}

/// Solves with the named method using default settings.
pub fn solve(p: &BilinearBallProblem, method: Method) -> Result<SolveReport, SolverError> {
    solver_for(method).solve(p)
}

pub(crate) fn closed_form_report(p: &BilinearBallProblem) -> Option<SolveReport> {
    p.closed_form().map(|(x, y)| {
        let value = p.objective(&x, &y);
        SolveReport {
            x_star: x,
            y_star: y,
            value,
            certified_lower_bound: value,
            method: Method::ClosedForm,
            iterations: 0,
        }
    })
}
