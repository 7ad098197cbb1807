//! Multi-start block-coordinate descent.
//!
//! With `y` fixed the problem is linear in `x` and minimised by
//! `x = −R_x·unit(b+y)`; symmetrically for `y`. Each sweep never increases
//! the objective, so every run ends at a stationary pair.

use super::{
    closed_form_report, sdp, BilinearBallProblem, InnerSolver, Method, SolveReport, SolverError,
};
use crate::rng;
use crate::vecops::{add, norm, scale, unit};

#[derive(Debug, Clone)]
pub struct AlternatingSolver {
    pub starts: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Also run the SDP to fill `certified_lower_bound`.
    pub certify: bool,
}

impl Default for AlternatingSolver {
    fn default() -> Self {
        AlternatingSolver {
            starts: 8,
            tol: 1e-15,
            max_iters: 100_000,
            seed: 0xa17e,
            certify: false,
        }
    }
}

impl InnerSolver for AlternatingSolver {
    fn solve(&self, p: &BilinearBallProblem) -> Result<SolveReport, SolverError> {
        let mut rep = run(p, self.starts, self.tol, self.max_iters, self.seed);
        if self.certify {
            let q = super::to_qc2qp(p);
            let sol = sdp::solve_sdp(&super::to_sdp(&q), sdp::DEFAULT_TOL)?;
            rep.certified_lower_bound = sol.lower_bound;
        }
        Ok(rep)
    }
}

/// Best stationary pair over `starts` starting points.
pub fn solve_alternating(p: &BilinearBallProblem, starts: usize, tol: f64) -> SolveReport {
    let d = AlternatingSolver::default();
    run(p, starts, tol, d.max_iters, d.seed)
}

fn update_x(p: &BilinearBallProblem, x: &mut Vec<f64>, y: &[f64]) {
    let g = add(&p.b, y);
    if norm(&g) > 0.0 {
        *x = scale(&unit(&g), -p.r_x);
    }
}

fn update_y(p: &BilinearBallProblem, x: &[f64], y: &mut Vec<f64>) {
    let g = add(&p.a, x);
    if norm(&g) > 0.0 {
        *y = scale(&unit(&g), -p.r_y);
    }
}

/// Descends from `(x, y)`, starting with the `y` block when `y_first`.
pub(crate) fn descend(
    p: &BilinearBallProblem,
    mut x: Vec<f64>,
    mut y: Vec<f64>,
    y_first: bool,
    tol: f64,
    max_iters: usize,
) -> (Vec<f64>, Vec<f64>, f64, usize) {
    if y_first {
        update_y(p, &x, &mut y);
    }
    let mut f = p.objective(&x, &y);
    let mut it = 0;
    while it < max_iters {
        it += 1;
        update_x(p, &mut x, &y);
        update_y(p, &x, &mut y);
        let f_new = p.objective(&x, &y);
        let dec = f - f_new;
        f = f_new.min(f);
        if dec <= tol * (1.0 + f.abs()) {
            break;
        }
    }
    let f = p.objective(&x, &y);
    (x, y, f, it)
}

fn run(p: &BilinearBallProblem, starts: usize, tol: f64, max_iters: usize, seed: u64) -> SolveReport {
    if let Some(mut r) = closed_form_report(p) {
        r.method = Method::Alternating;
        r.certified_lower_bound = f64::NEG_INFINITY;
        return r;
    }
    let d = p.dim();
    let starts = starts.max(1);
    let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    let mut total = 0;
    let mut consider = |x: Vec<f64>, y: Vec<f64>, f: f64, it: usize, best: &mut Option<(Vec<f64>, Vec<f64>, f64)>| {
        total += it;
        if best.as_ref().is_none_or(|b| f < b.2) {
            *best = Some((x, y, f));
        }
    };

    // (0, 0), y block first
    let (x, y, f, it) = descend(p, vec![0.0; d], vec![0.0; d], true, tol, max_iters);
    consider(x, y, f, it, &mut best);
    if starts >= 2 {
        // x = −R_x·unit(b), then the induced y
        let x0 = scale(&unit(&p.b), -p.r_x);
        let (x, y, f, it) = descend(p, x0, vec![0.0; d], true, tol, max_iters);
        consider(x, y, f, it, &mut best);
    }
    let mut r = rng::stream(seed, d as u64);
    for _ in 2..starts {
        let x0 = scale(&rng::unit_sphere(&mut r, d), p.r_x);
        let (x, y, f, it) = descend(p, x0, vec![0.0; d], true, tol, max_iters);
        consider(x, y, f, it, &mut best);
    }
    let (x, y, f) = best.expect("at least one start");
    SolveReport {
        x_star: x,
        y_star: y,
        value: f,
        certified_lower_bound: f64::NEG_INFINITY,
        method: Method::Alternating,
        iterations: total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_radii_give_inner_product() {
        let p = BilinearBallProblem::new(vec![1.0, 2.0], vec![3.0, -1.0], 0.0, 0.0).unwrap();
        assert_eq!(solve_alternating(&p, 8, 1e-12).value, 1.0);
    }

    #[test]
    fn zero_vectors_give_antiparallel_pair() {
        let p = BilinearBallProblem::new(vec![0.0; 4], vec![0.0; 4], 1.5, 2.0).unwrap();
        let r = solve_alternating(&p, 8, 1e-14);
        assert!((r.value + 3.0).abs() < 1e-12);
        assert!(p.is_feasible(&r.x_star, &r.y_star, 1e-12));
    }

    #[test]
    fn single_start_is_deterministic() {
        let p = BilinearBallProblem::new(vec![0.3, -0.2, 1.0], vec![-1.0, 0.4, 0.1], 0.7, 0.9).unwrap();
        let a = solve_alternating(&p, 8, 1e-14);
        let b = solve_alternating(&p, 8, 1e-14);
        assert_eq!(a, b);
    }
}
