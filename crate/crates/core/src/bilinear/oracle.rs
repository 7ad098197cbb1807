//! Brute-force reference solver.
//!
//! Write `P = span{a, b}`. For a fixed `x` the best `y` is `−R_y·unit(a+x)`,
//! and the component of `x` orthogonal to `P` only enters through
//! `‖a + x‖`, so it should use all the radius left over by the in-plane part.
//! That leaves a function of the in-plane coordinates `x∥` alone:
//!
//! `f(x∥) = ⟨a+x∥, b⟩ − R_y·√(‖a+x∥‖² + [d > dim P]·(R_x² − ‖x∥‖²))`
//!
//! which is minimised by exhaustive search on a grid over the disc
//! `‖x∥‖ ≤ R_x`, followed by repeated zoomed grids around the best cells.

use super::{closed_form_report, BilinearBallProblem, InnerSolver, Method, SolveReport, SolverError};
use crate::vecops::{add, axpy, dot, norm, scale, unit};

#[derive(Debug, Clone)]
pub struct GridOracle {
    pub resolution: usize,
    /// Zoom rounds around each retained candidate.
    pub refinements: usize,
    /// Number of coarse-grid cells that are refined.
    pub candidates: usize,
}

impl Default for GridOracle {
    fn default() -> Self {
        GridOracle {
            resolution: 256,
            refinements: 14,
            candidates: 8,
        }
    }
}

impl InnerSolver for GridOracle {
    fn solve(&self, p: &BilinearBallProblem) -> Result<SolveReport, SolverError> {
        Ok(search(p, self))
    }
}

/// Grid search with `resolution` points per in-plane axis.
pub fn oracle_grid(p: &BilinearBallProblem, resolution: usize) -> SolveReport {
    search(
        p,
        &GridOracle {
            resolution,
            ..GridOracle::default()
        },
    )
}

/// Orthonormal basis of `span(vs)` by Gram-Schmidt.
fn span_basis(vs: &[&[f64]]) -> Vec<Vec<f64>> {
    let scale_ref = vs.iter().map(|v| norm(v)).fold(1.0, f64::max);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let mut w = v.to_vec();
        for _ in 0..2 {
            for u in &basis {
                let c = dot(&w, u);
                axpy(&mut w, -c, u);
            }
        }
        if norm(&w) > 1e-12 * scale_ref {
            basis.push(unit(&w));
        }
    }
    basis
}

/// A unit vector orthogonal to every vector in `basis`.
fn orthogonal_unit(basis: &[Vec<f64>], dim: usize) -> Option<Vec<f64>> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for i in 0..dim {
        let mut w = vec![0.0; dim];
        w[i] = 1.0;
        for _ in 0..2 {
            for u in basis {
                let c = dot(&w, u);
                axpy(&mut w, -c, u);
            }
        }
        let n = norm(&w);
        if n > best_norm {
            best_norm = n;
            best = Some(w);
        }
    }
    best.filter(|_| best_norm > 1e-8).map(|w| unit(&w))
}

struct Reduced {
    a: [f64; 2],
    b: [f64; 2],
    rank: usize,
    has_complement: bool,
    r_x: f64,
    r_y: f64,
}

impl Reduced {
    fn eval(&self, xc: [f64; 2]) -> f64 {
        let ax = [self.a[0] + xc[0], self.a[1] + xc[1]];
        let lin = ax[0] * self.b[0] + ax[1] * self.b[1];
        let mut sq = ax[0] * ax[0] + ax[1] * ax[1];
        if self.has_complement {
            sq += (self.r_x * self.r_x - xc[0] * xc[0] - xc[1] * xc[1]).max(0.0);
        }
        lin - self.r_y * sq.sqrt()
    }

    /// Grid point clipped radially into the disc.
    fn clip(&self, mut xc: [f64; 2]) -> [f64; 2] {
        if self.rank < 2 {
            xc[1] = 0.0;
        }
        if self.rank < 1 {
            xc[0] = 0.0;
        }
        let n = (xc[0] * xc[0] + xc[1] * xc[1]).sqrt();
        if n > self.r_x && n > 0.0 {
            let t = self.r_x / n;
            xc = [xc[0] * t, xc[1] * t];
        }
        xc
    }

    /// Grid of `res` points per active axis over `center ± half`.
    fn scan(&self, center: [f64; 2], half: f64, res: usize, keep: usize) -> (Vec<([f64; 2], f64)>, usize) {
        let axis = |i: usize| {
            if res == 1 {
                0.0
            } else {
                -half + 2.0 * half * i as f64 / (res - 1) as f64
            }
        };
        let n0 = if self.rank >= 1 { res } else { 1 };
        let n1 = if self.rank >= 2 { res } else { 1 };
        let mut top: Vec<([f64; 2], f64)> = Vec::with_capacity(keep + 1);
        let mut evals = 0;
        for i in 0..n0 {
            for j in 0..n1 {
                let u = if self.rank >= 1 { center[0] + axis(i) } else { 0.0 };
                let v = if self.rank >= 2 { center[1] + axis(j) } else { 0.0 };
                let xc = self.clip([u, v]);
                let f = self.eval(xc);
                evals += 1;
                if top.len() < keep || f < top[top.len() - 1].1 {
                    let pos = top.partition_point(|e| e.1 <= f);
                    top.insert(pos, (xc, f));
                    top.truncate(keep);
                }
            }
        }
        (top, evals)
    }
}

fn search(p: &BilinearBallProblem, cfg: &GridOracle) -> SolveReport {
    if let Some(mut r) = closed_form_report(p) {
        r.method = Method::Oracle;
        r.certified_lower_bound = f64::NEG_INFINITY;
        return r;
    }
    let d = p.dim();
    let basis = span_basis(&[&p.a, &p.b]);
    let coords = |v: &[f64]| {
        let mut c = [0.0; 2];
        for (i, u) in basis.iter().enumerate() {
            c[i] = dot(v, u);
        }
        c
    };
    let red = Reduced {
        a: coords(&p.a),
        b: coords(&p.b),
        rank: basis.len(),
        has_complement: basis.len() < d,
        r_x: p.r_x,
        r_y: p.r_y,
    };

    let res = cfg.resolution.max(2);
    let (coarse, mut evals) = red.scan([0.0, 0.0], p.r_x, res, cfg.candidates.max(1));
    let mut best = coarse[0];
    for (start, _) in &coarse {
        let mut center = *start;
        let mut half = 2.0 * 2.0 * p.r_x / (res - 1) as f64;
        let mut local = (center, red.eval(center));
        for _ in 0..cfg.refinements {
            let (top, e) = red.scan(center, half, 17, 1);
            evals += e;
            if top[0].1 <= local.1 {
                local = top[0];
            }
            center = local.0;
            half /= 4.0;
        }
        if local.1 < best.1 {
            best = local;
        }
    }

    let xc = best.0;
    let mut x = vec![0.0; d];
    for (i, u) in basis.iter().enumerate() {
        axpy(&mut x, xc[i], u);
    }
    if red.has_complement {
        if let Some(w) = orthogonal_unit(&basis, d) {
            let t = (p.r_x * p.r_x - xc[0] * xc[0] - xc[1] * xc[1]).max(0.0).sqrt();
            axpy(&mut x, t, &w);
        }
    }
    let y = scale(&unit(&add(&p.a, &x)), -p.r_y);
    SolveReport {
        value: p.objective(&x, &y),
        x_star: x,
        y_star: y,
        certified_lower_bound: f64::NEG_INFINITY,
        method: Method::Oracle,
        iterations: evals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_vectors_are_exact() {
        let p = BilinearBallProblem::new(vec![0.0; 3], vec![0.0; 3], 2.0, 0.5).unwrap();
        let r = oracle_grid(&p, 32);
        assert_eq!(r.value, -1.0);
    }

    #[test]
    fn linear_case_matches_closed_form() {
        let p = BilinearBallProblem::new(vec![1.0, -2.0], vec![0.5, 0.5], 1.0, 0.0).unwrap();
        let r = oracle_grid(&p, 64);
        let want = -0.5 - 1.0 * (0.5f64).sqrt();
        assert!((r.value - want).abs() < 1e-9);
    }

    #[test]
    fn full_rank_plane_without_complement() {
        // d = 2 with independent a, b: no orthogonal direction is available.
        let p = BilinearBallProblem::new(vec![1.0, 0.0], vec![0.0, 1.0], 1.0, 1.0).unwrap();
        let r = oracle_grid(&p, 64);
        assert!(p.is_feasible(&r.x_star, &r.y_star, 1e-12));
        // Direct dense scan of both discs as a sanity bound.
        let mut brute = f64::INFINITY;
        let n = 200;
        for i in 0..n {
            let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let x = [t.cos(), t.sin()];
            let ax = [1.0 + x[0], x[1]];
            let y = scale(&unit(&ax), -1.0);
            brute = brute.min(p.objective(&x, &y));
        }
        assert!(r.value <= brute + 1e-12);
    }
}
