//! Semidefinite relaxation solved through its dual.
//!
//! The dual of `min tr(CX)` s.t. `tr(C_x X) ≤ 0`, `tr(C_y X) ≤ 0`,
//! `tr(C_0 X) = 1`, `X ⪰ 0` is
//!
//! `max λ` s.t. `S(α,β,λ) = C + αC_x + βC_y − λC_0 ⪰ 0`, `α, β ≥ 0`,
//!
//! which has three scalar unknowns. We follow its log-barrier central path
//! `max λ + μ(log det S + log α + log β)` with damped Newton steps, dividing
//! `μ` by 10 after each centring. On the central path `X = μS⁻¹` is primal
//! feasible and the duality gap is exactly `(n+2)μ`.
//!
//! A zero radius forces the matching block of `X` to vanish. That block is
//! removed before solving, since the reduced problem keeps a strictly
//! feasible interior.

use nalgebra::{Cholesky, DMatrix, Dyn, Matrix3, Vector3};

use super::alternating::descend;
use super::{
    closed_form_report, to_qc2qp, to_sdp, BilinearBallProblem, InnerSolver, Method, SdpInstance,
    SolveReport, SolverError, CERT_TOL,
};
use crate::vecops::norm;

pub const DEFAULT_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 4000;
const CENTRED: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// Primal matrix, normalised so that `X[n-1][n-1] = 1`.
    pub x: DMatrix<f64>,
    /// `tr(C X)`.
    pub value: f64,
    /// Dual objective; never above the relaxation optimum.
    pub lower_bound: f64,
    /// Dual multipliers of the x- and y-ball constraints (`None` when that
    /// block was eliminated because its radius is zero).
    pub multipliers: (Option<f64>, Option<f64>),
    pub iterations: usize,
}

struct Centred {
    x: DMatrix<f64>,
    lambda: f64,
    t: Vec<f64>,
    iterations: usize,
}

fn slack(c: &DMatrix<f64>, gs: &[DMatrix<f64>], t: &[f64], lambda: f64) -> DMatrix<f64> {
    let mut s = c.clone();
    for (g, &tk) in gs.iter().zip(t) {
        s += g * tk;
    }
    let last = s.nrows() - 1;
    s[(last, last)] -= lambda;
    s
}

fn barrier_value(chol: &Cholesky<f64, Dyn>, t: &[f64], lambda: f64, mu: f64) -> f64 {
    let l = chol.l_dirty();
    let logdet: f64 = (0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum();
    lambda + mu * (logdet + t.iter().map(|x| x.ln()).sum::<f64>())
}

/// Dual barrier path for `C` with inequality matrices `gs` (at most two).
fn follow_path(c: &DMatrix<f64>, gs: &[DMatrix<f64>], tol: f64) -> Result<Centred, SolverError> {
    let m = c.nrows();
    let last = m - 1;
    let k = gs.len();
    let scale = 1.0 + c.norm();

    // Strictly feasible start: grow the multipliers until the leading block is
    // positive definite, then choose λ to leave a Schur complement of `scale`.
    let mut t = vec![1.0; k];
    let mut lambda = 0.0;
    for _ in 0..80 {
        let s = slack(c, gs, &t, 0.0);
        let lead = s.view((0, 0), (last, last)).into_owned();
        if let Some(ch) = Cholesky::new(lead) {
            let col = s.view((0, last), (last, 1)).into_owned();
            let w = ch.solve(&col);
            lambda = s[(last, last)] - col.dot(&w) - scale;
            break;
        }
        for tk in t.iter_mut() {
            *tk *= 2.0;
        }
    }
    let mut mu = scale;
    let mut iterations = 0;

    loop {
        // Centre for the current μ.
        let mut inner = 0;
        loop {
            let s = slack(c, gs, &t, lambda);
            let chol = Cholesky::new(s).ok_or_else(|| SolverError::NonConvergence {
                iterations,
                residual: f64::NAN,
                best_value: lambda,
                best: None,
            })?;
            let sinv = chol.inverse();
            let ws: Vec<DMatrix<f64>> = gs.iter().map(|g| &sinv * g).collect();
            let n_var = k + 1;
            let mut grad = Vector3::zeros();
            let mut hess = Matrix3::zeros();
            for i in 0..k {
                grad[i] = mu * (ws[i].trace() + 1.0 / t[i]);
                for j in 0..=i {
                    let tr = ws[i].component_mul(&ws[j].transpose()).sum();
                    hess[(i, j)] = -mu * tr;
                    hess[(j, i)] = hess[(i, j)];
                }
                hess[(i, i)] -= mu / (t[i] * t[i]);
                // ∂²/∂t_i∂λ = μ (S⁻¹ G_i S⁻¹)_{nn}
                let cross: f64 = (0..m).map(|j| ws[i][(last, j)] * sinv[(j, last)]).sum();
                hess[(i, k)] = mu * cross;
                hess[(k, i)] = hess[(i, k)];
            }
            grad[k] = 1.0 - mu * sinv[(last, last)];
            hess[(k, k)] = -mu * sinv[(last, last)] * sinv[(last, last)];

            let neg_h = -hess.view((0, 0), (n_var, n_var)).into_owned();
            let g = grad.rows(0, n_var).into_owned();
            let step = match Cholesky::new(neg_h.clone()) {
                Some(ch) => ch.solve(&g),
                None => neg_h.lu().solve(&g).unwrap_or_else(|| g.clone()),
            };
            let decrement = g.dot(&step);
            iterations += 1;
            inner += 1;
            // The second test stops once Newton can no longer move the barrier
            // value above rounding level.
            if decrement / mu < CENTRED || decrement < f64::EPSILON * (1.0 + lambda.abs()) || inner > 200 {
                if iterations > MAX_NEWTON {
                    return Err(SolverError::NonConvergence {
                        iterations,
                        residual: decrement,
                        best_value: lambda,
                        best: None,
                    });
                }
                // centred: report if the gap is small enough
                let gap = (m + k) as f64 * mu;
                if gap <= tol * (1.0 + lambda.abs()) {
                    let mut x = sinv * mu;
                    let corner = x[(last, last)];
                    x /= corner;
                    return Ok(Centred {
                        x,
                        lambda,
                        t,
                        iterations,
                    });
                }
                break;
            }

            // Backtracking line search keeping S ≻ 0 and t > 0.
            let f0 = barrier_value(&chol, &t, lambda, mu);
            // Inside the quadratic region the full step is safe; the Armijo
            // test there only compares rounding noise.
            let near = decrement / mu < 0.1;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let t_new: Vec<f64> = (0..k).map(|i| t[i] + alpha * step[i]).collect();
                let l_new = lambda + alpha * step[k];
                if t_new.iter().all(|&x| x > 0.0) {
                    if let Some(ch) = Cholesky::new(slack(c, gs, &t_new, l_new)) {
                        let f1 = barrier_value(&ch, &t_new, l_new, mu);
                        if near || f1 >= f0 + 0.25 * alpha * decrement {
                            t = t_new;
                            lambda = l_new;
                            accepted = true;
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // No ascent possible at working precision: treat as centred.
                let gap = (m + k) as f64 * mu;
                if gap <= tol.sqrt() * (1.0 + lambda.abs()) {
                    let mut x = sinv * mu;
                    let corner = x[(last, last)];
                    x /= corner;
                    return Ok(Centred {
                        x,
                        lambda,
                        t,
                        iterations,
                    });
                }
                return Err(SolverError::NonConvergence {
                    iterations,
                    residual: decrement,
                    best_value: lambda,
                    best: None,
                });
            }
        }
        mu /= 10.0;
    }
}

fn select(mat: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| mat[(idx[i], idx[j])])
}

/// Solves the lifted program to duality gap `tol` (relative to `1 + |λ|`).
pub fn solve_sdp(s: &SdpInstance, tol: f64) -> Result<SdpSolution, SolverError> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(SolverError::InvalidProblem(format!("tolerance must be positive, got {tol}")));
    }
    let n = s.size();
    let d = s.dim();
    let keep_x = s.r_x_sq() > 0.0;
    let keep_y = s.r_y_sq() > 0.0;
    let mut idx: Vec<usize> = Vec::with_capacity(n);
    if keep_x {
        idx.extend(0..d);
    }
    if keep_y {
        idx.extend(d..2 * d);
    }
    idx.push(n - 1);

    let mut x_full = DMatrix::zeros(n, n);
    if idx.len() == 1 {
        x_full[(n - 1, n - 1)] = 1.0;
        let v = s.c[(n - 1, n - 1)];
        return Ok(SdpSolution {
            x: x_full,
            value: v,
            lower_bound: v,
            multipliers: (None, None),
            iterations: 0,
        });
    }

    let c = select(&s.c, &idx);
    let mut gs = Vec::new();
    if keep_x {
        gs.push(select(&s.c_x, &idx));
    }
    if keep_y {
        gs.push(select(&s.c_y, &idx));
    }
    let centred = follow_path(&c, &gs, tol)?;
    for (i, &ri) in idx.iter().enumerate() {
        for (j, &rj) in idx.iter().enumerate() {
            x_full[(ri, rj)] = centred.x[(i, j)];
        }
    }
    let value = (&s.c * &x_full).trace();
    let mut ts = centred.t.iter().copied();
    let alpha = if keep_x { ts.next() } else { None };
    let beta = if keep_y { ts.next() } else { None };
    Ok(SdpSolution {
        x: x_full,
        value,
        lower_bound: centred.lambda,
        multipliers: (alpha, beta),
        iterations: centred.iterations,
    })
}

/// `z` from the last column of `X`; fails when `z` leaves the balls by more than `1e-6`.
pub fn recover_solution(x_star: &DMatrix<f64>, s: &SdpInstance) -> Result<Vec<f64>, SolverError> {
    let n = s.size();
    let d = s.dim();
    let corner = x_star[(n - 1, n - 1)];
    let z: Vec<f64> = (0..2 * d).map(|i| x_star[(i, n - 1)] / corner).collect();
    let violation = (norm(&z[..d]) - s.r_x_sq().sqrt())
        .max(norm(&z[d..]) - s.r_y_sq().sqrt())
        .max(0.0);
    if violation > 1e-6 {
        return Err(SolverError::RankRecovery { violation });
    }
    Ok(z)
}

/// Default inner solver: certified SDP bound plus a feasible point attaining it.
#[derive(Debug, Clone)]
pub struct SdpSolver {
    pub tol: f64,
    /// Accepted gap between returned value and certified bound.
    pub cert_tol: f64,
}

impl Default for SdpSolver {
    fn default() -> Self {
        SdpSolver {
            tol: DEFAULT_TOL,
            cert_tol: CERT_TOL,
        }
    }
}

/// Stationary point of the Lagrangian for multipliers `(α, β)`:
/// `b + y + 2αx = 0`, `a + x + 2βy = 0`, solved coordinate-wise.
fn kkt_point(p: &BilinearBallProblem, alpha: f64, beta: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let det = 4.0 * alpha * beta - 1.0;
    if det.abs() < 1e-9 {
        return None;
    }
    let d = p.dim();
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    for i in 0..d {
        // [2α 1; 1 2β] [x; y] = −[b; a]
        x[i] = (-p.b[i] * 2.0 * beta + p.a[i]) / det;
        y[i] = (-p.a[i] * 2.0 * alpha + p.b[i]) / det;
    }
    Some((x, y))
}

/// With `d = 1` the lifted relaxation can be strictly loose, but the problem
/// is a bilinear function on a box, so its minimum sits at a corner.
fn scalar_report(p: &BilinearBallProblem) -> SolveReport {
    let mut best = (0.0, 0.0, f64::INFINITY);
    for x in [-p.r_x, p.r_x] {
        for y in [-p.r_y, p.r_y] {
            let f = (p.a[0] + x) * (p.b[0] + y);
            if f < best.2 {
                best = (x, y, f);
            }
        }
    }
    SolveReport {
        x_star: vec![best.0],
        y_star: vec![best.1],
        value: best.2,
        certified_lower_bound: best.2,
        method: Method::ClosedForm,
        iterations: 0,
    }
}

impl InnerSolver for SdpSolver {
    fn solve(&self, p: &BilinearBallProblem) -> Result<SolveReport, SolverError> {
        if let Some(r) = closed_form_report(p) {
            return Ok(r);
        }
        if p.dim() == 1 {
            return Ok(scalar_report(p));
        }
        let inst = to_sdp(&to_qc2qp(p));
        let sol = solve_sdp(&inst, self.tol)?;
        let d = p.dim();
        let lb = sol.lower_bound;

        type Candidate = Option<(Vec<f64>, Vec<f64>, f64)>;
        let offer = |best: &mut Candidate, mut x: Vec<f64>, mut y: Vec<f64>| {
            crate::vecops::project_ball(&mut x, p.r_x);
            crate::vecops::project_ball(&mut y, p.r_y);
            let (x, y, f, _) = descend(p, x, y, false, 1e-15, 10_000);
            if best.as_ref().is_none_or(|b| f < b.2) {
                *best = Some((x, y, f));
            }
        };
        let mut best: Candidate = None;
        if let Ok(z) = recover_solution(&sol.x, &inst) {
            offer(&mut best, z[..d].to_vec(), z[d..].to_vec());
        }
        if let (Some(a), Some(b)) = sol.multipliers {
            if let Some((x, y)) = kkt_point(p, a, b) {
                offer(&mut best, x, y);
            }
        }
        if !best.as_ref().is_some_and(|b| b.2 - lb <= self.cert_tol) {
            let alt = super::alternating::solve_alternating(p, 8, 1e-15);
            offer(&mut best, alt.x_star, alt.y_star);
        }
        let (x, y, f) = best.expect("at least one candidate");
        if f - lb > self.cert_tol {
            return Err(SolverError::NonConvergence {
                iterations: sol.iterations,
                residual: f - lb,
                best_value: f,
                best: Some((x, y)),
            });
        }
        Ok(SolveReport {
            x_star: x,
            y_star: y,
            value: f,
            certified_lower_bound: lb,
            method: Method::Sdp,
            iterations: sol.iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilinear::lift;

    fn instance(a: Vec<f64>, b: Vec<f64>, rx: f64, ry: f64) -> (BilinearBallProblem, SdpInstance) {
        let p = BilinearBallProblem::new(a, b, rx, ry).unwrap();
        let s = to_sdp(&to_qc2qp(&p));
        (p, s)
    }

    #[test]
    fn zero_objective_instance() {
        let (_, s) = instance(vec![0.0; 2], vec![0.0; 2], 1.0, 1.0);
        let mut s = s;
        s.c.fill(0.0);
        let sol = solve_sdp(&s, 1e-9).unwrap();
        assert!(sol.value.abs() < 1e-7);
        assert!((sol.x[(4, 4)] - 1.0).abs() < 1e-12);
        let eig = sol.x.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-9);
    }

    #[test]
    fn antiparallel_unit_vectors() {
        let (_, s) = instance(vec![0.0; 3], vec![0.0; 3], 1.0, 1.0);
        // The primal matrix is `μS⁻¹` with `S` nearly singular, so its
        // accuracy is limited to about `ε/μ`.
        let sol = solve_sdp(&s, 1e-8).unwrap();
        assert!((sol.value + 1.0).abs() < 1e-5, "{}", sol.value);
        assert!((sol.lower_bound + 1.0).abs() < 1e-7, "{}", sol.lower_bound);
        assert!(sol.lower_bound <= sol.value + 1e-12);
    }

    #[test]
    fn both_radii_zero_is_the_inner_product() {
        let (_, s) = instance(vec![1.0, 2.0], vec![0.5, -1.0], 0.0, 0.0);
        let sol = solve_sdp(&s, 1e-8).unwrap();
        assert_eq!(sol.value, -1.5);
    }

    #[test]
    fn one_radius_zero_matches_closed_form() {
        let (p, s) = instance(vec![1.0, 0.0, 2.0], vec![0.5, -1.0, 0.0], 0.0, 0.7);
        let sol = solve_sdp(&s, 1e-10).unwrap();
        let want = p.objective(&[0.0; 3], &crate::vecops::scale(&crate::vecops::unit(&p.a), -0.7));
        assert!((sol.value - want).abs() < 1e-7);
    }

    #[test]
    fn recover_from_rank_one_lift() {
        let (_, s) = instance(vec![0.0; 2], vec![0.0; 2], 1.0, 1.0);
        let z = vec![0.3, -0.4, 0.1, 0.2];
        assert_eq!(recover_solution(&lift(&z), &s).unwrap(), z);
        let far = vec![3.0, 0.0, 0.0, 0.0];
        assert!(matches!(
            recover_solution(&lift(&far), &s),
            Err(SolverError::RankRecovery { .. })
        ));
    }

    #[test]
    fn scalar_instance_agrees_with_alternating() {
        let (p, s) = instance(vec![2.0], vec![3.0], 1.0, 0.5);
        let sol = solve_sdp(&s, 1e-10).unwrap();
        let z = recover_solution(&sol.x, &s).unwrap();
        let alt = crate::bilinear::solve_alternating(&p, 8, 1e-15);
        assert!((z[0] - alt.x_star[0]).abs() < 1e-4);
        assert!((z[1] - alt.y_star[0]).abs() < 1e-4);
        assert!((sol.value - alt.value).abs() < 1e-6);
    }

    #[test]
    fn scalar_problems_use_the_corners() {
        // the relaxation is loose here: its bound sits below the true minimum
        let p = BilinearBallProblem::new(vec![-0.2], vec![0.1], 0.4, 0.6).unwrap();
        let r = SdpSolver::default().solve(&p).unwrap();
        let grid = crate::bilinear::oracle_grid(&p, 2001);
        assert!((r.value - grid.value).abs() < 1e-9, "{} vs {}", r.value, grid.value);
        assert_eq!(r.value, r.certified_lower_bound);
    }

    #[test]
    fn solver_report_is_certified() {
        let p = BilinearBallProblem::new(vec![0.4, -0.3, 1.1], vec![-0.2, 0.9, 0.3], 0.8, 0.6).unwrap();
        let r = SdpSolver::default().solve(&p).unwrap();
        assert!(r.value >= r.certified_lower_bound - 1e-9);
        assert!(r.value - r.certified_lower_bound <= CERT_TOL);
        assert!(p.is_feasible(&r.x_star, &r.y_star, 1e-8));
    }
}
