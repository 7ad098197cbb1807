//! Quadratic-form rewriting of the bilinear ball problem and its lifted SDP data.

use nalgebra::{DMatrix, DVector};

use super::BilinearBallProblem;
use crate::vecops::dot;

/// `min zᵀAz + 2βᵀz + c` s.t. `zᵀA_x z ≤ r_x²`, `zᵀA_y z ≤ r_y²`, with `z = [x; y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Qc2qpInstance {
    pub a: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub c: f64,
    pub a_x: DMatrix<f64>,
    pub a_y: DMatrix<f64>,
    pub r_x_sq: f64,
    pub r_y_sq: f64,
}

impl Qc2qpInstance {
    pub fn dim(&self) -> usize {
        self.beta.len() / 2
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let z = DVector::from_column_slice(z);
        (z.transpose() * &self.a * &z)[(0, 0)] + 2.0 * self.beta.dot(&z) + self.c
    }
}

/// Lifted data: `min tr(CX)` s.t. `tr(C_x X) ≤ 0`, `tr(C_y X) ≤ 0`, `tr(C_0 X) = 1`, `X ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpInstance {
    pub c: DMatrix<f64>,
    pub c0: DMatrix<f64>,
    pub c_x: DMatrix<f64>,
    pub c_y: DMatrix<f64>,
}

impl SdpInstance {
    /// Size `n = 2d + 1` of the lifted matrix.
    pub fn size(&self) -> usize {
        self.c.nrows()
    }

    pub fn dim(&self) -> usize {
        (self.size() - 1) / 2
    }

    pub fn r_x_sq(&self) -> f64 {
        let n = self.size() - 1;
        -self.c_x[(n, n)]
    }

    pub fn r_y_sq(&self) -> f64 {
        let n = self.size() - 1;
        -self.c_y[(n, n)]
    }
}

pub fn to_qc2qp(p: &BilinearBallProblem) -> Qc2qpInstance {
    let d = p.dim();
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    let mut a_x = DMatrix::zeros(2 * d, 2 * d);
    let mut a_y = DMatrix::zeros(2 * d, 2 * d);
    let mut beta = DVector::zeros(2 * d);
    for i in 0..d {
        a[(i, d + i)] = 0.5;
        a[(d + i, i)] = 0.5;
        a_x[(i, i)] = 1.0;
        a_y[(d + i, d + i)] = 1.0;
        // ⟨a+x, b+y⟩ = ⟨a,b⟩ + ⟨x,b⟩ + ⟨a,y⟩ + ⟨x,y⟩
        beta[i] = 0.5 * p.b[i];
        beta[d + i] = 0.5 * p.a[i];
    }
    Qc2qpInstance {
        a,
        beta,
        c: dot(&p.a, &p.b),
        a_x,
        a_y,
        r_x_sq: p.r_x * p.r_x,
        r_y_sq: p.r_y * p.r_y,
    }
}

pub fn to_sdp(q: &Qc2qpInstance) -> SdpInstance {
    let m = q.beta.len();
    let n = m + 1;
    let mut c = DMatrix::zeros(n, n);
    c.view_mut((0, 0), (m, m)).copy_from(&q.a);
    for i in 0..m {
        c[(i, m)] = q.beta[i];
        c[(m, i)] = q.beta[i];
    }
    c[(m, m)] = q.c;
    let mut c0 = DMatrix::zeros(n, n);
    c0[(m, m)] = 1.0;
    let mut c_x = DMatrix::zeros(n, n);
    c_x.view_mut((0, 0), (m, m)).copy_from(&q.a_x);
    c_x[(m, m)] = -q.r_x_sq;
    let mut c_y = DMatrix::zeros(n, n);
    c_y.view_mut((0, 0), (m, m)).copy_from(&q.a_y);
    c_y[(m, m)] = -q.r_y_sq;
    SdpInstance { c, c0, c_x, c_y }
}

/// Rank-one lift `[z;1][z;1]ᵀ`.
pub fn lift(z: &[f64]) -> DMatrix<f64> {
    let mut w = z.to_vec();
    w.push(1.0);
    let v = DVector::from_vec(w);
    &v * v.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_instance_blocks() {
        let p = BilinearBallProblem::new(vec![2.0], vec![3.0], 1.0, 0.5).unwrap();
        let q = to_qc2qp(&p);
        assert_eq!(q.c, 6.0);
        assert_eq!(q.beta.as_slice(), &[1.5, 1.0]);
        assert_eq!(q.a, DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
        assert_eq!(&q.a_x + &q.a_y, DMatrix::identity(2, 2));

        let s = to_sdp(&q);
        #[rustfmt::skip]
        let c = DMatrix::from_row_slice(3, 3, &[
            0.0, 0.5, 1.5,
            0.5, 0.0, 1.0,
            1.5, 1.0, 6.0,
        ]);
        assert_eq!(s.c, c);
        assert_eq!(s.c0, DMatrix::from_row_slice(3, 3, &[0., 0., 0., 0., 0., 0., 0., 0., 1.]));
        assert_eq!(s.c_x, DMatrix::from_row_slice(3, 3, &[1., 0., 0., 0., 0., 0., 0., 0., -1.]));
        assert_eq!(s.c_y, DMatrix::from_row_slice(3, 3, &[0., 0., 0., 0., 1., 0., 0., 0., -0.25]));
    }

    #[test]
    fn zero_problem_has_zero_linear_part() {
        let p = BilinearBallProblem::new(vec![0.0; 3], vec![0.0; 3], 1.0, 1.0).unwrap();
        let q = to_qc2qp(&p);
        assert!(q.beta.iter().all(|&x| x == 0.0));
        assert_eq!(q.c, 0.0);
        let s = to_sdp(&q);
        assert_eq!(s.c[(6, 6)], 0.0);
        assert!(s.c.column(6).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lift_reproduces_quadratic_form() {
        let p = BilinearBallProblem::new(vec![0.3, -1.0], vec![2.0, 0.5], 1.0, 2.0).unwrap();
        let q = to_qc2qp(&p);
        let s = to_sdp(&q);
        let z = [0.1, -0.2, 0.7, 0.4];
        let lhs = (&s.c * lift(&z)).trace();
        assert!((lhs - q.objective(&z)).abs() < 1e-12);
        assert!((lhs - p.objective(&z[..2], &z[2..])).abs() < 1e-12);
    }
}
