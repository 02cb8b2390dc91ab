//! Dense convex quadratic programs
//!
//! ```text
//!     minimize    ½ xᵀ H x + gᵀ x
//!     subject to  A x ≤ b
//! ```
//!
//! with `H` positive semidefinite. The problem is rewritten as a least-distance
//! program through the Cholesky factor of `H` and solved exactly with the
//! Lawson–Hanson NNLS active-set method; the active set it identifies is then
//! used for one equality-constrained KKT solve that polishes the result.
//! Problem sizes here are tens of variables, so everything is dense.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("QP dimensions disagree: {0}")]
    Dimension(String),
    /// `certificate ≥ 0` with `Aᵀ·certificate = 0` and `bᵀ·certificate < 0`.
    #[error("QP constraint set is empty (Farkas certificate found)")]
    Infeasible { certificate: DVector<f64> },
    #[error("QP Hessian is not positive semidefinite")]
    NotConvex,
    #[error("QP solution did not reach the KKT tolerance (residual {residual:e})")]
    Inaccurate { residual: f64 },
}

#[derive(Clone, Debug)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub multipliers: DVector<f64>,
    /// Scaled max of stationarity, primal violation and complementarity.
    pub kkt_residual: f64,
    /// Diagonal shift added to `H` when it was singular.
    pub regularization: f64,
}

/// Default KKT acceptance threshold.
pub const KKT_TOLERANCE: f64 = 1e-7;

impl QuadraticProgram {
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>, a_ineq: DMatrix<f64>, b_ineq: DVector<f64>) -> Self {
        Self { hessian, gradient, a_ineq, b_ineq }
    }

    /// Add `lo ≤ x ≤ hi` rows.
    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        let n = self.gradient.len();
        let m = self.a_ineq.nrows();
        let mut a = DMatrix::zeros(m + 2 * n, n);
        let mut b = DVector::zeros(m + 2 * n);
        if m > 0 {
            a.view_mut((0, 0), (m, n)).copy_from(&self.a_ineq);
            b.rows_mut(0, m).copy_from(&self.b_ineq);
        }
        for j in 0..n {
            a[(m + 2 * j, j)] = 1.0;
            b[m + 2 * j] = hi;
            a[(m + 2 * j + 1, j)] = -1.0;
            b[m + 2 * j + 1] = -lo;
        }
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    fn check(&self) -> Result<(), QpError> {
        let n = self.gradient.len();
        if self.hessian.shape() != (n, n) {
            return Err(QpError::Dimension(format!("H is {:?}, g has {n} entries", self.hessian.shape())));
        }
        if self.a_ineq.nrows() != self.b_ineq.len() || (self.a_ineq.nrows() > 0 && self.a_ineq.ncols() != n) {
            return Err(QpError::Dimension(format!(
                "A is {:?}, b has {} entries, x has {n}",
                self.a_ineq.shape(),
                self.b_ineq.len()
            )));
        }
        Ok(())
    }

    /// Scaled KKT residual of a primal-dual pair.
    pub fn kkt_residual(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        let scale_g = 1.0 + self.gradient.amax() + self.hessian.amax() * x.amax();
        let mut stat = &self.hessian * x + &self.gradient;
        if self.a_ineq.nrows() > 0 {
            stat += self.a_ineq.transpose() * lambda;
        }
        let mut res = stat.amax() / scale_g;
        if self.a_ineq.nrows() > 0 {
            let slack = &self.b_ineq - &self.a_ineq * x;
            let scale_b = 1.0 + self.b_ineq.amax() + self.a_ineq.amax() * x.amax();
            for i in 0..slack.len() {
                res = res.max((-slack[i]).max(0.0) / scale_b);
                res = res.max((-lambda[i]).max(0.0) / scale_g);
                res = res.max((lambda[i] * slack[i]).abs() / (scale_g * scale_b));
            }
        }
        res
    }

    /// Solve to [`KKT_TOLERANCE`].
    pub fn solve(&self) -> Result<QpSolution, QpError> {
        self.solve_with_tolerance(KKT_TOLERANCE)
    }

    pub fn solve_with_tolerance(&self, tol: f64) -> Result<QpSolution, QpError> {
        self.check()?;
        let n = self.gradient.len();
        if n == 0 {
            if let Some(i) = (0..self.b_ineq.len()).find(|&i| self.b_ineq[i] < 0.0) {
                let mut cert = DVector::zeros(self.b_ineq.len());
                cert[i] = 1.0;
                return Err(QpError::Infeasible { certificate: cert });
            }
            return Ok(QpSolution {
                x: DVector::zeros(0),
                multipliers: DVector::zeros(self.b_ineq.len()),
                kkt_residual: 0.0,
                regularization: 0.0,
            });
        }
        let h = (&self.hessian + self.hessian.transpose()) * 0.5;
        let (chol, regularization) = regularized_cholesky(&h)?;
        let h_reg = &h + DMatrix::identity(n, n) * regularization;
        let l = chol.l();
        let m = self.a_ineq.nrows();

        // unconstrained minimiser
        let x_free = -chol.solve(&self.gradient);
        if m == 0 {
            let lambda = DVector::zeros(0);
            let kkt = self.kkt_residual(&x_free, &lambda);
            return Ok(QpSolution { x: x_free, multipliers: lambda, kkt_residual: kkt, regularization });
        }

        // z = Lᵀx + L⁻¹g, constraints A x ≤ b  ⇔  G z ≥ h with G = −A L⁻ᵀ, h = −(b − A x_free)
        let lt = l.transpose();
        let a_linvt = l
            .solve_lower_triangular(&self.a_ineq.transpose())
            .ok_or(QpError::NotConvex)?
            .transpose();
        let g_mat = -&a_linvt;
        let h_vec = -(&self.b_ineq - &self.a_ineq * &x_free);

        // LDP through NNLS: E = [Gᵀ; hᵀ], f = e_{n+1}
        let mut e = DMatrix::zeros(n + 1, m);
        e.view_mut((0, 0), (n, m)).copy_from(&g_mat.transpose());
        e.view_mut((n, 0), (1, m)).copy_from(&h_vec.transpose());
        let mut f = DVector::zeros(n + 1);
        f[n] = 1.0;
        let w = nnls(&e, &f);
        let r = &e * &w - &f;
        let denom = -r[n];
        if r.norm() < 1e-12 || denom <= 1e-12 {
            // Aᵀw = 0 and bᵀw = −1: Farkas certificate
            return Err(QpError::Infeasible { certificate: w });
        }
        let z = -r.rows(0, n) / r[n];
        let x_ldp = lt.solve_upper_triangular(&z).ok_or(QpError::NotConvex)? + &x_free;
        let mu = &w / denom;

        let reg_problem = QuadraticProgram { hessian: h_reg, ..self.clone() };
        let mut best_x = x_ldp;
        let mut best_l = mu;
        let mut best_r = reg_problem.kkt_residual(&best_x, &best_l);
        if let Some((xp, lp)) = reg_problem.polish(&best_x, &best_l) {
            let rp = reg_problem.kkt_residual(&xp, &lp);
            if rp <= best_r {
                best_x = xp;
                best_l = lp;
                best_r = rp;
            }
        }
        if best_r > tol {
            return Err(QpError::Inaccurate { residual: best_r });
        }
        let kkt = self.kkt_residual(&best_x, &best_l).max(best_r);
        Ok(QpSolution { x: best_x, multipliers: best_l, kkt_residual: kkt, regularization })
    }

    /// Re-solve the KKT system on the active set implied by `(x, λ)`.
    fn polish(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = x.len();
        let active: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 0.0).collect();
        let k = active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.hessian);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&self.gradient));
        for (r, &i) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = self.a_ineq[(i, j)];
                kkt[(j, n + r)] = self.a_ineq[(i, j)];
            }
            rhs[n + r] = self.b_ineq[i];
        }
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let xp = sol.rows(0, n).into_owned();
        let mut lp = DVector::zeros(lambda.len());
        for (r, &i) in active.iter().enumerate() {
            lp[i] = sol[n + r];
        }
        Some((xp, lp))
    }
}

/// Cholesky of `h`, shifting the diagonal when `h` is only semidefinite.
fn regularized_cholesky(h: &DMatrix<f64>) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64), QpError> {
    let n = h.nrows();
    let scale = h.diagonal().amax().max(1.0);
    let min_eig = crate::linalg::min_eigenvalue(h);
    if min_eig < -1e-9 * scale {
        return Err(QpError::NotConvex);
    }
    let mut shift = 0.0;
    // keep the factor well conditioned enough for the triangular solves
    if min_eig < 1e-10 * scale {
        shift = 1e-10 * scale;
    }
    for _ in 0..8 {
        let m = h + DMatrix::identity(n, n) * shift;
        if let Some(c) = m.cholesky() {
            return Ok((c, shift));
        }
        shift = if shift == 0.0 { 1e-12 * scale } else { shift * 100.0 };
    }
    Err(QpError::NotConvex)
}

/// Lawson–Hanson non-negative least squares: `min ‖E w − f‖` s.t. `w ≥ 0`.
pub fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    let m = e.ncols();
    let mut w = DVector::zeros(m);
    let mut passive = vec![false; m];
    let tol = 1e-13 * e.amax().max(1.0) * f.amax().max(1.0) * (m.max(1) as f64);
    let max_outer = 3 * m + 10;
    for _ in 0..max_outer {
        let grad = e.transpose() * (f - e * &w);
        let candidate = (0..m)
            .filter(|&j| !passive[j])
            .max_by(|&a, &b| grad[a].partial_cmp(&grad[b]).unwrap_or(std::cmp::Ordering::Equal));
        let Some(t) = candidate else { break };
        if grad[t] <= tol {
            break;
        }
        passive[t] = true;
        let mut inner_guard = 0;
        loop {
            inner_guard += 1;
            let z = passive_lstsq(e, f, &passive);
            let all_pos = (0..m).filter(|&j| passive[j]).all(|j| z[j] > 0.0);
            if all_pos || inner_guard > 3 * m + 10 {
                if !all_pos {
                    for j in 0..m {
                        w[j] = z[j].max(0.0);
                    }
                } else {
                    w = z;
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in 0..m {
                if passive[j] && z[j] <= 0.0 {
                    let a = w[j] / (w[j] - z[j]);
                    if a < alpha {
                        alpha = a;
                    }
                }
            }
            w += (&z - &w) * alpha;
            for j in 0..m {
                if passive[j] && w[j] <= tol {
                    passive[j] = false;
                    w[j] = 0.0;
                }
            }
        }
    }
    w
}

/// Least squares over the passive columns, zero elsewhere.
fn passive_lstsq(e: &DMatrix<f64>, f: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let mut z = DVector::zeros(passive.len());
    if idx.is_empty() {
        return z;
    }
    let sub = DMatrix::from_fn(e.nrows(), idx.len(), |r, c| e[(r, idx[c])]);
    let svd = sub.svd(true, true);
    let sol = svd
        .solve(f, 1e-14 * svd.singular_values.max())
        .unwrap_or_else(|_| DVector::zeros(idx.len()));
    for (c, &j) in idx.iter().enumerate() {
        z[j] = sol[c];
    }
    z
}
