//! Finite-horizon tracking MPC used inside the application cost.
//!
//! The controller predicts with its own model, whose state it propagates from
//! the applied inputs, and solves
//!
//! ```text
//!     min  Σ_{k=1}^{H} ‖y(t+k) − r(t+k)‖²_Q + Σ_{k=0}^{H−1} ‖Δu(t+k)‖²_R
//!     s.t. |u| ≤ u_max, |ŷ| ≤ y_max
//! ```
//!
//! applying only the first move.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::{ParametricLtiModel, StateSpace};
use crate::qp::{QpError, QuadraticProgram};

#[derive(Clone, Debug)]
pub struct MpcController {
    ss: StateSpace,
    n_u: usize,
    n_y: usize,
    horizon: usize,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    u_max: f64,
    y_max: f64,
    /// Rows `C A^k`, `k = 1..=H`.
    free: DMatrix<f64>,
    /// Forced-response map from `u(t..t+H−1)` to `y(t+1..t+H)`.
    forced: DMatrix<f64>,
    /// Difference operator: `Δu = diff·U − shift·u_prev`.
    diff: DMatrix<f64>,
    shift: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcMove {
    pub input: DVector<f64>,
    /// The output-constrained QP was infeasible and the input was saturated instead.
    pub saturated: bool,
}

impl MpcController {
    /// Controller designed from `model` (at its own `theta_g`).
    pub fn new(
        model: &ParametricLtiModel,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        horizon: usize,
        u_max: f64,
        y_max: f64,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidSpec("MPC horizon must be positive".into()));
        }
        let (n_u, n_y) = (model.n_u, model.n_y);
        if q.shape() != (n_y, n_y) || r.shape() != (n_u, n_u) {
            return Err(Error::Dimension(format!("MPC weights are {:?} and {:?}", q.shape(), r.shape())));
        }
        if crate::linalg::min_eigenvalue(q) < 0.0 || crate::linalg::min_eigenvalue(r) < 0.0 {
            return Err(Error::InvalidSpec("MPC weights must be positive semidefinite".into()));
        }
        let ss = model.realize(&model.theta_g);
        let n_x = ss.n_x();
        let mut free = DMatrix::zeros(horizon * n_y, n_x);
        let mut forced = DMatrix::zeros(horizon * n_y, horizon * n_u);
        // markov[k] = C A^{k} B
        let mut a_pow = DMatrix::identity(n_x, n_x);
        let mut markov = Vec::with_capacity(horizon);
        for k in 1..=horizon {
            markov.push(&ss.c * &a_pow * &ss.b);
            a_pow = &ss.a * a_pow;
            free.view_mut(((k - 1) * n_y, 0), (n_y, n_x)).copy_from(&(&ss.c * &a_pow));
        }
        for k in 1..=horizon {
            for j in 0..k {
                forced
                    .view_mut(((k - 1) * n_y, j * n_u), (n_y, n_u))
                    .copy_from(&markov[k - 1 - j]);
            }
            if k < horizon {
                forced.view_mut(((k - 1) * n_y, k * n_u), (n_y, n_u)).copy_from(&ss.d);
            }
        }
        let m = horizon * n_u;
        let mut diff = DMatrix::identity(m, m);
        for k in 1..horizon {
            for c in 0..n_u {
                diff[(k * n_u + c, (k - 1) * n_u + c)] = -1.0;
            }
        }
        let mut shift = DMatrix::zeros(m, n_u);
        shift.view_mut((0, 0), (n_u, n_u)).copy_from(&DMatrix::identity(n_u, n_u));
        Ok(Self { ss, n_u, n_y, horizon, q: q.clone(), r: r.clone(), u_max, y_max, free, forced, diff, shift })
    }

    pub fn model_realization(&self) -> &StateSpace {
        &self.ss
    }

    /// Next input from the controller's model state `x`, the previous input and
    /// references for `t+1 … t+H` (one vector per step, or a single vector held constant).
    pub fn control(&self, x: &DVector<f64>, u_prev: &DVector<f64>, reference: &[DVector<f64>]) -> Result<MpcMove> {
        let (h, n_u, n_y) = (self.horizon, self.n_u, self.n_y);
        let mut rstack = DVector::zeros(h * n_y);
        for k in 0..h {
            let rk = reference.get(k).or_else(|| reference.last()).cloned().unwrap_or_else(|| DVector::zeros(n_y));
            rstack.rows_mut(k * n_y, n_y).copy_from(&rk);
        }
        let qbar = crate::linalg::block_diag_repeat(&self.q, h);
        let rbar = crate::linalg::block_diag_repeat(&self.r, h);
        let free_resp = &self.free * x;
        let err0 = &free_resp - &rstack;
        let hess = (self.forced.transpose() * &qbar * &self.forced + self.diff.transpose() * &rbar * &self.diff) * 2.0;
        let grad = (self.forced.transpose() * &qbar * &err0 - self.diff.transpose() * &rbar * (&self.shift * u_prev)) * 2.0;
        // |ŷ| ≤ y_max  ⇔  ±(free + forced·U) ≤ y_max
        let m = h * n_y;
        let mut a = DMatrix::zeros(2 * m, h * n_u);
        a.view_mut((0, 0), (m, h * n_u)).copy_from(&self.forced);
        a.view_mut((m, 0), (m, h * n_u)).copy_from(&(-&self.forced));
        let mut b = DVector::zeros(2 * m);
        b.rows_mut(0, m).copy_from(&free_resp.map(|v| self.y_max - v));
        b.rows_mut(m, m).copy_from(&free_resp.map(|v| self.y_max + v));
        let qp = QuadraticProgram::new(hess.clone(), grad.clone(), a, b).with_bounds(-self.u_max, self.u_max);
        match qp.solve() {
            Ok(sol) => Ok(MpcMove { input: sol.x.rows(0, n_u).into_owned(), saturated: false }),
            Err(QpError::Infeasible { .. }) => {
                let boxed = QuadraticProgram::new(hess, grad, DMatrix::zeros(0, h * n_u), DVector::zeros(0))
                    .with_bounds(-self.u_max, self.u_max);
                let sol = boxed.solve()?;
                Ok(MpcMove { input: sol.x.rows(0, n_u).into_owned(), saturated: true })
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Closed-loop trajectory of a plant under an [`MpcController`].
#[derive(Clone, Debug)]
pub struct ClosedLoopRun {
    /// Applied inputs `u(0..N)`.
    pub inputs: DMatrix<f64>,
    /// Plant outputs `y(1..=N)`.
    pub outputs: DMatrix<f64>,
    pub saturated_steps: usize,
}

/// Steady state of `x⁺ = A x + B u0`.
fn settled_state(ss: &StateSpace, u0: &DVector<f64>) -> Result<DVector<f64>> {
    let n = ss.n_x();
    if u0.iter().all(|v| *v == 0.0) {
        return Ok(DVector::zeros(n));
    }
    let m = DMatrix::identity(n, n) - &ss.a;
    m.lu()
        .solve(&(&ss.b * u0))
        .ok_or_else(|| Error::InvalidModel("plant has no steady state for the held initial input".into()))
}

/// Run `steps` control moves starting from the steady state under the held input `u0`.
///
/// The plant is `plant` at its nominal `theta_g`; the controller propagates its own model state.
/// Recorded outputs are `C x(t+1)`; a direct feedthrough of the not-yet-chosen next input is not included.
pub fn run_closed_loop(
    plant: &ParametricLtiModel,
    controller: &MpcController,
    u0: &DVector<f64>,
    reference: impl Fn(usize) -> DVector<f64>,
    steps: usize,
) -> Result<ClosedLoopRun> {
    let pss = plant.realize(&plant.theta_g);
    let css = controller.model_realization();
    let mut xp = settled_state(&pss, u0)?;
    let mut xc = settled_state(css, u0)?;
    let mut u_prev = u0.clone();
    let mut inputs = DMatrix::zeros(plant.n_u, steps);
    let mut outputs = DMatrix::zeros(plant.n_y, steps);
    let mut saturated_steps = 0;
    for t in 0..steps {
        let refs: Vec<DVector<f64>> = (1..=controller.horizon).map(|k| reference(t + k)).collect();
        let mv = controller.control(&xc, &u_prev, &refs)?;
        if mv.saturated {
            saturated_steps += 1;
        }
        let u = mv.input;
        xp = &pss.a * &xp + &pss.b * &u;
        xc = &css.a * &xc + &css.b * &u;
        let y = &pss.c * &xp;
        if y.amax() > crate::lti::OVERFLOW_GUARD || !y.amax().is_finite() {
            return Err(Error::Diverged { sample: t + 1, magnitude: y.amax() });
        }
        inputs.set_column(t, &u);
        outputs.set_column(t, &y);
        u_prev = u;
    }
    Ok(ClosedLoopRun { inputs, outputs, saturated_steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_reference_from_rest_stays_at_zero() {
        let m = ParametricLtiModel::fir(&[10.0, -9.0], 1.0).unwrap();
        let c = MpcController::new(&m, &DMatrix::identity(1, 1), &DMatrix::zeros(1, 1), 5, 0.5, 5.0).unwrap();
        let run = run_closed_loop(&m, &c, &DVector::zeros(1), |_| DVector::zeros(1), 20).unwrap();
        assert!(run.inputs.amax() < 1e-12);
        assert!(run.outputs.amax() < 1e-12);
    }

    #[test]
    fn scalar_horizon_one_closed_form() {
        // y(t+1) = a y(t) + b u(t): one move, cost q(a x + b u − r)² + ρ(u − u_prev)²
        let s = crate::lti::ModelStructure::TransferFunction {
            num: vec![crate::lti::Coef::Const(0.0), crate::lti::Coef::param(0)],
            den: vec![crate::lti::Coef::Const(-0.8)],
        };
        let m = ParametricLtiModel::new(s, DVector::from_vec(vec![0.5]), DVector::zeros(0), None, DMatrix::identity(1, 1))
            .unwrap();
        let (q, rho, r, up) = (2.0, 0.3, 1.0, 0.2);
        let c = MpcController::new(&m, &DMatrix::from_element(1, 1, q), &DMatrix::from_element(1, 1, rho), 1, 1e6, 1e6)
            .unwrap();
        let x = DVector::from_vec(vec![0.7]);
        let mv = c.control(&x, &DVector::from_vec(vec![up]), &[DVector::from_vec(vec![r])]).unwrap();
        // observer form: x⁺ = 0.8 x + 0.5 u, y = x
        let (a, b) = (0.8, 0.5);
        let expected = (q * b * (r - a * x[0]) + rho * up) / (q * b * b + rho);
        assert!((mv.input[0] - expected).abs() < 1e-10);
        assert!(!mv.saturated);
    }

    #[test]
    fn input_bounds_hold() {
        let m = ParametricLtiModel::fir(&[10.0, -9.0], 1.0).unwrap();
        let c = MpcController::new(&m, &DMatrix::identity(1, 1), &DMatrix::zeros(1, 1), 6, 0.5, 5.0).unwrap();
        let run = run_closed_loop(&m, &c, &DVector::zeros(1), |_| DVector::from_element(1, 3.0), 30).unwrap();
        assert!(run.inputs.amax() <= 0.5 + 1e-9);
    }
}
