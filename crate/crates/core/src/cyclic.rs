//! Receding-horizon design with the cyclic slack solver.
//!
//! At sample `t` the planned experiment must satisfy
//! `ΦᵀΦ + C(t−1) = S`, `S ⪰ 0`. The residual `J = ‖ΦᵀΦ + C − S‖²_F` is
//! reduced by cycling through
//!
//! 1. the input: `min ‖Φ(u) − U (S − C)^{1/2}‖²_F` under the amplitude bounds (a QP),
//! 2. the semi-unitary factor `U` (orthogonal Procrustes),
//! 3. the slack `S = Π₊(ΦᵀΦ + C)`.
//!
//! Only the first planned input is applied; the design stops the first time `J ≤ tol_j`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::appset::{self, ExperimentSpec, LmiCheck};
use crate::error::{Error, Result};
use crate::fisher::{self, InformationState, StackedInput};
use crate::linalg;
use crate::lti::{self, ParametricLtiModel, SensitivityBank};
use crate::qp::QuadraticProgram;

/// Tolerance on a full-cycle increase of `J`, relative to `max(1, J)`, before the cycle is rejected.
pub const DESCENT_TOLERANCE: f64 = 1e-10;

/// `next` counts as no increase over `prev` up to rounding.
pub fn within_descent(prev: f64, next: f64) -> bool {
    next <= prev + DESCENT_TOLERANCE * prev.abs().max(1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CyclicIterate {
    pub u: StackedInput,
    /// `U`, `(N_u+1)n_y × n_θ` with orthonormal columns.
    pub basis: DMatrix<f64>,
    /// `S ⪰ 0`.
    pub slack: DMatrix<f64>,
    /// `‖ΦᵀΦ + C − S‖²_F`.
    pub cost: f64,
}

#[derive(Clone, Debug)]
pub struct InnerReport {
    pub iterate: CyclicIterate,
    /// `J` after each accepted full cycle.
    pub trace: Vec<f64>,
    pub cycles: usize,
    /// Stopped on `tol_inner` or `tol_j` rather than the cycle cap or a rejected cycle.
    pub converged: bool,
    /// A cycle that would have increased `J` was discarded and the loop stopped.
    pub rejected: bool,
    /// Some Procrustes step met a rank-deficient `R Φᵀ`.
    pub degenerate: bool,
}

/// `‖ΦᵀΦ + C − S‖²_F`.
pub fn slack_cost(phi: &DMatrix<f64>, c: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    linalg::frobenius_sq(&(phi.transpose() * phi + c - s))
}

/// Semi-unitary `U` minimising `‖Φ − U R‖_F`: with `R Φᵀ = Ū Σ Ũᵀ`, `U = Ũ Ūᵀ`.
///
/// The flag reports a rank-deficient `R Φᵀ`, where the minimiser is not unique.
pub fn step1_2_procrustes(phi: &DMatrix<f64>, sqrt_target: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let p = sqrt_target.nrows();
    let prod = sqrt_target * phi.transpose();
    let svd = prod.svd(true, true);
    let sv = &svd.singular_values;
    let degenerate = sv.min() <= 1e-12 * sv.max().max(f64::MIN_POSITIVE);
    let u_bar = svd.u.expect("left singular vectors requested");
    let u_tilde = svd.v_t.expect("right singular vectors requested").transpose();
    let mut u = u_tilde * u_bar.transpose();
    if (u.transpose() * &u - DMatrix::identity(p, p)).norm() > 1e-10 {
        // re-orthonormalise an inexact completion through its polar factor
        let s = u.clone().svd(true, true);
        u = s.u.expect("requested") * s.v_t.expect("requested");
    }
    (u, degenerate)
}

/// [`step1_2_procrustes`], completing a rank-deficient solution towards `previous`.
///
/// Every completion attains the same objective; staying close to the previous basis keeps
/// the input step from chasing directions the horizon cannot reach.
fn procrustes_keeping(phi: &DMatrix<f64>, sqrt_target: &DMatrix<f64>, previous: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (u, degenerate) = step1_2_procrustes(phi, sqrt_target);
    if !degenerate {
        return (u, false);
    }
    let m = phi * sqrt_target;
    let svd = m.clone().svd(true, true);
    let sv = &svd.singular_values;
    let tol = 1e-12 * sv.max().max(f64::MIN_POSITIVE);
    let left = svd.u.expect("requested");
    // determined part: singular pairs above the tolerance
    let mut fixed = DMatrix::zeros(m.nrows(), m.ncols());
    let mut rank = 0;
    for k in 0..sv.len() {
        if sv[k] > tol {
            rank += 1;
        }
    }
    if rank > 0 {
        let p = left.columns(0, sv.len()).into_owned();
        let q = svd.v_t.expect("requested").transpose();
        for k in (0..sv.len()).filter(|&k| sv[k] > tol) {
            fixed += p.column(k) * q.column(k).transpose();
        }
    }
    // previous basis with the determined directions projected out, then polar factor of the sum
    let blend = &fixed + (previous - &fixed * (fixed.transpose() * previous)) * 1e-6;
    let s = blend.svd(true, true);
    let candidate = s.u.expect("requested") * s.v_t.expect("requested");
    let obj = |x: &DMatrix<f64>| (phi - x * sqrt_target).norm_squared();
    if obj(&candidate) <= obj(&u) + 1e-12 * (1.0 + obj(&u)) {
        (candidate, true)
    } else {
        (u, true)
    }
}

/// Frobenius-nearest positive semidefinite matrix.
pub fn step2_psd_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::project_psd(&linalg::symmetrize(m))
}

/// Thin orthonormal basis from the QR factorisation of a seeded random `rows × cols` matrix.
pub fn initial_basis(rows: usize, cols: usize, seed: u64) -> Result<DMatrix<f64>> {
    if rows < cols {
        return Err(Error::InvalidSpec(format!(
            "the horizon gives {rows} output samples but {cols} parameters; increase N_u"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
    Ok(m.qr().q())
}

/// Quantities fixed for a design session.
#[derive(Clone, Debug)]
pub struct DesignProblem {
    pub bank: SensitivityBank,
    pub spec: ExperimentSpec,
    /// `Λ_e^{-1/2}`.
    weight: DMatrix<f64>,
    lambda_inv: DMatrix<f64>,
    /// Rows `[W F_1; …; W F_p]`, split at the past/horizon boundary.
    a_past: DMatrix<f64>,
    a_horizon: DMatrix<f64>,
    /// Horizon entries that move neither `Φ` nor the constrained outputs.
    pinned: Vec<bool>,
    /// Noiseless prediction at `θ₀`: `y(t..t+N_u) = free·x(t) + forced·ū(t)`.
    plant: lti::StateSpace,
    free: DMatrix<f64>,
    forced: DMatrix<f64>,
}

impl DesignProblem {
    pub fn new(model: &ParametricLtiModel, spec: &ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let bank = lti::sensitivity_impulse_responses(
            model,
            &model.theta_g,
            spec.truncation_n,
            spec.horizon_nu,
            spec.tail_tol,
        )?;
        Self::with_bank(model, spec, bank)
    }

    pub fn with_bank(model: &ParametricLtiModel, spec: &ExperimentSpec, bank: SensitivityBank) -> Result<Self> {
        let weight = fisher::noise_weight(&model.lambda, spec.horizon_nu + 1)?;
        let lambda_inv = model
            .lambda
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidModel("noise covariance is singular".into()))?;
        let (m, p) = (bank.rows(), bank.n_theta());
        let mut a = DMatrix::zeros(m * p, bank.cols());
        for (i, f) in bank.toeplitz.iter().enumerate() {
            a.view_mut((i * m, 0), (m, bank.cols())).copy_from(&(&weight * f));
        }
        let a_past = a.columns(0, bank.past_len()).into_owned();
        let a_horizon = a.columns(bank.past_len(), bank.horizon_len()).into_owned();

        let plant = model.realize(&model.theta_g);
        let h = spec.horizon_nu;
        let n_x = plant.n_x();
        let mut free = DMatrix::zeros((h + 1) * model.n_y, n_x);
        let mut a_pow = DMatrix::identity(n_x, n_x);
        for k in 0..=h {
            free.view_mut((k * model.n_y, 0), (model.n_y, n_x)).copy_from(&(&plant.c * &a_pow));
            a_pow = &plant.a * a_pow;
        }
        let g = model.impulse_response(&model.theta_g, h + 1)?;
        let forced = lti::lower_toeplitz(&g, h, model.n_u, model.n_y);
        let pinned = (0..bank.horizon_len())
            .map(|j| a_horizon.column(j).amax() == 0.0 && forced.column(j).amax() == 0.0)
            .collect();
        Ok(Self { bank, spec: spec.clone(), weight, lambda_inv, a_past, a_horizon, pinned, plant, free, forced })
    }

    pub fn phi(&self, u: &StackedInput) -> DMatrix<f64> {
        fisher::phi_with_weight(&self.bank, &u.concat(), &self.weight)
    }

    /// Noiseless outputs `y(t..t+N_u)` for plant state `x` at `t` and horizon inputs.
    pub fn predicted_outputs(&self, x: &DVector<f64>, horizon: &DVector<f64>) -> DVector<f64> {
        &self.free * x + &self.forced * horizon
    }

    /// Step 1.1: horizon inputs minimising `‖Φ(u) − U R‖²_F` with the past pinned,
    /// `|u| ≤ u_max` and predicted `|y| ≤ y_max`.
    pub fn step1_1_qp(
        &self,
        past: &DVector<f64>,
        x: &DVector<f64>,
        basis: &DMatrix<f64>,
        sqrt_target: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        let free_idx: Vec<usize> = (0..self.pinned.len()).filter(|&j| !self.pinned[j]).collect();
        let nz = free_idx.len();
        let mut horizon = DVector::zeros(self.pinned.len());
        if nz == 0 {
            return Ok(horizon);
        }
        let a = self.a_horizon.select_columns(free_idx.iter());
        let target = basis * sqrt_target;
        let rhs = DVector::from_column_slice(target.as_slice()) - &self.a_past * past;
        let hess = a.transpose() * &a * 2.0;
        let grad = a.transpose() * rhs * -2.0;

        let (u_max, y_max) = (self.spec.u_max, self.spec.y_max);
        let forced = self.forced.select_columns(free_idx.iter());
        let y_free = &self.free * x;
        let rows = forced.nrows();
        let mut a_in = DMatrix::zeros(2 * rows, nz);
        a_in.view_mut((0, 0), (rows, nz)).copy_from(&forced);
        a_in.view_mut((rows, 0), (rows, nz)).copy_from(&(-&forced));
        let mut b_in = DVector::zeros(2 * rows);
        b_in.rows_mut(0, rows).copy_from(&y_free.map(|v| y_max - v));
        b_in.rows_mut(rows, rows).copy_from(&y_free.map(|v| y_max + v));
        let sol = QuadraticProgram::new(hess, grad, a_in, b_in).with_bounds(-u_max, u_max).solve()?;
        for (k, &j) in free_idx.iter().enumerate() {
            horizon[j] = sol.x[k].clamp(-u_max, u_max);
        }
        Ok(horizon)
    }

    /// Cycle steps 1.1, 1.2 and 2 from `warm` until the iterate settles.
    ///
    /// The first cycle is always taken; a later cycle that raises `J` beyond
    /// [`within_descent`] is discarded and ends the loop.
    pub fn inner_cycle(&self, state: &InformationState, x: &DVector<f64>, warm: &CyclicIterate) -> Result<InnerReport> {
        let c = &state.c_matrix;
        let spec = &self.spec;
        let mut current = warm.clone();
        let mut trace = Vec::new();
        let mut degenerate = false;
        let mut converged = false;
        let mut rejected = false;
        let mut cycles = 0;
        // the warm plan may already meet the bound
        let phi = self.phi(&current.u);
        let slack = step2_psd_project(&(phi.transpose() * &phi + c));
        let cost = slack_cost(&phi, c, &slack);
        if cost <= spec.tol_j {
            current.slack = slack;
            current.cost = cost;
            trace.push(cost);
            return Ok(InnerReport { iterate: current, trace, cycles, converged: true, rejected, degenerate });
        }
        while cycles < spec.max_inner {
            let sqrt_target = linalg::psd_sqrt(&(&current.slack - c));
            let horizon = self.step1_1_qp(&current.u.past, x, &current.basis, &sqrt_target)?;
            let u = StackedInput { past: current.u.past.clone(), horizon };
            let phi = self.phi(&u);
            let (basis, deg) = procrustes_keeping(&phi, &sqrt_target, &current.basis);
            let slack = step2_psd_project(&(phi.transpose() * &phi + c));
            let cost = slack_cost(&phi, c, &slack);
            cycles += 1;
            if cycles > 1 && !within_descent(current.cost, cost) {
                rejected = true;
                break;
            }
            degenerate |= deg;
            let du = (&u.horizon - &current.u.horizon).norm() / u.horizon.norm().max(1.0);
            let ds = (&slack - &current.slack).norm() / slack.norm().max(1.0);
            current = CyclicIterate { u, basis, slack, cost };
            trace.push(cost);
            if cost <= spec.tol_j || (cycles > 1 && du <= spec.tol_inner && ds <= spec.tol_inner) {
                converged = true;
                break;
            }
        }
        Ok(InnerReport { iterate: current, trace, cycles, converged, rejected, degenerate })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignStatus {
    Success,
    MaxTime,
}

/// One outer sample of the receding horizon.
#[derive(Clone, Debug)]
pub struct SampleDiagnostics {
    /// One-based sample index.
    pub t: usize,
    pub cost: f64,
    /// `λ_min(ΦᵀΦ + Ī_F^{t−1} − target)` for the planned experiment.
    pub margin: f64,
    pub inner_cycles: usize,
    pub converged: bool,
    pub rejected: bool,
    pub degenerate: bool,
    /// Planned `u(t)`.
    pub first_input: DVector<f64>,
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DesignOutcome {
    pub status: DesignStatus,
    /// Designed experiment `n_u × T`: applied inputs followed by the final plan.
    pub inputs: DMatrix<f64>,
    /// Noiseless outputs at `θ₀`, `n_y × T`.
    pub outputs: DMatrix<f64>,
    /// Information of the designed experiment.
    pub fim: DMatrix<f64>,
    /// `(χ²_α(n_θ) γ / 2) V''_app`.
    pub target: DMatrix<f64>,
    pub hessian: DMatrix<f64>,
    pub lmi: LmiCheck,
    /// Sample at which `J ≤ tol_j` first held (one-based), or the last sample tried.
    pub stop_sample: usize,
    pub slack: DMatrix<f64>,
    pub basis: DMatrix<f64>,
    pub diagnostics: Vec<SampleDiagnostics>,
}

impl DesignOutcome {
    /// Experiment length `T*`.
    pub fn length(&self) -> usize {
        self.inputs.ncols()
    }
}

fn shift_horizon(h: &DVector<f64>, n_u: usize) -> DVector<f64> {
    let len = h.len();
    let mut out = DVector::zeros(len);
    if len > n_u {
        out.rows_mut(0, len - n_u).copy_from(&h.rows(n_u, len - n_u));
        out.rows_mut(len - n_u, n_u).copy_from(&h.rows(len - n_u, n_u));
    }
    out
}

/// Move the rows of `U` up one output sample with the horizon, repeating the last block,
/// and restore orthonormal columns.
fn shift_basis(u: &DMatrix<f64>, n_y: usize) -> DMatrix<f64> {
    let rows = u.nrows();
    let mut out = u.clone();
    if rows > n_y {
        out.rows_mut(0, rows - n_y).copy_from(&u.rows(n_y, rows - n_y));
    }
    let s = out.clone().svd(true, true);
    if s.singular_values.min() <= 1e-8 * s.singular_values.max() {
        return u.clone();
    }
    s.u.expect("requested") * s.v_t.expect("requested")
}

/// Design an input that meets `I_F ⪰ (χ²_α(n_θ) γ / 2) hessian` in as few samples as the solver finds.
pub fn receding_horizon_design(
    model: &ParametricLtiModel,
    spec: &ExperimentSpec,
    hessian: &DMatrix<f64>,
) -> Result<DesignOutcome> {
    let problem = DesignProblem::new(model, spec)?;
    design_with(&problem, model, hessian)
}

pub fn design_with(problem: &DesignProblem, model: &ParametricLtiModel, hessian: &DMatrix<f64>) -> Result<DesignOutcome> {
    let spec = &problem.spec;
    let bank = &problem.bank;
    let p = bank.n_theta();
    if hessian.shape() != (p, p) {
        return Err(Error::Dimension(format!("Hessian is {:?}, expected {p}x{p}", hessian.shape())));
    }
    let (n, n_u) = (bank.truncation_n, bank.n_u);
    let target = spec.information_target(hessian);
    let mut state = InformationState::new(target.clone());
    let mut iterate = CyclicIterate {
        u: StackedInput::zeros(bank),
        basis: initial_basis(bank.rows(), p, spec.seed)?,
        slack: step2_psd_project(&state.c_matrix),
        cost: f64::INFINITY,
    };
    let mut x = DVector::zeros(problem.plant.n_x());
    // applied inputs, with n−1 zero samples in front for the pinned past block
    let mut history = DMatrix::<f64>::zeros(n_u, n - 1);
    let mut diagnostics = Vec::new();
    let mut status = DesignStatus::MaxTime;
    let mut planned_fim = state.i_bar_past.clone();

    for t in 0..spec.max_time {
        let cols = history.ncols();
        iterate.u.past = lti::stack(&history.columns(cols - (n - 1), n - 1).into_owned());
        let report = problem.inner_cycle(&state, &x, &iterate)?;
        iterate = report.iterate;
        let phi = problem.phi(&iterate.u);
        planned_fim = fisher::fim_from_phi(&phi, &state)?;
        let margin = linalg::min_eigenvalue(&(&planned_fim - &target));
        diagnostics.push(SampleDiagnostics {
            t: t + 1,
            cost: iterate.cost,
            margin,
            inner_cycles: report.cycles,
            converged: report.converged,
            rejected: report.rejected,
            degenerate: report.degenerate,
            first_input: iterate.u.horizon.rows(0, n_u).into_owned(),
            trace: report.trace,
        });
        if iterate.cost <= spec.tol_j {
            status = DesignStatus::Success;
            break;
        }
        if t + 1 == spec.max_time {
            break;
        }
        let u_t = iterate.u.horizon.rows(0, n_u).into_owned();
        history = history.insert_column(cols, 0.0);
        history.set_column(cols, &u_t);
        let recent = history.columns(cols + 1 - n, n).into_owned();
        state = state.commit_step(bank, &recent, &problem.lambda_inv);
        x = &problem.plant.a * &x + &problem.plant.b * &u_t;
        iterate.u.horizon = shift_horizon(&iterate.u.horizon, n_u);
        iterate.basis = shift_basis(&iterate.basis, bank.n_y);
    }

    let applied = history.columns(n - 1, history.ncols() - (n - 1)).into_owned();
    let plan = lti::unstack(&iterate.u.horizon, n_u);
    let mut inputs = DMatrix::zeros(n_u, applied.ncols() + plan.ncols());
    inputs.columns_mut(0, applied.ncols()).copy_from(&applied);
    inputs.columns_mut(applied.ncols(), plan.ncols()).copy_from(&plan);
    let outputs = model.simulate_noiseless(&model.theta_g, &inputs)?;
    let lmi = appset::lmi_satisfied(&planned_fim, hessian, spec.gamma, spec.alpha, p, 1e-6);
    Ok(DesignOutcome {
        status,
        inputs,
        outputs,
        fim: planned_fim,
        target,
        hessian: hessian.clone(),
        lmi,
        stop_sample: diagnostics.len(),
        slack: iterate.slack,
        basis: iterate.basis,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness;

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        linalg::symmetrize(&m)
    }

    fn random_semi_unitary(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0)).qr().q()
    }

    #[test]
    fn procrustes_exact_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u0 = random_semi_unitary(&mut rng, 6, 2);
        let b = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let r = linalg::psd_sqrt(&(&b * b.transpose() + DMatrix::identity(2, 2) * 0.1));
        let phi = &u0 * &r;
        let (u, deg) = step1_2_procrustes(&phi, &r);
        assert!(!deg);
        assert!((phi - u * r).norm() < 1e-12);
    }

    #[test]
    fn procrustes_identity_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_semi_unitary(&mut rng, 3, 3);
        let (u, _) = step1_2_procrustes(&q, &DMatrix::identity(3, 3));
        assert!((u - q).amax() < 1e-12);
    }

    #[test]
    fn procrustes_is_semi_unitary_even_when_degenerate() {
        let (u, deg) = step1_2_procrustes(&DMatrix::zeros(6, 2), &DMatrix::identity(2, 2));
        assert!(deg);
        assert!((u.transpose() * &u - DMatrix::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn procrustes_beats_random_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
        let r = linalg::project_psd(&random_sym(&mut rng, 2)) + DMatrix::identity(2, 2) * 0.01;
        let (u, _) = step1_2_procrustes(&phi, &r);
        let best = (&phi - &u * &r).norm_squared();
        for _ in 0..1000 {
            let cand = random_semi_unitary(&mut rng, 6, 2);
            assert!(best <= (&phi - cand * &r).norm_squared() + 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!((step2_psd_project(&m) - DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).amax() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let psd = &b * b.transpose();
        assert!((step2_psd_project(&psd) - &psd).amax() < 1e-12);
    }

    #[test]
    fn initial_basis_is_orthonormal_and_checked() {
        let u = initial_basis(6, 4, 9).unwrap();
        assert!((u.transpose() * &u - DMatrix::identity(4, 4)).norm() < 1e-12);
        assert!(matches!(initial_basis(3, 4, 9), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn shift_repeats_last_block() {
        let h = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(shift_horizon(&h, 1), DVector::from_vec(vec![2.0, 3.0, 3.0]));
    }

    #[test]
    fn zero_target_with_huge_bounds_gives_zero_input() {
        let m = harness::example1_model();
        let mut spec = harness::example1_spec();
        spec.u_max = 1e6;
        spec.y_max = 1e6;
        let problem = DesignProblem::new(&m, &spec).unwrap();
        let bank = &problem.bank;
        let u = problem
            .step1_1_qp(
                &DVector::zeros(bank.past_len()),
                &DVector::zeros(2),
                &initial_basis(bank.rows(), 2, 0).unwrap(),
                &DMatrix::zeros(2, 2),
            )
            .unwrap();
        assert!(u.amax() < 1e-9);
    }

    #[test]
    fn satisfied_target_needs_no_cycle() {
        let m = harness::example1_model();
        let spec = harness::example1_spec();
        let problem = DesignProblem::new(&m, &spec).unwrap();
        let mut state = InformationState::new(DMatrix::identity(2, 2));
        state.i_bar_past = DMatrix::identity(2, 2) * 3.0;
        state.c_matrix = &state.i_bar_past - &state.target;
        let warm = CyclicIterate {
            u: StackedInput::zeros(&problem.bank),
            basis: initial_basis(problem.bank.rows(), 2, 0).unwrap(),
            slack: state.c_matrix.clone(),
            cost: f64::INFINITY,
        };
        let rep = problem.inner_cycle(&state, &DVector::zeros(2), &warm).unwrap();
        assert_eq!(rep.cycles, 0);
        assert!(rep.converged);
        assert!(rep.iterate.cost <= spec.tol_j);
        assert_eq!(rep.iterate.u, warm.u);
    }

    #[test]
    fn vanishing_gamma_stops_at_first_sample() {
        let m = harness::example1_model();
        let mut spec = harness::example1_spec();
        spec.gamma = 1e-9;
        let h = DMatrix::identity(2, 2);
        let out = receding_horizon_design(&m, &spec, &h).unwrap();
        assert_eq!(out.status, DesignStatus::Success);
        assert_eq!(out.stop_sample, 1);
        assert_eq!(out.inputs.amax(), 0.0);
    }
}
