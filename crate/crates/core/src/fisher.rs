//! Reduced Fisher information in the stacked-input form.
//!
//! The information gathered over a receding horizon is `Φ(u)ᵀΦ(u)` where
//! column `i` of `Φ` is `Λ_e^{-1/2} F_i u`; adding the information already
//! accumulated from applied inputs gives the matrix the design constrains.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::SensitivityBank;

/// Applied inputs that the horizon still sees, followed by the horizon decision variables.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedInput {
    /// `u*(t−n+1), …, u*(t−1)`, stacked, `(n−1)·n_u` entries.
    pub past: DVector<f64>,
    /// `u(t), …, u(t+N_u)`, stacked, `(N_u+1)·n_u` entries.
    pub horizon: DVector<f64>,
}

impl StackedInput {
    pub fn zeros(bank: &SensitivityBank) -> Self {
        Self { past: DVector::zeros(bank.past_len()), horizon: DVector::zeros(bank.horizon_len()) }
    }

    /// `[past; horizon]`.
    pub fn concat(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.past.len() + self.horizon.len());
        v.rows_mut(0, self.past.len()).copy_from(&self.past);
        v.rows_mut(self.past.len(), self.horizon.len()).copy_from(&self.horizon);
        v
    }

    pub fn len(&self) -> usize {
        self.past.len() + self.horizon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `Λ_e^{-1/2} = I ⊗ Λ^{-1/2}` for a horizon of `blocks` output samples.
pub fn noise_weight(lambda: &DMatrix<f64>, blocks: usize) -> Result<DMatrix<f64>> {
    let inv_sqrt = linalg::spd_inv_sqrt(lambda)
        .ok_or_else(|| Error::InvalidModel("noise covariance must be positive definite".into()))?;
    Ok(linalg::block_diag_repeat(&inv_sqrt, blocks))
}

/// `Φ(u) = [Λ_e^{-1/2} F_1 u, …, Λ_e^{-1/2} F_{n_θ} u]`.
pub fn build_phi(bank: &SensitivityBank, u: &StackedInput, lambda: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u.past.len() != bank.past_len() || u.horizon.len() != bank.horizon_len() {
        return Err(Error::Dimension(format!(
            "stacked input has blocks ({}, {}), expected ({}, {})",
            u.past.len(),
            u.horizon.len(),
            bank.past_len(),
            bank.horizon_len()
        )));
    }
    if lambda.shape() != (bank.n_y, bank.n_y) {
        return Err(Error::Dimension(format!("Λ is {:?}, expected {n}x{n}", lambda.shape(), n = bank.n_y)));
    }
    let weight = noise_weight(lambda, bank.horizon_nu + 1)?;
    Ok(phi_with_weight(bank, &u.concat(), &weight))
}

/// [`build_phi`] with a precomputed `Λ_e^{-1/2}` and concatenated input.
pub fn phi_with_weight(bank: &SensitivityBank, u: &DVector<f64>, weight: &DMatrix<f64>) -> DMatrix<f64> {
    let mut phi = DMatrix::zeros(bank.rows(), bank.n_theta());
    for (i, f) in bank.toeplitz.iter().enumerate() {
        phi.set_column(i, &(weight * (f * u)));
    }
    phi
}

/// `ΦᵀΦ + Ī_F^{t−1}`, symmetrized.
pub fn fim_from_phi(phi: &DMatrix<f64>, past: &InformationState) -> Result<DMatrix<f64>> {
    if phi.ncols() != past.i_bar_past.nrows() {
        return Err(Error::Dimension(format!(
            "Φ has {} columns, information matrix is {}x{}",
            phi.ncols(),
            past.i_bar_past.nrows(),
            past.i_bar_past.ncols()
        )));
    }
    Ok(linalg::symmetrize(&(phi.transpose() * phi + &past.i_bar_past)))
}

/// Information accumulated from applied inputs and the matching offset `C(t−1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InformationState {
    /// `Ī_F^{t−1}`.
    pub i_bar_past: DMatrix<f64>,
    /// `C(t−1) = Ī_F^{t−1} − target`.
    pub c_matrix: DMatrix<f64>,
    /// `(χ²_α(n_θ) γ / 2) V''_app(θ₀)`.
    pub target: DMatrix<f64>,
    /// Number of committed samples; the next sample to design is `t + 1` (one-based).
    pub t: usize,
}

impl InformationState {
    /// Nothing applied yet: `C(0) = −target`.
    pub fn new(target: DMatrix<f64>) -> Self {
        let target = linalg::symmetrize(&target);
        let n = target.nrows();
        Self { i_bar_past: DMatrix::zeros(n, n), c_matrix: -&target, target, t: 0 }
    }

    /// Add the information of the newly completed output sample.
    ///
    /// `recent` holds the last `n` applied inputs (oldest first, ending with the one just
    /// applied); missing older samples are treated as zero.
    pub fn commit_step(&self, bank: &SensitivityBank, recent: &DMatrix<f64>, lambda_inv: &DMatrix<f64>) -> Self {
        let psi = bank.filtered_sample(recent);
        let term = psi.transpose() * lambda_inv * &psi;
        let i_bar_past = linalg::symmetrize(&(&self.i_bar_past + term));
        let c_matrix = &i_bar_past - &self.target;
        Self { i_bar_past, c_matrix, target: self.target.clone(), t: self.t + 1 }
    }
}

/// Batch reduced information of a whole input record (zero before the first sample),
/// counting outputs `0..samples`.
pub fn batch_information(
    bank: &SensitivityBank,
    inputs: &DMatrix<f64>,
    samples: usize,
    lambda_inv: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = bank.truncation_n;
    let mut info = DMatrix::zeros(bank.n_theta(), bank.n_theta());
    let mut window = DMatrix::zeros(bank.n_u, n);
    for t in 0..samples {
        for k in 0..n {
            let src = t as isize - (n - 1 - k) as isize;
            let col = if src >= 0 && (src as usize) < inputs.ncols() {
                inputs.column(src as usize).into_owned()
            } else {
                DVector::zeros(bank.n_u)
            };
            window.set_column(k, &col);
        }
        let psi = bank.filtered_sample(&window);
        info += psi.transpose() * lambda_inv * &psi;
    }
    linalg::symmetrize(&info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{sensitivity_impulse_responses, ParametricLtiModel, DEFAULT_TAIL_TOLERANCE};

    fn fir_bank(nu: usize) -> SensitivityBank {
        let m = ParametricLtiModel::fir(&[10.0, -9.0], 1.0).unwrap();
        sensitivity_impulse_responses(&m, &m.theta_g, 3, nu, DEFAULT_TAIL_TOLERANCE).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_phi() {
        let bank = fir_bank(4);
        let phi = build_phi(&bank, &StackedInput::zeros(&bank), &DMatrix::identity(1, 1)).unwrap();
        assert!(phi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_pulse_selects_printed_columns() {
        let bank = fir_bank(4);
        let u = StackedInput {
            past: DVector::from_vec(vec![0.0, 0.0]),
            horizon: DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0]),
        };
        let phi = build_phi(&bank, &u, &DMatrix::identity(1, 1)).unwrap();
        let mut c1 = DVector::zeros(5);
        c1[1] = -1.0;
        let mut c2 = DVector::zeros(5);
        c2[2] = -1.0;
        assert_eq!(phi.column(0), c1);
        assert_eq!(phi.column(1), c2);
    }

    #[test]
    fn phi_is_linear_in_input() {
        let bank = fir_bank(4);
        let u = StackedInput {
            past: DVector::from_vec(vec![0.3, -0.2]),
            horizon: DVector::from_vec(vec![0.1, 0.5, -0.4, 0.2, 0.0]),
        };
        let scaled = StackedInput { past: &u.past * 2.5, horizon: &u.horizon * 2.5 };
        let l = DMatrix::identity(1, 1);
        let a = build_phi(&bank, &u, &l).unwrap();
        let b = build_phi(&bank, &scaled, &l).unwrap();
        assert!((a * 2.5 - b).amax() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let bank = fir_bank(4);
        let u = StackedInput { past: DVector::zeros(1), horizon: DVector::zeros(5) };
        assert!(matches!(build_phi(&bank, &u, &DMatrix::identity(1, 1)), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_commit_changes_nothing() {
        let bank = fir_bank(4);
        let s = InformationState::new(DMatrix::identity(2, 2));
        let next = s.commit_step(&bank, &DMatrix::zeros(1, 3), &DMatrix::identity(1, 1));
        assert_eq!(next.i_bar_past, s.i_bar_past);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn two_commits_of_half() {
        // after u(1) = u(2) = 0.5 the completed samples see u(t−1) = 0.5 once
        let bank = fir_bank(4);
        let lam = 2.0;
        let linv = DMatrix::from_element(1, 1, 1.0 / lam);
        let mut s = InformationState::new(DMatrix::zeros(2, 2));
        let inputs = [0.5, 0.5];
        let mut hist = vec![0.0, 0.0];
        for u in inputs {
            hist.push(u);
            let recent = DMatrix::from_row_slice(1, 3, &hist[hist.len() - 3..]);
            s = s.commit_step(&bank, &recent, &linv);
        }
        assert!((s.i_bar_past[(0, 0)] - 0.25 / lam).abs() < 1e-15);
        assert_eq!(s.i_bar_past[(1, 1)], 0.0);
        assert_eq!(s.c_matrix, s.i_bar_past);
    }

    #[test]
    fn constant_input_information() {
        // u ≡ 0.5 over N samples: every completed sample adds 0.25·[[1,1],[1,1]] except the first two
        let bank = fir_bank(4);
        let n = 40;
        let u = DMatrix::from_element(1, n, 0.5);
        let info = batch_information(&bank, &u, n, &DMatrix::identity(1, 1));
        assert!((info[(0, 0)] - 0.25 * (n - 1) as f64).abs() < 1e-12);
        assert!((info[(0, 1)] - 0.25 * (n - 2) as f64).abs() < 1e-12);
        assert!((info[(1, 1)] - 0.25 * (n - 2) as f64).abs() < 1e-12);
    }
}
