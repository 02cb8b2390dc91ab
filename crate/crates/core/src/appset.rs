//! Application cost, its Hessian, and the ellipsoid calculus behind the
//! experiment-design constraint `I_F / χ²_α(n_θ) ⪰ (γ/2) V''_app`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::mpc::{self, MpcController};
use crate::linalg;
use crate::lti::ParametricLtiModel;

/// User-facing knobs of one design run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Accuracy demand γ: acceptable models satisfy `V_app(θ) ≤ 1/γ`.
    pub gamma: f64,
    /// Confidence level of the identification ellipsoid.
    pub alpha: f64,
    pub u_max: f64,
    pub y_max: f64,
    /// N_u: the horizon covers `N_u + 1` samples.
    pub horizon_nu: usize,
    /// n: truncation length of the sensitivity impulse responses.
    pub truncation_n: usize,
    #[serde(default = "defaults::tol_j")]
    pub tol_j: f64,
    #[serde(default = "defaults::tol_inner")]
    pub tol_inner: f64,
    #[serde(default = "defaults::max_inner")]
    pub max_inner: usize,
    #[serde(default = "defaults::max_time")]
    pub max_time: usize,
    #[serde(default = "defaults::tail_tol")]
    pub tail_tol: f64,
    /// Seed of the random matrix whose QR gives the initial semi-unitary basis.
    #[serde(default)]
    pub seed: u64,
}

pub mod defaults {
    pub fn tol_j() -> f64 {
        1e-12
    }
    pub fn tol_inner() -> f64 {
        1e-9
    }
    pub fn max_inner() -> usize {
        500
    }
    pub fn max_time() -> usize {
        1000
    }
    pub fn tail_tol() -> f64 {
        crate::lti::DEFAULT_TAIL_TOLERANCE
    }
}

impl ExperimentSpec {
    /// Spec with default tolerances.
    pub fn new(gamma: f64, alpha: f64, u_max: f64, y_max: f64, horizon_nu: usize, truncation_n: usize) -> Self {
        Self {
            gamma,
            alpha,
            u_max,
            y_max,
            horizon_nu,
            truncation_n,
            tol_j: defaults::tol_j(),
            tol_inner: defaults::tol_inner(),
            max_inner: defaults::max_inner(),
            max_time: defaults::max_time(),
            tail_tol: defaults::tail_tol(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("u_max", self.u_max),
            ("y_max", self.y_max),
            ("tol_j", self.tol_j),
            ("tol_inner", self.tol_inner),
            ("tail_tol", self.tail_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidSpec(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidSpec(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        for (name, v) in [
            ("horizon_nu", self.horizon_nu),
            ("truncation_n", self.truncation_n),
            ("max_inner", self.max_inner),
            ("max_time", self.max_time),
        ] {
            if v == 0 {
                return Err(Error::InvalidSpec(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// `(χ²_α(n_θ) γ / 2) V''_app`.
    pub fn information_target(&self, hessian: &DMatrix<f64>) -> DMatrix<f64> {
        let chi2 = chi2_percentile(self.alpha, hessian.nrows());
        linalg::symmetrize(hessian) * (chi2 * self.gamma / 2.0)
    }
}

// ---------------------------------------------------------------------------
// χ² percentile

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp().min(1.0)
    } else {
        // continued fraction for Q, modified Lentz
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        let q = (-x + a * x.ln() - ln_gamma(a)).exp() * h;
        (1.0 - q).max(0.0)
    }
}

pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    regularized_lower_gamma(dof as f64 / 2.0, x / 2.0)
}

/// α-percentile of the χ² distribution with `dof` degrees of freedom, by bisection.
pub fn chi2_percentile(alpha: f64, dof: usize) -> f64 {
    assert!(dof >= 1, "χ² needs at least one degree of freedom");
    if alpha <= 0.0 {
        return 0.0;
    }
    assert!(alpha < 1.0, "α must be below 1");
    let mut lo = 0.0;
    let mut hi = dof as f64 + 10.0;
    while chi2_cdf(hi, dof) < alpha {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi2_cdf(mid, dof) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// Hessian

/// Relative negative curvature tolerated (and clamped) before the Hessian is rejected.
pub const NEGATIVE_CURVATURE_TOL: f64 = 1e-6;

fn hessian_at_step(
    f: &dyn Fn(&DVector<f64>) -> Result<f64>,
    theta0: &DVector<f64>,
    steps: &DVector<f64>,
    f0: f64,
) -> Result<DMatrix<f64>> {
    let n = theta0.len();
    let mut h = DMatrix::zeros(n, n);
    let shifted = |pairs: &[(usize, f64)]| -> Result<f64> {
        let mut th = theta0.clone();
        for &(i, d) in pairs {
            th[i] += d;
        }
        f(&th)
    };
    for i in 0..n {
        let hi = steps[i];
        let fp = shifted(&[(i, hi)])?;
        let fm = shifted(&[(i, -hi)])?;
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let fpp = shifted(&[(i, hi), (j, hj)])?;
            let fpm = shifted(&[(i, hi), (j, -hj)])?;
            let fmp = shifted(&[(i, -hi), (j, hj)])?;
            let fmm = shifted(&[(i, -hi), (j, -hj)])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Central-difference Hessian with steps `1e-4·max(1, |θ₀ᵢ|)` and one Richardson level.
///
/// Small negative eigenvalues are clamped to zero; materially negative curvature is an error.
pub fn numerical_hessian(f: &dyn Fn(&DVector<f64>) -> Result<f64>, theta0: &DVector<f64>) -> Result<DMatrix<f64>> {
    let steps = theta0.map(|t| 1e-4 * t.abs().max(1.0));
    numerical_hessian_with_steps(f, theta0, &steps)
}

pub fn numerical_hessian_with_steps(
    f: &dyn Fn(&DVector<f64>) -> Result<f64>,
    theta0: &DVector<f64>,
    steps: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let f0 = f(theta0)?;
    let coarse = hessian_at_step(f, theta0, steps, f0)?;
    let fine = hessian_at_step(f, theta0, &(steps * 0.5), f0)?;
    let h = linalg::symmetrize(&((fine * 4.0 - coarse) / 3.0));
    let eig = linalg::sym_eigen(&h);
    let scale = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min < -NEGATIVE_CURVATURE_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NegativeCurvature { min_eigenvalue: min });
    }
    Ok(linalg::project_psd(&h))
}

// ---------------------------------------------------------------------------
// Application cost

/// How the control application is exercised when measuring model mismatch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApplicationScenario {
    /// Open-loop step of `amplitude` on every input channel from rest.
    OpenLoopStep {
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default = "default_length")]
        length: usize,
    },
    /// The MPC of [`crate::harness::mpc`] running on the true plant.
    Mpc(MpcScenario),
}

fn unit() -> f64 {
    1.0
}

fn default_length() -> usize {
    50
}

/// MPC in the loop: the plant rests at the steady state of a held input
/// `initial_input`, then the controller tracks the constant `reference`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcScenario {
    /// Output tracking weight (times identity).
    #[serde(default = "unit")]
    pub q: f64,
    /// Input-increment weight (times identity).
    #[serde(default)]
    pub r: f64,
    /// Number of predicted outputs and of free input moves.
    pub horizon: usize,
    #[serde(default)]
    pub reference: f64,
    #[serde(default)]
    pub initial_input: f64,
    #[serde(default = "default_length")]
    pub length: usize,
    pub u_max: f64,
    pub y_max: f64,
}

impl Default for ApplicationScenario {
    fn default() -> Self {
        ApplicationScenario::OpenLoopStep { amplitude: 1.0, length: default_length() }
    }
}

impl ApplicationScenario {
    pub fn length(&self) -> usize {
        match self {
            ApplicationScenario::OpenLoopStep { length, .. } => *length,
            ApplicationScenario::Mpc(s) => s.length,
        }
    }

    /// Output of the true plant (`model.theta_g`) when the application is designed from `theta_hat`.
    pub fn response(&self, model: &ParametricLtiModel, theta_hat: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self {
            ApplicationScenario::OpenLoopStep { amplitude, length } => {
                let u = DMatrix::from_element(model.n_u, *length, *amplitude);
                model.simulate(theta_hat, &u, None)
            }
            ApplicationScenario::Mpc(s) => {
                let controller = MpcController::new(
                    &model.with_theta(theta_hat),
                    &(DMatrix::identity(model.n_y, model.n_y) * s.q),
                    &(DMatrix::identity(model.n_u, model.n_u) * s.r),
                    s.horizon,
                    s.u_max,
                    s.y_max,
                )?;
                let u0 = DVector::from_element(model.n_u, s.initial_input);
                let reference = DVector::from_element(model.n_y, s.reference);
                let run = mpc::run_closed_loop(model, &controller, &u0, |_| reference.clone(), s.length)?;
                Ok(run.outputs)
            }
        }
    }
}

/// `(1/N) Σ ‖y(t, θ₀) − y(t, θ̂)‖²` over the scenario.
pub fn vapp_output_mismatch(
    model: &ParametricLtiModel,
    theta_hat: &DVector<f64>,
    scenario: &ApplicationScenario,
) -> Result<f64> {
    let y0 = scenario.response(model, &model.theta_g)?;
    let yh = scenario.response(model, theta_hat)?;
    let n = y0.ncols().max(1) as f64;
    Ok((y0 - yh).iter().map(|v| v * v).sum::<f64>() / n)
}

/// Hessian of the application cost at the model's nominal parameters.
pub fn application_hessian(model: &ParametricLtiModel, scenario: &ApplicationScenario) -> Result<DMatrix<f64>> {
    let y0 = scenario.response(model, &model.theta_g)?;
    let n = y0.ncols().max(1) as f64;
    let f = |th: &DVector<f64>| -> Result<f64> {
        let yh = scenario.response(model, th)?;
        Ok((&y0 - yh).iter().map(|v| v * v).sum::<f64>() / n)
    };
    numerical_hessian(&f, &model.theta_g)
}

// ---------------------------------------------------------------------------
// Ellipsoids and the LMI

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmiCheck {
    pub satisfied: bool,
    /// `λ_min(I_F / χ²_α(n_θ) − (γ/2) V''_app)`.
    pub margin: f64,
}

pub fn lmi_satisfied(
    i_f: &DMatrix<f64>,
    hessian: &DMatrix<f64>,
    gamma: f64,
    alpha: f64,
    n_theta: usize,
    slack_tol: f64,
) -> LmiCheck {
    let chi2 = chi2_percentile(alpha, n_theta);
    let m = i_f / chi2 - hessian * (gamma / 2.0);
    let margin = linalg::min_eigenvalue(&m);
    LmiCheck { satisfied: margin >= -slack_tol, margin }
}

/// Application ellipsoid `{θ : (θ−θ₀)ᵀ V'' (θ−θ₀) ≤ 2/γ}` and identification ellipsoid
/// `{θ : (θ−θ₀)ᵀ I_F (θ−θ₀) ≤ χ²_α(n_θ)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipsoidPair {
    pub app_shape: DMatrix<f64>,
    pub id_shape: DMatrix<f64>,
    pub center: DVector<f64>,
    pub gamma: f64,
    pub alpha: f64,
    pub chi2: f64,
}

/// Boundary samples of one ellipse in a 2-D slice through the centre.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipseSlice {
    pub i: usize,
    pub j: usize,
    /// `None` when the slice is unbounded (degenerate shape).
    pub points: Option<Vec<(f64, f64)>>,
}

impl EllipsoidPair {
    pub fn new(app_shape: DMatrix<f64>, id_shape: DMatrix<f64>, center: DVector<f64>, gamma: f64, alpha: f64) -> Self {
        let chi2 = chi2_percentile(alpha, center.len());
        Self { app_shape, id_shape, center, gamma, alpha, chi2 }
    }

    fn quad(shape: &DMatrix<f64>, center: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        let d = theta - center;
        d.dot(&(shape * &d))
    }

    pub fn app_level(&self) -> f64 {
        2.0 / self.gamma
    }

    pub fn in_app(&self, theta: &DVector<f64>) -> bool {
        Self::quad(&self.app_shape, &self.center, theta) <= self.app_level()
    }

    pub fn in_id(&self, theta: &DVector<f64>) -> bool {
        Self::quad(&self.id_shape, &self.center, theta) <= self.chi2
    }

    /// `E_SI ⊆ E_app` via the LMI.
    pub fn containment(&self, slack_tol: f64) -> LmiCheck {
        lmi_satisfied(&self.id_shape, &self.app_shape, self.gamma, self.alpha, self.center.len(), slack_tol)
    }

    fn slice(shape: &DMatrix<f64>, level: f64, center: &DVector<f64>, i: usize, j: usize, n: usize) -> EllipseSlice {
        let sub = DMatrix::from_row_slice(
            2,
            2,
            &[shape[(i, i)], shape[(i, j)], shape[(j, i)], shape[(j, j)]],
        );
        let eig = linalg::sym_eigen(&sub);
        if eig.eigenvalues.min() <= 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE) {
            return EllipseSlice { i, j, points: None };
        }
        let map = linalg::spectral_map(&sub, |l| (level / l).sqrt());
        let points = (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let p = &map * DVector::from_vec(vec![a.cos(), a.sin()]);
                (center[i] + p[0], center[j] + p[1])
            })
            .collect();
        EllipseSlice { i, j, points: Some(points) }
    }

    pub fn app_slice(&self, i: usize, j: usize, n: usize) -> EllipseSlice {
        Self::slice(&self.app_shape, self.app_level(), &self.center, i, j, n)
    }

    pub fn id_slice(&self, i: usize, j: usize, n: usize) -> EllipseSlice {
        Self::slice(&self.id_shape, self.chi2, &self.center, i, j, n)
    }
}
