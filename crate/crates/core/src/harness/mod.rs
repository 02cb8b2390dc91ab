//! Validation loop: prediction-error identification from simulated data, Monte
//! Carlo membership statistics, and the fixtures of the two worked examples.

pub mod mpc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appset::{ApplicationScenario, EllipsoidPair, ExperimentSpec, MpcScenario};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::{Coef, ModelStructure, ParametricLtiModel};

/// Gradient norm below which Gauss–Newton declares convergence.
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub theta: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Norm of the gradient of `½ Σ εᵀε` at `theta`.
    pub gradient_norm: f64,
}

/// Where a run's noise came from: `ChaCha8Rng::seed_from_u64(base)` with `set_stream(stream)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeed {
    pub base: u64,
    pub stream: u64,
}

/// White Gaussian noise `n_e × samples` with covariance `lambda` (PSD; zero allowed).
pub fn noise_realization(lambda: &DMatrix<f64>, samples: usize, seed: RunSeed) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.base);
    rng.set_stream(seed.stream);
    let n = lambda.nrows();
    let total = n * samples;
    let mut z = Vec::with_capacity(total + 1);
    while z.len() < total {
        // Box–Muller
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        z.push(r * a.cos());
        z.push(r * a.sin());
    }
    z.truncate(total);
    linalg::psd_sqrt(lambda) * DMatrix::from_vec(n, samples, z)
}

fn prediction_errors(model: &ParametricLtiModel, theta: &DVector<f64>, u: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DVector<f64>> {
    let e = model.whiten(&(y - model.simulate_noiseless(theta, u)?));
    Ok(DVector::from_column_slice(e.as_slice()))
}

/// Rows: stacked whitened samples; column `i`: `∂ŷ/∂θ_G[i]`.
fn prediction_jacobian(model: &ParametricLtiModel, theta: &DVector<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rows = model.n_y * u.ncols();
    let mut jac = DMatrix::zeros(rows, model.n_theta());
    for i in 0..model.n_theta() {
        let s = model.whiten(&model.output_sensitivity(theta, u, i)?);
        jac.set_column(i, &DVector::from_column_slice(s.as_slice()));
    }
    Ok(jac)
}

fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let tol = 1e-13 * svd.singular_values.max() * (a.nrows().max(a.ncols()) as f64);
    if svd.singular_values.min() <= tol {
        return Err(Error::InvalidModel("regression Gramian is singular; the input is not informative enough".into()));
    }
    svd.solve(b, tol).map_err(|e| Error::InvalidModel(e.into()))
}

/// Prediction-error estimate of `θ_G` from `(u, y)` with the noise model held at `θ_H`.
///
/// FIR models are linear in the parameters and solved in one least-squares step.
/// Other structures use Levenberg–Marquardt started at `θ₀` perturbed by 1%.
pub fn estimate(model: &ParametricLtiModel, u: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Estimate> {
    if u.nrows() != model.n_u || y.nrows() != model.n_y || u.ncols() != y.ncols() {
        return Err(Error::Dimension(format!(
            "data is u {:?}, y {:?} for a model with {} inputs and {} outputs",
            u.shape(),
            y.shape(),
            model.n_u,
            model.n_y
        )));
    }
    if let ModelStructure::Fir { .. } = model.structure {
        let zero = DVector::zeros(model.n_theta());
        let jac = prediction_jacobian(model, &zero, u)?;
        let yw = prediction_errors(model, &zero, u, y)?;
        let theta = lstsq(&jac, &yw)?;
        let r = prediction_errors(model, &theta, u, y)?;
        let gradient_norm = (jac.transpose() * r).norm();
        return Ok(Estimate { theta, converged: true, iterations: 1, gradient_norm });
    }

    let mut theta = model.theta_g.map(|v| v * 1.01);
    let mut r = prediction_errors(model, &theta, u, y)?;
    let mut cost = r.norm_squared();
    let mut mu = 1e-3;
    let mut gradient_norm = f64::INFINITY;
    for it in 0..MAX_ITERATIONS {
        let jac = prediction_jacobian(model, &theta, u)?;
        let g = jac.transpose() * &r;
        gradient_norm = g.norm();
        if gradient_norm <= GRADIENT_TOLERANCE {
            return Ok(Estimate { theta, converged: true, iterations: it, gradient_norm });
        }
        let jtj = jac.transpose() * &jac;
        let mut stepped = false;
        while mu < 1e12 {
            let mut lhs = jtj.clone();
            for k in 0..lhs.nrows() {
                lhs[(k, k)] += mu * jtj[(k, k)].max(f64::MIN_POSITIVE);
            }
            let Some(delta) = lhs.cholesky().map(|c| c.solve(&g)) else {
                mu *= 10.0;
                continue;
            };
            let trial = &theta + &delta;
            let trial_r = match prediction_errors(model, &trial, u, y) {
                Ok(v) => v,
                Err(Error::Diverged { .. }) => {
                    mu *= 10.0;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let trial_cost = trial_r.norm_squared();
            if trial_cost < cost {
                theta = trial;
                r = trial_r;
                cost = trial_cost;
                mu = (mu / 10.0).max(1e-12);
                stepped = true;
                break;
            }
            mu *= 10.0;
        }
        if !stepped {
            return Ok(Estimate { theta, converged: false, iterations: it, gradient_norm });
        }
    }
    Ok(Estimate { theta, converged: false, iterations: MAX_ITERATIONS, gradient_norm })
}

/// Simulate `y = G(θ₀)u + H e` with noise of covariance `lambda` drawn from `seed`, then estimate.
pub fn identify(model: &ParametricLtiModel, u: &DMatrix<f64>, seed: RunSeed, lambda: &DMatrix<f64>) -> Result<Estimate> {
    let e = noise_realization(lambda, u.ncols(), seed);
    let y = model.simulate(&model.theta_g, u, Some(&e))?;
    estimate(model, u, &y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloReport {
    /// One estimate per run, in run order (NaN where identification failed outright).
    pub estimates: Vec<DVector<f64>>,
    pub inside_id: Vec<bool>,
    pub inside_app: Vec<bool>,
    /// Fractions over the runs that were not flagged; `None` when no run counts.
    pub inside_id_fraction: Option<f64>,
    pub inside_app_fraction: Option<f64>,
    pub seeds: Vec<RunSeed>,
    /// Runs whose estimator did not converge; excluded from the fractions.
    pub flagged: Vec<usize>,
}

/// `runs` independent identification experiments with the designed input.
///
/// Run `k` draws its noise from stream `k` of the generator seeded with `base_seed`,
/// so the report is identical for identical arguments regardless of thread scheduling.
pub fn monte_carlo(
    model: &ParametricLtiModel,
    designed_u: &DMatrix<f64>,
    ellipsoids: &EllipsoidPair,
    runs: usize,
    base_seed: u64,
    lambda: Option<&DMatrix<f64>>,
) -> MonteCarloReport {
    let lambda = lambda.unwrap_or(&model.lambda);
    let seeds: Vec<RunSeed> = (0..runs as u64).map(|stream| RunSeed { base: base_seed, stream }).collect();
    let results: Vec<Option<Estimate>> = seeds
        .par_iter()
        .map(|s| identify(model, designed_u, *s, lambda).ok())
        .collect();
    let mut estimates = Vec::with_capacity(runs);
    let mut inside_id = Vec::with_capacity(runs);
    let mut inside_app = Vec::with_capacity(runs);
    let mut flagged = Vec::new();
    let (mut n_ok, mut n_id, mut n_app) = (0usize, 0usize, 0usize);
    for (k, res) in results.into_iter().enumerate() {
        let (theta, ok) = match res {
            Some(e) => (e.theta, e.converged),
            None => (DVector::from_element(model.n_theta(), f64::NAN), false),
        };
        let id = ok && ellipsoids.in_id(&theta);
        let app = ok && ellipsoids.in_app(&theta);
        if ok {
            n_ok += 1;
            n_id += id as usize;
            n_app += app as usize;
        } else {
            flagged.push(k);
        }
        estimates.push(theta);
        inside_id.push(id);
        inside_app.push(app);
    }
    let frac = |c: usize| (n_ok > 0).then(|| c as f64 / n_ok as f64);
    MonteCarloReport {
        estimates,
        inside_id,
        inside_app,
        inside_id_fraction: frac(n_id),
        inside_app_fraction: frac(n_app),
        seeds,
        flagged,
    }
}

// ---------------------------------------------------------------------------
// Worked examples

/// Two-tap FIR `y(t) = 10 u(t−1) − 9 u(t−2) + e(t)`, `λ = 1`.
pub fn example1_model() -> ParametricLtiModel {
    ParametricLtiModel::fir(&[10.0, -9.0], 1.0).expect("valid FIR fixture")
}

pub fn example1_spec() -> ExperimentSpec {
    ExperimentSpec::new(100.0, 0.95, 0.5, 5.0, 5, 3)
}

/// MPC regulating the output to zero from the steady state under a held input of 0.5.
pub fn example1_scenario() -> ApplicationScenario {
    ApplicationScenario::Mpc(MpcScenario {
        q: 1.0,
        r: 0.0,
        horizon: 5,
        reference: 0.0,
        initial_input: 0.5,
        length: 50,
        u_max: 0.5,
        y_max: 5.0,
    })
}

/// Output-error two-tank model with `A = [θ₃ θ₄; 1 0]`, `B = [4.5; 0]`, `C = [θ₁ θ₂]`.
pub fn two_tank_model(theta: &[f64; 4], lambda: f64) -> ParametricLtiModel {
    let c = Coef::Const;
    let p = Coef::param;
    let structure = ModelStructure::StateSpace {
        a: vec![vec![p(2), p(3)], vec![c(1.0), c(0.0)]],
        b: vec![vec![c(4.5)], vec![c(0.0)]],
        c: vec![vec![p(0), p(1)]],
        d: None,
    };
    ParametricLtiModel::new(
        structure,
        DVector::from_column_slice(theta),
        DVector::zeros(0),
        None,
        DMatrix::from_element(1, 1, lambda),
    )
    .expect("valid two-tank fixture")
}

pub fn example2_model() -> ParametricLtiModel {
    two_tank_model(&[0.12, 0.059, 0.74, -0.14], 0.01)
}

pub fn example2_spec() -> ExperimentSpec {
    ExperimentSpec::new(1000.0, 0.95, 0.5, 5.0, 5, 20)
}

/// MPC with `Q = 1`, `R = 0.001` tracking a step of 0.5 from rest.
pub fn example2_scenario() -> ApplicationScenario {
    ApplicationScenario::Mpc(MpcScenario {
        q: 1.0,
        r: 0.001,
        horizon: 5,
        reference: 0.5,
        initial_input: 0.0,
        length: 50,
        u_max: 0.5,
        y_max: 5.0,
    })
}
