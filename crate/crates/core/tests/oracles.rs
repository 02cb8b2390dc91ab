use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdid::appset::{self, EllipsoidPair};
use tdid::fisher::{self, InformationState, StackedInput};
use tdid::harness;
use tdid::linalg;
use tdid::lti::{self, ParametricLtiModel, SensitivityBank, DEFAULT_TAIL_TOLERANCE};

fn bank(model: &ParametricLtiModel, n: usize, nu: usize) -> SensitivityBank {
    lti::sensitivity_impulse_responses(model, &model.theta_g, n, nu, DEFAULT_TAIL_TOLERANCE).unwrap()
}

fn random_record(rng: &mut ChaCha8Rng, n_u: usize, len: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n_u, len, |_, _| rng.gen_range(-1.0..1.0))
}

fn padded(record: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(record.nrows(), n - 1 + record.ncols());
    p.columns_mut(n - 1, record.ncols()).copy_from(record);
    p
}

#[test]
fn recursive_information_matches_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for model in [harness::example1_model(), harness::example2_model()] {
        let n = 25;
        let b = bank(&model, n, 4);
        let linv = model.lambda.clone().try_inverse().unwrap();
        let record = random_record(&mut rng, model.n_u, 40);
        let p = padded(&record, n);
        let mut state = InformationState::new(DMatrix::zeros(model.n_theta(), model.n_theta()));
        for t in 0..record.ncols() {
            state = state.commit_step(&b, &p.columns(t, n).into_owned(), &linv);
        }
        let batch = fisher::batch_information(&b, &record, record.ncols(), &linv);
        assert!(linalg::rel_frobenius(&state.i_bar_past, &batch) < 1e-12);
        assert_eq!(state.t, 40);
    }
}

#[test]
fn toeplitz_matches_direct_filtering() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = harness::example2_model();
    let (n, nu) = (80, 6);
    let b = bank(&model, n, nu);
    let record = random_record(&mut rng, 1, nu + 1);
    let u = StackedInput { past: DVector::zeros(b.past_len()), horizon: lti::stack(&record) };
    for (i, f) in b.toeplitz.iter().enumerate() {
        let direct = -model.output_sensitivity(&model.theta_g, &record, i).unwrap();
        let via = f * u.concat();
        let err = (lti::stack(&direct) - &via).amax();
        assert!(err <= 1e-10, "θ{i}: {err:e}");
    }
}

#[test]
fn two_tank_sensitivity_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = harness::example2_model();
    let record = random_record(&mut rng, 1, 60);
    for i in 0..4 {
        let h = 1e-5;
        let mut tp = model.theta_g.clone();
        let mut tm = model.theta_g.clone();
        tp[i] += h;
        tm[i] -= h;
        let yp = model.simulate(&tp, &record, None).unwrap();
        let ym = model.simulate(&tm, &record, None).unwrap();
        let fd = (yp - ym) / (2.0 * h);
        let exact = model.output_sensitivity(&model.theta_g, &record, i).unwrap();
        let err = (fd - exact).amax();
        assert!(err <= 1e-6, "θ{i}: {err:e}");
    }
}

/// At `θ₀` the residual vanishes, so the Hessian of the mean squared mismatch is
/// `(2/N) JᵀJ` with `J` the Jacobian of the application response.
#[test]
fn example1_hessian_matches_jacobian_oracle() {
    let model = harness::example1_model();
    let scenario = harness::example1_scenario();
    let y0 = scenario.response(&model, &model.theta_g).unwrap();
    let p = model.n_theta();
    let column = |i: usize, h: f64| -> DVector<f64> {
        let mut tp = model.theta_g.clone();
        let mut tm = model.theta_g.clone();
        tp[i] += h;
        tm[i] -= h;
        let d = scenario.response(&model, &tp).unwrap() - scenario.response(&model, &tm).unwrap();
        lti::stack(&(d / (2.0 * h)))
    };
    let mut jac = DMatrix::zeros(y0.len(), p);
    for i in 0..p {
        let (c1, c2) = (column(i, 1e-4), column(i, 5e-5));
        jac.set_column(i, &((c2 * 4.0 - c1) / 3.0));
    }
    let oracle = jac.transpose() * &jac * (2.0 / y0.ncols() as f64);
    let h = appset::application_hessian(&model, &scenario).unwrap();
    assert!(linalg::rel_frobenius(&h, &oracle) < 5e-4, "{h} vs {oracle}");
}

fn fir_design_input() -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    DMatrix::from_fn(1, 60, |_, _| if rng.gen_bool(0.5) { 0.5 } else { -0.5 })
}

#[test]
fn monte_carlo_is_deterministic_and_respects_containment() {
    let model = harness::example1_model();
    let u = fir_design_input();
    let b = bank(&model, 3, 0);
    let linv = model.lambda.clone().try_inverse().unwrap();
    let fim = fisher::batch_information(&b, &u, u.ncols(), &linv);
    let h = appset::application_hessian(&model, &harness::example1_scenario()).unwrap();
    // a small γ leaves the designed information well above the target
    let pair = EllipsoidPair::new(h, fim, model.theta_g.clone(), 1.0, 0.95);
    assert!(pair.containment(1e-9).satisfied);
    let a = harness::monte_carlo(&model, &u, &pair, 40, 3, None);
    let b = harness::monte_carlo(&model, &u, &pair, 40, 3, None);
    assert_eq!(a, b);
    for (id, app) in a.inside_id.iter().zip(&a.inside_app) {
        assert!(!id || *app);
    }
    assert!(a.inside_app_fraction.unwrap() >= a.inside_id_fraction.unwrap());
}

fn stacked(bank: &SensitivityBank, v: &[f64]) -> StackedInput {
    let v = DVector::from_column_slice(v);
    StackedInput { past: v.rows(0, bank.past_len()).into_owned(), horizon: v.rows(bank.past_len(), bank.horizon_len()).into_owned() }
}

proptest! {
    #[test]
    fn phi_is_linear_in_the_input(
        a in -3.0f64..3.0,
        c in -3.0f64..3.0,
        u1 in prop::collection::vec(-1.0f64..1.0, 27),
        u2 in prop::collection::vec(-1.0f64..1.0, 27),
    ) {
        let model = harness::example2_model();
        let b = bank(&model, 20, 7);
        let combo: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| a * x + c * y).collect();
        let phi1 = fisher::build_phi(&b, &stacked(&b, &u1), &model.lambda).unwrap();
        let phi2 = fisher::build_phi(&b, &stacked(&b, &u2), &model.lambda).unwrap();
        let phi = fisher::build_phi(&b, &stacked(&b, &combo), &model.lambda).unwrap();
        let err = (phi - (phi1 * a + phi2 * c)).amax();
        prop_assert!(err <= 1e-10);
    }
}
