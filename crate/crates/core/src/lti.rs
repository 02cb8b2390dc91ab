//! Parametrized discrete-time LTI models.
//!
//! Every structure is reduced to a state-space realization `(A, B, C, D)` that
//! depends smoothly on the plant parameters, so simulation, impulse responses
//! and parameter sensitivities all share one code path. Signals are stored as
//! `channels × samples` matrices: column `t` is the sample at time `t`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Outputs larger than this are treated as a diverging simulation.
pub const OVERFLOW_GUARD: f64 = 1e15;

/// Default fraction of impulse-response energy a truncation may discard.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-6;

/// A model coefficient: either a constant or `offset + scale · θ[theta]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coef {
    Const(f64),
    Param {
        theta: usize,
        #[serde(default = "unit_scale")]
        scale: f64,
        #[serde(default)]
        offset: f64,
    },
}

fn unit_scale() -> f64 {
    1.0
}

impl Coef {
    pub fn param(theta: usize) -> Self {
        Coef::Param { theta, scale: 1.0, offset: 0.0 }
    }

    pub fn eval(&self, theta: &DVector<f64>) -> f64 {
        match *self {
            Coef::Const(v) => v,
            Coef::Param { theta: k, scale, offset } => offset + scale * theta[k],
        }
    }

    /// ∂/∂θ[i].
    pub fn partial(&self, i: usize) -> f64 {
        match *self {
            Coef::Param { theta: k, scale, .. } if k == i => scale,
            _ => 0.0,
        }
    }

    fn max_index(&self) -> Option<usize> {
        match *self {
            Coef::Const(_) => None,
            Coef::Param { theta, .. } => Some(theta),
        }
    }
}

fn coef_matrix(rows: &[Vec<Coef>], f: impl Fn(&Coef) -> f64) -> DMatrix<f64> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(nr, nc, |r, c| f(&rows[r][c]))
}

/// Plant structure `G(q, θ_G)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelStructure {
    /// `y(t) = Σ_{k=1}^{order} θ_k u(t−k)`, single input and output.
    Fir { order: usize },
    /// `x(t+1) = A x(t) + B u(t)`, `y(t) = C x(t) + D u(t)` with coefficients affine in θ.
    StateSpace {
        a: Vec<Vec<Coef>>,
        b: Vec<Vec<Coef>>,
        c: Vec<Vec<Coef>>,
        #[serde(default)]
        d: Option<Vec<Vec<Coef>>>,
    },
    /// SISO `B(q)/A(q)` with `num = [b0, b1, ...]` (lag 0 first) and monic
    /// denominator `den = [a1, a2, ...]`.
    TransferFunction { num: Vec<Coef>, den: Vec<Coef> },
}

/// Monic noise filter `H(q) = (1 + Σ c_k q^{-k}) / (1 + Σ d_k q^{-k})`, coefficients in θ_H.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(default)]
    pub num: Vec<Coef>,
    #[serde(default)]
    pub den: Vec<Coef>,
}

impl NoiseModel {
    fn coefficients(&self, theta_h: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        (
            self.num.iter().map(|c| c.eval(theta_h)).collect(),
            self.den.iter().map(|c| c.eval(theta_h)).collect(),
        )
    }

    /// Filter a scalar sequence through `H`.
    pub fn filter(&self, theta_h: &DVector<f64>, x: &[f64]) -> Vec<f64> {
        let (c, d) = self.coefficients(theta_h);
        monic_filter(&c, &d, x)
    }

    /// Filter a scalar sequence through `H^{-1}`.
    pub fn inverse_filter(&self, theta_h: &DVector<f64>, x: &[f64]) -> Vec<f64> {
        let (c, d) = self.coefficients(theta_h);
        monic_filter(&d, &c, x)
    }
}

/// `w = (1 + Σ num_k q^{-k}) / (1 + Σ den_k q^{-k}) x`.
fn monic_filter(num: &[f64], den: &[f64], x: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; x.len()];
    for t in 0..x.len() {
        let mut acc = x[t];
        for (k, nk) in num.iter().enumerate() {
            if t > k {
                acc += nk * x[t - k - 1];
            }
        }
        for (k, dk) in den.iter().enumerate() {
            if t > k {
                acc -= dk * w[t - k - 1];
            }
        }
        w[t] = acc;
    }
    w
}

/// Numeric state-space realization.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    /// Simulate from `x0` (zero when `None`).
    pub fn simulate(&self, u: &DMatrix<f64>, x0: Option<&DVector<f64>>) -> Result<DMatrix<f64>> {
        let n_y = self.c.nrows();
        let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(self.n_x()));
        let mut y = DMatrix::zeros(n_y, u.ncols());
        for t in 0..u.ncols() {
            let ut = u.column(t);
            let yt = &self.c * &x + &self.d * ut;
            check_finite(&yt, t)?;
            y.set_column(t, &yt);
            x = &self.a * &x + &self.b * ut;
        }
        Ok(y)
    }
}

fn check_finite(y: &DVector<f64>, t: usize) -> Result<()> {
    let magnitude = y.amax();
    if !magnitude.is_finite() || magnitude > OVERFLOW_GUARD {
        return Err(Error::Diverged { sample: t, magnitude });
    }
    Ok(())
}

/// `y(t) = G(q, θ_G) u(t) + H(q, θ_H) e(t)`, with `e` white of covariance Λ.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricLtiModel {
    pub structure: ModelStructure,
    pub theta_g: DVector<f64>,
    pub theta_h: DVector<f64>,
    pub noise: Option<NoiseModel>,
    pub n_u: usize,
    pub n_y: usize,
    pub lambda: DMatrix<f64>,
}

impl ParametricLtiModel {
    /// Build and validate a model.
    pub fn new(
        structure: ModelStructure,
        theta_g: DVector<f64>,
        theta_h: DVector<f64>,
        noise: Option<NoiseModel>,
        lambda: DMatrix<f64>,
    ) -> Result<Self> {
        let (n_u, n_y) = structure_dims(&structure)?;
        let model = Self { structure, theta_g, theta_h, noise, n_u, n_y, lambda };
        model.validate()?;
        Ok(model)
    }

    /// SISO FIR model `y(t) = Σ θ_k u(t−k) + e(t)` with noise variance `lambda`.
    pub fn fir(theta: &[f64], lambda: f64) -> Result<Self> {
        Self::new(
            ModelStructure::Fir { order: theta.len() },
            DVector::from_column_slice(theta),
            DVector::zeros(0),
            None,
            DMatrix::from_element(1, 1, lambda),
        )
    }

    pub fn n_theta(&self) -> usize {
        self.theta_g.len()
    }

    /// Same model with a different plant parameter vector.
    pub fn with_theta(&self, theta_g: &DVector<f64>) -> Self {
        Self { theta_g: theta_g.clone(), ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        let n_th = self.theta_g.len();
        if n_th == 0 {
            return Err(Error::InvalidModel("plant parameter vector is empty".into()));
        }
        let max_g = structure_max_index(&self.structure);
        if let Some(k) = max_g {
            if k >= n_th {
                return Err(Error::InvalidModel(format!(
                    "coefficient references θ_G[{k}] but only {n_th} plant parameters are given"
                )));
            }
        }
        if let ModelStructure::Fir { order } = self.structure {
            if order != n_th {
                return Err(Error::InvalidModel(format!("FIR order {order} but {n_th} parameters")));
            }
        }
        if let Some(noise) = &self.noise {
            if self.n_y != 1 {
                return Err(Error::InvalidModel("noise models are supported for single-output plants only".into()));
            }
            let max_h = noise.num.iter().chain(&noise.den).filter_map(Coef::max_index).max();
            if let Some(k) = max_h {
                if k >= self.theta_h.len() {
                    return Err(Error::InvalidModel(format!(
                        "noise coefficient references θ_H[{k}] but only {} noise parameters are given",
                        self.theta_h.len()
                    )));
                }
            }
        }
        if self.lambda.shape() != (self.n_y, self.n_y) {
            return Err(Error::InvalidModel(format!(
                "noise covariance is {:?}, expected {n}x{n}",
                self.lambda.shape(),
                n = self.n_y
            )));
        }
        if (&self.lambda - self.lambda.transpose()).amax() > 1e-12 * self.lambda.amax().max(1.0) {
            return Err(Error::InvalidModel("noise covariance is not symmetric".into()));
        }
        if linalg::min_eigenvalue(&self.lambda) <= 0.0 {
            return Err(Error::InvalidModel("noise covariance must be positive definite".into()));
        }
        Ok(())
    }

    /// State-space realization at `theta`.
    pub fn realize(&self, theta: &DVector<f64>) -> StateSpace {
        match &self.structure {
            ModelStructure::Fir { order } => {
                let m = *order;
                let mut a = DMatrix::zeros(m, m);
                for k in 1..m {
                    a[(k, k - 1)] = 1.0;
                }
                let mut b = DMatrix::zeros(m, 1);
                b[(0, 0)] = 1.0;
                let c = DMatrix::from_fn(1, m, |_, k| theta[k]);
                StateSpace { a, b, c, d: DMatrix::zeros(1, 1) }
            }
            ModelStructure::StateSpace { a, b, c, d } => {
                let eval = |x: &Coef| x.eval(theta);
                let cm = coef_matrix(c, eval);
                let bm = coef_matrix(b, eval);
                let dm = match d {
                    Some(d) => coef_matrix(d, eval),
                    None => DMatrix::zeros(cm.nrows(), bm.ncols()),
                };
                StateSpace { a: coef_matrix(a, eval), b: bm, c: cm, d: dm }
            }
            ModelStructure::TransferFunction { num, den } => {
                let b: Vec<f64> = num.iter().map(|x| x.eval(theta)).collect();
                let a: Vec<f64> = den.iter().map(|x| x.eval(theta)).collect();
                observer_form(&b, &a)
            }
        }
    }

    /// Element-wise derivative of the realization with respect to θ_G[i], at `theta`.
    pub fn realize_partial(&self, theta: &DVector<f64>, i: usize) -> StateSpace {
        match &self.structure {
            ModelStructure::Fir { order } => {
                let m = *order;
                let c = DMatrix::from_fn(1, m, |_, k| if k == i { 1.0 } else { 0.0 });
                StateSpace {
                    a: DMatrix::zeros(m, m),
                    b: DMatrix::zeros(m, 1),
                    c,
                    d: DMatrix::zeros(1, 1),
                }
            }
            ModelStructure::StateSpace { a, b, c, d } => {
                let part = |x: &Coef| x.partial(i);
                let cm = coef_matrix(c, part);
                let bm = coef_matrix(b, part);
                let dm = match d {
                    Some(d) => coef_matrix(d, part),
                    None => DMatrix::zeros(cm.nrows(), bm.ncols()),
                };
                StateSpace { a: coef_matrix(a, part), b: bm, c: cm, d: dm }
            }
            ModelStructure::TransferFunction { num, den } => {
                let b: Vec<f64> = num.iter().map(|x| x.eval(theta)).collect();
                let a: Vec<f64> = den.iter().map(|x| x.eval(theta)).collect();
                let db: Vec<f64> = num.iter().map(|x| x.partial(i)).collect();
                let da: Vec<f64> = den.iter().map(|x| x.partial(i)).collect();
                observer_form_partial(&b, &a, &db, &da)
            }
        }
    }

    /// Noiseless `G(q, θ) u` from zero initial state.
    pub fn simulate_noiseless(&self, theta: &DVector<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if u.nrows() != self.n_u {
            return Err(Error::Dimension(format!("input has {} channels, model expects {}", u.nrows(), self.n_u)));
        }
        self.realize(theta).simulate(u, None)
    }

    /// `y = G(q, θ) u + H(q, θ_H) e`. With `noise = None` this is the noiseless response.
    pub fn simulate(
        &self,
        theta: &DVector<f64>,
        u: &DMatrix<f64>,
        noise: Option<&DMatrix<f64>>,
    ) -> Result<DMatrix<f64>> {
        if theta.len() != self.n_theta() {
            return Err(Error::Dimension(format!("θ has length {}, model expects {}", theta.len(), self.n_theta())));
        }
        let mut y = self.simulate_noiseless(theta, u)?;
        if let Some(e) = noise {
            if e.shape() != y.shape() {
                return Err(Error::Dimension(format!("noise is {:?}, output is {:?}", e.shape(), y.shape())));
            }
            match &self.noise {
                Some(h) => {
                    let row: Vec<f64> = e.row(0).iter().copied().collect();
                    let filtered = h.filter(&self.theta_h, &row);
                    for (t, v) in filtered.into_iter().enumerate() {
                        y[(0, t)] += v;
                    }
                }
                None => y += e,
            }
        }
        Ok(y)
    }

    /// Plant impulse response `g(0..len)`, each `n_y × n_u`.
    pub fn impulse_response(&self, theta: &DVector<f64>, len: usize) -> Result<Vec<DMatrix<f64>>> {
        let ss = self.realize(theta);
        let mut out = vec![DMatrix::zeros(self.n_y, self.n_u); len];
        for j in 0..self.n_u {
            let mut u = DMatrix::zeros(self.n_u, len);
            if len > 0 {
                u[(j, 0)] = 1.0;
            }
            let y = ss.simulate(&u, None)?;
            for (lag, g) in out.iter_mut().enumerate() {
                g.set_column(j, &y.column(lag));
            }
        }
        Ok(out)
    }

    /// `∂(G(q, θ) u)/∂θ_G[i]` for an arbitrary input record, by the forward sensitivity recursion.
    pub fn output_sensitivity(&self, theta: &DVector<f64>, u: &DMatrix<f64>, i: usize) -> Result<DMatrix<f64>> {
        let ss = self.realize(theta);
        let ds = self.realize_partial(theta, i);
        let n_x = ss.n_x();
        let mut x = DVector::zeros(n_x);
        let mut xd = DVector::zeros(n_x);
        let mut out = DMatrix::zeros(self.n_y, u.ncols());
        for t in 0..u.ncols() {
            let ut = u.column(t);
            let yd = &ss.c * &xd + &ds.c * &x + &ds.d * ut;
            check_finite(&yd, t)?;
            out.set_column(t, &yd);
            let x_next = &ss.a * &x + &ss.b * ut;
            xd = &ss.a * &xd + &ds.a * &x + &ds.b * ut;
            x = x_next;
        }
        Ok(out)
    }

    /// Impulse response of `∂G/∂θ_G[i]` (before noise filtering and sign).
    pub fn plant_sensitivity_impulse(&self, theta: &DVector<f64>, i: usize, len: usize) -> Result<Vec<DMatrix<f64>>> {
        let mut out = vec![DMatrix::zeros(self.n_y, self.n_u); len];
        for j in 0..self.n_u {
            let mut u = DMatrix::zeros(self.n_u, len);
            if len > 0 {
                u[(j, 0)] = 1.0;
            }
            let y = self.output_sensitivity(theta, &u, i)?;
            for (lag, g) in out.iter_mut().enumerate() {
                g.set_column(j, &y.column(lag));
            }
        }
        Ok(out)
    }

    /// Apply `H^{-1}(q, θ_H)` to every row of a signal (identity without a noise model).
    pub fn whiten(&self, signal: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.noise {
            None => signal.clone(),
            Some(h) => {
                let mut out = signal.clone();
                for r in 0..signal.nrows() {
                    let row: Vec<f64> = signal.row(r).iter().copied().collect();
                    for (t, v) in h.inverse_filter(&self.theta_h, &row).into_iter().enumerate() {
                        out[(r, t)] = v;
                    }
                }
                out
            }
        }
    }

    /// Impulse response of the sensitivity filter `𝓕_i = −H^{-1} ∂G/∂θ_G[i]`.
    pub fn sensitivity_filter_impulse(&self, theta: &DVector<f64>, i: usize, len: usize) -> Result<Vec<DMatrix<f64>>> {
        let mut resp = self.plant_sensitivity_impulse(theta, i, len)?;
        if let Some(h) = &self.noise {
            for j in 0..self.n_u {
                let seq: Vec<f64> = resp.iter().map(|g| g[(0, j)]).collect();
                let filtered = h.inverse_filter(&self.theta_h, &seq);
                for (g, v) in resp.iter_mut().zip(filtered) {
                    g[(0, j)] = v;
                }
            }
        }
        for g in &mut resp {
            g.neg_mut();
        }
        Ok(resp)
    }
}

fn coef_at(v: &[f64], k: usize) -> f64 {
    v.get(k).copied().unwrap_or(0.0)
}

/// Observer canonical form for `y + Σ a_k y(t−k) = Σ b_k u(t−k)`:
/// `A[k,0] = −a_{k+1}`, ones on the superdiagonal, `B_k = b_{k+1} − a_{k+1} b_0`,
/// `C = e_1ᵀ`, `D = b_0`.
fn observer_form(b: &[f64], a: &[f64]) -> StateSpace {
    let n = a.len().max(b.len().saturating_sub(1));
    let b0 = coef_at(b, 0);
    let mut am = DMatrix::zeros(n, n);
    let mut bm = DMatrix::zeros(n, 1);
    for k in 0..n {
        am[(k, 0)] = -coef_at(a, k);
        if k + 1 < n {
            am[(k, k + 1)] = 1.0;
        }
        bm[(k, 0)] = coef_at(b, k + 1) - coef_at(a, k) * b0;
    }
    let mut cm = DMatrix::zeros(1, n);
    if n > 0 {
        cm[(0, 0)] = 1.0;
    }
    StateSpace { a: am, b: bm, c: cm, d: DMatrix::from_element(1, 1, b0) }
}

/// Derivative of [`observer_form`] given coefficient derivatives `db`, `da`.
fn observer_form_partial(b: &[f64], a: &[f64], db: &[f64], da: &[f64]) -> StateSpace {
    let n = a.len().max(b.len().saturating_sub(1));
    let (b0, db0) = (coef_at(b, 0), coef_at(db, 0));
    let mut am = DMatrix::zeros(n, n);
    let mut bm = DMatrix::zeros(n, 1);
    for k in 0..n {
        am[(k, 0)] = -coef_at(da, k);
        bm[(k, 0)] = coef_at(db, k + 1) - coef_at(da, k) * b0 - coef_at(a, k) * db0;
    }
    StateSpace {
        a: am,
        b: bm,
        c: DMatrix::zeros(1, n),
        d: DMatrix::from_element(1, 1, db0),
    }
}

fn structure_dims(s: &ModelStructure) -> Result<(usize, usize)> {
    match s {
        ModelStructure::Fir { order } => {
            if *order == 0 {
                return Err(Error::InvalidModel("FIR order must be positive".into()));
            }
            Ok((1, 1))
        }
        ModelStructure::TransferFunction { num, den } => {
            if num.is_empty() {
                return Err(Error::InvalidModel("transfer function numerator is empty".into()));
            }
            let _ = den;
            Ok((1, 1))
        }
        ModelStructure::StateSpace { a, b, c, d } => {
            let n_x = a.len();
            let ragged = |m: &Vec<Vec<Coef>>, cols: usize| m.iter().any(|r| r.len() != cols);
            if n_x == 0 || ragged(a, n_x) {
                return Err(Error::InvalidModel("A must be a non-empty square matrix".into()));
            }
            let n_u = b.first().map_or(0, Vec::len);
            if b.len() != n_x || n_u == 0 || ragged(b, n_u) {
                return Err(Error::InvalidModel(format!("B must be {n_x} x n_u with n_u > 0")));
            }
            let n_y = c.len();
            if n_y == 0 || ragged(c, n_x) {
                return Err(Error::InvalidModel(format!("C must be n_y x {n_x} with n_y > 0")));
            }
            if let Some(d) = d {
                if d.len() != n_y || ragged(d, n_u) {
                    return Err(Error::InvalidModel(format!("D must be {n_y} x {n_u}")));
                }
            }
            Ok((n_u, n_y))
        }
    }
}

fn structure_max_index(s: &ModelStructure) -> Option<usize> {
    match s {
        ModelStructure::Fir { order } => order.checked_sub(1),
        ModelStructure::TransferFunction { num, den } => num.iter().chain(den).filter_map(Coef::max_index).max(),
        ModelStructure::StateSpace { a, b, c, d } => a
            .iter()
            .chain(b)
            .chain(c)
            .chain(d.iter().flatten())
            .flatten()
            .filter_map(Coef::max_index)
            .max(),
    }
}

/// Truncated sensitivity impulse responses `f_i(0..n−1)` and their block-Toeplitz matrices.
#[derive(Clone, Debug)]
pub struct SensitivityBank {
    /// `responses[i][lag]` is the `n_y × n_u` coefficient of `𝓕_i` at `lag`.
    pub responses: Vec<Vec<DMatrix<f64>>>,
    pub truncation_n: usize,
    pub horizon_nu: usize,
    pub toeplitz: Vec<DMatrix<f64>>,
    /// Fraction of each response's energy discarded by the truncation.
    pub tail_fractions: Vec<f64>,
    pub n_u: usize,
    pub n_y: usize,
}

impl SensitivityBank {
    pub fn n_theta(&self) -> usize {
        self.responses.len()
    }

    /// Rows of every `F_i`.
    pub fn rows(&self) -> usize {
        (self.horizon_nu + 1) * self.n_y
    }

    /// Columns of every `F_i` (length of the stacked input).
    pub fn cols(&self) -> usize {
        (self.horizon_nu + self.truncation_n) * self.n_u
    }

    /// Length of the pinned past-input block.
    pub fn past_len(&self) -> usize {
        (self.truncation_n - 1) * self.n_u
    }

    /// Length of the horizon block.
    pub fn horizon_len(&self) -> usize {
        (self.horizon_nu + 1) * self.n_u
    }

    /// `Σ_lag f_i(lag) u(t − lag)` for every `i`, as an `n_y × n_θ` matrix.
    ///
    /// `recent` holds the `n` most recent inputs, oldest first, ending with `u(t)`.
    pub fn filtered_sample(&self, recent: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.truncation_n;
        let mut psi = DMatrix::zeros(self.n_y, self.n_theta());
        let last = recent.ncols();
        for (i, resp) in self.responses.iter().enumerate() {
            let mut col = DVector::zeros(self.n_y);
            for (lag, f) in resp.iter().enumerate().take(n.min(last)) {
                col += f * recent.column(last - 1 - lag);
            }
            psi.set_column(i, &col);
        }
        psi
    }
}

/// Block-Toeplitz matrix mapping `[u(t−n+1) … u(t+N_u)]` to the filtered outputs at `t … t+N_u`.
///
/// Row block `r`, column block `c` holds the coefficient at lag `r + n − 1 − c` when that lag
/// lies in `0..n`, zero otherwise.
pub fn toeplitz_matrix(response: &[DMatrix<f64>], n: usize, horizon_nu: usize, n_u: usize, n_y: usize) -> DMatrix<f64> {
    let rows = horizon_nu + 1;
    let cols = horizon_nu + n;
    let mut f = DMatrix::zeros(rows * n_y, cols * n_u);
    for r in 0..rows {
        for c in 0..cols {
            let lag = (r + n - 1) as isize - c as isize;
            if lag >= 0 && (lag as usize) < n {
                if let Some(block) = response.get(lag as usize) {
                    f.view_mut((r * n_y, c * n_u), (n_y, n_u)).copy_from(block);
                }
            }
        }
    }
    f
}

/// Lower block-triangular Toeplitz matrix of `g(0..=horizon)`: maps horizon inputs to outputs.
pub fn lower_toeplitz(g: &[DMatrix<f64>], horizon: usize, n_u: usize, n_y: usize) -> DMatrix<f64> {
    let n = horizon + 1;
    let mut m = DMatrix::zeros(n * n_y, n * n_u);
    for r in 0..n {
        for c in 0..=r {
            m.view_mut((r * n_y, c * n_u), (n_y, n_u)).copy_from(&g[r - c]);
        }
    }
    m
}

fn energy(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Truncated sensitivity responses at `theta0` with Toeplitz matrices for horizon `horizon_nu`.
///
/// Fails when a truncation at `n` lags discards more than `tail_tol` of a response's energy.
pub fn sensitivity_impulse_responses(
    model: &ParametricLtiModel,
    theta0: &DVector<f64>,
    n: usize,
    horizon_nu: usize,
    tail_tol: f64,
) -> Result<SensitivityBank> {
    if n == 0 {
        return Err(Error::InvalidSpec("truncation length n must be positive".into()));
    }
    let long = n + (4 * n).max(2000);
    let mut responses = Vec::with_capacity(model.n_theta());
    let mut tail_fractions = Vec::with_capacity(model.n_theta());
    for i in 0..model.n_theta() {
        let full = model.sensitivity_filter_impulse(theta0, i, long)?;
        let energies: Vec<f64> = full.iter().map(energy).collect();
        let total: f64 = energies.iter().sum();
        let tail: f64 = energies[n..].iter().sum();
        let fraction = if total > 0.0 { tail / total } else { 0.0 };
        if fraction > tail_tol {
            let last_quarter: f64 = energies[long - long / 4..].iter().sum();
            let suggested = if last_quarter > tail_tol * total {
                None
            } else {
                let mut remaining = tail;
                let mut m = n;
                while m < long && remaining > tail_tol * total {
                    remaining -= energies[m];
                    m += 1;
                }
                Some(m)
            };
            return Err(Error::Truncation { index: i, n, fraction, suggested });
        }
        responses.push(full[..n].to_vec());
        tail_fractions.push(fraction);
    }
    let toeplitz = responses
        .iter()
        .map(|r| toeplitz_matrix(r, n, horizon_nu, model.n_u, model.n_y))
        .collect();
    Ok(SensitivityBank {
        responses,
        truncation_n: n,
        horizon_nu,
        toeplitz,
        tail_fractions,
        n_u: model.n_u,
        n_y: model.n_y,
    })
}

/// Stack a `channels × T` signal column by column.
pub fn stack(signal: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(signal.as_slice())
}

/// Inverse of [`stack`].
pub fn unstack(v: &DVector<f64>, channels: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(channels, v.len() / channels, v.as_slice())
}
