//! Reversible jump sampler for autoregression with Laplace errors and an
//! unknown order, plus a quadrature oracle for the order-1 toy problem.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::linalg::{cholesky, solve_lower, solve_lower_transpose};
use crate::quadrature::{integrate, QuadOptions};
use crate::rng_dist::{
    sample_inverse_gamma, sample_inverse_gaussian, sample_laplace_half_rate, std_normal, uniform_open,
};

/// Floor on `|r_i|` before it divides into the inverse-Gaussian mean.
const MIN_ABS_RESIDUAL: f64 = 1e-300;
const LN_4: f64 = std::f64::consts::LN_2 * 2.0;

/// Prior on the order `K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OrderPrior {
    Uniform,
    /// Poisson with the given mean, truncated to `0..=k_max`.
    TruncatedPoisson { mean: f64 },
}

impl OrderPrior {
    pub fn masses(&self, k_max: usize) -> Result<Vec<f64>> {
        let raw: Vec<f64> = match *self {
            OrderPrior::Uniform => vec![1.0; k_max + 1],
            OrderPrior::TruncatedPoisson { mean } => {
                if !(mean > 0.0) || !mean.is_finite() {
                    return domain(format!("Poisson mean must be positive, got {mean}"));
                }
                let mut v = Vec::with_capacity(k_max + 1);
                let mut term = 1.0;
                for k in 0..=k_max {
                    if k > 0 {
                        term *= mean / k as f64;
                    }
                    v.push(term);
                }
                v
            }
        };
        let s: f64 = raw.iter().sum();
        Ok(raw.into_iter().map(|v| v / s).collect())
    }
}

/// Observed series, predictors and prior settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ARData {
    y: Vec<f64>,
    x: DMatrix<f64>,
    /// `y_{-k_max+1}, …, y_0`, oldest first.
    y_start: Vec<f64>,
    k_max: usize,
    sigma: f64,
    f_k: Vec<f64>,
    /// `y_start` followed by `y`.
    y_ext: Vec<f64>,
}

impl ARData {
    /// Validates shapes and the full-rank / response-outside-span condition
    /// for every order.
    pub fn new(
        y: Vec<f64>,
        x: DMatrix<f64>,
        y_start: Vec<f64>,
        k_max: usize,
        sigma: f64,
        f_k: Vec<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 || x.nrows() != n {
            return Err(Error::Dimension(format!("{n} responses but x has {} rows", x.nrows())));
        }
        if y_start.len() != k_max {
            return Err(Error::Dimension(format!(
                "starting sequence has {} values, expected k_max = {k_max}",
                y_start.len()
            )));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return domain(format!("sigma must be positive, got {sigma}"));
        }
        if f_k.len() != k_max + 1 || f_k.iter().any(|&m| !(m > 0.0)) {
            return domain("f_K needs k_max + 1 positive masses");
        }
        let total: f64 = f_k.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return domain(format!("f_K sums to {total}"));
        }
        if y.iter().chain(&y_start).chain(x.iter()).any(|v| !v.is_finite()) {
            return domain("data contain non-finite values");
        }
        let mut y_ext = y_start.clone();
        y_ext.extend_from_slice(&y);
        let data = Self {
            y,
            x,
            y_start,
            k_max,
            sigma,
            f_k,
            y_ext,
        };
        for k in 0..=k_max {
            data.check_p1(k)?;
        }
        Ok(data)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn f_k(&self) -> &[f64] {
        &self.f_k
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y_start(&self) -> &[f64] {
        &self.y_start
    }

    /// `y_{i-j}` for 0-based row `i` and lag `j ≥ 1`.
    #[inline]
    fn lag(&self, i: usize, j: usize) -> f64 {
        self.y_ext[self.k_max + i - j]
    }

    fn check_p1(&self, k: usize) -> Result<()> {
        let w = build_design(self, k)?;
        let cols = w.ncols();
        if cols > self.n() {
            return Err(Error::DataCondition(format!(
                "W({k}) has {cols} columns but only {} rows",
                self.n()
            )));
        }
        if cols == 0 {
            return Ok(());
        }
        let svd = w.clone().svd(true, true);
        let sv = &svd.singular_values;
        let smax = sv.max();
        let smin = sv.min();
        if !(smin > 1e-10 * smax) {
            return Err(Error::DataCondition(format!(
                "W({k}) is rank deficient (singular values {smin:e} .. {smax:e})"
            )));
        }
        let y = DVector::from_column_slice(&self.y);
        let u = svd.u.as_ref().expect("requested U");
        let proj = u * (u.transpose() * &y);
        let resid = (&y - proj).norm();
        if !(resid > 1e-10 * y.norm().max(f64::MIN_POSITIVE)) {
            return Err(Error::DataCondition(format!("y lies in the column space of W({k})")));
        }
        Ok(())
    }
}

/// `W(k)`: row `i` is `(x_iᵀ, y_{i-1}, …, y_{i-k})`.
pub fn build_design(data: &ARData, k: usize) -> Result<DMatrix<f64>> {
    if k > data.k_max {
        return domain(format!("order {k} exceeds k_max = {}", data.k_max));
    }
    let (n, p) = (data.n(), data.p());
    Ok(DMatrix::from_fn(n, p + k, |i, c| {
        if c < p {
            data.x[(i, c)]
        } else {
            data.lag(i, c - p + 1)
        }
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ARState {
    pub k: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau: f64,
    pub u: Vec<f64>,
}

impl ARState {
    /// Order 0, zero coefficients, unit dispersion and auxiliaries.
    pub fn initial(data: &ARData) -> Self {
        Self {
            k: 0,
            alpha: Vec::new(),
            beta: vec![0.0; data.p()],
            tau: 1.0,
            u: vec![1.0; data.n()],
        }
    }

    fn check(&self, data: &ARData) -> Result<()> {
        if self.k > data.k_max || self.alpha.len() != self.k {
            return domain(format!("order {} with {} coefficients", self.k, self.alpha.len()));
        }
        if self.beta.len() != data.p() || self.u.len() != data.n() {
            return Err(Error::Dimension("state does not match data".into()));
        }
        Ok(())
    }
}

/// Residuals `y_i − x_iᵀβ − w_{i,k}ᵀα`.
fn residuals(data: &ARData, alpha: &[f64], beta: &[f64]) -> Vec<f64> {
    (0..data.n())
        .map(|i| {
            let mut r = data.y[i];
            for (c, b) in beta.iter().enumerate() {
                r -= data.x[(i, c)] * b;
            }
            for (j, a) in alpha.iter().enumerate() {
                r -= data.lag(i, j + 1) * a;
            }
            r
        })
        .collect()
}

/// `log π(k, α, β, τ, u | y)` up to a constant shared by all orders.
pub fn log_unnorm_posterior(data: &ARData, state: &ARState) -> f64 {
    if state.check(data).is_err() || !(state.tau > 0.0) || state.u.iter().any(|&u| !(u > 0.0)) {
        return f64::NEG_INFINITY;
    }
    let tau = state.tau;
    let ln_tau = tau.ln();
    let s2 = data.sigma * data.sigma;
    let r = residuals(data, &state.alpha, &state.beta);
    let n = data.n() as f64;
    // the +|r|/(2√τ) term of the inverse-Gaussian factor and the −|r|/(2√τ)
    // term of the Laplace likelihood cancel and are left out of both sums
    let mut aug = 0.0;
    for (ri, &ui) in r.iter().zip(&state.u) {
        aug += -0.5 * ((8.0 * PI).ln() + 3.0 * ui.ln()) - ui * ri * ri / (2.0 * tau) - 1.0 / (8.0 * ui);
    }
    let lik = -n * LN_4 - 0.5 * n * ln_tau;
    let ln_var = (2.0 * PI * s2 * tau).ln();
    let a2: f64 = state.alpha.iter().map(|a| a * a).sum();
    let b2: f64 = state.beta.iter().map(|b| b * b).sum();
    let prior_a = if state.k > 0 {
        -0.5 * state.k as f64 * ln_var - a2 / (2.0 * s2 * tau)
    } else {
        0.0
    };
    let prior_b = -0.5 * data.p() as f64 * ln_var - b2 / (2.0 * s2 * tau);
    aug + lik + data.f_k[state.k].ln() + prior_a + prior_b - ln_tau
}

/// One sweep of the two-block Gibbs sampler at fixed order.
pub fn gibbs_update<R: Rng + ?Sized>(data: &ARData, state: &ARState, rng: &mut R) -> Result<ARState> {
    state.check(data)?;
    let k = state.k;
    let n = data.n();
    let r = residuals(data, &state.alpha, &state.beta);
    let sqrt_tau = state.tau.sqrt();
    let mut u = Vec::with_capacity(n);
    for ri in &r {
        let mu = sqrt_tau / (2.0 * ri.abs().max(MIN_ABS_RESIDUAL));
        u.push(sample_inverse_gaussian(mu, 0.25, rng)?);
    }
    let w = build_design(data, k)?;
    let post = coefficient_posterior(data, &w, &u)?;
    let tau = sample_inverse_gamma(n as f64 / 2.0, post.scale / 2.0, rng)?;
    let d = w.ncols();
    let z = DVector::from_iterator(d, (0..d).map(|_| std_normal(rng)));
    let theta = &post.mean + solve_lower_transpose(&post.factor, &z) * tau.sqrt();
    let p = data.p();
    Ok(ARState {
        k,
        alpha: theta.rows(p, k).iter().copied().collect(),
        beta: theta.rows(0, p).iter().copied().collect(),
        tau,
        u,
    })
}

struct CoefficientPosterior {
    mean: DVector<f64>,
    /// Cholesky factor of `WᵀQW + σ⁻²I`.
    factor: DMatrix<f64>,
    /// `yᵀQy − yᵀQW M⁻¹ WᵀQy`.
    scale: f64,
}

fn coefficient_posterior(data: &ARData, w: &DMatrix<f64>, u: &[f64]) -> Result<CoefficientPosterior> {
    let d = w.ncols();
    let inv_s2 = 1.0 / (data.sigma * data.sigma);
    let mut m = DMatrix::<f64>::identity(d, d) * inv_s2;
    let mut b = DVector::<f64>::zeros(d);
    for (i, &ui) in u.iter().enumerate() {
        let row = w.row(i);
        for a in 0..d {
            let wa = ui * row[a];
            b[a] += wa * data.y[i];
            for c in 0..=a {
                m[(a, c)] += wa * row[c];
            }
        }
    }
    for a in 0..d {
        for c in 0..a {
            m[(c, a)] = m[(a, c)];
        }
    }
    let factor = cholesky(&m)?;
    let mean = solve_lower_transpose(&factor, &solve_lower(&factor, &b));
    // residual form of the scale: positive by construction
    let fitted = w * &mean;
    let mut scale = inv_s2 * mean.norm_squared();
    for (i, &ui) in u.iter().enumerate() {
        let e = data.y[i] - fitted[i];
        scale += ui * e * e;
    }
    Ok(CoefficientPosterior { mean, factor, scale })
}

/// Per-order move-type probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ARMoveProbs {
    pub q_u: Vec<f64>,
    pub q_b: Vec<f64>,
    pub q_d: Vec<f64>,
}

/// `q_B(k) = ⅓ min{1, f_K(k+1)/f_K(k)}`, `q_D(k) = ⅓ min{1, f_K(k−1)/f_K(k)}`.
pub fn move_probs_green(f_k: &[f64]) -> Result<ARMoveProbs> {
    if f_k.is_empty() || f_k.iter().any(|&m| !(m > 0.0)) {
        return domain("f_K must be positive");
    }
    let top = f_k.len() - 1;
    let q_b: Vec<f64> = (0..=top)
        .map(|k| if k < top { (f_k[k + 1] / f_k[k]).min(1.0) / 3.0 } else { 0.0 })
        .collect();
    let q_d: Vec<f64> = (0..=top)
        .map(|k| if k > 0 { (f_k[k - 1] / f_k[k]).min(1.0) / 3.0 } else { 0.0 })
        .collect();
    let q_u = (0..=top).map(|k| 1.0 - q_b[k] - q_d[k]).collect();
    Ok(ARMoveProbs { q_u, q_b, q_d })
}

/// Mean and variance of the conditional of `a_{k+1}` under order `k + 1`
/// given the other coordinates of `state` (which is at order `k`).
pub fn birth_proposal_params(data: &ARData, state: &ARState) -> Result<(f64, f64)> {
    state.check(data)?;
    if state.k >= data.k_max {
        return domain("no birth from k_max");
    }
    let r = residuals(data, &state.alpha, &state.beta);
    let lag = state.k + 1;
    let mut m_ll = 1.0 / (data.sigma * data.sigma);
    let mut num = 0.0;
    for (i, (&ri, &ui)) in r.iter().zip(&state.u).enumerate() {
        let wi = data.lag(i, lag);
        m_ll += ui * wi * wi;
        num += ui * wi * ri;
    }
    Ok((num / m_ll, state.tau / m_ll))
}

fn log_normal_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

fn born(state: &ARState, a: f64) -> ARState {
    let mut s = state.clone();
    s.alpha.push(a);
    s.k += 1;
    s
}

/// Log acceptance ratio of adding `a` to `state`.
pub fn birth_log_ratio(data: &ARData, state: &ARState, a: f64, probs: &ARMoveProbs) -> Result<f64> {
    let (mean, var) = birth_proposal_params(data, state)?;
    let up = born(state, a);
    let num = log_unnorm_posterior(data, &up) + probs.q_d[state.k + 1].ln();
    let den = log_unnorm_posterior(data, state) + probs.q_b[state.k].ln() + log_normal_density(a, mean, var);
    Ok(num - den)
}

/// Log acceptance ratio of deleting the last coefficient of `state`.
pub fn death_log_ratio(data: &ARData, state: &ARState, probs: &ARMoveProbs) -> Result<f64> {
    if state.k == 0 {
        return domain("no death from order 0");
    }
    let mut down = state.clone();
    let a = down.alpha.pop().expect("k > 0");
    down.k -= 1;
    let (mean, var) = birth_proposal_params(data, &down)?;
    let num = log_unnorm_posterior(data, &down) + probs.q_b[down.k].ln() + log_normal_density(a, mean, var);
    let den = log_unnorm_posterior(data, state) + probs.q_d[state.k].ln();
    Ok(num - den)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveKind {
    Update,
    Birth,
    Death,
}

/// Outcome of one reversible jump step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepInfo {
    pub kind: MoveKind,
    pub accepted: bool,
}

/// One reversible jump transition.
pub fn rj_step<R: Rng + ?Sized>(data: &ARData, state: ARState, probs: &ARMoveProbs, rng: &mut R) -> Result<ARState> {
    rj_step_info(data, state, probs, rng).map(|(s, _)| s)
}

pub fn rj_step_info<R: Rng + ?Sized>(
    data: &ARData,
    state: ARState,
    probs: &ARMoveProbs,
    rng: &mut R,
) -> Result<(ARState, StepInfo)> {
    let k = state.k;
    let v: f64 = rng.random();
    if v < probs.q_b[k] {
        let (mean, var) = birth_proposal_params(data, &state)?;
        let a = mean + var.sqrt() * std_normal(rng);
        let lr = birth_log_ratio(data, &state, a, probs)?;
        let accepted = accept(lr, rng);
        let next = if accepted { born(&state, a) } else { state };
        Ok((next, StepInfo { kind: MoveKind::Birth, accepted }))
    } else if v < probs.q_b[k] + probs.q_d[k] {
        let lr = death_log_ratio(data, &state, probs)?;
        let accepted = accept(lr, rng);
        let next = if accepted {
            let mut s = state;
            s.alpha.pop();
            s.k -= 1;
            s
        } else {
            state
        };
        Ok((next, StepInfo { kind: MoveKind::Death, accepted }))
    } else {
        let next = gibbs_update(data, &state, rng)?;
        Ok((next, StepInfo { kind: MoveKind::Update, accepted: true }))
    }
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || uniform_open(rng).ln() < log_ratio
}

/// `(1{k=1}, α·1{k=1}, α²·1{k=1})`.
pub fn toy_test_functions(state: &ARState) -> [f64; 3] {
    if state.k == 1 {
        let a = state.alpha[0];
        [1.0, a, a * a]
    } else {
        [0.0, 0.0, 0.0]
    }
}

/// Indicators of `k = 0..=k_max`.
pub fn order_indicators(state: &ARState, k_max: usize) -> Vec<f64> {
    (0..=k_max).map(|k| f64::from(u8::from(state.k == k))).collect()
}

// ---------------------------------------------------------------------------
// simulation

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictorKind {
    /// A single column of ones.
    Intercept,
    /// iid standard normal entries.
    Gaussian,
    /// A column of ones followed by standard normal columns.
    InterceptGaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArSimConfig {
    pub n: usize,
    pub p: usize,
    pub k_max: usize,
    pub k_true: usize,
    pub alpha_true: Vec<f64>,
    pub beta_true: Vec<f64>,
    pub tau_true: f64,
    pub predictors: PredictorKind,
    pub sigma: f64,
    pub prior: OrderPrior,
    /// Steps simulated before the starting sequence is taken.
    pub warmup: usize,
}

impl ArSimConfig {
    /// `k_max = p = 1`, `N = 5`, intercept only.
    pub fn toy() -> Self {
        Self {
            n: 5,
            p: 1,
            k_max: 1,
            k_true: 1,
            alpha_true: vec![0.3],
            beta_true: vec![1.0],
            tau_true: 1.0,
            predictors: PredictorKind::Intercept,
            sigma: 1.0,
            prior: OrderPrior::Uniform,
            warmup: 100,
        }
    }

    /// `k_max = 10`, `p = 50`, `N = 100`, true order 4.
    pub fn scenario_two() -> Self {
        let mut beta = vec![0.0; 50];
        beta[0] = 1.0;
        for b in beta.iter_mut().skip(1).take(4) {
            *b = 0.5;
        }
        Self {
            n: 100,
            p: 50,
            k_max: 10,
            k_true: 4,
            alpha_true: vec![0.3, 0.05, 0.05, 0.05],
            beta_true: beta,
            tau_true: 1.0,
            predictors: PredictorKind::InterceptGaussian,
            sigma: 1.0,
            prior: OrderPrior::TruncatedPoisson { mean: 2.0 },
            warmup: 100,
        }
    }
}

pub const SIMULATION_ATTEMPTS: usize = 10;

/// Simulates `y_i = Σ α_j y_{i−j} + x_iᵀβ + √τ E_i` with Laplace errors.
pub fn simulate_ar_dataset<R: Rng + ?Sized>(cfg: &ArSimConfig, rng: &mut R) -> Result<ARData> {
    if cfg.k_true > cfg.k_max {
        return domain(format!("k_true = {} exceeds k_max = {}", cfg.k_true, cfg.k_max));
    }
    if cfg.alpha_true.len() != cfg.k_true || cfg.beta_true.len() != cfg.p {
        return Err(Error::Dimension(format!(
            "need {} AR and {} regression coefficients",
            cfg.k_true, cfg.p
        )));
    }
    if !(cfg.tau_true > 0.0) || !cfg.tau_true.is_finite() {
        return domain(format!("tau_true must be positive, got {}", cfg.tau_true));
    }
    if cfg.n == 0 || cfg.p == 0 {
        return domain("need N >= 1 and p >= 1");
    }
    if cfg.predictors == PredictorKind::Intercept && cfg.p != 1 {
        return domain("intercept-only predictors need p = 1");
    }
    let f_k = cfg.prior.masses(cfg.k_max)?;
    let sd = cfg.tau_true.sqrt();
    let mut last = Error::DataCondition("no attempt made".into());
    for _ in 0..SIMULATION_ATTEMPTS {
        let x = DMatrix::from_fn(cfg.n, cfg.p, |_, c| match cfg.predictors {
            PredictorKind::Intercept => 1.0,
            PredictorKind::InterceptGaussian if c == 0 => 1.0,
            _ => std_normal(rng),
        });
        // warm-up uses the mean predictor row of the first observation
        let total = cfg.warmup + cfg.k_max + cfg.n;
        let mut series: Vec<f64> = Vec::with_capacity(total);
        for t in 0..total {
            let i = t.saturating_sub(cfg.warmup + cfg.k_max);
            let mut v: f64 = (0..cfg.p).map(|c| x[(i, c)] * cfg.beta_true[c]).sum();
            for (j, a) in cfg.alpha_true.iter().enumerate() {
                if t > j {
                    v += a * series[t - j - 1];
                }
            }
            v += sd * sample_laplace_half_rate(rng);
            series.push(v);
        }
        let start = series[cfg.warmup..cfg.warmup + cfg.k_max].to_vec();
        let y = series[cfg.warmup + cfg.k_max..].to_vec();
        match ARData::new(y, x, start, cfg.k_max, cfg.sigma, f_k.clone()) {
            Ok(d) => return Ok(d),
            Err(e @ Error::DataCondition(_)) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

// ---------------------------------------------------------------------------
// toy oracle

/// Posterior quantities of the order-1 toy problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyOracle {
    pub p_k0: f64,
    pub p_k1: f64,
    pub mean_a: f64,
    pub sd_a: f64,
}

impl ToyOracle {
    pub fn as_array(&self) -> [f64; 4] {
        [self.p_k0, self.p_k1, self.mean_a, self.sd_a]
    }
}

/// `log ∫₀^∞ τ^{−c−1} exp(−S/(2√τ) − Q/(2σ²τ)) dτ` with `n = 2c`, `a = S/2`,
/// `b = Q/(2σ²)`. With `t = −½ log τ` the integrand is `2 exp(n t − a eᵗ −
/// b e²ᵗ)`, strictly log-concave, so a trapezoid rule around its mode
/// converges geometrically.
fn log_tau_integral(a: f64, b: f64, n: f64) -> f64 {
    let x = 2.0 * n / (a + (a * a + 8.0 * b * n).sqrt());
    let t0 = x.ln();
    let h = |t: f64| {
        let e = t.exp();
        n * t - a * e - b * e * e
    };
    let peak = h(t0);
    let curvature = a * x + 4.0 * b * x * x;
    let step = 0.3 / curvature.sqrt();
    let mut sum = 1.0;
    for dir in [-1.0, 1.0] {
        let mut j = 1.0;
        loop {
            let term = (h(t0 + dir * j * step) - peak).exp();
            sum += term;
            if term < 1e-18 {
                break;
            }
            j += 1.0;
        }
    }
    std::f64::consts::LN_2 + peak + (sum * step).ln()
}

/// Log of the un-augmented posterior with `τ` integrated out, for order `k`
/// and coefficients `(β, α)`, up to the shared constant `4^{−N}`.
fn log_marginal_tau(data: &ARData, k: usize, alpha: &[f64], beta: &[f64]) -> f64 {
    let r = residuals(data, alpha, beta);
    let s: f64 = r.iter().map(|v| v.abs()).sum();
    let q: f64 = alpha.iter().chain(beta).map(|v| v * v).sum();
    let dim = (data.p() + k) as f64;
    let s2 = data.sigma * data.sigma;
    let n = data.n() as f64 + dim;
    data.f_k[k].ln() - 0.5 * dim * (2.0 * PI * s2).ln() + log_tau_integral(0.5 * s, q / (2.0 * s2), n)
}

/// Quadrature values of `P(K=0)`, `P(K=1)`, `E[A|K=1]` and `SD[A|K=1]` for
/// data with `k_max = p = 1` and `N ≤ 5`.
pub fn toy_quadrature_oracle(data: &ARData) -> Result<ToyOracle> {
    toy_quadrature_oracle_with(data, 1e-9)
}

pub fn toy_quadrature_oracle_with(data: &ARData, rel_tol: f64) -> Result<ToyOracle> {
    if data.k_max != 1 || data.p() != 1 || data.n() > 5 {
        return domain("toy oracle needs k_max = p = 1 and N <= 5");
    }
    let n = data.n();
    let xs: Vec<f64> = (0..n).map(|i| data.x[(i, 0)]).collect();
    let ws: Vec<f64> = (0..n).map(|i| data.lag(i, 1)).collect();
    let ys = &data.y;
    // kinks of Σ|r_i| in β for fixed α
    let beta_breaks = |alpha: f64| -> Vec<f64> {
        (0..n)
            .filter(|&i| xs[i] != 0.0)
            .map(|i| (ys[i] - alpha * ws[i]) / xs[i])
            .collect()
    };
    // α where two kink lines cross
    let mut alpha_breaks = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let den = ws[i] * xs[j] - ws[j] * xs[i];
            if den.abs() > 1e-12 {
                alpha_breaks.push((ys[i] * xs[j] - ys[j] * xs[i]) / den);
            }
        }
    }
    let spread = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo {
            hi - lo
        } else {
            1.0
        }
    };
    let b0 = beta_breaks(0.0);
    let beta_scale = spread(&b0).max(data.sigma);
    let alpha_scale = spread(&alpha_breaks).max(data.sigma);

    // common log shift: the largest log density over the kink points
    let mut shift = f64::NEG_INFINITY;
    for &b in &b0 {
        shift = shift.max(log_marginal_tau(data, 0, &[], &[b]));
    }
    for &a in alpha_breaks.iter().chain(std::iter::once(&0.0)) {
        for b in beta_breaks(a) {
            shift = shift.max(log_marginal_tau(data, 1, &[a], &[b]));
        }
    }
    let opts = |scale: f64| QuadOptions {
        abs_tol: 1e-300,
        rel_tol,
        max_intervals: 20_000,
        tail_scale: scale,
    };
    let z0 = integrate(
        |b| [(log_marginal_tau(data, 0, &[], &[b]) - shift).exp()],
        f64::NEG_INFINITY,
        f64::INFINITY,
        &b0,
        &opts(beta_scale),
    )?
    .value[0];
    let inner_opts = opts(beta_scale);
    let mut failure = None;
    let moments = integrate(
        |a| {
            let r = integrate(
                |b| [(log_marginal_tau(data, 1, &[a], &[b]) - shift).exp()],
                f64::NEG_INFINITY,
                f64::INFINITY,
                &beta_breaks(a),
                &inner_opts,
            );
            match r {
                Ok(v) => {
                    let m = v.value[0];
                    [m, a * m, a * a * m]
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    [0.0; 3]
                }
            }
        },
        f64::NEG_INFINITY,
        f64::INFINITY,
        &alpha_breaks,
        &opts(alpha_scale),
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let [z1, m1, m2] = moments.value;
    let total = z0 + z1;
    let mean = m1 / z1;
    Ok(ToyOracle {
        p_k0: z0 / total,
        p_k1: z1 / total,
        mean_a: mean,
        sd_a: (m2 / z1 - mean * mean).sqrt(),
    })
}

// ---------------------------------------------------------------------------
// dataset file

/// Header `N p k_max sigma`, the starting sequence, `N` rows
/// `y_i x_{i,1} … x_{i,p}`, then the `f_K` masses.
pub fn write_ar_data<W: Write>(mut w: W, data: &ARData, config_hash: &str) -> Result<()> {
    writeln!(w, "# config_hash {config_hash}")?;
    writeln!(w, "{} {} {} {}", data.n(), data.p(), data.k_max, data.sigma)?;
    let join = |v: &mut dyn Iterator<Item = f64>| {
        let mut s = String::new();
        for (i, x) in v.enumerate() {
            if i > 0 {
                s.push(' ');
            }
            write!(s, "{x}").expect("write to string");
        }
        s
    };
    writeln!(w, "{}", join(&mut data.y_start.iter().copied()))?;
    for i in 0..data.n() {
        let xr = data.x.row(i);
        let mut row = std::iter::once(data.y[i]).chain(xr.iter().copied());
        writeln!(w, "{}", join(&mut row))?;
    }
    writeln!(w, "{}", join(&mut data.f_k.iter().copied()))?;
    Ok(())
}

pub fn read_ar_data<R: BufRead>(r: R) -> Result<ARData> {
    let mut lines = Vec::new();
    for (i, l) in r.lines().enumerate() {
        let l = l?;
        let t = l.trim();
        if !t.starts_with('#') {
            lines.push((i + 1, t.to_string()));
        }
    }
    let nums = |(ln, s): &(usize, String)| -> Result<Vec<f64>> {
        s.split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: *ln,
                    msg: format!("not a number: {t:?}"),
                })
            })
            .collect()
    };
    let eof = || Error::Parse {
        line: lines.last().map_or(0, |l| l.0),
        msg: "unexpected end of file".into(),
    };
    let mut it = lines.iter();
    let header_line = it.next().ok_or_else(eof)?;
    let h = nums(header_line)?;
    let bad_header = Error::Parse {
        line: header_line.0,
        msg: "header must be `N p k_max sigma`".into(),
    };
    if h.len() != 4 || h[..3].iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
        return Err(bad_header);
    }
    let (n, p, k_max, sigma) = (h[0] as usize, h[1] as usize, h[2] as usize, h[3]);
    let start_line = it.next().ok_or_else(eof)?;
    let y_start = if k_max == 0 && start_line.1.is_empty() {
        Vec::new()
    } else {
        nums(start_line)?
    };
    if y_start.len() != k_max {
        return Err(Error::Parse {
            line: start_line.0,
            msg: format!("expected {k_max} starting values"),
        });
    }
    let mut y = Vec::with_capacity(n);
    let mut xv = Vec::with_capacity(n * p);
    for _ in 0..n {
        let l = it.next().ok_or_else(eof)?;
        let row = nums(l)?;
        if row.len() != p + 1 {
            return Err(Error::Parse {
                line: l.0,
                msg: format!("expected {} values, found {}", p + 1, row.len()),
            });
        }
        y.push(row[0]);
        xv.extend_from_slice(&row[1..]);
    }
    let fl = it.next().ok_or_else(eof)?;
    let f_k = nums(fl)?;
    ARData::new(y, DMatrix::from_row_slice(n, p, &xv), y_start, k_max, sigma, f_k).map_err(|e| match e {
        Error::Parse { .. } => e,
        other => Error::Parse {
            line: fl.0,
            msg: other.to_string(),
        },
    })
}
