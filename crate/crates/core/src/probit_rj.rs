//! Reversible jump sampler for probit regression with a spike-and-slab prior.
//!
//! Included coefficients are stored in increasing predictor index order
//! after the intercept.

use std::f64::consts::PI;
use std::io::BufRead;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::linalg::{cholesky, solve_lower, solve_lower_transpose};
use crate::quadrature::gauss_hermite;
use crate::rng_dist::{inverse_mills, log_std_normal_cdf, sample_truncated_normal_onesided, std_normal, uniform_open};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 50;

/// Binary responses, predictors and prior hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbitData {
    y: Vec<u8>,
    x: DMatrix<f64>,
    sigma: f64,
    p_slab: f64,
    /// `[1, x]ᵀ[1, x]`, shared by every model.
    gram: DMatrix<f64>,
}

impl ProbitData {
    pub fn new(y: Vec<u8>, x: DMatrix<f64>, sigma: f64, p_slab: f64) -> Result<Self> {
        let n = y.len();
        if n == 0 || x.ncols() == 0 {
            return Err(Error::Dimension("need N >= 1 and r >= 1".into()));
        }
        if x.nrows() != n {
            return Err(Error::Dimension(format!("{n} responses but x has {} rows", x.nrows())));
        }
        if y.iter().any(|&v| v > 1) {
            return domain("responses must be 0 or 1");
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return domain(format!("sigma must be positive, got {sigma}"));
        }
        if !(p_slab > 0.0 && p_slab < 1.0) {
            return domain(format!("p must lie in (0, 1), got {p_slab}"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return domain("predictors contain non-finite values");
        }
        let r = x.ncols();
        let mut full = DMatrix::<f64>::from_element(n, r + 1, 1.0);
        full.columns_mut(1, r).copy_from(&x);
        let gram = full.transpose() * &full;
        Ok(Self {
            y,
            x,
            sigma,
            p_slab,
            gram,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn r(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn p_slab(&self) -> f64 {
        self.p_slab
    }

    /// `X(k)`: a column of ones followed by the included predictors.
    pub fn design(&self, k: &[u8]) -> DMatrix<f64> {
        let idx = included(k);
        DMatrix::from_fn(self.n(), idx.len() + 1, |i, c| if c == 0 { 1.0 } else { self.x[(i, idx[c - 1])] })
    }
}

/// Indices `j` with `k_j = 1`, increasing.
pub fn included(k: &[u8]) -> Vec<usize> {
    k.iter().enumerate().filter(|(_, &v)| v == 1).map(|(j, _)| j).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbitState {
    pub k: Vec<u8>,
    pub z: Vec<f64>,
}

impl ProbitState {
    /// Empty model with zero intercept.
    pub fn empty(r: usize) -> Self {
        Self {
            k: vec![0; r],
            z: vec![0.0],
        }
    }

    pub fn size(&self) -> usize {
        self.k.iter().filter(|&&v| v == 1).count()
    }

    pub fn check(&self, data: &ProbitData) -> Result<()> {
        if self.k.len() != data.r() || self.k.iter().any(|&v| v > 1) {
            return Err(Error::Dimension(format!("k must be a 0/1 vector of length {}", data.r())));
        }
        if self.z.len() != self.size() + 1 {
            return Err(Error::Dimension(format!(
                "z has {} entries for {} included predictors",
                self.z.len(),
                self.size()
            )));
        }
        Ok(())
    }

    /// Position of predictor `j` within `z` if it were included.
    fn slot(&self, j: usize) -> usize {
        1 + self.k[..j].iter().filter(|&&v| v == 1).count()
    }

    /// Adds predictor `j` with coefficient `b`.
    pub fn insert(&self, j: usize, b: f64) -> Self {
        let mut s = self.clone();
        let at = s.slot(j);
        s.k[j] = 1;
        s.z.insert(at, b);
        s
    }

    /// Removes predictor `j`, returning the reduced state and its coefficient.
    pub fn remove(&self, j: usize) -> (Self, f64) {
        let mut s = self.clone();
        let at = s.slot(j);
        s.k[j] = 0;
        let b = s.z.remove(at);
        (s, b)
    }
}

fn linear_predictor(data: &ProbitData, state: &ProbitState) -> Vec<f64> {
    let idx = included(&state.k);
    (0..data.n())
        .map(|i| {
            let mut m = state.z[0];
            for (c, &j) in idx.iter().enumerate() {
                m += data.x[(i, j)] * state.z[c + 1];
            }
            m
        })
        .collect()
}

fn log_lik(y: u8, mu: f64) -> f64 {
    if y == 1 {
        log_std_normal_cdf(mu)
    } else {
        log_std_normal_cdf(-mu)
    }
}

/// `log π(k, z | y)` including all constants of the printed density.
pub fn log_unnorm_posterior(data: &ProbitData, state: &ProbitState) -> Result<f64> {
    state.check(data)?;
    let size = state.size() as f64;
    let s2 = data.sigma * data.sigma;
    let ln_norm = 0.5 * (2.0 * PI).ln() + data.sigma.ln();
    let q: f64 = state.z.iter().map(|v| v * v).sum();
    let mu = linear_predictor(data, state);
    let ll: f64 = data.y.iter().zip(&mu).map(|(&y, &m)| log_lik(y, m)).sum();
    Ok(size * data.p_slab.ln() - (size + 1.0) * ln_norm - q / (2.0 * s2) + ll)
}

/// Data-augmentation update at fixed `k`.
pub fn da_update<R: Rng + ?Sized>(data: &ProbitData, state: &ProbitState, rng: &mut R) -> Result<ProbitState> {
    state.check(data)?;
    let idx = included(&state.k);
    let d = idx.len() + 1;
    let mu = linear_predictor(data, state);
    let mut xtu = DVector::<f64>::zeros(d);
    for (i, &m) in mu.iter().enumerate() {
        let u = sample_truncated_normal_onesided(m, 1.0, data.y[i] == 1, rng)?;
        xtu[0] += u;
        for (c, &j) in idx.iter().enumerate() {
            xtu[c + 1] += data.x[(i, j)] * u;
        }
    }
    let cols: Vec<usize> = std::iter::once(0).chain(idx.iter().map(|j| j + 1)).collect();
    let inv_s2 = 1.0 / (data.sigma * data.sigma);
    let prec = DMatrix::from_fn(d, d, |a, b| data.gram[(cols[a], cols[b])] + if a == b { inv_s2 } else { 0.0 });
    let l = cholesky(&prec)?;
    let mean = solve_lower_transpose(&l, &solve_lower(&l, &xtu));
    let e = DVector::from_iterator(d, (0..d).map(|_| std_normal(rng)));
    let z = mean + solve_lower_transpose(&l, &e);
    Ok(ProbitState {
        k: state.k.clone(),
        z: z.iter().copied().collect(),
    })
}

/// Mode and Laplace variance of `b ↦ −b²/(2σ²) + Σ_i log F(s_i(η_i + x_i b))`
/// where `s_i = ±1` encodes the response.
pub fn laplace_1d(eta: &[f64], xcol: &[f64], y: &[u8], sigma: f64) -> Result<(f64, f64)> {
    if eta.len() != xcol.len() || eta.len() != y.len() {
        return Err(Error::Dimension("offsets, predictor and responses differ in length".into()));
    }
    let inv_s2 = 1.0 / (sigma * sigma);
    let derivs = |b: f64| {
        let (mut g, mut h) = (-b * inv_s2, -inv_s2);
        for ((&e, &x), &yi) in eta.iter().zip(xcol).zip(y) {
            let s = if yi == 1 { 1.0 } else { -1.0 };
            let m = s * (e + x * b);
            let lam = inverse_mills(m);
            g += s * x * lam;
            h -= x * x * lam * (m + lam);
        }
        (g, h)
    };
    let mut b = 0.0;
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        let (g, h) = derivs(b);
        if g.abs() < NEWTON_TOL {
            converged = true;
            break;
        }
        if !(h < 0.0) || !h.is_finite() {
            break;
        }
        b -= g / h;
        if !b.is_finite() {
            break;
        }
    }
    if !converged {
        b = bisect_gradient(|b| derivs(b).0)?;
    }
    let (_, h) = derivs(b);
    if !(h < 0.0) || !h.is_finite() {
        return Err(Error::Convergence(format!("non-negative curvature {h} at mode {b}")));
    }
    Ok((b, -1.0 / h))
}

fn bisect_gradient(grad: impl Fn(f64) -> f64) -> Result<f64> {
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut expand = 0;
    while grad(lo) < 0.0 || grad(hi) > 0.0 {
        lo *= 2.0;
        hi *= 2.0;
        expand += 1;
        if expand > 200 {
            return Err(Error::Convergence("no sign change in the gradient".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g = grad(mid);
        if g.abs() < NEWTON_TOL || hi - lo < 1e-14 * mid.abs().max(1.0) {
            return Ok(mid);
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Laplace proposal for the coefficient of predictor `j` (excluded in
/// `state`) under the model with `j` added.
pub fn mode_and_curvature(data: &ProbitData, state: &ProbitState, j: usize) -> Result<(f64, f64)> {
    state.check(data)?;
    if j >= data.r() || state.k[j] == 1 {
        return domain(format!("predictor {j} is not an excluded index"));
    }
    let eta = linear_predictor(data, state);
    let xcol: Vec<f64> = data.x.column(j).iter().copied().collect();
    laplace_1d(&eta, &xcol, &data.y, data.sigma)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoveProbs {
    pub q_u: f64,
    pub q_b: f64,
    pub q_d: f64,
}

pub fn move_probs_spike_slab(p_slab: f64, r: usize, size: usize) -> Result<MoveProbs> {
    if size > r {
        return domain(format!("model size {size} exceeds r = {r}"));
    }
    let (rf, sf) = (r as f64, size as f64);
    let q_b = if size < r { (p_slab * (rf - sf) / (sf + 1.0)).min(1.0) / 3.0 } else { 0.0 };
    let q_d = if size > 0 { (sf / (p_slab * (rf - sf + 1.0))).min(1.0) / 3.0 } else { 0.0 };
    Ok(MoveProbs {
        q_u: 1.0 - q_b - q_d,
        q_b,
        q_d,
    })
}

fn log_normal_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

/// Log acceptance ratio of adding predictor `j` with coefficient `b`.
pub fn birth_log_ratio(data: &ProbitData, state: &ProbitState, j: usize, b: f64) -> Result<f64> {
    let (mean, var) = mode_and_curvature(data, state, j)?;
    let size = state.size();
    let r = data.r() as f64;
    let up = state.insert(j, b);
    let num = log_unnorm_posterior(data, &up)? + move_probs_spike_slab(data.p_slab, data.r(), size + 1)?.q_d.ln()
        - (size as f64 + 1.0).ln();
    let den = log_unnorm_posterior(data, state)? + move_probs_spike_slab(data.p_slab, data.r(), size)?.q_b.ln()
        - (r - size as f64).ln()
        + log_normal_density(b, mean, var);
    Ok(num - den)
}

/// Log acceptance ratio of removing included predictor `j`.
pub fn death_log_ratio(data: &ProbitData, state: &ProbitState, j: usize) -> Result<f64> {
    state.check(data)?;
    if j >= data.r() || state.k[j] == 0 {
        return domain(format!("predictor {j} is not an included index"));
    }
    let (down, b) = state.remove(j);
    let (mean, var) = mode_and_curvature(data, &down, j)?;
    let size = down.size();
    let r = data.r() as f64;
    // same grouping as the birth ratio from `down`, inverted
    let num = log_unnorm_posterior(data, &down)? + move_probs_spike_slab(data.p_slab, data.r(), size)?.q_b.ln()
        - (r - size as f64).ln()
        + log_normal_density(b, mean, var);
    let den = log_unnorm_posterior(data, state)? + move_probs_spike_slab(data.p_slab, data.r(), size + 1)?.q_d.ln()
        - (size as f64 + 1.0).ln();
    Ok(num - den)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveKind {
    Update,
    Birth,
    Death,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepInfo {
    pub kind: MoveKind,
    pub accepted: bool,
}

pub fn rj_step<R: Rng + ?Sized>(data: &ProbitData, state: ProbitState, rng: &mut R) -> Result<ProbitState> {
    rj_step_info(data, state, rng).map(|(s, _)| s)
}

pub fn rj_step_info<R: Rng + ?Sized>(
    data: &ProbitData,
    state: ProbitState,
    rng: &mut R,
) -> Result<(ProbitState, StepInfo)> {
    let size = state.size();
    let q = move_probs_spike_slab(data.p_slab, data.r(), size)?;
    let v: f64 = rng.random();
    if v < q.q_b {
        let out: Vec<usize> = (0..data.r()).filter(|&j| state.k[j] == 0).collect();
        let j = out[rng.random_range(0..out.len())];
        let (mean, var) = mode_and_curvature(data, &state, j)?;
        let b = mean + var.sqrt() * std_normal(rng);
        let lr = birth_log_ratio(data, &state, j, b)?;
        let accepted = accept(lr, rng);
        let next = if accepted { state.insert(j, b) } else { state };
        Ok((next, StepInfo { kind: MoveKind::Birth, accepted }))
    } else if v < q.q_b + q.q_d {
        let inc = included(&state.k);
        let j = inc[rng.random_range(0..inc.len())];
        let lr = death_log_ratio(data, &state, j)?;
        let accepted = accept(lr, rng);
        let next = if accepted { state.remove(j).0 } else { state };
        Ok((next, StepInfo { kind: MoveKind::Death, accepted }))
    } else {
        let next = da_update(data, &state, rng)?;
        Ok((next, StepInfo { kind: MoveKind::Update, accepted: true }))
    }
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || uniform_open(rng).ln() < log_ratio
}

/// `f_j = 1{k_j = 1}` for every predictor.
pub fn inclusion_indicators(state: &ProbitState) -> Vec<f64> {
    state.k.iter().map(|&v| f64::from(v)).collect()
}

/// Index of `k` read as a binary number with predictor 0 as the low bit.
pub fn model_index(k: &[u8]) -> usize {
    k.iter().enumerate().map(|(j, &v)| usize::from(v) << j).sum()
}

// ---------------------------------------------------------------------------
// evidence oracle

/// Per-model posterior summary from mode-centred Gauss–Hermite quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelEvidence {
    pub log_evidence: f64,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// `log ∫ π(k, z | y) dz` with posterior mean and sd of `z`, using a
/// tensor Gauss–Hermite rule of `nodes` points per axis in coordinates
/// whitened by the Hessian at the mode. Meant for `|I_k| + 1 ≤ 5`.
pub fn model_evidence(data: &ProbitData, k: &[u8], nodes: usize) -> Result<ModelEvidence> {
    let base = ProbitState {
        k: k.to_vec(),
        z: vec![0.0; included(k).len() + 1],
    };
    base.check(data)?;
    let d = base.z.len();
    if d > 5 {
        return domain(format!("tensor quadrature in {d} dimensions is not supported"));
    }
    let x = data.design(k);
    let inv_s2 = 1.0 / (data.sigma * data.sigma);
    // Newton on the concave log density
    let mut z = DVector::<f64>::zeros(d);
    let grad_hess = |z: &DVector<f64>| {
        let mu = &x * z;
        let mut g = -z * inv_s2;
        let mut h = DMatrix::<f64>::identity(d, d) * (-inv_s2);
        for i in 0..data.n() {
            let s = if data.y[i] == 1 { 1.0 } else { -1.0 };
            let m = s * mu[i];
            let lam = inverse_mills(m);
            let row = x.row(i).transpose();
            g += &row * (s * lam);
            h -= &row * row.transpose() * (lam * (m + lam));
        }
        (g, h)
    };
    let mut converged = false;
    for _ in 0..200 {
        let (g, h) = grad_hess(&z);
        if g.amax() < 1e-12 {
            converged = true;
            break;
        }
        let step = (-h).cholesky().ok_or_else(|| Error::Convergence("Hessian lost concavity".into()))?.solve(&g);
        z += step;
    }
    if !converged {
        return Err(Error::Convergence("evidence mode search did not converge".into()));
    }
    let (_, h) = grad_hess(&z);
    let l = cholesky(&(-h))?;
    let log_det_l: f64 = (0..d).map(|i| l[(i, i)].ln()).sum();
    let (t, w) = gauss_hermite(nodes);
    let at = |zz: &[f64]| -> Result<f64> {
        log_unnorm_posterior(
            data,
            &ProbitState {
                k: k.to_vec(),
                z: zz.to_vec(),
            },
        )
    };
    let peak = at(z.as_slice())?;
    let mut total = 0.0;
    let mut m1 = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    let mut counter = vec![0usize; d];
    loop {
        let tv = DVector::from_iterator(d, counter.iter().map(|&c| t[c] * std::f64::consts::SQRT_2));
        let pt = &z + solve_lower_transpose(&l, &tv);
        let weight: f64 = counter.iter().map(|&c| w[c]).product();
        let e2: f64 = counter.iter().map(|&c| t[c] * t[c]).sum();
        let f = (at(pt.as_slice())? - peak + e2).exp() * weight;
        total += f;
        for a in 0..d {
            m1[a] += f * pt[a];
            m2[a] += f * pt[a] * pt[a];
        }
        let mut pos = 0;
        loop {
            if pos == d {
                let mean: Vec<f64> = m1.iter().map(|v| v / total).collect();
                let sd = m2
                    .iter()
                    .zip(&mean)
                    .map(|(v, m)| (v / total - m * m).max(0.0).sqrt())
                    .collect();
                let log_evidence = peak + total.ln() + 0.5 * d as f64 * 2f64.ln() - log_det_l;
                return Ok(ModelEvidence { log_evidence, mean, sd });
            }
            counter[pos] += 1;
            if counter[pos] < nodes {
                break;
            }
            counter[pos] = 0;
            pos += 1;
        }
    }
}

/// Posterior model probabilities over all `2^r` models, indexed by
/// [`model_index`].
pub fn model_posterior(data: &ProbitData, nodes: usize) -> Result<Vec<f64>> {
    let r = data.r();
    if r > 4 {
        return domain("exhaustive model enumeration is limited to r <= 4");
    }
    let mut logs = Vec::with_capacity(1 << r);
    for idx in 0..(1usize << r) {
        let k: Vec<u8> = (0..r).map(|j| u8::from(idx >> j & 1 == 1)).collect();
        logs.push(model_evidence(data, &k, nodes)?.log_evidence);
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

// ---------------------------------------------------------------------------
// synthetic data and Spambase

/// Gaussian predictors and responses drawn from the probit model with the
/// given intercept and coefficients.
pub fn simulate_probit<R: Rng + ?Sized>(
    n: usize,
    intercept: f64,
    beta: &[f64],
    sigma: f64,
    p_slab: f64,
    rng: &mut R,
) -> Result<ProbitData> {
    let r = beta.len();
    let x = DMatrix::from_fn(n, r, |_, _| std_normal(rng));
    let y = (0..n)
        .map(|i| {
            let m = intercept + (0..r).map(|j| x[(i, j)] * beta[j]).sum::<f64>();
            u8::from(m + std_normal(rng) > 0.0)
        })
        .collect();
    ProbitData::new(y, x, sigma, p_slab)
}

pub const SPAMBASE_FEATURES: usize = 57;
pub const SPAMBASE_ROWS: usize = 4601;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpambaseOptions {
    /// Center each feature and scale it to unit (population) variance.
    pub standardize: bool,
    pub sigma: f64,
    pub p_slab: f64,
}

impl Default for SpambaseOptions {
    fn default() -> Self {
        Self {
            standardize: true,
            sigma: 1.0,
            p_slab: 0.5,
        }
    }
}

pub fn load_spambase(path: &Path, opts: &SpambaseOptions) -> Result<ProbitData> {
    let f = std::fs::File::open(path)?;
    parse_spambase(std::io::BufReader::new(f), opts)
}

/// Comma-separated rows of 57 features followed by a 0/1 label.
pub fn parse_spambase<R: BufRead>(r: R, opts: &SpambaseOptions) -> Result<ProbitData> {
    let mut y = Vec::new();
    let mut xs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let row = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        if fields.len() != SPAMBASE_FEATURES + 1 {
            return Err(Error::Parse {
                line: row,
                msg: format!("expected {} fields, found {}", SPAMBASE_FEATURES + 1, fields.len()),
            });
        }
        for f in &fields[..SPAMBASE_FEATURES] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: row,
                msg: format!("not a number: {f:?}"),
            })?;
            xs.push(v);
        }
        y.push(match fields[SPAMBASE_FEATURES] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line: row,
                    msg: format!("label must be 0 or 1, found {other:?}"),
                })
            }
        });
    }
    let n = y.len();
    let mut x = DMatrix::from_row_slice(n, SPAMBASE_FEATURES, &xs);
    if opts.standardize {
        standardize_columns(&mut x);
    }
    ProbitData::new(y, x, opts.sigma, opts.p_slab)
}

/// Centers columns and scales them to unit population variance; constant
/// columns are left at zero.
pub fn standardize_columns(x: &mut DMatrix<f64>) {
    let n = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_dist::RngStream;

    fn small(seed: u64, r: usize, n: usize) -> ProbitData {
        let beta: Vec<f64> = (0..r).map(|j| if j % 2 == 0 { 0.8 } else { 0.0 }).collect();
        simulate_probit(n, 0.2, &beta, 2.0, 0.5, &mut RngStream::new(seed, 0)).unwrap()
    }

    fn random_state<R: Rng>(data: &ProbitData, rng: &mut R) -> ProbitState {
        let k: Vec<u8> = (0..data.r()).map(|_| u8::from(rng.random::<bool>())).collect();
        let d = included(&k).len() + 1;
        ProbitState {
            k,
            z: (0..d).map(|_| std_normal(rng)).collect(),
        }
    }

    #[test]
    fn empty_model_value() {
        let data = small(1, 3, 10);
        let v = log_unnorm_posterior(&data, &ProbitState::empty(3)).unwrap();
        let expect = -(0.5 * (2.0 * PI).ln() + data.sigma().ln()) + 10.0 * 0.5f64.ln();
        assert!((v - expect).abs() < 1e-12);
        let bad = ProbitState {
            k: vec![0, 0, 0],
            z: vec![0.0, 1.0],
        };
        assert!(log_unnorm_posterior(&data, &bad).is_err());
    }

    #[test]
    fn posterior_matches_direct_product() {
        let data = small(2, 4, 25);
        let mut rng = RngStream::new(3, 0);
        for _ in 0..20 {
            let s = random_state(&data, &mut rng);
            let idx = included(&s.k);
            let mut prod = 1.0f64;
            for i in 0..data.n() {
                let mut m = s.z[0];
                for (c, &j) in idx.iter().enumerate() {
                    m += data.x()[(i, j)] * s.z[c + 1];
                }
                let f = 0.5 * libm::erfc(-m / std::f64::consts::SQRT_2);
                prod *= if data.y()[i] == 1 { f } else { 1.0 - f };
            }
            let c = (2.0 * PI).sqrt() * data.sigma();
            let q: f64 = s.z.iter().map(|v| v * v).sum();
            let direct = (1.0 / c) * (data.p_slab() / c).powi(idx.len() as i32)
                * (-q / (2.0 * data.sigma() * data.sigma())).exp()
                * prod;
            let v = log_unnorm_posterior(&data, &s).unwrap();
            assert!((v - direct.ln()).abs() <= 1e-10 * v.abs(), "{v} vs {}", direct.ln());
        }
    }

    #[test]
    fn move_probability_examples() {
        let q = move_probs_spike_slab(0.5, 57, 28).unwrap();
        assert!((q.q_b - 1.0 / 6.0).abs() < 1e-15);
        assert!((q.q_d - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(move_probs_spike_slab(0.5, 5, 0).unwrap().q_d, 0.0);
        assert_eq!(move_probs_spike_slab(0.5, 5, 5).unwrap().q_b, 0.0);
        assert!(move_probs_spike_slab(0.5, 5, 6).is_err());
        for &p in &[0.1, 0.5, 0.9] {
            for r in 1..12 {
                for s in 0..r {
                    let a = move_probs_spike_slab(p, r, s).unwrap();
                    let b = move_probs_spike_slab(p, r, s + 1).unwrap();
                    let ratio = p * b.q_d / (s as f64 + 1.0) / (a.q_b / (r - s) as f64);
                    assert!((ratio - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn prior_ratio_on_single_flips() {
        let data = small(4, 3, 1);
        // remove the likelihood by comparing at z with no data influence
        let s = ProbitState {
            k: vec![1, 0, 0],
            z: vec![0.0, 0.0],
        };
        let t = s.insert(2, 0.0);
        let gap = log_unnorm_posterior(&data, &t).unwrap() - log_unnorm_posterior(&data, &s).unwrap();
        let c = 0.5 * (2.0 * PI).ln() + data.sigma().ln();
        assert!((gap - (0.5f64.ln() - c)).abs() < 1e-12);
    }

    #[test]
    fn insert_remove_round_trip() {
        let data = small(5, 6, 10);
        let mut rng = RngStream::new(6, 0);
        for _ in 0..50 {
            let s = random_state(&data, &mut rng);
            for j in 0..6 {
                if s.k[j] == 0 {
                    let b = std_normal(&mut rng);
                    let t = s.insert(j, b);
                    t.check(&data).unwrap();
                    let (back, bb) = t.remove(j);
                    assert_eq!(back, s);
                    assert_eq!(bb, b);
                }
            }
        }
        let s = ProbitState {
            k: vec![0, 1, 0, 1, 0, 0],
            z: vec![0.1, 2.0, 4.0],
        };
        assert_eq!(s.insert(2, 3.0).z, vec![0.1, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn laplace_trivial_cases() {
        let (m, v) = laplace_1d(&[], &[], &[], 1.7).unwrap();
        assert_eq!(m, 0.0);
        assert!((v - 1.7 * 1.7).abs() < 1e-14);
    }

    #[test]
    fn mode_matches_grid_argmax() {
        let data = small(7, 3, 30);
        let mut rng = RngStream::new(8, 0);
        for _ in 0..10 {
            let s = random_state(&data, &mut rng);
            let Some(j) = (0..3).find(|&j| s.k[j] == 0) else { continue };
            let (mode, var) = mode_and_curvature(&data, &s, j).unwrap();
            assert!(var > 0.0);
            let f = |b: f64| log_unnorm_posterior(&data, &s.insert(j, b)).unwrap();
            // golden-section on the concave density as the grid refinement
            let (mut lo, mut hi) = (mode - 5.0, mode + 5.0);
            let mut best = lo;
            for _ in 0..6 {
                let step = (hi - lo) / 1000.0;
                let mut bv = f64::NEG_INFINITY;
                for i in 0..=1000 {
                    let b = lo + step * i as f64;
                    let v = f(b);
                    if v > bv {
                        bv = v;
                        best = b;
                    }
                }
                lo = best - step;
                hi = best + step;
            }
            assert!((best - mode).abs() < 1e-6, "{best} vs {mode}");
            // curvature against a central difference
            let h = 1e-4;
            let d2 = (f(mode + h) - 2.0 * f(mode) + f(mode - h)) / (h * h);
            assert!((-1.0 / d2 - var).abs() < 1e-4 * var);
        }
    }

    #[test]
    fn newton_fallback_on_separated_data() {
        // perfectly separated single predictor with a wide prior
        let eta = vec![0.0; 6];
        let x = vec![-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
        let y = vec![0, 0, 0, 1, 1, 1];
        let (m, v) = laplace_1d(&eta, &x, &y, 1e3).unwrap();
        assert!(m > 0.0 && m.is_finite() && v > 0.0);
    }

    #[test]
    fn antisymmetry_on_random_states() {
        let data = small(9, 5, 20);
        let mut rng = RngStream::new(10, 0);
        let mut checked = 0;
        while checked < 100 {
            let s = random_state(&data, &mut rng);
            let out: Vec<usize> = (0..5).filter(|&j| s.k[j] == 0).collect();
            if out.is_empty() {
                continue;
            }
            let j = out[checked % out.len()];
            let b = std_normal(&mut rng);
            let lb = birth_log_ratio(&data, &s, j, b).unwrap();
            let ld = death_log_ratio(&data, &s.insert(j, b), j).unwrap();
            assert_eq!(lb + ld, 0.0);
            checked += 1;
        }
    }

    #[test]
    fn design_has_intercept() {
        let data = small(11, 4, 8);
        let x = data.design(&[0, 1, 0, 1]);
        assert_eq!(x.ncols(), 3);
        assert!(x.column(0).iter().all(|&v| v == 1.0));
        assert_eq!(x.column(2), data.x().column(3));
    }

    #[test]
    fn every_model_reachable_in_r_steps() {
        // Birth and death probabilities are positive wherever a flip exists,
        // so a path of single flips of length ≤ r connects any two models.
        for r in 1..8 {
            for s in 0..=r {
                let q = move_probs_spike_slab(0.5, r, s).unwrap();
                assert_eq!(q.q_b > 0.0, s < r);
                assert_eq!(q.q_d > 0.0, s > 0);
            }
        }
    }

    #[test]
    fn evidence_refinement() {
        let data = small(12, 3, 30);
        let k = [1, 1, 1];
        let a = model_evidence(&data, &k, 16).unwrap();
        let b = model_evidence(&data, &k, 24).unwrap();
        assert!((a.log_evidence - b.log_evidence).abs() < 1e-6);
        for i in 0..4 {
            assert!((a.mean[i] - b.mean[i]).abs() < 1e-5);
        }
        let post = model_posterior(&data, 20).unwrap();
        assert_eq!(post.len(), 8);
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn da_update_fixed_model_matches_quadrature() {
        let data = small(13, 2, 20);
        let k = vec![1, 1];
        let oracle = model_evidence(&data, &k, 24).unwrap();
        let mut rng = RngStream::new(14, 0);
        let mut s = ProbitState {
            k: k.clone(),
            z: vec![0.0; 3],
        };
        for _ in 0..1000 {
            s = da_update(&data, &s, &mut rng).unwrap();
        }
        let n = 100_000;
        let mut m1 = [0.0; 3];
        let mut m2 = [0.0; 3];
        for _ in 0..n {
            s = da_update(&data, &s, &mut rng).unwrap();
            for a in 0..3 {
                m1[a] += s.z[a];
                m2[a] += s.z[a] * s.z[a];
            }
        }
        for a in 0..3 {
            let mean = m1[a] / n as f64;
            let sd = (m2[a] / n as f64 - mean * mean).sqrt();
            assert!((mean - oracle.mean[a]).abs() < 0.02, "mean {a}: {mean} vs {}", oracle.mean[a]);
            assert!((sd - oracle.sd[a]).abs() < 0.02, "sd {a}: {sd} vs {}", oracle.sd[a]);
        }
    }

    #[test]
    fn da_update_reproducible() {
        let data = small(15, 3, 12);
        let s = ProbitState {
            k: vec![1, 0, 1],
            z: vec![0.0, 0.5, -0.5],
        };
        let a = da_update(&data, &s, &mut RngStream::new(1, 4)).unwrap();
        let b = da_update(&data, &s, &mut RngStream::new(1, 4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.k, s.k);
    }

    fn spam_row(label: &str, v: f64) -> String {
        let mut fields: Vec<String> = (0..SPAMBASE_FEATURES).map(|j| format!("{}", v + j as f64)).collect();
        fields.push(label.to_string());
        fields.join(",")
    }

    #[test]
    fn spambase_parsing() {
        let text = [spam_row("1", 0.0), spam_row("0", 2.0), spam_row("1", 7.0)].join("\n");
        let data = parse_spambase(text.as_bytes(), &SpambaseOptions::default()).unwrap();
        assert_eq!((data.n(), data.r()), (3, 57));
        for col in data.x().column_iter() {
            let mean = col.sum() / 3.0;
            let sd = (col.map(|v| (v - mean) * (v - mean)).sum() / 3.0).sqrt();
            assert!(mean.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        }
        let raw = parse_spambase(
            text.as_bytes(),
            &SpambaseOptions {
                standardize: false,
                ..SpambaseOptions::default()
            },
        )
        .unwrap();
        assert_eq!(raw.x()[(1, 0)], 2.0);
        let truncated = format!("{}\n{}", spam_row("1", 0.0), &spam_row("0", 1.0)[..40]);
        assert!(matches!(
            parse_spambase(truncated.as_bytes(), &SpambaseOptions::default()),
            Err(Error::Parse { line: 2, .. })
        ));
        let bad_label = spam_row("2", 0.0);
        assert!(matches!(
            parse_spambase(bad_label.as_bytes(), &SpambaseOptions::default()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
