//! Monte Carlo error assessment: ergodic averages, batch-means covariance,
//! the delta method, noise injection and simultaneous confidence intervals.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::finite_spectral::{closed_classes, FiniteTransChain};
use crate::linalg::{cholesky, symmetric_eigenvalues};
use crate::mvn_prob::{solve_rectangle_quantile_traced, SolveOptions};
use crate::rng_dist::{std_normal, std_normal_quantile};
use crate::scalar::Real;

pub const DEFAULT_BATCH_EXPONENT: f64 = 0.6;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceMeta {
    pub sampler_id: String,
    pub seed: u64,
    pub config_hash: String,
}

/// One step of a chain: a model label and the parameter coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct StateRecord {
    pub k: u64,
    pub z: Vec<f64>,
}

/// Time-ordered test-function values `f(X(t))`, one row per step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace<T: Real> {
    f_values: DMatrix<T>,
    pub state_log: Option<Vec<StateRecord>>,
    pub meta: TraceMeta,
}

impl<T: Real> Trace<T> {
    pub fn new(f_values: DMatrix<T>, meta: TraceMeta) -> Result<Self> {
        if f_values.nrows() == 0 || f_values.ncols() == 0 {
            return domain(format!(
                "trace needs n >= 1 and d >= 1, got {}x{}",
                f_values.nrows(),
                f_values.ncols()
            ));
        }
        if let Some(i) = f_values.iter().position(|v| !v.is_finite()) {
            return domain(format!("non-finite value at row {}", i % f_values.nrows()));
        }
        Ok(Self {
            f_values,
            state_log: None,
            meta,
        })
    }

    /// Builds a trace from row-major values.
    pub fn from_rows(n: usize, d: usize, rows: &[T], meta: TraceMeta) -> Result<Self> {
        if rows.len() != n * d {
            return Err(Error::Dimension(format!("{} values for a {n}x{d} trace", rows.len())));
        }
        Self::new(DMatrix::from_row_slice(n, d, rows), meta)
    }

    pub fn n(&self) -> usize {
        self.f_values.nrows()
    }

    pub fn d(&self) -> usize {
        self.f_values.ncols()
    }

    pub fn f_values(&self) -> &DMatrix<T> {
        &self.f_values
    }
}

/// Kahan-compensated column sums over rows `0..rows`.
fn column_sums<T: Real>(f: &DMatrix<T>, rows: usize) -> DVector<T> {
    DVector::from_iterator(
        f.ncols(),
        (0..f.ncols()).map(|j| {
            let mut sum = T::zero();
            let mut comp = T::zero();
            for v in f.column(j).iter().take(rows) {
                let y = *v - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
            }
            sum
        }),
    )
}

/// Column means of the trace.
pub fn ergodic_average<T: Real>(trace: &Trace<T>) -> DVector<T> {
    column_sums(trace.f_values(), trace.n()) / T::of_usize(trace.n())
}

/// `b_n = ⌊n^v⌋` and `a_n = ⌊n / b_n⌋`.
pub fn batch_size_rule(n: usize, v: f64) -> Result<(usize, usize)> {
    if !(v > 0.0 && v < 1.0) {
        return domain(format!("batch exponent must lie in (0, 1), got {v}"));
    }
    if n == 0 {
        return domain("batch rule needs n >= 1");
    }
    let raw = (n as f64).powf(v);
    // n^v can land a hair below an exact integer (10^(5·0.6) = 999.99…)
    let nearest = raw.round();
    let b = if (raw - nearest).abs() <= 1e-9 * nearest {
        nearest
    } else {
        raw.floor()
    };
    let b = (b as usize).max(1);
    Ok((n / b, b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchMeansEstimate<T: Real> {
    pub sigma_n: DMatrix<T>,
    pub a_n: usize,
    pub b_n: usize,
    /// Ergodic average over the whole trace.
    pub mean: DVector<T>,
}

/// Batch-means estimate of the asymptotic covariance from `a_n` consecutive
/// batches of length `b_n`; observations past `a_n b_n` are not batched.
pub fn batch_means_cov<T: Real>(trace: &Trace<T>, a_n: usize, b_n: usize) -> Result<BatchMeansEstimate<T>> {
    if a_n < 2 {
        return domain(format!("batch means needs at least 2 batches, got {a_n}"));
    }
    if b_n == 0 || a_n * b_n > trace.n() {
        return domain(format!("{a_n} batches of {b_n} exceed trace length {}", trace.n()));
    }
    let d = trace.d();
    let f = trace.f_values();
    let span = a_n * b_n;
    let center = column_sums(f, span) / T::of_usize(span);
    let mut sigma = DMatrix::<T>::zeros(d, d);
    let mut dev = DVector::<T>::zeros(d);
    let bn = T::of_usize(b_n);
    for j in 0..a_n {
        for c in 0..d {
            let mut s = T::zero();
            for t in (j * b_n)..((j + 1) * b_n) {
                s += f[(t, c)];
            }
            dev[c] = s / bn - center[c];
        }
        sigma.ger(T::one(), &dev, &dev, T::one());
    }
    sigma *= bn / T::of_usize(a_n - 1);
    let sigma_n = (&sigma + sigma.transpose()) * T::of(0.5);
    Ok(BatchMeansEstimate {
        sigma_n,
        a_n,
        b_n,
        mean: ergodic_average(trace),
    })
}

/// Period of the closed class containing `class[0]`.
fn period<T: Real>(p: &DMatrix<T>, class: &[usize]) -> usize {
    let n = p.nrows();
    let mut level = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    level[class[0]] = 0;
    queue.push_back(class[0]);
    let mut g = 0usize;
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if p[(u, v)] > T::zero() {
                if level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                } else {
                    g = gcd(g, (level[u] + 1).abs_diff(level[v]));
                }
            }
        }
    }
    g
}

/// Asymptotic covariance `Σ(f)` of ergodic averages on a finite chain,
/// from the fundamental matrix `Z = (I − P + 𝟙πᵀ)⁻¹`.
pub fn exact_asymptotic_cov_finite<T: Real>(chain: &FiniteTransChain<T>, f: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = chain.n_states();
    if f.nrows() != n || f.ncols() == 0 {
        return Err(Error::Dimension(format!(
            "f has {} rows for a chain with {n} states",
            f.nrows()
        )));
    }
    let p = chain.transition();
    let classes = closed_classes(p);
    if classes.len() != 1 {
        return Err(Error::Convergence(format!("{} closed classes", classes.len())));
    }
    let per = period(p, &classes[0]);
    if per != 1 {
        return Err(Error::Convergence(format!("chain has period {per}")));
    }
    let pi = chain.stationary();
    let ones = DVector::<T>::from_element(n, T::one());
    let a = DMatrix::<T>::identity(n, n) - p + &ones * pi.transpose();
    let mean = f.transpose() * pi;
    let fbar = f - &ones * mean.transpose();
    let zf = a
        .lu()
        .solve(&fbar)
        .ok_or_else(|| Error::Convergence("fundamental matrix is singular".into()))?;
    let dfbar = DMatrix::from_fn(n, f.ncols(), |i, j| pi[i] * fbar[(i, j)]);
    let cross = dfbar.transpose() * zf;
    let var = dfbar.transpose() * &fbar;
    let sigma = &cross + cross.transpose() - var;
    Ok((&sigma + sigma.transpose()) * T::of(0.5))
}

type VecMap<T> = dyn Fn(&DVector<T>) -> Result<DVector<T>> + Send + Sync;
type JacMap<T> = dyn Fn(&DVector<T>) -> Result<DMatrix<T>> + Send + Sync;

/// A smooth map `H: ℝᵈ → ℝᵐ` with its analytic Jacobian.
#[derive(Clone)]
pub struct DeltaSpec<T: Real> {
    pub d: usize,
    pub m: usize,
    h: Arc<VecMap<T>>,
    jacobian: Arc<JacMap<T>>,
}

impl<T: Real> std::fmt::Debug for DeltaSpec<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DeltaSpec({} -> {})", self.d, self.m)
    }
}

impl<T: Real> DeltaSpec<T> {
    pub fn new(
        d: usize,
        m: usize,
        h: impl Fn(&DVector<T>) -> Result<DVector<T>> + Send + Sync + 'static,
        jacobian: impl Fn(&DVector<T>) -> Result<DMatrix<T>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            d,
            m,
            h: Arc::new(h),
            jacobian: Arc::new(jacobian),
        }
    }

    /// The identity map on `ℝᵈ`.
    pub fn identity(d: usize) -> Self {
        Self::new(d, d, |x| Ok(x.clone()), move |_| Ok(DMatrix::identity(d, d)))
    }

    pub fn h(&self, x: &DVector<T>) -> Result<DVector<T>> {
        if x.len() != self.d {
            return Err(Error::Dimension(format!("H expects {} inputs, got {}", self.d, x.len())));
        }
        let y = (self.h)(x)?;
        if y.len() != self.m {
            return Err(Error::Dimension(format!("H returned {} values, expected {}", y.len(), self.m)));
        }
        Ok(y)
    }

    pub fn jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        let j = (self.jacobian)(x)?;
        if j.shape() != (self.m, self.d) {
            return Err(Error::Dimension(format!(
                "jacobian is {:?}, expected ({}, {})",
                j.shape(),
                self.m,
                self.d
            )));
        }
        if j.iter().any(|v| !v.is_finite()) {
            return domain("jacobian has non-finite entries");
        }
        Ok(j)
    }

    /// Largest scaled discrepancy between the analytic Jacobian and central
    /// differences of `H` at `x`, and the tolerance it is held to.
    pub fn jacobian_fd_discrepancy(&self, x: &DVector<T>) -> Result<(T, T)> {
        let j = self.jacobian(x)?;
        let eps = T::default_epsilon();
        let third = T::of(1.0 / 3.0);
        let step = eps.powf(third);
        let tol = T::of(1e-6).max(T::of(50.0) * eps.powf(T::of(2.0 / 3.0)));
        let mut worst = T::zero();
        for c in 0..self.d {
            let h = step * T::one().max(x[c].abs());
            let mut up = x.clone();
            let mut dn = x.clone();
            up[c] += h;
            dn[c] -= h;
            let fd = (self.h(&up)? - self.h(&dn)?) / (h + h);
            for r in 0..self.m {
                let e = (fd[r] - j[(r, c)]).abs() / (T::one() + j[(r, c)].abs());
                worst = worst.max(e);
            }
        }
        Ok((worst, tol))
    }
}

/// `J Σ Jᵀ` with `J` the Jacobian at `at`, after checking the Jacobian
/// against finite differences.
pub fn delta_cov<T: Real>(sigma: &DMatrix<T>, spec: &DeltaSpec<T>, at: &DVector<T>) -> Result<DMatrix<T>> {
    if sigma.shape() != (spec.d, spec.d) {
        return Err(Error::Dimension(format!(
            "covariance is {:?} but H takes {} inputs",
            sigma.shape(),
            spec.d
        )));
    }
    let j = spec.jacobian(at)?;
    let (worst, tol) = spec.jacobian_fd_discrepancy(at)?;
    if worst > tol {
        return Err(Error::Consistency(format!(
            "analytic jacobian differs from finite differences by {worst} (tolerance {tol})"
        )));
    }
    let v = &j * sigma * j.transpose();
    Ok((&v + v.transpose()) * T::of(0.5))
}

/// `H(η) = (1 − η₁, η₁, η₂/η₁, √(η₃/η₁ − η₂²/η₁²))` for the order-1 toy
/// quantities: model probabilities, and the conditional mean and standard
/// deviation of the coefficient.
pub fn ar_h_spec<T: Real>() -> DeltaSpec<T> {
    fn check<T: Real>(e: &DVector<T>) -> Result<T> {
        if e.len() != 3 {
            return Err(Error::Dimension(format!("expected 3 inputs, got {}", e.len())));
        }
        if !(e[0] > T::zero() && e[0] < T::one()) {
            return domain(format!("η₁ = {} outside (0, 1)", e[0]));
        }
        let var = e[2] / e[0] - (e[1] / e[0]).powi(2);
        if !(var > T::zero()) {
            return domain(format!("conditional variance {var} is not positive"));
        }
        Ok(var)
    }
    DeltaSpec::new(
        3,
        4,
        |e| {
            let var = check(e)?;
            Ok(DVector::from_vec(vec![T::one() - e[0], e[0], e[1] / e[0], var.sqrt()]))
        },
        |e| {
            let var = check(e)?;
            let (e1, e2, e3) = (e[0], e[1], e[2]);
            let two = T::of(2.0);
            let den = two * var.sqrt();
            let mut j = DMatrix::zeros(4, 3);
            j[(0, 0)] = -T::one();
            j[(1, 0)] = T::one();
            j[(2, 0)] = -e2 / (e1 * e1);
            j[(2, 1)] = T::one() / e1;
            j[(3, 0)] = (-e3 / (e1 * e1) + two * e2 * e2 / (e1 * e1 * e1)) / den;
            j[(3, 1)] = (-two * e2 / (e1 * e1)) / den;
            j[(3, 2)] = (T::one() / e1) / den;
            Ok(j)
        },
    )
}

/// One draw of `ε G_n`, `G_n ~ N(0, V*/n)`.
pub fn inject_noise<R: Rng + ?Sized>(
    m: usize,
    epsilon: f64,
    v_star: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return domain(format!("epsilon must be nonnegative, got {epsilon}"));
    }
    if v_star.shape() != (m, m) {
        return Err(Error::Dimension(format!("V* is {:?}, expected ({m}, {m})", v_star.shape())));
    }
    if n == 0 {
        return domain("noise needs n >= 1");
    }
    let l = cholesky(v_star)?;
    if epsilon == 0.0 {
        return Ok(DVector::zeros(m));
    }
    let z = DVector::from_iterator(m, (0..m).map(|_| std_normal(rng)));
    Ok(l * z * (epsilon / (n as f64).sqrt()))
}

#[derive(Clone, Debug)]
pub struct CiOptions {
    pub alpha: f64,
    pub epsilon: f64,
    /// `V*`; `None` means the identity.
    pub v_star: Option<DMatrix<f64>>,
    pub batch_exponent: f64,
    pub solve: SolveOptions,
    /// Experimental: widen by `ε²V*` but center at `H(𝔐_n)` without noise.
    pub center_without_noise: bool,
}

impl Default for CiOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            epsilon: 1e-3,
            v_star: None,
            batch_exponent: DEFAULT_BATCH_EXPONENT,
            solve: SolveOptions::default(),
            center_without_noise: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimCIReport {
    pub n: usize,
    pub a_n: usize,
    pub b_n: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub h_point: Vec<f64>,
    pub g_noise: Vec<f64>,
    pub v_diag: Vec<f64>,
    pub xi: f64,
    pub intervals: Vec<(f64, f64)>,
    pub center_without_noise: bool,
}

impl SimCIReport {
    pub fn m(&self) -> usize {
        self.h_point.len()
    }

    /// `[z_{1−α/2}, z_{1−α/(2m)}]`.
    pub fn xi_bracket(&self) -> Result<(f64, f64)> {
        let m = self.m().max(1) as f64;
        Ok((
            std_normal_quantile(1.0 - self.alpha / 2.0)?,
            std_normal_quantile(1.0 - self.alpha / (2.0 * m))?,
        ))
    }

    pub fn center(&self, i: usize) -> f64 {
        if self.center_without_noise {
            self.h_point[i]
        } else {
            self.h_point[i] + self.g_noise[i]
        }
    }

    pub fn half_width(&self, i: usize) -> f64 {
        self.xi * (self.v_diag[i] / self.n as f64).sqrt()
    }

    /// Bracket, ordering and half-width checks.
    pub fn check_invariants(&self) -> Result<()> {
        let m = self.m();
        if self.g_noise.len() != m || self.v_diag.len() != m || self.intervals.len() != m {
            return Err(Error::Consistency("report vectors differ in length".into()));
        }
        if m > 0 {
            let (lo, hi) = self.xi_bracket()?;
            let slack = 1e-12 * hi;
            if self.xi < lo - slack || self.xi > hi + slack {
                return Err(Error::Consistency(format!("ξ = {} outside [{lo}, {hi}]", self.xi)));
            }
        }
        for (i, &(lo, hi)) in self.intervals.iter().enumerate() {
            if !(lo <= hi) {
                return Err(Error::Consistency(format!("interval {i} is [{lo}, {hi}]")));
            }
            let hw = self.half_width(i);
            let scale = hw.abs().max(self.center(i).abs()).max(f64::MIN_POSITIVE);
            if ((hi - lo) / 2.0 - hw).abs() > 1e-9 * scale || ((hi + lo) / 2.0 - self.center(i)).abs() > 1e-9 * scale
            {
                return Err(Error::Consistency(format!("interval {i} does not match ξ√(v/n)")));
            }
        }
        Ok(())
    }

    /// Whether every interval contains the corresponding entry of `truth`.
    pub fn covers(&self, truth: &[f64]) -> bool {
        self.intervals
            .iter()
            .zip(truth)
            .all(|(&(lo, hi), &t)| lo <= t && t <= hi)
    }
}

/// The full pipeline from a trace to simultaneous intervals for `H(Πf)`.
pub fn simultaneous_cis<R: Rng + ?Sized>(
    trace: &Trace<f64>,
    spec: &DeltaSpec<f64>,
    opts: &CiOptions,
    rng: &mut R,
) -> Result<SimCIReport> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {}", opts.alpha));
    }
    if trace.d() != spec.d {
        return Err(Error::Dimension(format!(
            "trace has {} columns but H takes {}",
            trace.d(),
            spec.d
        )));
    }
    let m = spec.m;
    let n = trace.n();
    let (a_n, b_n) = batch_size_rule(n, opts.batch_exponent)?;
    let bm = batch_means_cov(trace, a_n, b_n)?;
    let h_point = spec.h(&bm.mean)?;
    let v = delta_cov(&bm.sigma_n, spec, &bm.mean)?;
    let v_star = opts.v_star.clone().unwrap_or_else(|| DMatrix::identity(m, m));
    let total = &v + &v_star * (opts.epsilon * opts.epsilon);
    let ev = symmetric_eigenvalues(&total);
    let (max, min) = (ev[0], ev[m - 1]);
    if !(min > 1e-10 * max.abs()) {
        return Err(Error::SingularCovariance { min_eigenvalue: min });
    }
    let v_diag: Vec<f64> = (0..m).map(|i| total[(i, i)]).collect();
    let solve = solve_rectangle_quantile_traced(opts.alpha, &v_diag, &total, &opts.solve)?;
    let g = inject_noise(m, opts.epsilon, &v_star, n, rng)?;
    let mut report = SimCIReport {
        n,
        a_n,
        b_n,
        alpha: opts.alpha,
        epsilon: opts.epsilon,
        h_point: h_point.iter().copied().collect(),
        g_noise: g.iter().copied().collect(),
        v_diag,
        xi: solve.xi,
        intervals: Vec::new(),
        center_without_noise: opts.center_without_noise,
    };
    report.intervals = (0..m)
        .map(|i| {
            let c = report.center(i);
            let hw = report.half_width(i);
            (c - hw, c + hw)
        })
        .collect();
    report.check_invariants()?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// text formats

/// Writes `# config_hash <hash>` when a hash is known.
pub fn write_hash_line<W: Write>(w: &mut W, hash: &str) -> Result<()> {
    writeln!(w, "# config_hash {hash}")?;
    Ok(())
}

/// Incremental trace writer: header, then one tab-separated row per call.
pub struct TraceWriter<W: Write> {
    out: W,
    d: usize,
    remaining: usize,
    line: String,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, n: usize, d: usize, meta: &TraceMeta) -> Result<Self> {
        if meta.sampler_id.is_empty() || meta.sampler_id.contains(char::is_whitespace) {
            return domain("sampler id must be a single non-empty word");
        }
        write_hash_line(&mut out, &meta.config_hash)?;
        writeln!(out, "{n} {d} {} {}", meta.sampler_id, meta.seed)?;
        Ok(Self {
            out,
            d,
            remaining: n,
            line: String::new(),
        })
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.d {
            return Err(Error::Dimension(format!("row of {} values, expected {}", row.len(), self.d)));
        }
        if self.remaining == 0 {
            return domain("more rows than declared in the header");
        }
        self.remaining -= 1;
        self.line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                self.line.push('\t');
            }
            write!(self.line, "{v}").expect("write to string");
        }
        writeln!(self.out, "{}", self.line)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.remaining != 0 {
            return domain(format!("{} rows missing", self.remaining));
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_trace<W: Write>(w: W, trace: &Trace<f64>) -> Result<()> {
    let mut tw = TraceWriter::new(w, trace.n(), trace.d(), &trace.meta)?;
    let f = trace.f_values();
    let mut row = vec![0.0; trace.d()];
    for t in 0..trace.n() {
        for (c, r) in row.iter_mut().enumerate() {
            *r = f[(t, c)];
        }
        tw.push(&row)?;
    }
    tw.finish()?;
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Trace<f64>> {
    let mut hash = String::new();
    let mut header: Option<(usize, usize, String, u64)> = None;
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let ln = i + 1;
        let t = line.trim();
        if let Some(rest) = t.strip_prefix('#') {
            if let Some(h) = rest.trim().strip_prefix("config_hash") {
                hash = h.trim().to_string();
            }
            continue;
        }
        if t.is_empty() {
            continue;
        }
        match &header {
            None => {
                let parts: Vec<&str> = t.split_whitespace().collect();
                if parts.len() != 4 {
                    return Err(parse_err(ln, "header must be `n d sampler_id seed`"));
                }
                let n = parts[0].parse().map_err(|_| parse_err(ln, "bad n"))?;
                let d = parts[1].parse().map_err(|_| parse_err(ln, "bad d"))?;
                let seed = parts[3].parse().map_err(|_| parse_err(ln, "bad seed"))?;
                header = Some((n, d, parts[2].to_string(), seed));
                values.reserve(n * d);
            }
            Some((n, d, _, _)) => {
                if rows == *n {
                    return Err(parse_err(ln, format!("more than {n} rows")));
                }
                let before = values.len();
                for tok in t.split('\t') {
                    values.push(tok.trim().parse::<f64>().map_err(|_| parse_err(ln, format!("not a number: {tok:?}")))?);
                }
                if values.len() - before != *d {
                    return Err(parse_err(ln, format!("expected {d} values, found {}", values.len() - before)));
                }
                rows += 1;
            }
        }
    }
    let (n, d, sampler_id, seed) = header.ok_or_else(|| parse_err(0, "missing header"))?;
    if rows != n {
        return Err(parse_err(rows, format!("header declares {n} rows, found {rows}")));
    }
    Trace::from_rows(
        n,
        d,
        &values,
        TraceMeta {
            sampler_id,
            seed,
            config_hash: hash,
        },
    )
}

/// Companion state log: one `t k z…` row per step.
pub fn write_state_log<W: Write>(mut w: W, log: &[StateRecord], config_hash: &str) -> Result<()> {
    write_hash_line(&mut w, config_hash)?;
    let mut line = String::new();
    for (t, rec) in log.iter().enumerate() {
        line.clear();
        write!(line, "{}\t{}", t + 1, rec.k).expect("write to string");
        for z in &rec.z {
            write!(line, "\t{z}").expect("write to string");
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Flat key-value block followed by an `m`-row interval table.
pub fn write_report<W: Write>(mut w: W, report: &SimCIReport, config_hash: &str) -> Result<()> {
    write_hash_line(&mut w, config_hash)?;
    writeln!(w, "n\t{}", report.n)?;
    writeln!(w, "a_n\t{}", report.a_n)?;
    writeln!(w, "b_n\t{}", report.b_n)?;
    writeln!(w, "alpha\t{}", report.alpha)?;
    writeln!(w, "epsilon\t{}", report.epsilon)?;
    writeln!(w, "xi\t{}", report.xi)?;
    writeln!(w, "center_without_noise\t{}", report.center_without_noise)?;
    writeln!(w, "m\t{}", report.m())?;
    writeln!(w, "index\th_point\tg_noise\tv_diag\tlo\thi")?;
    for i in 0..report.m() {
        let (lo, hi) = report.intervals[i];
        writeln!(
            w,
            "{i}\t{}\t{}\t{}\t{lo}\t{hi}",
            report.h_point[i], report.g_noise[i], report.v_diag[i]
        )?;
    }
    Ok(())
}

pub fn read_report<R: BufRead>(r: R) -> Result<SimCIReport> {
    let mut kv = std::collections::HashMap::new();
    let mut table = Vec::new();
    let mut in_table = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let ln = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if t.starts_with("index") {
            in_table = true;
            continue;
        }
        let parts: Vec<&str> = t.split('\t').collect();
        if in_table {
            if parts.len() != 6 {
                return Err(parse_err(ln, "interval rows need 6 columns"));
            }
            let v = parts[1..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| parse_err(ln, format!("not a number: {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            table.push(v);
        } else {
            if parts.len() != 2 {
                return Err(parse_err(ln, "expected `key<TAB>value`"));
            }
            kv.insert(parts[0].to_string(), (ln, parts[1].to_string()));
        }
    }
    fn get<T: std::str::FromStr>(kv: &std::collections::HashMap<String, (usize, String)>, key: &str) -> Result<T> {
        let (ln, v) = kv.get(key).ok_or_else(|| parse_err(0, format!("missing key {key}")))?;
        v.parse().map_err(|_| parse_err(*ln, format!("bad value for {key}")))
    }
    let m: usize = get(&kv, "m")?;
    if table.len() != m {
        return Err(parse_err(0, format!("report declares {m} rows, found {}", table.len())));
    }
    Ok(SimCIReport {
        n: get(&kv, "n")?,
        a_n: get(&kv, "a_n")?,
        b_n: get(&kv, "b_n")?,
        alpha: get(&kv, "alpha")?,
        epsilon: get(&kv, "epsilon")?,
        xi: get(&kv, "xi")?,
        center_without_noise: get(&kv, "center_without_noise")?,
        h_point: table.iter().map(|r| r[0]).collect(),
        g_noise: table.iter().map(|r| r[1]).collect(),
        v_diag: table.iter().map(|r| r[2]).collect(),
        intervals: table.iter().map(|r| (r[3], r[4])).collect(),
    })
}
