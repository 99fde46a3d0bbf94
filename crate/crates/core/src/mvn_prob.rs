//! Multivariate normal rectangle probabilities by randomized quasi-Monte
//! Carlo (Genz's separation-of-variables transform), and the symmetric
//! rectangle quantile solver built on it.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::rng_dist::{quantile_rational, std_normal_cdf, std_normal_pdf, std_normal_quantile, RngStream};

/// Number of independent random shifts of the lattice.
pub const SHIFT_REPLICATES: usize = 10;
pub const DEFAULT_POINTS: usize = 2048;
pub const DEFAULT_SEED: u64 = 0x5eed_0f_9a55;
/// Diagonal jitter, relative to the trace, tried once when factoring fails.
pub const JITTER: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct RectProbRequest {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub n_points: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RectProbResult {
    pub probability: f64,
    pub mc_error: f64,
}

/// A reordered, factored covariance plus a fixed randomized point set.
/// Evaluating many rectangles through one integrator uses common random
/// numbers, so results are smooth in the rectangle bounds.
#[derive(Clone, Debug)]
pub struct GenzIntegrator {
    factor: DMatrix<f64>,
    order: Vec<usize>,
    generator: Vec<f64>,
    shifts: Vec<Vec<f64>>,
    n_points: usize,
}

impl GenzIntegrator {
    /// Factors `covariance` with the variable order chosen for the centered
    /// rectangle `[lower, upper]`.
    pub fn new(
        covariance: &DMatrix<f64>,
        lower: &[f64],
        upper: &[f64],
        n_points: usize,
        seed: u64,
    ) -> Result<Self> {
        let m = covariance.nrows();
        if covariance.ncols() != m || lower.len() != m || upper.len() != m {
            return Err(Error::Dimension(format!(
                "covariance {}x{}, bounds {} and {}",
                m,
                covariance.ncols(),
                lower.len(),
                upper.len()
            )));
        }
        if m == 0 {
            return domain("rectangle probability needs at least one dimension");
        }
        if n_points == 0 {
            return domain("n_points must be positive");
        }
        let (factor, order) = match ordered_cholesky(covariance, lower, upper) {
            Ok(v) => v,
            Err(Error::NotPositiveDefinite { .. }) => {
                let jitter = JITTER * covariance.trace();
                let mut c = covariance.clone();
                for i in 0..m {
                    c[(i, i)] += jitter;
                }
                ordered_cholesky(&c, lower, upper)?
            }
            Err(e) => return Err(e),
        };
        let generator = lattice_generator(m.saturating_sub(1));
        let shifts = (0..SHIFT_REPLICATES as u64)
            .map(|r| {
                let mut rng = RngStream::new(seed, r);
                (0..m - 1).map(|_| rng.random::<f64>()).collect()
            })
            .collect();
        Ok(Self {
            factor,
            order,
            generator,
            shifts,
            n_points,
        })
    }

    pub fn dim(&self) -> usize {
        self.order.len()
    }

    /// Probability of the centered rectangle `[lower, upper]` (original
    /// variable order).
    pub fn probability(&self, lower: &[f64], upper: &[f64]) -> RectProbResult {
        let m = self.dim();
        let a: Vec<f64> = self.order.iter().map(|&i| lower[i]).collect();
        let b: Vec<f64> = self.order.iter().map(|&i| upper[i]).collect();
        if m == 1 {
            let s = self.factor[(0, 0)];
            let (w, _) = conditional(a[0] / s, b[0] / s, 0.5);
            return RectProbResult {
                probability: w,
                mc_error: 0.0,
            };
        }
        let means: Vec<f64> = self
            .shifts
            .par_iter()
            .map(|shift| {
                let mut w = vec![0.0; m - 1];
                let mut y = vec![0.0; m - 1];
                let mut acc = 0.0;
                for k in 1..=self.n_points {
                    for j in 0..m - 1 {
                        let t = (k as f64 * self.generator[j] + shift[j]).fract();
                        w[j] = 1.0 - (2.0 * t - 1.0).abs();
                    }
                    acc += self.integrand(&a, &b, &w, &mut y);
                }
                acc / self.n_points as f64
            })
            .collect();
        let r = means.len() as f64;
        let mean = means.iter().sum::<f64>() / r;
        let var = means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0);
        RectProbResult {
            probability: mean.clamp(0.0, 1.0),
            mc_error: (var / r).sqrt(),
        }
    }

    fn integrand(&self, a: &[f64], b: &[f64], w: &[f64], y: &mut [f64]) -> f64 {
        let l = &self.factor;
        let m = a.len();
        let mut f = 1.0;
        for i in 0..m {
            let mut shift = 0.0;
            for k in 0..i {
                shift += l[(i, k)] * y[k];
            }
            let s = l[(i, i)];
            let u = if i + 1 < m { w[i] } else { 0.5 };
            let (width, yi) = conditional((a[i] - shift) / s, (b[i] - shift) / s, u);
            f *= width;
            if f == 0.0 {
                return 0.0;
            }
            if i + 1 < m {
                y[i] = yi;
            }
        }
        f
    }
}

/// Mass of `[lo, hi]` under N(0,1) and the point with conditional CDF `u`.
#[inline]
fn conditional(lo: f64, hi: f64, u: f64) -> (f64, f64) {
    const P_MIN: f64 = 1e-300;
    if lo > 0.0 {
        // both bounds in the upper tail: work with complements
        let ql = std_normal_cdf(-lo);
        let qh = std_normal_cdf(-hi);
        let width = ql - qh;
        if width <= 0.0 {
            return (0.0, lo);
        }
        let p = (ql - u * width).clamp(P_MIN, 1.0 - f64::EPSILON);
        (width, -quantile_rational(p))
    } else {
        let pl = std_normal_cdf(lo);
        let ph = std_normal_cdf(hi);
        let width = ph - pl;
        if width <= 0.0 {
            return (0.0, hi.min(0.0));
        }
        let p = (pl + u * width).clamp(P_MIN, 1.0 - f64::EPSILON);
        (width, quantile_rational(p))
    }
}

/// Cholesky factor with Genz's ordering: at each step the remaining
/// variable with the smallest conditional interval probability goes first.
fn ordered_cholesky(
    cov: &DMatrix<f64>,
    lower: &[f64],
    upper: &[f64],
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let m = cov.nrows();
    let mut s = cov.clone();
    let mut a = lower.to_vec();
    let mut b = upper.to_vec();
    let mut order: Vec<usize> = (0..m).collect();
    let mut c = DMatrix::<f64>::zeros(m, m);
    let mut y = vec![0.0; m];
    for i in 0..m {
        let mut best = i;
        let mut best_width = f64::INFINITY;
        for j in i..m {
            let mut var = s[(j, j)];
            let mut shift = 0.0;
            for k in 0..i {
                var -= c[(j, k)] * c[(j, k)];
                shift += c[(j, k)] * y[k];
            }
            let sd = var.max(f64::MIN_POSITIVE).sqrt();
            let (width, _) = conditional((a[j] - shift) / sd, (b[j] - shift) / sd, 0.5);
            if width < best_width {
                best_width = width;
                best = j;
            }
        }
        if best != i {
            s.swap_rows(i, best);
            s.swap_columns(i, best);
            a.swap(i, best);
            b.swap(i, best);
            order.swap(i, best);
            for k in 0..i {
                c.swap((i, k), (best, k));
            }
        }
        let mut var = s[(i, i)];
        let mut shift = 0.0;
        for k in 0..i {
            var -= c[(i, k)] * c[(i, k)];
            shift += c[(i, k)] * y[k];
        }
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::NotPositiveDefinite { minor: i + 1 });
        }
        let d = var.sqrt();
        c[(i, i)] = d;
        for j in (i + 1)..m {
            let mut v = s[(j, i)];
            for k in 0..i {
                v -= c[(j, k)] * c[(i, k)];
            }
            c[(j, i)] = v / d;
        }
        let lo = (a[i] - shift) / d;
        let hi = (b[i] - shift) / d;
        y[i] = truncated_mean(lo, hi);
    }
    Ok((c, order))
}

fn truncated_mean(lo: f64, hi: f64) -> f64 {
    let (width, mid) = conditional(lo, hi, 0.5);
    if width < 1e-300 {
        return mid;
    }
    let pdf = |x: f64| if x.is_finite() { std_normal_pdf(x) } else { 0.0 };
    ((pdf(lo) - pdf(hi)) / width).clamp(lo, hi)
}

/// Richtmyer generator: fractional parts of square roots of primes.
fn lattice_generator(dim: usize) -> Vec<f64> {
    let mut primes = Vec::with_capacity(dim);
    let mut n = 2u64;
    while primes.len() < dim {
        if primes.iter().take_while(|&&p| p * p <= n).all(|&p| n % p != 0) {
            primes.push(n);
        }
        n += 1;
    }
    primes.iter().map(|&p| (p as f64).sqrt().fract()).collect()
}

/// `P(lower ≤ X ≤ upper)` for `X ~ N(mean, covariance)`.
pub fn mvn_rectangle_prob(req: &RectProbRequest) -> Result<RectProbResult> {
    let m = req.lower.len();
    if req.upper.len() != m || req.mean.len() != m {
        return Err(Error::Dimension(format!(
            "lower {}, upper {}, mean {}",
            m,
            req.upper.len(),
            req.mean.len()
        )));
    }
    for i in 0..m {
        if req.lower[i].is_nan() || req.upper[i].is_nan() || !req.mean[i].is_finite() {
            return domain(format!("non-numeric bound or mean at index {i}"));
        }
        if req.lower[i] > req.upper[i] {
            return domain(format!(
                "lower[{i}] = {} exceeds upper[{i}] = {}",
                req.lower[i], req.upper[i]
            ));
        }
    }
    let a: Vec<f64> = (0..m).map(|i| req.lower[i] - req.mean[i]).collect();
    let b: Vec<f64> = (0..m).map(|i| req.upper[i] - req.mean[i]).collect();
    let g = GenzIntegrator::new(&req.covariance, &a, &b, req.n_points, req.seed)?;
    Ok(g.probability(&a, &b))
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub n_points: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            n_points: DEFAULT_POINTS,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QuantileSolve {
    pub xi: f64,
    pub bracket: (f64, f64),
    /// Every `(ξ, probability)` evaluated, in evaluation order.
    pub evaluations: Vec<(f64, RectProbResult)>,
}

/// Symmetric-rectangle quantile: `ξ` with
/// `P(|X_i| ≤ ξ √v_i for all i) = 1 − α`, `X ~ N(0, covariance)`.
pub fn solve_rectangle_quantile(
    alpha: f64,
    v_diag: &[f64],
    covariance: &DMatrix<f64>,
    tol: f64,
) -> Result<f64> {
    let opts = SolveOptions {
        tol,
        ..SolveOptions::default()
    };
    solve_rectangle_quantile_traced(alpha, v_diag, covariance, &opts).map(|s| s.xi)
}

pub fn solve_rectangle_quantile_traced(
    alpha: f64,
    v_diag: &[f64],
    covariance: &DMatrix<f64>,
    opts: &SolveOptions,
) -> Result<QuantileSolve> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    if !(opts.tol > 0.0) {
        return domain("solver tolerance must be positive");
    }
    let m = v_diag.len();
    if covariance.nrows() != m || covariance.ncols() != m {
        return Err(Error::Dimension(format!(
            "{m} variances but covariance is {}x{}",
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    for (i, &v) in v_diag.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return domain(format!("variance {i} must be positive, got {v}"));
        }
        if (covariance[(i, i)] - v).abs() > 1e-9 * v {
            return Err(Error::Consistency(format!(
                "covariance diagonal {} differs from variance {v} at index {i}",
                covariance[(i, i)]
            )));
        }
    }
    let lo = std_normal_quantile(1.0 - alpha / 2.0)?;
    let hi = std_normal_quantile(1.0 - alpha / (2.0 * m as f64))?;
    if m == 1 {
        return Ok(QuantileSolve {
            xi: lo,
            bracket: (lo, hi),
            evaluations: Vec::new(),
        });
    }
    let sd: Vec<f64> = v_diag.iter().map(|v| v.sqrt()).collect();
    let corr = DMatrix::from_fn(m, m, |i, j| covariance[(i, j)] / (sd[i] * sd[j]));
    let box_at = |xi: f64| (vec![-xi; m], vec![xi; m]);
    let (l0, u0) = box_at(lo);
    let g = GenzIntegrator::new(&corr, &l0, &u0, opts.n_points, opts.seed)?;
    let target = 1.0 - alpha;
    let mut evaluations = Vec::new();
    let mut eval = |xi: f64| {
        let (l, u) = box_at(xi);
        let r = g.probability(&l, &u);
        evaluations.push((xi, r));
        r
    };
    let p_lo = eval(lo);
    let p_hi = eval(hi);
    if p_lo.probability > target + 3.0 * p_lo.mc_error + opts.tol
        || p_hi.probability < target - 3.0 * p_hi.mc_error - opts.tol
    {
        return Err(Error::Bracket {
            lo,
            hi,
            p_lo: p_lo.probability,
            p_hi: p_hi.probability,
            target,
        });
    }
    let xi = if p_lo.probability >= target {
        lo
    } else if p_hi.probability <= target {
        hi
    } else {
        let (mut a, mut b) = (lo, hi);
        loop {
            let mid = 0.5 * (a + b);
            let p = eval(mid).probability;
            if (p - target).abs() <= opts.tol || b - a < 1e-12 {
                break mid;
            }
            if p < target {
                a = mid;
            } else {
                b = mid;
            }
        }
    };
    Ok(QuantileSolve {
        xi,
        bracket: (lo, hi),
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate_scalar, QuadOptions};
    use crate::rng_dist::std_normal_cdf;
    use rand::Rng;

    fn request(lower: Vec<f64>, upper: Vec<f64>, cov: DMatrix<f64>) -> RectProbRequest {
        let m = lower.len();
        RectProbRequest {
            lower,
            upper,
            mean: vec![0.0; m],
            covariance: cov,
            n_points: DEFAULT_POINTS,
            seed: 7,
        }
    }

    #[test]
    fn independent_cube() {
        let v = [0.5, 0.5, 0.5];
        let r = mvn_rectangle_prob(&request(
            v.iter().map(|v: &f64| -2.0 * v.sqrt()).collect(),
            v.iter().map(|v: &f64| 2.0 * v.sqrt()).collect(),
            DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&v)),
        ))
        .unwrap();
        let exact = (2.0 * std_normal_cdf(2.0) - 1.0).powi(3);
        assert!((r.probability - exact).abs() < 5e-4);
        assert!((exact - 0.86956).abs() < 1e-4);
    }

    #[test]
    fn univariate() {
        let r = mvn_rectangle_prob(&request(vec![-1.96], vec![1.96], DMatrix::identity(1, 1))).unwrap();
        assert!((r.probability - 0.95).abs() < 5e-4);
        assert_eq!(r.mc_error, 0.0);
    }

    #[test]
    fn comonotone_pair_uses_jitter() {
        let cov = DMatrix::from_element(2, 2, 1.0);
        let r = mvn_rectangle_prob(&request(vec![-1.0, -1.0], vec![1.0, 1.0], cov)).unwrap();
        let one_d = 2.0 * std_normal_cdf(1.0) - 1.0;
        assert!((r.probability - one_d).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn mean_shift_and_errors() {
        let mut req = request(vec![0.0, 0.0], vec![f64::INFINITY, f64::INFINITY], DMatrix::identity(2, 2));
        req.mean = vec![1.0, -1.0];
        let r = mvn_rectangle_prob(&req).unwrap();
        let exact = std_normal_cdf(1.0) * std_normal_cdf(-1.0);
        assert!((r.probability - exact).abs() < 1e-12);

        let bad = request(vec![1.0], vec![0.0], DMatrix::identity(1, 1));
        assert!(matches!(mvn_rectangle_prob(&bad), Err(Error::Domain(_))));
        let bad = request(vec![0.0, 0.0], vec![1.0], DMatrix::identity(2, 2));
        assert!(matches!(mvn_rectangle_prob(&bad), Err(Error::Dimension(_))));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let bad = request(vec![-1.0, -1.0], vec![1.0, 1.0], indefinite);
        assert!(matches!(mvn_rectangle_prob(&bad), Err(Error::NotPositiveDefinite { .. })));
    }

    fn random_cov(m: usize, rng: &mut RngStream) -> DMatrix<f64> {
        let a = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        &a * a.transpose() + DMatrix::identity(m, m) * 0.2
    }

    /// Nested adaptive quadrature over the first m-1 coordinates with the
    /// last conditional in closed form.
    fn quadrature_oracle(cov: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
        let l = crate::linalg::cholesky(cov).unwrap();
        let opts = QuadOptions {
            abs_tol: 1e-9,
            rel_tol: 1e-8,
            ..QuadOptions::default()
        };
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let inner = |z0: f64, z1: Option<f64>| -> f64 {
            let m = a.len();
            let i = m - 1;
            let mut shift = l[(i, 0)] * z0;
            if let Some(z1) = z1 {
                shift += l[(i, 1)] * z1;
            }
            let s = l[(i, i)];
            std_normal_cdf((b[i] - shift) / s) - std_normal_cdf((a[i] - shift) / s)
        };
        let lim = |i: usize, shift: f64| ((a[i] - shift) / l[(i, i)], (b[i] - shift) / l[(i, i)]);
        let (lo0, hi0) = lim(0, 0.0);
        match a.len() {
            2 => integrate_scalar(|z0| phi(z0) * inner(z0, None), lo0, hi0, &[], &opts)
                .unwrap()
                .value[0],
            3 => integrate_scalar(
                |z0| {
                    let (lo1, hi1) = lim(1, l[(1, 0)] * z0);
                    phi(z0)
                        * integrate_scalar(|z1| phi(z1) * inner(z0, Some(z1)), lo1, hi1, &[], &opts)
                            .unwrap()
                            .value[0]
                },
                lo0,
                hi0,
                &[],
                &opts,
            )
            .unwrap()
            .value[0],
            _ => unreachable!(),
        }
    }

    #[test]
    fn agrees_with_quadrature_oracle() {
        let mut rng = RngStream::new(11, 0);
        for trial in 0..20 {
            let m = 2 + trial % 2;
            let cov = random_cov(m, &mut rng);
            let a: Vec<f64> = (0..m).map(|_| -0.3 - 2.0 * rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..m).map(|_| 0.1 + 2.0 * rng.random::<f64>()).collect();
            let qmc = mvn_rectangle_prob(&request(a.clone(), b.clone(), cov.clone())).unwrap();
            let exact = quadrature_oracle(&cov, &a, &b);
            assert!(
                (qmc.probability - exact).abs() < 1e-3,
                "trial {trial}: qmc {qmc:?} vs {exact}"
            );
        }
    }

    #[test]
    fn doubling_points_reduces_error() {
        let mut rng = RngStream::new(12, 0);
        let mut ratios = Vec::new();
        for trial in 0..20 {
            let cov = random_cov(4, &mut rng);
            let a = vec![-1.5; 4];
            let b = vec![1.0; 4];
            let mut req = request(a, b, cov);
            req.seed = trial;
            req.n_points = 512;
            let e1 = mvn_rectangle_prob(&req).unwrap().mc_error;
            req.n_points = 1024;
            let e2 = mvn_rectangle_prob(&req).unwrap().mc_error;
            ratios.push(e2 / e1);
        }
        ratios.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!(ratios[10] < 1.0, "median ratio {}", ratios[10]);
    }

    #[test]
    fn schedule_independent() {
        let mut rng = RngStream::new(13, 0);
        let cov = random_cov(3, &mut rng);
        let req = request(vec![-1.0; 3], vec![1.0; 3], cov);
        let par = mvn_rectangle_prob(&req).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let seq = pool.install(|| mvn_rectangle_prob(&req).unwrap());
        assert_eq!(par, seq);
    }

    #[test]
    fn solver_independent_closed_form() {
        let xi = solve_rectangle_quantile(0.05, &[2.0; 4], &(DMatrix::identity(4, 4) * 2.0), 1e-6).unwrap();
        let exact = std_normal_quantile((1.0 + 0.95f64.powf(0.25)) / 2.0).unwrap();
        assert!((xi - exact).abs() < 1e-3);
        assert!((exact - 2.4908).abs() < 1e-3);
    }

    #[test]
    fn solver_univariate() {
        let xi = solve_rectangle_quantile(0.05, &[3.0], &DMatrix::from_element(1, 1, 3.0), 1e-6).unwrap();
        assert!((xi - 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn solver_brackets_and_monotone_trace() {
        let mut rng = RngStream::new(14, 0);
        for trial in 0..10 {
            let m = 2 + trial % 4;
            let cov = random_cov(m, &mut rng);
            let v: Vec<f64> = (0..m).map(|i| cov[(i, i)]).collect();
            let alpha = 0.01 + 0.2 * rng.random::<f64>();
            let s = solve_rectangle_quantile_traced(alpha, &v, &cov, &SolveOptions::default()).unwrap();
            assert!(s.bracket.0 <= s.xi && s.xi <= s.bracket.1);
            let mut ev = s.evaluations.clone();
            ev.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
            for w in ev.windows(2) {
                assert!(w[0].1.probability <= w[1].1.probability, "{w:?}");
            }
        }
    }

    #[test]
    fn solver_checks_diagonal() {
        let cov = DMatrix::identity(2, 2);
        let r = solve_rectangle_quantile(0.05, &[1.0, 2.0], &cov, 1e-5);
        assert!(matches!(r, Err(Error::Consistency(_))));
        assert!(solve_rectangle_quantile(1.5, &[1.0, 1.0], &cov, 1e-5).is_err());
    }
}
