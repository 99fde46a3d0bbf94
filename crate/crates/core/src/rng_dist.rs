//! Seedable random streams and the exact samplers the two reversible jump
//! samplers rely on.
//!
//! Every draw goes through an [`RngStream`], a ChaCha20 generator keyed by a
//! `(seed, stream_id)` pair. Two streams with the same seed and different ids
//! are disjoint ChaCha streams, so replications can run in parallel without
//! sharing generator state.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, Gamma, Open01, StandardNormal};
use libm::erfc;

use crate::error::{domain, Error, Result};
use crate::linalg::{cholesky, max_abs};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// A deterministic random source identified by `(seed, stream_id)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream with the same seed and a different id.
    pub fn sibling(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[inline]
pub fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Open01.sample(rng)
}

/// Inverse Gaussian draw with mean `mu` and shape `lambda`, density
/// `sqrt(λ/(2π u³)) exp(-λ (u-μ)² / (2μ² u))`.
///
/// Uses the chi-square transformation with a root selection step; there is
/// no rejection loop.
pub fn sample_inverse_gaussian<R: Rng + ?Sized>(mu: f64, lambda: f64, rng: &mut R) -> Result<f64> {
    if !(mu > 0.0) || !(lambda > 0.0) {
        return domain(format!("inverse Gaussian needs mu > 0 and lambda > 0, got ({mu}, {lambda})"));
    }
    let nu = std_normal(rng);
    let y = nu * nu;
    // smaller root of λ(x-μ)² = μ² x y, written without cancellation
    let a = mu * y / (2.0 * lambda);
    let x = if a > 1e100 {
        // μ/(1 + a + sqrt(a(a+2))) → λ / y as a → ∞
        lambda / y
    } else {
        mu / (1.0 + a + (a * (a + 2.0)).sqrt())
    };
    let u = rng.random::<f64>();
    if !mu.is_finite() || u * (mu + x) <= mu {
        Ok(x)
    } else {
        Ok(mu * mu / x)
    }
}

/// Draw from `N(mean, sd²)` restricted to `(0, ∞)` (`positive_side`) or
/// `(-∞, 0)`.
///
/// Inverse-CDF on the upper-tail probability when the truncation point is
/// within four standard deviations above the mean, exponential-proposal
/// rejection beyond that.
pub fn sample_truncated_normal_onesided<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    positive_side: bool,
    rng: &mut R,
) -> Result<f64> {
    if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
        return domain(format!("truncated normal needs finite mean and sd > 0, got ({mean}, {sd})"));
    }
    // reduce to Z ~ N(0,1) on (a, ∞), X = m + sd Z with m = ±mean
    let m = if positive_side { mean } else { -mean };
    let a = -m / sd;
    let z = if a <= TRUNC_SWITCH {
        let tail = std_normal_cdf(-a);
        let q = uniform_open(rng) * tail;
        // P(Z > z) = q; clamp guards the boundary against rounding
        (-std_normal_quantile(q)?).max(a)
    } else {
        sample_exp_tail(a, rng)
    };
    let x = m + sd * z;
    let x = if x > 0.0 { x } else { f64::MIN_POSITIVE };
    Ok(if positive_side { x } else { -x })
}

/// Standardized truncation point beyond which rejection is used.
pub const TRUNC_SWITCH: f64 = 4.0;

fn sample_exp_tail<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = a + e / rate;
        let d = z - rate;
        if uniform_open(rng) <= (-0.5 * d * d).exp() {
            return z;
        }
    }
}

/// Inverse gamma draw: `1/X ~ Gamma(shape, rate = scale)`, density
/// proportional to `x^{-shape-1} exp(-scale/x)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !(scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
        return domain(format!("inverse gamma needs shape > 0 and scale > 0, got ({shape}, {scale})"));
    }
    let g = Gamma::new(shape, 1.0 / scale).map_err(|e| Error::Domain(e.to_string()))?;
    let x: f64 = g.sample(rng);
    Ok(1.0 / x)
}

/// Mean vector and covariance of a multivariate normal, with the covariance
/// factor cached.
#[derive(Clone, Debug)]
pub struct MvnParams {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl MvnParams {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::Dimension(format!(
                "mean has length {d}, covariance is {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let scale = max_abs(&covariance);
        let asym = max_abs(&(&covariance - covariance.transpose()));
        if asym > 1e-12 * scale {
            return domain(format!("covariance is not symmetric (max asymmetry {asym:e})"));
        }
        let factor = cholesky(&covariance)?;
        Ok(Self {
            mean,
            covariance,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower-triangular `L` with `L Lᵀ = covariance`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

/// `mean + L ζ` with `ζ` iid standard normal.
pub fn sample_mvn<R: Rng + ?Sized>(params: &MvnParams, rng: &mut R) -> DVector<f64> {
    let zeta = DVector::from_fn(params.dim(), |_, _| std_normal(rng));
    params.mean() + params.factor() * zeta
}

/// Which way [`std_normal_cdf_quantile`] maps its argument.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalDirection {
    Cdf,
    Quantile,
}

pub fn std_normal_cdf_quantile(x_or_p: f64, direction: NormalDirection) -> Result<f64> {
    match direction {
        NormalDirection::Cdf => Ok(std_normal_cdf(x_or_p)),
        NormalDirection::Quantile => std_normal_quantile(x_or_p),
    }
}

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// `Φ(x)` via the complementary error function.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `Φ⁻¹(p)`: Acklam's rational approximation polished by Halley steps.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("normal quantile needs p in (0, 1), got {p}"));
    }
    let mut x = quantile_rational(p);
    // Halley refinement; work on the smaller tail to keep the residual exact
    for _ in 0..2 {
        let e = if x <= 0.0 {
            std_normal_cdf(x) - p
        } else {
            (1.0 - p) - std_normal_cdf(-x)
        };
        let pdf = std_normal_pdf(x);
        if pdf == 0.0 {
            break;
        }
        let u = e / pdf;
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

/// Unrefined rational approximation to `Φ⁻¹(p)` (relative error ~1e-9),
/// for inner loops that do not need full precision. `p` must lie in (0, 1).
#[inline]
pub(crate) fn quantile_rational(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;
    let tail = |q: f64| {
        let t = (-2.0 * q.ln()).sqrt();
        (((((C[0] * t + C[1]) * t + C[2]) * t + C[3]) * t + C[4]) * t + C[5])
            / ((((D[0] * t + D[1]) * t + D[2]) * t + D[3]) * t + 1.0)
    };
    if p < P_LOW {
        tail(p)
    } else if p > 1.0 - P_LOW {
        -tail(1.0 - p)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// `Φ(-t)/φ(t)` for `t ≥ 0` by a continued fraction (accurate for large `t`).
fn mills_ratio_cf(t: f64) -> f64 {
    let mut acc = t;
    for k in (1..=80).rev() {
        acc = t + k as f64 / acc;
    }
    1.0 / acc
}

/// Threshold below which `log Φ` switches to the Mills-ratio form.
const LOG_CDF_TAIL: f64 = -8.0;

/// `log Φ(x)`, finite for every finite `x`.
pub fn log_std_normal_cdf(x: f64) -> f64 {
    if x < LOG_CDF_TAIL {
        -0.5 * x * x - LN_SQRT_2PI + mills_ratio_cf(-x).ln()
    } else if x > 0.0 {
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else {
        std_normal_cdf(x).ln()
    }
}

/// Inverse Mills ratio `φ(x)/Φ(x)`, the derivative of `log Φ(x)`.
pub fn inverse_mills(x: f64) -> f64 {
    if x < LOG_CDF_TAIL {
        1.0 / mills_ratio_cf(-x)
    } else {
        std_normal_pdf(x) / std_normal_cdf(x)
    }
}

/// Laplace(0, 2) draw: density `e^{-|ε|/2}/4`, as a scaled difference of
/// exponentials.
pub fn sample_laplace_half_rate<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let e1: f64 = Exp1.sample(rng);
    let e2: f64 = Exp1.sample(rng);
    2.0 * (e1 - e2)
}
