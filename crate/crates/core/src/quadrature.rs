//! Numerical integration used by the posterior oracles: adaptive
//! Gauss–Kronrod (7/15) over finite or infinite intervals with known
//! breakpoints, and Gauss–Hermite rules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
    /// Length scale of the substitution used on infinite tails.
    pub tail_scale: f64,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-13,
            rel_tol: 1e-10,
            max_intervals: 4000,
            tail_scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadResult<const N: usize> {
    pub value: [f64; N],
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug)]
enum Map {
    Finite,
    /// x = a + s t/(1-t), t in [0,1)
    Upper { a: f64, s: f64 },
    /// x = b - s t/(1-t), t in [0,1)
    Lower { b: f64, s: f64 },
}

impl Map {
    #[inline]
    fn apply(self, t: f64) -> (f64, f64) {
        match self {
            Map::Finite => (t, 1.0),
            Map::Upper { a, s } => {
                let d = 1.0 - t;
                (a + s * t / d, s / (d * d))
            }
            Map::Lower { b, s } => {
                let d = 1.0 - t;
                (b - s * t / d, s / (d * d))
            }
        }
    }
}

struct Segment<const N: usize> {
    lo: f64,
    hi: f64,
    map: Map,
    value: [f64; N],
    error: f64,
}

impl<const N: usize> PartialEq for Segment<N> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<const N: usize> Eq for Segment<N> {}
impl<const N: usize> PartialOrd for Segment<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for Segment<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.partial_cmp(&other.error).unwrap_or(Ordering::Equal)
    }
}

fn kronrod<const N: usize, F: FnMut(f64) -> [f64; N]>(
    f: &mut F,
    lo: f64,
    hi: f64,
    map: Map,
) -> ([f64; N], f64) {
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let mut eval = |t: f64| {
        let (x, jac) = map.apply(t);
        let mut v = f(x);
        for e in v.iter_mut() {
            *e *= jac;
            if !e.is_finite() {
                *e = 0.0;
            }
        }
        v
    };
    let mut k = [0.0; N];
    let mut g = [0.0; N];
    let center = eval(c);
    for i in 0..N {
        k[i] = WGK[7] * center[i];
        g[i] = WG[3] * center[i];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let a = eval(c - dx);
        let b = eval(c + dx);
        for i in 0..N {
            let s = a[i] + b[i];
            k[i] += WGK[j] * s;
            if j % 2 == 1 {
                g[i] += WG[j / 2] * s;
            }
        }
    }
    let mut err = 0.0f64;
    for i in 0..N {
        k[i] *= h;
        g[i] *= h;
        err = err.max((k[i] - g[i]).abs());
    }
    (k, err)
}

/// Adaptive integral of a vector-valued `f` over `[a, b]`, where either end
/// may be infinite. `breaks` are interior points where `f` is not smooth.
pub fn integrate<const N: usize, F: FnMut(f64) -> [f64; N]>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<QuadResult<N>> {
    assert!(a < b, "integration bounds must be increasing");
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|x| x.is_finite() && *x > a && *x < b)
        .collect();
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    if a.is_infinite() && b.is_infinite() && pts.is_empty() {
        pts.push(0.0);
    }
    let mut pieces: Vec<(f64, f64, Map)> = Vec::new();
    let mut left = a;
    for &p in &pts {
        pieces.push(piece(left, p, opts.tail_scale));
        left = p;
    }
    pieces.push(piece(left, b, opts.tail_scale));

    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for (lo, hi, map) in pieces {
        let (value, error) = kronrod(&mut f, lo, hi, map);
        evaluations += 15;
        heap.push(Segment {
            lo,
            hi,
            map,
            value,
            error,
        });
    }
    loop {
        let (total, err) = totals(&heap);
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let target = opts.abs_tol.max(opts.rel_tol * scale);
        if err <= target {
            return Ok(QuadResult {
                value: total,
                error: err,
                evaluations,
            });
        }
        if heap.len() >= opts.max_intervals {
            return Err(Error::Quadrature {
                achieved: err,
                requested: target,
            });
        }
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            // interval cannot be split further in floating point
            return Err(Error::Quadrature {
                achieved: err,
                requested: target,
            });
        }
        for (lo, hi) in [(worst.lo, mid), (mid, worst.hi)] {
            let (value, error) = kronrod(&mut f, lo, hi, worst.map);
            evaluations += 15;
            heap.push(Segment {
                lo,
                hi,
                map: worst.map,
                value,
                error,
            });
        }
    }
}

/// Scalar convenience wrapper around [`integrate`].
pub fn integrate_scalar<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<QuadResult<1>> {
    integrate(|x| [f(x)], a, b, breaks, opts)
}

fn piece(lo: f64, hi: f64, s: f64) -> (f64, f64, Map) {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => (lo, hi, Map::Finite),
        (true, false) => (0.0, 1.0, Map::Upper { a: lo, s }),
        (false, true) => (0.0, 1.0, Map::Lower { b: hi, s }),
        (false, false) => unreachable!("doubly infinite pieces are split at a breakpoint"),
    }
}

fn totals<const N: usize>(heap: &BinaryHeap<Segment<N>>) -> ([f64; N], f64) {
    let mut v = [0.0; N];
    let mut e = 0.0;
    for s in heap.iter() {
        for i in 0..N {
            v[i] += s.value[i];
        }
        e += s.error;
    }
    (v, e)
}

/// Gauss–Hermite rule for weight `e^{-x²}`: `(nodes, weights)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        jac[(i, i - 1)] = b;
        jac[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}
