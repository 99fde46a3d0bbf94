//! Dense linear algebra on enumerable trans-dimensional chains: stationary
//! distributions, norms on `L²₀(π)`, the model reachability matrix, the
//! model-jump matrix and the decomposition bounds built from them.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::scalar::Real;

/// Absolute tolerance `base`, widened for low-precision scalars.
fn tol<T: Real>(base: f64) -> T {
    let eps = T::default_epsilon().to_f64_lossy();
    T::of(base.max(eps * 1e3))
}

/// Slack allowed when comparing the two sides of a bound.
pub fn bound_slack<T: Real>() -> T {
    tol(1e-9)
}

/// A finite state space partitioned into models, with a transition matrix
/// and its stationary distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteTransChain<T: Real> {
    transition: DMatrix<T>,
    model_of: Vec<usize>,
    n_models: usize,
    stationary: DVector<T>,
}

impl<T: Real> FiniteTransChain<T> {
    /// Builds the chain and computes its stationary distribution.
    pub fn new(transition: DMatrix<T>, model_of: Vec<usize>) -> Result<Self> {
        let pi = stationary_distribution(&transition)?;
        Self::with_stationary(transition, model_of, pi)
    }

    /// Builds the chain from a supplied invariant distribution.
    pub fn with_stationary(
        transition: DMatrix<T>,
        model_of: Vec<usize>,
        stationary: DVector<T>,
    ) -> Result<Self> {
        let n = transition.nrows();
        check_stochastic(&transition)?;
        if model_of.len() != n || stationary.len() != n {
            return Err(Error::Dimension(format!(
                "{n} states but {} model labels and {} stationary entries",
                model_of.len(),
                stationary.len()
            )));
        }
        let n_models = model_of.iter().max().map_or(0, |m| m + 1);
        let mut mass = vec![T::zero(); n_models];
        let mut size = vec![0usize; n_models];
        for (i, &k) in model_of.iter().enumerate() {
            if stationary[i] < T::zero() {
                return domain(format!("stationary mass of state {i} is negative"));
            }
            mass[k] += stationary[i];
            size[k] += 1;
        }
        for k in 0..n_models {
            if size[k] == 0 {
                return domain(format!("model {k} has no states"));
            }
            if !(mass[k] > T::zero()) {
                return domain(format!("model {k} has zero stationary mass"));
            }
        }
        let total: T = stationary.iter().copied().fold(T::zero(), |a, b| a + b);
        if (total - T::one()).abs() > tol(1e-12) {
            return domain(format!("stationary vector sums to {total}"));
        }
        let residual = (stationary.transpose() * &transition - stationary.transpose()).amax();
        if residual > tol(1e-10) {
            return Err(Error::Consistency(format!(
                "supplied distribution is not invariant: max |πP - π| = {residual}"
            )));
        }
        Ok(Self {
            transition,
            model_of,
            n_models,
            stationary,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn transition(&self) -> &DMatrix<T> {
        &self.transition
    }

    pub fn model_of(&self) -> &[usize] {
        &self.model_of
    }

    pub fn stationary(&self) -> &DVector<T> {
        &self.stationary
    }

    /// States of model `k`, in increasing order.
    pub fn model_states(&self, k: usize) -> Vec<usize> {
        (0..self.n_states()).filter(|&i| self.model_of[i] == k).collect()
    }

    /// `π(Y_k)` for every model.
    pub fn model_mass(&self) -> DVector<T> {
        model_mass(&self.stationary, &self.model_of, self.n_models)
    }

    /// `π` restricted to model `k` and renormalized.
    pub fn conditional_stationary(&self, k: usize) -> DVector<T> {
        let idx = self.model_states(k);
        let v = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.stationary[i]));
        let s = v.sum();
        v / s
    }
}

/// Per-model kernels `P_k` (indexed by the model's states in increasing
/// order) and minorization constants `c_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct WithinKernelSet<T: Real> {
    pub kernels: Vec<DMatrix<T>>,
    pub c: Vec<T>,
}

impl<T: Real> WithinKernelSet<T> {
    /// Checks `Φ_k P_k = Φ_k` and `P ≥ c_k P_k` on every within-model block.
    pub fn validate(&self, chain: &FiniteTransChain<T>) -> Result<()> {
        let kk = chain.n_models();
        if self.kernels.len() != kk || self.c.len() != kk {
            return Err(Error::Dimension(format!(
                "{kk} models but {} kernels and {} constants",
                self.kernels.len(),
                self.c.len()
            )));
        }
        for k in 0..kk {
            let idx = chain.model_states(k);
            let pk = &self.kernels[k];
            if pk.nrows() != idx.len() || pk.ncols() != idx.len() {
                return Err(Error::Dimension(format!(
                    "kernel {k} is {}x{} but model has {} states",
                    pk.nrows(),
                    pk.ncols(),
                    idx.len()
                )));
            }
            check_stochastic(pk).map_err(|e| Error::Domain(format!("kernel {k}: {e}")))?;
            let ck = self.c[k];
            if !(ck >= T::zero() && ck <= T::one()) {
                return domain(format!("c_{k} = {ck} outside [0, 1]"));
            }
            let phi = chain.conditional_stationary(k);
            let res = (phi.transpose() * pk - phi.transpose()).amax();
            if res > tol(1e-10) {
                return domain(format!("kernel {k} does not preserve Φ_{k} (residual {res})"));
            }
            let p = chain.transition();
            for (a, &i) in idx.iter().enumerate() {
                for (b, &j) in idx.iter().enumerate() {
                    if p[(i, j)] < ck * pk[(a, b)] - tol(1e-12) {
                        return domain(format!(
                            "minorization fails at states ({i}, {j}): P = {} < c_{k} P_{k} = {}",
                            p[(i, j)],
                            ck * pk[(a, b)]
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Independent-sampler kernels `P_k = 𝟙Φ_kᵀ` with the largest valid `c_k`.
    pub fn independent_samplers(chain: &FiniteTransChain<T>) -> Self {
        let p = chain.transition();
        let mut kernels = Vec::new();
        let mut c = Vec::new();
        for k in 0..chain.n_models() {
            let idx = chain.model_states(k);
            let phi = chain.conditional_stationary(k);
            let nk = idx.len();
            kernels.push(DMatrix::from_fn(nk, nk, |_, b| phi[b]));
            let mut ck = T::one();
            for &i in &idx {
                for (b, &j) in idx.iter().enumerate() {
                    if phi[b] > T::zero() {
                        ck = ck.min(p[(i, j)] / phi[b]);
                    }
                }
            }
            c.push(ck);
        }
        Self { kernels, c }
    }

    pub fn min_c(&self) -> T {
        self.c.iter().copied().fold(T::one(), |a, b| a.min(b))
    }
}

fn check_stochastic<T: Real>(p: &DMatrix<T>) -> Result<()> {
    let n = p.nrows();
    if p.ncols() != n || n == 0 {
        return Err(Error::Dimension(format!("transition matrix is {}x{}", n, p.ncols())));
    }
    for i in 0..n {
        let mut s = T::zero();
        for j in 0..n {
            let v = p[(i, j)];
            if !(v >= T::zero()) || !v.is_finite() {
                return domain(format!("entry ({i}, {j}) = {v} is not a probability"));
            }
            s += v;
        }
        if (s - T::one()).abs() > tol(1e-12) {
            return domain(format!("row {i} sums to {s}"));
        }
    }
    Ok(())
}

fn model_mass<T: Real>(pi: &DVector<T>, model_of: &[usize], n_models: usize) -> DVector<T> {
    let mut m = DVector::zeros(n_models);
    for (i, &k) in model_of.iter().enumerate() {
        m[k] += pi[i];
    }
    m
}

/// Strongly connected components of the positive-entry graph, in an order
/// where each component's successors come first (Tarjan).
fn components<T: Real>(p: &DMatrix<T>) -> Vec<Vec<usize>> {
    let n = p.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| p[(i, j)] > T::zero()).collect())
        .collect();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut counter = 0;
    // iterative Tarjan: (node, next edge position)
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut work = vec![(root, 0usize)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut pos)) = work.last_mut() {
            if *pos < adj[v].len() {
                let w = adj[v][*pos];
                *pos += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                work.pop();
                if let Some(&(u, _)) = work.last() {
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    out.push(comp);
                }
            }
        }
    }
    out
}

/// Closed communicating classes of `p`.
pub fn closed_classes<T: Real>(p: &DMatrix<T>) -> Vec<Vec<usize>> {
    let comps = components(p);
    let n = p.nrows();
    let mut comp_of = vec![0; n];
    for (c, members) in comps.iter().enumerate() {
        for &i in members {
            comp_of[i] = c;
        }
    }
    let mut closed: Vec<Vec<usize>> = comps
        .iter()
        .enumerate()
        .filter(|(c, members)| {
            members
                .iter()
                .all(|&i| (0..n).all(|j| p[(i, j)] == T::zero() || comp_of[j] == *c))
        })
        .map(|(_, m)| m.clone())
        .collect();
    closed.sort();
    closed
}

/// Stationary distribution of a chain with a single closed class; transient
/// states get mass zero. Uses Grassmann–Taksar–Heyman elimination, which is
/// free of subtractive cancellation.
pub fn stationary_distribution<T: Real>(p: &DMatrix<T>) -> Result<DVector<T>> {
    check_stochastic(p)?;
    let n = p.nrows();
    let classes = closed_classes(p);
    if classes.len() != 1 {
        return Err(Error::Reducible { classes });
    }
    let class = &classes[0];
    let m = class.len();
    let mut a = DMatrix::from_fn(m, m, |i, j| p[(class[i], class[j])]);
    for k in (1..m).rev() {
        let mut s = T::zero();
        for j in 0..k {
            s += a[(k, j)];
        }
        for i in 0..k {
            a[(i, k)] /= s;
        }
        for i in 0..k {
            let aik = a[(i, k)];
            if aik == T::zero() {
                continue;
            }
            for j in 0..k {
                let akj = a[(k, j)];
                a[(i, j)] += aik * akj;
            }
        }
    }
    let mut x = vec![T::zero(); m];
    x[0] = T::one();
    for j in 1..m {
        let mut s = T::zero();
        for i in 0..j {
            s += x[i] * a[(i, j)];
        }
        x[j] = s;
    }
    let total = x.iter().copied().fold(T::zero(), |a, b| a + b);
    let mut pi = DVector::zeros(n);
    for (i, &s) in class.iter().enumerate() {
        pi[s] = x[i] / total;
    }
    let residual = (pi.transpose() * p - pi.transpose()).abs().sum();
    if residual > tol(1e-12) {
        return Err(Error::Consistency(format!("‖πP - π‖₁ = {residual} after elimination")));
    }
    Ok(pi)
}

fn support<T: Real>(pi: &DVector<T>) -> Vec<usize> {
    (0..pi.len()).filter(|&i| pi[i] > T::zero()).collect()
}

/// `D^{1/2} P D^{-1/2}` on the support of `π`.
fn similarity<T: Real>(p: &DMatrix<T>, pi: &DVector<T>, idx: &[usize]) -> DMatrix<T> {
    let s: Vec<T> = idx.iter().map(|&i| pi[i].sqrt()).collect();
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| s[a] * p[(idx[a], idx[b])] / s[b])
}

/// Norm of `P` as an operator on `L²₀(π)`.
pub fn l20_operator_norm<T: Real>(p: &DMatrix<T>, pi: &DVector<T>) -> Result<T> {
    let n = pi.len();
    if p.nrows() != n || p.ncols() != n {
        return Err(Error::Dimension(format!(
            "matrix {}x{} with distribution of length {n}",
            p.nrows(),
            p.ncols()
        )));
    }
    let idx = support(pi);
    let s = DVector::from_iterator(idx.len(), idx.iter().map(|&i| pi[i].sqrt()));
    let b = similarity(p, pi, &idx) - &s * s.transpose();
    let sv = b.svd(false, false).singular_values;
    Ok(sv.iter().copied().fold(T::zero(), |a, b| a.max(b)))
}

/// The `ω`-adjoint `D⁻¹SᵀD` (rows outside the support copy `S`).
pub fn adjoint<T: Real>(s: &DMatrix<T>, omega: &DVector<T>) -> DMatrix<T> {
    let n = s.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if omega[i] > T::zero() {
            s[(j, i)] * omega[j] / omega[i]
        } else {
            s[(i, j)]
        }
    })
}

/// 0/1 model matrix.
pub type ModelMatrix = DMatrix<u8>;

/// `Γ_P`: entry `(k, k')` is 1 when the chain started from `π` restricted to
/// model `k` reaches model `k'` in one step with positive probability.
pub fn build_gamma<T: Real>(chain: &FiniteTransChain<T>) -> ModelMatrix {
    model_reach(chain, chain.transition())
}

fn model_reach<T: Real>(chain: &FiniteTransChain<T>, p: &DMatrix<T>) -> ModelMatrix {
    let kk = chain.n_models();
    let mass = model_flow(chain.stationary(), p, chain.model_of(), kk);
    mass.map(|v| u8::from(v > T::zero()))
}

/// `Σ_{z ∈ k} π(z) P(z, model k')`.
fn model_flow<T: Real>(pi: &DVector<T>, p: &DMatrix<T>, model_of: &[usize], kk: usize) -> DMatrix<T> {
    let n = pi.len();
    let mut out = DMatrix::zeros(kk, kk);
    for i in 0..n {
        if !(pi[i] > T::zero()) {
            continue;
        }
        for j in 0..n {
            out[(model_of[i], model_of[j])] += pi[i] * p[(i, j)];
        }
    }
    out
}

/// Boolean matrix power.
pub fn gamma_power(gamma: &ModelMatrix, s: usize) -> ModelMatrix {
    let k = gamma.nrows();
    let mut acc = ModelMatrix::identity(k, k);
    for _ in 0..s {
        acc = ModelMatrix::from_fn(k, k, |i, j| {
            u8::from((0..k).any(|l| acc[(i, l)] != 0 && gamma[(l, j)] != 0))
        });
    }
    acc
}

/// Whether every entry of `Γˢ` is positive.
pub fn check_h2_via_gamma(gamma: &ModelMatrix, s: usize) -> Result<bool> {
    if s == 0 {
        return domain("s must be at least 1");
    }
    Ok(gamma_power(gamma, s).iter().all(|&v| v != 0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SStepReport<T: Real> {
    /// Every model reaches every model in `s` steps from `π`.
    pub holds: bool,
    /// `Σ_{z ∈ k} π(z) Pˢ(z, model k')`.
    pub mass: DMatrix<T>,
    pub gamma_power_positive: bool,
}

/// `s`-step reachability test. When it passes, `Γ_Pˢ` must be positive; a
/// counterexample is reported as a consistency error.
pub fn check_h2_via_s_step<T: Real>(chain: &FiniteTransChain<T>, s: usize) -> Result<SStepReport<T>> {
    if s == 0 {
        return domain("s must be at least 1");
    }
    let p = chain.transition();
    let mut ps = p.clone();
    for _ in 1..s {
        ps = &ps * p;
    }
    let mass = model_flow(chain.stationary(), &ps, chain.model_of(), chain.n_models());
    let holds = mass.iter().all(|&v| v > T::zero());
    let gamma_power_positive = check_h2_via_gamma(&build_gamma(chain), s)?;
    if holds && !gamma_power_positive {
        return Err(Error::Consistency(format!(
            "{s}-step model mass is positive but Γ_P^{s} has a zero entry"
        )));
    }
    Ok(SStepReport {
        holds,
        mass,
        gamma_power_positive,
    })
}

/// The model-level kernel `S̄` of a kernel `S` with `ωS = ω`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelJump<T: Real> {
    pub matrix: DMatrix<T>,
    pub mass: DVector<T>,
}

impl<T: Real> ModelJump<T> {
    pub fn from_kernel(s: &DMatrix<T>, omega: &DVector<T>, model_of: &[usize], n_models: usize) -> Self {
        let n = omega.len();
        let mass = model_mass(omega, model_of, n_models);
        let mut q = DMatrix::<T>::zeros(n, n_models);
        for i in 0..n {
            for j in 0..n {
                q[(i, model_of[j])] += s[(i, j)];
            }
        }
        let mut matrix = DMatrix::zeros(n_models, n_models);
        for i in 0..n {
            if !(omega[i] > T::zero()) {
                continue;
            }
            for k in 0..n_models {
                for l in 0..n_models {
                    matrix[(k, l)] += omega[i] * q[(i, k)] * q[(i, l)];
                }
            }
        }
        for k in 0..n_models {
            for l in 0..n_models {
                matrix[(k, l)] /= mass[k];
            }
        }
        Self { matrix, mass }
    }

    /// `D^{1/2} M D^{-1/2}` with `D = diag(mass)`, symmetric up to rounding.
    pub fn symmetrized(&self) -> DMatrix<T> {
        let k = self.mass.len();
        let s: Vec<T> = self.mass.iter().map(|m| m.sqrt()).collect();
        let a = DMatrix::from_fn(k, k, |i, j| s[i] * self.matrix[(i, j)] / s[j]);
        (&a + a.transpose()) * T::of(0.5)
    }

    /// Eigenvalues, largest first.
    pub fn eigenvalues(&self) -> Vec<T> {
        symmetric_eigenvalues(&self.symmetrized())
    }
}

/// `M_P`, the two-step model-jump matrix of the chain.
pub fn build_model_jump_matrix<T: Real>(chain: &FiniteTransChain<T>) -> ModelJump<T> {
    ModelJump::from_kernel(chain.transition(), chain.stationary(), chain.model_of(), chain.n_models())
}

/// Second largest eigenvalue of `M_P` (0 for a single model).
pub fn lambda1<T: Real>(m: &ModelJump<T>) -> Result<T> {
    let ev = m.eigenvalues();
    if let Some(&min) = ev.last() {
        if min < -tol::<T>(1e-8) {
            return Err(Error::Consistency(format!(
                "model-jump matrix has eigenvalue {min} < 0"
            )));
        }
    }
    Ok(ev.get(1).copied().unwrap_or_else(T::zero).max(T::zero()).min(T::one()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport<T: Real> {
    pub lhs: T,
    pub rhs: T,
    pub holds: bool,
}

impl<T: Real> BoundReport<T> {
    fn new(lhs: T, rhs: T) -> Self {
        Self {
            lhs,
            rhs,
            holds: lhs >= rhs - bound_slack::<T>(),
        }
    }
}

fn matrix_power<T: Real>(p: &DMatrix<T>, t: usize) -> DMatrix<T> {
    let mut out = DMatrix::identity(p.nrows(), p.ncols());
    for _ in 0..t {
        out = &out * p;
    }
    out
}

/// `1 − ‖Pᵗ‖⁴` against `(min c_kᵗ)² (1 − max ‖P_kᵗ‖²)(1 − λ₁(M_P))`.
pub fn norm_bound_check<T: Real>(
    chain: &FiniteTransChain<T>,
    kernels: &WithinKernelSet<T>,
    t: usize,
) -> Result<BoundReport<T>> {
    if t == 0 {
        return domain("step count must be at least 1");
    }
    kernels.validate(chain)?;
    let pt = matrix_power(chain.transition(), t);
    let norm = l20_operator_norm(&pt, chain.stationary())?;
    let mut sup = T::zero();
    for k in 0..chain.n_models() {
        let pk = matrix_power(&kernels.kernels[k], t);
        sup = sup.max(l20_operator_norm(&pk, &chain.conditional_stationary(k))?);
    }
    let c = kernels.min_c().powi(t as i32);
    let l1 = lambda1(&build_model_jump_matrix(chain))?;
    let lhs = T::one() - norm.powi(4);
    let rhs = c * c * (T::one() - sup * sup) * (T::one() - l1);
    Ok(BoundReport::new(lhs, rhs))
}

/// `1 − ‖TS*‖²_ω` against `c² (1 − max ‖T_k‖²)(1 − ‖S̄‖)`.
pub fn decomposition_inequality_check<T: Real>(
    t: &DMatrix<T>,
    s: &DMatrix<T>,
    omega: &DVector<T>,
    model_of: &[usize],
    kernels: &[DMatrix<T>],
    c: T,
) -> Result<BoundReport<T>> {
    let n = omega.len();
    if t.shape() != (n, n) || s.shape() != (n, n) || model_of.len() != n {
        return Err(Error::Dimension("T, S, ω and partition disagree in size".into()));
    }
    if !(c >= T::zero() && c <= T::one()) {
        return domain(format!("c = {c} outside [0, 1]"));
    }
    for (name, m) in [("T", t), ("S", s)] {
        check_stochastic(m)?;
        let res = (omega.transpose() * m - omega.transpose()).amax();
        if res > tol(1e-10) {
            return domain(format!("{name} does not preserve ω (residual {res})"));
        }
    }
    let n_models = model_of.iter().max().map_or(0, |m| m + 1);
    if kernels.len() != n_models {
        return Err(Error::Dimension(format!("{n_models} blocks but {} kernels", kernels.len())));
    }
    let mut sup = T::zero();
    for (k, tk) in kernels.iter().enumerate() {
        let idx: Vec<usize> = (0..n).filter(|&i| model_of[i] == k).collect();
        if tk.shape() != (idx.len(), idx.len()) {
            return Err(Error::Dimension(format!("kernel {k} has the wrong size")));
        }
        check_stochastic(tk)?;
        let w = DVector::from_iterator(idx.len(), idx.iter().map(|&i| omega[i]));
        let wk = &w / w.sum();
        let res = (wk.transpose() * tk - wk.transpose()).amax();
        if res > tol(1e-10) {
            return domain(format!("T_{k} does not preserve ω_{k} (residual {res})"));
        }
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                if t[(i, j)] < c * tk[(a, b)] - tol(1e-12) {
                    return domain(format!("T < c T_{k} at states ({i}, {j})"));
                }
            }
        }
        sup = sup.max(l20_operator_norm(tk, &wk)?);
    }
    let ts = t * adjoint(s, omega);
    let norm = l20_operator_norm(&ts, omega)?;
    let bar = ModelJump::from_kernel(s, omega, model_of, n_models);
    let bar_norm = l20_operator_norm(&bar.matrix, &bar.mass)?;
    let lhs = T::one() - norm * norm;
    let rhs = c * c * (T::one() - sup * sup) * (T::one() - bar_norm);
    Ok(BoundReport::new(lhs, rhs))
}

/// Everything the `finite-verify` report lists for one chain.
#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub n_states: usize,
    pub n_models: usize,
    /// `‖Pᵗ‖` for `t = 1..=norm_steps`.
    pub norms: Vec<f64>,
    pub lambda1: f64,
    /// Norm bound for `t = 1..=bound_steps`.
    pub bounds: Vec<BoundReport<f64>>,
    /// Decomposition inequality with `T = Pᵗ`, `S = P`, same `t` range.
    pub decompositions: Vec<BoundReport<f64>>,
    /// Smallest `s ≤ n_models` passing the `s`-step test, if any.
    pub h2_steps: Option<usize>,
}

impl VerifyReport {
    pub fn all_hold(&self) -> bool {
        self.bounds.iter().chain(&self.decompositions).all(|b| b.holds)
    }
}

pub fn verify_chain(
    chain: &FiniteTransChain<f64>,
    kernels: &WithinKernelSet<f64>,
    norm_steps: usize,
    bound_steps: usize,
) -> Result<VerifyReport> {
    kernels.validate(chain)?;
    let p = chain.transition();
    let pi = chain.stationary();
    let norms = (1..=norm_steps)
        .map(|t| l20_operator_norm(&matrix_power(p, t), pi))
        .collect::<Result<Vec<_>>>()?;
    let l1 = lambda1(&build_model_jump_matrix(chain))?;
    let mut bounds = Vec::new();
    let mut decompositions = Vec::new();
    for t in 1..=bound_steps {
        bounds.push(norm_bound_check(chain, kernels, t)?);
        let tk: Vec<DMatrix<f64>> = kernels.kernels.iter().map(|k| matrix_power(k, t)).collect();
        decompositions.push(decomposition_inequality_check(
            &matrix_power(p, t),
            p,
            pi,
            chain.model_of(),
            &tk,
            kernels.min_c().powi(t as i32),
        )?);
    }
    let mut h2_steps = None;
    for s in 1..=chain.n_models().max(1) {
        if check_h2_via_s_step(chain, s)?.holds {
            h2_steps = Some(s);
            break;
        }
    }
    Ok(VerifyReport {
        n_states: chain.n_states(),
        n_models: chain.n_models(),
        norms,
        lambda1: l1,
        bounds,
        decompositions,
        h2_steps,
    })
}

// ---------------------------------------------------------------------------
// random instances

/// How model-jump proposals connect models in a random instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JumpTopology {
    /// Any state may propose any other.
    Complete,
    /// Proposals only between models `k` and `k ± 1`.
    Neighbors,
}

#[derive(Clone, Copy, Debug)]
pub struct EnsembleSpec {
    pub min_models: usize,
    pub max_models: usize,
    pub max_states: usize,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            min_models: 2,
            max_models: 4,
            max_states: 60,
        }
    }
}

/// Random symmetric sub-stochastic proposal over `n` states, zero where
/// `allowed` is false, with roughly `sparsity` of entries dropped.
fn random_proposal<R: Rng + ?Sized>(
    n: usize,
    rng: &mut R,
    sparsity: f64,
    allowed: impl Fn(usize, usize) -> bool,
) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if allowed(i, j) && rng.random::<f64>() >= sparsity {
                let v = rng.random::<f64>();
                q[(i, j)] = v;
                q[(j, i)] = v;
            }
        }
    }
    let max_row = (0..n).map(|i| q.row(i).sum()).fold(0.0, f64::max);
    if max_row > 0.0 {
        q /= max_row * (1.0 + rng.random::<f64>());
    }
    q
}

/// Metropolis kernel for weights `w` from a symmetric proposal.
fn metropolis(q: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let n = w.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i != j && q[(i, j)] > 0.0 {
                let a = q[(i, j)] * (w[j] / w[i]).min(1.0);
                k[(i, j)] = a;
                off += a;
            }
        }
        k[(i, i)] = 1.0 - off;
    }
    k
}

/// Random kernel on `n` states preserving weights `w` (not necessarily
/// reversible).
pub fn random_invariant_kernel<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> DMatrix<f64> {
    let n = w.len();
    match rng.random_range(0..3) {
        0 => {
            let s: f64 = w.iter().sum();
            DMatrix::from_fn(n, n, |_, j| w[j] / s)
        }
        1 => metropolis(&random_proposal(n, rng, 0.3, |_, _| true), w),
        _ => {
            let a = metropolis(&random_proposal(n, rng, 0.3, |_, _| true), w);
            let b = metropolis(&random_proposal(n, rng, 0.3, |_, _| true), w);
            a * b
        }
    }
}

/// A chain `P = c_k P_k + (1 − c_k) J` on the rows of model `k`, where each
/// `P_k` preserves `Φ_k` and `J` preserves `(1 − c_k) π`, so `π` is
/// invariant for `P` and `P ≥ c_k P_k` holds by construction.
pub fn random_decomposed_chain<R: Rng + ?Sized>(
    spec: &EnsembleSpec,
    topology: JumpTopology,
    rng: &mut R,
) -> (FiniteTransChain<f64>, WithinKernelSet<f64>) {
    let kk = rng.random_range(spec.min_models..=spec.max_models);
    let per_model = (spec.max_states / kk).clamp(1, 15);
    let sizes: Vec<usize> = (0..kk).map(|_| rng.random_range(1..=per_model)).collect();
    let model_of: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(k, &s)| std::iter::repeat_n(k, s))
        .collect();
    let n = model_of.len();
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let pi: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let c: Vec<f64> = (0..kk).map(|_| rng.random_range(0.2..0.95)).collect();

    let mut p = DMatrix::zeros(n, n);
    let mut kernels = Vec::with_capacity(kk);
    let mut offset = 0;
    for k in 0..kk {
        let w = &pi[offset..offset + sizes[k]];
        let pk = random_invariant_kernel(w, rng);
        for a in 0..sizes[k] {
            for b in 0..sizes[k] {
                p[(offset + a, offset + b)] += c[k] * pk[(a, b)];
            }
        }
        kernels.push(pk);
        offset += sizes[k];
    }
    let nu: Vec<f64> = (0..n).map(|i| (1.0 - c[model_of[i]]) * pi[i]).collect();
    let q = random_proposal(n, rng, 0.2, |i, j| match topology {
        JumpTopology::Complete => true,
        JumpTopology::Neighbors => model_of[i].abs_diff(model_of[j]) <= 1,
    });
    let jump = metropolis(&q, &nu);
    for i in 0..n {
        let ci = c[model_of[i]];
        for j in 0..n {
            p[(i, j)] += (1.0 - ci) * jump[(i, j)];
        }
        // remove accumulated rounding so rows sum to one
        let s = p.row(i).sum();
        p.row_mut(i).scale_mut(1.0 / s);
    }
    let chain = FiniteTransChain::with_stationary(p, model_of, DVector::from_vec(pi))
        .expect("construction preserves π");
    (chain, WithinKernelSet { kernels, c })
}

// ---------------------------------------------------------------------------
// text format

struct Lines<'a> {
    rest: VecDeque<(usize, &'a str)>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            rest: text
                .lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
                .collect(),
            last: text.lines().count(),
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.rest.pop_front().ok_or_else(|| Error::Parse {
            line: self.last,
            msg: format!("unexpected end of input, expected {what}"),
        })
    }

    fn numbers(&mut self, what: &str) -> Result<(usize, Vec<f64>)> {
        let (line, s) = self.next(what)?;
        let v = s
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("not a number: {t:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((line, v))
    }

    fn stochastic_matrix(&mut self, rows: usize) -> Result<DMatrix<f64>> {
        let mut mat = DMatrix::zeros(rows, rows);
        for i in 0..rows {
            let (line, row) = self.numbers("matrix row")?;
            let fail = |msg: String| Err(Error::Parse { line, msg });
            if row.len() != rows {
                return fail(format!("expected {rows} entries, found {}", row.len()));
            }
            if row.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return fail("entries must be nonnegative".into());
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return fail(format!("row sums to {s}, not 1"));
            }
            for j in 0..rows {
                mat[(i, j)] = row[j] / s;
            }
        }
        Ok(mat)
    }
}

/// Parses a chain description:
///
/// ```text
/// n m
/// <n rows of n transition probabilities>
/// <n model indices in 0..m>
/// kernel <k> <c_k>          (optional, once per model)
/// <n_k rows of n_k probabilities>
/// ```
///
/// Blank lines and lines starting with `#` are ignored. Rows must sum to 1
/// within 1e-9 and are renormalized. Without kernel sections the
/// within-model kernels default to independent samplers.
pub fn parse_chain_file(text: &str) -> Result<(FiniteTransChain<f64>, WithinKernelSet<f64>)> {
    let mut lines = Lines::new(text);
    let (hl, h) = lines.numbers("header `n m`")?;
    if h.len() != 2 || h.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
        return Err(Error::Parse {
            line: hl,
            msg: "header must be two positive integers `n m`".into(),
        });
    }
    let (n, m) = (h[0] as usize, h[1] as usize);
    let p = lines.stochastic_matrix(n)?;
    let (ml, labels) = lines.numbers("model index line")?;
    if labels.len() != n || labels.iter().any(|v| v.fract() != 0.0 || *v < 0.0 || *v >= m as f64) {
        return Err(Error::Parse {
            line: ml,
            msg: format!("expected {n} model indices in 0..{m}"),
        });
    }
    let model_of: Vec<usize> = labels.iter().map(|&v| v as usize).collect();
    if (0..m).any(|k| !model_of.contains(&k)) {
        return Err(Error::Parse {
            line: ml,
            msg: "every model needs at least one state".into(),
        });
    }
    let chain = FiniteTransChain::new(p, model_of).map_err(|e| Error::Parse {
        line: ml,
        msg: e.to_string(),
    })?;
    let mut kernels = WithinKernelSet::independent_samplers(&chain);
    let mut seen = vec![false; m];
    while let Ok((kl, s)) = lines.next("kernel section") {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let bad = || Error::Parse {
            line: kl,
            msg: "expected `kernel <k> <c_k>`".into(),
        };
        if parts.len() != 3 || parts[0] != "kernel" {
            return Err(bad());
        }
        let k: usize = parts[1].parse().map_err(|_| bad())?;
        let ck: f64 = parts[2].parse().map_err(|_| bad())?;
        if k >= m || seen[k] {
            return Err(Error::Parse {
                line: kl,
                msg: format!("kernel index {k} out of range or repeated"),
            });
        }
        seen[k] = true;
        kernels.kernels[k] = lines.stochastic_matrix(chain.model_states(k).len())?;
        kernels.c[k] = ck;
    }
    kernels.validate(&chain).map_err(|e| Error::Parse {
        line: lines.last,
        msg: e.to_string(),
    })?;
    Ok((chain, kernels))
}
