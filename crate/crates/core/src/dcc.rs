//! Differentiable cardinality constraints.
//!
//! The exact count of held stocks, `sum_i [w_i >= eps]`, is a step function
//! and has no useful gradient. Two smooth surrogates are provided:
//!
//! * rational: `1 - 1/(a w + 1)`, zero at the origin and tending to one;
//! * sigmoid: `1 / (1 + exp(-a (w - eps)))`, centred on the cutoff `eps`.
//!
//! The sigmoid surrogate is the one used by the solver. Its steepness `a`
//! must satisfy three conditions (see [`check_conditions`]) before the smooth
//! count can be trusted: the all-zero vector must count as (almost) zero,
//! the all-one vector as (almost) N, and the integrated approximation error
//! must stay below `1/N`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConditionReport, DccParams, Variant, WeightVector};

/// Largest steepness the minimal-a search will consider.
pub const MAX_SEARCH_A: f64 = 1e12;

/// Relative bracket width at which the minimal-a bisection stops.
const SEARCH_REL_WIDTH: f64 = 1e-6;

/// Exact selection indicator: 1 when `w >= eps`.
pub fn b_exact(w: f64, eps: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::DomainError(format!("weight {w} outside [0, 1]")));
    }
    Ok(u8::from(w >= eps))
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn b_rational(w: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::DomainError(format!("a must be > 0, got {a}")));
    }
    if !(w >= 0.0) {
        return Err(Error::DomainError(format!("rational surrogate needs w >= 0, got {w}")));
    }
    Ok(rational(w, a))
}

/// Logistic function without overflow for any finite argument.
pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `logistic(z) * (1 - logistic(z))`, computed without cancellation.
pub(crate) fn logistic_slope(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

pub fn b_sigmoid(w: f64, a: f64, eps: f64) -> f64 {
    logistic(a * (w - eps))
}

// Negative inputs only occur within the feasibility slack; they count as zero.
fn rational(w: f64, a: f64) -> f64 {
    let w = w.max(0.0);
    a * w / (a * w + 1.0)
}

fn rational_slope(w: f64, a: f64) -> f64 {
    let d = a * w.max(0.0) + 1.0;
    a / (d * d)
}

/// Number of weights at or above the cutoff.
pub fn cardinality_exact(w: &WeightVector) -> usize {
    count_at_least(w.as_slice(), w.eps())
}

pub(crate) fn count_at_least(w: &[f64], eps: f64) -> usize {
    w.iter().filter(|&&v| v >= eps).count()
}

pub fn cardinality_smooth(w: &[f64], p: &DccParams) -> f64 {
    smooth_count(w, p.a, p.eps, p.variant)
}

pub(crate) fn smooth_count(w: &[f64], a: f64, eps: f64, variant: Variant) -> f64 {
    match variant {
        Variant::Sigmoid => w.iter().map(|&v| b_sigmoid(v, a, eps)).sum(),
        Variant::Rational => w.iter().map(|&v| rational(v, a)).sum(),
    }
}

/// Gradient of [`cardinality_smooth`]; every entry is positive.
pub fn grad_cardinality_smooth(w: &[f64], p: &DccParams) -> Vec<f64> {
    smooth_count_grad(w, p.a, p.eps, p.variant)
}

pub(crate) fn smooth_count_grad(w: &[f64], a: f64, eps: f64, variant: Variant) -> Vec<f64> {
    match variant {
        Variant::Sigmoid => w.iter().map(|&v| a * logistic_slope(a * (v - eps))).collect(),
        Variant::Rational => w.iter().map(|&v| rational_slope(v, a)).collect(),
    }
}

/// `ln(1 + exp(-x))` for `x >= 0`.
fn log1p_exp_neg(x: f64) -> f64 {
    (-x).exp().ln_1p()
}

/// Integral over [0, 1] of `|b_exact(w) - b_sigmoid(w)|`, in closed form:
///
/// ```text
/// e = (2 ln 2 - ln(1 + exp(-a eps)) - ln(1 + exp(-a (1 - eps)))) / a
/// ```
pub fn approx_error_integral(a: f64, eps: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::DomainError(format!("a must be > 0, got {a}")));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::DomainError(format!("eps must lie in (0, 0.5), got {eps}")));
    }
    let bracket = 2.0 * std::f64::consts::LN_2 - log1p_exp_neg(a * eps) - log1p_exp_neg(a * (1.0 - eps));
    Ok(bracket / a)
}

/// The same integral by adaptive Simpson quadrature, split at the
/// discontinuity `w = eps`. Used to cross-check the closed form.
pub fn error_integral_quadrature(a: f64, eps: f64, abs_tol: f64) -> f64 {
    let below = |w: f64| b_sigmoid(w, a, eps);
    let above = |w: f64| logistic(-a * (w - eps));
    adaptive_simpson(&below, 0.0, eps, abs_tol / 2.0) + adaptive_simpson(&above, eps, 1.0, abs_tol / 2.0)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, width: f64) -> f64 {
        width / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(lo);
    let fb = f(hi);
    let fm = f(0.5 * (lo + hi));
    let whole = simpson(fa, fm, fb, hi - lo);
    recurse(f, lo, hi, fa, fm, fb, whole, tol, 60)
}

fn condition_c0(n: usize, a: f64, eps: f64) -> bool {
    n as f64 * b_sigmoid(0.0, a, eps) <= eps
}

fn condition_c1(n: usize, a: f64, eps: f64) -> bool {
    let n = n as f64;
    n * b_sigmoid(1.0, a, eps) >= n - eps
}

fn condition_c2(n: usize, a: f64, eps: f64) -> Result<bool> {
    Ok(approx_error_integral(a, eps)? <= 1.0 / n as f64)
}

/// Evaluates the three steepness conditions for `n` stocks.
///
/// C0 and C1 bound the smooth count of the all-zero and all-one vectors;
/// C2 bounds the error integral by `1/n`.
pub fn check_conditions(n: usize, a: f64, eps: f64) -> Result<ConditionReport> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("N must be >= 2, got {n}")));
    }
    let error_integral = approx_error_integral(a, eps)?;
    Ok(ConditionReport {
        c0: condition_c0(n, a, eps),
        c1: condition_c1(n, a, eps),
        c2: condition_c2(n, a, eps)?,
        error_integral,
        n_times_e: n as f64 * error_integral,
        min_a_overall: None,
    })
}

/// Smallest `a` at which each condition starts to hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionThresholds {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl ConditionThresholds {
    pub fn overall(&self) -> f64 {
        self.c0.max(self.c1).max(self.c2)
    }
}

pub fn condition_thresholds(n: usize, eps: f64) -> Result<ConditionThresholds> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("N must be >= 2, got {n}")));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0, 0.5), got {eps}")));
    }
    let fail = || Error::SearchFailed {
        n,
        eps,
        limit: MAX_SEARCH_A,
    };
    let c0 = smallest_satisfying(|a| condition_c0(n, a, eps)).ok_or_else(fail)?;
    let c1 = smallest_satisfying(|a| condition_c1(n, a, eps)).ok_or_else(fail)?;
    let c2 = smallest_satisfying(|a| condition_c2(n, a, eps).unwrap_or(false)).ok_or_else(fail)?;
    Ok(ConditionThresholds { c0, c1, c2 })
}

/// Smallest steepness satisfying C0, C1 and C2 together.
pub fn min_a_search(n: usize, eps: f64) -> Result<f64> {
    Ok(condition_thresholds(n, eps)?.overall())
}

/// Geometric bisection for the smallest `a` where a monotone predicate turns true.
fn smallest_satisfying(holds: impl Fn(f64) -> bool) -> Option<f64> {
    let mut hi = 1.0;
    let mut lo;
    if holds(hi) {
        lo = hi / 2.0;
        while holds(lo) {
            hi = lo;
            lo /= 2.0;
            if lo < 1e-12 {
                return Some(hi);
            }
        }
    } else {
        loop {
            lo = hi;
            hi = (hi * 2.0).min(MAX_SEARCH_A);
            if holds(hi) {
                break;
            }
            if hi >= MAX_SEARCH_A {
                return None;
            }
        }
    }
    Some(bisect(&holds, lo, hi))
}

fn bisect(holds: &impl Fn(f64) -> bool, mut lo: f64, mut hi: f64) -> f64 {
    while (hi - lo) > SEARCH_REL_WIDTH * hi {
        let mid = (lo * hi).sqrt();
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// How the fuzzer built a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuzzBranch {
    /// Uniform on the simplex.
    Simplex,
    /// Random support with a few sub-cutoff dust entries.
    Sparse,
    /// Sparse, with some entries exactly at the cutoff.
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCount {
    pub branch: FuzzBranch,
    pub tested: usize,
    /// Vectors whose smooth cardinality was within K.
    pub premise_held: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub trials: usize,
    pub branches: Vec<BranchCount>,
    pub counterexamples: usize,
}

impl FuzzReport {
    pub fn premise_held(&self) -> usize {
        self.branches.iter().map(|b| b.premise_held).sum()
    }
}

/// Draws random weight vectors and checks that a smooth count within K
/// implies an exact count within K.
///
/// Requires `N * e < 1`. Returns [`Error::AssuranceViolated`] with the first
/// offending vector.
pub fn assurance_fuzz(n: usize, p: &DccParams, trials: usize, seed: u64) -> Result<FuzzReport> {
    if p.variant != Variant::Sigmoid {
        return Err(Error::InvalidParameter("assurance fuzz applies to the sigmoid surrogate".into()));
    }
    let e = approx_error_integral(p.a, p.eps)?;
    if n as f64 * e >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "precondition N*e < 1 fails: N*e = {}",
            n as f64 * e
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [FuzzBranch::Simplex, FuzzBranch::Sparse, FuzzBranch::Boundary].map(|branch| BranchCount {
        branch,
        tested: 0,
        premise_held: 0,
    });
    let max_support = (2 * p.k).clamp(2, n);
    for trial in 0..trials {
        let slot = trial % 3;
        let w = match counts[slot].branch {
            FuzzBranch::Simplex => simplex_draw(&mut rng, n),
            FuzzBranch::Sparse => sparse_draw(&mut rng, n, max_support, 0, p.eps),
            FuzzBranch::Boundary => {
                let support = rng.random_range(2..=max_support);
                let at_cutoff = rng.random_range(1..=(support - 1).min(4));
                sparse_draw(&mut rng, n, support, at_cutoff, p.eps)
            }
        };
        counts[slot].tested += 1;
        let smooth = cardinality_smooth(&w, p);
        if smooth <= p.k as f64 {
            counts[slot].premise_held += 1;
            let exact = count_at_least(&w, p.eps);
            if exact > p.k {
                return Err(Error::AssuranceViolated {
                    weights: w,
                    smooth,
                    exact,
                    k: p.k,
                });
            }
        }
    }
    Ok(FuzzReport {
        trials,
        branches: counts.to_vec(),
        counterexamples: 0,
    })
}

fn simplex_draw(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// A vector with `support` nonzero entries (chosen uniformly when
/// `at_cutoff == 0`, otherwise exactly `support`), of which `at_cutoff` sit
/// exactly at `eps`. A few other entries get sub-cutoff dust.
fn sparse_draw(rng: &mut ChaCha8Rng, n: usize, max_support: usize, at_cutoff: usize, eps: f64) -> Vec<f64> {
    let support = if at_cutoff == 0 {
        rng.random_range(1..=max_support)
    } else {
        max_support
    };
    let idx = rand::seq::index::sample(rng, n, support).into_vec();
    let dust_count = rng.random_range(0..=(n - support).min(3));
    let mut w = vec![0.0; n];
    let free = &idx[at_cutoff..];
    let mut dust_mass = 0.0;
    for i in (0..n).filter(|i| !idx.contains(i)).take(dust_count) {
        w[i] = rng.random::<f64>() * eps * 0.999;
        dust_mass += w[i];
    }
    let mass = 1.0 - dust_mass - at_cutoff as f64 * eps;
    let raw: Vec<f64> = free.iter().map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    for (&i, v) in free.iter().zip(raw) {
        w[i] = mass * v / total;
    }
    for &i in &idx[..at_cutoff] {
        w[i] = eps;
    }
    w
}
