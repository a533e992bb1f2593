//! Good sets where the field `f = sigma_t^eps * mu` is pinched between a
//! lower cutoff and a dyadic upper cutoff, with explicit constants, and the
//! nested sequence obtained by restricting `mu` to the previous good set.
//!
//! With `M = mu(total)`, `c <= int f dmu` and `C = int f^2 dmu`:
//!
//! * cutoff `c' = c / (4M)`, so `int_{f <= c'} f dmu <= c/4`;
//! * `m = ceil(log2(16 C / c))`. Chebyshev gives `mu{f >= 2^l} <= C 4^-l`,
//!   hence `int_{f >= 2^m} f dmu <= sum_{l >= m} 2^(l+1) C 4^-l = 4 C 2^-m <= c/4`;
//! * so `int_G f dmu >= c/2` on `G = {c' < f < 2^m}`, and since `f < 2^m` on `G`,
//!   `mu(G) >= c / 2^(m+1) =: delta`.
//!
//! Both conclusions are re-checked on every call; a violation is reported as
//! [`Error::Invariant`].

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::kernel::{Convolver, FieldValues, KernelParams};
use crate::measure::{restrict_measure, AtomicMeasure};
use crate::scalar::{kahan_sum, KahanSum, Scalar};

static GOOD_SET_CHECKS: AtomicU64 = AtomicU64::new(0);
static PROFILE_CHECKS: AtomicU64 = AtomicU64::new(0);

/// Number of `(good_set, chebyshev_profile)` guarantee checks performed so far
/// in this process. Every check that ran also passed, or an error was returned.
pub fn guarantee_checks() -> (u64, u64) {
    (
        GOOD_SET_CHECKS.load(Ordering::Relaxed),
        PROFILE_CHECKS.load(Ordering::Relaxed),
    )
}

fn pow2<T: Scalar>(e: i32) -> T {
    T::lit(2f64.powi(e))
}

/// Largest `l` with `2^l <= x`, for `x > 0`.
fn floor_log2<T: Scalar>(x: T) -> i32 {
    let mut l = x.log2().floor().to_i32().unwrap_or(0);
    while pow2::<T>(l) > x {
        l -= 1;
    }
    while pow2::<T>(l + 1) <= x {
        l += 1;
    }
    l
}

/// Smallest `m` with `2^m >= x`, for `x > 0`.
fn ceil_log2<T: Scalar>(x: T) -> i32 {
    let mut m = x.log2().ceil().to_i32().unwrap_or(0);
    while pow2::<T>(m) < x {
        m += 1;
    }
    while pow2::<T>(m - 1) >= x {
        m -= 1;
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMass<T> {
    pub level: i32,
    pub mass: T,
}

/// Mass of `f` split into `{f <= c'}`, `{c' < f < 2^m_low}` and dyadic levels
/// `{2^l <= f < 2^(l+1)}` for `l >= m_low` (above the cutoff).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelProfile<T> {
    pub c_prime: T,
    pub m_low: i32,
    pub below_mass: T,
    pub middle_mass: T,
    pub levels: Vec<LevelMass<T>>,
    /// `int f^2 dmu`.
    pub c_bound: T,
    pub total_mass: T,
}

pub fn chebyshev_profile<T: Scalar>(
    f: &FieldValues<T>,
    weights: &[T],
    c_prime: T,
    m_low: i32,
) -> Result<LevelProfile<T>> {
    profile_of(&f.values, weights, c_prime, m_low)
}

fn profile_of<T: Scalar>(values: &[T], weights: &[T], c_prime: T, m_low: i32) -> Result<LevelProfile<T>> {
    if values.len() != weights.len() {
        return validation(format!("{} field values but {} weights", values.len(), weights.len()));
    }
    if !(c_prime > T::zero()) {
        return validation(format!("cutoff must be positive (got {c_prime})"));
    }
    let c_bound = kahan_sum(values.iter().zip(weights).map(|(&v, &w)| w * v * v));
    let total_mass = kahan_sum(weights.iter().copied());
    let floor = pow2::<T>(m_low);
    let l_max = values
        .iter()
        .filter(|&&v| v > c_prime && v >= floor)
        .map(|&v| floor_log2(v))
        .max();
    let n_levels = l_max.map_or(0, |l| (l - m_low + 1) as usize);
    let mut acc = vec![KahanSum::new(); n_levels];
    let mut below = KahanSum::new();
    let mut middle = KahanSum::new();
    for (&v, &w) in values.iter().zip(weights) {
        if v <= c_prime {
            below.add(w);
        } else if v < floor {
            middle.add(w);
        } else {
            acc[(floor_log2(v) - m_low) as usize].add(w);
        }
    }
    let levels: Vec<LevelMass<T>> = acc
        .iter()
        .enumerate()
        .map(|(i, a)| LevelMass {
            level: m_low + i as i32,
            mass: a.value(),
        })
        .collect();

    PROFILE_CHECKS.fetch_add(1, Ordering::Relaxed);
    for lm in &levels {
        // mu{2^l <= f < 2^(l+1)} * 4^l <= int f^2 dmu
        if lm.mass * pow2::<T>(2 * lm.level) > c_bound {
            return Err(Error::Invariant(format!(
                "level {} carries mass {} above Chebyshev bound {}",
                lm.level,
                lm.mass,
                c_bound * pow2::<T>(-2 * lm.level)
            )));
        }
    }
    let parts = below.value() + middle.value() + kahan_sum(levels.iter().map(|l| l.mass));
    if (parts - total_mass).abs() > T::mass_tol() * total_mass.max(T::min_positive_value()) {
        return Err(Error::Invariant(format!(
            "level masses sum to {parts}, total is {total_mass}"
        )));
    }
    Ok(LevelProfile {
        c_prime,
        m_low,
        below_mass: below.value(),
        middle_mass: middle.value(),
        levels,
        c_bound,
        total_mass,
    })
}

/// One pigeonhole stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodSet<T> {
    pub stage: usize,
    /// Kept atoms, ascending (indices into the measure the field was taken on).
    pub indices: Vec<usize>,
    /// Certified lower bound `c` on `int f dmu`.
    pub c: T,
    /// Lower cutoff `c' = c / (4M)`.
    pub c_low: T,
    /// Upper cutoff exponent: kept atoms have `f < 2^m`.
    pub m: i32,
    /// `c / 2^(m+1)`, a certified lower bound on `achieved_mass`.
    pub delta: T,
    pub achieved_mass: T,
    /// `int_G f dmu`.
    pub integral_on_set: T,
    pub l1: T,
    pub l2sq: T,
    pub total_mass: T,
    pub profile: LevelProfile<T>,
}

/// Good set for a field sampled at the atoms of `mu`, given `0 < c <= int f dmu`.
pub fn good_set<T: Scalar>(f: &FieldValues<T>, mu: &AtomicMeasure<T>, c: T) -> Result<GoodSet<T>> {
    good_set_of(&f.values, mu.weights(), c, 1)
}

fn good_set_of<T: Scalar>(values: &[T], weights: &[T], c: T, stage: usize) -> Result<GoodSet<T>> {
    if values.len() != weights.len() {
        return validation(format!("{} field values but {} weights", values.len(), weights.len()));
    }
    let total_mass = kahan_sum(weights.iter().copied());
    if !(total_mass > T::zero()) {
        return validation("good set needs a measure of positive mass");
    }
    let l1 = kahan_sum(values.iter().zip(weights).map(|(&v, &w)| w * v));
    let l2sq = kahan_sum(values.iter().zip(weights).map(|(&v, &w)| w * v * v));
    if !(c > T::zero()) || c > l1 {
        return validation(format!("need 0 < c <= int f dmu = {l1} (got c = {c})"));
    }

    let four = T::lit(4.0);
    let c_low = c / (four * total_mass);
    let m = ceil_log2(T::lit(16.0) * l2sq / c);
    let ceiling = pow2::<T>(m);
    let indices: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| c_low < v && v < ceiling)
        .map(|(i, _)| i)
        .collect();
    let achieved_mass = kahan_sum(indices.iter().map(|&i| weights[i]));
    let integral_on_set = kahan_sum(indices.iter().map(|&i| weights[i] * values[i]));
    let delta = c / pow2::<T>(m + 1);
    let profile = profile_of(values, weights, c_low, m)?;

    GOOD_SET_CHECKS.fetch_add(1, Ordering::Relaxed);
    let half = c / T::lit(2.0);
    if integral_on_set < half {
        return Err(Error::Invariant(format!(
            "stage {stage}: integral over good set {integral_on_set} < c/2 = {half}"
        )));
    }
    if achieved_mass < delta {
        return Err(Error::Invariant(format!(
            "stage {stage}: good set mass {achieved_mass} < delta = {delta}"
        )));
    }
    Ok(GoodSet {
        stage,
        indices,
        c,
        c_low,
        m,
        delta,
        achieved_mass,
        integral_on_set,
        l1,
        l2sq,
        total_mass,
        profile,
    })
}

/// Nested good sets `G(1) ⊇ G(2) ⊇ ...` and the restricted measures `mu_j`.
/// Stage indices refer to atoms of the original measure.
#[derive(Clone, Debug, PartialEq)]
pub struct GoodSetChain<T> {
    pub params: KernelParams<T>,
    pub stages: Vec<GoodSet<T>>,
    /// `measures[j-1]` is `mu` restricted to `G(j)`.
    pub measures: Vec<AtomicMeasure<T>>,
    pub source_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub kept: usize,
    pub c: f64,
    pub c_low: f64,
    pub m: i32,
    pub delta: f64,
    pub achieved_mass: f64,
    pub l1: f64,
    pub l2sq: f64,
}

impl<T: Scalar> GoodSetChain<T> {
    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    /// Atoms of `G(j)`; stage 0 is every atom.
    pub fn stage_indices(&self, j: usize) -> Vec<usize> {
        if j == 0 {
            (0..self.source_len).collect()
        } else {
            self.stages[j - 1].indices.clone()
        }
    }

    /// `mu` weights zeroed outside `G(j)`.
    pub fn stage_weights(&self, mu: &AtomicMeasure<T>, j: usize) -> Vec<T> {
        if j == 0 {
            return mu.weights().to_vec();
        }
        let mut w = vec![T::zero(); mu.len()];
        for &i in &self.stages[j - 1].indices {
            w[i] = mu.weights()[i];
        }
        w
    }

    pub fn min_delta(&self) -> T {
        self.stages.iter().map(|s| s.delta).fold(T::infinity(), |a, b| a.min(b))
    }

    pub fn summary(&self) -> Vec<StageSummary> {
        self.stages
            .iter()
            .map(|s| StageSummary {
                stage: s.stage,
                kept: s.indices.len(),
                c: s.c.to_f64_lossy(),
                c_low: s.c_low.to_f64_lossy(),
                m: s.m,
                delta: s.delta.to_f64_lossy(),
                achieved_mass: s.achieved_mass.to_f64_lossy(),
                l1: s.l1.to_f64_lossy(),
                l2sq: s.l2sq.to_f64_lossy(),
            })
            .collect()
    }
}

/// Stage 1 is [`good_set`] on `sigma * mu` with `c = L1/2`. Stage `j+1` takes
/// `f = sigma * mu_j` on the atoms of `G(j)`, `c(j+1) = (int f dmu_j)/2`, and
/// selects the good set relative to `mu_j`.
pub fn nested_good_sets<T: Scalar>(
    mu: &AtomicMeasure<T>,
    params: &KernelParams<T>,
    depth: usize,
) -> Result<GoodSetChain<T>> {
    if depth == 0 {
        return validation("nested good sets need depth >= 1");
    }
    let conv = Convolver::new(mu);
    let mut stages: Vec<GoodSet<T>> = Vec::with_capacity(depth);
    let mut measures = Vec::with_capacity(depth);
    let mut domain: Vec<usize> = (0..mu.len()).collect();
    let mut source_weights = mu.weights().to_vec();

    for stage in 1..=depth {
        let values = conv.field_at(&source_weights, mu, &domain, params);
        let weights: Vec<T> = domain.iter().map(|&i| mu.weights()[i]).collect();
        let l1 = kahan_sum(values.iter().zip(&weights).map(|(&v, &w)| w * v));
        if !(l1 > T::zero()) {
            return Err(Error::StageFailure {
                stage,
                t: params.t.to_f64_lossy(),
                eps: params.eps.to_f64_lossy(),
                reason: "field vanishes on the current good set".into(),
            });
        }
        let mut gs = good_set_of(&values, &weights, l1 / T::lit(2.0), stage)?;
        gs.indices = gs.indices.iter().map(|&k| domain[k]).collect();
        domain = gs.indices.clone();
        let restricted = restrict_measure(mu, &domain).map_err(|_| Error::StageFailure {
            stage,
            t: params.t.to_f64_lossy(),
            eps: params.eps.to_f64_lossy(),
            reason: "good set is empty".into(),
        })?;
        source_weights = vec![T::zero(); mu.len()];
        for &i in &domain {
            source_weights[i] = mu.weights()[i];
        }
        measures.push(restricted);
        stages.push(gs);
    }
    Ok(GoodSetChain {
        params: *params,
        stages,
        measures,
        source_len: mu.len(),
    })
}
