//! The thickened sphere kernel `sigma_t^eps` and fields `sigma_t^eps * mu`.
//!
//! `sigma_t^eps(x) = 1/(2 eps)` on the closed annulus `t - eps <= |x| <= t + eps`
//! and zero elsewhere, so `(2 eps)^k` times a configuration integral over `k`
//! edges is exactly the product-measure mass of the `eps`-thickened
//! configuration set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::measure::AtomicMeasure;
use crate::scalar::{dist, kahan_sum, KahanSum, Scalar};
use crate::spatial::AnnulusIndex;

/// Gap length `t` and thickening `eps`, with `0 < eps < t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    pub t: T,
    pub eps: T,
}

impl<T: Scalar> KernelParams<T> {
    pub fn new(t: T, eps: T) -> Result<Self> {
        if !t.is_finite() || !eps.is_finite() || !(eps > T::zero()) || !(eps < t) {
            return validation(format!("kernel needs 0 < eps < t (got t={t}, eps={eps})"));
        }
        Ok(Self { t, eps })
    }

    /// Height of the kernel on its support, `1/(2 eps)`.
    #[inline]
    pub fn height(&self) -> T {
        T::one() / (self.eps + self.eps)
    }

    #[inline]
    pub fn inner(&self) -> T {
        self.t - self.eps
    }

    #[inline]
    pub fn outer(&self) -> T {
        self.t + self.eps
    }

    /// Whether a distance lies in the closed band `[t - eps, t + eps]`.
    #[inline]
    pub fn accepts(&self, r: T) -> bool {
        self.inner() <= r && r <= self.outer()
    }

    pub fn to_f64(&self) -> KernelParams<f64> {
        KernelParams {
            t: self.t.to_f64_lossy(),
            eps: self.eps.to_f64_lossy(),
        }
    }
}

/// `sigma_t^eps(x)`.
#[inline]
pub fn kernel_weight<T: Scalar>(x: &[T], params: &KernelParams<T>) -> T {
    let r = x.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
    if params.accepts(r) {
        params.height()
    } else {
        T::zero()
    }
}

/// `sigma_t^eps(a - b)` without materializing the difference.
#[inline]
pub fn kernel_between<T: Scalar>(a: &[T], b: &[T], params: &KernelParams<T>) -> T {
    if params.accepts(dist(a, b)) {
        params.height()
    } else {
        T::zero()
    }
}

/// Field values aligned with the points they were sampled at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldValues<T> {
    pub values: Vec<T>,
    pub params: KernelParams<T>,
    pub source_label: String,
    pub sample_label: String,
}

/// Spatial index over a measure's atoms for repeated convolutions against
/// re-weighted copies of that measure.
#[derive(Clone, Debug)]
pub struct Convolver<'a, T> {
    source: &'a AtomicMeasure<T>,
    index: AnnulusIndex<T>,
}

impl<'a, T: Scalar> Convolver<'a, T> {
    pub fn new(source: &'a AtomicMeasure<T>) -> Self {
        Self {
            source,
            index: AnnulusIndex::new(source.dim(), source.coords()),
        }
    }

    pub fn source(&self) -> &'a AtomicMeasure<T> {
        self.source
    }

    /// Source atoms at distance in `[t - eps, t + eps]` from `q`, ascending.
    pub fn neighbours(&self, q: &[T], params: &KernelParams<T>) -> Vec<usize> {
        self.index
            .annulus(q, params.inner(), params.outer(), self.source.coords())
    }

    /// `sum_a weights[a] * sigma(q - x_a)`, accumulated in ascending atom order.
    pub fn eval(&self, q: &[T], weights: &[T], params: &KernelParams<T>) -> T {
        let mut acc = KahanSum::new();
        for a in self.index.annulus_candidates(q, params.inner(), params.outer()) {
            let w = weights[a];
            if w != T::zero() {
                let k = kernel_between(q, self.source.atom(a), params);
                if k != T::zero() {
                    acc.add(w * k);
                }
            }
        }
        acc.value()
    }

    /// Field of the source re-weighted by `weights` (same length as the
    /// source), sampled at atoms `at` of `target`.
    pub fn field_at(&self, weights: &[T], target: &AtomicMeasure<T>, at: &[usize], params: &KernelParams<T>) -> Vec<T> {
        assert_eq!(weights.len(), self.source.len(), "weights must align with source atoms");
        at.par_iter()
            .map(|&i| self.eval(target.atom(i), weights, params))
            .collect()
    }
}

/// `sigma_t^eps * source` evaluated at each query point.
pub fn convolve_field<T: Scalar>(
    source: &AtomicMeasure<T>,
    queries: &[Vec<T>],
    params: &KernelParams<T>,
) -> Result<FieldValues<T>> {
    if let Some((i, q)) = queries.iter().enumerate().find(|(_, q)| q.len() != source.dim()) {
        return validation(format!(
            "query {i} has {} coordinates, source lives in dimension {}",
            q.len(),
            source.dim()
        ));
    }
    let conv = Convolver::new(source);
    let values = queries
        .par_iter()
        .map(|q| conv.eval(q, source.weights(), params))
        .collect();
    Ok(FieldValues {
        values,
        params: *params,
        source_label: source.label().to_string(),
        sample_label: "queries".into(),
    })
}

/// `sigma_t^eps * source` at every atom of `sample`.
pub fn convolve_at_atoms<T: Scalar>(
    source: &AtomicMeasure<T>,
    sample: &AtomicMeasure<T>,
    params: &KernelParams<T>,
) -> Result<FieldValues<T>> {
    if source.dim() != sample.dim() {
        return validation(format!(
            "source dimension {} != sample dimension {}",
            source.dim(),
            sample.dim()
        ));
    }
    let conv = Convolver::new(source);
    let all: Vec<usize> = (0..sample.len()).collect();
    Ok(FieldValues {
        values: conv.field_at(source.weights(), sample, &all, params),
        params: *params,
        source_label: source.label().to_string(),
        sample_label: sample.label().to_string(),
    })
}

/// `(int f dmu, int f^2 dmu)` for a field sampled at the atoms of `mu`.
pub fn field_norms<T: Scalar>(f: &FieldValues<T>, weights: &[T]) -> Result<(T, T)> {
    if f.values.len() != weights.len() {
        return validation(format!("{} field values but {} weights", f.values.len(), weights.len()));
    }
    let l1 = kahan_sum(f.values.iter().zip(weights).map(|(&v, &w)| w * v));
    let l2sq = kahan_sum(f.values.iter().zip(weights).map(|(&v, &w)| w * v * v));
    Ok((l1, l2sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_ifs_measure, IfsSpec, DEFAULT_ATOM_CAP};
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn params(t: f64, eps: f64) -> KernelParams<f64> {
        KernelParams::new(t, eps).unwrap()
    }

    // independent O(n q) oracle
    fn naive(source: &AtomicMeasure<f64>, queries: &[Vec<f64>], p: &KernelParams<f64>) -> Vec<f64> {
        queries
            .iter()
            .map(|q| {
                let mut s = 0.0;
                for (a, &w) in source.atoms().zip(source.weights()) {
                    let r = a.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    if p.t - p.eps <= r && r <= p.t + p.eps {
                        s += w / (2.0 * p.eps);
                    }
                }
                s
            })
            .collect()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn parameter_validation() {
        assert!(KernelParams::new(1.0, 0.0).is_err());
        assert!(KernelParams::new(1.0, 1.0).is_err());
        assert!(KernelParams::new(-1.0, 0.5).is_err());
        assert!(KernelParams::new(1.0, f64::NAN).is_err());
        assert!(KernelParams::new(1.0, 0.5).is_ok());
    }

    #[test]
    fn kernel_weight_examples() {
        let p = params(1.0, 0.125);
        assert_eq!(kernel_weight(&[1.0, 0.0], &p), 4.0);
        assert_eq!(kernel_weight(&[1.25, 0.0], &p), 0.0);
        assert_eq!(kernel_weight(&[0.0, 0.875], &p), 4.0);
        assert_eq!(kernel_weight(&[0.0, 1.125], &p), 4.0);
        assert_eq!(kernel_weight(&[0.0, 0.0], &p), 0.0);
    }

    #[test]
    fn convolve_examples() {
        let p = params(1.0, 0.1);
        let one = AtomicMeasure::new(2, &[vec![0.0, 0.0]], vec![1.0], "one").unwrap();
        let f = convolve_field(&one, &[vec![0.0, 1.0]], &p).unwrap();
        assert!(close(f.values[0], 1.0 / 0.2, 1e-15));

        let two = AtomicMeasure::new(1, &[vec![1.0], vec![3.0]], vec![0.5, 0.5], "two").unwrap();
        let f = convolve_field(&two, &[vec![0.0]], &p).unwrap();
        assert!(close(f.values[0], 1.0 / (4.0 * 0.1), 1e-15));

        assert!(convolve_field(&two, &[vec![0.0, 0.0]], &p).is_err());
    }

    #[test]
    fn cantor_field_matches_naive_loop() {
        let mu = build_ifs_measure(&IfsSpec::cantor_product(0.3, 5), DEFAULT_ATOM_CAP).unwrap();
        let mut rng = SplitMix64::new(5);
        let queries: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.next_f64(), rng.next_f64()]).collect();
        for (t, eps) in [(0.5, 0.02), (0.3, 0.05), (0.9, 0.01)] {
            let p = params(t, eps);
            let fast = convolve_field(&mu, &queries, &p).unwrap();
            let slow = naive(&mu, &queries, &p);
            for (a, b) in fast.values.iter().zip(&slow) {
                assert!(close(*a, *b, 1e-12), "{a} vs {b}");
            }
            // norms against the naive field on the atoms themselves
            let at_atoms = convolve_at_atoms(&mu, &mu, &p).unwrap();
            let atoms: Vec<Vec<f64>> = mu.atoms().map(|a| a.to_vec()).collect();
            let slow = naive(&mu, &atoms, &p);
            let (l1, l2) = field_norms(&at_atoms, mu.weights()).unwrap();
            let l1_naive: f64 = slow.iter().zip(mu.weights()).map(|(f, w)| f * w).sum();
            let l2_naive: f64 = slow.iter().zip(mu.weights()).map(|(f, w)| f * f * w).sum();
            assert!(close(l1, l1_naive, 1e-12));
            assert!(close(l2, l2_naive, 1e-12));
        }
    }

    #[test]
    fn norm_examples() {
        let p = params(1.0, 0.5);
        let ones = FieldValues {
            values: vec![1.0; 4],
            params: p,
            source_label: String::new(),
            sample_label: String::new(),
        };
        assert_eq!(field_norms(&ones, &[0.25; 4]).unwrap(), (1.0, 1.0));
        let f = FieldValues {
            values: vec![2.0, 0.0],
            ..ones.clone()
        };
        assert_eq!(field_norms(&f, &[0.5, 0.5]).unwrap(), (1.0, 2.0));
        assert!(field_norms(&f, &[1.0]).is_err());
    }

    #[test]
    fn f32_field_tracks_f64() {
        let mu = build_ifs_measure(&IfsSpec::cantor_product(0.3, 4), DEFAULT_ATOM_CAP).unwrap();
        let mu32: AtomicMeasure<f32> = mu.cast();
        let p = params(0.5, 0.05);
        let p32 = KernelParams::new(0.5f32, 0.05f32).unwrap();
        let f64s = convolve_at_atoms(&mu, &mu, &p).unwrap();
        let f32s = convolve_at_atoms(&mu32, &mu32, &p32).unwrap();
        let (l1, _) = field_norms(&f64s, mu.weights()).unwrap();
        let (l1_32, _) = field_norms(&f32s, mu32.weights()).unwrap();
        // boundary hits may flip under rounding; the integrated mass barely moves
        assert!((l1 - l1_32 as f64).abs() <= 0.05 * l1);
    }

    fn arb_instance() -> impl Strategy<Value = (AtomicMeasure<f64>, f64, f64)> {
        (1usize..200, 0.05f64..0.9, 0.01f64..0.45).prop_flat_map(|(n, t, frac)| {
            (
                proptest::collection::vec(0.0f64..1.0, 2 * n),
                proptest::collection::vec(0.0f64..1.0, n),
            )
                .prop_map(move |(c, w)| (AtomicMeasure::from_flat(2, c, w, "r").unwrap(), t, t * frac))
        })
    }

    proptest! {
        #[test]
        fn kernel_scaled_is_indicator(x in -2.0f64..2.0, y in -2.0f64..2.0, t in 0.1f64..1.5, frac in 0.01f64..0.99) {
            let p = params(t, t * frac);
            let v = kernel_weight(&[x, y], &p) * (2.0 * p.eps);
            // one rounding in 1/(2 eps)
            prop_assert!(v == 0.0 || (v - 1.0).abs() <= f64::EPSILON);
        }

        #[test]
        fn indexed_equals_naive((mu, t, eps) in arb_instance()) {
            let p = params(t, eps);
            let atoms: Vec<Vec<f64>> = mu.atoms().map(|a| a.to_vec()).collect();
            let fast = convolve_field(&mu, &atoms, &p).unwrap();
            let slow = naive(&mu, &atoms, &p);
            for (a, b) in fast.values.iter().zip(&slow) {
                prop_assert!(close(*a, *b, 1e-12));
                prop_assert!(*a >= 0.0 && a.is_finite());
            }
            let (l1, l2) = field_norms(&fast, mu.weights()).unwrap();
            prop_assert!(l1 <= (l2 * mu.total_mass()).sqrt() * (1.0 + 1e-12));
        }

        #[test]
        fn positivity_grows_with_eps((mu, t, eps) in arb_instance()) {
            let narrow = params(t, eps / 2.0);
            let wide = params(t, eps);
            let atoms: Vec<Vec<f64>> = mu.atoms().map(|a| a.to_vec()).collect();
            let a = convolve_field(&mu, &atoms, &narrow).unwrap();
            let b = convolve_field(&mu, &atoms, &wide).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                // compare positivity, weights may be zero
                let xa = *x > 0.0;
                prop_assert!(!xa || *y > 0.0);
            }
        }
    }
}
