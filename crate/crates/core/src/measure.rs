//! Finite atomic measures standing in for a compact set `E` with a measure on
//! it, the self-similar (IFS) construction that produces them, and an
//! empirical check of the ball-growth bound `mu(B(x, r)) <= C r^s`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::{dist, kahan_sum, Scalar};

/// Default cap on the number of atoms `build_ifs_measure` may produce.
pub const DEFAULT_ATOM_CAP: u128 = 1_000_000;

/// A contracting similarity `x -> ratio * x + translation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMap<T> {
    pub ratio: T,
    pub translation: Vec<T>,
}

/// Iterated function system of similarities, truncated at a finite depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IfsSpec<T> {
    #[serde(rename = "d")]
    pub dim: usize,
    pub maps: Vec<SimilarityMap<T>>,
    pub depth: u32,
    /// Per-map probabilities; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<T>>,
}

impl<T: Scalar> IfsSpec<T> {
    /// Product of two middle-gap Cantor sets in the plane: four maps of the
    /// given ratio anchored at the corners of the unit square.
    pub fn cantor_product(ratio: T, depth: u32) -> Self {
        let far = T::one() - ratio;
        let zero = T::zero();
        let maps = [[zero, zero], [far, zero], [zero, far], [far, far]]
            .into_iter()
            .map(|t| SimilarityMap {
                ratio,
                translation: t.to_vec(),
            })
            .collect();
        Self {
            dim: 2,
            maps,
            depth,
            probabilities: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return validation("IFS dimension must be at least 1");
        }
        if self.maps.is_empty() {
            return validation("IFS needs at least one map");
        }
        for (i, m) in self.maps.iter().enumerate() {
            if !(m.ratio > T::zero() && m.ratio < T::one()) {
                return validation(format!("map {i}: ratio {} not in (0,1)", m.ratio));
            }
            if m.translation.len() != self.dim {
                return validation(format!(
                    "map {i}: translation has {} coordinates, expected {}",
                    m.translation.len(),
                    self.dim
                ));
            }
            if m.translation.iter().any(|x| !x.is_finite()) {
                return validation(format!("map {i}: non-finite translation"));
            }
        }
        if let Some(p) = &self.probabilities {
            if p.len() != self.maps.len() {
                return validation(format!("{} probabilities for {} maps", p.len(), self.maps.len()));
            }
            if p.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
                return validation("probabilities must be finite and non-negative");
            }
            let total = kahan_sum(p.iter().copied());
            if (total - T::one()).abs() > T::mass_tol() {
                return validation(format!("probabilities sum to {total}, expected 1"));
            }
        }
        Ok(())
    }

    pub fn probabilities(&self) -> Vec<T> {
        match &self.probabilities {
            Some(p) => p.clone(),
            None => {
                let n = T::from_usize(self.maps.len()).unwrap();
                vec![T::one() / n; self.maps.len()]
            }
        }
    }

    /// The unique `s >= 0` with `sum_i ratio_i^s = 1`, by bisection.
    pub fn similarity_dimension(&self) -> f64 {
        let ratios: Vec<f64> = self.maps.iter().map(|m| m.ratio.to_f64_lossy()).collect();
        let g = |s: f64| ratios.iter().map(|r| r.powf(s)).sum::<f64>() - 1.0;
        if g(0.0) <= 0.0 {
            return 0.0;
        }
        let mut hi = 1.0;
        while g(hi) > 0.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `maps.len() ^ depth`, saturating.
    pub fn atom_count(&self) -> u128 {
        (self.maps.len() as u128).checked_pow(self.depth).unwrap_or(u128::MAX)
    }
}

/// Finite weighted point cloud in `R^d`.
///
/// Coordinates are stored flat, atom `i` occupying `coords[i*d..(i+1)*d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicMeasure<T> {
    dim: usize,
    coords: Vec<T>,
    weights: Vec<T>,
    total_mass: T,
    label: String,
}

impl<T: Scalar> AtomicMeasure<T> {
    pub fn new(dim: usize, atoms: &[Vec<T>], weights: Vec<T>, label: impl Into<String>) -> Result<Self> {
        if let Some((i, a)) = atoms.iter().enumerate().find(|(_, a)| a.len() != dim) {
            return validation(format!("atom {i} has {} coordinates, expected {dim}", a.len()));
        }
        let coords = atoms.iter().flatten().copied().collect();
        Self::from_flat(dim, coords, weights, label)
    }

    pub fn from_flat(dim: usize, coords: Vec<T>, weights: Vec<T>, label: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return validation("measure dimension must be at least 1");
        }
        if weights.is_empty() {
            return validation("measure needs at least one atom");
        }
        if coords.len() != dim * weights.len() {
            return validation(format!(
                "{} coordinates do not describe {} atoms in dimension {dim}",
                coords.len(),
                weights.len()
            ));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return validation("atom coordinates must be finite");
        }
        if let Some(i) = weights.iter().position(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return validation(format!("weight {i} is negative or non-finite"));
        }
        let total_mass = kahan_sum(weights.iter().copied());
        Ok(Self {
            dim,
            coords,
            weights,
            total_mass,
            label: label.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn total_mass(&self) -> T {
        self.total_mass
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Converts the scalar type through `f64`.
    pub fn cast<U: Scalar>(&self) -> AtomicMeasure<U> {
        let conv = |x: &T| U::lit(x.to_f64_lossy());
        AtomicMeasure::from_flat(
            self.dim,
            self.coords.iter().map(conv).collect(),
            self.weights.iter().map(conv).collect(),
            self.label.clone(),
        )
        .expect("casting a valid measure keeps it valid")
    }

    pub fn to_file(&self) -> MeasureFile {
        MeasureFile {
            d: self.dim,
            atoms: self
                .atoms()
                .map(|a| a.iter().map(|x| x.to_f64_lossy()).collect())
                .collect(),
            weights: self.weights.iter().map(|w| w.to_f64_lossy()).collect(),
            label: self.label.clone(),
        }
    }

    pub fn from_file(file: &MeasureFile) -> Result<Self> {
        if file.atoms.len() != file.weights.len() {
            return validation(format!(
                "measure file has {} atoms but {} weights",
                file.atoms.len(),
                file.weights.len()
            ));
        }
        let atoms: Vec<Vec<T>> = file
            .atoms
            .iter()
            .map(|a| a.iter().map(|&x| T::lit(x)).collect())
            .collect();
        let weights = file.weights.iter().map(|&w| T::lit(w)).collect();
        Self::new(file.d, &atoms, weights, file.label.clone())
    }
}

/// On-disk measure: `{"d", "atoms": [[..], ..], "weights": [..], "label"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureFile {
    pub d: usize,
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub label: String,
}

pub fn read_measure<T: Scalar>(path: impl AsRef<Path>) -> Result<AtomicMeasure<T>> {
    let text = std::fs::read_to_string(path)?;
    let file: MeasureFile = serde_json::from_str(&text)?;
    AtomicMeasure::from_file(&file)
}

pub fn write_measure<T: Scalar>(mu: &AtomicMeasure<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string(&mu.to_file())?)?;
    Ok(())
}

pub fn read_ifs_spec(path: impl AsRef<Path>) -> Result<IfsSpec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let spec: IfsSpec<f64> = serde_json::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}

/// One atom per depth-`L` word `i_1..i_L`, placed at `f_{i_1} o ... o f_{i_L}(0)`
/// with weight `p_{i_1} * ... * p_{i_L}`. Atoms are in lexicographic word order.
pub fn build_ifs_measure<T: Scalar>(spec: &IfsSpec<T>, cap: u128) -> Result<AtomicMeasure<T>> {
    spec.validate()?;
    let count = spec.atom_count();
    if count > cap {
        return Err(Error::Resource {
            what: "IFS atom count".into(),
            needed: count,
            cap,
        });
    }
    let d = spec.dim;
    let probs = spec.probabilities();
    let mut coords = vec![T::zero(); d];
    let mut weights = vec![T::one()];
    for _ in 0..spec.depth {
        let n = weights.len();
        let mut next_coords = Vec::with_capacity(coords.len() * spec.maps.len());
        let mut next_weights = Vec::with_capacity(n * spec.maps.len());
        for (map, &p) in spec.maps.iter().zip(&probs) {
            for (i, &w) in weights.iter().enumerate() {
                let x = &coords[i * d..(i + 1) * d];
                next_coords.extend(x.iter().zip(&map.translation).map(|(&xi, &ti)| map.ratio * xi + ti));
                next_weights.push(w * p);
            }
        }
        coords = next_coords;
        weights = next_weights;
    }
    let label = format!(
        "ifs[{} maps, depth {}, dim_sim {:.4}]",
        spec.maps.len(),
        spec.depth,
        spec.similarity_dimension()
    );
    AtomicMeasure::from_flat(d, coords, weights, label)
}

/// Mass of the closed ball `{x : |x - center| <= r}`.
pub fn ball_mass<T: Scalar>(mu: &AtomicMeasure<T>, center: &[T], r: T) -> Result<T> {
    if center.len() != mu.dim() {
        return validation(format!(
            "center has {} coordinates, measure lives in dimension {}",
            center.len(),
            mu.dim()
        ));
    }
    if center.iter().any(|x| !x.is_finite()) {
        return validation("ball center must be finite");
    }
    if !(r > T::zero()) || !r.is_finite() {
        return validation(format!("ball radius {r} must be positive and finite"));
    }
    Ok(kahan_sum(
        mu.atoms()
            .zip(mu.weights())
            .filter(|(a, _)| dist(a, center) <= r)
            .map(|(_, &w)| w),
    ))
}

/// Keeps the atoms at `keep` with their original weights (no renormalization).
/// Duplicate indices are ignored; atom order is preserved.
pub fn restrict_measure<T: Scalar>(mu: &AtomicMeasure<T>, keep: &[usize]) -> Result<AtomicMeasure<T>> {
    if keep.is_empty() {
        return Err(Error::EmptyRestriction(format!(
            "no atoms kept from measure '{}'",
            mu.label()
        )));
    }
    let mut idx = keep.to_vec();
    idx.sort_unstable();
    idx.dedup();
    if let Some(&bad) = idx.iter().find(|&&i| i >= mu.len()) {
        return validation(format!("restriction index {bad} out of range ({} atoms)", mu.len()));
    }
    let mut coords = Vec::with_capacity(idx.len() * mu.dim());
    let mut weights = Vec::with_capacity(idx.len());
    for &i in &idx {
        coords.extend_from_slice(mu.atom(i));
        weights.push(mu.weights()[i]);
    }
    AtomicMeasure::from_flat(mu.dim(), coords, weights, format!("{}|restricted", mu.label()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrostmanSample {
    pub center: usize,
    pub radius: f64,
    pub mass: f64,
}

/// Empirical ball-growth exponent and constant of a measure over a radius range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrostmanReport {
    pub s_hat: f64,
    pub c_hat: f64,
    pub samples: Vec<FrostmanSample>,
    pub radius_range: (f64, f64),
}

/// `count` radii `r_max, r_max/2, r_max/4, ...`.
pub fn dyadic_radii(r_max: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| r_max * 0.5f64.powi(i as i32)).collect()
}

/// Samples ball masses at `n_centers` atoms drawn without replacement by
/// `SplitMix64(seed)` and fits `log(mass) = s log(r) + b` by least squares.
/// `c_hat` is the smallest constant with `mass <= c_hat * r^s_hat` on every sample.
pub fn estimate_frostman<T: Scalar>(
    mu: &AtomicMeasure<T>,
    n_centers: usize,
    radii: &[f64],
    seed: u64,
) -> Result<FrostmanReport> {
    if n_centers == 0 || n_centers > mu.len() {
        return validation(format!("n_centers must be in 1..={} (got {n_centers})", mu.len()));
    }
    if radii.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return validation("radii must be positive and finite");
    }
    let mut distinct = radii.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 3 {
        return validation("need at least 3 distinct radii");
    }
    let (r_min, r_max) = (distinct[0], distinct[distinct.len() - 1]);
    if r_max < 4.0 * r_min {
        return validation("radii must span at least two octaves");
    }

    let centers = SplitMix64::new(seed).sample_distinct(mu.len(), n_centers);
    let mut samples = Vec::with_capacity(centers.len() * distinct.len());
    for &r in &distinct {
        let mut any_positive = false;
        for &c in &centers {
            let mass = ball_mass(mu, mu.atom(c), T::lit(r))?.to_f64_lossy();
            any_positive |= mass > 0.0;
            samples.push(FrostmanSample {
                center: c,
                radius: r,
                mass,
            });
        }
        if !any_positive {
            return Err(Error::DegenerateRange(format!(
                "every sampled ball of radius {r} is empty; try larger radii"
            )));
        }
    }

    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.mass > 0.0)
        .map(|s| (s.radius.ln(), s.mass.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let s_hat = sxy / sxx;
    let c_hat = samples
        .iter()
        .map(|s| s.mass / s.radius.powf(s_hat))
        .fold(0.0, f64::max);

    Ok(FrostmanReport {
        s_hat,
        c_hat,
        samples,
        radius_range: (r_min, r_max),
    })
}
