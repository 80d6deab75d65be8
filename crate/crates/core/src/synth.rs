//! Seeded synthetic "cortex" cohorts.
//!
//! Each subject is first drawn as a continuous thickness profile on `[0, 1]`:
//!
//! ```text
//! f(a) = m(a) + (age - 60) beta(a) + disease(a, age) + g(a)
//! ```
//!
//! where `g` is a zero-mean Gaussian process with squared-exponential kernel
//! `sigma^2 exp(-|a - b|^2 / l^2) + delta 1[a = b]`. The profile is held as a
//! step function on a fine grid (`resolution` cells), which is what lets the
//! same subject be re-sampled under atlases of different size: an `M`-region
//! atlas splits `[0, 1]` into `M` equal cells and each region value is the
//! exact average of the profile over its cell, plus independent
//! measurement noise.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg::cholesky;
use crate::rng;

pub const HEALTHY_GROUP: &str = "HC";
pub const DISEASE_GROUP: &str = "DIS";

/// Reference age at which `m(a)` is the expected profile.
pub const REFERENCE_AGE: f64 = 60.0;

/// `offset + amplitude * sin(2 pi frequency a + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothProfile {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl SmoothProfile {
    pub fn constant(value: f64) -> Self {
        Self { offset: value, amplitude: 0.0, frequency: 1.0, phase: 0.0 }
    }

    pub fn at(&self, a: f64) -> f64 {
        self.offset + self.amplitude * (2.0 * std::f64::consts::PI * self.frequency * a + self.phase).sin()
    }

    pub fn min(&self) -> f64 {
        self.offset - self.amplitude.abs()
    }

    pub fn max(&self) -> f64 {
        self.offset + self.amplitude.abs()
    }
}

/// Squared-exponential kernel with a nugget on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// `sigma^2` in mm^2.
    pub variance: f64,
    pub length_scale: f64,
    /// `delta`, added on the diagonal of the fine-grid kernel.
    pub nugget: f64,
}

impl KernelSpec {
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        let mut v = self.variance * (-(d * d) / (self.length_scale * self.length_scale)).exp();
        if a == b {
            v += self.nugget;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CortexSpec {
    pub kernel: KernelSpec,
    /// Mean thickness profile `m(a)` in mm at the reference age.
    pub baseline: SmoothProfile,
    /// Healthy aging slope `beta(a)` in mm/year (non-positive).
    pub aging_slope: SmoothProfile,
    /// Independent per-region measurement noise in mm.
    pub noise_sd: f64,
    /// Number of fine cells used to represent continuous profiles.
    pub resolution: usize,
}

impl Default for CortexSpec {
    fn default() -> Self {
        Self {
            kernel: KernelSpec { variance: 0.0009, length_scale: 0.15, nugget: 1e-7 },
            baseline: SmoothProfile { offset: 2.5, amplitude: 0.3, frequency: 1.0, phase: 0.0 },
            aging_slope: SmoothProfile { offset: -0.008, amplitude: 0.002, frequency: 2.0, phase: 0.5 },
            noise_sd: 0.035,
            resolution: 400,
        }
    }
}

impl CortexSpec {
    pub fn validate(&self) -> Result<()> {
        let k = &self.kernel;
        if !(k.variance >= 0.0 && k.length_scale > 0.0 && k.nugget >= 0.0) {
            return Err(Error::InvalidConfig("kernel needs variance >= 0, length_scale > 0, nugget >= 0".into()));
        }
        if self.baseline.min() < 1.0 || self.baseline.max() > 5.0 {
            return Err(Error::InvalidConfig("baseline thickness must stay within [1, 5] mm".into()));
        }
        if self.aging_slope.max() > 0.0 {
            return Err(Error::InvalidConfig("aging slope must be non-positive everywhere".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig("noise_sd must be finite and non-negative".into()));
        }
        if self.resolution < 2 {
            return Err(Error::InvalidConfig("resolution must be at least 2".into()));
        }
        Ok(())
    }

    fn fine_centers(&self) -> Vec<f64> {
        let g = self.resolution as f64;
        (0..self.resolution).map(|i| (i as f64 + 0.5) / g).collect()
    }

    /// Lower Cholesky factor of the fine-grid kernel.
    fn kernel_factor(&self) -> Result<Option<Array2<f64>>> {
        let centers = self.fine_centers();
        let g = centers.len();
        let k = Array2::from_shape_fn((g, g), |(i, j)| self.kernel.eval(centers[i], centers[j]));
        if k.iter().all(|&v| v == 0.0) {
            return Ok(None);
        }
        cholesky(k.view())
            .map(Some)
            .ok_or_else(|| Error::KernelError("fine-grid kernel is not positive definite; increase the nugget".into()))
    }
}

/// Accelerated atrophy localized to sub-intervals of the cortex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiseaseSpec {
    pub atrophy_regions: Vec<(f64, f64)>,
    /// Extra thickness loss in mm/year inside the regions (non-positive).
    pub excess_slope: f64,
    pub onset_age: f64,
}

impl Default for DiseaseSpec {
    /// Five contiguous cells of a 50-region atlas (`[0.3, 0.4]`), losing an
    /// extra 0.02 mm/year from age 55.
    fn default() -> Self {
        Self { atrophy_regions: vec![(0.3, 0.4)], excess_slope: -0.02, onset_age: 55.0 }
    }
}

impl DiseaseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.excess_slope > 0.0 {
            return Err(Error::InvalidConfig("excess slope must be non-positive".into()));
        }
        for &(lo, hi) in &self.atrophy_regions {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(Error::InvalidConfig(format!("atrophy interval [{lo}, {hi}] not within [0, 1]")));
            }
        }
        Ok(())
    }

    /// Indices of the `m`-atlas regions whose cells overlap an atrophy
    /// interval by more than half their width.
    pub fn affected_regions(&self, m: usize) -> Vec<usize> {
        (0..m)
            .filter(|&i| {
                let (lo, hi) = (i as f64 / m as f64, (i + 1) as f64 / m as f64);
                let cover: f64 = self.atrophy_regions.iter().map(|&(a, b)| overlap(lo, hi, a, b)).sum();
                cover > 0.5 * (hi - lo)
            })
            .collect()
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// A subject's continuous thickness profile (step function on the fine grid).
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub age: f64,
    pub values: Array1<f64>,
}

/// Draws `n` continuous subject profiles with ages uniform on `age_range`.
pub fn sample_profiles(
    spec: &CortexSpec,
    disease: Option<&DiseaseSpec>,
    n: usize,
    age_range: (f64, f64),
    seed: u64,
) -> Result<Vec<SubjectProfile>> {
    spec.validate()?;
    if let Some(d) = disease {
        d.validate()?;
    }
    if !(age_range.0 > 0.0 && age_range.0 <= age_range.1 && age_range.1.is_finite()) {
        return Err(Error::InvalidConfig(format!("invalid age range {age_range:?}")));
    }
    let factor = spec.kernel_factor()?;
    let centers = spec.fine_centers();
    let g = spec.resolution;
    let width = 1.0 / g as f64;
    let base = Array1::from_iter(centers.iter().map(|&a| spec.baseline.at(a)));
    let slope = Array1::from_iter(centers.iter().map(|&a| spec.aging_slope.at(a)));
    // fraction of each fine cell covered by the atrophy intervals
    let cover = Array1::from_iter((0..g).map(|i| {
        let (lo, hi) = (i as f64 * width, (i + 1) as f64 * width);
        disease.map_or(0.0, |d| d.atrophy_regions.iter().map(|&(a, b)| overlap(lo, hi, a, b)).sum::<f64>() / width)
    }));

    let mut r = rng::seeded(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let age = if age_range.0 == age_range.1 { age_range.0 } else { r.gen_range(age_range.0..age_range.1) };
        let mut values = &base + &(&slope * (age - REFERENCE_AGE));
        if let Some(d) = disease {
            let years = (age - d.onset_age).max(0.0);
            values.scaled_add(d.excess_slope * years, &cover);
        }
        if let Some(l) = &factor {
            let z = Array1::from_shape_simple_fn(g, || r.sample::<f64, _>(StandardNormal));
            values += &l.dot(&z);
        }
        out.push(SubjectProfile { age, values });
    }
    Ok(out)
}

/// Averaging weights mapping the fine grid onto `m` equal-width regions:
/// row `i` holds the fraction of region `i` covered by each fine cell.
pub fn atlas_weights(resolution: usize, m: usize) -> Array2<f64> {
    let mut w = Array2::zeros((m, resolution));
    let fine = 1.0 / resolution as f64;
    for i in 0..m {
        let (lo, hi) = (i as f64 / m as f64, (i + 1) as f64 / m as f64);
        let first = ((lo / fine).floor() as usize).min(resolution - 1);
        let last = ((hi / fine).ceil() as usize).min(resolution);
        for g in first..last {
            let o = overlap(lo, hi, g as f64 * fine, (g + 1) as f64 * fine);
            if o > 0.0 {
                w[[i, g]] = o / (hi - lo);
            }
        }
    }
    w
}

/// Samples profiles under an `m`-region atlas: cell averages plus
/// independent `noise_sd` measurement noise.
pub fn discretize(
    spec: &CortexSpec,
    profiles: &[SubjectProfile],
    m: usize,
    group: &str,
    seed: u64,
) -> Result<FeatureMatrix> {
    if m < 1 {
        return Err(Error::InvalidConfig("atlas needs at least one region".into()));
    }
    let w = atlas_weights(spec.resolution, m);
    let n = profiles.len();
    let mut features = Array2::zeros((n, m));
    let mut r = rng::seeded(seed);
    for (i, p) in profiles.iter().enumerate() {
        let mut row = w.dot(&p.values);
        if spec.noise_sd > 0.0 {
            row.mapv_inplace(|v| v + spec.noise_sd * r.sample::<f64, _>(StandardNormal));
        }
        features.row_mut(i).assign(&row);
    }
    FeatureMatrix::new(
        (0..n).map(|i| format!("{group}-{i:04}")).collect(),
        profiles.iter().map(|p| p.age).collect(),
        vec![group.to_string(); n],
        region_ids(m),
        features,
    )
}

/// Region identifiers for an `m`-region synthetic atlas, ordered by cortex
/// coordinate.
pub fn region_ids(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("{i:04}")).collect()
}

/// Draws a cohort of `n` subjects under an `m`-region atlas. Subjects with a
/// disease spec are labelled [`DISEASE_GROUP`], otherwise [`HEALTHY_GROUP`].
pub fn sample_cohort(
    spec: &CortexSpec,
    disease: Option<&DiseaseSpec>,
    m: usize,
    n: usize,
    age_range: (f64, f64),
    seed: u64,
) -> Result<FeatureMatrix> {
    if m < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 regions, got {m}")));
    }
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let profiles = sample_profiles(spec, disease, n, age_range, rng::derive_seed(seed, &[0]))?;
    let group = if disease.is_some() { DISEASE_GROUP } else { HEALTHY_GROUP };
    discretize(spec, &profiles, m, group, rng::derive_seed(seed, &[1, m as u64]))
}

/// The ensemble covariance of region values under an `m`-region atlas for a
/// fixed age: `W K W^T + noise_sd^2 I`.
pub fn ensemble_covariance(spec: &CortexSpec, m: usize) -> Array2<f64> {
    let centers = spec.fine_centers();
    let g = centers.len();
    let k = Array2::from_shape_fn((g, g), |(i, j)| spec.kernel.eval(centers[i], centers[j]));
    let w = atlas_weights(spec.resolution, m);
    let mut c = w.dot(&k).dot(&w.t());
    for i in 0..m {
        c[[i, i]] += spec.noise_sd * spec.noise_sd;
    }
    c
}

/// Healthy training cohort, healthy test cohort and disease test cohort
/// sizes for the standard synthetic protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortDesign {
    pub regions: usize,
    pub n_train: usize,
    pub n_test_healthy: usize,
    pub n_test_disease: usize,
    pub age_range: (f64, f64),
}

impl Default for CohortDesign {
    fn default() -> Self {
        Self { regions: 50, n_train: 500, n_test_healthy: 100, n_test_disease: 100, age_range: (50.0, 90.0) }
    }
}

/// Training cohort plus the combined healthy + disease test cohort.
pub fn sample_design(
    spec: &CortexSpec,
    disease: &DiseaseSpec,
    design: &CohortDesign,
    seed: u64,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let m = design.regions;
    let train = sample_cohort(spec, None, m, design.n_train, design.age_range, rng::derive_seed(seed, &[10]))?;
    let hc = sample_cohort(spec, None, m, design.n_test_healthy, design.age_range, rng::derive_seed(seed, &[11]))?;
    let dis =
        sample_cohort(spec, Some(disease), m, design.n_test_disease, design.age_range, rng::derive_seed(seed, &[12]))?;
    let train = relabel(&train, "TRAIN");
    Ok((train, hc.concat(&dis)?))
}

fn relabel(data: &FeatureMatrix, prefix: &str) -> FeatureMatrix {
    let ids = data.subject_ids().iter().map(|s| format!("{prefix}-{s}")).collect();
    FeatureMatrix::new(
        ids,
        data.ages().to_vec(),
        data.groups().to_vec(),
        data.region_ids().to_vec(),
        data.features().clone(),
    )
    .expect("relabeling keeps a valid matrix")
}
