//! Cohort feature tables and the anatomical covariance graph built from them.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{eigendecompose, max_abs, SymmetricOperator};
use crate::rng;

/// Eigenvalues above `-PSD_REL_TOL * phi_1` are treated as round-off and
/// clamped to zero.
pub const PSD_REL_TOL: f64 = 1e-8;

/// Subjects x regions table of anatomical features with ages and group labels.
///
/// Rows are graph signals. Construction checks finiteness, positive ages and
/// unique region identifiers; the `n >= 2` requirement is enforced by the
/// operations that need it (covariance estimation, training, CSV import).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    subject_ids: Vec<String>,
    ages: Vec<f64>,
    groups: Vec<String>,
    region_ids: Vec<String>,
    features: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(
        subject_ids: Vec<String>,
        ages: Vec<f64>,
        groups: Vec<String>,
        region_ids: Vec<String>,
        features: Array2<f64>,
    ) -> Result<Self> {
        let (n, m) = features.dim();
        if subject_ids.len() != n || ages.len() != n || groups.len() != n {
            return Err(Error::InvalidData(format!(
                "row count mismatch: {n} feature rows, {} ids, {} ages, {} groups",
                subject_ids.len(),
                ages.len(),
                groups.len()
            )));
        }
        if region_ids.len() != m {
            return Err(Error::InvalidData(format!("{m} feature columns but {} region ids", region_ids.len())));
        }
        if m == 0 {
            return Err(Error::InvalidData("no regions".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = region_ids.iter().find(|r| !seen.insert(r.as_str())) {
            return Err(Error::InvalidData(format!("duplicate region id {dup:?}")));
        }
        if let Some(a) = ages.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::InvalidData(format!("age must be finite and positive, got {a}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite feature value".into()));
        }
        Ok(Self { subject_ids, ages, groups, region_ids, features })
    }

    pub fn n_subjects(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_regions(&self) -> usize {
        self.features.ncols()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    /// Rows selected by `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            subject_ids: indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            ages: indices.iter().map(|&i| self.ages[i]).collect(),
            groups: indices.iter().map(|&i| self.groups[i].clone()).collect(),
            region_ids: self.region_ids.clone(),
            features: self.features.select(Axis(0), indices),
        }
    }

    /// Row-wise concatenation of two cohorts over the same regions.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.region_ids != other.region_ids {
            return Err(Error::InvalidData("cohorts have different region ids".into()));
        }
        let features =
            ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()]).expect("column counts match");
        Ok(Self {
            subject_ids: self.subject_ids.iter().chain(&other.subject_ids).cloned().collect(),
            ages: self.ages.iter().chain(&other.ages).copied().collect(),
            groups: self.groups.iter().chain(&other.groups).cloned().collect(),
            region_ids: self.region_ids.clone(),
            features,
        })
    }

    /// Indices of subjects whose group label equals `group`.
    pub fn indices_of_group(&self, group: &str) -> Vec<usize> {
        (0..self.n_subjects()).filter(|&i| self.groups[i] == group).collect()
    }

    pub(crate) fn with_features(&self, features: Array2<f64>) -> Self {
        Self { features, ..self.clone() }
    }
}

/// Per-region mean and standard deviation used for optional feature
/// z-scoring. Fitted on a training cohort and reused unchanged on new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &FeatureMatrix) -> Result<Self> {
        let n = data.n_subjects();
        if n < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: n });
        }
        let x = data.features();
        let mean = x.mean_axis(Axis(0)).expect("n >= 2");
        let sd: Vec<f64> = x.std_axis(Axis(0), 1.0).to_vec();
        if let Some(j) = sd.iter().position(|&s| s <= 0.0) {
            return Err(Error::DegenerateCovariance(format!("region {} has zero variance", data.region_ids()[j])));
        }
        Ok(Self { mean: mean.to_vec(), sd })
    }

    pub fn apply(&self, data: &FeatureMatrix) -> Result<FeatureMatrix> {
        check_dim(self.mean.len(), data.n_regions())?;
        let mut x = data.features().clone();
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.sd[j];
            }
        }
        Ok(data.with_features(x))
    }
}

/// Symmetric PSD covariance matrix with its cached eigendecomposition.
///
/// `scale` records the cumulative spectral normalization applied: the stored
/// matrix equals the original estimate divided by `scale`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceGraph {
    operator: SymmetricOperator,
    n_samples: usize,
    scale: f64,
}

impl CovarianceGraph {
    /// Wraps a symmetric matrix, eigendecomposing it and clamping round-off
    /// negative eigenvalues. Fails if the matrix is genuinely indefinite.
    pub fn from_matrix(matrix: Array2<f64>, n_samples: usize) -> Result<Self> {
        let op = eigendecompose(matrix.view())?;
        let op = clamp_psd(op)?;
        Ok(Self { operator: op, n_samples, scale: 1.0 })
    }

    /// Like [`Self::from_matrix`] but accepts indefinite matrices (used for
    /// thresholded covariances, which need not stay PSD).
    pub fn from_symmetric(matrix: Array2<f64>, n_samples: usize, scale: f64) -> Result<Self> {
        let op = eigendecompose(matrix.view())?;
        Ok(Self { operator: op, n_samples, scale })
    }

    pub fn operator(&self) -> &SymmetricOperator {
        &self.operator
    }

    pub fn matrix(&self) -> &Array2<f64> {
        self.operator.entries()
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn eigvals(&self) -> &Array1<f64> {
        self.operator.eigvals()
    }

    pub fn eigvecs(&self) -> &Array2<f64> {
        self.operator.eigvecs()
    }

    /// Dimension plus SHA-256 of the matrix entries (row-major little-endian
    /// f64 bytes), used to tie a saved model to the covariance it was
    /// trained on.
    pub fn fingerprint(&self) -> CovarianceFingerprint {
        let mut hasher = Sha256::new();
        for v in self.matrix().iter() {
            hasher.update(v.to_le_bytes());
        }
        CovarianceFingerprint { dim: self.dim(), sha256: hex::encode(hasher.finalize()) }
    }
}

/// Serialized covariance graph. The decomposition is stored alongside the
/// matrix so a reloaded graph is bit-identical to the saved one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceDocument {
    pub region_ids: Vec<String>,
    pub n_samples: usize,
    pub scale: f64,
    pub matrix: Vec<Vec<f64>>,
    pub eigvals: Vec<f64>,
    /// Row-major; column `i` is the eigenvector of `eigvals[i]`.
    pub eigvecs: Vec<Vec<f64>>,
}

impl CovarianceGraph {
    pub fn to_document(&self, region_ids: &[String]) -> Result<CovarianceDocument> {
        check_dim(self.dim(), region_ids.len())?;
        let rows = |a: &Array2<f64>| a.rows().into_iter().map(|r| r.to_vec()).collect();
        Ok(CovarianceDocument {
            region_ids: region_ids.to_vec(),
            n_samples: self.n_samples,
            scale: self.scale,
            matrix: rows(self.matrix()),
            eigvals: self.eigvals().to_vec(),
            eigvecs: rows(self.eigvecs()),
        })
    }

    /// Rebuilds the graph, checking shapes, symmetry, orthonormality and
    /// reconstruction of the stored decomposition.
    pub fn from_document(doc: &CovarianceDocument) -> Result<Self> {
        let m = doc.region_ids.len();
        let square = |rows: &Vec<Vec<f64>>, what: &str| -> Result<Array2<f64>> {
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(Error::InvalidMatrix(format!("{what} must be {m} x {m}")));
            }
            let a = Array2::from_shape_vec((m, m), rows.concat()).expect("shape checked");
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMatrix(format!("{what} has non-finite entries")));
            }
            Ok(a)
        };
        let matrix = square(&doc.matrix, "matrix")?;
        let vecs = square(&doc.eigvecs, "eigvecs")?;
        check_dim(m, doc.eigvals.len())?;
        let vals = Array1::from(doc.eigvals.clone());
        if m == 0 || vals.iter().any(|v| !v.is_finite()) || !(doc.scale.is_finite() && doc.scale > 0.0) {
            return Err(Error::InvalidMatrix("empty matrix or invalid spectrum/scale".into()));
        }
        if matrix != matrix.t() {
            return Err(Error::InvalidMatrix("matrix is not symmetric".into()));
        }
        let gram = vecs.t().dot(&vecs) - Array2::<f64>::eye(m);
        let recon = (&vecs * &vals).dot(&vecs.t()) - &matrix;
        let top = max_abs(matrix.view());
        if max_abs(gram.view()) > 1e-10 || max_abs(recon.view()) > 1e-8 * top.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidMatrix("stored eigendecomposition does not match the matrix".into()));
        }
        let op = SymmetricOperator::from_parts_unchecked(matrix, vecs, vals);
        Ok(Self { operator: op, n_samples: doc.n_samples, scale: doc.scale })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovarianceFingerprint {
    pub dim: usize,
    pub sha256: String,
}

fn clamp_psd(op: SymmetricOperator) -> Result<SymmetricOperator> {
    let top = op.eigvals()[0].max(0.0);
    let floor = -PSD_REL_TOL * top;
    if let Some(bad) = op.eigvals().iter().find(|&&v| v < floor) {
        return Err(Error::DegenerateCovariance(format!(
            "matrix is not positive semidefinite (eigenvalue {bad:.3e}, largest {top:.3e})"
        )));
    }
    let vals = op.eigvals().mapv(|v| v.max(0.0));
    Ok(SymmetricOperator::from_parts_unchecked(op.entries().clone(), op.eigvecs().clone(), vals))
}

/// Unbiased sample covariance of the rows of `x`.
pub fn covariance_of_rows(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &x - &mean;
    let mut c = centered.t().dot(&centered) / (n as f64 - 1.0);
    let m = c.nrows();
    for i in 0..m {
        for j in (i + 1)..m {
            let v = 0.5 * (c[[i, j]] + c[[j, i]]);
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    Ok(c)
}

/// `C_n = 1/(n-1) sum_i (x_i - mean)(x_i - mean)^T` over the subjects of `data`.
pub fn sample_covariance(data: &FeatureMatrix) -> Result<CovarianceGraph> {
    let n = data.n_subjects();
    let c = covariance_of_rows(data.features().view())?;
    CovarianceGraph::from_matrix(c, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Hard,
    Soft,
}

/// Thresholds the off-diagonal covariance entries.
///
/// Hard: entries with `|c| <= tau` become zero. Soft: every entry becomes
/// `sign(c) * max(|c| - tau, 0)`. The diagonal is left alone. The result may
/// be indefinite; it is re-eigendecomposed without PSD clamping.
pub fn sparsify(cov: &CovarianceGraph, mode: ThresholdMode, tau: f64) -> Result<CovarianceGraph> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidThreshold(tau));
    }
    if tau == 0.0 {
        return Ok(cov.clone());
    }
    let mut c = cov.matrix().clone();
    let m = c.nrows();
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let v = c[[i, j]];
            c[[i, j]] = match mode {
                ThresholdMode::Hard => {
                    if v.abs() <= tau {
                        0.0
                    } else {
                        v
                    }
                }
                ThresholdMode::Soft => v.signum() * (v.abs() - tau).max(0.0),
            };
        }
    }
    CovarianceGraph::from_symmetric(c, cov.n_samples(), cov.scale())
}

/// Divides the covariance by its spectral radius (the largest eigenvalue for
/// a PSD matrix) so the spectrum lies in `[-1, 1]`. Eigenvectors are reused
/// unchanged; `scale` accumulates the divisor.
pub fn normalize_spectrum(cov: &CovarianceGraph) -> Result<CovarianceGraph> {
    let radius = cov.operator().spectral_radius();
    if !(radius > 0.0) {
        return Err(Error::DegenerateCovariance("zero matrix cannot be normalized".into()));
    }
    let entries = cov.matrix() / radius;
    let vals = cov.eigvals() / radius;
    let op = SymmetricOperator::from_parts_unchecked(entries, cov.eigvecs().clone(), vals);
    Ok(CovarianceGraph { operator: op, n_samples: cov.n_samples(), scale: cov.scale() * radius })
}

/// Indices of a seeded uniform draw of `keep` subjects out of `n`, without
/// replacement, returned in ascending order.
pub fn subsample_indices(n: usize, keep: usize, seed: u64) -> Result<Vec<usize>> {
    if keep < 2 || keep > n {
        return Err(Error::InvalidSubsample { keep, n });
    }
    let mut r = rng::seeded(seed);
    let mut idx = rand::seq::index::sample(&mut r, n, keep).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Covariance of a seeded random subset of `keep` subjects.
pub fn perturb_by_subsampling(data: &FeatureMatrix, keep: usize, seed: u64) -> Result<CovarianceGraph> {
    let idx = subsample_indices(data.n_subjects(), keep, seed)?;
    sample_covariance(&data.select(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn cohort(features: Array2<f64>) -> FeatureMatrix {
        let (n, m) = features.dim();
        FeatureMatrix::new(
            (0..n).map(|i| format!("s{i:03}")).collect(),
            (0..n).map(|i| 50.0 + i as f64).collect(),
            vec!["HC".to_string(); n],
            (0..m).map(|j| format!("{j}")).collect(),
            features,
        )
        .unwrap()
    }

    #[test]
    fn two_sample_covariance() {
        let c = sample_covariance(&cohort(array![[0.0, 0.0], [2.0, 2.0]])).unwrap();
        assert_eq!(c.matrix(), &array![[2.0, 2.0], [2.0, 2.0]]);
        assert_eq!(c.scale(), 1.0);
        assert_eq!(c.n_samples(), 2);
    }

    #[test]
    fn identical_rows_give_zero() {
        let x = Array2::from_shape_fn((5, 3), |(_, j)| j as f64 + 0.5);
        let c = sample_covariance(&cohort(x)).unwrap();
        assert!(c.matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn monte_carlo_diagonal_covariance() {
        let n = 10_000;
        let mut r = rng::seeded(11);
        let x = Array2::from_shape_fn((n, 2), |(_, j)| {
            let z: f64 = r.sample(StandardNormal);
            if j == 0 {
                z
            } else {
                2.0 * z
            }
        });
        let c = sample_covariance(&cohort(x)).unwrap();
        // var of the sample covariance entry (i,j) for Gaussian data is
        // (C_ii C_jj + C_ij^2) / n.
        let truth = array![[1.0, 0.0], [0.0, 4.0]];
        for i in 0..2 {
            for j in 0..2 {
                let var = (truth[[i, i]] * truth[[j, j]] + truth[[i, j]] * truth[[i, j]]) / n as f64;
                assert!((c.matrix()[[i, j]] - truth[[i, j]]).abs() < 5.0 * var.sqrt());
            }
        }
    }

    #[test]
    fn insufficient_samples() {
        let one = cohort(array![[1.0, 2.0]]);
        assert!(matches!(sample_covariance(&one), Err(Error::InsufficientSamples { needed: 2, got: 1 })));
    }

    fn small_cov() -> CovarianceGraph {
        CovarianceGraph::from_symmetric(array![[1.0, 0.25, -0.05], [0.25, 1.0, 0.5], [-0.05, 0.5, 1.0]], 10, 1.0)
            .unwrap()
    }

    #[test]
    fn sparsify_examples() {
        let c = small_cov();
        let same = sparsify(&c, ThresholdMode::Hard, 0.0).unwrap();
        assert_eq!(same.matrix(), c.matrix());
        let diag = sparsify(&c, ThresholdMode::Hard, 0.5).unwrap();
        assert_eq!(diag.matrix(), &Array2::<f64>::eye(3));
        let soft = sparsify(&c, ThresholdMode::Soft, 0.1).unwrap();
        assert_abs_diff_eq!(soft.matrix()[[0, 1]], 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(soft.matrix()[[1, 0]], 0.15, epsilon = 1e-15);
        assert_eq!(soft.matrix()[[0, 2]], 0.0);
        assert_eq!(soft.matrix()[[1, 1]], 1.0);
        assert!(matches!(sparsify(&c, ThresholdMode::Soft, -0.1), Err(Error::InvalidThreshold(_))));
    }

    #[test]
    fn hard_threshold_idempotent() {
        let c = small_cov();
        let once = sparsify(&c, ThresholdMode::Hard, 0.1).unwrap();
        let twice = sparsify(&once, ThresholdMode::Hard, 0.1).unwrap();
        assert_eq!(once.matrix(), twice.matrix());
    }

    #[test]
    fn normalize_examples() {
        let d = CovarianceGraph::from_matrix(array![[2.0, 0.0], [0.0, 1.0]], 5).unwrap();
        let n = normalize_spectrum(&d).unwrap();
        assert_eq!(n.matrix(), &array![[1.0, 0.0], [0.0, 0.5]]);
        assert_eq!(n.scale(), 2.0);

        let unit = CovarianceGraph::from_matrix(array![[1.0, 0.0], [0.0, 0.3]], 5).unwrap();
        let n = normalize_spectrum(&unit).unwrap();
        assert_eq!(n.matrix(), unit.matrix());
        assert_eq!(n.scale(), 1.0);

        let zero = CovarianceGraph::from_matrix(Array2::zeros((2, 2)), 5).unwrap();
        assert!(matches!(normalize_spectrum(&zero), Err(Error::DegenerateCovariance(_))));
    }

    #[test]
    fn normalize_random_psd() {
        let mut r = rng::seeded(5);
        let b = Array2::from_shape_fn((6, 6), |_| r.sample::<f64, _>(StandardNormal));
        let c = CovarianceGraph::from_matrix(b.t().dot(&b), 6).unwrap();
        let n = normalize_spectrum(&c).unwrap();
        let fresh = eigendecompose(n.matrix().view()).unwrap();
        assert_abs_diff_eq!(fresh.eigvals()[0], 1.0, epsilon = 1e-10);
        // eigenvectors preserved and ratios preserved
        assert_eq!(n.eigvecs(), c.eigvecs());
        for i in 0..6 {
            assert_abs_diff_eq!(n.eigvals()[i] * n.scale(), c.eigvals()[i], epsilon = 1e-12);
        }
        let rec = n.operator().recompose() - n.matrix();
        assert!(max_abs(rec.view()) < 1e-10);
    }

    #[test]
    fn subsampling_examples() {
        let mut r = rng::seeded(2);
        let x = Array2::from_shape_fn((12, 3), |_| r.sample::<f64, _>(StandardNormal));
        let data = cohort(x);
        let full = perturb_by_subsampling(&data, 12, 1).unwrap();
        assert_eq!(full.matrix(), sample_covariance(&data).unwrap().matrix());

        let a = perturb_by_subsampling(&data, 11, 1).unwrap();
        let b = perturb_by_subsampling(&data, 11, 2).unwrap();
        assert_ne!(a.matrix(), b.matrix());
        let a2 = perturb_by_subsampling(&data, 11, 1).unwrap();
        assert_eq!(a.matrix(), a2.matrix());

        assert!(matches!(perturb_by_subsampling(&data, 1, 0), Err(Error::InvalidSubsample { keep: 1, n: 12 })));
        assert!(perturb_by_subsampling(&data, 13, 0).is_err());
    }

    #[test]
    fn subsample_pair_matches_hand_covariance() {
        let data = cohort(array![[0.0, 1.0], [2.0, 5.0], [4.0, -1.0]]);
        let got = perturb_by_subsampling(&data, 2, 42).unwrap();
        // enumerate every pair and its hand covariance: for two rows a, b the
        // covariance is (a-b)(a-b)^T / 2.
        let rows = data.features();
        let candidates: Vec<Array2<f64>> = [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(i, j)| {
                let d = &rows.row(i) - &rows.row(j);
                Array2::from_shape_fn((2, 2), |(p, q)| d[p] * d[q] / 2.0)
            })
            .collect();
        let idx = subsample_indices(3, 2, 42).unwrap();
        let which = match (idx[0], idx[1]) {
            (0, 1) => 0,
            (0, 2) => 1,
            _ => 2,
        };
        assert_eq!(got.matrix(), &candidates[which]);
        assert_eq!(candidates.iter().filter(|c| *c == got.matrix()).count(), 1);
    }

    #[test]
    fn feature_matrix_validation() {
        let bad_age = FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            vec![0.0, 30.0],
            vec!["HC".into(), "HC".into()],
            vec!["r".into()],
            array![[1.0], [2.0]],
        );
        assert!(bad_age.is_err());
        let dup = FeatureMatrix::new(
            vec!["a".into()],
            vec![30.0],
            vec!["HC".into()],
            vec!["r".into(), "r".into()],
            array![[1.0, 2.0]],
        );
        assert!(dup.is_err());
    }

    #[test]
    fn standardizer_round_trip() {
        let data = cohort(array![[1.0, 10.0], [3.0, 14.0], [5.0, 12.0]]);
        let s = Standardizer::fit(&data).unwrap();
        let z = s.apply(&data).unwrap();
        let mean = z.features().mean_axis(Axis(0)).unwrap();
        assert_abs_diff_eq!(mean[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z.features().std_axis(Axis(0), 1.0)[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fingerprint_is_stable() {
        let c = small_cov();
        assert_eq!(c.fingerprint(), c.clone().fingerprint());
        assert_eq!(c.fingerprint().sha256.len(), 64);
        let d = sparsify(&c, ThresholdMode::Hard, 0.1).unwrap();
        assert_ne!(c.fingerprint(), d.fingerprint());
    }

    #[test]
    fn document_round_trip_is_exact() {
        let c = normalize_spectrum(&small_cov()).unwrap();
        let ids: Vec<String> = (0..c.dim()).map(|i| format!("r{i}")).collect();
        let doc = c.to_document(&ids).unwrap();
        let json = serde_json::to_string(&doc).unwrap();
        let back = CovarianceGraph::from_document(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.matrix(), c.matrix());
        assert_eq!(back.eigvecs(), c.eigvecs());
        assert_eq!(back.fingerprint(), c.fingerprint());
        let mut bad = doc.clone();
        bad.eigvals[0] += 0.5;
        assert!(matches!(CovarianceGraph::from_document(&bad), Err(Error::InvalidMatrix(_))));
        assert!(c.to_document(&ids[1..]).is_err());
    }
}
