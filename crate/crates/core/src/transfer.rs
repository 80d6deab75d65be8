//! Step-function embeddings on `[0, 1]` that put signals and covariances of
//! different dimension in one space, exact L2 distances between them, and
//! the cross-dimension transferability experiment.
//!
//! Region `i` of an `M`-region graph is mapped to an interval whose width is
//! proportional to its variance `C_ii`, intervals laid out in region order.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceGraph, FeatureMatrix};
use crate::error::{check_dim, Error, Result};
use crate::gsp::GraphSignal;
use crate::rng;
use crate::stats::median;
use crate::synth::{discretize, sample_profiles, CortexSpec, SubjectProfile, HEALTHY_GROUP};
use crate::training::{evaluate, train, training_covariance, TrainConfig};
use crate::vnn::{VnnConfig, VnnModel};

/// Piecewise-constant function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction1D {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

fn check_partition(b: &[f64]) -> Result<()> {
    let ok = b.len() >= 2 && b[0] == 0.0 && *b.last().unwrap() == 1.0 && b.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::DegenerateEmbedding("breakpoints must increase strictly from 0 to 1".into()))
    }
}

impl StepFunction1D {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_partition(&breakpoints)?;
        check_dim(breakpoints.len() - 1, values.len())?;
        Ok(Self { breakpoints, values })
    }

    pub fn constant(value: f64) -> Self {
        Self { breakpoints: vec![0.0, 1.0], values: vec![value] }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Per-interval values; for an embedded signal this recovers it exactly.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn widths(&self) -> Vec<f64> {
        self.breakpoints.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Interval partition with widths `C_ii / sum_j C_jj`.
pub fn variance_partition(cov: &CovarianceGraph) -> Result<Vec<f64>> {
    let d = cov.matrix().diag().to_owned();
    let total: f64 = d.sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateEmbedding("covariance has zero total variance".into()));
    }
    if let Some(i) = d.iter().position(|&v| v <= 0.0) {
        return Err(Error::DegenerateEmbedding(format!("region {i} has zero variance and no interval")));
    }
    let mut b = Vec::with_capacity(d.len() + 1);
    let mut acc = 0.0;
    b.push(0.0);
    for v in d.iter().take(d.len() - 1) {
        acc += v;
        b.push(acc / total);
    }
    b.push(1.0);
    check_partition(&b)?;
    Ok(b)
}

pub fn embed_signal(x: &GraphSignal, cov: &CovarianceGraph) -> Result<StepFunction1D> {
    check_dim(cov.dim(), x.len())?;
    embed_values(x.view(), cov)
}

fn embed_values(x: ArrayView1<'_, f64>, cov: &CovarianceGraph) -> Result<StepFunction1D> {
    Ok(StepFunction1D { breakpoints: variance_partition(cov)?, values: x.to_vec() })
}

/// Piecewise-constant function on `[0, 1]^2` over a product partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction2D {
    rows: Vec<f64>,
    cols: Vec<f64>,
    values: Array2<f64>,
}

impl StepFunction2D {
    pub fn new(rows: Vec<f64>, cols: Vec<f64>, values: Array2<f64>) -> Result<Self> {
        check_partition(&rows)?;
        check_partition(&cols)?;
        if values.dim() != (rows.len() - 1, cols.len() - 1) {
            return Err(Error::DimensionError { expected: rows.len() - 1, got: values.nrows() });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn row_breakpoints(&self) -> &[f64] {
        &self.rows
    }

    pub fn col_breakpoints(&self) -> &[f64] {
        &self.cols
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// `W(a, b) = C_ij` on the variance partition in both coordinates.
pub fn embed_operator(cov: &CovarianceGraph) -> Result<StepFunction2D> {
    let b = variance_partition(cov)?;
    Ok(StepFunction2D { rows: b.clone(), cols: b, values: cov.matrix().clone() })
}

/// Common refinement of two partitions: `(left, right, index_in_a, index_in_b)`.
fn refine(a: &[f64], b: &[f64]) -> Vec<(f64, f64, usize, usize)> {
    let (mut i, mut j) = (0, 0);
    let mut lo = 0.0;
    let mut out = Vec::with_capacity(a.len() + b.len());
    while i + 1 < a.len() && j + 1 < b.len() {
        let hi = a[i + 1].min(b[j + 1]);
        if hi > lo {
            out.push((lo, hi, i, j));
        }
        lo = hi;
        if a[i + 1] == hi {
            i += 1;
        }
        if b[j + 1] == hi {
            j += 1;
        }
    }
    out
}

/// Exact `||f - g||_2` over `[0, 1]`.
pub fn l2_distance(f: &StepFunction1D, g: &StepFunction1D) -> f64 {
    refine(&f.breakpoints, &g.breakpoints)
        .into_iter()
        .map(|(lo, hi, i, j)| {
            let d = f.values[i] - g.values[j];
            (hi - lo) * d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Exact `||F - G||_2` over `[0, 1]^2`.
pub fn l2_distance_2d(f: &StepFunction2D, g: &StepFunction2D) -> f64 {
    let rows = refine(&f.rows, &g.rows);
    let cols = refine(&f.cols, &g.cols);
    let mut total = 0.0;
    for &(r0, r1, fi, gi) in &rows {
        for &(c0, c1, fj, gj) in &cols {
            let d = f.values[[fi, fj]] - g.values[[gi, gj]];
            total += (r1 - r0) * (c1 - c0) * d * d;
        }
    }
    total.sqrt()
}

/// Inputs of the transferability experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSetup {
    pub spec: CortexSpec,
    /// Atlas sizes the models are evaluated at.
    pub dims: Vec<usize>,
    /// Atlas sizes a model is trained at (one matrix row each).
    pub train_dims: Vec<usize>,
    pub vnn: VnnConfig,
    pub train: TrainConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Test subjects whose outputs are compared across dimensions.
    pub n_matched: usize,
    pub age_range: (f64, f64),
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeEntry {
    pub train_dim: usize,
    pub eval_dim: usize,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDistance {
    pub train_dim: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    pub median: f64,
    /// `||p_x(M_a) - p_x(M_b)||_2` of the embedded readouts, per matched subject.
    pub per_subject: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub setup: TransferSetup,
    /// `mae[t][e]`: model trained at `train_dims[t]`, evaluated at `dims[e]`.
    pub mae: Vec<Vec<f64>>,
    pub entries: Vec<MaeEntry>,
    pub distances: Vec<OutputDistance>,
}

impl TransferReport {
    pub fn mae_at(&self, train_dim: usize, eval_dim: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.train_dim == train_dim && e.eval_dim == eval_dim).map(|e| e.mae)
    }

    pub fn distance(&self, train_dim: usize, dim_a: usize, dim_b: usize) -> Option<&OutputDistance> {
        self.distances.iter().find(|d| d.train_dim == train_dim && d.dim_a == dim_a && d.dim_b == dim_b)
    }
}

/// Everything the experiment needs at one atlas size.
struct Atlas {
    train: FeatureMatrix,
    cov: CovarianceGraph,
    /// Test cohort already in the model's feature space.
    test: FeatureMatrix,
    /// Noise-free cell averages of the matched subjects' profiles, in the
    /// model's feature space.
    matched: FeatureMatrix,
}

fn prepare_atlas(
    setup: &TransferSetup,
    train_profiles: &[SubjectProfile],
    test_profiles: &[SubjectProfile],
    m: usize,
) -> Result<Atlas> {
    let train =
        discretize(&setup.spec, train_profiles, m, HEALTHY_GROUP, rng::derive_seed(setup.seed, &[3, m as u64]))?;
    let test = discretize(&setup.spec, test_profiles, m, HEALTHY_GROUP, rng::derive_seed(setup.seed, &[4, m as u64]))?;
    let noiseless = CortexSpec { noise_sd: 0.0, ..setup.spec.clone() };
    let matched = discretize(&noiseless, &test_profiles[..setup.n_matched], m, HEALTHY_GROUP, 0)?;
    let (cov, standardizer) = training_covariance(&train, &setup.train, None)?;
    let (test, matched) = match &standardizer {
        Some(s) => (s.apply(&test)?, s.apply(&matched)?),
        None => (test, matched),
    };
    Ok(Atlas { train, cov, test, matched })
}

/// Trains one model per `train_dims` entry on the same continuous subjects
/// sampled at that size, then evaluates it at every size in `dims` with the
/// covariance estimated at that size.
///
/// Output distances compare readouts for the first `n_matched` test subjects
/// sampled without measurement noise: independent per-region noise has the
/// same L2 norm at every atlas size, so noisy samples of one subject never
/// approach each other as `M` grows.
pub fn transfer_experiment(setup: &TransferSetup) -> Result<TransferReport> {
    if setup.dims.is_empty() || setup.train_dims.is_empty() {
        return Err(Error::InvalidConfig("dims and train_dims must be non-empty".into()));
    }
    if let Some(t) = setup.train_dims.iter().find(|t| !setup.dims.contains(t)) {
        return Err(Error::InvalidConfig(format!("train dim {t} is not among the evaluation dims")));
    }
    if setup.n_matched > setup.n_test {
        return Err(Error::InvalidConfig("n_matched exceeds n_test".into()));
    }
    setup.vnn.validate()?;
    let train_profiles =
        sample_profiles(&setup.spec, None, setup.n_train, setup.age_range, rng::derive_seed(setup.seed, &[1]))?;
    let test_profiles =
        sample_profiles(&setup.spec, None, setup.n_test, setup.age_range, rng::derive_seed(setup.seed, &[2]))?;

    let atlases: Vec<Atlas> = setup
        .dims
        .par_iter()
        .map(|&m| prepare_atlas(setup, &train_profiles, &test_profiles, m))
        .collect::<Result<_>>()?;

    let mut mae = Vec::new();
    let mut entries = Vec::new();
    let mut distances = Vec::new();
    for &t in &setup.train_dims {
        let home = &atlases[setup.dims.iter().position(|&d| d == t).expect("checked above")];
        let model = VnnModel::init(setup.vnn.clone(), rng::derive_seed(setup.seed, &[5, t as u64]))?;
        let report = train(model, &home.cov, &home.train, &setup.train)?;
        let model = report.model;
        let row: Vec<f64> =
            atlases.par_iter().map(|a| evaluate(&model, &a.cov, &a.test).map(|e| e.mae)).collect::<Result<_>>()?;
        for (&d, &v) in setup.dims.iter().zip(&row) {
            entries.push(MaeEntry { train_dim: t, eval_dim: d, mae: v });
        }
        mae.push(row);

        let embedded: Vec<Vec<StepFunction1D>> = atlases
            .par_iter()
            .map(|a| {
                a.matched
                    .features()
                    .rows()
                    .into_iter()
                    .map(|row| {
                        let x = GraphSignal::new(row.to_owned())?;
                        let trace = model.transfer_eval(&a.cov, &x)?;
                        embed_values(trace.readout.view(), &a.cov)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let mut order: Vec<usize> = (0..setup.dims.len()).collect();
        order.sort_by_key(|&k| setup.dims[k]);
        for w in order.windows(2) {
            let (a, b) = (w[0], w[1]);
            let per_subject: Vec<f64> = embedded[a].iter().zip(&embedded[b]).map(|(f, g)| l2_distance(f, g)).collect();
            distances.push(OutputDistance {
                train_dim: t,
                dim_a: setup.dims[a],
                dim_b: setup.dims[b],
                median: if per_subject.is_empty() { f64::NAN } else { median(&per_subject) },
                per_subject,
            });
        }
    }
    Ok(TransferReport { setup: setup.clone(), mae, entries, distances })
}

/// Embedding of a signal given only the diagonal it should be laid out by;
/// handy for comparing readouts whose covariances are not at hand.
pub fn embed_with_diagonal(values: &[f64], diagonal: &[f64]) -> Result<StepFunction1D> {
    check_dim(values.len(), diagonal.len())?;
    let m = values.len();
    let mut c = Array2::zeros((m, m));
    for (i, &d) in diagonal.iter().enumerate() {
        c[[i, i]] = d;
    }
    let cov = CovarianceGraph::from_symmetric(c, 2, 1.0)?;
    embed_values(Array1::from(values.to_vec()).view(), &cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{ensemble_covariance, KernelSpec};
    use ndarray::array;
    use proptest::prelude::*;

    fn graph(c: Array2<f64>) -> CovarianceGraph {
        CovarianceGraph::from_symmetric(c, 10, 1.0).unwrap()
    }

    #[test]
    fn signal_embedding_examples() {
        let x = GraphSignal::from_vec(vec![3.0, -1.0, 2.0]).unwrap();
        let f = embed_signal(&x, &graph(Array2::eye(3) * 2.0)).unwrap();
        for w in f.widths() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(f.values(), x.values().as_slice().unwrap());
        let g = embed_signal(&GraphSignal::from_vec(vec![1.0, 1.0]).unwrap(), &graph(array![[1.0, 0.5], [0.5, 3.0]]))
            .unwrap();
        assert_eq!(g.widths(), vec![0.25, 0.75]);
        assert!(matches!(
            embed_signal(&GraphSignal::from_vec(vec![1.0, 1.0]).unwrap(), &graph(Array2::zeros((2, 2)))),
            Err(Error::DegenerateEmbedding(_))
        ));
    }

    #[test]
    fn operator_embedding_examples() {
        let w = embed_operator(&graph(Array2::eye(2))).unwrap();
        assert_eq!(w.row_breakpoints(), [0.0, 0.5, 1.0]);
        assert_eq!(w.values(), &Array2::<f64>::eye(2));
        let c = array![[1.0, 0.2], [0.2, 3.0]];
        let w = embed_operator(&graph(c.clone())).unwrap();
        assert_eq!(w.row_breakpoints(), [0.0, 0.25, 1.0]);
        assert_eq!(w.col_breakpoints(), w.row_breakpoints());
        assert_eq!(w.values()[[0, 1]], 0.2);
        let s = embed_signal(&GraphSignal::from_vec(vec![0.0, 0.0]).unwrap(), &graph(c)).unwrap();
        assert_eq!(s.breakpoints(), w.row_breakpoints());
    }

    #[test]
    fn distance_examples() {
        let one = StepFunction1D::constant(1.0);
        let zero = StepFunction1D::constant(0.0);
        assert_eq!(l2_distance(&one, &one), 0.0);
        assert_eq!(l2_distance(&one, &zero), 1.0);
        let half = StepFunction1D::new(vec![0.0, 0.5, 1.0], vec![1.0, 0.0]).unwrap();
        assert!((l2_distance(&half, &zero) - 0.5f64.sqrt()).abs() < 1e-15);
        // misaligned partitions: |1 - 0| on [1/3, 1/2]
        let thirds = StepFunction1D::new(vec![0.0, 1.0 / 3.0, 1.0], vec![1.0, 0.0]).unwrap();
        assert!((l2_distance(&half, &thirds) - (0.5f64 - 1.0 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn distance_2d_closed_form() {
        let a = StepFunction2D::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 1.0], Array2::eye(2)).unwrap();
        let z = StepFunction2D::new(vec![0.0, 1.0], vec![0.0, 1.0], Array2::zeros((1, 1))).unwrap();
        assert!((l2_distance_2d(&a, &z) - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(l2_distance_2d(&a, &a), 0.0);
    }

    #[test]
    fn grid_kernel_embeddings_converge() {
        let spec = CortexSpec::default();
        let embed = |m: usize| embed_operator(&graph(ensemble_covariance(&spec, m))).unwrap();
        let d: Vec<f64> = [25, 50, 100].iter().map(|&m| l2_distance_2d(&embed(m), &embed(2 * m))).collect();
        assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
        let other = CortexSpec {
            kernel: KernelSpec { variance: 0.004, length_scale: 0.05, nugget: 1e-4 },
            ..CortexSpec::default()
        };
        let unrelated = embed_operator(&graph(ensemble_covariance(&other, 100))).unwrap();
        assert!(l2_distance_2d(&embed(50), &embed(100)) < l2_distance_2d(&embed(50), &unrelated));
    }

    #[test]
    fn single_dim_experiment_is_the_native_mae() {
        let setup = TransferSetup {
            spec: CortexSpec::default(),
            dims: vec![12],
            train_dims: vec![12],
            vnn: VnnConfig {
                taps_per_layer: vec![2, 2],
                widths: vec![1, 3, 3],
                nonlinearity: crate::vnn::Nonlinearity::Relu,
                linear_final_layer: false,
            },
            train: TrainConfig { epochs: 2, zscore_features: true, learning_rate: 1e-2, ..TrainConfig::default() },
            n_train: 60,
            n_test: 20,
            n_matched: 5,
            age_range: (50.0, 90.0),
            seed: 4,
        };
        let r = transfer_experiment(&setup).unwrap();
        assert_eq!(r.mae.len(), 1);
        assert_eq!(r.mae[0].len(), 1);
        assert!(r.distances.is_empty());
        assert_eq!(r.mae_at(12, 12), Some(r.mae[0][0]));
    }

    fn step_strategy() -> impl Strategy<Value = StepFunction1D> {
        prop::collection::vec((0.01f64..1.0, -5.0f64..5.0), 1..8).prop_map(|parts| {
            let total: f64 = parts.iter().map(|p| p.0).sum();
            let mut b = vec![0.0];
            let mut acc = 0.0;
            for p in &parts[..parts.len() - 1] {
                acc += p.0;
                b.push(acc / total);
            }
            b.push(1.0);
            StepFunction1D::new(b, parts.iter().map(|p| p.1).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn distance_is_a_pseudometric(f in step_strategy(), g in step_strategy(), h in step_strategy()) {
            prop_assert_eq!(l2_distance(&f, &f), 0.0);
            prop_assert!((l2_distance(&f, &g) - l2_distance(&g, &f)).abs() < 1e-12);
            prop_assert!(l2_distance(&f, &h) <= l2_distance(&f, &g) + l2_distance(&g, &h) + 1e-9);
        }

        #[test]
        fn signal_embedding_round_trips(values in prop::collection::vec(-10.0f64..10.0, 1..12), seed in 0u64..100) {
            let m = values.len();
            let diag: Vec<f64> = (0..m).map(|i| 0.5 + ((seed + i as u64) % 7) as f64).collect();
            let f = embed_with_diagonal(&values, &diag).unwrap();
            prop_assert_eq!(f.values(), values.as_slice());
            let total: f64 = diag.iter().sum();
            for (w, d) in f.widths().iter().zip(&diag) {
                prop_assert!((w - d / total).abs() < 1e-12);
            }
        }
    }
}
