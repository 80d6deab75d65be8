//! Sampling-stability harness: how far coVariance filters and VNNs move when
//! the ensemble covariance is replaced by an `n`-sample estimate, and how
//! PCA regression compares when principal components are re-estimated.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort_io::format_float;
use crate::covariance::{
    covariance_of_rows, normalize_spectrum, perturb_by_subsampling, sample_covariance, CovarianceGraph, FeatureMatrix,
};
use crate::error::{check_dim, Error, Result};
use crate::gsp::{lipschitz_bound, response_bound, FilterTaps, GraphSignal, Interval};
use crate::linalg::{eigendecompose, symmetric_operator_norm, SymmetricOperator};
use crate::rng;
use crate::stats::{linear_fit, median, ols, quantile};
use crate::training::{evaluate, score};
use crate::vnn::{LayerParams, Nonlinearity, VnnConfig, VnnModel};

/// Median and interquartile range of per-trial values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub values: Vec<f64>,
}

impl Summary {
    pub fn of(values: Vec<f64>) -> Self {
        Self { median: median(&values), q25: quantile(&values, 0.25), q75: quantile(&values, 0.75), values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    /// Filter deviation `||H(C_n) - H(C)||`; for VNN sweeps the largest over
    /// all of the model's filters (the measured `alpha_n`).
    pub filter: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Summary>,
    /// `L F^{L-1} alpha_n` per trial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub within_envelope: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub experiment: String,
    pub dim: usize,
    pub trials: usize,
    pub seed: u64,
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of log median filter deviation against log n.
    pub slope: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_slope: Option<f64>,
    /// Fraction of all trials whose output deviation stayed within the
    /// envelope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_fraction: Option<f64>,
}

impl StabilityReport {
    pub fn medians(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.filter.median).collect()
    }

    pub fn output_medians(&self) -> Option<Vec<f64>> {
        self.points.iter().map(|p| p.output.as_ref().map(|o| o.median)).collect()
    }

    pub fn tidy_rows(&self) -> Vec<TidyRow> {
        let mut rows = Vec::new();
        for p in &self.points {
            let mut push = |metric: &str, values: &[f64]| {
                for (t, &v) in values.iter().enumerate() {
                    rows.push(TidyRow {
                        experiment: self.experiment.clone(),
                        n: p.n,
                        trial: t,
                        metric: metric.into(),
                        value: v,
                    });
                }
            };
            push("filter_deviation", &p.filter.values);
            if let Some(o) = &p.output {
                push("output_deviation", &o.values);
            }
            if let Some(e) = &p.envelope {
                push("envelope", e);
            }
        }
        rows
    }
}

/// One long-format record: `experiment, n, trial, metric, value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub experiment: String,
    pub n: usize,
    pub trial: usize,
    pub metric: String,
    pub value: f64,
}

pub fn write_tidy_csv<W: Write>(rows: &[TidyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Io { path: "<csv>".into(), source: std::io::Error::other(e.to_string()) };
    w.write_record(["experiment", "n", "trial", "metric", "value"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.n.to_string(),
            r.trial.to_string(),
            r.metric.clone(),
            format_float(r.value),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })
}

/// Draws `n x M` Gaussian samples with covariance `C`.
fn gaussian_samples(factor: &Array2<f64>, n: usize, seed: u64) -> Array2<f64> {
    let m = factor.nrows();
    let mut r = rng::seeded(seed);
    let z = Array2::from_shape_simple_fn((n, m), || r.sample::<f64, _>(StandardNormal));
    z.dot(&factor.t())
}

/// `V diag(sqrt(max(lambda, 0)))`, so `F F^T = C`.
fn sqrt_factor(op: &SymmetricOperator) -> Array2<f64> {
    let mut f = op.eigvecs().clone();
    for (mut col, &l) in f.columns_mut().into_iter().zip(op.eigvals()) {
        col.mapv_inplace(|v| v * l.max(0.0).sqrt());
    }
    f
}

/// `[I, C, ..., C^K]`.
fn powers(c: ArrayView2<'_, f64>, k: usize) -> Vec<Array2<f64>> {
    let mut out = vec![Array2::eye(c.nrows())];
    for _ in 0..k {
        let next = out.last().expect("non-empty").dot(&c);
        out.push(next);
    }
    out
}

fn filter_from_powers(taps: &[f64], p: &[Array2<f64>]) -> Array2<f64> {
    let mut h = Array2::zeros(p[0].raw_dim());
    for (t, pk) in taps.iter().zip(p) {
        h.scaled_add(*t, pk);
    }
    h
}

fn spectral_interval(c: &CovarianceGraph) -> Interval {
    Interval::new(0.0, 2.0 * c.operator().spectral_radius().max(f64::MIN_POSITIVE))
}

fn slope_of(ns: &[usize], medians: &[f64]) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) =
        ns.iter().zip(medians).filter(|(_, &m)| m > 0.0).map(|(&n, &m)| ((n as f64).ln(), m.ln())).unzip();
    linear_fit(&x, &y).map(|f| f.0).unwrap_or(f64::NAN)
}

fn check_ns(ns: &[usize], trials: usize) -> Result<()> {
    if ns.is_empty() || trials == 0 {
        return Err(Error::InvalidConfig("need at least one sample size and one trial".into()));
    }
    if ns[0] < 2 || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("sample sizes must be >= 2 and strictly increasing".into()));
    }
    Ok(())
}

/// Operator-norm deviation of `H(C_n)` from `H(C)` over `trials` sample
/// covariances per `n`.
pub fn filter_stability_sweep(
    c: &CovarianceGraph,
    h: &FilterTaps,
    ns: &[usize],
    trials: usize,
    seed: u64,
) -> Result<StabilityReport> {
    check_ns(ns, trials)?;
    let lip = lipschitz_bound(h, spectral_interval(c))?;
    if !lip.is_finite() {
        return Err(Error::InvalidConfig("filter has no finite Lipschitz bound".into()));
    }
    let factor = sqrt_factor(c.operator());
    let k = h.order();
    let reference = filter_from_powers(h.taps(), &powers(c.matrix().view(), k));
    let mut points = Vec::with_capacity(ns.len());
    for &n in ns {
        let values = (0..trials)
            .into_par_iter()
            .map(|t| {
                let x = gaussian_samples(&factor, n, rng::derive_seed(seed, &[n as u64, t as u64]));
                let c_n = covariance_of_rows(x.view())?;
                let diff = filter_from_powers(h.taps(), &powers(c_n.view(), k)) - &reference;
                symmetric_operator_norm(diff.view())
            })
            .collect::<Result<Vec<f64>>>()?;
        points.push(SweepPoint { n, filter: Summary::of(values), output: None, envelope: None, within_envelope: None });
    }
    let medians: Vec<f64> = points.iter().map(|p| p.filter.median).collect();
    Ok(StabilityReport {
        experiment: "filter_stability".into(),
        dim: c.dim(),
        trials,
        seed,
        slope: slope_of(ns, &medians),
        points,
        output_slope: None,
        envelope_fraction: None,
    })
}

/// Rescales every filter of `model` so that on `range` its response is at
/// most `1 / F_in` in magnitude and its Lipschitz constant at most 1, and
/// zeroes the biases. Under these conditions each layer is non-expansive and
/// the output deviation obeys the `L F^{L-1} alpha_n` envelope.
pub fn normalize_for_stability(model: &VnnModel, range: Interval) -> Result<VnnModel> {
    let mut out = model.clone();
    for layer in out.layers_mut() {
        let (f_in, f_out) = (layer.f_in(), layer.f_out());
        for g in 0..f_in {
            for f in 0..f_out {
                let taps: Vec<f64> = layer.taps.iter().map(|t| t[[g, f]]).collect();
                let h = FilterTaps::new(taps)?;
                let size = (response_bound(&h, range)? * f_in as f64).max(lipschitz_bound(&h, range)?);
                if size > 0.0 {
                    for t in layer.taps.iter_mut() {
                        t[[g, f]] /= size;
                    }
                }
            }
        }
        layer.bias.fill(0.0);
    }
    Ok(out)
}

/// Unit-norm probe signals.
pub fn unit_probes(m: usize, count: usize, seed: u64) -> Vec<GraphSignal> {
    let mut r = rng::seeded(seed);
    (0..count)
        .map(|_| {
            let x = Array1::from_shape_simple_fn(m, || r.sample::<f64, _>(StandardNormal));
            let norm = x.dot(&x).sqrt();
            GraphSignal::new(x / norm).expect("finite")
        })
        .collect()
}

/// Largest per-channel L2 deviation of the final representation.
fn output_deviation(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).map_axis(Axis(0), |col| col.dot(&col).sqrt()).fold(0.0, |acc: f64, &v| acc.max(v))
}

/// Output deviation `||Psi(x; C_n) - Psi(x; C)||` of a frozen model over
/// `probes`, next to the measured filter deviation `alpha_n` and the
/// envelope `L F^{L-1} alpha_n` (`F` the widest layer).
pub fn vnn_stability_sweep(
    model: &VnnModel,
    c: &CovarianceGraph,
    probes: &[GraphSignal],
    ns: &[usize],
    trials: usize,
    seed: u64,
) -> Result<StabilityReport> {
    check_ns(ns, trials)?;
    if probes.is_empty() {
        return Err(Error::InvalidConfig("need at least one probe signal".into()));
    }
    for p in probes {
        check_dim(c.dim(), p.len())?;
    }
    let cfg = model.config();
    let depth = cfg.layers();
    let width = *cfg.widths.iter().max().expect("non-empty") as f64;
    let factor_l = depth as f64 * width.powi(depth as i32 - 1);
    let max_k = cfg.taps_per_layer.iter().max().expect("non-empty") - 1;
    let ref_powers = powers(c.matrix().view(), max_k);
    let filters: Vec<Vec<f64>> = model
        .layers()
        .iter()
        .flat_map(|l| {
            (0..l.f_in()).flat_map(move |g| (0..l.f_out()).map(move |f| l.taps.iter().map(|t| t[[g, f]]).collect()))
        })
        .collect();
    let reference: Vec<Array2<f64>> = filters.iter().map(|h| filter_from_powers(h, &ref_powers)).collect();
    let base: Vec<Array2<f64>> =
        probes.iter().map(|x| model.forward(c, x).map(|t| t.representation)).collect::<Result<_>>()?;
    let factor = sqrt_factor(c.operator());

    let mut points = Vec::with_capacity(ns.len());
    let (mut held, mut total) = (0usize, 0usize);
    for &n in ns {
        let per_trial = (0..trials)
            .into_par_iter()
            .map(|t| -> Result<(f64, f64)> {
                let x = gaussian_samples(&factor, n, rng::derive_seed(seed, &[n as u64, t as u64]));
                let c_n = CovarianceGraph::from_symmetric(covariance_of_rows(x.view())?, n, 1.0)?;
                let p = powers(c_n.matrix().view(), max_k);
                let mut alpha: f64 = 0.0;
                for (h, r) in filters.iter().zip(&reference) {
                    alpha = alpha.max(symmetric_operator_norm((filter_from_powers(h, &p) - r).view())?);
                }
                let mut dev: f64 = 0.0;
                for (x, b) in probes.iter().zip(&base) {
                    dev = dev.max(output_deviation(&model.forward(&c_n, x)?.representation, b));
                }
                Ok((alpha, dev))
            })
            .collect::<Result<Vec<_>>>()?;
        let alphas: Vec<f64> = per_trial.iter().map(|v| v.0).collect();
        let devs: Vec<f64> = per_trial.iter().map(|v| v.1).collect();
        let envelope: Vec<f64> = alphas.iter().map(|a| factor_l * a).collect();
        let within = devs.iter().zip(&envelope).filter(|(d, e)| **d <= **e * (1.0 + 1e-12) + 1e-15).count();
        held += within;
        total += trials;
        points.push(SweepPoint {
            n,
            filter: Summary::of(alphas),
            output: Some(Summary::of(devs)),
            envelope: Some(envelope),
            within_envelope: Some(within),
        });
    }
    let medians: Vec<f64> = points.iter().map(|p| p.filter.median).collect();
    let out_medians: Vec<f64> = points.iter().map(|p| p.output.as_ref().expect("set above").median).collect();
    Ok(StabilityReport {
        experiment: "vnn_stability".into(),
        dim: c.dim(),
        trials,
        seed,
        slope: slope_of(ns, &medians),
        output_slope: Some(slope_of(ns, &out_medians)),
        points,
        envelope_fraction: Some(held as f64 / total as f64),
    })
}

/// Spectrum family for the PCA contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastSpectrum {
    /// `phi_2 / phi_3 = 1.02`.
    NearDegenerate,
    /// Control: `phi_2 / phi_3 = 2`.
    Separated,
}

impl ContrastSpectrum {
    pub fn eigenvalues(self, m: usize) -> Vec<f64> {
        let (p2, p3) = match self {
            ContrastSpectrum::NearDegenerate => (2.04, 2.0),
            ContrastSpectrum::Separated => (2.0, 1.0),
        };
        let mut v = vec![4.0, p2, p3];
        v.extend((3..m).map(|j| 0.5 * 0.8f64.powi(j as i32 - 3)));
        v.truncate(m);
        v
    }
}

/// Ensemble covariance `V diag(phi) V^T` with a seeded random orthonormal
/// basis, and the unit target direction: the projection of the all-ones
/// vector onto `span(v_2, v_3)`.
pub fn contrast_ensemble(spectrum: ContrastSpectrum, m: usize, seed: u64) -> Result<(SymmetricOperator, Array1<f64>)> {
    if m < 4 {
        return Err(Error::InvalidConfig("contrast design needs at least 4 regions".into()));
    }
    let mut r = rng::seeded(seed);
    let a = Array2::from_shape_simple_fn((m, m), || r.sample::<f64, _>(StandardNormal));
    let basis = eigendecompose((&a + &a.t()).view())?.eigvecs().clone();
    let op = SymmetricOperator::from_spectrum(basis, Array1::from(spectrum.eigenvalues(m)))?;
    let ones = Array1::<f64>::ones(m);
    let mut u = Array1::zeros(m);
    for i in [1, 2] {
        let v = op.eigvecs().column(i);
        u.scaled_add(v.dot(&ones), &v);
    }
    let norm = u.dot(&u).sqrt();
    Ok((op, u / norm))
}

/// Cohort for the PCA contrast: `x ~ N(0, C)` and
/// `age = 70 + 5 u^T x / sqrt(u^T C u) + N(0, 1)`.
pub fn contrast_cohort(spectrum: ContrastSpectrum, m: usize, n: usize, seed: u64) -> Result<FeatureMatrix> {
    let (op, u) = contrast_ensemble(spectrum, m, rng::derive_seed(seed, &[0]))?;
    let x = gaussian_samples(&sqrt_factor(&op), n, rng::derive_seed(seed, &[1]));
    let scale = u.dot(&op.recompose().dot(&u)).sqrt();
    let mut r = rng::seeded(rng::derive_seed(seed, &[2]));
    let ages: Vec<f64> =
        x.rows().into_iter().map(|row| 70.0 + 5.0 * row.dot(&u) / scale + r.sample::<f64, _>(StandardNormal)).collect();
    FeatureMatrix::new(
        (0..n).map(|i| format!("P-{i:04}")).collect(),
        ages,
        vec!["HC".into(); n],
        (0..m).map(|i| format!("{i:04}")).collect(),
        x,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastLevel {
    pub keep_fraction: f64,
    pub kept: usize,
    pub pca_variance: f64,
    pub vnn_variance: f64,
    /// `pca_variance / vnn_variance`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaContrastReport {
    pub rank: usize,
    /// In-sample MAE of the two models on the full cohort.
    pub pca_fit_mae: f64,
    pub vnn_fit_mae: f64,
    pub resamples: usize,
    pub seed: u64,
    pub levels: Vec<ContrastLevel>,
}

impl PcaContrastReport {
    pub fn tidy_rows(&self, experiment: &str) -> Vec<TidyRow> {
        let mut rows = Vec::new();
        for l in &self.levels {
            for (metric, value) in
                [("pca_variance", l.pca_variance), ("vnn_variance", l.vnn_variance), ("variance_ratio", l.ratio)]
            {
                rows.push(TidyRow { experiment: experiment.into(), n: l.kept, trial: 0, metric: metric.into(), value });
            }
        }
        rows
    }
}

/// Settings for [`pca_contrast`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSettings {
    pub rank: usize,
    pub keep_fractions: Vec<f64>,
    pub resamples: usize,
    /// Taps of the single-layer filter model (`K + 1`).
    pub filter_taps: usize,
}

/// Single-layer, single-channel VNN with a linear output,
/// `y_hat = b + mean(H(C) x)`, whose taps and bias minimize the training MSE.
/// The model is linear in its parameters, so the minimizer is the least
/// squares solution on the features `mean(C^k x)`.
pub fn fit_filter_regression(data: &FeatureMatrix, cov: &CovarianceGraph, taps: usize) -> Result<VnnModel> {
    check_dim(cov.dim(), data.n_regions())?;
    if taps == 0 {
        return Err(Error::InvalidConfig("need at least one tap".into()));
    }
    let m = data.n_regions() as f64;
    let n = data.n_subjects();
    let mut design = Array2::ones((n, taps + 1));
    let mut shifted = data.features().t().to_owned();
    for k in 0..taps {
        if k > 0 {
            shifted = cov.matrix().dot(&shifted);
        }
        let means = shifted.sum_axis(Axis(0)) / m;
        design.column_mut(k + 1).assign(&means);
    }
    let (beta, _) = ols(&design, data.ages())?;
    let config = VnnConfig {
        taps_per_layer: vec![taps],
        widths: vec![1, 1],
        nonlinearity: Nonlinearity::Relu,
        linear_final_layer: true,
    };
    let layer = LayerParams {
        taps: (0..taps).map(|k| Array2::from_elem((1, 1), beta[k + 1])).collect(),
        bias: Array1::from_elem(1, beta[0]),
    };
    VnnModel::from_params(config, vec![layer], 0)
}

/// Frozen rank-`k` PCA regression: scores on the leading eigenvectors of the
/// covariance it is evaluated with, signs aligned to the fitted components.
struct PcaRegression {
    mean: Array1<f64>,
    components: Array2<f64>,
    beta: Array1<f64>,
}

impl PcaRegression {
    fn fit(data: &FeatureMatrix, cov: &CovarianceGraph, rank: usize) -> Result<Self> {
        let x = data.features();
        let mean = x.mean_axis(Axis(0)).expect("n >= 2");
        let components = cov.eigvecs().slice(ndarray::s![.., ..rank]).to_owned();
        let scores = (x - &mean).dot(&components);
        let design =
            Array2::from_shape_fn((x.nrows(), rank + 1), |(i, j)| if j == 0 { 1.0 } else { scores[[i, j - 1]] });
        let (beta, _) = ols(&design, data.ages())?;
        Ok(Self { mean, components, beta })
    }

    fn predict(&self, x: ArrayView2<'_, f64>, cov: &CovarianceGraph) -> Array1<f64> {
        let rank = self.components.ncols();
        let mut comps = cov.eigvecs().slice(ndarray::s![.., ..rank]).to_owned();
        for (mut c, r) in comps.columns_mut().into_iter().zip(self.components.columns()) {
            if c.dot(&r) < 0.0 {
                c.mapv_inplace(|v| -v);
            }
        }
        let scores = (&x - &self.mean).dot(&comps);
        scores.dot(&self.beta.slice(ndarray::s![1..])) + self.beta[0]
    }
}

/// Mean over subjects of the across-resample prediction variance, computed
/// on offsets from the first resample so identical predictions give exactly 0.
fn prediction_variance(predictions: &[Array1<f64>]) -> f64 {
    let r = predictions.len() as f64;
    let n = predictions[0].len();
    let mut total = 0.0;
    for i in 0..n {
        let d: Vec<f64> = predictions.iter().map(|p| p[i] - predictions[0][i]).collect();
        let m = d.iter().sum::<f64>() / r;
        total += (d.iter().map(|v| v * v).sum::<f64>() / r - m * m).max(0.0);
    }
    total / n as f64
}

/// Fits PCA regression and a VNN on `data`, then re-evaluates both with
/// frozen weights on covariances estimated from random subsets of the
/// subjects (`keep_fraction` of them, `resamples` times per level).
pub fn pca_contrast(data: &FeatureMatrix, settings: &ContrastSettings, seed: u64) -> Result<PcaContrastReport> {
    let m = data.n_regions();
    if settings.rank == 0 || settings.rank > m {
        return Err(Error::InvalidConfig(format!("rank must lie in 1..={m}")));
    }
    if settings.resamples < 2 {
        return Err(Error::InvalidConfig("need at least 2 resamples".into()));
    }
    let cov_raw = sample_covariance(data)?;
    let cov = normalize_spectrum(&cov_raw)?;
    let pca = PcaRegression::fit(data, &cov_raw, settings.rank)?;
    let model = fit_filter_regression(data, &cov, settings.filter_taps)?;
    let signals: Vec<GraphSignal> =
        data.features().rows().into_iter().map(|r| GraphSignal::new(r.to_owned())).collect::<Result<_>>()?;
    let n = data.n_subjects();
    let pca_fit = pca.predict(data.features().view(), &cov_raw);
    let pca_fit_mae = score(pca_fit.as_slice().expect("contiguous"), data.ages()).mae;
    let vnn_fit_mae = evaluate(&model, &cov, data)?.mae;

    let mut levels = Vec::with_capacity(settings.keep_fractions.len());
    for (li, &frac) in settings.keep_fractions.iter().enumerate() {
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(Error::InvalidConfig(format!("keep fraction {frac} outside (0, 1]")));
        }
        let kept = ((frac * n as f64).round() as usize).max(2);
        let runs = (0..settings.resamples)
            .into_par_iter()
            .map(|t| -> Result<(Array1<f64>, Array1<f64>)> {
                let c_raw = perturb_by_subsampling(data, kept, rng::derive_seed(seed, &[9, li as u64, t as u64]))?;
                let c = normalize_spectrum(&c_raw)?;
                let p = pca.predict(data.features().view(), &c_raw);
                let v = signals.iter().map(|x| model.predict(&c, x)).collect::<Result<Vec<f64>>>()?;
                Ok((p, Array1::from(v)))
            })
            .collect::<Result<Vec<_>>>()?;
        let (p, v): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
        let (pv, vv) = (prediction_variance(&p), prediction_variance(&v));
        levels.push(ContrastLevel {
            keep_fraction: frac,
            kept,
            pca_variance: pv,
            vnn_variance: vv,
            ratio: if vv > 0.0 {
                pv / vv
            } else if pv > 0.0 {
                f64::INFINITY
            } else {
                f64::NAN
            },
        });
    }
    Ok(PcaContrastReport { rank: settings.rank, pca_fit_mae, vnn_fit_mae, resamples: settings.resamples, seed, levels })
}

/// Synthetic cohort shape for [`contrast_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastDesign {
    pub spectrum: ContrastSpectrum,
    pub regions: usize,
    pub subjects: usize,
}

/// Per-keep-level medians over independent cohorts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSweepLevel {
    pub keep_fraction: f64,
    pub median_pca_variance: f64,
    pub median_vnn_variance: f64,
    /// `median_pca_variance / median_vnn_variance`.
    pub ratio_of_medians: f64,
    pub median_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSweep {
    pub design: ContrastDesign,
    pub seed: u64,
    pub levels: Vec<ContrastSweepLevel>,
    pub runs: Vec<PcaContrastReport>,
}

impl ContrastSweep {
    /// Tidy rows of every cohort; `trial` is the cohort index.
    pub fn tidy_rows(&self, experiment: &str) -> Vec<TidyRow> {
        let mut rows = Vec::new();
        for (t, run) in self.runs.iter().enumerate() {
            rows.extend(run.tidy_rows(experiment).into_iter().map(|r| TidyRow { trial: t, ..r }));
        }
        rows
    }
}

/// Repeats [`pca_contrast`] on `cohorts` independently drawn cohorts.
pub fn contrast_sweep(
    design: &ContrastDesign,
    settings: &ContrastSettings,
    cohorts: usize,
    seed: u64,
) -> Result<ContrastSweep> {
    if cohorts == 0 {
        return Err(Error::InvalidConfig("need at least one cohort".into()));
    }
    let runs = (0..cohorts as u64)
        .into_par_iter()
        .map(|s| {
            let data =
                contrast_cohort(design.spectrum, design.regions, design.subjects, rng::derive_seed(seed, &[s, 0]))?;
            pca_contrast(&data, settings, rng::derive_seed(seed, &[s, 1]))
        })
        .collect::<Result<Vec<_>>>()?;
    let levels = settings
        .keep_fractions
        .iter()
        .enumerate()
        .map(|(li, &keep_fraction)| {
            let col = |f: fn(&ContrastLevel) -> f64| median(&runs.iter().map(|r| f(&r.levels[li])).collect::<Vec<_>>());
            let (pv, vv) = (col(|l| l.pca_variance), col(|l| l.vnn_variance));
            ContrastSweepLevel {
                keep_fraction,
                median_pca_variance: pv,
                median_vnn_variance: vv,
                ratio_of_medians: pv / vv,
                median_ratio: col(|l| l.ratio),
            }
        })
        .collect();
    Ok(ContrastSweep { design: design.clone(), seed, levels, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{ensemble_covariance, CortexSpec};
    use crate::vnn::Nonlinearity;

    fn ensemble(m: usize) -> CovarianceGraph {
        let c = CovarianceGraph::from_matrix(ensemble_covariance(&CortexSpec::default(), m), 1_000_000).unwrap();
        normalize_spectrum(&c).unwrap()
    }

    #[test]
    fn constant_filter_never_moves() {
        let c = ensemble(8);
        let r = filter_stability_sweep(&c, &FilterTaps::new(vec![0.7]).unwrap(), &[50, 200], 4, 1).unwrap();
        for p in &r.points {
            assert!(p.filter.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identity_tap_matches_direct_covariance_deviation() {
        let c = ensemble(6);
        let (ns, trials, seed) = ([30usize, 120], 3, 5);
        let r = filter_stability_sweep(&c, &FilterTaps::new(vec![0.0, 1.0]).unwrap(), &ns, trials, seed).unwrap();
        let factor = sqrt_factor(c.operator());
        for (p, &n) in r.points.iter().zip(&ns) {
            for t in 0..trials {
                let x = gaussian_samples(&factor, n, rng::derive_seed(seed, &[n as u64, t as u64]));
                let d = covariance_of_rows(x.view()).unwrap() - c.matrix();
                let direct = symmetric_operator_norm(d.view()).unwrap();
                assert!((p.filter.values[t] - direct).abs() <= 1e-12 * direct.max(1.0));
            }
        }
    }

    #[test]
    fn filter_deviation_shrinks_with_samples() {
        let c = ensemble(10);
        let h = FilterTaps::new(vec![0.2, 0.5, 0.3]).unwrap();
        let r = filter_stability_sweep(&c, &h, &[100, 400, 1600], 8, 3).unwrap();
        let m = r.medians();
        assert!(m[0] > m[1] && m[1] > m[2]);
        assert!(r.slope < -0.35, "slope {}", r.slope);
        let again = filter_stability_sweep(&c, &h, &[100, 400, 1600], 8, 3).unwrap();
        assert_eq!(r, again);
    }

    fn small_model(seed: u64) -> VnnModel {
        let cfg = VnnConfig {
            taps_per_layer: vec![2, 3],
            widths: vec![1, 3, 3],
            nonlinearity: Nonlinearity::Relu,
            linear_final_layer: false,
        };
        VnnModel::init(cfg, seed).unwrap()
    }

    #[test]
    fn zero_model_has_no_output_deviation() {
        let c = ensemble(6);
        let mut model = small_model(1);
        let zeros = vec![0.0; model.param_count()];
        model.set_flat_params(&zeros).unwrap();
        let r = vnn_stability_sweep(&model, &c, &unit_probes(6, 2, 0), &[50, 100], 3, 2).unwrap();
        for p in &r.points {
            assert!(p.output.as_ref().unwrap().values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_filter_model_reduces_to_filter_on_probe() {
        // one layer, one channel, linear output: Psi = H(C) x
        let c = ensemble(5);
        let cfg = VnnConfig {
            taps_per_layer: vec![3],
            widths: vec![1, 1],
            nonlinearity: Nonlinearity::Relu,
            linear_final_layer: true,
        };
        let model = VnnModel::init(cfg, 4).unwrap();
        let taps: Vec<f64> = model.layers()[0].taps.iter().map(|t| t[[0, 0]]).collect();
        let probe = unit_probes(5, 1, 9);
        let (ns, seed) = ([40usize], 6);
        let r = vnn_stability_sweep(&model, &c, &probe, &ns, 2, seed).unwrap();
        let factor = sqrt_factor(c.operator());
        let href = filter_from_powers(&taps, &powers(c.matrix().view(), 2));
        for t in 0..2 {
            let x = gaussian_samples(&factor, 40, rng::derive_seed(seed, &[40, t as u64]));
            let hn = filter_from_powers(&taps, &powers(covariance_of_rows(x.view()).unwrap().view(), 2));
            let d = (&hn - &href).dot(probe[0].values());
            let expected = d.dot(&d).sqrt();
            assert!((r.points[0].output.as_ref().unwrap().values[t] - expected).abs() < 1e-12);
            // a single unit-norm probe can never exceed the operator norm
            assert!(expected <= r.points[0].filter.values[t] + 1e-12);
        }
    }

    #[test]
    fn normalized_model_respects_envelope() {
        let c = ensemble(8);
        let model = normalize_for_stability(&small_model(2), Interval::new(0.0, 2.0)).unwrap();
        let r = vnn_stability_sweep(&model, &c, &unit_probes(8, 3, 1), &[50, 200, 800], 6, 4).unwrap();
        assert_eq!(r.envelope_fraction, Some(1.0));
        let m = r.output_medians().unwrap();
        assert!(m[0] > m[1] && m[1] > m[2], "{m:?}");
        let rows = r.tidy_rows();
        assert_eq!(rows.len(), 3 * 6 * 3);
    }

    #[test]
    fn contrast_design_spectrum() {
        let (op, u) = contrast_ensemble(ContrastSpectrum::NearDegenerate, 12, 3).unwrap();
        let l = op.eigvals();
        assert!((l[1] / l[2] - 1.02).abs() < 1e-9);
        assert!((u.dot(&u) - 1.0).abs() < 1e-12);
        assert!(u.dot(&op.eigvecs().column(0)).abs() < 1e-9);
    }

    #[test]
    fn filter_regression_matches_forward_pass_and_beats_any_other_taps() {
        let data = contrast_cohort(ContrastSpectrum::Separated, 6, 80, 3).unwrap();
        let cov = normalize_spectrum(&sample_covariance(&data).unwrap()).unwrap();
        let model = fit_filter_regression(&data, &cov, 3).unwrap();
        let fitted = evaluate(&model, &cov, &data).unwrap();
        // least squares optimum: perturbing any parameter raises the MSE
        let params = model.flat_params();
        for i in 0..params.len() {
            for d in [-1e-3, 1e-3] {
                let mut p = params.clone();
                p[i] += d;
                let mut other = model.clone();
                other.set_flat_params(&p).unwrap();
                assert!(evaluate(&other, &cov, &data).unwrap().mse > fitted.mse);
            }
        }
    }

    #[test]
    fn full_keep_fraction_means_no_variance() {
        let data = contrast_cohort(ContrastSpectrum::NearDegenerate, 8, 120, 1).unwrap();
        let settings = ContrastSettings { rank: 2, keep_fractions: vec![1.0], resamples: 3, filter_taps: 3 };
        let r = pca_contrast(&data, &settings, 2).unwrap();
        assert_eq!(r.levels[0].pca_variance, 0.0);
        assert_eq!(r.levels[0].vnn_variance, 0.0);
    }
}
