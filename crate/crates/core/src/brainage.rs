//! Brain-age gap: age-bias correction, regional residuals, their alignment
//! with covariance eigenvectors, and per-region group statistics.

use std::io::Write;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cohort_io::format_float;
use crate::covariance::{CovarianceGraph, FeatureMatrix};
use crate::error::{check_dim, Error, Result};
use crate::gsp::GraphSignal;
use crate::stats::{ancova, linear_fit, mean, welch_t_test, TTest};
use crate::vnn::{VnnForwardTrace, VnnModel};

pub use crate::stats::{pearson, Correlation};

/// Linear age bias of the raw predictions: `y_hat - y ~ omega y + rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeBiasModel {
    pub omega: f64,
    pub rho: f64,
    pub fit_n: usize,
}

/// Ordinary least squares of `y_hat - y` on `y`.
pub fn fit_bias(y: &[f64], y_hat: &[f64]) -> Result<AgeBiasModel> {
    check_dim(y.len(), y_hat.len())?;
    if y.len() < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: y.len() });
    }
    let gap: Vec<f64> = y_hat.iter().zip(y).map(|(p, a)| p - a).collect();
    let (omega, rho) = linear_fit(y, &gap).map_err(|_| Error::DegenerateFit("ages have zero variance".into()))?;
    Ok(AgeBiasModel { omega, rho, fit_n: y.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedAge {
    pub y_brain: f64,
    pub delta_age: f64,
}

/// `y_brain = y_hat - (omega y + rho)`, `delta_age = y_brain - y`.
pub fn apply_bias(bias: &AgeBiasModel, y: f64, y_hat: f64) -> CorrectedAge {
    let y_brain = y_hat - (bias.omega * y + bias.rho);
    CorrectedAge { y_brain, delta_age: y_brain - y }
}

/// `r = p_x - y_hat`: how much each region pulls the estimate up or down.
pub fn regional_residuals(trace: &VnnForwardTrace) -> Array1<f64> {
    trace.readout.mapv(|p| p - trace.y_hat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `r_bar^T v_i` for the `top_k` leading eigenvectors.
    pub coefficients: Vec<f64>,
    /// Set when `r` is identically zero; coefficients are then all zero.
    pub zero_residual: bool,
}

/// Inner products of the unit-normalized residual with the covariance
/// eigenvectors in descending-eigenvalue order.
pub fn eigen_alignment(r: ArrayView1<'_, f64>, cov: &CovarianceGraph, top_k: usize) -> Result<Alignment> {
    check_dim(cov.dim(), r.len())?;
    if top_k > cov.dim() {
        return Err(Error::InvalidConfig(format!("top_k {top_k} exceeds dimension {}", cov.dim())));
    }
    let norm = r.dot(&r).sqrt();
    if norm == 0.0 {
        return Ok(Alignment { coefficients: vec![0.0; top_k], zero_residual: true });
    }
    let rbar = r.mapv(|v| v / norm);
    let v = cov.eigvecs();
    let coefficients = (0..top_k).map(|i| rbar.dot(&v.column(i))).collect();
    Ok(Alignment { coefficients, zero_residual: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub group: String,
    pub age: f64,
    pub y_hat: f64,
    pub y_brain: f64,
    pub delta_age: f64,
    pub residuals: Vec<f64>,
    pub aligned_coeffs: Vec<f64>,
    pub zero_residual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaAgeReport {
    pub bias: AgeBiasModel,
    pub region_ids: Vec<String>,
    pub subjects: Vec<SubjectRecord>,
}

/// Runs the model on every subject of `data` and assembles the per-subject
/// brain-age report. `data` must already be in the feature space the model
/// was trained in.
pub fn delta_age_report(
    model: &VnnModel,
    cov: &CovarianceGraph,
    bias: &AgeBiasModel,
    data: &FeatureMatrix,
    top_k: usize,
) -> Result<DeltaAgeReport> {
    check_dim(cov.dim(), data.n_regions())?;
    let mut subjects = Vec::with_capacity(data.n_subjects());
    for (i, row) in data.features().rows().into_iter().enumerate() {
        let trace = model.forward(cov, &GraphSignal::new(row.to_owned())?)?;
        let age = data.ages()[i];
        let corrected = apply_bias(bias, age, trace.y_hat);
        let r = regional_residuals(&trace);
        let alignment = eigen_alignment(r.view(), cov, top_k)?;
        subjects.push(SubjectRecord {
            subject_id: data.subject_ids()[i].clone(),
            group: data.groups()[i].clone(),
            age,
            y_hat: trace.y_hat,
            y_brain: corrected.y_brain,
            delta_age: corrected.delta_age,
            residuals: r.to_vec(),
            aligned_coeffs: alignment.coefficients,
            zero_residual: alignment.zero_residual,
        });
    }
    Ok(DeltaAgeReport { bias: *bias, region_ids: data.region_ids().to_vec(), subjects })
}

impl DeltaAgeReport {
    pub fn group(&self, group: &str) -> Vec<&SubjectRecord> {
        self.subjects.iter().filter(|s| s.group == group).collect()
    }

    pub fn delta_ages(&self, group: &str) -> Vec<f64> {
        self.group(group).iter().map(|s| s.delta_age).collect()
    }

    /// One row per subject: identifiers, ages, residuals `r_<region>` and
    /// alignment coefficients `v_<i>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let k = self.subjects.first().map_or(0, |s| s.aligned_coeffs.len());
        let mut header: Vec<String> =
            ["subject_id", "group", "age", "y_hat", "y_brain", "delta_age", "zero_residual"].map(String::from).to_vec();
        header.extend(self.region_ids.iter().map(|r| format!("r_{r}")));
        header.extend((1..=k).map(|i| format!("v_{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for s in &self.subjects {
            let mut rec = vec![
                s.subject_id.clone(),
                s.group.clone(),
                format_float(s.age),
                format_float(s.y_hat),
                format_float(s.y_brain),
                format_float(s.delta_age),
                s.zero_residual.to_string(),
            ];
            rec.extend(s.residuals.iter().chain(&s.aligned_coeffs).map(|&v| format_float(v)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStat {
    pub region_id: String,
    pub f: f64,
    pub p: f64,
    pub p_bonferroni: f64,
    /// Age-adjusted mean of the reference (healthy) group.
    pub adjusted_mean_reference: f64,
    pub adjusted_mean_comparison: f64,
}

/// Comparison-minus-reference Δ-Age summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaAgeContrast {
    pub mean_reference: f64,
    pub mean_comparison: f64,
    /// Welch test; `p_greater` is the one-sided p for comparison > reference.
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCorrelation {
    pub x: String,
    pub y: String,
    pub correlation: Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStatsReport {
    pub reference_group: String,
    pub comparison_group: String,
    pub n_reference: usize,
    pub n_comparison: usize,
    pub regions: Vec<RegionStat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_age: Option<DeltaAgeContrast>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub correlations: Vec<NamedCorrelation>,
}

/// Per-region ANCOVA `residual ~ 1 + age + group` comparing two groups, with
/// Bonferroni correction over regions. Rows are subjects, columns regions.
pub fn ancova_region_test(
    reference: ArrayView2<'_, f64>,
    reference_ages: &[f64],
    comparison: ArrayView2<'_, f64>,
    comparison_ages: &[f64],
    region_ids: &[String],
) -> Result<GroupStatsReport> {
    let m = region_ids.len();
    check_dim(m, reference.ncols())?;
    check_dim(m, comparison.ncols())?;
    check_dim(reference.nrows(), reference_ages.len())?;
    check_dim(comparison.nrows(), comparison_ages.len())?;
    let (n0, n1) = (reference.nrows(), comparison.nrows());
    let ages: Vec<f64> = reference_ages.iter().chain(comparison_ages).copied().collect();
    let group: Vec<bool> = (0..n0 + n1).map(|i| i >= n0).collect();
    let mut regions = Vec::with_capacity(m);
    for j in 0..m {
        let values: Vec<f64> = reference.column(j).iter().chain(comparison.column(j).iter()).copied().collect();
        let a = ancova(&values, &ages, &group)?;
        regions.push(RegionStat {
            region_id: region_ids[j].clone(),
            f: a.f,
            p: a.p,
            p_bonferroni: (a.p * m as f64).min(1.0),
            adjusted_mean_reference: a.adjusted_means[0],
            adjusted_mean_comparison: a.adjusted_means[1],
        });
    }
    Ok(GroupStatsReport {
        reference_group: String::new(),
        comparison_group: String::new(),
        n_reference: n0,
        n_comparison: n1,
        regions,
        delta_age: None,
        correlations: Vec::new(),
    })
}

/// Regional-residual ANCOVA and Δ-Age contrast between two groups of a
/// brain-age report.
pub fn group_stats(report: &DeltaAgeReport, reference: &str, comparison: &str) -> Result<GroupStatsReport> {
    let pick = |g: &str| {
        let rows = report.group(g);
        let m = report.region_ids.len();
        let flat: Vec<f64> = rows.iter().flat_map(|s| s.residuals.iter().copied()).collect();
        let mat = ndarray::Array2::from_shape_vec((rows.len(), m), flat).expect("residual rows have length M");
        let ages: Vec<f64> = rows.iter().map(|s| s.age).collect();
        (mat, ages)
    };
    let (r0, a0) = pick(reference);
    let (r1, a1) = pick(comparison);
    let mut stats = ancova_region_test(r0.view(), &a0, r1.view(), &a1, &report.region_ids)?;
    stats.reference_group = reference.to_string();
    stats.comparison_group = comparison.to_string();
    let (d0, d1) = (report.delta_ages(reference), report.delta_ages(comparison));
    stats.delta_age =
        Some(DeltaAgeContrast { mean_reference: mean(&d0), mean_comparison: mean(&d1), test: welch_t_test(&d1, &d0)? });
    Ok(stats)
}

impl GroupStatsReport {
    /// Region indices ordered by decreasing F (ties by region order).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.regions.len()).collect();
        idx.sort_by(|&a, &b| self.regions[b].f.total_cmp(&self.regions[a].f).then(a.cmp(&b)));
        idx
    }

    /// One row per region.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["region_id", "f", "p", "p_bonferroni", "adjusted_mean_reference", "adjusted_mean_comparison"])
            .map_err(csv_err)?;
        for r in &self.regions {
            w.write_record([
                r.region_id.clone(),
                format_float(r.f),
                format_float(r.p),
                format_float(r.p_bonferroni),
                format_float(r.adjusted_mean_reference),
                format_float(r.adjusted_mean_comparison),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io { path: "<csv>".into(), source: std::io::Error::other(e.to_string()) }
}
