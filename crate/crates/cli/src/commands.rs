//! The pipeline commands. Each reads its inputs from the config paths and
//! writes its outputs into one directory.

use std::path::{Path, PathBuf};

use covnn::brainage::{
    delta_age_report, fit_bias, group_stats, pearson, AgeBiasModel, DeltaAgeReport, GroupStatsReport, NamedCorrelation,
};
use covnn::cohort_io::{format_float, import_csv, to_csv_string};
use covnn::covariance::{normalize_spectrum, CovarianceDocument, CovarianceGraph, FeatureMatrix};
use covnn::gsp::{FilterTaps, Interval};
use covnn::stability::{
    contrast_sweep, filter_stability_sweep, normalize_for_stability, unit_probes, vnn_stability_sweep, write_tidy_csv,
    ContrastDesign, ContrastSweep, StabilityReport, Summary,
};
use covnn::stats::mean;
use covnn::synth::{ensemble_covariance, sample_design};
use covnn::training::{evaluate, train, training_covariance, TrainReport};
use covnn::transfer::{transfer_experiment, TransferReport, TransferSetup};
use covnn::vnn::{ModelDocument, VnnModel};
use covnn::Error;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{require_input, seed_tags, PipelineConfig, StabilityExperiment};
use crate::error::{io_err, CliError, CliResult};
use crate::output::Outputs;

pub const TRAIN_CSV: &str = "train.csv";
pub const TEST_CSV: &str = "test.csv";
pub const MODEL_JSON: &str = "model.json";
pub const COVARIANCE_JSON: &str = "covariance.json";
pub const BIAS_JSON: &str = "bias.json";

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::ConfigParse { path: path.to_path_buf(), msg: e.to_string() })
}

/// Generates the training cohort and the healthy + disease test cohort.
pub fn cmd_synth(cfg: &PipelineConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let s = &cfg.synth;
    let (train_set, test_set) = sample_design(&s.cortex, &s.disease, &s.design, cfg.seed_for(seed_tags::SYNTH))?;
    let mut o = Outputs::new(out)?;
    o.bytes(TRAIN_CSV, to_csv_string(&train_set).as_bytes())?;
    o.bytes(TEST_CSV, to_csv_string(&test_set).as_bytes())?;
    #[derive(Serialize)]
    struct Manifest<'a> {
        seed: u64,
        synth: &'a crate::config::SynthConfig,
        affected_regions: Vec<String>,
    }
    let ids = train_set.region_ids();
    let affected = s.disease.affected_regions(s.design.regions).into_iter().map(|i| ids[i].clone()).collect();
    o.json("synth.json", &Manifest { seed: cfg.seed, synth: s, affected_regions: affected })?;
    Ok(o.written)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    n_subjects: usize,
    bias: &'a AgeBiasModel,
    report: &'a TrainReport,
}

/// Covariance, training, and the age-bias fit on the reference group of the
/// training CSV.
pub fn cmd_train(cfg: &PipelineConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let path = require_input(cfg.paths.train_csv.as_ref(), "training CSV")?;
    let all = import_csv(&path)?;
    let healthy = all.select(&all.indices_of_group(&cfg.groups.reference));
    if healthy.n_subjects() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: healthy.n_subjects() }.into());
    }
    let tc = cfg.effective_train();
    let threshold = cfg.sparsify.map(|s| (s.mode, s.tau));
    let (cov, standardizer) = training_covariance(&healthy, &tc, threshold)?;
    let model = VnnModel::init(cfg.vnn.clone(), cfg.seed_for(seed_tags::INIT))?;
    let report = train(model, &cov, &healthy, &tc)?;
    let features = match &standardizer {
        Some(s) => s.apply(&healthy)?,
        None => healthy.clone(),
    };
    let fitted = evaluate(&report.model, &cov, &features)?;
    let bias = fit_bias(features.ages(), &fitted.predictions)?;

    let mut o = Outputs::new(out)?;
    o.json(MODEL_JSON, &report.model.to_document(&cov, standardizer))?;
    o.json(COVARIANCE_JSON, &cov.to_document(healthy.region_ids())?)?;
    o.json(BIAS_JSON, &bias)?;
    o.json("train_report.json", &TrainSummary { n_subjects: healthy.n_subjects(), bias: &bias, report: &report })?;
    let mut curve = String::from("epoch,train_mae,train_mse,validation_mae,validation_mse\n");
    for e in &report.epochs {
        curve.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch,
            format_float(e.train_mae),
            format_float(e.train_mse),
            format_float(e.validation_mae),
            format_float(e.validation_mse)
        ));
    }
    o.bytes("training_curve.csv", curve.as_bytes())?;
    Ok(o.written)
}

/// A trained model with the covariance it runs on and its bias correction.
pub struct LoadedModel {
    pub model: VnnModel,
    pub document: ModelDocument,
    pub covariance: CovarianceGraph,
    pub region_ids: Vec<String>,
    pub bias: AgeBiasModel,
}

pub fn load_model(cfg: &PipelineConfig) -> CliResult<LoadedModel> {
    let model_path = require_input(cfg.paths.model.as_ref(), "model JSON")?;
    let cov_path = require_input(cfg.paths.covariance.as_ref(), "covariance JSON")?;
    let bias_path = require_input(cfg.paths.bias.as_ref(), "bias JSON")?;
    let document: ModelDocument = read_json(&model_path)?;
    let cov_doc: CovarianceDocument = read_json(&cov_path)?;
    let bias: AgeBiasModel = read_json(&bias_path)?;
    let model = VnnModel::from_document(&document)?;
    let covariance = CovarianceGraph::from_document(&cov_doc)?;
    if covariance.fingerprint() != document.covariance {
        return Err(Error::InvalidData(format!(
            "{} is not the covariance {} was trained on",
            cov_path.display(),
            model_path.display()
        ))
        .into());
    }
    Ok(LoadedModel { model, document, covariance, region_ids: cov_doc.region_ids, bias })
}

/// Per-subject predictions, bias-corrected brain age, Δ-Age, regional
/// residuals and eigen-alignments for the cohort at `paths.test_csv`.
/// Outputs are `<stem>.json` and `<stem>.csv`.
pub fn cmd_predict(cfg: &PipelineConfig, out: &Path, stem: &str) -> CliResult<Vec<PathBuf>> {
    let loaded = load_model(cfg)?;
    let path = require_input(cfg.paths.test_csv.as_ref(), "cohort CSV")?;
    let report = predict_cohort(cfg, &loaded, &import_csv(&path)?)?;
    let mut o = Outputs::new(out)?;
    o.json(&format!("{stem}.json"), &report)?;
    o.with_writer(&format!("{stem}.csv"), |w| report.write_csv(w))?;
    Ok(o.written)
}

pub fn predict_cohort(cfg: &PipelineConfig, loaded: &LoadedModel, data: &FeatureMatrix) -> CliResult<DeltaAgeReport> {
    let m = loaded.document.covariance.dim;
    if data.n_regions() != m {
        return Err(Error::DimensionError { expected: m, got: data.n_regions() }.into());
    }
    if data.region_ids() != loaded.region_ids.as_slice() {
        return Err(Error::InvalidData("cohort region columns differ from the model's".into()).into());
    }
    let data = match &loaded.document.feature_standardizer {
        Some(s) => s.apply(data)?,
        None => data.clone(),
    };
    let top_k = cfg.top_k.unwrap_or(m).min(m);
    Ok(delta_age_report(&loaded.model, &loaded.covariance, &loaded.bias, &data, top_k)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupDistribution {
    pub group: String,
    pub n: usize,
    pub mean: f64,
    pub delta_age: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStatsOutput {
    pub stats: GroupStatsReport,
    pub distributions: Vec<GroupDistribution>,
}

/// Merges the subjects of several reports into one.
pub fn merge_reports(reports: Vec<DeltaAgeReport>) -> CliResult<DeltaAgeReport> {
    let mut it = reports.into_iter();
    let mut merged = it.next().ok_or_else(|| CliError::Config("group-stats needs at least one report".into()))?;
    for r in it {
        if r.region_ids != merged.region_ids {
            return Err(Error::InvalidData("reports cover different regions".into()).into());
        }
        if r.bias != merged.bias {
            return Err(Error::InvalidData("reports were produced with different bias models".into()).into());
        }
        merged.subjects.extend(r.subjects);
    }
    Ok(merged)
}

pub fn group_stats_of(cfg: &PipelineConfig, report: &DeltaAgeReport) -> CliResult<GroupStatsOutput> {
    let (reference, comparison) = (&cfg.groups.reference, &cfg.groups.comparison);
    let mut stats = group_stats(report, reference, comparison)?;
    let mut distributions = Vec::new();
    for g in [reference, comparison] {
        let d = report.delta_ages(g);
        let ages: Vec<f64> = report.group(g).iter().map(|s| s.age).collect();
        stats.correlations.push(NamedCorrelation {
            x: format!("delta_age[{g}]"),
            y: format!("age[{g}]"),
            correlation: pearson(&d, &ages)?,
        });
        distributions.push(GroupDistribution {
            group: g.clone(),
            n: d.len(),
            mean: mean(&d),
            delta_age: Summary::of(d),
        });
    }
    Ok(GroupStatsOutput { stats, distributions })
}

/// Per-region ANCOVA with Bonferroni correction and Δ-Age group summaries.
pub fn cmd_group_stats(cfg: &PipelineConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    if cfg.paths.reports.is_empty() {
        return Err(CliError::Config("no brain-age reports given".into()));
    }
    let reports = cfg
        .paths
        .reports
        .iter()
        .map(|p| read_json::<DeltaAgeReport>(&require_input(Some(p), "report")?))
        .collect::<CliResult<Vec<_>>>()?;
    let result = group_stats_of(cfg, &merge_reports(reports)?)?;
    let mut o = Outputs::new(out)?;
    write_group_stats(&mut o, &result)?;
    Ok(o.written)
}

fn write_group_stats(o: &mut Outputs, result: &GroupStatsOutput) -> CliResult<()> {
    o.json("group_stats.json", result)?;
    o.with_writer("group_stats.csv", |w| result.stats.write_csv(w))?;
    Ok(())
}

pub fn transfer_setup(cfg: &PipelineConfig) -> TransferSetup {
    let t = &cfg.transfer;
    TransferSetup {
        spec: cfg.synth.cortex.clone(),
        dims: t.dims.clone(),
        train_dims: t.train_dims.clone(),
        vnn: cfg.vnn.clone(),
        train: cfg.effective_train(),
        n_train: t.n_train,
        n_test: t.n_test,
        n_matched: t.n_matched,
        age_range: cfg.synth.design.age_range,
        seed: cfg.seed_for(seed_tags::TRANSFER),
    }
}

/// Trains at each training dimension and evaluates at every dimension.
pub fn cmd_transfer(cfg: &PipelineConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let report = transfer_experiment(&transfer_setup(cfg))?;
    let mut o = Outputs::new(out)?;
    write_transfer(&mut o, &report)?;
    Ok(o.written)
}

fn write_transfer(o: &mut Outputs, report: &TransferReport) -> CliResult<()> {
    o.json("transfer.json", report)?;
    let mut mae = String::from("train_dim,eval_dim,mae\n");
    for e in &report.entries {
        mae.push_str(&format!("{},{},{}\n", e.train_dim, e.eval_dim, format_float(e.mae)));
    }
    o.bytes("transfer_mae.csv", mae.as_bytes())?;
    let mut dist = String::from("train_dim,dim_a,dim_b,subject,distance\n");
    for d in &report.distances {
        for (i, v) in d.per_subject.iter().enumerate() {
            dist.push_str(&format!("{},{},{},{},{}\n", d.train_dim, d.dim_a, d.dim_b, i, format_float(*v)));
        }
    }
    o.bytes("transfer_distance.csv", dist.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<StabilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vnn: Option<StabilityReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub pca_contrast: Vec<ContrastSweep>,
}

/// Spectrally normalized ensemble covariance of the configured cortex.
pub fn stability_covariance(cfg: &PipelineConfig) -> CliResult<CovarianceGraph> {
    let m = cfg.stability.regions;
    Ok(normalize_spectrum(&CovarianceGraph::from_matrix(ensemble_covariance(&cfg.synth.cortex, m), 0)?)?)
}

pub fn run_stability(cfg: &PipelineConfig) -> CliResult<StabilityOutput> {
    cfg.validate()?;
    let s = &cfg.stability;
    let seed = cfg.seed_for(seed_tags::STABILITY);
    let sub = |tag: u64| covnn::rng::derive_seed(seed, &[tag]);
    let wants = |e: StabilityExperiment| s.experiments.contains(&e);
    let mut result = StabilityOutput { filter: None, vnn: None, pca_contrast: Vec::new() };
    if wants(StabilityExperiment::Filter) || wants(StabilityExperiment::Vnn) {
        let c = stability_covariance(cfg)?;
        if wants(StabilityExperiment::Filter) {
            let h = FilterTaps::new(s.filter_taps.clone())?;
            result.filter = Some(filter_stability_sweep(&c, &h, &s.ns, s.trials, sub(0))?);
        }
        if wants(StabilityExperiment::Vnn) {
            let model = VnnModel::init(s.vnn.clone(), sub(1))?;
            let model = normalize_for_stability(&model, Interval::new(0.0, 2.0 * c.operator().spectral_radius()))?;
            let probes = unit_probes(c.dim(), s.probes, sub(2));
            result.vnn = Some(vnn_stability_sweep(&model, &c, &probes, &s.ns, s.trials, sub(3))?);
        }
    }
    if wants(StabilityExperiment::PcaContrast) {
        for (i, &spectrum) in s.contrast_spectra.iter().enumerate() {
            let design = ContrastDesign { spectrum, regions: s.contrast_regions, subjects: s.contrast_subjects };
            result.pca_contrast.push(contrast_sweep(&design, &s.contrast, s.contrast_cohorts, sub(10 + i as u64))?);
        }
    }
    Ok(result)
}

/// Filter and VNN perturbation sweeps and the PCA contrast.
pub fn cmd_stability(cfg: &PipelineConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let result = run_stability(cfg)?;
    let mut rows = Vec::new();
    rows.extend(result.filter.iter().flat_map(|r| r.tidy_rows()));
    rows.extend(result.vnn.iter().flat_map(|r| r.tidy_rows()));
    for sweep in &result.pca_contrast {
        let name = serde_json::to_value(sweep.design.spectrum).expect("enum serializes");
        rows.extend(sweep.tidy_rows(&format!("pca_contrast_{}", name.as_str().unwrap_or("spectrum"))));
    }
    let mut o = Outputs::new(out)?;
    o.json("stability.json", &result)?;
    o.with_writer("stability.csv", |w| write_tidy_csv(&rows, w))?;
    Ok(o.written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedRegion {
    pub region_id: String,
    /// 1-based rank by ANCOVA F.
    pub rank: usize,
    pub p_bonferroni: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoSummary {
    pub seed: u64,
    pub training_delta_age_age_correlation: f64,
    pub mean_delta_age_reference: f64,
    pub mean_delta_age_comparison: f64,
    pub delta_age_difference: f64,
    pub one_sided_p: f64,
    pub planted_regions: Vec<PlantedRegion>,
    /// Planted regions among the top `2 * planted` by F.
    pub planted_in_top: usize,
}

/// Synthetic cohorts, training, prediction on both cohorts and group
/// statistics, all under `out`.
pub fn cmd_demo(cfg: &PipelineConfig, out: &Path) -> CliResult<(Vec<PathBuf>, DemoSummary)> {
    let given = cfg;
    let mut written = cmd_synth(cfg, out)?;
    let mut cfg = cfg.clone();
    cfg.paths.train_csv = Some(out.join(TRAIN_CSV));
    cfg.paths.model = Some(out.join(MODEL_JSON));
    cfg.paths.covariance = Some(out.join(COVARIANCE_JSON));
    cfg.paths.bias = Some(out.join(BIAS_JSON));
    written.extend(cmd_train(&cfg, out)?);

    let loaded = load_model(&cfg)?;
    let train_report = predict_cohort(&cfg, &loaded, &import_csv(&out.join(TRAIN_CSV))?)?;
    let test_report = predict_cohort(&cfg, &loaded, &import_csv(&out.join(TEST_CSV))?)?;
    let stats = group_stats_of(&cfg, &test_report)?;

    let mut o = Outputs::new(out)?;
    o.json("train_delta_age.json", &train_report)?;
    o.with_writer("train_delta_age.csv", |w| train_report.write_csv(w))?;
    o.json("delta_age.json", &test_report)?;
    o.with_writer("delta_age.csv", |w| test_report.write_csv(w))?;
    write_group_stats(&mut o, &stats)?;

    let ref_group = &cfg.groups.reference;
    let d = train_report.delta_ages(ref_group);
    let ages: Vec<f64> = train_report.group(ref_group).iter().map(|s| s.age).collect();
    let contrast = stats.stats.delta_age.as_ref().expect("group_stats fills the contrast");
    let planted = cfg.synth.disease.affected_regions(cfg.synth.design.regions);
    let ranking = stats.stats.ranking();
    let planted_regions: Vec<PlantedRegion> = planted
        .iter()
        .map(|&j| PlantedRegion {
            region_id: stats.stats.regions[j].region_id.clone(),
            rank: ranking.iter().position(|&r| r == j).expect("every region is ranked") + 1,
            p_bonferroni: stats.stats.regions[j].p_bonferroni,
        })
        .collect();
    let summary = DemoSummary {
        seed: cfg.seed,
        training_delta_age_age_correlation: pearson(&d, &ages)?.r,
        mean_delta_age_reference: contrast.mean_reference,
        mean_delta_age_comparison: contrast.mean_comparison,
        delta_age_difference: contrast.mean_comparison - contrast.mean_reference,
        one_sided_p: contrast.test.p_greater,
        planted_in_top: planted_regions.iter().filter(|p| p.rank <= 2 * planted.len()).count(),
        planted_regions,
    };
    o.json("demo_summary.json", &summary)?;
    o.json("config.json", given)?;
    written.extend(o.written);
    Ok((written, summary))
}
