//! Pipeline configuration: one JSON or TOML file shared by every command.
//! Missing sections fall back to the synthetic demo defaults.

use std::path::{Path, PathBuf};

use covnn::covariance::ThresholdMode;
use covnn::rng::derive_seed;
use covnn::stability::{ContrastSettings, ContrastSpectrum};
use covnn::synth::{CohortDesign, CortexSpec, DiseaseSpec, DISEASE_GROUP, HEALTHY_GROUP};
use covnn::training::TrainConfig;
use covnn::vnn::{Nonlinearity, VnnConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub covariance: Option<PathBuf>,
    pub bias: Option<PathBuf>,
    /// Brain-age reports merged by `group-stats`.
    pub reports: Vec<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsifyConfig {
    pub mode: ThresholdMode,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub cortex: CortexSpec,
    pub disease: DiseaseSpec,
    pub design: CohortDesign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Groups {
    pub reference: String,
    pub comparison: String,
}

impl Default for Groups {
    fn default() -> Self {
        Self { reference: HEALTHY_GROUP.into(), comparison: DISEASE_GROUP.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub dims: Vec<usize>,
    pub train_dims: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_matched: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { dims: vec![50, 100, 200], train_dims: vec![50], n_train: 500, n_test: 100, n_matched: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityExperiment {
    Filter,
    Vnn,
    PcaContrast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub experiments: Vec<StabilityExperiment>,
    /// Regions of the synthetic ensemble covariance used by the sweeps.
    pub regions: usize,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub filter_taps: Vec<f64>,
    pub vnn: VnnConfig,
    pub probes: usize,
    pub contrast_regions: usize,
    pub contrast_subjects: usize,
    pub contrast_cohorts: usize,
    pub contrast_spectra: Vec<ContrastSpectrum>,
    pub contrast: ContrastSettings,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            experiments: vec![StabilityExperiment::Filter, StabilityExperiment::Vnn, StabilityExperiment::PcaContrast],
            regions: 20,
            ns: vec![100, 400, 1600, 6400],
            trials: 20,
            filter_taps: vec![0.2, 0.5, 0.3],
            vnn: VnnConfig {
                taps_per_layer: vec![2, 3],
                widths: vec![1, 4, 4],
                nonlinearity: Nonlinearity::Relu,
                linear_final_layer: false,
            },
            probes: 5,
            contrast_regions: 20,
            contrast_subjects: 400,
            contrast_cohorts: 20,
            contrast_spectra: vec![ContrastSpectrum::NearDegenerate, ContrastSpectrum::Separated],
            contrast: ContrastSettings { rank: 2, keep_fractions: vec![0.8], resamples: 20, filter_taps: 3 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub vnn: VnnConfig,
    pub train: TrainConfig,
    pub sparsify: Option<SparsifyConfig>,
    /// Leading eigenvectors reported per subject; `None` means all.
    pub top_k: Option<usize>,
    pub groups: Groups,
    pub synth: SynthConfig,
    pub transfer: TransferConfig,
    pub stability: StabilityConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            vnn: VnnConfig {
                taps_per_layer: vec![2, 3],
                widths: vec![1, 8, 8],
                nonlinearity: Nonlinearity::Relu,
                linear_final_layer: false,
            },
            train: TrainConfig { epochs: 60, learning_rate: 1e-2, zscore_features: true, ..TrainConfig::default() },
            sparsify: None,
            top_k: None,
            groups: Groups::default(),
            synth: SynthConfig::default(),
            transfer: TransferConfig::default(),
            stability: StabilityConfig::default(),
        }
    }
}

/// Tags for seeds derived from the global seed.
pub mod seed_tags {
    pub const SYNTH: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const TRANSFER: u64 = 4;
    pub const STABILITY: u64 = 5;
}

impl PipelineConfig {
    /// Reads JSON (`.json`) or TOML (anything else). The file is merged
    /// over [`PipelineConfig::default`] table by table, so a partial section
    /// keeps the defaults of the keys it leaves out.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::error::io_err(path))?;
        let parse_err = |msg: String| CliError::ConfigParse { path: path.to_path_buf(), msg: msg.replace('\n', " ") };
        let patch: Value = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        let mut merged = serde_json::to_value(Self::default()).expect("default config serializes");
        merge(&mut merged, patch);
        serde_json::from_value(merged).map_err(|e| parse_err(e.to_string()))
    }

    pub fn seed_for(&self, tag: u64) -> u64 {
        derive_seed(self.seed, &[tag])
    }

    /// Training settings with the seed taken from the global seed.
    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig { seed: self.seed_for(seed_tags::TRAIN), ..self.train.clone() }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.vnn.validate()?;
        self.train.validate()?;
        self.synth.cortex.validate()?;
        self.synth.disease.validate()?;
        if let Some(s) = self.sparsify {
            if !(s.tau.is_finite() && s.tau >= 0.0) {
                return Err(covnn::Error::InvalidThreshold(s.tau).into());
            }
        }
        if self.groups.reference == self.groups.comparison {
            return Err(CliError::Config("reference and comparison groups must differ".into()));
        }
        Ok(())
    }
}

/// Recursive object merge. Objects carrying a `kind` tag replace the base
/// wholesale since their fields depend on the variant.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) if !p.contains_key("kind") => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

/// Resolves a required input path and checks that it exists.
pub fn require_input(path: Option<&PathBuf>, what: &str) -> CliResult<PathBuf> {
    let p = path.ok_or_else(|| {
        CliError::Config(format!("missing {what} path (set it in the config or on the command line)"))
    })?;
    if !p.exists() {
        return Err(CliError::Config(format!("{what} not found: {}", p.display())));
    }
    Ok(p.clone())
}
