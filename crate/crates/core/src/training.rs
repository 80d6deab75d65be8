//! Mini-batch regression of chronological age on a healthy cohort.
//!
//! The validation split is made per subject id (stratified by age decile),
//! and the order in which training subjects are visited is keyed by id as
//! well, so permuting the rows of the input table does not change the
//! result.

use std::time::Instant;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    normalize_spectrum, sample_covariance, sparsify, CovarianceGraph, FeatureMatrix, Standardizer, ThresholdMode,
};
use crate::error::{check_dim, Error, Result};
use crate::gsp::GraphSignal;
use crate::rng;
use crate::vnn::{LayerParams, Nonlinearity, VnnGradient, VnnModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub zscore_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            seed: 0,
            early_stop_patience: 20,
            validation_fraction: 0.2,
            zscore_features: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction must lie in (0, 0.5), got {}",
                self.validation_fraction
            )));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::InvalidConfig("adam needs 0 <= beta < 1 and eps > 0".into()));
            }
        }
        Ok(())
    }
}

/// Training and validation row indices (each ascending).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Subject-level validation split stratified by age decile.
///
/// Subjects are ranked by (age, id) and cut into ten rank bins; within each
/// bin the subjects with the smallest seeded id hashes go to validation, so
/// the assignment of a subject depends only on its id, its age and the seed.
pub fn split_validation(data: &FeatureMatrix, fraction: f64, seed: u64) -> Result<Split> {
    let n = data.n_subjects();
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(Error::InvalidConfig(format!("validation_fraction must lie in (0, 0.5), got {fraction}")));
    }
    if n < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: n });
    }
    let ids = data.subject_ids();
    let ages = data.ages();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ages[a].total_cmp(&ages[b]).then_with(|| ids[a].cmp(&ids[b])));
    let mut validation = Vec::new();
    let bins = 10.min(n);
    for d in 0..bins {
        let bin = &order[d * n / bins..(d + 1) * n / bins];
        let mut keyed: Vec<(u64, &str, usize)> =
            bin.iter().map(|&i| (rng::hash_str(seed, &ids[i]), ids[i].as_str(), i)).collect();
        keyed.sort();
        let take = (fraction * bin.len() as f64).round() as usize;
        validation.extend(keyed.iter().take(take).map(|k| k.2));
    }
    if validation.is_empty() {
        // very small cohorts: at least one validation subject
        let mut keyed: Vec<(u64, usize)> = (0..n).map(|i| (rng::hash_str(seed, &ids[i]), i)).collect();
        keyed.sort();
        validation.push(keyed[0].1);
    }
    validation.sort_unstable();
    let train = (0..n).filter(|i| validation.binary_search(i).is_err()).collect();
    Ok(Split { train, validation })
}

/// Covariance and optional standardizer built from the training split of
/// `healthy`, as [`train`] expects them. `threshold` sparsifies the raw
/// estimate before spectral normalization.
pub fn training_covariance(
    healthy: &FeatureMatrix,
    cfg: &TrainConfig,
    threshold: Option<(ThresholdMode, f64)>,
) -> Result<(CovarianceGraph, Option<Standardizer>)> {
    let split = split_validation(healthy, cfg.validation_fraction, cfg.seed)?;
    let mut train = healthy.select(&split.train);
    let standardizer = if cfg.zscore_features {
        let s = Standardizer::fit(&train)?;
        train = s.apply(&train)?;
        Some(s)
    } else {
        None
    };
    let mut cov = sample_covariance(&train)?;
    if let Some((mode, tau)) = threshold {
        cov = sparsify(&cov, mode, tau)?;
    }
    Ok((normalize_spectrum(&cov)?, standardizer))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mae: f64,
    pub train_mse: f64,
    pub validation_mae: f64,
    pub validation_mse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Epoch (1-based) whose parameters were kept; 0 means the initial model.
    pub best_epoch: usize,
    pub best_validation_mae: f64,
    pub initial_validation_mae: f64,
    pub split: Split,
    pub standardizer: Option<Standardizer>,
    #[serde(skip)]
    pub model: VnnModel,
    /// Excluded from serialized reports so they stay byte-reproducible.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mae: f64,
    pub mse: f64,
    pub predictions: Vec<f64>,
}

/// Predicts every subject (in input order) and scores against their ages.
pub fn evaluate(model: &VnnModel, cov: &CovarianceGraph, data: &FeatureMatrix) -> Result<Evaluation> {
    check_dim(cov.dim(), data.n_regions())?;
    if data.n_subjects() == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let predictions = data
        .features()
        .rows()
        .into_iter()
        .map(|row| model.predict(cov, &GraphSignal::new(row.to_owned())?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(score(&predictions, data.ages()))
}

pub fn score(predictions: &[f64], targets: &[f64]) -> Evaluation {
    let n = predictions.len() as f64;
    let (mut mae, mut mse) = (0.0, 0.0);
    for (p, y) in predictions.iter().zip(targets) {
        mae += (p - y).abs();
        mse += (p - y) * (p - y);
    }
    Evaluation { mae: mae / n, mse: mse / n, predictions: predictions.to_vec() }
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        let state = if matches!(kind, Optimizer::Adam { .. }) { n } else { 0 };
        Self { kind, lr, step: 0, m: vec![0.0; state], v: vec![0.0; state] }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for i in 0..params.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Trains `model` to predict age by minimizing mean-squared error.
///
/// `cov` must be built from the training split of `healthy` (see
/// [`training_covariance`]). Before the first epoch the output-layer biases
/// are set to the mean training age, which the network otherwise needs
/// thousands of small optimizer steps to reach. Returns the parameters with
/// the lowest validation MAE.
pub fn train(
    model: VnnModel,
    cov: &CovarianceGraph,
    healthy: &FeatureMatrix,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let started = Instant::now();
    cfg.validate()?;
    check_dim(cov.dim(), healthy.n_regions())?;
    if model.config().nonlinearity == Nonlinearity::Tanh && !model.config().linear_final_layer {
        return Err(Error::InvalidConfig("a tanh output layer cannot reach ages; enable linear_final_layer".into()));
    }
    let split = split_validation(healthy, cfg.validation_fraction, cfg.seed)?;
    let mut train_set = healthy.select(&split.train);
    let mut val_set = healthy.select(&split.validation);
    let standardizer = if cfg.zscore_features {
        let s = Standardizer::fit(&train_set)?;
        train_set = s.apply(&train_set)?;
        val_set = s.apply(&val_set)?;
        Some(s)
    } else {
        None
    };
    let signals: Vec<GraphSignal> =
        train_set.features().rows().into_iter().map(|r| GraphSignal::new(r.to_owned())).collect::<Result<_>>()?;
    let ages = train_set.ages();

    let mut model = model;
    let target_mean = ages.iter().sum::<f64>() / ages.len() as f64;
    let last = model.layers().len() - 1;
    model.layers_mut()[last].bias.fill(target_mean);

    // canonical visiting order keyed by subject id
    let mut canonical: Vec<(u64, &str, usize)> = train_set
        .subject_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (rng::hash_str(rng::derive_seed(cfg.seed, &[1]), id), id.as_str(), i))
        .collect();
    canonical.sort();
    let canonical: Vec<usize> = canonical.into_iter().map(|k| k.2).collect();

    let mut params = model.flat_params();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, params.len());
    let initial_validation_mae = evaluate(&model, cov, &val_set)?.mae;
    let mut best = (0usize, initial_validation_mae, model.clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut since_best = 0;
    let mut last_stable = None;

    for epoch in 1..=cfg.epochs {
        let mut order = canonical.clone();
        order.shuffle(&mut rng::seeded(rng::derive_seed(cfg.seed, &[2, epoch as u64])));
        for batch in order.chunks(cfg.batch_size) {
            let grad = batch_gradient(&model, cov, &signals, ages, batch)?;
            let flat = grad.flat();
            if flat.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, last_stable });
            }
            opt.update(&mut params, &flat);
            model.set_flat_params(&params)?;
        }
        let tr = evaluate(&model, cov, &train_set)?;
        let va = evaluate(&model, cov, &val_set)?;
        if !(tr.mse.is_finite() && va.mse.is_finite()) {
            return Err(Error::Divergence { epoch, last_stable });
        }
        last_stable = Some(epoch);
        history.push(EpochMetrics {
            epoch,
            train_mae: tr.mae,
            train_mse: tr.mse,
            validation_mae: va.mae,
            validation_mse: va.mse,
        });
        if va.mae < best.1 {
            best = (epoch, va.mae, model.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok(TrainReport {
        epochs: history,
        best_epoch: best.0,
        best_validation_mae: best.1,
        initial_validation_mae,
        split,
        standardizer,
        model: best.2,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Gradient of the batch MSE. Subjects may be processed in parallel; the
/// reduction runs in batch order so the result does not depend on the
/// number of threads.
fn batch_gradient(
    model: &VnnModel,
    cov: &CovarianceGraph,
    signals: &[GraphSignal],
    ages: &[f64],
    batch: &[usize],
) -> Result<VnnGradient> {
    let scale = 2.0 / batch.len() as f64;
    let per_subject: Vec<Result<VnnGradient>> = batch
        .par_iter()
        .map(|&i| {
            let trace = model.forward(cov, &signals[i])?;
            model.backward(cov, &trace, scale * (trace.y_hat - ages[i]))
        })
        .collect();
    let mut total = VnnGradient::zeros_like(model);
    for g in per_subject {
        total.add_assign(&g?);
    }
    Ok(total)
}

/// Output-layer biases, exposed for inspection in tests and reports.
pub fn output_bias(model: &VnnModel) -> &Array1<f64> {
    let l: &LayerParams = model.layers().last().expect("at least one layer");
    &l.bias
}
