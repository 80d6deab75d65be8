//! coVariance neural network: stacked MIMO graph-perceptron layers over a
//! fixed covariance matrix, followed by an unweighted mean readout.
//!
//! Layer `l` maps an `M x F_in` node-feature matrix `X` to
//!
//! ```text
//! Z = sum_k (C^k X) H_k + 1 b^T        H_k: F_in x F_out
//! X' = sigma(Z)
//! ```
//!
//! i.e. output channel `f` is `sigma(b_f + sum_g sum_k h[f][g][k] C^k x^g)`.
//! The readout averages the final representation over channels to get the
//! regional contribution vector `p_x`, and over regions to get `y_hat`.
//! Because the taps never reference `M`, the same model runs on covariance
//! matrices of any size.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceFingerprint, CovarianceGraph, Standardizer};
use crate::error::{check_dim, Error, Result};
use crate::gsp::GraphSignal;
use crate::rng;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Relu,
    Tanh,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Nonlinearity::Relu => z.max(0.0),
            Nonlinearity::Tanh => z.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Architecture of a VNN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VnnConfig {
    /// Number of filter taps (`K_l + 1`) for each layer.
    pub taps_per_layer: Vec<usize>,
    /// Channel widths `[F_0 = 1, F_1, ..., F_L]`.
    pub widths: Vec<usize>,
    pub nonlinearity: Nonlinearity,
    /// Skip the nonlinearity on the last layer.
    #[serde(default)]
    pub linear_final_layer: bool,
}

impl VnnConfig {
    /// Two layers with 2 and 6 taps and width 61.
    pub fn reference() -> Self {
        Self {
            taps_per_layer: vec![2, 6],
            widths: vec![1, 61, 61],
            nonlinearity: Nonlinearity::Relu,
            linear_final_layer: false,
        }
    }

    pub fn layers(&self) -> usize {
        self.taps_per_layer.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.taps_per_layer.len();
        if l == 0 {
            return Err(Error::InvalidConfig("VNN needs at least one layer".into()));
        }
        if self.widths.len() != l + 1 {
            return Err(Error::InvalidConfig(format!("{} layers need {} widths, got {}", l, l + 1, self.widths.len())));
        }
        if self.widths[0] != 1 {
            return Err(Error::InvalidConfig("input width F_0 must be 1".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidConfig("widths must be positive".into()));
        }
        if self.taps_per_layer.contains(&0) {
            return Err(Error::InvalidConfig("tap counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Total learnable parameters: taps plus one bias per output channel.
    pub fn param_count(&self) -> usize {
        (0..self.layers())
            .map(|l| self.taps_per_layer[l] * self.widths[l] * self.widths[l + 1] + self.widths[l + 1])
            .sum()
    }
}

/// Parameters of one layer: `taps[k]` is the `F_in x F_out` matrix of
/// coefficients for `C^k`, so `taps[k][[g, f]] = h[f][g][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub taps: Vec<Array2<f64>>,
    pub bias: Array1<f64>,
}

impl LayerParams {
    fn zeros(n_taps: usize, f_in: usize, f_out: usize) -> Self {
        Self { taps: vec![Array2::zeros((f_in, f_out)); n_taps], bias: Array1::zeros(f_out) }
    }

    pub fn f_in(&self) -> usize {
        self.taps[0].nrows()
    }

    pub fn f_out(&self) -> usize {
        self.taps[0].ncols()
    }

    /// Tap `h[f_out][f_in][k]`.
    pub fn tap(&self, f_out: usize, f_in: usize, k: usize) -> f64 {
        self.taps[k][[f_in, f_out]]
    }

    fn flat_len(&self) -> usize {
        self.taps.len() * self.f_in() * self.f_out() + self.f_out()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VnnModel {
    config: VnnConfig,
    layers: Vec<LayerParams>,
    seed: u64,
}

/// Gradient of `y_hat` (times the upstream scalar) for every parameter, laid
/// out exactly like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct VnnGradient {
    pub layers: Vec<LayerParams>,
}

impl VnnGradient {
    pub fn zeros_like(model: &VnnModel) -> Self {
        Self { layers: model.layers.iter().map(|l| LayerParams::zeros(l.taps.len(), l.f_in(), l.f_out())).collect() }
    }

    pub fn add_assign(&mut self, other: &VnnGradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (ta, tb) in a.taps.iter_mut().zip(&b.taps) {
                *ta += tb;
            }
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for t in &mut l.taps {
                t.mapv_inplace(|v| v * factor);
            }
            l.bias.mapv_inplace(|v| v * factor);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

fn flatten(layers: &[LayerParams]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(LayerParams::flat_len).sum());
    for l in layers {
        for t in &l.taps {
            out.extend(t.iter().copied());
        }
        out.extend(l.bias.iter().copied());
    }
    out
}

impl VnnModel {
    /// Taps drawn i.i.d. uniform on `[-a, a]` with
    /// `a = sqrt(6 / ((K_l + 1) (F_in + F_out)))`; biases start at zero.
    pub fn init(config: VnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(seed);
        let layers = (0..config.layers())
            .map(|l| {
                let n_taps = config.taps_per_layer[l];
                let (f_in, f_out) = (config.widths[l], config.widths[l + 1]);
                let a = (6.0 / (n_taps as f64 * (f_in + f_out) as f64)).sqrt();
                let taps =
                    (0..n_taps).map(|_| Array2::from_shape_simple_fn((f_in, f_out), || r.gen_range(-a..=a))).collect();
                LayerParams { taps, bias: Array1::zeros(f_out) }
            })
            .collect();
        Ok(Self { config, layers, seed })
    }

    /// Builds a model from explicit parameters, checking shapes against the
    /// config.
    pub fn from_params(config: VnnConfig, layers: Vec<LayerParams>, seed: u64) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.layers() {
            return Err(Error::InvalidConfig(format!(
                "config has {} layers, parameters have {}",
                config.layers(),
                layers.len()
            )));
        }
        for (l, p) in layers.iter().enumerate() {
            let want = (config.taps_per_layer[l], config.widths[l], config.widths[l + 1]);
            if p.taps.len() != want.0 || p.taps.iter().any(|t| t.dim() != (want.1, want.2)) || p.bias.len() != want.2 {
                return Err(Error::InvalidConfig(format!("layer {l} parameter shapes do not match config")));
            }
            if p.taps.iter().flat_map(|t| t.iter()).chain(p.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(Self { config, layers, seed })
    }

    pub fn config(&self) -> &VnnConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::flat_len).sum()
    }

    /// Parameters in a fixed order: per layer, taps `k`-major then `f_in`
    /// then `f_out`, followed by the biases.
    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        check_dim(self.param_count(), values.len())?;
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for t in &mut l.taps {
                t.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
            }
            l.bias.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        }
        Ok(())
    }

    /// Runs the network on one subject.
    pub fn forward(&self, cov: &CovarianceGraph, x: &GraphSignal) -> Result<VnnForwardTrace> {
        check_dim(cov.dim(), x.len())?;
        let c = cov.matrix();
        let m = x.len();
        let mut input = x.values().clone().into_shape_with_order((m, 1)).expect("column vector");
        let n_layers = self.layers.len();
        let mut layers = Vec::with_capacity(n_layers);
        for (l, p) in self.layers.iter().enumerate() {
            let mut shifted = Vec::with_capacity(p.taps.len());
            shifted.push(input);
            for _ in 1..p.taps.len() {
                let next = c.dot(shifted.last().expect("non-empty"));
                shifted.push(next);
            }
            let mut pre = Array2::zeros((m, p.f_out()));
            for (s, h) in shifted.iter().zip(&p.taps) {
                ndarray::linalg::general_mat_mul(1.0, s, h, 1.0, &mut pre);
            }
            pre += &p.bias;
            let linear = l + 1 == n_layers && self.config.linear_final_layer;
            let out = if linear {
                pre.clone()
            } else {
                let sigma = self.config.nonlinearity;
                pre.mapv(|z| sigma.apply(z))
            };
            layers.push(LayerTrace { shifted, pre_activation: pre });
            input = out;
        }
        let representation = input;
        let readout = representation.mean_axis(Axis(1)).expect("F_L >= 1");
        let y_hat = readout.sum() / m as f64;
        Ok(VnnForwardTrace { layers, representation, readout, y_hat })
    }

    /// Forward pass on a covariance and signal of a (possibly) different
    /// dimension than the model was trained on. Identical computation to
    /// [`Self::forward`]; exposed separately to make transference explicit.
    pub fn transfer_eval(&self, cov: &CovarianceGraph, x: &GraphSignal) -> Result<VnnForwardTrace> {
        self.forward(cov, x)
    }

    /// `y_hat` only.
    pub fn predict(&self, cov: &CovarianceGraph, x: &GraphSignal) -> Result<f64> {
        Ok(self.forward(cov, x)?.y_hat)
    }

    /// Reverse-mode gradient of `upstream * y_hat` with respect to every tap
    /// and bias, reusing the `C^k x` stacks stored in `trace`.
    pub fn backward(&self, cov: &CovarianceGraph, trace: &VnnForwardTrace, upstream: f64) -> Result<VnnGradient> {
        self.check_trace(cov, trace)?;
        let c = cov.matrix();
        let m = trace.readout.len();
        let n_layers = self.layers.len();
        let f_last = self.config.widths[n_layers];
        let mut grad_out = Array2::from_elem((m, f_last), upstream / (m as f64 * f_last as f64));
        let mut grads = Vec::with_capacity(n_layers);
        for l in (0..n_layers).rev() {
            let p = &self.layers[l];
            let lt = &trace.layers[l];
            let linear = l + 1 == n_layers && self.config.linear_final_layer;
            let grad_pre = if linear {
                grad_out
            } else {
                let sigma = self.config.nonlinearity;
                let mut g = grad_out;
                g.zip_mut_with(&lt.pre_activation, |gv, &z| *gv *= sigma.derivative(z));
                g
            };
            let taps: Vec<Array2<f64>> = lt.shifted.iter().map(|s| s.t().dot(&grad_pre)).collect();
            let bias = grad_pre.sum_axis(Axis(0));
            if l > 0 {
                // dL/dX = sum_k C^k (G H_k^T), accumulated Horner-style.
                let k_max = p.taps.len() - 1;
                let mut acc = grad_pre.dot(&p.taps[k_max].t());
                for k in (0..k_max).rev() {
                    acc = c.dot(&acc);
                    ndarray::linalg::general_mat_mul(1.0, &grad_pre, &p.taps[k].t(), 1.0, &mut acc);
                }
                grad_out = acc;
            } else {
                grad_out = Array2::zeros((0, 0));
            }
            grads.push(LayerParams { taps, bias });
        }
        grads.reverse();
        Ok(VnnGradient { layers: grads })
    }

    fn check_trace(&self, cov: &CovarianceGraph, trace: &VnnForwardTrace) -> Result<()> {
        let m = cov.dim();
        if trace.layers.len() != self.layers.len() {
            return Err(Error::TraceMismatch(format!(
                "trace has {} layers, model has {}",
                trace.layers.len(),
                self.layers.len()
            )));
        }
        if trace.readout.len() != m {
            return Err(Error::TraceMismatch(format!("trace has {} nodes, covariance has {m}", trace.readout.len())));
        }
        for (l, (p, lt)) in self.layers.iter().zip(&trace.layers).enumerate() {
            let ok = lt.shifted.len() == p.taps.len()
                && lt.shifted.iter().all(|s| s.dim() == (m, p.f_in()))
                && lt.pre_activation.dim() == (m, p.f_out());
            if !ok {
                return Err(Error::TraceMismatch(format!("layer {l} shapes differ from model")));
            }
        }
        Ok(())
    }

    /// Serializable snapshot tied to the covariance it runs on.
    pub fn to_document(&self, cov: &CovarianceGraph, standardizer: Option<Standardizer>) -> ModelDocument {
        let taps = self
            .layers
            .iter()
            .map(|p| {
                (0..p.f_out())
                    .map(|f| (0..p.f_in()).map(|g| (0..p.taps.len()).map(|k| p.tap(f, g, k)).collect()).collect())
                    .collect()
            })
            .collect();
        let biases = self.layers.iter().map(|p| p.bias.to_vec()).collect();
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            config: self.config.clone(),
            taps,
            biases,
            seed: self.seed,
            covariance: cov.fingerprint(),
            normalization_scale: cov.scale(),
            feature_standardizer: standardizer,
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported model format version {}", doc.format_version)));
        }
        doc.config.validate()?;
        let cfg = &doc.config;
        if doc.taps.len() != cfg.layers() || doc.biases.len() != cfg.layers() {
            return Err(Error::InvalidConfig("layer count mismatch in model document".into()));
        }
        let mut layers = Vec::with_capacity(cfg.layers());
        for l in 0..cfg.layers() {
            let (n_taps, f_in, f_out) = (cfg.taps_per_layer[l], cfg.widths[l], cfg.widths[l + 1]);
            let t = &doc.taps[l];
            let shape_ok =
                t.len() == f_out && t.iter().all(|row| row.len() == f_in && row.iter().all(|ks| ks.len() == n_taps));
            if !shape_ok {
                return Err(Error::InvalidConfig(format!("layer {l} tap tensor has wrong shape")));
            }
            let taps = (0..n_taps).map(|k| Array2::from_shape_fn((f_in, f_out), |(g, f)| t[f][g][k])).collect();
            let bias = Array1::from(doc.biases[l].clone());
            layers.push(LayerParams { taps, bias });
        }
        Self::from_params(cfg.clone(), layers, doc.seed)
    }
}

/// Intermediate values of one layer kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// `[X, C X, ..., C^K X]` for the layer input `X` (`M x F_in` each).
    pub shifted: Vec<Array2<f64>>,
    /// `M x F_out` values before the nonlinearity.
    pub pre_activation: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VnnForwardTrace {
    pub layers: Vec<LayerTrace>,
    /// Final representation `Psi` (`M x F_L`).
    pub representation: Array2<f64>,
    /// Regional contributions `p_x` (channel mean of `Psi`).
    pub readout: Array1<f64>,
    /// Age estimate: mean of `p_x`.
    pub y_hat: f64,
}

/// Versioned JSON form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub config: VnnConfig,
    /// `taps[l][f_out][f_in][k]`.
    pub taps: Vec<Vec<Vec<Vec<f64>>>>,
    /// `biases[l][f_out]`.
    pub biases: Vec<Vec<f64>>,
    pub seed: u64,
    pub covariance: CovarianceFingerprint,
    pub normalization_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_standardizer: Option<Standardizer>,
}
