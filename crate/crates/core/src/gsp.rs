//! Graph signals, polynomial graph filters and the graph Fourier transform.
//!
//! A filter with taps `h = [h_0, ..., h_K]` acts on a signal as
//! `z = sum_k h_k A^k x`. It is always evaluated by repeated shifts
//! (`A x`, `A (A x)`, ...), never by forming matrix powers, so a filter costs
//! `K` matrix-vector products. In the eigenbasis of `A` the same filter is a
//! pointwise scaling of each GFT coefficient by the frequency response
//! `h(lambda_i)`.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::SymmetricOperator;

/// Number of grid points used by [`lipschitz_bound`].
pub const LIPSCHITZ_GRID: usize = 1024;

/// A real signal with one value per graph node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GraphSignal(Array1<f64>);

impl GraphSignal {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidData("graph signal must have at least one node".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("graph signal has non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for GraphSignal {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_vec(v)
    }
}

impl From<GraphSignal> for Vec<f64> {
    fn from(s: GraphSignal) -> Self {
        s.0.to_vec()
    }
}

/// Polynomial filter coefficients `[h_0, ..., h_K]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FilterTaps(Vec<f64>);

impl FilterTaps {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidConfig("filter needs at least one tap".into()));
        }
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("filter taps must be finite".into()));
        }
        Ok(Self(taps))
    }

    /// Polynomial order `K` (number of taps minus one).
    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn taps(&self) -> &[f64] {
        &self.0
    }

    /// Multiplies every tap by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|h| h * factor).collect())
    }

    /// Evaluates `h(lambda)` by Horner's scheme.
    pub fn response_at(&self, lambda: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &h| acc * lambda + h)
    }

    /// Evaluates `h'(lambda)` by Horner's scheme on the derivative coefficients.
    pub fn derivative_at(&self, lambda: f64) -> f64 {
        self.0.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, &h)| acc * lambda + k as f64 * h)
    }
}

impl TryFrom<Vec<f64>> for FilterTaps {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FilterTaps> for Vec<f64> {
    fn from(t: FilterTaps) -> Self {
        t.0
    }
}

/// Closed interval `[lo, hi]` of the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

/// One graph shift `A x`.
pub fn shift(op: &SymmetricOperator, x: &GraphSignal) -> Result<GraphSignal> {
    check_dim(op.dim(), x.len())?;
    Ok(GraphSignal(op.entries().dot(x.values())))
}

/// `sum_k h_k A^k x` by iterated shifts.
pub fn apply_filter(op: &SymmetricOperator, h: &FilterTaps, x: &GraphSignal) -> Result<GraphSignal> {
    check_dim(op.dim(), x.len())?;
    let a = op.entries();
    let taps = h.taps();
    let mut shifted = x.values().clone();
    let mut out = &shifted * taps[0];
    for &hk in &taps[1..] {
        shifted = a.dot(&shifted);
        out.scaled_add(hk, &shifted);
    }
    Ok(GraphSignal(out))
}

/// Graph Fourier transform `U^T x`.
pub fn gft(op: &SymmetricOperator, x: &GraphSignal) -> Result<GraphSignal> {
    check_dim(op.dim(), x.len())?;
    Ok(GraphSignal(op.eigvecs().t().dot(x.values())))
}

/// Inverse graph Fourier transform `U x_tilde`.
pub fn igft(op: &SymmetricOperator, x_tilde: &GraphSignal) -> Result<GraphSignal> {
    check_dim(op.dim(), x_tilde.len())?;
    Ok(GraphSignal(op.eigvecs().dot(x_tilde.values())))
}

/// `h(lambda_i)` for every entry of `lambdas`.
pub fn frequency_response(h: &FilterTaps, lambdas: ArrayView1<'_, f64>) -> Array1<f64> {
    lambdas.mapv(|l| h.response_at(l))
}

/// Empirical Lipschitz constant of the frequency response on `range`.
///
/// Evaluates `|h'(lambda)|` on a uniform [`LIPSCHITZ_GRID`]-point grid and
/// also takes the secant slopes between neighbouring grid points, so the
/// result bounds `|h(a) - h(b)| / |a - b|` for any pair of grid points.
pub fn lipschitz_bound(h: &FilterTaps, range: Interval) -> Result<f64> {
    if !range.lo.is_finite() || !range.hi.is_finite() || range.lo > range.hi {
        return Err(Error::InvalidRange(format!("[{}, {}]", range.lo, range.hi)));
    }
    let n = LIPSCHITZ_GRID;
    let width = range.hi - range.lo;
    let grid: Vec<f64> = (0..n).map(|i| range.lo + width * i as f64 / (n - 1) as f64).collect();
    let mut best = grid.iter().fold(0.0_f64, |acc, &l| acc.max(h.derivative_at(l).abs()));
    if width > 0.0 {
        for w in grid.windows(2) {
            let slope = (h.response_at(w[1]) - h.response_at(w[0])) / (w[1] - w[0]);
            best = best.max(slope.abs());
        }
    }
    Ok(best)
}

/// Supremum of `|h(lambda)|` over the same grid used by [`lipschitz_bound`].
pub fn response_bound(h: &FilterTaps, range: Interval) -> Result<f64> {
    if !range.lo.is_finite() || !range.hi.is_finite() || range.lo > range.hi {
        return Err(Error::InvalidRange(format!("[{}, {}]", range.lo, range.hi)));
    }
    let n = LIPSCHITZ_GRID;
    let width = range.hi - range.lo;
    Ok((0..n)
        .map(|i| range.lo + width * i as f64 / (n - 1) as f64)
        .fold(0.0_f64, |acc, l| acc.max(h.response_at(l).abs())))
}
