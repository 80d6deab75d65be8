//! Special functions, tail probabilities and the small linear-model toolkit
//! used for group comparisons.
//!
//! Student-t and F tails are computed from the regularized incomplete beta
//! function, evaluated with the modified Lentz continued fraction.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_spd};

const BETA_CF_EPS: f64 = 1e-15;
const BETA_CF_MAX_ITER: usize = 500;
const TINY: f64 = 1e-300;

/// Natural log of the gamma function (Lanczos, g = 7, n = 9), valid for
/// `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEFFS[0];
    let t = x + 7.5;
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail `P(|T| >= |t|)` of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(0.5 * df, 0.5, df / (df + t * t))
}

/// Upper tail `P(T >= t)` of Student's t.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    let half = 0.5 * student_t_two_sided(t, df);
    if t >= 0.0 {
        half
    } else {
        1.0 - half
    }
}

/// Upper tail `P(F >= f)` of the F distribution with `(d1, d2)` degrees of
/// freedom.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    incomplete_beta(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Linear-interpolated quantile (type 7) of unsorted data.
pub fn quantile(x: &[f64], q: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

pub fn median(x: &[f64]) -> f64 {
    quantile(x, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

/// Pearson correlation with a two-sided p-value from
/// `t = r sqrt((n-2)/(1-r^2))` on `n - 2` degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::DimensionError { expected: x.len(), got: y.len() });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: n });
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Correlation { r, p: correlation_p_value(r, n), n })
}

/// Two-sided p-value of a Pearson correlation `r` on `n` samples.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    let df = n as f64 - 2.0;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    student_t_two_sided(t, df)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for `mean(a) > mean(b)`.
    pub p_greater: f64,
    /// Two-sided p-value.
    pub p_two_sided: f64,
}

/// Welch's unequal-variance t-test of `a` against `b`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: a.len().min(b.len()) });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    if va + vb <= 0.0 {
        return Err(Error::DegenerateInput("both samples have zero variance".into()));
    }
    let t = (mean(a) - mean(b)) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TTest { t, df, p_greater: student_t_sf(t, df), p_two_sided: student_t_two_sided(t, df) })
}

/// Ordinary least squares `y ~ X beta`. Returns coefficients and residual
/// sum of squares; fails when `X^T X` is not positive definite.
pub fn ols(design: &Array2<f64>, y: &[f64]) -> Result<(Array1<f64>, f64)> {
    if design.nrows() != y.len() {
        return Err(Error::DimensionError { expected: design.nrows(), got: y.len() });
    }
    let yv = Array1::from(y.to_vec());
    let xtx = design.t().dot(design);
    let l = cholesky(xtx.view()).ok_or_else(|| Error::DegenerateDesign("design matrix is rank deficient".into()))?;
    // Cholesky alone lets near-singular designs through with garbage
    // coefficients
    let diag_max = xtx.diag().iter().fold(0.0_f64, |a, &v| a.max(v));
    let min_pivot = l.diag().iter().fold(f64::INFINITY, |a, &v| a.min(v * v));
    if min_pivot <= 1e-12 * diag_max {
        return Err(Error::DegenerateDesign("design matrix is numerically rank deficient".into()));
    }
    let beta = solve_spd(xtx.view(), design.t().dot(&yv).view()).expect("factorized above");
    let resid = &yv - &design.dot(&beta);
    Ok((beta, resid.dot(&resid)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AncovaResult {
    pub f: f64,
    pub p: f64,
    pub df_residual: usize,
    /// Group means adjusted to the pooled mean covariate: `[group 0, group 1]`.
    pub adjusted_means: [f64; 2],
    /// Estimated group-1 minus group-0 effect.
    pub group_effect: f64,
}

/// One-covariate ANCOVA: F-test for the group term in
/// `value ~ 1 + covariate + group` against `value ~ 1 + covariate`, with
/// `(1, n - 3)` degrees of freedom. `group[i]` is `true` for group 1.
pub fn ancova(values: &[f64], covariate: &[f64], group: &[bool]) -> Result<AncovaResult> {
    let n = values.len();
    if covariate.len() != n || group.len() != n {
        return Err(Error::DimensionError { expected: n, got: covariate.len().min(group.len()) });
    }
    let n1 = group.iter().filter(|&&g| g).count();
    let n0 = n - n1;
    if n0 < 3 || n1 < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: n0.min(n1) });
    }
    if variance(covariate) <= 0.0 {
        return Err(Error::DegenerateDesign("covariate is constant".into()));
    }
    let full = Array2::from_shape_fn((n, 3), |(i, j)| match j {
        0 => 1.0,
        1 => covariate[i],
        _ => f64::from(u8::from(group[i])),
    });
    let reduced = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { 1.0 } else { covariate[i] });
    let (beta, rss_full) = ols(&full, values)?;
    let (_, rss_reduced) = ols(&reduced, values)?;
    let df_residual = n - 3;
    let num = (rss_reduced - rss_full).max(0.0);
    let f = if rss_full > 0.0 {
        num / (rss_full / df_residual as f64)
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let p = f_sf(f, 1.0, df_residual as f64);
    let base = beta[0] + beta[1] * mean(covariate);
    Ok(AncovaResult { f, p, df_residual, adjusted_means: [base, base + beta[2]], group_effect: beta[2] })
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::DimensionError { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: x.len() });
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit("zero variance in regressor".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}
