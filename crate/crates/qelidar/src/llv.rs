//! Log-likelihood detection statistics: the linear per-measurement form,
//! rolling averages, empirical and analytic distinguishability and ROC
//! generation.
//!
//! A measurement with `x` successes out of `k` Bernoulli trials has the
//! exact binomial log-likelihood ratio `M x + C k` (the binomial
//! coefficients cancel), with slope `M = ln[p1(1-p0) / (p0(1-p1))]` and
//! per-trial offset `C = ln[(1-p1)/(1-p0)]`. Positive values favour the
//! target-present hypothesis; the natural decision threshold is zero.

use crate::normal;
use crate::params::Hypothesis;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LlvError {
    #[error("click probabilities must lie strictly inside (0,1), got p_h0={p_h0}, p_h1={p_h1}")]
    DegenerateProbability { p_h0: f64, p_h1: f64 },
    #[error("count x={x} exceeds trial count k={k}")]
    CountExceedsTrials { x: u64, k: u64 },
    #[error("rolling window of {n_av} exceeds series length {len}")]
    WindowTooLarge { n_av: usize, len: usize },
    #[error("empirical distinguishability requires nonempty series")]
    EmptySeries,
    #[error("averaging-factor search exceeded f = {limit}")]
    NoConvergence { limit: f64 },
}

/// Coefficients of the linear per-measurement log-likelihood value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearLlvCoeffs {
    pub m: f64,
    pub c: f64,
}

/// Build the linear coefficients from the two single-shot probabilities.
/// `p_h0 == p_h1` is allowed and yields `M = C = 0` (indistinguishable
/// hypotheses); probabilities of exactly 0 or 1 are rejected.
pub fn linear_coeffs(p_h0: f64, p_h1: f64) -> Result<LinearLlvCoeffs, LlvError> {
    let open = |p: f64| p > 0.0 && p < 1.0;
    if !open(p_h0) || !open(p_h1) {
        return Err(LlvError::DegenerateProbability { p_h0, p_h1 });
    }
    let d = p_h1 - p_h0;
    let m = (d / p_h0).ln_1p() + (d / (1.0 - p_h1)).ln_1p();
    let c = (-d / (1.0 - p_h0)).ln_1p();
    Ok(LinearLlvCoeffs { m, c })
}

/// Log-likelihood value for `x` counts over `k` trials.
pub fn llv(x: u64, k: u64, coeffs: &LinearLlvCoeffs) -> Result<f64, LlvError> {
    if x > k {
        return Err(LlvError::CountExceedsTrials { x, k });
    }
    Ok(coeffs.m * x as f64 + coeffs.c * k as f64)
}

/// Trailing moving mean; the first `n_av - 1` points are not emitted.
pub fn rolling_average(values: &[f64], n_av: usize) -> Result<Vec<f64>, LlvError> {
    if n_av == 0 || n_av > values.len() {
        return Err(LlvError::WindowTooLarge {
            n_av,
            len: values.len(),
        });
    }
    Ok(values
        .windows(n_av)
        .map(|w| w.iter().sum::<f64>() / n_av as f64)
        .collect())
}

/// A labelled sequence of per-measurement log-likelihood values.
#[derive(Debug, Clone, PartialEq)]
pub struct LlvSeries {
    pub values: Vec<f64>,
    pub labels: Vec<Hypothesis>,
    /// Averaging window already applied to `values` (1 = single shot).
    pub n_av: usize,
}

impl LlvSeries {
    pub fn new(values: Vec<f64>, labels: Vec<Hypothesis>) -> Self {
        assert_eq!(values.len(), labels.len(), "one label per value");
        LlvSeries {
            values,
            labels,
            n_av: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values_for(&self, h: Hypothesis) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == h)
            .map(|(v, _)| *v)
            .collect()
    }

    /// Rolling average applied within each contiguous run of one hypothesis
    /// label, so a window never mixes target-present and target-absent data.
    /// Each run of length `L` contributes `L - n_av + 1` output points.
    pub fn rolling(&self, n_av: usize) -> Result<LlvSeries, LlvError> {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut start = 0;
        while start < self.values.len() {
            let label = self.labels[start];
            let mut end = start;
            while end < self.values.len() && self.labels[end] == label {
                end += 1;
            }
            let averaged = rolling_average(&self.values[start..end], n_av)?;
            labels.extend(std::iter::repeat_n(label, averaged.len()));
            values.extend(averaged);
            start = end;
        }
        Ok(LlvSeries {
            values,
            labels,
            n_av,
        })
    }
}

/// Empirical distinguishability `phi = 1 - [(1 - P_D) + P_FA]` at the given
/// threshold: the fraction of target-present points above threshold minus
/// the fraction of target-absent points above it.
pub fn empirical_distinguishability(
    h1_values: &[f64],
    h0_values: &[f64],
    threshold: f64,
) -> Result<f64, LlvError> {
    if h1_values.is_empty() || h0_values.is_empty() {
        return Err(LlvError::EmptySeries);
    }
    let frac_above =
        |vals: &[f64]| vals.iter().filter(|v| **v > threshold).count() as f64 / vals.len() as f64;
    let p_d = frac_above(h1_values);
    let p_fa = frac_above(h0_values);
    Ok(p_d - p_fa)
}

/// Gaussian description of the per-measurement LLV under one hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LlvGaussian {
    pub mu: f64,
    pub sigma: f64,
}

/// Gaussian LLV distribution of counts with success probability `p` over `k`
/// trials, averaged over `n_av` measurements: the count mean is `k p`, its
/// standard deviation `sqrt(k p (1-p))`, and averaging shrinks the LLV
/// spread by `sqrt(n_av)` while leaving the mean unchanged. `k` is a real
/// number so the heralded channel can use the expected idler count.
pub fn analytic_llv_distribution(
    coeffs: &LinearLlvCoeffs,
    p: f64,
    k: f64,
    n_av: f64,
) -> LlvGaussian {
    let mean_counts = k * p;
    let sigma_counts = (k * p * (1.0 - p)).sqrt();
    LlvGaussian {
        mu: coeffs.m * mean_counts + coeffs.c * k,
        sigma: coeffs.m.abs() * sigma_counts / n_av.sqrt(),
    }
}

/// Detection and false-alarm probabilities of the threshold rule
/// `Lambda > threshold` under Gaussian LLV distributions. A zero-width
/// distribution degenerates to a step at its mean.
pub fn analytic_pd_pfa(h1: &LlvGaussian, h0: &LlvGaussian, threshold: f64) -> (f64, f64) {
    let tail = |g: &LlvGaussian| {
        if g.sigma > 0.0 {
            normal::upper_tail((threshold - g.mu) / g.sigma)
        } else if g.mu > threshold {
            1.0
        } else {
            0.0
        }
    };
    (tail(h1), tail(h0))
}

/// Analytic distinguishability at a threshold.
pub fn analytic_distinguishability(h1: &LlvGaussian, h0: &LlvGaussian, threshold: f64) -> f64 {
    let (pd, pfa) = analytic_pd_pfa(h1, h0, threshold);
    pd - pfa
}

/// Receiver-operator curve: `(P_FA, P_D)` pairs over a threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    /// Points sorted by ascending false-alarm probability.
    pub fn sorted_by_pfa(&self) -> Vec<(f64, f64)> {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        pts
    }
}

/// Analytic ROC by scanning the decision threshold over `grid`.
pub fn roc_curve(h1: &LlvGaussian, h0: &LlvGaussian, grid: &[f64]) -> RocCurve {
    let points = grid
        .iter()
        .map(|t| {
            let (pd, pfa) = analytic_pd_pfa(h1, h0, *t);
            (pfa, pd)
        })
        .collect();
    RocCurve { points }
}

/// Empirical ROC from two labelled LLV samples over a threshold grid.
pub fn empirical_roc(h1_values: &[f64], h0_values: &[f64], grid: &[f64]) -> RocCurve {
    let frac_above = |vals: &[f64], t: f64| {
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().filter(|v| **v > t).count() as f64 / vals.len() as f64
        }
    };
    RocCurve {
        points: grid
            .iter()
            .map(|t| (frac_above(h0_values, *t), frac_above(h1_values, *t)))
            .collect(),
    }
}

/// A default threshold grid spanning both Gaussians out to their far tails.
pub fn default_threshold_grid(h1: &LlvGaussian, h0: &LlvGaussian, count: usize) -> Vec<f64> {
    let lo = (h0.mu - 8.0 * h0.sigma).min(h1.mu - 8.0 * h1.sigma);
    let hi = (h0.mu + 8.0 * h0.sigma).max(h1.mu + 8.0 * h1.sigma);
    let n = count.max(2);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Smallest averaging multiplier `f` such that the classical channel,
/// averaged over `f` times as many measurements, yields a ROC that reaches
/// or exceeds `target` at every grid point. `ci_h1`/`ci_h0` must describe
/// the classical LLV at the same averaging window the target curve was
/// computed with. Search is by bracketing and bisection on `f`.
pub fn equivalent_averaging_factor(
    ci_h1: &LlvGaussian,
    ci_h0: &LlvGaussian,
    target: &RocCurve,
) -> Result<f64, LlvError> {
    const LIMIT: f64 = 1e6;
    let dominates = |f: f64| {
        let s = f.sqrt();
        target.points.iter().all(|&(pfa, pd)| {
            if !(1e-12..=1.0 - 1e-12).contains(&pfa) {
                return true;
            }
            if pd <= 1e-15 {
                return true;
            }
            // Threshold achieving this false-alarm level at sigma/sqrt(f).
            let z = normal::inv_cdf(1.0 - pfa);
            let threshold = ci_h0.mu + ci_h0.sigma / s * z;
            let pd_ci = normal::cdf((ci_h1.mu - threshold) * s / ci_h1.sigma);
            pd_ci >= pd - 1e-9
        })
    };

    let mut hi = 1.0;
    while !dominates(hi) {
        hi *= 2.0;
        if hi > LIMIT {
            return Err(LlvError::NoConvergence { limit: LIMIT });
        }
    }
    let mut lo = hi;
    while lo > 1e-9 && dominates(lo) {
        lo /= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if dominates(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
