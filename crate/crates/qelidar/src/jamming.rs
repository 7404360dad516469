//! Background/jamming waveforms and the look-up-table protocol that tracks
//! slow background changes from the raw signal counts.

use crate::click_model::{self, ClickProbabilities};
use crate::llv::{self, LinearLlvCoeffs};
use crate::montecarlo::MeasurementRecord;
use crate::params::SystemParams;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JammingError {
    #[error("look-up table needs at least 2 levels, got {0}")]
    TooFewLevels(usize),
    #[error("degenerate level range [{lo}, {hi}] Hz")]
    DegenerateRange { lo: f64, hi: f64 },
    #[error("level {level} Hz produced an unusable click model: {source}")]
    Level {
        level: f64,
        source: click_model::ClickModelError,
    },
    #[error("level {level} Hz produced degenerate coefficients: {source}")]
    Coeffs { level: f64, source: llv::LlvError },
}

/// Shape of the injected background rate as a function of time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseWaveformKind {
    Constant,
    Sinusoid,
    White,
    Composite,
}

/// Detected background count rate waveform. Rates are clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseWaveform {
    pub kind: NoiseWaveformKind,
    /// Mean detected rate in hertz.
    pub mean_rate: f64,
    /// Sinusoid amplitude in hertz.
    pub amplitude: f64,
    /// Sinusoid period in seconds.
    pub period: f64,
    /// Standard deviation of the white component in hertz, redrawn per call.
    pub white_sigma: f64,
}

impl NoiseWaveform {
    pub fn constant(mean_rate: f64) -> Self {
        NoiseWaveform {
            kind: NoiseWaveformKind::Constant,
            mean_rate,
            amplitude: 0.0,
            period: 1.0,
            white_sigma: 0.0,
        }
    }

    pub fn sinusoid(mean_rate: f64, amplitude: f64, period: f64) -> Self {
        assert!(period > 0.0, "period must be positive");
        assert!(
            mean_rate >= amplitude,
            "mean rate must cover the modulation amplitude"
        );
        NoiseWaveform {
            kind: NoiseWaveformKind::Sinusoid,
            mean_rate,
            amplitude,
            period,
            white_sigma: 0.0,
        }
    }

    pub fn white(mean_rate: f64, white_sigma: f64) -> Self {
        NoiseWaveform {
            kind: NoiseWaveformKind::White,
            mean_rate,
            amplitude: 0.0,
            period: 1.0,
            white_sigma,
        }
    }

    pub fn composite(mean_rate: f64, amplitude: f64, period: f64, white_sigma: f64) -> Self {
        assert!(period > 0.0, "period must be positive");
        assert!(
            mean_rate >= amplitude,
            "mean rate must cover the modulation amplitude"
        );
        NoiseWaveform {
            kind: NoiseWaveformKind::Composite,
            mean_rate,
            amplitude,
            period,
            white_sigma,
        }
    }

    /// Smallest and largest rate the deterministic part can reach, padded by
    /// three white-noise standard deviations. Useful for sizing a LUT.
    pub fn rate_bounds(&self) -> (f64, f64) {
        let (amp, sigma) = match self.kind {
            NoiseWaveformKind::Constant => (0.0, 0.0),
            NoiseWaveformKind::Sinusoid => (self.amplitude, 0.0),
            NoiseWaveformKind::White => (0.0, self.white_sigma),
            NoiseWaveformKind::Composite => (self.amplitude, self.white_sigma),
        };
        let lo = (self.mean_rate - amp - 3.0 * sigma).max(0.0);
        let hi = self.mean_rate + amp + 3.0 * sigma;
        (lo, hi)
    }
}

/// Rate at time `t`; the white component consumes one draw from `rng` per
/// call, so call once per measurement.
pub fn instantaneous_rate(waveform: &NoiseWaveform, t: f64, rng: &mut impl Rng) -> f64 {
    assert!(t >= 0.0, "time must be nonnegative");
    let sinusoid = |w: &NoiseWaveform| {
        w.mean_rate + w.amplitude * (2.0 * std::f64::consts::PI * t / w.period).sin()
    };
    let white = |w: &NoiseWaveform, rng: &mut dyn rand::RngCore| {
        if w.white_sigma > 0.0 {
            Normal::new(0.0, w.white_sigma).unwrap().sample(rng)
        } else {
            0.0
        }
    };
    let rate = match waveform.kind {
        NoiseWaveformKind::Constant => waveform.mean_rate,
        NoiseWaveformKind::Sinusoid => sinusoid(waveform),
        NoiseWaveformKind::White => waveform.mean_rate + white(waveform, rng),
        NoiseWaveformKind::Composite => sinusoid(waveform) + white(waveform, rng),
    };
    rate.max(0.0)
}

/// One precomputed background level.
#[derive(Debug, Clone, PartialEq)]
pub struct LutEntry {
    /// Detected background rate this entry was computed for, hertz.
    pub rate: f64,
    pub clicks: ClickProbabilities,
    pub ci: LinearLlvCoeffs,
    pub qi: LinearLlvCoeffs,
}

/// Sorted table of background levels with per-level click probabilities and
/// LLV coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundLut {
    entries: Vec<LutEntry>,
}

impl BackgroundLut {
    pub fn entries(&self) -> &[LutEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index of the level closest to `rate`; equidistant rates resolve to
    /// the lower level.
    pub fn nearest_level(&self, rate: f64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, e) in self.entries.iter().enumerate() {
            let d = (e.rate - rate).abs();
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best
    }

    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(
            w,
            "level_hz,p_h0_qi,p_h1_qi,m_qi,c_qi,p_h0_ci,p_h1_ci,m_ci,c_ci"
        )?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                e.rate,
                e.clicks.p_h0_qi,
                e.clicks.p_h1_qi,
                e.qi.m,
                e.qi.c,
                e.clicks.p_h0_ci,
                e.clicks.p_h1_ci,
                e.ci.m,
                e.ci.c
            )?;
        }
        Ok(())
    }
}

/// Precompute click probabilities and LLV coefficients over `n_levels`
/// equally spaced detected-background rates in `level_range`, keeping all
/// other parameters fixed.
pub fn build_lut(
    params: &SystemParams,
    level_range: (f64, f64),
    n_levels: usize,
) -> Result<BackgroundLut, JammingError> {
    let (lo, hi) = level_range;
    if n_levels < 2 {
        return Err(JammingError::TooFewLevels(n_levels));
    }
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi || lo < 0.0 {
        return Err(JammingError::DegenerateRange { lo, hi });
    }
    let mut entries = Vec::with_capacity(n_levels);
    for i in 0..n_levels {
        let rate = lo + (hi - lo) * i as f64 / (n_levels - 1) as f64;
        let level_params = params.with_background_rate(rate);
        let clicks = click_model::click_probabilities(&level_params).map_err(|source| {
            JammingError::Level {
                level: rate,
                source,
            }
        })?;
        let ci = llv::linear_coeffs(clicks.p_h0_ci, clicks.p_h1_ci).map_err(|source| {
            JammingError::Coeffs {
                level: rate,
                source,
            }
        })?;
        let qi = llv::linear_coeffs(clicks.p_h0_qi, clicks.p_h1_qi).map_err(|source| {
            JammingError::Coeffs {
                level: rate,
                source,
            }
        })?;
        entries.push(LutEntry {
            rate,
            clicks,
            ci,
            qi,
        });
    }
    Ok(BackgroundLut { entries })
}

/// Heralded-channel LLV of one measurement computed with the coefficients of
/// the level closest to the measurement's own background estimate. Returns
/// the LLV and the level index used.
pub fn tracked_llv(measurement: &MeasurementRecord, lut: &BackgroundLut) -> (f64, usize) {
    assert!(!lut.is_empty(), "look-up table must not be empty");
    let level = lut.nearest_level(measurement.background_estimate);
    let entry = &lut.entries[level];
    let value = llv::llv(
        measurement.coincidence_counts,
        measurement.idler_counts,
        &entry.qi,
    )
    .expect("coincidences never exceed idler clicks");
    (value, level)
}

/// Least-squares amplitude of a sinusoid of known period in a uniformly
/// sampled series: fit `a sin + b cos + c` and return `sqrt(a^2 + b^2)`.
pub fn fit_sinusoid_amplitude(series: &[f64], period_samples: f64) -> f64 {
    assert!(period_samples > 0.0, "period must be positive");
    if series.len() < 3 {
        return 0.0;
    }
    let w = 2.0 * std::f64::consts::PI / period_samples;
    // normal equations for the 3-parameter linear model
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for (i, y) in series.iter().enumerate() {
        let t = i as f64;
        let basis = [(w * t).sin(), (w * t).cos(), 1.0];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += basis[r] * basis[c];
            }
            rhs[r] += basis[r] * y;
        }
    }
    // Gaussian elimination with partial pivoting on the 3x3 system.
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        if m[col][col].abs() < 1e-12 {
            return 0.0;
        }
        let pivot_row = m[col];
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / pivot_row[col];
                for (dst, src) in m[row].iter_mut().zip(pivot_row) {
                    *dst -= f * src;
                }
                rhs[row] -= f * rhs[col];
            }
        }
    }
    let a = rhs[0] / m[0][0];
    let b = rhs[1] / m[1][1];
    (a * a + b * b).sqrt()
}
