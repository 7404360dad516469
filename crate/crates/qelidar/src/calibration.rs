//! Parameter estimation from calibration runs: arm efficiencies from a
//! source-only run against the known brightness, target reflectivity from
//! filtered/unfiltered rate ratios, and the two shape parameters fitted to
//! the measured single-shot click fractions.

use crate::click_model;
use crate::montecarlo::MeasurementRecord;
use crate::params::SystemParams;
use serde::Serialize;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("calibration run must contain at least one measurement")]
    EmptyRun,
    #[error(
        "measured {arm} rate {rate:.1} Hz exceeds the source brightness {brightness:.1} pairs/s"
    )]
    RateExceedsBrightness {
        arm: &'static str,
        rate: f64,
        brightness: f64,
    },
    #[error("net {what} rate is negative after dark subtraction ({net:.3} Hz)")]
    NegativeNetRate { what: &'static str, net: f64 },
    #[error("no {param} in [{lo}, {hi}] reproduces the measured click fraction {target:.3e}")]
    NoRoot {
        param: &'static str,
        lo: f64,
        hi: f64,
        target: f64,
    },
    #[error("runs use inconsistent integration times ({a} s vs {b} s)")]
    InconsistentIntegrationTimes { a: f64, b: f64 },
}

/// What the hardware was doing while a run was recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationKind {
    /// Pair source on, no noise, no target attenuation.
    SourceOnly,
    /// Source blocked, noise source active.
    NoiseOnly,
    TargetPresent,
    TargetAbsent,
}

/// A sequence of measurements taken in one calibration configuration.
#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub kind: CalibrationKind,
    /// Integration time per measurement, seconds.
    pub t_int: f64,
    pub records: Vec<MeasurementRecord>,
}

impl CalibrationRun {
    pub fn new(kind: CalibrationKind, t_int: f64, records: Vec<MeasurementRecord>) -> Self {
        assert!(!records.is_empty(), "a calibration run needs measurements");
        CalibrationRun {
            kind,
            t_int,
            records,
        }
    }

    fn duration(&self) -> f64 {
        self.t_int * self.records.len() as f64
    }

    fn total_signal(&self) -> u64 {
        self.records.iter().map(|r| r.signal_counts).sum()
    }

    fn total_idler(&self) -> u64 {
        self.records.iter().map(|r| r.idler_counts).sum()
    }

    pub fn mean_signal_rate(&self) -> f64 {
        self.total_signal() as f64 / self.duration()
    }

    pub fn mean_idler_rate(&self) -> f64 {
        self.total_idler() as f64 / self.duration()
    }
}

/// A fitted value with its statistical error and the method that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub parameter: String,
    pub value: f64,
    pub std_error: f64,
    pub method: String,
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<8} {:>12.6} ± {:>10.2e}  ({})",
            self.parameter, self.value, self.std_error, self.method
        )
    }
}

/// Arm efficiencies from a source-only run and the known pair brightness:
/// the detected rate on each arm divided by the generated pair rate.
pub fn estimate_efficiencies(
    source_only: &CalibrationRun,
    brightness_pairs_per_sec: f64,
) -> Result<(Estimate, Estimate), CalibrationError> {
    if source_only.records.is_empty() {
        return Err(CalibrationError::EmptyRun);
    }
    let duration = source_only.duration();
    let make = |arm: &'static str, counts: u64| -> Result<Estimate, CalibrationError> {
        let rate = counts as f64 / duration;
        if rate > brightness_pairs_per_sec {
            return Err(CalibrationError::RateExceedsBrightness {
                arm,
                rate,
                brightness: brightness_pairs_per_sec,
            });
        }
        Ok(Estimate {
            parameter: format!("eta_{}", if arm == "signal" { "s" } else { "i" }),
            value: rate / brightness_pairs_per_sec,
            // Poisson counting error propagated through the rate ratio.
            std_error: (counts.max(1) as f64).sqrt() / duration / brightness_pairs_per_sec,
            method: format!("{arm} count rate / known source brightness"),
        })
    };
    let eta_s = make("signal", source_only.total_signal())?;
    let eta_i = make("idler", source_only.total_idler())?;
    Ok((eta_s, eta_i))
}

/// Target reflectivity from signal rates with and without the attenuating
/// element, after subtracting the dark/background rate measured with the
/// source blocked.
pub fn estimate_reflectivity(
    with_filter: &CalibrationRun,
    without_filter: &CalibrationRun,
    dark: &CalibrationRun,
) -> Result<Estimate, CalibrationError> {
    for (a, b) in [
        (with_filter.t_int, without_filter.t_int),
        (with_filter.t_int, dark.t_int),
    ] {
        if (a - b).abs() > 1e-12 * a.max(b) {
            return Err(CalibrationError::InconsistentIntegrationTimes { a, b });
        }
    }
    let dark_rate = dark.mean_signal_rate();
    let net_with = with_filter.mean_signal_rate() - dark_rate;
    let net_without = without_filter.mean_signal_rate() - dark_rate;
    if net_with < 0.0 {
        return Err(CalibrationError::NegativeNetRate {
            what: "filtered",
            net: net_with,
        });
    }
    if net_without <= 0.0 {
        return Err(CalibrationError::NegativeNetRate {
            what: "unfiltered",
            net: net_without,
        });
    }
    let xi = net_with / net_without;
    // Poisson errors of the three rates propagated through the ratio.
    let var_rate = |run: &CalibrationRun| run.mean_signal_rate() / run.duration();
    let var_with = var_rate(with_filter) + var_rate(dark);
    let var_without = var_rate(without_filter) + var_rate(dark);
    let rel_var = var_with / net_with.powi(2) + var_without / net_without.powi(2);
    Ok(Estimate {
        parameter: "xi".into(),
        value: xi,
        std_error: xi * rel_var.sqrt(),
        method: "net filtered / net unfiltered signal rate".into(),
    })
}

fn bisect_monotone(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, rel_tol: f64) -> Option<f64> {
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo == 0.0 {
        return Some(lo);
    }
    if f_hi == 0.0 {
        return Some(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return None;
    }
    let (mut a, mut b) = (lo, hi);
    let mut f_a = f_lo;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Some(mid);
        }
        if f_mid.signum() == f_a.signum() {
            a = mid;
            f_a = f_mid;
        } else {
            b = mid;
        }
        if (b - a) <= rel_tol * b.abs() {
            break;
        }
    }
    Some(0.5 * (a + b))
}

const SHAPE_LO: f64 = 1e-3;
const SHAPE_HI: f64 = 1e3;

/// Fit the heralding parameter `beta` and the classical nonlinearity
/// parameter `gamma` so the model's single-shot probabilities reproduce the
/// measured click fractions of the target-present run. Only the first
/// `window` measurements are used, mirroring the estimation protocol; pass
/// `None` for the default of 100.
///
/// Both model probabilities are monotone in their shape parameter, so a
/// bisection on [1e-3, 1e3] finds the unique root; a target fraction
/// outside the bracket (for instance an H1 fraction below the H0 level)
/// yields [`CalibrationError::NoRoot`].
pub fn fit_shape_params(
    h0_run: &CalibrationRun,
    h1_run: &CalibrationRun,
    params: &SystemParams,
    window: Option<usize>,
) -> Result<(Estimate, Estimate), CalibrationError> {
    if h0_run.records.is_empty() || h1_run.records.is_empty() {
        return Err(CalibrationError::EmptyRun);
    }
    let window = window.unwrap_or(100);
    let take = |run: &CalibrationRun| -> Vec<MeasurementRecord> {
        run.records.iter().take(window.max(1)).copied().collect()
    };
    let h1 = take(h1_run);

    // gamma against the classical H1 click fraction
    let k_ci: u64 = h1.iter().map(|r| r.k_ci).sum();
    let x_ci: u64 = h1.iter().map(|r| r.signal_counts).sum();
    let p_ci = x_ci as f64 / k_ci as f64;
    let gamma_objective = |g: f64| {
        let p = SystemParams {
            gamma: g,
            ..*params
        };
        click_model::ci_click_probs(&p).1 - p_ci
    };
    let gamma = bisect_monotone(gamma_objective, SHAPE_LO, SHAPE_HI, 1e-6).ok_or(
        CalibrationError::NoRoot {
            param: "gamma",
            lo: SHAPE_LO,
            hi: SHAPE_HI,
            target: p_ci,
        },
    )?;

    // beta against the heralded H1 click fraction
    let k_qi: u64 = h1.iter().map(|r| r.idler_counts).sum();
    let x_qi: u64 = h1.iter().map(|r| r.coincidence_counts).sum();
    let p_qi = x_qi as f64 / k_qi.max(1) as f64;
    let beta_objective = |b: f64| {
        let p = SystemParams { beta: b, ..*params };
        click_model::qi_click_probs(&p)
            .map(|(_, h1)| h1)
            .unwrap_or(f64::NAN)
            - p_qi
    };
    let beta = bisect_monotone(beta_objective, SHAPE_LO, SHAPE_HI, 1e-6).ok_or(
        CalibrationError::NoRoot {
            param: "beta",
            lo: SHAPE_LO,
            hi: SHAPE_HI,
            target: p_qi,
        },
    )?;

    // Delta-method errors: binomial error of the measured fraction divided
    // by the local slope of the model probability.
    let sigma_p_ci = (p_ci * (1.0 - p_ci) / k_ci as f64).sqrt();
    let dgamma = (gamma * 1e-4).max(1e-9);
    let slope_gamma =
        (gamma_objective(gamma + dgamma) - gamma_objective(gamma - dgamma)) / (2.0 * dgamma);
    let sigma_p_qi = (p_qi * (1.0 - p_qi) / k_qi.max(1) as f64).sqrt();
    let dbeta = (beta * 1e-4).max(1e-9);
    let slope_beta = (beta_objective(beta + dbeta) - beta_objective(beta - dbeta)) / (2.0 * dbeta);

    Ok((
        Estimate {
            parameter: "beta".into(),
            value: beta,
            std_error: sigma_p_qi / slope_beta.abs().max(1e-300),
            method: format!("bisection on heralded H1 click fraction (first {window})"),
        },
        Estimate {
            parameter: "gamma".into(),
            value: gamma,
            std_error: sigma_p_ci / slope_gamma.abs().max(1e-300),
            method: format!("bisection on classical H1 click fraction (first {window})"),
        },
    ))
}

/// Render a calibration report as structured text.
pub fn render_report(estimates: &[Estimate]) -> String {
    let mut out = String::from("parameter       value       std_error  method\n");
    for e in estimates {
        out.push_str(&format!("{e}\n"));
    }
    out
}
