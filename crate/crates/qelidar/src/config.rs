//! Scenario configuration files.
//!
//! Configs are TOML with a `[system]` section mirroring the system
//! parameters, a `[[schedule]]` block list, and optional `[jamming]`,
//! `[rangefinding]`, `[analysis]` and `[calibration]` sections. Rates and
//! durations accept either bare numbers (hertz / seconds) or strings with a
//! unit suffix (`"2.3 MHz"`, `"0.2 ns"`).

use crate::jamming::{NoiseWaveform, NoiseWaveformKind};
use crate::params::{Hypothesis, RateSpec, SystemParams};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config `{path}`: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("[system] {0}")]
    System(String),
    #[error("invalid system parameters: {0}")]
    InvalidParams(String),
    #[error("{0}")]
    Invalid(String),
}

/// A rate in hertz, deserialised from a number or a suffixed string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateField(pub f64);

impl<'de> Deserialize<'de> for RateField {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) if v.is_finite() && v >= 0.0 => Ok(RateField(v)),
            Raw::Number(v) => Err(D::Error::custom(format!("invalid rate {v}"))),
            Raw::Text(s) => s
                .parse::<RateSpec>()
                .map(|r| RateField(r.hertz()))
                .map_err(D::Error::custom),
        }
    }
}

/// A duration in seconds, deserialised from a number or a suffixed string
/// (`ps`, `ns`, `us`, `ms`, `s`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationField(pub f64);

fn parse_duration(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let (num, scale) = if let Some(v) = t.strip_suffix("ps") {
        (v, 1e-12)
    } else if let Some(v) = t.strip_suffix("ns") {
        (v, 1e-9)
    } else if let Some(v) = t.strip_suffix("us") {
        (v, 1e-6)
    } else if let Some(v) = t.strip_suffix("ms") {
        (v, 1e-3)
    } else if let Some(v) = t.strip_suffix('s') {
        (v, 1.0)
    } else {
        (t, 1.0)
    };
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("invalid duration `{s}`"))?;
    if !value.is_finite() || value < 0.0 {
        return Err(format!(
            "duration must be finite and nonnegative, got `{s}`"
        ));
    }
    Ok(value * scale)
}

impl<'de> Deserialize<'de> for DurationField {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) if v.is_finite() && v >= 0.0 => Ok(DurationField(v)),
            Raw::Number(v) => Err(D::Error::custom(format!("invalid duration {v}"))),
            Raw::Text(s) => parse_duration(&s)
                .map(DurationField)
                .map_err(D::Error::custom),
        }
    }
}

/// The `[system]` section. Photon numbers may be given directly (`n_mean`,
/// `nbg_s`) or as rates (`pair_rate`, `background_rate`); reflectivity
/// directly (`xi`) or as a loss figure (`loss_db`). Background rates are
/// detected rates at the respective detector.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_mean: Option<f64>,
    pub pair_rate: Option<RateField>,
    pub xi: Option<f64>,
    pub loss_db: Option<f64>,
    pub eta_s: f64,
    pub eta_i: f64,
    pub nbg_s: Option<f64>,
    pub background_rate: Option<RateField>,
    #[serde(default)]
    pub nbg_i: Option<f64>,
    #[serde(default)]
    pub idler_background_rate: Option<RateField>,
    pub tau_c: DurationField,
    pub t_int: DurationField,
    #[serde(default = "one")]
    pub gamma: f64,
    /// Heralding shape parameter; omit to let the rangefinding analysis
    /// derive the jitter acceptance itself.
    #[serde(default)]
    pub beta: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl SystemSection {
    pub fn resolve(&self) -> Result<SystemParams, ConfigError> {
        let tau_c = self.tau_c.0;
        if tau_c <= 0.0 {
            return Err(ConfigError::System("tau_c must be positive".into()));
        }
        let n_mean = match (self.n_mean, self.pair_rate) {
            (Some(n), None) => n,
            (None, Some(r)) => r.0 * tau_c,
            (Some(_), Some(_)) => {
                return Err(ConfigError::System(
                    "give n_mean or pair_rate, not both".into(),
                ))
            }
            (None, None) => return Err(ConfigError::System("missing n_mean or pair_rate".into())),
        };
        let xi = match (self.xi, self.loss_db) {
            (Some(x), None) => x,
            (None, Some(db)) => crate::params::reflectivity_from_loss_db(db),
            (Some(_), Some(_)) => {
                return Err(ConfigError::System("give xi or loss_db, not both".into()))
            }
            (None, None) => return Err(ConfigError::System("missing xi or loss_db".into())),
        };
        let nbg_s = match (self.nbg_s, self.background_rate) {
            (Some(n), None) => n,
            (None, Some(r)) => r.0 * tau_c / self.eta_s,
            (Some(_), Some(_)) => {
                return Err(ConfigError::System(
                    "give nbg_s or background_rate, not both".into(),
                ))
            }
            (None, None) => {
                return Err(ConfigError::System(
                    "missing nbg_s or background_rate".into(),
                ))
            }
        };
        let nbg_i = match (self.nbg_i, self.idler_background_rate) {
            (Some(n), None) => n,
            (None, Some(r)) => r.0 * tau_c / self.eta_i,
            (Some(_), Some(_)) => {
                return Err(ConfigError::System(
                    "give nbg_i or idler_background_rate, not both".into(),
                ))
            }
            (None, None) => 0.0,
        };
        let params = SystemParams {
            n_mean,
            xi,
            eta_s: self.eta_s,
            eta_i: self.eta_i,
            nbg_s,
            nbg_i,
            tau_c,
            t_int: self.t_int.0,
            gamma: self.gamma,
            beta: self.beta.unwrap_or(1.0),
        };
        let report = params.validate();
        if !report.is_ok() {
            return Err(ConfigError::InvalidParams(report.to_string()));
        }
        Ok(params)
    }
}

/// One `[[schedule]]` block: a number of consecutive measurements under one
/// hypothesis.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub hypothesis: Hypothesis,
    pub measurements: usize,
}

/// The `[jamming]` section.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JammingSection {
    pub kind: NoiseWaveformKind,
    pub mean_rate: RateField,
    #[serde(default)]
    pub amplitude: Option<RateField>,
    #[serde(default)]
    pub period: Option<DurationField>,
    #[serde(default)]
    pub white_sigma: Option<RateField>,
    /// The waveform stays at its mean until this time (probability
    /// estimation lead-in).
    #[serde(default)]
    pub modulation_start: Option<DurationField>,
}

impl JammingSection {
    pub fn waveform(&self) -> Result<NoiseWaveform, ConfigError> {
        let amplitude = self.amplitude.map_or(0.0, |r| r.0);
        let period = self.period.map_or(1.0, |d| d.0);
        let white_sigma = self.white_sigma.map_or(0.0, |r| r.0);
        let mean = self.mean_rate.0;
        match self.kind {
            NoiseWaveformKind::Sinusoid | NoiseWaveformKind::Composite => {
                if amplitude > mean {
                    return Err(ConfigError::Invalid(
                        "[jamming] amplitude exceeds mean_rate".into(),
                    ));
                }
                if period <= 0.0 {
                    return Err(ConfigError::Invalid(
                        "[jamming] sinusoid requires a positive period".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(match self.kind {
            NoiseWaveformKind::Constant => NoiseWaveform::constant(mean),
            NoiseWaveformKind::Sinusoid => NoiseWaveform::sinusoid(mean, amplitude, period),
            NoiseWaveformKind::White => NoiseWaveform::white(mean, white_sigma),
            NoiseWaveformKind::Composite => {
                NoiseWaveform::composite(mean, amplitude, period, white_sigma)
            }
        })
    }

    pub fn modulation_start(&self) -> f64 {
        self.modulation_start.map_or(0.0, |d| d.0)
    }
}

/// One target position block of a `[rangefinding]` move schedule. A block
/// without a channel index simulates the beam-blocked (no target) case.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionSpec {
    /// Index into `delays`; omit for no target.
    #[serde(default)]
    pub channel: Option<usize>,
    pub measurements: usize,
}

/// The `[rangefinding]` section.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangefindingSection {
    /// Coincidence-channel delays (round-trip times).
    pub delays: Vec<DurationField>,
    /// Channel labels; defaults to x_a, x_b, ...
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    pub positions: Vec<PositionSpec>,
    pub jitter: DurationField,
    #[serde(default)]
    pub histogram_range: Option<DurationField>,
    #[serde(default)]
    pub histogram_bin: Option<DurationField>,
}

/// The `[analysis]` section.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default)]
    pub n_av: Option<usize>,
    #[serde(default)]
    pub nav_sweep: Option<Vec<usize>>,
    #[serde(default)]
    pub threshold_grid: Option<GridSpec>,
    #[serde(default)]
    pub lut: Option<LutSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LutSpec {
    pub min_rate: RateField,
    pub max_rate: RateField,
    pub levels: usize,
}

/// The `[calibration]` section used by the `calibrate` subcommand.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    /// Known source brightness in pairs per second; defaults to the pair
    /// rate implied by the system section.
    #[serde(default)]
    pub brightness: Option<RateField>,
    #[serde(default = "default_cal_measurements")]
    pub measurements: usize,
    /// Number of leading measurements used for the shape-parameter fit.
    #[serde(default = "default_cal_window")]
    pub window: usize,
}

fn default_cal_measurements() -> usize {
    200
}

fn default_cal_window() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Detection,
    Jamming,
    Rangefinding,
}

/// A full scenario configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub system: SystemSection,
    /// Hypothesis blocks for detection/jamming runs; rangefinding uses the
    /// position schedule instead.
    #[serde(default)]
    pub schedule: Vec<BlockSpec>,
    #[serde(default)]
    pub jamming: Option<JammingSection>,
    #[serde(default)]
    pub rangefinding: Option<RangefindingSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub calibration: Option<CalibrationSection>,
}

impl ScenarioConfig {
    pub fn from_str_named(text: &str, path: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            source: Box::new(e),
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str_named(&text, &path.display().to_string())
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.kind != ScenarioKind::Rangefinding {
            if self.schedule.is_empty() {
                return Err(ConfigError::Invalid("schedule must not be empty".into()));
            }
            if self.schedule.iter().any(|b| b.measurements == 0) {
                return Err(ConfigError::Invalid(
                    "every schedule block needs at least one measurement".into(),
                ));
            }
        }
        match self.kind {
            ScenarioKind::Jamming => {
                if self.jamming.is_none() {
                    return Err(ConfigError::Invalid(
                        "jamming scenarios need a [jamming] section".into(),
                    ));
                }
            }
            ScenarioKind::Rangefinding => {
                let r = self.rangefinding.as_ref().ok_or_else(|| {
                    ConfigError::Invalid(
                        "rangefinding scenarios need a [rangefinding] section".into(),
                    )
                })?;
                if r.delays.is_empty() {
                    return Err(ConfigError::Invalid(
                        "[rangefinding] needs at least one delay".into(),
                    ));
                }
                if r.positions.is_empty() {
                    return Err(ConfigError::Invalid(
                        "[rangefinding] needs a position schedule".into(),
                    ));
                }
                if r.positions.iter().any(|p| p.measurements == 0) {
                    return Err(ConfigError::Invalid(
                        "every position block needs at least one measurement".into(),
                    ));
                }
                if let Some(c) = r
                    .positions
                    .iter()
                    .filter_map(|p| p.channel)
                    .find(|c| *c >= r.delays.len())
                {
                    return Err(ConfigError::Invalid(format!(
                        "[rangefinding] position references channel {c} but only {} delays are defined",
                        r.delays.len()
                    )));
                }
                if let Some(labels) = &r.labels {
                    if labels.len() != r.delays.len() {
                        return Err(ConfigError::Invalid(
                            "[rangefinding] labels must match delays in length".into(),
                        ));
                    }
                }
            }
            ScenarioKind::Detection => {}
        }
        // resolve eagerly so field errors surface at load time
        self.system.resolve().map(|_| ())
    }

    /// Total number of scheduled measurements.
    pub fn total_measurements(&self) -> usize {
        self.schedule.iter().map(|b| b.measurements).sum()
    }
}

/// FNV-1a hash of the raw config text, recorded in run metadata so outputs
/// can be traced back to their exact configuration.
pub fn config_hash(text: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
kind = "detection"
seed = 7

[system]
pair_rate = "1.75 MHz"
loss_db = 33.5
eta_s = 0.8736
eta_i = 0.05727
background_rate = "1 MHz"
tau_c = "2 ns"
t_int = "0.1 s"

[[schedule]]
hypothesis = "h1"
measurements = 10

[[schedule]]
hypothesis = "h0"
measurements = 10
"#;

    #[test]
    fn minimal_config_resolves() {
        let cfg = ScenarioConfig::from_str_named(MINIMAL, "test").unwrap();
        let params = cfg.system.resolve().unwrap();
        assert!((params.n_mean - 3.5e-3).abs() < 1e-12);
        assert!((params.xi - 4.4668359215096305e-4).abs() < 1e-12);
        assert!((params.detected_background_rate() - 1e6).abs() < 1e-3);
        assert!((params.tau_c - 2e-9).abs() < 1e-21);
        assert_eq!(cfg.total_measurements(), 20);
        assert_eq!(params.beta, 1.0);
    }

    #[test]
    fn duration_suffixes() {
        let close = |s: &str, v: f64| {
            let got = parse_duration(s).unwrap();
            assert!((got - v).abs() <= 1e-12 * v.abs(), "{s}: {got} vs {v}");
        };
        close("0.2 ns", 0.2e-9);
        close("250ps", 250e-12);
        close("0.1 s", 0.1);
        close("5 ms", 5e-3);
        assert!(parse_duration("heaps").is_err());
    }

    #[test]
    fn conflicting_fields_rejected() {
        let text = MINIMAL.replace(
            "pair_rate = \"1.75 MHz\"",
            "pair_rate = \"1.75 MHz\"\nn_mean = 1e-3",
        );
        let err = ScenarioConfig::from_str_named(&text, "test").unwrap_err();
        assert!(err.to_string().contains("not both"), "{err}");
    }

    #[test]
    fn empty_schedule_rejected() {
        let text = MINIMAL.split("[[schedule]]").next().unwrap().to_string();
        let err = ScenarioConfig::from_str_named(&text, "test").unwrap_err();
        assert!(err.to_string().contains("schedule"), "{err}");
    }

    #[test]
    fn jamming_section_builds_waveform() {
        let text = format!(
            "{}\n[jamming]\nkind = \"composite\"\nmean_rate = \"2.3 MHz\"\namplitude = \"0.3 MHz\"\nperiod = \"30 s\"\nwhite_sigma = \"0.1 MHz\"\n",
            MINIMAL.replace("kind = \"detection\"", "kind = \"jamming\"")
        );
        let cfg = ScenarioConfig::from_str_named(&text, "test").unwrap();
        let w = cfg.jamming.as_ref().unwrap().waveform().unwrap();
        assert_eq!(w.mean_rate, 2.3e6);
        assert_eq!(w.amplitude, 0.3e6);
        assert_eq!(w.white_sigma, 0.1e6);
        let (lo, hi) = w.rate_bounds();
        assert!((lo - 1.7e6).abs() < 1.0);
        assert!((hi - 2.9e6).abs() < 1.0);
    }

    #[test]
    fn jamming_scenario_requires_section() {
        let text = MINIMAL.replace("kind = \"detection\"", "kind = \"jamming\"");
        let err = ScenarioConfig::from_str_named(&text, "test").unwrap_err();
        assert!(err.to_string().contains("[jamming]"), "{err}");
    }

    #[test]
    fn rangefinding_position_bounds_checked() {
        let text = format!(
            "{}\n[rangefinding]\ndelays = [\"1.77 ns\", \"2.52 ns\"]\njitter = \"250 ps\"\npositions = [{{ channel = 5, measurements = 10 }}]\n",
            MINIMAL.replace("kind = \"detection\"", "kind = \"rangefinding\"")
        );
        let err = ScenarioConfig::from_str_named(&text, "test").unwrap_err();
        assert!(err.to_string().contains("channel 5"), "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = format!("{MINIMAL}\nwibble = 3\n");
        assert!(ScenarioConfig::from_str_named(&text, "test").is_err());
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = config_hash(MINIMAL);
        assert_eq!(a, config_hash(MINIMAL));
        assert_ne!(a, config_hash(&format!("{MINIMAL} ")));
    }
}
