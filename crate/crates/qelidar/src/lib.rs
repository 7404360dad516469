//! Event-level simulator and statistical analysis toolkit for
//! coincidence-based quantum-enhanced lidar.
//!
//! The library models a continuously pumped photon-pair source whose idler
//! arm heralds the signal photons probing a weakly reflecting target inside
//! a strong Poissonian background. It provides:
//!
//! - closed-form single-shot click probabilities for classical (CI) and
//!   idler-heralded (QI) detection ([`click_model`]);
//! - the linear log-likelihood detection statistic, distinguishability and
//!   ROC analytics ([`llv`]);
//! - an event-level Monte Carlo of the photonic chain that doubles as the
//!   independent oracle for the closed forms ([`montecarlo`]);
//! - continuous-time tag streams and delayed coincidence counting for
//!   rangefinding ([`timetag`]);
//! - jamming waveforms and look-up-table background tracking ([`jamming`]);
//! - parameter estimation from calibration runs ([`calibration`]);
//! - an experiment harness with a config-file driven CLI ([`scenario`]).

pub mod calibration;
pub mod cli;
pub mod click_model;
pub mod config;
pub mod jamming;
pub mod llv;
pub mod montecarlo;
pub mod normal;
pub mod params;
pub mod report;
pub mod scenario;
pub mod timetag;
