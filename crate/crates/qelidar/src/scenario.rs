//! End-to-end experiment harness: stationary-target detection, jamming with
//! background tracking, and multi-channel coincidence rangefinding.
//!
//! Every run is driven by a [`ScenarioConfig`] plus a seed and produces a
//! [`RunOutput`]: a set of named tables (CSV text) and a [`Summary`], all
//! assembled deterministically so identical inputs give byte-identical
//! artifacts.

use crate::click_model;
use crate::config::{ScenarioConfig, ScenarioKind};
use crate::jamming::{self, BackgroundLut};
use crate::llv::{self, LlvGaussian, LlvSeries};
use crate::montecarlo::{run_measurement, MeasurementRecord, RngSeedPolicy};
use crate::params::{Hypothesis, SystemParams};
use crate::report::{
    DetectionSummary, JammingSummary, RangeBlockStats, RangefindingSummary, Summary,
};
use crate::timetag::{self, CoincidenceChannel, DelayHistogram, JitterModel};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    ClickModel(#[from] click_model::ClickModelError),
    #[error(transparent)]
    Llv(#[from] llv::LlvError),
    #[error(transparent)]
    Jamming(#[from] jamming::JammingError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything a run produces, in memory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Summary,
    /// `(file name, contents)` pairs, written verbatim by [`RunOutput::write_to_dir`].
    pub tables: Vec<(String, String)>,
}

impl RunOutput {
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, contents) in &self.tables {
            std::fs::write(dir.join(name), contents)?;
        }
        std::fs::write(dir.join("summary.json"), self.summary.to_json())?;
        std::fs::write(dir.join("summary.txt"), self.summary.to_text())?;
        Ok(())
    }

    fn metadata(kind: ScenarioKind, seed: u64, hash: u64) -> String {
        format!(
            "{{\n  \"generator\": \"qelidar\",\n  \"version\": \"{}\",\n  \"kind\": \"{}\",\n  \"seed\": {},\n  \"config_hash\": \"{:016x}\"\n}}\n",
            env!("CARGO_PKG_VERSION"),
            kind_name(kind),
            seed,
            hash
        )
    }
}

fn kind_name(kind: ScenarioKind) -> &'static str {
    match kind {
        ScenarioKind::Detection => "detection",
        ScenarioKind::Jamming => "jamming",
        ScenarioKind::Rangefinding => "rangefinding",
    }
}

/// Dispatch a configuration to its scenario runner. `config_text` is the
/// raw file contents; it is copied into the run artifacts and hashed into
/// the metadata.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    config_text: &str,
    seed_override: Option<u64>,
) -> Result<RunOutput, ScenarioError> {
    match cfg.kind {
        ScenarioKind::Detection => run_detection_scenario(cfg, config_text, seed_override),
        ScenarioKind::Jamming => run_jamming_scenario(cfg, config_text, seed_override),
        ScenarioKind::Rangefinding => run_rangefinding_scenario(cfg, config_text, seed_override),
    }
}

fn fmt_cell(v: f64) -> String {
    format!("{v}")
}

fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Rates that characterise one parameter set, derived from the microscopic
/// per-window law: detected background, detected signal excess, true
/// coincidences with the noise source off, and accidentals with the target
/// absent.
struct ChannelRates {
    background_hz: f64,
    excess_hz: f64,
    coincidence_noise_off_hz: f64,
    accidental_hz: f64,
}

fn channel_rates(params: &SystemParams) -> ChannelRates {
    let q1 = crate::montecarlo::window_joint_probs(params, Hypothesis::H1);
    let q0 = crate::montecarlo::window_joint_probs(params, Hypothesis::H0);
    let quiet = SystemParams {
        nbg_s: 0.0,
        ..*params
    };
    let q1_quiet = crate::montecarlo::window_joint_probs(&quiet, Hypothesis::H1);
    ChannelRates {
        background_hz: q0.p_signal() / params.tau_c,
        excess_hz: (q1.p_signal() - q0.p_signal()) / params.tau_c,
        coincidence_noise_off_hz: q1_quiet.p_coincidence() / params.tau_c,
        accidental_hz: q0.p_coincidence() / params.tau_c,
    }
}

/// Analytic LLV Gaussians of one channel at a given averaging window.
struct AnalyticChannel {
    h1: LlvGaussian,
    h0: LlvGaussian,
}

fn analytic_channel(
    coeffs: &llv::LinearLlvCoeffs,
    p_h0: f64,
    p_h1: f64,
    k: f64,
    n_av: f64,
) -> AnalyticChannel {
    AnalyticChannel {
        h1: llv::analytic_llv_distribution(coeffs, p_h1, k, n_av),
        h0: llv::analytic_llv_distribution(coeffs, p_h0, k, n_av),
    }
}

fn default_nav_sweep(max_len: usize) -> Vec<usize> {
    [1usize, 2, 5, 10, 20, 50, 100, 150, 200, 300, 500]
        .into_iter()
        .filter(|n| *n <= max_len)
        .collect()
}

/// Threshold grid covering both channels' LLV ranges.
fn merged_threshold_grid(a: &AnalyticChannel, b: &AnalyticChannel) -> Vec<f64> {
    let mut grid = llv::default_threshold_grid(&a.h1, &a.h0, 201);
    grid.extend(llv::default_threshold_grid(&b.h1, &b.h0, 201));
    grid.sort_by(|x, y| x.partial_cmp(y).unwrap());
    grid.dedup();
    grid
}

/// Simulate the scheduled measurement blocks at fixed parameters.
fn simulate_schedule(
    cfg: &ScenarioConfig,
    params: &SystemParams,
    policy: &RngSeedPolicy,
) -> (Vec<MeasurementRecord>, Vec<Hypothesis>) {
    let mut records = Vec::with_capacity(cfg.total_measurements());
    let mut labels = Vec::with_capacity(cfg.total_measurements());
    for (block_idx, block) in cfg.schedule.iter().enumerate() {
        for i in 0..block.measurements {
            let mut rng = policy.stream(block_idx as u64, i as u64);
            records.push(run_measurement(params, block.hypothesis, &mut rng));
            labels.push(block.hypothesis);
        }
    }
    (records, labels)
}

fn llv_series(
    records: &[MeasurementRecord],
    labels: &[Hypothesis],
    coeffs_ci: &llv::LinearLlvCoeffs,
    coeffs_qi: &llv::LinearLlvCoeffs,
) -> Result<(LlvSeries, LlvSeries), ScenarioError> {
    let mut ci = Vec::with_capacity(records.len());
    let mut qi = Vec::with_capacity(records.len());
    for r in records {
        ci.push(llv::llv(r.signal_counts, r.k_ci, coeffs_ci)?);
        qi.push(llv::llv(r.coincidence_counts, r.idler_counts, coeffs_qi)?);
    }
    Ok((
        LlvSeries::new(ci, labels.to_vec()),
        LlvSeries::new(qi, labels.to_vec()),
    ))
}

fn phi_pair(series: &LlvSeries, n_av: usize) -> Result<(f64, f64), ScenarioError> {
    let single = llv::empirical_distinguishability(
        &series.values_for(Hypothesis::H1),
        &series.values_for(Hypothesis::H0),
        0.0,
    )?;
    let rolled = series.rolling(n_av)?;
    let avg = llv::empirical_distinguishability(
        &rolled.values_for(Hypothesis::H1),
        &rolled.values_for(Hypothesis::H0),
        0.0,
    )?;
    Ok((single, avg))
}

/// Pad a per-block rolled series back to row alignment: the first
/// `n_av - 1` rows of each block have no averaged value.
fn aligned_rolled(series: &LlvSeries, n_av: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; series.values.len()];
    let mut start = 0;
    while start < series.values.len() {
        let label = series.labels[start];
        let mut end = start;
        while end < series.values.len() && series.labels[end] == label {
            end += 1;
        }
        if end - start >= n_av {
            let rolled = llv::rolling_average(&series.values[start..end], n_av).unwrap();
            for (j, v) in rolled.into_iter().enumerate() {
                out[start + n_av - 1 + j] = Some(v);
            }
        }
        start = end;
    }
    out
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt_cell).unwrap_or_default()
}

/// Stationary-target detection and its performance analysis.
pub fn run_detection_scenario(
    cfg: &ScenarioConfig,
    config_text: &str,
    seed_override: Option<u64>,
) -> Result<RunOutput, ScenarioError> {
    let seed = seed_override.unwrap_or(cfg.seed);
    let params = cfg.system.resolve()?;
    let policy = RngSeedPolicy::new(seed);
    let n_av = cfg.analysis.n_av.unwrap_or(50);

    let clicks = click_model::click_probabilities(&params)?;
    let coeffs_ci = llv::linear_coeffs(clicks.p_h0_ci, clicks.p_h1_ci)?;
    let coeffs_qi = llv::linear_coeffs(clicks.p_h0_qi, clicks.p_h1_qi)?;

    let (records, labels) = simulate_schedule(cfg, &params, &policy);
    let (ci_series, qi_series) = llv_series(&records, &labels, &coeffs_ci, &coeffs_qi)?;

    let (phi_ci_single, phi_ci_avg) = phi_pair(&ci_series, n_av)?;
    let (phi_qi_single, phi_qi_avg) = phi_pair(&qi_series, n_av)?;

    // Analytic description: CI uses the full window count, the heralded
    // channel the expected number of idler firings.
    let k_ci = params.ci_trials() as f64;
    let k_qi = k_ci * clicks.p_idler;
    let ci_1 = analytic_channel(&coeffs_ci, clicks.p_h0_ci, clicks.p_h1_ci, k_ci, 1.0);
    let qi_1 = analytic_channel(&coeffs_qi, clicks.p_h0_qi, clicks.p_h1_qi, k_qi, 1.0);
    let ci_n = analytic_channel(
        &coeffs_ci,
        clicks.p_h0_ci,
        clicks.p_h1_ci,
        k_ci,
        n_av as f64,
    );
    let qi_n = analytic_channel(
        &coeffs_qi,
        clicks.p_h0_qi,
        clicks.p_h1_qi,
        k_qi,
        n_av as f64,
    );

    let (_, pfa_ci_analytic) = llv::analytic_pd_pfa(&ci_n.h1, &ci_n.h0, 0.0);
    let (_, pfa_qi_analytic) = llv::analytic_pd_pfa(&qi_n.h1, &qi_n.h0, 0.0);

    let grid = match &cfg.analysis.threshold_grid {
        Some(g) => (0..g.count.max(2))
            .map(|i| g.min + (g.max - g.min) * i as f64 / (g.count.max(2) - 1) as f64)
            .collect::<Vec<_>>(),
        None => merged_threshold_grid(&qi_n, &ci_n),
    };
    let roc_qi = llv::roc_curve(&qi_n.h1, &qi_n.h0, &grid);
    let roc_ci = llv::roc_curve(&ci_n.h1, &ci_n.h0, &grid);
    let qi_rolled = qi_series.rolling(n_av)?;
    let ci_rolled = ci_series.rolling(n_av)?;
    let roc_qi_emp = llv::empirical_roc(
        &qi_rolled.values_for(Hypothesis::H1),
        &qi_rolled.values_for(Hypothesis::H0),
        &grid,
    );
    let roc_ci_emp = llv::empirical_roc(
        &ci_rolled.values_for(Hypothesis::H1),
        &ci_rolled.values_for(Hypothesis::H0),
        &grid,
    );

    let factor = llv::equivalent_averaging_factor(&ci_n.h1, &ci_n.h0, &roc_qi).ok();

    let rates = channel_rates(&params);
    let detection = DetectionSummary {
        phi_ci_single,
        phi_qi_single,
        phi_ci_avg,
        phi_qi_avg,
        phi_ci_single_analytic: llv::analytic_distinguishability(&ci_1.h1, &ci_1.h0, 0.0),
        phi_qi_single_analytic: llv::analytic_distinguishability(&qi_1.h1, &qi_1.h0, 0.0),
        phi_ci_avg_analytic: llv::analytic_distinguishability(&ci_n.h1, &ci_n.h0, 0.0),
        phi_qi_avg_analytic: llv::analytic_distinguishability(&qi_n.h1, &qi_n.h0, 0.0),
        pfa_ci_analytic,
        pfa_qi_analytic,
        signal_excess_rate_hz: rates.excess_hz,
        background_rate_hz: rates.background_hz,
        coincidence_rate_noise_off_hz: rates.coincidence_noise_off_hz,
        accidental_rate_hz: rates.accidental_hz,
        snr_ci_db: db(rates.excess_hz / rates.background_hz),
        snr_qi_db: db(rates.coincidence_noise_off_hz / rates.accidental_hz),
        equivalent_averaging_factor: factor,
    };

    // measurements.csv
    let ci_avg_cells = aligned_rolled(&ci_series, n_av);
    let qi_avg_cells = aligned_rolled(&qi_series, n_av);
    let mut table =
        String::from("index,hypothesis,x_ci,k_ci,x_qi,k_qi,llv_ci,llv_qi,llv_ci_avg,llv_qi_avg\n");
    for (i, r) in records.iter().enumerate() {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{}",
            i,
            labels[i],
            r.signal_counts,
            r.k_ci,
            r.coincidence_counts,
            r.idler_counts,
            fmt_cell(ci_series.values[i]),
            fmt_cell(qi_series.values[i]),
            opt_cell(ci_avg_cells[i]),
            opt_cell(qi_avg_cells[i]),
        );
    }

    // phi_vs_nav.csv
    let min_block = cfg
        .schedule
        .iter()
        .map(|b| b.measurements)
        .min()
        .unwrap_or(1);
    let navs = cfg
        .analysis
        .nav_sweep
        .clone()
        .unwrap_or_else(|| default_nav_sweep(min_block));
    let mut sweep = String::from("n_av,phi_ci_emp,phi_qi_emp,phi_ci_analytic,phi_qi_analytic\n");
    for n in navs {
        let (_, pc) = phi_pair(&ci_series, n)?;
        let (_, pq) = phi_pair(&qi_series, n)?;
        let ci_a = analytic_channel(&coeffs_ci, clicks.p_h0_ci, clicks.p_h1_ci, k_ci, n as f64);
        let qi_a = analytic_channel(&coeffs_qi, clicks.p_h0_qi, clicks.p_h1_qi, k_qi, n as f64);
        let _ = writeln!(
            sweep,
            "{},{},{},{},{}",
            n,
            fmt_cell(pc),
            fmt_cell(pq),
            fmt_cell(llv::analytic_distinguishability(&ci_a.h1, &ci_a.h0, 0.0)),
            fmt_cell(llv::analytic_distinguishability(&qi_a.h1, &qi_a.h0, 0.0)),
        );
    }

    // roc.csv
    let mut roc = String::from(
        "threshold,pfa_qi,pd_qi,pfa_ci,pd_ci,pfa_qi_emp,pd_qi_emp,pfa_ci_emp,pd_ci_emp\n",
    );
    for (i, t) in grid.iter().enumerate() {
        let _ = writeln!(
            roc,
            "{},{},{},{},{},{},{},{},{}",
            fmt_cell(*t),
            fmt_cell(roc_qi.points[i].0),
            fmt_cell(roc_qi.points[i].1),
            fmt_cell(roc_ci.points[i].0),
            fmt_cell(roc_ci.points[i].1),
            fmt_cell(roc_qi_emp.points[i].0),
            fmt_cell(roc_qi_emp.points[i].1),
            fmt_cell(roc_ci_emp.points[i].0),
            fmt_cell(roc_ci_emp.points[i].1),
        );
    }

    let hash = crate::config::config_hash(config_text);
    Ok(RunOutput {
        summary: Summary {
            version: env!("CARGO_PKG_VERSION").into(),
            kind: kind_name(cfg.kind).into(),
            seed,
            config_hash: format!("{hash:016x}"),
            n_av,
            detection: Some(detection),
            jamming: None,
            rangefinding: None,
        },
        tables: vec![
            ("config.toml".into(), config_text.to_string()),
            (
                "metadata.json".into(),
                RunOutput::metadata(cfg.kind, seed, hash),
            ),
            ("measurements.csv".into(), table),
            ("phi_vs_nav.csv".into(), sweep),
            ("roc.csv".into(), roc),
        ],
    })
}

fn count_zero_crossings(values: &[f64]) -> usize {
    values
        .windows(2)
        .filter(|w| (w[0] > 0.0) != (w[1] > 0.0))
        .count()
}

/// Jamming run: modulated background, static analysis coefficients for the
/// classical channel and the untracked heralded channel, plus the
/// look-up-table tracked heralded channel.
pub fn run_jamming_scenario(
    cfg: &ScenarioConfig,
    config_text: &str,
    seed_override: Option<u64>,
) -> Result<RunOutput, ScenarioError> {
    let seed = seed_override.unwrap_or(cfg.seed);
    let params = cfg.system.resolve()?;
    let policy = RngSeedPolicy::new(seed);
    let n_av = cfg.analysis.n_av.unwrap_or(50);
    let section = cfg
        .jamming
        .as_ref()
        .expect("config check guarantees a jamming section");
    let waveform = section.waveform()?;
    let modulation_start = section.modulation_start();

    // Static analysis at the waveform mean.
    let static_params = params.with_background_rate(waveform.mean_rate);
    let clicks = click_model::click_probabilities(&static_params)?;
    let coeffs_ci = llv::linear_coeffs(clicks.p_h0_ci, clicks.p_h1_ci)?;
    let coeffs_qi = llv::linear_coeffs(clicks.p_h0_qi, clicks.p_h1_qi)?;

    let (lut_lo, lut_hi, lut_levels) = match &cfg.analysis.lut {
        Some(spec) => (spec.min_rate.0, spec.max_rate.0, spec.levels),
        None => {
            let (lo, hi) = waveform.rate_bounds();
            (lo, hi, 25)
        }
    };
    let lut: BackgroundLut = jamming::build_lut(&static_params, (lut_lo, lut_hi), lut_levels)?;

    // Noise draws use a dedicated stream so measurement statistics stay
    // independent of the waveform sampling.
    const NOISE_BLOCK: u64 = 0xFFFF_FFFF_0000_0001;
    let t_int = params.t_int;

    struct Row {
        hypothesis: Hypothesis,
        rate: f64,
        record: MeasurementRecord,
        level: usize,
        llv_ci: f64,
        llv_qi_untracked: f64,
        llv_qi_tracked: f64,
        modulated: bool,
        in_block_index: usize,
    }

    let mut rows: Vec<Row> = Vec::with_capacity(cfg.total_measurements());
    let mut global = 0u64;
    for (block_idx, block) in cfg.schedule.iter().enumerate() {
        for i in 0..block.measurements {
            let t = global as f64 * t_int;
            let rate = if t < modulation_start {
                waveform.mean_rate
            } else {
                jamming::instantaneous_rate(
                    &waveform,
                    t - modulation_start,
                    &mut policy.stream(NOISE_BLOCK, global),
                )
            };
            let step_params = params.with_background_rate(rate);
            let mut rng = policy.stream(block_idx as u64, i as u64);
            let record = run_measurement(&step_params, block.hypothesis, &mut rng);
            let (llv_qi_tracked, level) = jamming::tracked_llv(&record, &lut);
            rows.push(Row {
                hypothesis: block.hypothesis,
                rate,
                record,
                level,
                llv_ci: llv::llv(record.signal_counts, record.k_ci, &coeffs_ci)?,
                llv_qi_untracked: llv::llv(
                    record.coincidence_counts,
                    record.idler_counts,
                    &coeffs_qi,
                )?,
                llv_qi_tracked,
                modulated: t >= modulation_start,
                in_block_index: i,
            });
            global += 1;
        }
    }

    let labels: Vec<Hypothesis> = rows.iter().map(|r| r.hypothesis).collect();
    let ci_series = LlvSeries::new(rows.iter().map(|r| r.llv_ci).collect(), labels.clone());
    let unt_series = LlvSeries::new(
        rows.iter().map(|r| r.llv_qi_untracked).collect(),
        labels.clone(),
    );
    let trk_series = LlvSeries::new(
        rows.iter().map(|r| r.llv_qi_tracked).collect(),
        labels.clone(),
    );

    // Empirical phi over the modulated portion of each block.
    let modulated_from_index = rows
        .iter()
        .filter(|r| r.hypothesis == cfg.schedule[0].hypothesis)
        .position(|r| r.modulated)
        .unwrap_or(0);
    let modulated_values = |series: &LlvSeries, h: Hypothesis| -> Vec<f64> {
        series
            .values
            .iter()
            .zip(&rows)
            .filter(|(_, r)| r.hypothesis == h && r.in_block_index >= modulated_from_index)
            .map(|(v, _)| *v)
            .collect()
    };
    let phi_single = |series: &LlvSeries| -> Result<f64, ScenarioError> {
        Ok(llv::empirical_distinguishability(
            &modulated_values(series, Hypothesis::H1),
            &modulated_values(series, Hypothesis::H0),
            0.0,
        )?)
    };
    let phi_ci_single = phi_single(&ci_series)?;
    let phi_qi_untracked_single = phi_single(&unt_series)?;
    let phi_qi_tracked_single = phi_single(&trk_series)?;

    // Residual sinusoid amplitude on the modulated portion.
    let period_samples = waveform.period / t_int;
    let amp = |series: &LlvSeries, h: Hypothesis| {
        jamming::fit_sinusoid_amplitude(&modulated_values(series, h), period_samples)
    };

    // Zero crossings of the averaged classical series per block.
    let ci_rolled = ci_series.rolling(n_av.min(rows.len()))?;
    let crossings_h1 = count_zero_crossings(&ci_rolled.values_for(Hypothesis::H1));
    let crossings_h0 = count_zero_crossings(&ci_rolled.values_for(Hypothesis::H0));

    let summary_jamming = JammingSummary {
        phi_ci_single,
        phi_qi_tracked_single,
        phi_qi_untracked_single,
        sinusoid_amp_untracked_h1: amp(&unt_series, Hypothesis::H1),
        sinusoid_amp_untracked_h0: amp(&unt_series, Hypothesis::H0),
        sinusoid_amp_tracked_h1: amp(&trk_series, Hypothesis::H1),
        sinusoid_amp_tracked_h0: amp(&trk_series, Hypothesis::H0),
        zero_crossings_ci_avg_h1: crossings_h1,
        zero_crossings_ci_avg_h0: crossings_h0,
        lut_levels,
        lut_min_rate_hz: lut_lo,
        lut_max_rate_hz: lut_hi,
        modulated_from_index,
    };

    let ci_avg_cells = aligned_rolled(&ci_series, n_av);
    let unt_avg_cells = aligned_rolled(&unt_series, n_av);
    let trk_avg_cells = aligned_rolled(&trk_series, n_av);
    let mut table = String::from(
        "index,hypothesis,bg_rate_hz,x_ci,k_ci,x_qi,k_qi,bg_estimate_hz,lut_level,llv_ci,llv_qi_untracked,llv_qi_tracked,llv_ci_avg,llv_qi_untracked_avg,llv_qi_tracked_avg\n",
    );
    for (i, row) in rows.iter().enumerate() {
        let r = &row.record;
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            i,
            row.hypothesis,
            fmt_cell(row.rate),
            r.signal_counts,
            r.k_ci,
            r.coincidence_counts,
            r.idler_counts,
            fmt_cell(r.background_estimate),
            row.level,
            fmt_cell(row.llv_ci),
            fmt_cell(row.llv_qi_untracked),
            fmt_cell(row.llv_qi_tracked),
            opt_cell(ci_avg_cells[i]),
            opt_cell(unt_avg_cells[i]),
            opt_cell(trk_avg_cells[i]),
        );
    }

    let mut lut_csv = Vec::new();
    lut.write_csv(&mut lut_csv)?;

    let hash = crate::config::config_hash(config_text);
    Ok(RunOutput {
        summary: Summary {
            version: env!("CARGO_PKG_VERSION").into(),
            kind: kind_name(cfg.kind).into(),
            seed,
            config_hash: format!("{hash:016x}"),
            n_av,
            detection: None,
            jamming: Some(summary_jamming),
            rangefinding: None,
        },
        tables: vec![
            ("config.toml".into(), config_text.to_string()),
            (
                "metadata.json".into(),
                RunOutput::metadata(cfg.kind, seed, hash),
            ),
            ("measurements.csv".into(), table),
            (
                "lut.csv".into(),
                String::from_utf8(lut_csv).expect("csv is utf8"),
            ),
        ],
    })
}

/// Rangefinding run: per-measurement time-tag streams, parallel coincidence
/// channels, per-channel LLV and the signal-idler delay histogram.
pub fn run_rangefinding_scenario(
    cfg: &ScenarioConfig,
    config_text: &str,
    seed_override: Option<u64>,
) -> Result<RunOutput, ScenarioError> {
    let seed = seed_override.unwrap_or(cfg.seed);
    let params = cfg.system.resolve()?;
    let policy = RngSeedPolicy::new(seed);
    let n_av = cfg.analysis.n_av.unwrap_or(50);
    let section = cfg
        .rangefinding
        .as_ref()
        .expect("config check guarantees a rangefinding section");

    let jitter = JitterModel::new(section.jitter.0);
    let delays: Vec<f64> = section.delays.iter().map(|d| d.0).collect();
    let labels: Vec<String> = match &section.labels {
        Some(l) => l.clone(),
        None => (0..delays.len())
            .map(|i| format!("x_{}", (b'a' + i as u8) as char))
            .collect(),
    };
    let channels: Vec<CoincidenceChannel> = delays
        .iter()
        .zip(&labels)
        .map(|(d, l)| CoincidenceChannel::new(*d, params.tau_c, l.clone()))
        .collect();

    // The jitter acceptance of the coincidence window enters the heralded
    // click probability as the beta shape parameter unless the config pins
    // beta explicitly.
    let beta_used = match cfg.system.beta {
        Some(b) => b,
        None => jitter.window_acceptance(params.tau_c),
    };
    let analysis_params = SystemParams {
        beta: beta_used,
        ..params
    };
    let clicks = click_model::click_probabilities(&analysis_params)?;
    let coeffs_qi = llv::linear_coeffs(clicks.p_h0_qi, clicks.p_h1_qi)?;

    // Optional slow jamming of the background during rangefinding.
    let waveform = cfg.jamming.as_ref().map(|j| j.waveform()).transpose()?;
    const NOISE_BLOCK: u64 = 0xFFFF_FFFF_0000_0002;

    let hist_range = section.histogram_range.map_or(5e-9, |d| d.0);
    let hist_bin = section.histogram_bin.map_or(25e-12, |d| d.0);
    // One histogram per position block (each block has its own delay peak)
    // plus the combined view.
    let mut block_histograms: Vec<DelayHistogram> = section
        .positions
        .iter()
        .map(|_| DelayHistogram::new(hist_range, hist_bin))
        .collect();

    struct Row {
        position: Option<usize>,
        signal: u64,
        idler: u64,
        coincidences: Vec<u64>,
        llv: Vec<f64>,
    }

    let mut rows: Vec<Row> = Vec::new();
    let mut block_bounds = Vec::new(); // (start_row, true_channel)
    let mut global = 0u64;
    for (block_idx, position) in section.positions.iter().enumerate() {
        block_bounds.push((rows.len(), position.channel, position.measurements));
        for i in 0..position.measurements {
            let rate = match &waveform {
                Some(w) => jamming::instantaneous_rate(
                    w,
                    global as f64 * params.t_int,
                    &mut policy.stream(NOISE_BLOCK, global),
                ),
                None => params.detected_background_rate(),
            };
            let step_params = match position.channel {
                Some(_) => params.with_background_rate(rate),
                // beam block: no signal return
                None => params.with_background_rate(rate).with_target_absent(),
            };
            let delay = position.channel.map_or(0.0, |c| delays[c]);
            let mut rng = policy.stream(block_idx as u64, i as u64);
            let stream =
                timetag::generate_stream(&step_params, delay, jitter, params.t_int, &mut rng);
            let counted = timetag::count_coincidences(&stream, &channels, params.t_int);
            // tags jittered past t_int can open a second bin; fold it back
            let coincidences: Vec<u64> = counted
                .iter()
                .map(|bins| bins.iter().map(|r| r.coincidence_counts).sum())
                .collect();
            let signal: u64 = counted[0].iter().map(|r| r.signal_counts).sum();
            let idler: u64 = counted[0].iter().map(|r| r.idler_counts).sum();
            let llv: Vec<f64> = coincidences
                .iter()
                .map(|x| llv::llv(*x, idler, &coeffs_qi))
                .collect::<Result<_, _>>()?;
            block_histograms[block_idx].add_stream(&stream);
            rows.push(Row {
                position: position.channel,
                signal,
                idler,
                coincidences,
                llv,
            });
            global += 1;
        }
    }

    // Per-block rolled LLV, positive fractions and delay-peak statistics.
    let window_half_ps = ((4.0 * jitter.sigma * std::f64::consts::SQRT_2 * 1e12).round() as u64)
        .max(10 * ((hist_bin * 1e12).round() as u64));
    let mut blocks = Vec::new();
    let mut rolled_cells: Vec<Vec<Option<f64>>> = vec![vec![None; rows.len()]; channels.len()];
    for (block_idx, &(start, true_channel, len)) in block_bounds.iter().enumerate() {
        let mut positive_fraction = Vec::with_capacity(channels.len());
        for (ch, cells) in rolled_cells.iter_mut().enumerate() {
            let series: Vec<f64> = rows[start..start + len].iter().map(|r| r.llv[ch]).collect();
            if len >= n_av {
                let rolled = llv::rolling_average(&series, n_av)?;
                let positive = rolled.iter().filter(|v| **v > 0.0).count();
                positive_fraction.push(positive as f64 / rolled.len() as f64);
                for (j, v) in rolled.into_iter().enumerate() {
                    cells[start + n_av - 1 + j] = Some(v);
                }
            } else {
                positive_fraction.push(f64::NAN);
            }
        }
        let peak = match true_channel {
            Some(_) => block_histograms[block_idx].peak_stats(window_half_ps),
            None => None,
        };
        blocks.push(RangeBlockStats {
            block: block_idx,
            true_channel,
            position_label: true_channel
                .map(|c| labels[c].clone())
                .unwrap_or_else(|| "none".into()),
            positive_fraction,
            histogram_peak_ps: peak.map(|p| p.center_ps),
            histogram_std_ps: peak.map(|p| p.std_ps),
        });
    }

    let summary_range = RangefindingSummary {
        channel_labels: labels.clone(),
        beta_used,
        blocks,
    };

    // measurements.csv
    let mut header = String::from("index,position,x_ci,k_ci,k_qi");
    for l in &labels {
        let _ = write!(header, ",x_qi_{l}");
    }
    for l in &labels {
        let _ = write!(header, ",llv_{l}");
    }
    for l in &labels {
        let _ = write!(header, ",llv_avg_{l}");
    }
    let mut table = header;
    table.push('\n');
    let k_ci = params.ci_trials();
    for (i, row) in rows.iter().enumerate() {
        let _ = write!(
            table,
            "{},{},{},{},{}",
            i,
            row.position
                .map(|c| labels[c].clone())
                .unwrap_or_else(|| "none".into()),
            row.signal,
            k_ci,
            row.idler
        );
        for x in &row.coincidences {
            let _ = write!(table, ",{x}");
        }
        for v in &row.llv {
            let _ = write!(table, ",{}", fmt_cell(*v));
        }
        for cells in &rolled_cells {
            let _ = write!(table, ",{}", opt_cell(cells[i]));
        }
        table.push('\n');
    }

    let mut combined = DelayHistogram::new(hist_range, hist_bin);
    for h in &block_histograms {
        for (acc, c) in combined.counts.iter_mut().zip(&h.counts) {
            *acc += c;
        }
    }
    let mut tables = vec![
        ("config.toml".to_string(), config_text.to_string()),
        (
            "metadata.json".to_string(),
            RunOutput::metadata(cfg.kind, seed, crate::config::config_hash(config_text)),
        ),
        ("measurements.csv".to_string(), table),
    ];
    let mut hist_csv = Vec::new();
    combined.write_csv(&mut hist_csv)?;
    tables.push((
        "histogram.csv".into(),
        String::from_utf8(hist_csv).expect("csv is utf8"),
    ));
    for (i, h) in block_histograms.iter().enumerate() {
        let mut csv = Vec::new();
        h.write_csv(&mut csv)?;
        tables.push((
            format!("histogram_block{i}.csv"),
            String::from_utf8(csv).expect("csv is utf8"),
        ));
    }

    let hash = crate::config::config_hash(config_text);
    Ok(RunOutput {
        summary: Summary {
            version: env!("CARGO_PKG_VERSION").into(),
            kind: kind_name(cfg.kind).into(),
            seed,
            config_hash: format!("{hash:016x}"),
            n_av,
            detection: None,
            jamming: None,
            rangefinding: Some(summary_range),
        },
        tables,
    })
}

/// Full calibration pipeline over simulated data: arm efficiencies from a
/// source-only run, reflectivity from filtered/unfiltered/dark runs, and
/// the beta/gamma fit on target-present data.
#[derive(Debug)]
pub struct CalibrationOutput {
    pub truth: SystemParams,
    pub estimates: Vec<crate::calibration::Estimate>,
    pub report_text: String,
}

pub fn run_calibration_scenario(
    cfg: &ScenarioConfig,
    seed_override: Option<u64>,
) -> Result<CalibrationOutput, ScenarioError> {
    let seed = seed_override.unwrap_or(cfg.seed);
    let truth = cfg.system.resolve()?;
    let (brightness, measurements, window) = match &cfg.calibration {
        Some(c) => (
            c.brightness.map_or(truth.pair_rate(), |r| r.0),
            c.measurements,
            c.window,
        ),
        None => (truth.pair_rate(), 200, 100),
    };
    calibration_roundtrip(&truth, brightness, measurements, window, seed)
}

/// Simulate the four calibration configurations at a known ground truth and
/// run the estimation pipeline over them.
pub fn calibration_roundtrip(
    truth: &SystemParams,
    brightness: f64,
    measurements: usize,
    window: usize,
    seed: u64,
) -> Result<CalibrationOutput, ScenarioError> {
    use crate::calibration::{
        estimate_efficiencies, estimate_reflectivity, fit_shape_params, CalibrationKind,
        CalibrationRun,
    };
    let truth = *truth;
    let policy = RngSeedPolicy::new(seed);

    let simulate = |p: &SystemParams, hyp: Hypothesis, block: u64| -> Vec<MeasurementRecord> {
        (0..measurements)
            .map(|i| run_measurement(p, hyp, &mut policy.stream(block, i as u64)))
            .collect()
    };

    // Arm efficiencies: source only, no noise, no attenuation.
    let source_params = SystemParams {
        xi: 1.0,
        nbg_s: 0.0,
        nbg_i: 0.0,
        ..truth
    };
    let source_run = CalibrationRun::new(
        CalibrationKind::SourceOnly,
        truth.t_int,
        simulate(&source_params, Hypothesis::H1, 0),
    );
    let (eta_s, eta_i) = estimate_efficiencies(&source_run, brightness)
        .map_err(|e| ScenarioError::Io(std::io::Error::other(e.to_string())))?;

    // Reflectivity: filter in/out against a residual dark rate with the
    // noise source disabled.
    let dark_rate = 200.0;
    let dark_params = SystemParams {
        n_mean: 0.0,
        ..truth.with_background_rate(dark_rate)
    };
    let with_params = SystemParams {
        n_mean: truth.n_mean,
        ..dark_params
    };
    let without_params = SystemParams {
        xi: 1.0,
        ..with_params
    };
    let dark_run = CalibrationRun::new(
        CalibrationKind::NoiseOnly,
        truth.t_int,
        simulate(&dark_params, Hypothesis::H1, 1),
    );
    let with_run = CalibrationRun::new(
        CalibrationKind::TargetPresent,
        truth.t_int,
        simulate(&with_params, Hypothesis::H1, 2),
    );
    let without_run = CalibrationRun::new(
        CalibrationKind::TargetPresent,
        truth.t_int,
        simulate(&without_params, Hypothesis::H1, 3),
    );
    let xi = estimate_reflectivity(&with_run, &without_run, &dark_run)
        .map_err(|e| ScenarioError::Io(std::io::Error::other(e.to_string())))?;

    // Shape parameters on target-present/absent runs at the full settings.
    let h1_run = CalibrationRun::new(
        CalibrationKind::TargetPresent,
        truth.t_int,
        simulate(&truth, Hypothesis::H1, 4),
    );
    let h0_run = CalibrationRun::new(
        CalibrationKind::TargetAbsent,
        truth.t_int,
        simulate(&truth, Hypothesis::H0, 5),
    );
    let (beta, gamma) = fit_shape_params(&h0_run, &h1_run, &truth, Some(window))
        .map_err(|e| ScenarioError::Io(std::io::Error::other(e.to_string())))?;

    let estimates = vec![eta_s, eta_i, xi, beta, gamma];
    let report_text = crate::calibration::render_report(&estimates);
    Ok(CalibrationOutput {
        truth,
        estimates,
        report_text,
    })
}

/// Analytic ROC of a configuration at its averaging window, without running
/// a simulation.
pub fn analytic_roc_table(cfg: &ScenarioConfig) -> Result<String, ScenarioError> {
    let params = cfg.system.resolve()?;
    let n_av = cfg.analysis.n_av.unwrap_or(50) as f64;
    let clicks = click_model::click_probabilities(&params)?;
    let coeffs_ci = llv::linear_coeffs(clicks.p_h0_ci, clicks.p_h1_ci)?;
    let coeffs_qi = llv::linear_coeffs(clicks.p_h0_qi, clicks.p_h1_qi)?;
    let k_ci = params.ci_trials() as f64;
    let k_qi = k_ci * clicks.p_idler;
    let ci = analytic_channel(&coeffs_ci, clicks.p_h0_ci, clicks.p_h1_ci, k_ci, n_av);
    let qi = analytic_channel(&coeffs_qi, clicks.p_h0_qi, clicks.p_h1_qi, k_qi, n_av);
    let grid = match &cfg.analysis.threshold_grid {
        Some(g) => (0..g.count.max(2))
            .map(|i| g.min + (g.max - g.min) * i as f64 / (g.count.max(2) - 1) as f64)
            .collect::<Vec<_>>(),
        None => merged_threshold_grid(&qi, &ci),
    };
    let roc_qi = llv::roc_curve(&qi.h1, &qi.h0, &grid);
    let roc_ci = llv::roc_curve(&ci.h1, &ci.h0, &grid);
    let mut out = String::from("threshold,pfa_qi,pd_qi,pfa_ci,pd_ci\n");
    for (i, t) in grid.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_cell(*t),
            fmt_cell(roc_qi.points[i].0),
            fmt_cell(roc_qi.points[i].1),
            fmt_cell(roc_ci.points[i].0),
            fmt_cell(roc_ci.points[i].1),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;

    const DETECTION: &str = r#"
kind = "detection"
seed = 11

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
measurements = 120

[[schedule]]
hypothesis = "h0"
measurements = 120

[analysis]
n_av = 20
"#;

    #[test]
    fn detection_run_is_deterministic_and_consistent() {
        let cfg = ScenarioConfig::from_str_named(DETECTION, "inline").unwrap();
        let a = run_detection_scenario(&cfg, DETECTION, None).unwrap();
        let b = run_detection_scenario(&cfg, DETECTION, None).unwrap();
        assert_eq!(a.tables, b.tables);
        assert_eq!(a.summary.to_json(), b.summary.to_json());

        let c = run_detection_scenario(&cfg, DETECTION, Some(12)).unwrap();
        assert_ne!(a.tables, c.tables);

        let d = a.summary.detection.as_ref().unwrap();
        assert!(d.phi_qi_single > d.phi_ci_single);
        assert!((d.snr_qi_db - (-7.1)).abs() < 0.3, "snr_qi={}", d.snr_qi_db);
    }

    #[test]
    fn detection_summary_round_trips_through_dir() {
        let cfg = ScenarioConfig::from_str_named(DETECTION, "inline").unwrap();
        let out = run_detection_scenario(&cfg, DETECTION, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.write_to_dir(dir.path()).unwrap();
        let recomputed = crate::report::verify_run_dir(dir.path()).unwrap();
        assert_eq!(recomputed.len(), 2);
    }

    #[test]
    fn no_target_in_either_block_means_no_distinguishability() {
        let text = DETECTION.replace("loss_db = 33.5", "xi = 0.000000001");
        let cfg = ScenarioConfig::from_str_named(&text, "inline").unwrap();
        let out = run_detection_scenario(&cfg, &text, None).unwrap();
        let d = out.summary.detection.unwrap();
        assert!(d.phi_qi_single.abs() < 0.2, "{}", d.phi_qi_single);
        assert!(d.phi_ci_single.abs() < 0.2, "{}", d.phi_ci_single);
    }
}
