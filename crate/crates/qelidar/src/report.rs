//! Run summaries, their serialised forms, and the CSV read-back path used
//! to verify that every summary is derivable from the emitted tables.

use crate::llv;
use crate::params::Hypothesis;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Csv {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("summary.json: {0}")]
    Summary(String),
    #[error(transparent)]
    Llv(#[from] llv::LlvError),
}

/// Analytic and empirical headline numbers of a detection run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub phi_ci_single: f64,
    pub phi_qi_single: f64,
    pub phi_ci_avg: f64,
    pub phi_qi_avg: f64,
    pub phi_ci_single_analytic: f64,
    pub phi_qi_single_analytic: f64,
    pub phi_ci_avg_analytic: f64,
    pub phi_qi_avg_analytic: f64,
    /// Analytic false-alarm probabilities at threshold zero and the
    /// configured averaging window.
    pub pfa_ci_analytic: f64,
    pub pfa_qi_analytic: f64,
    pub signal_excess_rate_hz: f64,
    pub background_rate_hz: f64,
    pub coincidence_rate_noise_off_hz: f64,
    pub accidental_rate_hz: f64,
    pub snr_ci_db: f64,
    pub snr_qi_db: f64,
    pub equivalent_averaging_factor: Option<f64>,
}

/// Headline numbers of a jamming run. Empirical values are computed over
/// the modulated portion of the schedule (`modulated_from_index` onwards
/// within each block).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JammingSummary {
    pub phi_ci_single: f64,
    pub phi_qi_tracked_single: f64,
    pub phi_qi_untracked_single: f64,
    pub sinusoid_amp_untracked_h1: f64,
    pub sinusoid_amp_untracked_h0: f64,
    pub sinusoid_amp_tracked_h1: f64,
    pub sinusoid_amp_tracked_h0: f64,
    pub zero_crossings_ci_avg_h1: usize,
    pub zero_crossings_ci_avg_h0: usize,
    pub lut_levels: usize,
    pub lut_min_rate_hz: f64,
    pub lut_max_rate_hz: f64,
    /// First measurement index (within each hypothesis block) where the
    /// modulation is active.
    pub modulated_from_index: usize,
}

/// Per-block, per-channel outcome of a rangefinding run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RangeBlockStats {
    pub block: usize,
    /// Channel the target actually sat at, if any.
    pub true_channel: Option<usize>,
    pub position_label: String,
    /// Fraction of averaged LLV points above zero, one entry per channel.
    pub positive_fraction: Vec<f64>,
    /// Peak of this block's own delay histogram, picoseconds.
    pub histogram_peak_ps: Option<f64>,
    /// Width (standard deviation) of that peak, picoseconds.
    pub histogram_std_ps: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RangefindingSummary {
    pub channel_labels: Vec<String>,
    pub beta_used: f64,
    pub blocks: Vec<RangeBlockStats>,
}

/// The machine-readable summary written next to every run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub n_av: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jamming: Option<JammingSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rangefinding: Option<RangefindingSummary>,
}

impl Summary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serialises")
    }

    /// Human-readable rendering for summary.txt and the CLI.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run kind      : {}", self.kind);
        let _ = writeln!(s, "seed          : {}", self.seed);
        let _ = writeln!(s, "config hash   : {}", self.config_hash);
        let _ = writeln!(s, "n_av          : {}", self.n_av);
        if let Some(d) = &self.detection {
            let _ = writeln!(s, "-- detection --");
            let _ = writeln!(
                s,
                "phi single    : qi {:.4} (analytic {:.4}), ci {:.4} (analytic {:.4})",
                d.phi_qi_single,
                d.phi_qi_single_analytic,
                d.phi_ci_single,
                d.phi_ci_single_analytic
            );
            let _ = writeln!(
                s,
                "phi at n_av   : qi {:.4} (analytic {:.4}), ci {:.4} (analytic {:.4})",
                d.phi_qi_avg, d.phi_qi_avg_analytic, d.phi_ci_avg, d.phi_ci_avg_analytic
            );
            let _ = writeln!(
                s,
                "analytic P_FA : qi {:.3e}, ci {:.3e} (threshold 0, n_av)",
                d.pfa_qi_analytic, d.pfa_ci_analytic
            );
            let _ = writeln!(
                s,
                "rates         : excess {:.1} Hz over background {:.1} Hz; coincidences {:.2} Hz vs accidentals {:.2} Hz",
                d.signal_excess_rate_hz,
                d.background_rate_hz,
                d.coincidence_rate_noise_off_hz,
                d.accidental_rate_hz
            );
            let _ = writeln!(
                s,
                "snr           : ci {:.1} dB, qi {:.1} dB",
                d.snr_ci_db, d.snr_qi_db
            );
            if let Some(f) = d.equivalent_averaging_factor {
                let _ = writeln!(
                    s,
                    "ci needs      : {f:.1}x more averaging to match the qi roc"
                );
            }
        }
        if let Some(j) = &self.jamming {
            let _ = writeln!(s, "-- jamming --");
            let _ = writeln!(
                s,
                "phi single    : qi tracked {:.4}, qi untracked {:.4}, ci {:.4}",
                j.phi_qi_tracked_single, j.phi_qi_untracked_single, j.phi_ci_single
            );
            let _ = writeln!(
                s,
                "sinusoid amp  : untracked h1 {:.4} h0 {:.4}; tracked h1 {:.4} h0 {:.4}",
                j.sinusoid_amp_untracked_h1,
                j.sinusoid_amp_untracked_h0,
                j.sinusoid_amp_tracked_h1,
                j.sinusoid_amp_tracked_h0
            );
            let _ = writeln!(
                s,
                "ci crossings  : h1 {} h0 {} (averaged series)",
                j.zero_crossings_ci_avg_h1, j.zero_crossings_ci_avg_h0
            );
            let _ = writeln!(
                s,
                "lut           : {} levels over [{:.3e}, {:.3e}] Hz",
                j.lut_levels, j.lut_min_rate_hz, j.lut_max_rate_hz
            );
        }
        if let Some(r) = &self.rangefinding {
            let _ = writeln!(s, "-- rangefinding --");
            let _ = writeln!(s, "beta used     : {:.4}", r.beta_used);
            for b in &r.blocks {
                let fractions: Vec<String> = b
                    .positive_fraction
                    .iter()
                    .zip(&r.channel_labels)
                    .map(|(f, l)| format!("{l}={f:.3}"))
                    .collect();
                let peak = match (b.histogram_peak_ps, b.histogram_std_ps) {
                    (Some(p), Some(w)) => format!("; delay peak {p:.0} ps, width {w:.1} ps"),
                    _ => String::new(),
                };
                let _ = writeln!(
                    s,
                    "block {} ({}) : positive fraction {}{}",
                    b.block,
                    b.position_label,
                    fractions.join(", "),
                    peak
                );
            }
        }
        s
    }
}

/// One parsed row of a detection/jamming measurement table: the hypothesis
/// label and the per-channel LLVs.
#[derive(Debug, Clone)]
pub struct ParsedRow {
    pub hypothesis: Hypothesis,
    pub columns: BTreeMap<String, f64>,
}

/// Parse a measurements.csv produced by the scenario runner into labelled
/// rows keyed by column name. Empty cells are skipped.
pub fn parse_measurements_csv(text: &str, path: &str) -> Result<Vec<ParsedRow>, ReportError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| ReportError::Csv {
        path: path.into(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let names: Vec<&str> = header.split(',').collect();
    let hyp_col = names
        .iter()
        .position(|n| *n == "hypothesis")
        .ok_or_else(|| ReportError::Csv {
            path: path.into(),
            line: 1,
            msg: "missing `hypothesis` column".into(),
        })?;
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(ReportError::Csv {
                path: path.into(),
                line: lineno + 1,
                msg: format!("expected {} cells, found {}", names.len(), cells.len()),
            });
        }
        let hypothesis = cells[hyp_col].parse().map_err(|e| ReportError::Csv {
            path: path.into(),
            line: lineno + 1,
            msg: e,
        })?;
        let mut columns = BTreeMap::new();
        for (name, cell) in names.iter().zip(&cells) {
            if *name == "hypothesis" || cell.is_empty() {
                continue;
            }
            if let Ok(v) = cell.parse::<f64>() {
                columns.insert((*name).to_string(), v);
            }
        }
        rows.push(ParsedRow {
            hypothesis,
            columns,
        });
    }
    Ok(rows)
}

/// Recompute single-shot and averaged distinguishability from a raw LLV
/// column, mirroring the scenario analysis.
pub fn phi_from_rows(
    rows: &[ParsedRow],
    column: &str,
    n_av: usize,
    skip_per_block: usize,
) -> Result<(f64, f64), ReportError> {
    let mut series = Vec::new();
    let mut labels = Vec::new();
    for row in rows {
        if let Some(v) = row.columns.get(column) {
            series.push(*v);
            labels.push(row.hypothesis);
        }
    }
    let series = llv::LlvSeries::new(series, labels);
    let trimmed = skip_leading_per_block(&series, skip_per_block);
    let single = llv::empirical_distinguishability(
        &trimmed.values_for(Hypothesis::H1),
        &trimmed.values_for(Hypothesis::H0),
        0.0,
    )?;
    let rolled = trimmed.rolling(n_av)?;
    let averaged = llv::empirical_distinguishability(
        &rolled.values_for(Hypothesis::H1),
        &rolled.values_for(Hypothesis::H0),
        0.0,
    )?;
    Ok((single, averaged))
}

/// Drop the first `skip` entries of every contiguous hypothesis run.
pub fn skip_leading_per_block(series: &llv::LlvSeries, skip: usize) -> llv::LlvSeries {
    if skip == 0 {
        return series.clone();
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut start = 0;
    while start < series.values.len() {
        let label = series.labels[start];
        let mut end = start;
        while end < series.values.len() && series.labels[end] == label {
            end += 1;
        }
        for i in (start + skip.min(end - start))..end {
            values.push(series.values[i]);
            labels.push(label);
        }
        start = end;
    }
    llv::LlvSeries::new(values, labels)
}

/// Read a run directory back and verify that the summary's empirical phi
/// values are reproduced by its own measurement table. Returns the
/// recomputed (column, single, averaged) triples.
pub fn verify_run_dir(dir: &Path) -> Result<Vec<(String, f64, f64)>, ReportError> {
    let read = |name: &str| -> Result<String, ReportError> {
        std::fs::read_to_string(dir.join(name)).map_err(|source| ReportError::Io {
            path: dir.join(name).display().to_string(),
            source,
        })
    };
    let summary: Summary = serde_json::from_str(&read("summary.json")?)
        .map_err(|e| ReportError::Summary(e.to_string()))?;
    let rows = parse_measurements_csv(&read("measurements.csv")?, "measurements.csv")?;

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut out = Vec::new();
    if let Some(d) = &summary.detection {
        let (s, a) = phi_from_rows(&rows, "llv_ci", summary.n_av, 0)?;
        if !close(s, d.phi_ci_single) || !close(a, d.phi_ci_avg) {
            return Err(ReportError::Summary(format!(
                "ci phi mismatch: csv gives ({s}, {a}), summary says ({}, {})",
                d.phi_ci_single, d.phi_ci_avg
            )));
        }
        out.push(("llv_ci".into(), s, a));
        let (s, a) = phi_from_rows(&rows, "llv_qi", summary.n_av, 0)?;
        if !close(s, d.phi_qi_single) || !close(a, d.phi_qi_avg) {
            return Err(ReportError::Summary(format!(
                "qi phi mismatch: csv gives ({s}, {a}), summary says ({}, {})",
                d.phi_qi_single, d.phi_qi_avg
            )));
        }
        out.push(("llv_qi".into(), s, a));
    }
    if let Some(j) = &summary.jamming {
        let skip = j.modulated_from_index;
        let (s, _) = phi_from_rows(&rows, "llv_ci", summary.n_av, skip)?;
        if !close(s, j.phi_ci_single) {
            return Err(ReportError::Summary(format!(
                "jamming ci phi mismatch: csv gives {s}, summary says {}",
                j.phi_ci_single
            )));
        }
        out.push(("llv_ci".into(), s, f64::NAN));
        let (s, _) = phi_from_rows(&rows, "llv_qi_tracked", summary.n_av, skip)?;
        if !close(s, j.phi_qi_tracked_single) {
            return Err(ReportError::Summary(format!(
                "jamming tracked phi mismatch: csv gives {s}, summary says {}",
                j.phi_qi_tracked_single
            )));
        }
        out.push(("llv_qi_tracked".into(), s, f64::NAN));
    }
    Ok(out)
}
