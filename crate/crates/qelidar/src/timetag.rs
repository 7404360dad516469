//! Continuous-time detection-event streams and delayed coincidence counting.
//!
//! Timestamps are unsigned picoseconds. A stream mixes two channels (signal
//! and idler) and is kept sorted; coincidence counting walks the stream once
//! per channel. The on-disk formats are a little-endian binary record
//! `(u64 picoseconds, u8 channel)` behind a small header, and a CSV
//! alternative with the same content.

use crate::montecarlo::MeasurementRecord;
use crate::params::SystemParams;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use std::io::{self, BufRead, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TimeTagError {
    #[error("record {record}: {msg}")]
    FormatError { record: usize, msg: String },
    #[error("record {record}: timestamp decreases from {prev} ps to {ts} ps")]
    NonMonotonicTimestamps { record: usize, prev: u64, ts: u64 },
    #[error("stream is not sorted at index {index}")]
    UnsortedStream { index: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Detector channel of a time tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Signal,
    Idler,
}

impl Channel {
    pub fn code(self) -> u8 {
        match self {
            Channel::Signal => 0,
            Channel::Idler => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Channel> {
        match code {
            0 => Some(Channel::Signal),
            1 => Some(Channel::Idler),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Signal => "signal",
            Channel::Idler => "idler",
        }
    }
}

/// A single detection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeTag {
    pub ps: u64,
    pub channel: Channel,
}

/// A time-sorted sequence of detection events at 1 ps resolution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeTagStream {
    tags: Vec<TimeTag>,
}

impl TimeTagStream {
    /// Wrap an already-sorted tag list, rejecting out-of-order timestamps.
    pub fn new(tags: Vec<TimeTag>) -> Result<Self, TimeTagError> {
        for (i, pair) in tags.windows(2).enumerate() {
            if pair[1].ps < pair[0].ps {
                return Err(TimeTagError::UnsortedStream { index: i + 1 });
            }
        }
        Ok(TimeTagStream { tags })
    }

    /// Sort-and-wrap for generators that merge several event processes.
    pub fn from_unsorted(mut tags: Vec<TimeTag>) -> Self {
        tags.sort_by_key(|t| (t.ps, t.channel.code()));
        TimeTagStream { tags }
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn channel_timestamps(&self, channel: Channel) -> Vec<u64> {
        self.tags
            .iter()
            .filter(|t| t.channel == channel)
            .map(|t| t.ps)
            .collect()
    }
}

/// One delayed coincidence channel: fires when a signal tag lies within
/// `window` centred on (idler time + delay).
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceChannel {
    /// Expected signal round-trip delay in seconds.
    pub delay: f64,
    /// Coincidence window duration in seconds.
    pub window: f64,
    /// Position name carried through to reports.
    pub label: String,
}

impl CoincidenceChannel {
    pub fn new(delay: f64, window: f64, label: impl Into<String>) -> Self {
        assert!(window > 0.0, "window must be positive");
        assert!(delay >= 0.0, "delay must be nonnegative");
        CoincidenceChannel {
            delay,
            window,
            label: label.into(),
        }
    }
}

/// Gaussian timing uncertainty applied per detection event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterModel {
    /// Standard deviation in seconds; zero disables jitter.
    pub sigma: f64,
}

impl JitterModel {
    pub fn new(sigma: f64) -> Self {
        assert!(sigma >= 0.0, "jitter sigma must be nonnegative");
        JitterModel { sigma }
    }

    pub fn none() -> Self {
        JitterModel { sigma: 0.0 }
    }

    /// Fraction of true pairs that survive a centred coincidence window of
    /// `window` seconds when both detectors carry this jitter: the
    /// signal-minus-idler spread is Gaussian with sigma * sqrt(2).
    pub fn window_acceptance(&self, window: f64) -> f64 {
        if self.sigma == 0.0 {
            return 1.0;
        }
        let spread = self.sigma * std::f64::consts::SQRT_2;
        2.0 * crate::normal::cdf(0.5 * window / spread) - 1.0
    }
}

fn to_ps(seconds: f64) -> Option<u64> {
    let ps = (seconds * 1e12).round();
    (ps >= 0.0).then_some(ps as u64)
}

/// Generate a detection-event stream for a target at `target_delay`.
///
/// Pair emissions are a Poisson process at the parameter set's pair rate;
/// each emission keeps its idler tag with probability `eta_i` and its signal
/// tag (delayed by `target_delay`) with probability `xi * eta_s`. Detected
/// backgrounds are independent Poisson processes per channel. Detector
/// jitter displaces every pair tag; background processes are
/// jitter-invariant and are generated directly.
pub fn generate_stream(
    params: &SystemParams,
    target_delay: f64,
    jitter: JitterModel,
    duration: f64,
    rng: &mut impl Rng,
) -> TimeTagStream {
    assert!(duration > 0.0, "duration must be positive");
    let mut tags = Vec::new();
    let noise = (jitter.sigma > 0.0).then(|| Normal::new(0.0, jitter.sigma).unwrap());

    let pair_rate = params.pair_rate();
    let p_idler = params.eta_i;
    let p_signal = params.xi * params.eta_s;
    // Emissions with both tags dropped never surface; generate the thinned
    // process and classify each survivor.
    let p_any = p_idler + p_signal - p_idler * p_signal;
    if pair_rate > 0.0 && p_any > 0.0 {
        let exp = Exp::new(pair_rate * p_any).unwrap();
        let p_both = p_idler * p_signal / p_any;
        let p_idler_only = p_idler * (1.0 - p_signal) / p_any;
        let mut t = exp.sample(rng);
        while t < duration {
            let u: f64 = rng.random();
            let (keep_idler, keep_signal) = if u < p_both {
                (true, true)
            } else if u < p_both + p_idler_only {
                (true, false)
            } else {
                (false, true)
            };
            if keep_idler {
                let ts = match &noise {
                    Some(n) => t + n.sample(rng),
                    None => t,
                };
                if let Some(ps) = to_ps(ts) {
                    tags.push(TimeTag {
                        ps,
                        channel: Channel::Idler,
                    });
                }
            }
            if keep_signal {
                let ts = match &noise {
                    Some(n) => t + target_delay + n.sample(rng),
                    None => t + target_delay,
                };
                if let Some(ps) = to_ps(ts) {
                    tags.push(TimeTag {
                        ps,
                        channel: Channel::Signal,
                    });
                }
            }
            t += exp.sample(rng);
        }
    }

    for (rate, channel) in [
        (params.nbg_s * params.eta_s / params.tau_c, Channel::Signal),
        (params.nbg_i * params.eta_i / params.tau_c, Channel::Idler),
    ] {
        if rate > 0.0 {
            let exp = Exp::new(rate).unwrap();
            let mut t = exp.sample(rng);
            while t < duration {
                if let Some(ps) = to_ps(t) {
                    tags.push(TimeTag { ps, channel });
                }
                t += exp.sample(rng);
            }
        }
    }

    TimeTagStream::from_unsorted(tags)
}

/// Count delayed coincidences per channel, aggregated over integration bins
/// of `bin` seconds.
///
/// For each idler tag at `t`, channel `c` fires when a signal tag lies in
/// `[t + delay - window/2, t + delay + window/2]`. At most one coincidence
/// is recorded per idler tag per channel (the closest signal tag wins) and
/// a signal tag is consumed by at most one idler tag per channel.
pub fn count_coincidences(
    stream: &TimeTagStream,
    channels: &[CoincidenceChannel],
    bin: f64,
) -> Vec<Vec<MeasurementRecord>> {
    assert!(bin > 0.0, "integration bin must be positive");
    let bin_ps = (bin * 1e12).round() as u64;
    assert!(bin_ps > 0);

    let signal: Vec<u64> = stream.channel_timestamps(Channel::Signal);
    let idler: Vec<u64> = stream.channel_timestamps(Channel::Idler);

    let last_ps = stream.tags.last().map_or(0, |t| t.ps);
    let n_bins = (last_ps / bin_ps + 1) as usize;

    let mut signal_per_bin = vec![0u64; n_bins];
    for &ps in &signal {
        signal_per_bin[(ps / bin_ps) as usize] += 1;
    }
    let mut idler_per_bin = vec![0u64; n_bins];
    for &ps in &idler {
        idler_per_bin[(ps / bin_ps) as usize] += 1;
    }

    let mut out = Vec::with_capacity(channels.len());
    for channel in channels {
        let delay_ps = (channel.delay * 1e12).round() as i64;
        let half_ps = ((channel.window * 1e12) / 2.0).round() as i64;
        let mut coincidences_per_bin = vec![0u64; n_bins];
        let mut consumed = vec![false; signal.len()];
        let mut lo = 0usize;
        for &t_i in &idler {
            let centre = t_i as i64 + delay_ps;
            let from = centre - half_ps;
            let to = centre + half_ps;
            while lo < signal.len() && (signal[lo] as i64) < from {
                lo += 1;
            }
            let mut best: Option<(i64, usize)> = None;
            let mut j = lo;
            while j < signal.len() && (signal[j] as i64) <= to {
                if !consumed[j] {
                    let dist = (signal[j] as i64 - centre).abs();
                    if best.is_none_or(|(d, _)| dist < d) {
                        best = Some((dist, j));
                    }
                }
                j += 1;
            }
            if let Some((_, j)) = best {
                consumed[j] = true;
                coincidences_per_bin[(t_i / bin_ps) as usize] += 1;
            }
        }

        let k_ci = ((bin / channel.window) * (1.0 + 1e-12)).floor() as u64;
        let records = (0..n_bins)
            .map(|b| MeasurementRecord {
                signal_counts: signal_per_bin[b],
                idler_counts: idler_per_bin[b],
                coincidence_counts: coincidences_per_bin[b],
                k_ci,
                background_estimate: signal_per_bin[b] as f64 / bin,
            })
            .collect();
        out.push(records);
    }
    out
}

/// Histogram of signal-minus-idler arrival-time differences.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayHistogram {
    /// Lower edge of the first bin, picoseconds (signed delay).
    pub min_ps: i64,
    /// Bin width in picoseconds.
    pub bin_width_ps: u64,
    pub counts: Vec<u64>,
}

/// Statistics of the histogram peak after flat-background subtraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakStats {
    /// Count-weighted mean delay of the peak window, picoseconds.
    pub center_ps: f64,
    /// Count-weighted standard deviation, picoseconds.
    pub std_ps: f64,
    /// Background-subtracted counts attributed to the peak.
    pub signal_counts: f64,
}

impl DelayHistogram {
    pub fn new(range: f64, bin_width: f64) -> Self {
        assert!(bin_width > 0.0, "bin_width must be positive");
        assert!(range > 0.0, "range must be positive");
        let bin_width_ps = (bin_width * 1e12).round().max(1.0) as u64;
        let range_ps = (range * 1e12).round() as i64;
        let n = (2 * range_ps as u64).div_ceil(bin_width_ps) as usize;
        DelayHistogram {
            min_ps: -range_ps,
            bin_width_ps,
            counts: vec![0; n.max(1)],
        }
    }

    pub fn range_ps(&self) -> i64 {
        -self.min_ps
    }

    pub fn bin_center_ps(&self, index: usize) -> f64 {
        self.min_ps as f64 + (index as f64 + 0.5) * self.bin_width_ps as f64
    }

    /// Accumulate all signal-idler delays of `stream` that fall in range.
    pub fn add_stream(&mut self, stream: &TimeTagStream) {
        let signal = stream.channel_timestamps(Channel::Signal);
        let idler = stream.channel_timestamps(Channel::Idler);
        let range = self.range_ps();
        let mut lo = 0usize;
        for &t_i in &idler {
            let t_i = t_i as i64;
            while lo < signal.len() && (signal[lo] as i64) < t_i - range {
                lo += 1;
            }
            let mut j = lo;
            while j < signal.len() && (signal[j] as i64) <= t_i + range {
                let delta = signal[j] as i64 - t_i;
                let idx = (delta - self.min_ps) as u64 / self.bin_width_ps;
                if (idx as usize) < self.counts.len() {
                    self.counts[idx as usize] += 1;
                }
                j += 1;
            }
        }
    }

    /// Index and count of the tallest bin.
    pub fn peak_bin(&self) -> (usize, u64) {
        self.counts
            .iter()
            .enumerate()
            .max_by_key(|(_, c)| **c)
            .map(|(i, c)| (i, *c))
            .unwrap_or((0, 0))
    }

    /// Moment-based peak statistics within `window_half_ps` of the tallest
    /// bin. The flat accidental floor is estimated from bins further than
    /// twice the window from the peak and subtracted first.
    pub fn peak_stats(&self, window_half_ps: u64) -> Option<PeakStats> {
        let (peak_idx, peak_count) = self.peak_bin();
        if peak_count == 0 {
            return None;
        }
        let peak_center = self.bin_center_ps(peak_idx);
        let in_window =
            |i: usize, half: f64| -> bool { (self.bin_center_ps(i) - peak_center).abs() <= half };

        let far: Vec<f64> = (0..self.counts.len())
            .filter(|&i| !in_window(i, 2.0 * window_half_ps as f64))
            .map(|i| self.counts[i] as f64)
            .collect();
        let background = if far.is_empty() {
            0.0
        } else {
            far.iter().sum::<f64>() / far.len() as f64
        };

        // Signed weights: clipping negative residuals would bias the
        // second moment upward through the window wings.
        let (mut w_sum, mut mean_acc) = (0.0, 0.0);
        for i in 0..self.counts.len() {
            if in_window(i, window_half_ps as f64) {
                let w = self.counts[i] as f64 - background;
                w_sum += w;
                mean_acc += w * self.bin_center_ps(i);
            }
        }
        if w_sum <= 0.0 {
            return None;
        }
        let center = mean_acc / w_sum;
        let mut var_acc = 0.0;
        for i in 0..self.counts.len() {
            if in_window(i, window_half_ps as f64) {
                let w = self.counts[i] as f64 - background;
                var_acc += w * (self.bin_center_ps(i) - center).powi(2);
            }
        }
        Some(PeakStats {
            center_ps: center,
            std_ps: (var_acc / w_sum).max(0.0).sqrt(),
            signal_counts: w_sum,
        })
    }

    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "bin_center_ps,counts")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{}", self.bin_center_ps(i), c)?;
        }
        Ok(())
    }
}

/// Convenience wrapper building a histogram from one stream.
pub fn delay_histogram(stream: &TimeTagStream, range: f64, bin_width: f64) -> DelayHistogram {
    let mut h = DelayHistogram::new(range, bin_width);
    h.add_stream(stream);
    h
}

const BIN_MAGIC: &[u8; 4] = b"QTAG";
const BIN_VERSION: u8 = 1;

/// Write the binary format: magic, version, resolution (ps per unit),
/// channel map, record count, then `(u64 ps, u8 channel)` records.
pub fn write_timetags_bin(stream: &TimeTagStream, mut w: impl Write) -> io::Result<()> {
    w.write_all(BIN_MAGIC)?;
    w.write_all(&[BIN_VERSION])?;
    w.write_all(&1u64.to_le_bytes())?; // timestamp resolution: 1 ps
    let channels = [Channel::Signal, Channel::Idler];
    w.write_all(&[channels.len() as u8])?;
    for c in channels {
        let name = c.name().as_bytes();
        w.write_all(&[c.code(), name.len() as u8])?;
        w.write_all(name)?;
    }
    w.write_all(&(stream.len() as u64).to_le_bytes())?;
    for tag in stream.tags() {
        w.write_all(&tag.ps.to_le_bytes())?;
        w.write_all(&[tag.channel.code()])?;
    }
    Ok(())
}

fn read_exact_or(
    r: &mut impl Read,
    buf: &mut [u8],
    record: usize,
    what: &str,
) -> Result<(), TimeTagError> {
    r.read_exact(buf).map_err(|_| TimeTagError::FormatError {
        record,
        msg: format!("truncated {what}"),
    })
}

/// Parse the binary format back into a validated stream.
pub fn parse_timetags_bin(mut r: impl Read) -> Result<TimeTagStream, TimeTagError> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, 0, "header magic")?;
    if &magic != BIN_MAGIC {
        return Err(TimeTagError::FormatError {
            record: 0,
            msg: format!("bad magic {magic:?}"),
        });
    }
    let mut byte = [0u8; 1];
    read_exact_or(&mut r, &mut byte, 0, "version")?;
    if byte[0] != BIN_VERSION {
        return Err(TimeTagError::FormatError {
            record: 0,
            msg: format!("unsupported version {}", byte[0]),
        });
    }
    let mut u64buf = [0u8; 8];
    read_exact_or(&mut r, &mut u64buf, 0, "resolution")?;
    let resolution = u64::from_le_bytes(u64buf);
    if resolution != 1 {
        return Err(TimeTagError::FormatError {
            record: 0,
            msg: format!("unsupported resolution {resolution} ps"),
        });
    }
    read_exact_or(&mut r, &mut byte, 0, "channel count")?;
    for _ in 0..byte[0] {
        let mut head = [0u8; 2];
        read_exact_or(&mut r, &mut head, 0, "channel map entry")?;
        let mut name = vec![0u8; head[1] as usize];
        read_exact_or(&mut r, &mut name, 0, "channel name")?;
        let expected = Channel::from_code(head[0]).map(Channel::name);
        if expected != Some(std::str::from_utf8(&name).unwrap_or("")) {
            return Err(TimeTagError::FormatError {
                record: 0,
                msg: format!("unknown channel map entry code {}", head[0]),
            });
        }
    }
    read_exact_or(&mut r, &mut u64buf, 0, "record count")?;
    let count = u64::from_le_bytes(u64buf) as usize;

    let mut tags = Vec::with_capacity(count);
    let mut prev = 0u64;
    for record in 0..count {
        read_exact_or(&mut r, &mut u64buf, record + 1, "timestamp")?;
        let ps = u64::from_le_bytes(u64buf);
        read_exact_or(&mut r, &mut byte, record + 1, "channel")?;
        let channel = Channel::from_code(byte[0]).ok_or(TimeTagError::FormatError {
            record: record + 1,
            msg: format!("invalid channel code {}", byte[0]),
        })?;
        if record > 0 && ps < prev {
            return Err(TimeTagError::NonMonotonicTimestamps {
                record: record + 1,
                prev,
                ts: ps,
            });
        }
        prev = ps;
        tags.push(TimeTag { ps, channel });
    }
    Ok(TimeTagStream { tags })
}

/// Read a time-tag file, choosing the CSV parser for `.csv` paths and the
/// binary parser otherwise.
pub fn read_timetags(path: impl AsRef<std::path::Path>) -> Result<TimeTagStream, TimeTagError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e == "csv") {
        parse_timetags_csv(std::io::BufReader::new(file))
    } else {
        parse_timetags_bin(std::io::BufReader::new(file))
    }
}

/// Write a time-tag file in the format implied by the path extension.
pub fn write_timetags(stream: &TimeTagStream, path: impl AsRef<std::path::Path>) -> io::Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    if path.extension().is_some_and(|e| e == "csv") {
        write_timetags_csv(stream, &mut w)
    } else {
        write_timetags_bin(stream, &mut w)
    }
}

/// Write the CSV alternative: `timestamp_ps,channel` with channel names.
pub fn write_timetags_csv(stream: &TimeTagStream, mut w: impl Write) -> io::Result<()> {
    writeln!(w, "timestamp_ps,channel")?;
    for tag in stream.tags() {
        writeln!(w, "{},{}", tag.ps, tag.channel.name())?;
    }
    Ok(())
}

/// Parse the CSV alternative.
pub fn parse_timetags_csv(r: impl BufRead) -> Result<TimeTagStream, TimeTagError> {
    let mut tags = Vec::new();
    let mut prev = 0u64;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if lineno == 0 {
            if trimmed != "timestamp_ps,channel" {
                return Err(TimeTagError::FormatError {
                    record: 0,
                    msg: format!("bad header `{trimmed}`"),
                });
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let record = lineno; // 1-based data record index
        let (ts, ch) = trimmed
            .split_once(',')
            .ok_or_else(|| TimeTagError::FormatError {
                record,
                msg: "expected `timestamp_ps,channel`".into(),
            })?;
        let ps: u64 = ts.trim().parse().map_err(|_| TimeTagError::FormatError {
            record,
            msg: format!("invalid timestamp `{ts}`"),
        })?;
        let channel = match ch.trim() {
            "signal" => Channel::Signal,
            "idler" => Channel::Idler,
            other => {
                return Err(TimeTagError::FormatError {
                    record,
                    msg: format!("invalid channel `{other}`"),
                })
            }
        };
        if !tags.is_empty() && ps < prev {
            return Err(TimeTagError::NonMonotonicTimestamps {
                record,
                prev,
                ts: ps,
            });
        }
        prev = ps;
        tags.push(TimeTag { ps, channel });
    }
    Ok(TimeTagStream { tags })
}
