//! Event-level Monte Carlo of the full photonic chain.
//!
//! The per-window sampler draws a thermal (geometric) pair number, thins each
//! arm by its survival probability and adds Poissonian background, so it is
//! an independent brute-force oracle for the closed-form click model. For
//! measurement aggregation over very large window counts the same per-window
//! joint law is sampled as a multinomial over the four click outcomes, which
//! is distribution-identical to looping the windows.

use crate::params::{Hypothesis, SystemParams};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Geometric, Poisson};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MonteCarloError {
    #[error("no heralded coincidences available to form a g2 estimate")]
    InsufficientStatistics,
}

/// Outcome of a single coincidence window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialRecord {
    pub idler_click: bool,
    pub signal_click: bool,
    pub window_index: u64,
}

/// Aggregated counts of one integration time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRecord {
    /// Signal-detector clicks (the classical channel's x).
    pub signal_counts: u64,
    /// Idler-detector clicks (the heralded channel's k).
    pub idler_counts: u64,
    /// Windows in which both detectors clicked (the heralded channel's x).
    pub coincidence_counts: u64,
    /// Number of coincidence windows in the integration time.
    pub k_ci: u64,
    /// Instantaneous background estimate from the raw signal counts, hertz.
    pub background_estimate: f64,
}

impl MeasurementRecord {
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.coincidence_counts > self.signal_counts.min(self.idler_counts) {
            return Err(format!(
                "coincidences {} exceed min(signal {}, idler {})",
                self.coincidence_counts, self.signal_counts, self.idler_counts
            ));
        }
        if self.signal_counts > self.k_ci {
            return Err(format!(
                "signal counts {} exceed window count {}",
                self.signal_counts, self.k_ci
            ));
        }
        Ok(())
    }
}

/// Deterministic derivation of per-measurement RNG streams from a base seed.
/// Identical (base_seed, block, index) triples always produce bit-identical
/// streams regardless of execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSeedPolicy {
    pub base_seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSeedPolicy {
    pub fn new(base_seed: u64) -> Self {
        RngSeedPolicy { base_seed }
    }

    pub fn stream(&self, block: u64, index: u64) -> ChaCha8Rng {
        let mut s = splitmix64(self.base_seed);
        s = splitmix64(s ^ block);
        s = splitmix64(s ^ index);
        ChaCha8Rng::seed_from_u64(s)
    }
}

/// Exact per-window joint click probabilities of the sampler's microscopic
/// model: thermal pair number with mean `n_mean`, independent per-photon
/// survival (idler `eta_i`, signal `xi eta_s`), Poisson backgrounds with
/// detected means `eta_s nbg_s` and `eta_i nbg_i`.
///
/// This is the aggregation-side description of the sampler, not the fitted
/// click model: `beta` and `gamma` do not enter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowProbs {
    pub both: f64,
    pub idler_only: f64,
    pub signal_only: f64,
    pub neither: f64,
}

impl WindowProbs {
    pub fn p_idler(&self) -> f64 {
        self.both + self.idler_only
    }
    pub fn p_signal(&self) -> f64 {
        self.both + self.signal_only
    }
    pub fn p_coincidence(&self) -> f64 {
        self.both
    }
}

/// See [`WindowProbs`]. Uses E[z^n] = 1 / (1 + n_mean (1 - z)) for the
/// thermal pair number together with inclusion-exclusion over the two
/// no-click events.
pub fn window_joint_probs(params: &SystemParams, hypothesis: Hypothesis) -> WindowProbs {
    let xi = match hypothesis {
        Hypothesis::H1 => params.xi,
        Hypothesis::H0 => 0.0,
    };
    let n = params.n_mean;
    let si = params.eta_i; // idler survival per pair photon
    let ss = xi * params.eta_s; // signal survival per pair photon
    let bg_i = (-params.eta_i * params.nbg_i).exp();
    let bg_s = (-params.eta_s * params.nbg_s).exp();

    let no_idler = bg_i / (1.0 + n * si);
    let no_signal = bg_s / (1.0 + n * ss);
    let neither = bg_i * bg_s / (1.0 + n * (si + ss - si * ss));

    WindowProbs {
        both: (1.0 - no_idler - no_signal + neither).max(0.0),
        idler_only: (no_signal - neither).max(0.0),
        signal_only: (no_idler - neither).max(0.0),
        neither,
    }
}

/// Cached distributions for repeated window sampling at one parameter set.
pub struct WindowSampler {
    pairs: Option<Geometric>,
    signal_bg: Option<Poisson<f64>>,
    idler_bg: Option<Poisson<f64>>,
    p_keep_idler: f64,
    p_keep_signal: f64,
}

impl WindowSampler {
    pub fn new(params: &SystemParams, hypothesis: Hypothesis) -> Self {
        let xi = match hypothesis {
            Hypothesis::H1 => params.xi,
            Hypothesis::H0 => 0.0,
        };
        let pairs = (params.n_mean > 0.0)
            .then(|| Geometric::new(1.0 / (1.0 + params.n_mean)).expect("valid geometric"));
        let mean_sig_bg = params.eta_s * params.nbg_s;
        let mean_idl_bg = params.eta_i * params.nbg_i;
        WindowSampler {
            pairs,
            signal_bg: (mean_sig_bg > 0.0).then(|| Poisson::new(mean_sig_bg).unwrap()),
            idler_bg: (mean_idl_bg > 0.0).then(|| Poisson::new(mean_idl_bg).unwrap()),
            p_keep_idler: params.eta_i,
            p_keep_signal: xi * params.eta_s,
        }
    }

    #[inline]
    fn thin(n: u64, p: f64, rng: &mut impl Rng) -> u64 {
        if p <= 0.0 {
            return 0;
        }
        (0..n).filter(|_| rng.random_bool(p)).count() as u64
    }

    pub fn sample(&self, rng: &mut impl Rng) -> TrialRecord {
        let n = self.pairs.as_ref().map_or(0, |g| g.sample(rng));
        let idler_pairs = Self::thin(n, self.p_keep_idler, rng);
        let signal_pairs = Self::thin(n, self.p_keep_signal, rng);
        let idler_bg = self.idler_bg.as_ref().map_or(0.0, |p| p.sample(rng));
        let signal_bg = self.signal_bg.as_ref().map_or(0.0, |p| p.sample(rng));
        TrialRecord {
            idler_click: idler_pairs > 0 || idler_bg > 0.0,
            signal_click: signal_pairs > 0 || signal_bg > 0.0,
            window_index: 0,
        }
    }
}

/// Draw the photon content of a single coincidence window.
pub fn sample_window(
    params: &SystemParams,
    hypothesis: Hypothesis,
    rng: &mut impl Rng,
) -> TrialRecord {
    WindowSampler::new(params, hypothesis).sample(rng)
}

fn finish_record(
    params: &SystemParams,
    signal: u64,
    idler: u64,
    coincidences: u64,
    k: u64,
) -> MeasurementRecord {
    MeasurementRecord {
        signal_counts: signal,
        idler_counts: idler,
        coincidence_counts: coincidences,
        k_ci: k,
        background_estimate: signal as f64 / (k as f64 * params.tau_c),
    }
}

/// One integration time simulated window by window. Exact but linear in the
/// number of windows; prefer [`run_measurement`] unless the window loop
/// itself is the object under test.
pub fn run_measurement_event(
    params: &SystemParams,
    hypothesis: Hypothesis,
    rng: &mut impl Rng,
) -> MeasurementRecord {
    let k = params.ci_trials();
    let sampler = WindowSampler::new(params, hypothesis);
    let (mut signal, mut idler, mut coincidences) = (0u64, 0u64, 0u64);
    for _ in 0..k {
        let t = sampler.sample(rng);
        signal += t.signal_click as u64;
        idler += t.idler_click as u64;
        coincidences += (t.signal_click && t.idler_click) as u64;
    }
    finish_record(params, signal, idler, coincidences, k)
}

/// One integration time sampled as a multinomial over the four per-window
/// outcomes; distribution-identical to the window loop and O(1) in the
/// window count.
pub fn run_measurement_aggregated(
    params: &SystemParams,
    hypothesis: Hypothesis,
    rng: &mut impl Rng,
) -> MeasurementRecord {
    let k = params.ci_trials();
    let q = window_joint_probs(params, hypothesis);

    let draw = |k: u64, p: f64, rng: &mut dyn rand::RngCore| -> u64 {
        if k == 0 || p <= 0.0 {
            0
        } else if p >= 1.0 {
            k
        } else {
            Binomial::new(k, p).unwrap().sample(rng)
        }
    };

    let n_both = draw(k, q.both, rng);
    let rem = k - n_both;
    let p_idler_only = (q.idler_only / (1.0 - q.both)).clamp(0.0, 1.0);
    let n_idler_only = draw(rem, p_idler_only, rng);
    let rem = rem - n_idler_only;
    let p_signal_only = (q.signal_only / (1.0 - q.both - q.idler_only)).clamp(0.0, 1.0);
    let n_signal_only = draw(rem, p_signal_only, rng);

    finish_record(
        params,
        n_both + n_signal_only,
        n_both + n_idler_only,
        n_both,
        k,
    )
}

/// Window-count threshold above which [`run_measurement`] switches from the
/// explicit window loop to multinomial aggregation.
pub const EVENT_LOOP_LIMIT: u64 = 1_000_000;

/// Simulate one measurement of `t_int`, choosing the event loop for small
/// window counts and the aggregated sampler for large ones.
pub fn run_measurement(
    params: &SystemParams,
    hypothesis: Hypothesis,
    rng: &mut impl Rng,
) -> MeasurementRecord {
    if params.ci_trials() <= EVENT_LOOP_LIMIT {
        run_measurement_event(params, hypothesis, rng)
    } else {
        run_measurement_aggregated(params, hypothesis, rng)
    }
}

/// Heralded second-order coherence of the signal path, estimated from a
/// three-detector arrangement: the signal arm is split 50/50 after the
/// target and both outputs are read out with the signal-arm efficiency.
///
/// Returns `N_ABI * N_I / (N_AI * N_BI)` over the requested number of
/// windows.
pub fn estimate_g2(
    params: &SystemParams,
    rng: &mut impl Rng,
    windows: u64,
) -> Result<f64, MonteCarloError> {
    let pairs = (params.n_mean > 0.0)
        .then(|| Geometric::new(1.0 / (1.0 + params.n_mean)).expect("valid geometric"));
    let mean_arm_bg = params.eta_s * params.nbg_s / 2.0;
    let arm_bg = (mean_arm_bg > 0.0).then(|| Poisson::new(mean_arm_bg).unwrap());
    let mean_idl_bg = params.eta_i * params.nbg_i;
    let idler_bg = (mean_idl_bg > 0.0).then(|| Poisson::new(mean_idl_bg).unwrap());

    let (mut n_i, mut n_ai, mut n_bi, mut n_abi) = (0u64, 0u64, 0u64, 0u64);
    for _ in 0..windows {
        let n = pairs.as_ref().map_or(0, |g| g.sample(rng));
        let mut idler = false;
        let mut arm_a = false;
        let mut arm_b = false;
        for _ in 0..n {
            if rng.random_bool(params.eta_i) {
                idler = true;
            }
            // the signal photon survives the target, picks an arm, then detects
            if params.xi > 0.0 && rng.random_bool(params.xi) && rng.random_bool(params.eta_s) {
                if rng.random_bool(0.5) {
                    arm_a = true;
                } else {
                    arm_b = true;
                }
            }
        }
        if let Some(p) = &idler_bg {
            idler |= p.sample(rng) > 0.0;
        }
        if let Some(p) = &arm_bg {
            arm_a |= p.sample(rng) > 0.0;
            arm_b |= p.sample(rng) > 0.0;
        }
        if idler {
            n_i += 1;
            n_ai += arm_a as u64;
            n_bi += arm_b as u64;
            n_abi += (arm_a && arm_b) as u64;
        }
    }
    if n_i == 0 || n_ai == 0 || n_bi == 0 {
        return Err(MonteCarloError::InsufficientStatistics);
    }
    Ok(n_abi as f64 * n_i as f64 / (n_ai as f64 * n_bi as f64))
}

/// One closed-form probability checked against its sampled frequency.
#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub quantity: &'static str,
    pub expected: f64,
    pub empirical: f64,
    /// |empirical - expected| in units of the binomial standard error.
    pub sigma_deviation: f64,
}

/// Oracle comparison for one parameter set.
#[derive(Debug, Clone)]
pub struct OracleRow {
    pub label: String,
    pub params: SystemParams,
    pub checks: Vec<OracleCheck>,
}

impl OracleRow {
    pub fn max_sigma_deviation(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.sigma_deviation)
            .fold(0.0, f64::max)
    }
}

/// Sample `windows` coincidence windows under each hypothesis and compare
/// the four closed-form probabilities (`p_h0_ci`, `p_h1_ci`, `p_idler`,
/// `p_h1_qi`) against the event-level frequencies.
pub fn oracle_check_params(
    label: &str,
    params: &SystemParams,
    windows: u64,
    rng: &mut impl Rng,
) -> OracleRow {
    let clicks =
        crate::click_model::click_probabilities(params).expect("oracle sets herald successfully");

    let h1 = WindowSampler::new(params, Hypothesis::H1);
    let (mut idler, mut signal_h1, mut coincidences) = (0u64, 0u64, 0u64);
    for _ in 0..windows {
        let t = h1.sample(rng);
        idler += t.idler_click as u64;
        signal_h1 += t.signal_click as u64;
        coincidences += (t.idler_click && t.signal_click) as u64;
    }
    let h0 = WindowSampler::new(params, Hypothesis::H0);
    let mut signal_h0 = 0u64;
    for _ in 0..windows {
        signal_h0 += h0.sample(rng).signal_click as u64;
    }

    let deviation = |p: f64, count: u64, trials: u64| -> (f64, f64) {
        let emp = count as f64 / trials as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt().max(1e-300);
        (emp, (emp - p).abs() / se)
    };

    let mut checks = Vec::new();
    for (quantity, p, count, trials) in [
        ("p_h0_ci", clicks.p_h0_ci, signal_h0, windows),
        ("p_h1_ci", clicks.p_h1_ci, signal_h1, windows),
        ("p_idler", clicks.p_idler, idler, windows),
        ("p_h1_qi", clicks.p_h1_qi, coincidences, idler.max(1)),
    ] {
        let (empirical, sigma_deviation) = deviation(p, count, trials);
        checks.push(OracleCheck {
            quantity,
            expected: p,
            empirical,
            sigma_deviation,
        });
    }
    OracleRow {
        label: label.to_string(),
        params: *params,
        checks,
    }
}

/// Parameter sets spanning the operating regimes: the bundled presets plus
/// seeded random draws with per-window means below 1e-2 and detected
/// backgrounds up to a few megahertz.
pub fn oracle_parameter_sets(count: usize, seed: u64) -> Vec<(String, SystemParams)> {
    use crate::params::presets;
    let mut sets: Vec<(String, SystemParams)> = vec![
        ("detection_33db".into(), presets::detection_33db()),
        ("detection_52db".into(), presets::detection_52db()),
        ("jamming_33db".into(), presets::jamming_33db()),
        ("rangefinding".into(), presets::rangefinding()),
        ("source_rates_33db".into(), presets::source_rates_33db()),
    ];
    let mut rng = RngSeedPolicy::new(seed).stream(0xC0DE, 0);
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> f64 {
        (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
    };
    while sets.len() < count {
        let tau_c = 2e-9;
        let eta_s = 0.1 + 0.85 * rng.random::<f64>();
        let eta_i = 0.05 + 0.45 * rng.random::<f64>();
        let bg_rate = log_uniform(&mut rng, 5e4, 3e6);
        let params = SystemParams {
            n_mean: log_uniform(&mut rng, 3e-4, 1e-2),
            xi: log_uniform(&mut rng, 1e-4, 1e-2),
            eta_s,
            eta_i,
            nbg_s: bg_rate * tau_c / eta_s,
            nbg_i: log_uniform(&mut rng, 1e-7, 2e-5),
            tau_c,
            t_int: 0.1,
            gamma: 1.0,
            beta: 1.0,
        };
        sets.push((format!("random_{}", sets.len() - 4), params));
    }
    sets.truncate(count);
    sets
}

/// Run the oracle sweep over `count` parameter sets. Deterministic in
/// (count, windows, seed).
pub fn oracle_sweep(count: usize, windows: u64, seed: u64) -> Vec<OracleRow> {
    let policy = RngSeedPolicy::new(seed);
    oracle_parameter_sets(count, seed)
        .into_iter()
        .enumerate()
        .map(|(i, (label, params))| {
            let mut rng = policy.stream(1, i as u64);
            oracle_check_params(&label, &params, windows, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::click_model;
    use crate::params::presets;

    /// Exact heralded-g2 of the microscopic model via inclusion-exclusion
    /// over the three no-click events (independent oracle for estimate_g2).
    /// A pair's signal photon reaches at most one splitter arm, so the
    /// per-pair probability of missing both arms is 1 - 2 alpha.
    fn g2_oracle(params: &SystemParams) -> f64 {
        let n = params.n_mean;
        let s = |z: f64| 1.0 / (1.0 + n * (1.0 - z));
        let alpha = params.xi * params.eta_s / 2.0; // per-arm pair survival
        let i = params.eta_i;
        let ba = (-params.eta_s * params.nbg_s / 2.0).exp();
        let bi = (-params.eta_i * params.nbg_i).exp();

        let p_na = s(1.0 - alpha) * ba;
        let p_ni = s(1.0 - i) * bi;
        let p_nanb = s(1.0 - 2.0 * alpha) * ba * ba;
        let p_nani = s((1.0 - alpha) * (1.0 - i)) * ba * bi;
        let p_all = s((1.0 - 2.0 * alpha) * (1.0 - i)) * ba * ba * bi;

        let p_i = 1.0 - p_ni;
        let p_ai = 1.0 - p_na - p_ni + p_nani;
        let p_abi = 1.0 - 2.0 * p_na - p_ni + p_nanb + 2.0 * p_nani - p_all;
        p_abi * p_i / (p_ai * p_ai)
    }

    #[test]
    fn silent_source_never_clicks() {
        let p = SystemParams {
            n_mean: 0.0,
            nbg_s: 0.0,
            nbg_i: 0.0,
            ..presets::detection_33db()
        };
        let mut rng = RngSeedPolicy::new(1).stream(0, 0);
        let sampler = WindowSampler::new(&p, Hypothesis::H1);
        for _ in 0..10_000 {
            let t = sampler.sample(&mut rng);
            assert!(!t.idler_click && !t.signal_click);
        }
    }

    #[test]
    fn window_joint_probs_match_sampler() {
        // The multinomial aggregation law must describe the event sampler.
        let params = SystemParams {
            n_mean: 5e-3,
            nbg_i: 2e-4,
            ..presets::detection_33db()
        };
        let q = window_joint_probs(&params, Hypothesis::H1);
        let sampler = WindowSampler::new(&params, Hypothesis::H1);
        let mut rng = RngSeedPolicy::new(42).stream(0, 0);
        let n = 2_000_000u64;
        let (mut both, mut io, mut so) = (0u64, 0u64, 0u64);
        for _ in 0..n {
            let t = sampler.sample(&mut rng);
            match (t.idler_click, t.signal_click) {
                (true, true) => both += 1,
                (true, false) => io += 1,
                (false, true) => so += 1,
                _ => {}
            }
        }
        for (label, count, p) in [
            ("both", both, q.both),
            ("idler_only", io, q.idler_only),
            ("signal_only", so, q.signal_only),
        ] {
            let emp = count as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (emp - p).abs() <= 4.0 * se.max(1e-12),
                "{label}: emp={emp} expected={p} se={se}"
            );
        }
    }

    #[test]
    fn aggregated_measurement_matches_window_loop_statistics() {
        let params = SystemParams {
            t_int: 4e-5, // 20k windows: event loop affordable
            n_mean: 5e-3,
            ..presets::detection_33db()
        };
        let policy = RngSeedPolicy::new(7);
        let runs = 300;
        let mut mean_event = [0.0f64; 3];
        let mut mean_agg = [0.0f64; 3];
        for i in 0..runs {
            let e = run_measurement_event(&params, Hypothesis::H1, &mut policy.stream(0, i));
            let a = run_measurement_aggregated(&params, Hypothesis::H1, &mut policy.stream(1, i));
            e.check_invariants().unwrap();
            a.check_invariants().unwrap();
            for (acc, v) in mean_event.iter_mut().zip([
                e.signal_counts as f64,
                e.idler_counts as f64,
                e.coincidence_counts as f64,
            ]) {
                *acc += v / runs as f64;
            }
            for (acc, v) in mean_agg.iter_mut().zip([
                a.signal_counts as f64,
                a.idler_counts as f64,
                a.coincidence_counts as f64,
            ]) {
                *acc += v / runs as f64;
            }
        }
        let q = window_joint_probs(&params, Hypothesis::H1);
        let k = params.ci_trials() as f64;
        let expected = [q.p_signal() * k, q.p_idler() * k, q.both * k];
        for idx in 0..3 {
            let se = (expected[idx] / runs as f64).sqrt().max(1e-9);
            assert!(
                (mean_event[idx] - expected[idx]).abs() <= 4.0 * se,
                "event ch{idx}: {} vs {}",
                mean_event[idx],
                expected[idx]
            );
            assert!(
                (mean_agg[idx] - expected[idx]).abs() <= 4.0 * se,
                "agg ch{idx}: {} vs {}",
                mean_agg[idx],
                expected[idx]
            );
        }
    }

    #[test]
    fn detection_regime_measurement_counts() {
        // H0 signal counts ~ 1e5 per 0.1 s with Poisson spread ~ sqrt(1e5);
        // H1 adds the detected excess implied by the preset.
        let params = presets::detection_33db();
        let policy = RngSeedPolicy::new(11);
        let n = 400;
        let mut h0_counts = Vec::with_capacity(n as usize);
        let mut h1_sum = 0.0;
        for i in 0..n {
            let r0 = run_measurement(&params, Hypothesis::H0, &mut policy.stream(0, i));
            let r1 = run_measurement(&params, Hypothesis::H1, &mut policy.stream(1, i));
            h0_counts.push(r0.signal_counts as f64);
            h1_sum += r1.signal_counts as f64;
        }
        let mean0 = h0_counts.iter().sum::<f64>() / n as f64;
        assert!((mean0 - 99_900.0).abs() < 4.0 * (99_900.0f64 / n as f64).sqrt());
        let var0 = h0_counts.iter().map(|c| (c - mean0).powi(2)).sum::<f64>() / (n - 1) as f64;
        let ratio = var0 / mean0;
        assert!((ratio - 1.0).abs() < 0.25, "variance/mean = {ratio}");

        let q1 = window_joint_probs(&params, Hypothesis::H1);
        let q0 = window_joint_probs(&params, Hypothesis::H0);
        let expected_excess = (q1.p_signal() - q0.p_signal()) * params.ci_trials() as f64;
        let excess = h1_sum / n as f64 - mean0;
        let se = (2.0 * 99_900.0f64 / n as f64).sqrt();
        assert!(
            (excess - expected_excess).abs() < 4.0 * se,
            "excess={excess} expected={expected_excess}"
        );
    }

    #[test]
    fn background_counts_are_poissonian() {
        // with the pair source off the signal counts must have a
        // variance-to-mean ratio of one
        let params = SystemParams {
            n_mean: 0.0,
            t_int: 2e-4, // 1e5 windows, ~200 counts per measurement
            ..presets::detection_33db()
        };
        let policy = RngSeedPolicy::new(14);
        let n = 5000;
        let counts: Vec<f64> = (0..n)
            .map(|i| {
                run_measurement(&params, Hypothesis::H0, &mut policy.stream(0, i)).signal_counts
                    as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let ratio = var / mean;
        assert!((ratio - 1.0).abs() <= 0.05, "variance/mean = {ratio}");
    }

    #[test]
    fn halving_the_window_halves_accidentals_only() {
        // Same physical rates at tau_c and tau_c/2.
        let base = presets::detection_33db();
        let halved = SystemParams {
            tau_c: base.tau_c / 2.0,
            n_mean: base.n_mean / 2.0,
            nbg_s: base.nbg_s / 2.0,
            ..base
        };
        let acc = |p: &SystemParams| {
            let q = window_joint_probs(p, Hypothesis::H0);
            q.both / p.tau_c
        };
        let tru = |p: &SystemParams| {
            let q1 = window_joint_probs(p, Hypothesis::H1);
            let q0 = window_joint_probs(p, Hypothesis::H0);
            (q1.both - q0.both) / p.tau_c
        };
        let acc_ratio = acc(&halved) / acc(&base);
        assert!(
            (acc_ratio - 0.5).abs() < 0.01,
            "accidental ratio {acc_ratio}"
        );
        let true_ratio = tru(&halved) / tru(&base);
        assert!(
            (true_ratio - 1.0).abs() < 0.01,
            "true-pair ratio {true_ratio}"
        );
    }

    #[test]
    fn seed_policy_is_deterministic_and_stream_separated() {
        let p = RngSeedPolicy::new(99);
        let a: Vec<u64> = {
            let mut r = p.stream(3, 14);
            (0..8).map(|_| r.random::<u64>()).collect()
        };
        let b: Vec<u64> = {
            let mut r = p.stream(3, 14);
            (0..8).map(|_| r.random::<u64>()).collect()
        };
        assert_eq!(a, b);
        let c: Vec<u64> = {
            let mut r = p.stream(3, 15);
            (0..8).map(|_| r.random::<u64>()).collect()
        };
        assert_ne!(a, c);
    }

    #[test]
    fn poisson_light_has_unit_g2() {
        let p = SystemParams {
            n_mean: 0.0,
            nbg_s: 0.3,
            nbg_i: 0.3,
            xi: 1.0,
            ..presets::detection_33db()
        };
        // the inclusion-exclusion sum cancels seven O(1) terms down to
        // ~1e-7, so only ~9 digits survive
        assert!((g2_oracle(&p) - 1.0).abs() < 1e-6);
        let mut rng = RngSeedPolicy::new(5).stream(0, 0);
        let g2 = estimate_g2(&p, &mut rng, 4_000_000).unwrap();
        assert!((g2 - 1.0).abs() < 0.1, "g2={g2}");
    }

    #[test]
    fn heralded_pairs_are_antibunched() {
        // Source-characterisation arrangement: no target loss, no noise.
        let p = SystemParams {
            xi: 1.0,
            nbg_s: 0.0,
            nbg_i: 0.0,
            eta_i: 0.2,
            ..presets::detection_33db()
        };
        let expected = g2_oracle(&p);
        assert!(
            expected < 0.05,
            "oracle expects antibunching, got {expected}"
        );
        let mut rng = RngSeedPolicy::new(6).stream(0, 0);
        let g2 = estimate_g2(&p, &mut rng, 30_000_000).unwrap();
        assert!(g2 < 0.05, "g2={g2}");
        // crude agreement with the oracle (counts are scarce)
        assert!((g2 - expected).abs() < 0.03, "g2={g2} expected={expected}");
    }

    #[test]
    fn bright_thermal_pairs_bunch() {
        let p = SystemParams {
            n_mean: 5.0,
            xi: 1.0,
            nbg_s: 0.0,
            nbg_i: 0.0,
            eta_s: 0.2,
            eta_i: 0.2,
            ..presets::detection_33db()
        };
        let expected = g2_oracle(&p);
        assert!(expected > 1.0, "thermal limit should bunch, got {expected}");
        let mut rng = RngSeedPolicy::new(8).stream(0, 0);
        let g2 = estimate_g2(&p, &mut rng, 400_000).unwrap();
        assert!(
            (g2 - expected).abs() / expected < 0.1,
            "g2={g2} vs {expected}"
        );
    }

    #[test]
    fn g2_without_heralds_is_an_error() {
        let p = SystemParams {
            n_mean: 0.0,
            nbg_s: 0.0,
            nbg_i: 0.0,
            ..presets::detection_33db()
        };
        let mut rng = RngSeedPolicy::new(9).stream(0, 0);
        assert_eq!(
            estimate_g2(&p, &mut rng, 1000),
            Err(MonteCarloError::InsufficientStatistics)
        );
    }

    #[test]
    fn closed_form_probabilities_agree_with_sampler_in_regime() {
        // Quick in-module check; the full 1e7-window sweep lives in the
        // acceptance suite.
        let params = presets::detection_33db();
        let windows = 1_000_000u64;
        let mut rng = RngSeedPolicy::new(12).stream(0, 0);
        let sampler = WindowSampler::new(&params, Hypothesis::H1);
        let (mut idler, mut signal, mut coinc) = (0u64, 0u64, 0u64);
        for _ in 0..windows {
            let t = sampler.sample(&mut rng);
            idler += t.idler_click as u64;
            signal += t.signal_click as u64;
            coinc += (t.idler_click && t.signal_click) as u64;
        }
        let c = click_model::click_probabilities(&params).unwrap();
        let n = windows as f64;

        let emp_idler = idler as f64 / n;
        let se = (c.p_idler * (1.0 - c.p_idler) / n).sqrt();
        assert!((emp_idler - c.p_idler).abs() < 4.0 * se);

        let emp_sig = signal as f64 / n;
        let se = (c.p_h1_ci * (1.0 - c.p_h1_ci) / n).sqrt();
        assert!((emp_sig - c.p_h1_ci).abs() < 4.0 * se);

        let emp_qi = coinc as f64 / idler as f64;
        let se = (c.p_h1_qi * (1.0 - c.p_h1_qi) / idler as f64).sqrt();
        assert!((emp_qi - c.p_h1_qi).abs() < 4.0 * se);
    }
}
