//! Closed-form single-shot click probabilities for the classical (CI) and
//! coincidence (QI) channels under a Poissonian background.
//!
//! The operating regime has per-window probabilities of 1e-3 to 1e-6, so all
//! expressions are arranged around `expm1` to avoid evaluating `1 - exp(-x)`
//! for small `x` and to keep differences of near-unity no-click terms exact.

use crate::params::SystemParams;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClickModelError {
    /// The heralding channel never fires, so no idler-conditioned
    /// probability exists.
    #[error("idler firing probability is zero; the coincidence channel is undefined")]
    DegenerateHerald,
}

/// The four single-shot probabilities plus the heralding quantities they
/// were conditioned on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickProbabilities {
    /// Signal click per window, target absent (shared by CI and QI).
    pub p_h0_ci: f64,
    /// Signal click per window, target present, classical channel.
    pub p_h1_ci: f64,
    /// Signal click per idler-heralded window, target absent.
    pub p_h0_qi: f64,
    /// Signal click per idler-heralded window, target present.
    pub p_h1_qi: f64,
    /// Idler firing probability per window.
    pub p_idler: f64,
    /// Signal mean photon number conditioned on an idler no-click.
    pub n_cond: f64,
}

impl ClickProbabilities {
    /// Invariants every parameter set must satisfy: probabilities in [0,1],
    /// the H0 channels identical, and H1 >= H0 whenever signal returns.
    pub fn check(&self) -> Result<(), String> {
        for (name, p) in [
            ("p_h0_ci", self.p_h0_ci),
            ("p_h1_ci", self.p_h1_ci),
            ("p_h0_qi", self.p_h0_qi),
            ("p_h1_qi", self.p_h1_qi),
            ("p_idler", self.p_idler),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} outside [0,1]"));
            }
        }
        if self.p_h0_qi != self.p_h0_ci {
            return Err("p_h0_qi must equal p_h0_ci exactly".into());
        }
        Ok(())
    }
}

/// Signal-detector click probabilities for the classical channel,
/// `(p_h0, p_h1)` per coincidence window.
pub fn ci_click_probs(params: &SystemParams) -> (f64, f64) {
    let p_h0 = -(-params.nbg_s * params.eta_s).exp_m1();
    let g = params.gamma * params.eta_s * params.xi * params.n_mean;
    let w = params.nbg_s * params.eta_s / (1.0 + g);
    // 1 - exp(-w)/(1+g) rearranged as (g + (1 - exp(-w))) / (1+g)
    let p_h1 = (g + (-(-w).exp_m1())) / (1.0 + g);
    (p_h0, p_h1)
}

/// Idler firing probability per window.
pub fn idler_prob(params: &SystemParams) -> f64 {
    let q = params.eta_i * (params.n_mean + params.nbg_i);
    q / (1.0 + q)
}

/// Signal mean photon number after conditioning on an idler no-click.
pub fn conditioned_mean(params: &SystemParams) -> f64 {
    let n = params.n_mean;
    let e = params.eta_i;
    let b = params.nbg_i;
    n * (1.0 + e * b - e) / (1.0 + e * b + n * e)
}

/// Idler-heralded signal click probabilities, `(p_h0_qi, p_h1_qi)`.
///
/// The H1 branch conditions the signal state on the idler having fired by
/// subtracting the no-click contribution of the idler-silent thermal state
/// with mean [`conditioned_mean`].
pub fn qi_click_probs(params: &SystemParams) -> Result<(f64, f64), ClickModelError> {
    let p_idler = idler_prob(params);
    if p_idler <= 0.0 {
        return Err(ClickModelError::DegenerateHerald);
    }
    let (p_h0, _) = ci_click_probs(params);

    let scale = params.xi * params.eta_s * params.beta;
    let z = params.n_mean * scale;
    let zx = conditioned_mean(params) * scale;
    let wx = params.eta_s * params.nbg_s / (1.0 + zx);

    // p_h1 = 1 - (E(z) - (1-p_I) E(zx)) / p_I with E(z) = exp(-w)/(1+z).
    // Both E terms are ~1 and nearly equal, so the numerator is formed from
    // small differences directly:
    //   p_I (1 - E(zx)) - (E(z) - E(zx))
    let one_minus_ezx = (zx + (-(-wx).exp_m1())) / (1.0 + zx);
    // z - zx without subtracting the two conditioned means
    let dn = params.n_mean * params.eta_i * (1.0 + params.n_mean)
        / (1.0 + params.eta_i * (params.nbg_i + params.n_mean));
    let dz = scale * dn;
    let dw = params.eta_s * params.nbg_s * dz / ((1.0 + z) * (1.0 + zx));
    let ez_minus_ezx = (-wx).exp() * ((1.0 + zx) * dw.exp_m1() - dz) / ((1.0 + z) * (1.0 + zx));

    let p_h1 = (p_idler * one_minus_ezx - ez_minus_ezx) / p_idler;
    Ok((p_h0, p_h1.clamp(0.0, 1.0)))
}

/// All single-shot probabilities for one parameter set.
pub fn click_probabilities(params: &SystemParams) -> Result<ClickProbabilities, ClickModelError> {
    let (p_h0_ci, p_h1_ci) = ci_click_probs(params);
    let (p_h0_qi, p_h1_qi) = qi_click_probs(params)?;
    Ok(ClickProbabilities {
        p_h0_ci,
        p_h1_ci,
        p_h0_qi,
        p_h1_qi,
        p_idler: idler_prob(params),
        n_cond: conditioned_mean(params),
    })
}
