//! Feed-forward iterative timing recovery on a slip-free burst.
//!
//! The burst-wide mean of the detector output, divided by the detector
//! gain, estimates the constant timing offset. The samples are re-derived
//! from the input with the accumulated correction and the estimate is
//! repeated until it falls below the tolerance; then one of the two
//! polyphases is kept and sliced.

use crate::cycleslip::CorrectedRate;
use crate::error::{Error, Result};
use crate::farrow::fractional_delay;
use crate::ted::{gardner_errors, DetectorGain, TimingErrorSequence};
use crate::waveform::{Modulation, ReceiverSamples, SymbolSequence};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    /// Stop once `|mu| < tolerance`, seconds.
    pub tolerance: f64,
    pub max_iters: usize,
    /// Fraction of each estimate applied, in (0, 1].
    pub damping: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.01,
            max_iters: 20,
            damping: 1.0,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance", "must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be >= 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("damping", format!("{} not in (0, 1]", self.damping)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    pub decided: SymbolSequence,
    /// Offset estimate per iteration, seconds.
    pub mu_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Filled in by pipelines that ran slip correction first.
    pub corrected_rate: Option<CorrectedRate>,
}

/// Symbol-rate samples before slicing, plus the loop trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Synchronized {
    pub soft: Vec<Complex64>,
    /// 0 when the even samples were kept, 1 for the odd ones.
    pub phase: usize,
    /// Total shift applied to the input, seconds.
    pub total_shift: f64,
    pub mu_history: Vec<f64>,
    pub converged: bool,
    /// Final 2-sps samples.
    pub aligned: ReceiverSamples,
}

/// Mean detector output converted to seconds. Averages over the
/// `N - 2` available values.
pub fn estimate_mu(u: &TimingErrorSequence, gain: &DetectorGain) -> Result<f64> {
    if !(gain.gain > 0.0) {
        return Err(Error::invalid("gain", format!("{} must be > 0", gain.gain)));
    }
    let mean = u.mean().ok_or(Error::TooShort {
        needed: 1,
        got: 0,
        unit: "detector outputs",
    })?;
    Ok(mean / gain.gain)
}

/// Run the estimate/interpolate loop and pick the symbol polyphase.
pub fn synchronize(rx: &ReceiverSamples, gain: &DetectorGain, cfg: &RecoveryConfig) -> Result<Synchronized> {
    cfg.validate()?;
    let mut current = rx.clone();
    let mut total_shift = 0.0;
    let mut mu_history = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let mu = estimate_mu(&gardner_errors(&current)?, gain)?;
        mu_history.push(mu);
        if mu.abs() < cfg.tolerance {
            converged = true;
            break;
        }
        // Late sampling gives mu > 0, so move the instants earlier. Always
        // interpolate from the input so errors do not compound.
        total_shift -= cfg.damping * mu;
        current = fractional_delay(rx, total_shift).rx;
    }
    let phase = polyphase_with_more_power(&current.samples);
    let soft = current.samples.iter().skip(phase).step_by(2).copied().collect();
    Ok(Synchronized {
        soft,
        phase,
        total_shift,
        mu_history,
        converged,
        aligned: current,
    })
}

fn polyphase_with_more_power(samples: &[Complex64]) -> usize {
    let mut power = [0.0f64; 2];
    let mut count = [0usize; 2];
    for (i, s) in samples.iter().enumerate() {
        power[i % 2] += s.norm_sqr();
        count[i % 2] += 1;
    }
    let mean = |p: usize| if count[p] == 0 { 0.0 } else { power[p] / count[p] as f64 };
    if mean(1) > mean(0) {
        1
    } else {
        0
    }
}

/// Timing recovery followed by hard decisions.
pub fn recover(
    rx: &ReceiverSamples,
    gain: &DetectorGain,
    modulation: Modulation,
    cfg: &RecoveryConfig,
) -> Result<SyncResult> {
    let sync = synchronize(rx, gain, cfg)?;
    Ok(SyncResult {
        decided: decide(&sync.soft, modulation),
        iterations: sync.mu_history.len(),
        mu_history: sync.mu_history,
        converged: sync.converged,
        corrected_rate: None,
    })
}

/// Nearest constellation point per sample.
pub fn decide(samples: &[Complex64], modulation: Modulation) -> SymbolSequence {
    let alphabet = modulation.alphabet();
    let symbols = samples
        .iter()
        .map(|s| match modulation {
            Modulation::Bpsk => alphabet[usize::from(s.re < 0.0)],
            Modulation::Qpsk => {
                let h = std::f64::consts::FRAC_1_SQRT_2;
                Complex64::new(if s.re < 0.0 { -h } else { h }, if s.im < 0.0 { -h } else { h })
            }
        })
        .collect();
    SymbolSequence { symbols, modulation }
}
