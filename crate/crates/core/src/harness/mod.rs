//! Monte-Carlo BER experiments over the full receiver chain.
//!
//! A trial generates a burst, passes it through the channel, samples it at
//! the receiver's wrong symbol rate and hands the samples to one of four
//! receivers:
//!
//! * `corrected`: slip correction, then iterative timing recovery;
//! * `uncorrected`: timing recovery on the drifting samples;
//! * `burst-by-burst`: independent recovery per short segment;
//! * `genie`: sampled at the true rate and delay, decisions only.
//!
//! Errors are counted positionally against the transmitted payload, so a
//! slipped symbol corrupts everything after it.

mod format;
mod seed;
mod sweep;

pub use format::format_sig;
pub use seed::{derive_seed, splitmix64};
pub use sweep::{ber_sweep, write_csv, SweepRow, SweepSpec, CSV_HEADER};

use crate::cycleslip::{detect, resolve_rate, CorrectedRate, SlipConfig, SlipReport};
use crate::error::{Error, Result};
use crate::farrow::fractional_delay;
use crate::recovery::{decide, recover, synchronize, RecoveryConfig, SyncResult};
use crate::ted::{calibrate_gain, gardner_errors, DetectorGain};
use crate::waveform::{
    generate_symbols, receive_burst, resample_two_sps, srrc_pulse, ChannelSpec, Modulation, PulseShape,
    ReceiverSamples, SampleStream, SymbolSequence,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Corrected,
    Uncorrected,
    BurstByBurst,
    Genie,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Corrected => "corrected",
            Pipeline::Uncorrected => "uncorrected",
            Pipeline::BurstByBurst => "burst-by-burst",
            Pipeline::Genie => "genie",
        }
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrected" => Ok(Pipeline::Corrected),
            "uncorrected" => Ok(Pipeline::Uncorrected),
            "burst-by-burst" | "burst_by_burst" => Ok(Pipeline::BurstByBurst),
            "genie" => Ok(Pipeline::Genie),
            other => Err(Error::invalid("pipeline", format!("unknown `{other}`"))),
        }
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub modulation: Modulation,
    /// Payload length in symbols.
    pub burst_len: usize,
    pub ebn0_db: f64,
    /// Normalized symbol-rate offset of the receiver.
    pub eps: f64,
    /// Timing delay in symbol periods.
    pub tau_over_t: f64,
    pub dft_len: usize,
    pub pipeline: Pipeline,
    pub segment_len: usize,
    pub seed: u64,
    pub rolloff: f64,
    pub span: usize,
    pub oversampling: usize,
    pub threshold: f64,
    pub max_rounds: usize,
    /// Spectral lobes tried per slip-correction round.
    pub slip_candidates: usize,
    pub recovery: RecoveryConfig,
    pub carrier_offset: f64,
    pub phase: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            modulation: Modulation::Bpsk,
            burst_len: 300,
            ebn0_db: 10.0,
            eps: 0.1,
            tau_over_t: 0.2,
            dft_len: 5000,
            pipeline: Pipeline::Corrected,
            segment_len: 50,
            seed: 0,
            rolloff: crate::waveform::DEFAULT_ROLLOFF,
            span: crate::waveform::DEFAULT_SPAN,
            oversampling: crate::waveform::DEFAULT_OVERSAMPLING,
            threshold: crate::cycleslip::DEFAULT_THRESHOLD,
            max_rounds: crate::cycleslip::DEFAULT_MAX_ROUNDS,
            slip_candidates: crate::cycleslip::DEFAULT_CANDIDATES,
            recovery: RecoveryConfig::default(),
            carrier_offset: 0.0,
            phase: 0.0,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burst_len < 16 {
            return Err(Error::invalid("burst_len", format!("{} < 16", self.burst_len)));
        }
        if self.dft_len < self.burst_len {
            return Err(Error::invalid(
                "dft_len",
                format!("{} shorter than burst length {}", self.dft_len, self.burst_len),
            ));
        }
        if !(self.tau_over_t.abs() <= 0.4) {
            return Err(Error::invalid("tau", format!("{} not in [-0.4, 0.4]", self.tau_over_t)));
        }
        if self.pipeline == Pipeline::BurstByBurst && self.segment_len < 16 {
            return Err(Error::invalid("segment_len", format!("{} < 16", self.segment_len)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::invalid("threshold", "must be > 0"));
        }
        if self.max_rounds == 0 {
            return Err(Error::invalid("max_rounds", "must be >= 1"));
        }
        if self.slip_candidates == 0 {
            return Err(Error::invalid("slip_candidates", "must be >= 1"));
        }
        self.channel().validate()?;
        self.recovery.validate()
    }

    pub fn channel(&self) -> ChannelSpec {
        ChannelSpec {
            ebn0_db: self.ebn0_db,
            carrier_offset: self.carrier_offset,
            phase: self.phase,
            delay: self.tau_over_t,
            rate_offset: self.eps,
        }
    }

    pub fn slip_config(&self) -> SlipConfig {
        SlipConfig {
            dft_len: self.dft_len,
            threshold: self.threshold,
            max_rounds: self.max_rounds,
            candidates: self.slip_candidates,
        }
    }

    pub fn pulse(&self) -> Result<PulseShape> {
        srrc_pulse(self.rolloff, self.span, self.oversampling)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerRecord {
    pub config: TrialConfig,
    pub bit_errors: u64,
    pub bits_total: u64,
    pub ber: f64,
    /// Slip tone found at the receiver's initial rate.
    pub slip_detected: bool,
    #[serde(rename = "K_hat")]
    pub k_hat: f64,
    /// Relative error of the symbol rate finally used.
    pub rate_error_final: f64,
    pub iterations: usize,
    pub converged: bool,
}

const GAIN_SEED: u64 = 0x6a77_d3e1_0c51_2f47;

/// Detector gain for a pulse and modulation, calibrated once per process.
pub fn cached_gain(pulse: &PulseShape, modulation: Modulation) -> Result<DetectorGain> {
    type Key = (u64, usize, usize, Modulation);
    static CACHE: OnceLock<Mutex<HashMap<Key, DetectorGain>>> = OnceLock::new();
    let key = (pulse.rolloff.to_bits(), pulse.span, pulse.oversampling, modulation);
    let cache = CACHE.get_or_init(Default::default);
    if let Some(g) = cache.lock().unwrap().get(&key) {
        return Ok(g.clone());
    }
    let g = calibrate_gain(pulse, modulation, GAIN_SEED)?;
    cache.lock().unwrap().insert(key, g.clone());
    Ok(g)
}

/// Zero symbols appended after the payload so the receiver window at a
/// slow assumed rate still lies inside the capture.
fn tail_symbols(burst_len: usize, eps: f64, span: usize) -> usize {
    let stretch = (1.0 / (1.0 + eps) - 1.0).max(0.0);
    (burst_len as f64 * stretch).ceil() as usize + span / 2 + 2
}

/// Run one burst through the chosen receiver.
pub fn run_trial(config: &TrialConfig) -> Result<BerRecord> {
    config.validate()?;
    let pulse = config.pulse()?;
    let gain = cached_gain(&pulse, config.modulation)?;
    run_trial_with(config, &pulse, &gain)
}

/// A transmitted burst and the matched-filter output it produced, ready to
/// be sampled at any symbol-rate hypothesis.
#[derive(Debug, Clone)]
pub struct ReceivedBurst {
    pub truth: SymbolSequence,
    pub stream: SampleStream,
    pub tau_over_t: f64,
    /// Rate the receiver believes in, `1 + eps`.
    pub assumed_rate: f64,
}

impl ReceivedBurst {
    /// Generate and receive the burst described by `config`, with the same
    /// seeds [`run_trial`] uses.
    pub fn new(config: &TrialConfig, pulse: &PulseShape) -> Result<Self> {
        let n = config.burst_len;
        let truth = generate_symbols(config.modulation, n, derive_seed(config.seed, &[1]));
        let stream = receive_burst(
            &truth,
            pulse,
            &config.channel(),
            tail_symbols(n, config.eps, config.span),
            derive_seed(config.seed, &[2]),
        )?;
        Ok(Self {
            truth,
            stream,
            tau_over_t: config.tau_over_t,
            assumed_rate: 1.0 + config.eps,
        })
    }

    /// Two samples per symbol at symbol rate `rate`.
    pub fn sample(&self, rate: f64) -> Result<ReceiverSamples> {
        resample_two_sps(&self.stream, 1.0 / rate, self.tau_over_t, self.truth.count())
    }

    /// Slip test on the detector output at the assumed rate.
    pub fn detect(&self, slip: &SlipConfig) -> Result<SlipReport> {
        detect(
            &gardner_errors(&self.sample(self.assumed_rate)?)?,
            slip.dft_len,
            slip.threshold,
        )
    }

    /// Rate correction starting from the assumed rate.
    pub fn resolve(&self, slip: &SlipConfig) -> Result<CorrectedRate> {
        resolve_rate(|r| self.sample(r), gardner_errors, self.assumed_rate, slip)
    }
}

pub(crate) fn run_trial_with(config: &TrialConfig, pulse: &PulseShape, gain: &DetectorGain) -> Result<BerRecord> {
    let burst = ReceivedBurst::new(config, pulse)?;
    let n = config.burst_len;
    let assumed_rate = burst.assumed_rate;
    let slip_cfg = config.slip_config();

    let mut slip = SlipReport {
        q: 0,
        k_hat: f64::INFINITY,
        is_slip: false,
        dominance: 0.0,
        l: config.dft_len,
    };
    let mut rate_used = assumed_rate;
    let result = match config.pipeline {
        Pipeline::Genie => {
            let rx = resample_two_sps(&burst.stream, 1.0, 0.0, n)?;
            let soft: Vec<_> = rx.samples.iter().step_by(2).copied().collect();
            rate_used = 1.0;
            SyncResult {
                decided: decide(&soft, config.modulation),
                mu_history: Vec::new(),
                iterations: 0,
                converged: true,
                corrected_rate: None,
            }
        }
        Pipeline::Corrected => {
            let corrected = burst.resolve(&slip_cfg)?;
            slip = burst.detect(&slip_cfg)?;
            rate_used = corrected.rate;
            let mut r = recover(
                &burst.sample(corrected.rate)?,
                gain,
                config.modulation,
                &config.recovery,
            )?;
            r.corrected_rate = Some(corrected);
            r
        }
        Pipeline::Uncorrected | Pipeline::BurstByBurst => {
            let rx = burst.sample(assumed_rate)?;
            slip = detect(&gardner_errors(&rx)?, slip_cfg.dft_len, slip_cfg.threshold)?;
            if config.pipeline == Pipeline::Uncorrected {
                recover(&rx, gain, config.modulation, &config.recovery)?
            } else {
                burst_by_burst(&rx, gain, config.segment_len, config.modulation, &config.recovery)?
            }
        }
    };
    let (bit_errors, bits_total) = count_ber(&result.decided, &burst.truth)?;
    Ok(BerRecord {
        config: config.clone(),
        bit_errors,
        bits_total,
        ber: bit_errors as f64 / bits_total as f64,
        slip_detected: slip.is_slip,
        k_hat: slip.k_hat,
        rate_error_final: rate_used - 1.0,
        iterations: result.iterations,
        converged: result.converged,
    })
}

/// Timing recovery on consecutive segments at the receiver's uncorrected
/// rate, each segment estimating its own constant offset. A segment starts
/// from the shift the previous one ended with, so drift slower than half a
/// symbol per segment is followed. A remainder shorter than 16 symbols
/// joins the last full segment.
pub fn burst_by_burst(
    rx: &ReceiverSamples,
    gain: &DetectorGain,
    segment_len: usize,
    modulation: Modulation,
    cfg: &RecoveryConfig,
) -> Result<SyncResult> {
    if segment_len < 16 {
        return Err(Error::invalid("segment_len", format!("{segment_len} < 16")));
    }
    let n = rx.count_symbols;
    let mut bounds = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + segment_len).min(n);
        if n - end < 16 {
            end = n;
        }
        bounds.push((start, end));
        start = end;
    }
    let mut decided = Vec::with_capacity(n);
    let mut mu_history = Vec::new();
    let mut converged = true;
    let mut carried = 0.0;
    for (a, b) in bounds {
        let shifted = fractional_delay(rx, carried).rx;
        let seg = ReceiverSamples {
            samples: shifted.samples[2 * a..2 * b].to_vec(),
            assumed_symbol_period: rx.assumed_symbol_period,
            count_symbols: b - a,
        };
        let sync = synchronize(&seg, gain, cfg)?;
        decided.extend(decide(&sync.soft, modulation).symbols);
        carried += sync.total_shift;
        mu_history.extend(sync.mu_history);
        converged &= sync.converged;
    }
    Ok(SyncResult {
        decided: SymbolSequence {
            symbols: decided,
            modulation,
        },
        iterations: mu_history.len(),
        mu_history,
        converged,
        corrected_rate: None,
    })
}

/// Gray bits of a constellation point: sign of each quadrature component.
fn bits_of(s: num_complex::Complex64, modulation: Modulation) -> u8 {
    match modulation {
        Modulation::Bpsk => u8::from(s.re < 0.0),
        Modulation::Qpsk => u8::from(s.re < 0.0) | (u8::from(s.im < 0.0) << 1),
    }
}

/// Positional bit errors, no realignment.
pub fn count_ber(decided: &SymbolSequence, truth: &SymbolSequence) -> Result<(u64, u64)> {
    if decided.count() != truth.count() {
        return Err(Error::LengthMismatch {
            left: decided.count(),
            right: truth.count(),
        });
    }
    let m = truth.modulation;
    let errors = decided
        .symbols
        .iter()
        .zip(&truth.symbols)
        .map(|(&d, &t)| (bits_of(d, m) ^ bits_of(t, m)).count_ones() as u64)
        .sum();
    Ok((errors, (truth.count() * m.bits_per_symbol()) as u64))
}

/// Whole-symbol lag in `-max_shift ..= max_shift` that best matches the
/// first `preamble_len` transmitted symbols. For BER bookkeeping only; the
/// blind receiver never uses it.
pub fn align_offset(decided: &SymbolSequence, truth: &SymbolSequence, max_shift: usize, preamble_len: usize) -> isize {
    let max = max_shift as isize;
    (-max..=max)
        .max_by_key(|&lag| {
            (0..preamble_len.min(truth.count()))
                .filter_map(|k| {
                    let j = k as isize + lag;
                    (j >= 0 && (j as usize) < decided.count()).then(|| decided.symbols[j as usize] == truth.symbols[k])
                })
                .filter(|&ok| ok)
                .count()
        })
        .unwrap_or(0)
}
