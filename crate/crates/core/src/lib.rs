//! Symbol synchronization for burst receivers whose symbol-rate estimate is
//! wrong.
//!
//! A rate mismatch between transmitter and receiver makes the sampling
//! instant drift linearly through the burst. A Gardner detector can only
//! track offsets inside half a symbol, so the drift wraps around and the
//! receiver slips a whole symbol every `K = (1 + eps) / eps` symbols. The
//! wrapped error sequence is periodic, which this crate exploits:
//!
//! 1. [`cycleslip`] finds the slip tone in the zero-padded DFT of the
//!    Gardner output and corrects the symbol-rate estimate until the
//!    spectrum is DC-dominant.
//! 2. [`recovery`] estimates the remaining constant delay from the mean
//!    detector output and removes it with a cubic Farrow interpolator
//!    ([`farrow`]), iterating until the estimate is negligible.
//!
//! [`waveform`] synthesizes the test signals and [`harness`] runs the
//! Monte-Carlo BER experiments.
//!
//! Time is measured in units of the transmitter symbol period, so `T = 1`.

// Parameter checks are written `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cycleslip;
pub mod error;
pub mod farrow;
pub mod harness;
pub mod recovery;
pub mod ted;
pub mod waveform;

pub use num_complex::Complex64;

pub use cycleslip::{detect, rate_hypotheses, resolve_rate, spectrum, CorrectedRate, SlipConfig, SlipReport};
pub use error::{Error, Result};
pub use farrow::{fractional_delay, interpolate, InterpWindow};
pub use harness::{ber_sweep, burst_by_burst, count_ber, run_trial, BerRecord, Pipeline, ReceivedBurst, TrialConfig};
pub use recovery::{decide, estimate_mu, recover, RecoveryConfig, SyncResult};
pub use ted::{calibrate_gain, gardner_errors, s_curve, DetectorGain, TimingErrorSequence};
pub use waveform::{
    apply_impairments, generate_symbols, matched_filter, resample_two_sps, srrc_pulse, synthesize_burst, ChannelSpec,
    Modulation, PulseShape, ReceiverSamples, SampleStream, SymbolSequence,
};

/// Version tag written into every JSON document this crate emits.
pub const SCHEMA_VERSION: u32 = 1;
