//! Transmit burst synthesis, channel impairments, matched filtering and
//! receiver-clock sampling.
//!
//! Signals live on an oversampled grid of `Q` samples per symbol. The
//! pulse taps are scaled to unit energy, so the matched-filter output at a
//! symbol instant equals the transmitted symbol and the composite pulse
//! `h * h` peaks at exactly 1.

use crate::error::{Error, Result};
use crate::farrow;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::{Read, Write};
use std::str::FromStr;

pub const DEFAULT_ROLLOFF: f64 = 0.5;
/// Spans that are multiples of four truncate the pulse near a zero of its
/// tail; 24 keeps the summed ISI of the composite pulse below 1e-3.
pub const DEFAULT_SPAN: usize = 24;
pub const DEFAULT_OVERSAMPLING: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Qpsk,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
        }
    }

    /// Unit-energy constellation points.
    pub fn alphabet(self) -> &'static [Complex64] {
        const BPSK: [Complex64; 2] = [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)];
        const QPSK: [Complex64; 4] = [
            Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2),
            Complex64::new(-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
            Complex64::new(-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
            Complex64::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
        ];
        match self {
            Modulation::Bpsk => &BPSK,
            Modulation::Qpsk => &QPSK,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qpsk => "qpsk",
        }
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "qpsk" => Ok(Modulation::Qpsk),
            other => Err(Error::invalid("modulation", format!("unknown `{other}`"))),
        }
    }
}

impl std::fmt::Display for Modulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolSequence {
    pub symbols: Vec<Complex64>,
    pub modulation: Modulation,
}

impl SymbolSequence {
    pub fn count(&self) -> usize {
        self.symbols.len()
    }
}

/// Draw `count` i.i.d. uniform symbols; deterministic in `seed`.
pub fn generate_symbols(modulation: Modulation, count: usize, seed: u64) -> SymbolSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet = modulation.alphabet();
    let symbols = (0..count)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())])
        .collect();
    SymbolSequence { symbols, modulation }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub rolloff: f64,
    /// Total pulse width in symbols.
    pub span: usize,
    /// Samples per symbol.
    pub oversampling: usize,
    /// `span * oversampling + 1` taps, unit energy.
    pub taps: Vec<f64>,
}

impl PulseShape {
    /// Index of the centre tap; may be fractional when `span * Q` is odd.
    pub fn center(&self) -> f64 {
        (self.taps.len() - 1) as f64 / 2.0
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.oversampling as f64
    }

    pub fn describe(&self) -> String {
        format!(
            "srrc(rolloff={},span={},q={})",
            self.rolloff, self.span, self.oversampling
        )
    }
}

/// Square-root raised cosine at `t` symbol periods, unnormalized.
fn srrc_value(beta: f64, t: f64) -> f64 {
    let t = t.abs();
    if t < 1e-12 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    if beta > 0.0 && (t - 1.0 / (4.0 * beta)).abs() < 1e-10 {
        let a = PI / (4.0 * beta);
        return beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

/// Square-root raised cosine taps, scaled so the self-convolution peak is 1.
pub fn srrc_pulse(rolloff: f64, span: usize, oversampling: usize) -> Result<PulseShape> {
    if !(0.0..=1.0).contains(&rolloff) {
        return Err(Error::invalid("rolloff", format!("{rolloff} not in [0, 1]")));
    }
    if span < 4 {
        return Err(Error::invalid("span", format!("{span} < 4")));
    }
    if oversampling < 4 {
        return Err(Error::invalid("oversampling", format!("{oversampling} < 4")));
    }
    let len = span * oversampling + 1;
    let center = (len - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| srrc_value(rolloff, (i as f64 - center) / oversampling as f64))
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let scale = energy.sqrt().recip();
    taps.iter_mut().for_each(|h| *h *= scale);
    Ok(PulseShape {
        rolloff,
        span,
        oversampling,
        taps,
    })
}

/// Rolloff 0.5, [`DEFAULT_SPAN`] symbols, 16 samples per symbol.
pub fn default_pulse() -> PulseShape {
    srrc_pulse(DEFAULT_ROLLOFF, DEFAULT_SPAN, DEFAULT_OVERSAMPLING).expect("valid defaults")
}

/// Complex samples on a uniform grid: sample `m` is at `origin + m * sample_period`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStream {
    pub samples: Vec<Complex64>,
    pub sample_period: f64,
    pub origin: f64,
}

impl SampleStream {
    pub fn time(&self, m: usize) -> f64 {
        self.origin + m as f64 * self.sample_period
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.samples.len().saturating_sub(1))
    }

    /// Write as little-endian interleaved `f64` I/Q pairs.
    pub fn write_iq<W: Write>(&self, mut w: W) -> Result<()> {
        write_iq(&self.samples, &mut w)
    }
}

pub fn write_iq<W: Write>(samples: &[Complex64], w: &mut W) -> Result<()> {
    for s in samples {
        w.write_all(&s.re.to_le_bytes())?;
        w.write_all(&s.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_iq<R: Read>(mut r: R) -> Result<Vec<Complex64>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() % 16 != 0 {
        return Err(Error::Io(format!(
            "{} bytes is not a whole number of I/Q pairs",
            buf.len()
        )));
    }
    Ok(buf
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect())
}

/// Pulse-shaped burst: one pulse copy every `Q` samples, symbol 0 centred at
/// `t = 0`, with half a pulse of transient on either side.
pub fn synthesize_burst(symbols: &SymbolSequence, pulse: &PulseShape) -> SampleStream {
    let q = pulse.oversampling;
    let taps = &pulse.taps;
    let n = symbols.count();
    let len = if n == 0 { 0 } else { (n - 1) * q + taps.len() };
    let mut samples = vec![Complex64::new(0.0, 0.0); len];
    for (k, &a) in symbols.symbols.iter().enumerate() {
        let out = &mut samples[k * q..k * q + taps.len()];
        for (o, &h) in out.iter_mut().zip(taps) {
            *o += a * h;
        }
    }
    SampleStream {
        samples,
        sample_period: pulse.sample_period(),
        origin: -pulse.center() * pulse.sample_period(),
    }
}

/// Channel parameters. `ebn0_db = +inf` disables noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub ebn0_db: f64,
    /// Carrier frequency offset, cycles per second.
    pub carrier_offset: f64,
    /// Carrier phase, radians.
    pub phase: f64,
    /// Timing delay, seconds. Applied at the resampling stage.
    pub delay: f64,
    /// Normalized symbol-rate offset of the receiver.
    pub rate_offset: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            ebn0_db: f64::INFINITY,
            carrier_offset: 0.0,
            phase: 0.0,
            delay: 0.0,
            rate_offset: 0.0,
        }
    }
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_offset > -0.5 && self.rate_offset < 0.5) {
            return Err(Error::invalid(
                "rate_offset",
                format!("{} not in (-0.5, 0.5)", self.rate_offset),
            ));
        }
        if self.ebn0_db.is_nan() {
            return Err(Error::invalid("ebn0_db", "NaN"));
        }
        if !self.carrier_offset.is_finite() || !self.phase.is_finite() || !self.delay.is_finite() {
            return Err(Error::invalid("channel", "non-finite offset"));
        }
        Ok(())
    }

    /// Soft checks that do not stop a run.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.carrier_offset.abs() > 0.01 {
            w.push(format!(
                "carrier offset {} x T is not << 1; timing detector output will degrade",
                self.carrier_offset
            ));
        }
        w
    }

    /// Receiver symbol period `T' = T / (1 + eps)`.
    pub fn receiver_symbol_period(&self) -> f64 {
        1.0 / (1.0 + self.rate_offset)
    }

    /// Complex noise variance per oversampled sample for the given
    /// modulation, with unit symbol energy and unit-energy taps.
    pub fn noise_variance(&self, modulation: Modulation) -> f64 {
        if self.ebn0_db == f64::INFINITY {
            return 0.0;
        }
        let ebn0 = 10f64.powf(self.ebn0_db / 10.0);
        1.0 / (modulation.bits_per_symbol() as f64 * ebn0)
    }
}

/// Carrier rotation and complex AWGN. Noise has `N0/2` per real dimension
/// after the unit-energy matched filter.
pub fn apply_impairments(
    stream: &SampleStream,
    channel: &ChannelSpec,
    modulation: Modulation,
    seed: u64,
) -> SampleStream {
    let sigma = (channel.noise_variance(modulation) / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotate = channel.carrier_offset != 0.0 || channel.phase != 0.0;
    let samples = stream
        .samples
        .iter()
        .enumerate()
        .map(|(m, &s)| {
            let mut v = if rotate {
                let arg = 2.0 * PI * channel.carrier_offset * stream.time(m) + channel.phase;
                s * Complex64::from_polar(1.0, arg)
            } else {
                s
            };
            if sigma > 0.0 {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                v += Complex64::new(re, im) * sigma;
            }
            v
        })
        .collect();
    SampleStream {
        samples,
        sample_period: stream.sample_period,
        origin: stream.origin,
    }
}

/// Full linear convolution with the pulse; the origin moves back by the
/// pulse's centre so a symbol at `t` still peaks at `t`.
pub fn matched_filter(stream: &SampleStream, pulse: &PulseShape) -> Result<SampleStream> {
    let dt = pulse.sample_period();
    if (stream.sample_period - dt).abs() > 1e-12 * dt {
        return Err(Error::invalid(
            "sample_period",
            format!("stream has {}, pulse expects {dt}", stream.sample_period),
        ));
    }
    let taps = &pulse.taps;
    let n = stream.samples.len();
    if n == 0 {
        return Ok(stream.clone());
    }
    let mut out = vec![Complex64::new(0.0, 0.0); n + taps.len() - 1];
    // Taps are even, so correlation and convolution coincide.
    for (i, &x) in stream.samples.iter().enumerate() {
        if x.re == 0.0 && x.im == 0.0 {
            continue;
        }
        for (o, &h) in out[i..i + taps.len()].iter_mut().zip(taps) {
            *o += x * h;
        }
    }
    Ok(SampleStream {
        samples: out,
        sample_period: dt,
        origin: stream.origin - pulse.center() * dt,
    })
}

/// Exactly two samples per nominal receiver symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverSamples {
    pub samples: Vec<Complex64>,
    pub assumed_symbol_period: f64,
    pub count_symbols: usize,
}

impl ReceiverSamples {
    pub fn sample_period(&self) -> f64 {
        self.assumed_symbol_period / 2.0
    }

    /// Rotate every sample by `phase` radians.
    pub fn rotated(&self, phase: f64) -> Self {
        let r = Complex64::from_polar(1.0, phase);
        Self {
            samples: self.samples.iter().map(|s| s * r).collect(),
            ..self.clone()
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            ..self.clone()
        }
    }
}

/// Receiver sampling instants `k * T'/2 + tau`, `k = 0 .. 2 * count`.
pub fn sample_instants(assumed_symbol_period: f64, tau: f64, count_symbols: usize) -> Vec<f64> {
    (0..2 * count_symbols)
        .map(|k| k as f64 * assumed_symbol_period / 2.0 + tau)
        .collect()
}

/// Sample the oversampled stream at the receiver's clock by cubic Farrow
/// interpolation. Realizes both the clock error (`T' != T`) and the delay.
pub fn resample_two_sps(
    stream: &SampleStream,
    assumed_symbol_period: f64,
    tau: f64,
    count_symbols: usize,
) -> Result<ReceiverSamples> {
    if !(assumed_symbol_period > 0.0) {
        return Err(Error::invalid(
            "assumed_symbol_period",
            format!("{assumed_symbol_period} is not positive"),
        ));
    }
    let dt = stream.sample_period;
    // The window reaches two samples back and one forward of floor(pos).
    let lo = 2.0;
    let hi = stream.samples.len() as f64 - 2.0;
    let start = stream.origin + lo * dt;
    let end = stream.origin + hi * dt;
    let samples = sample_instants(assumed_symbol_period, tau, count_symbols)
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            let pos = (t - stream.origin) / dt;
            if !(pos >= lo && pos <= hi) {
                return Err(Error::OutOfSupport {
                    index: k,
                    time: t,
                    start,
                    end,
                });
            }
            Ok(farrow::interpolate_at(&stream.samples, pos).0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReceiverSamples {
        samples,
        assumed_symbol_period,
        count_symbols,
    })
}

/// Synthesize, impair and matched-filter a burst, appending `tail_symbols`
/// zero symbols so a slow receiver clock still finds signal-plus-noise to
/// sample.
pub fn receive_burst(
    symbols: &SymbolSequence,
    pulse: &PulseShape,
    channel: &ChannelSpec,
    tail_symbols: usize,
    noise_seed: u64,
) -> Result<SampleStream> {
    let mut padded = symbols.clone();
    padded
        .symbols
        .extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), tail_symbols));
    let tx = synthesize_burst(&padded, pulse);
    let rx = apply_impairments(&tx, channel, symbols.modulation, noise_seed);
    matched_filter(&rx, pulse)
}
