//! Gardner timing-error detector and its gain calibration.

use crate::error::{Error, Result};
use crate::waveform::{
    generate_symbols, receive_burst, resample_two_sps, ChannelSpec, Modulation, PulseShape, ReceiverSamples,
    SampleStream,
};
use serde::{Deserialize, Serialize};

/// One detector output per symbol, `count_symbols - 2` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingErrorSequence {
    pub u: Vec<f64>,
    pub symbol_period_assumed: f64,
}

impl TimingErrorSequence {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.u.is_empty() {
            return None;
        }
        // Running mean; reproduces a constant sequence exactly.
        let mut m = 0.0;
        for (k, x) in self.u.iter().enumerate() {
            m += (x - m) / (k + 1) as f64;
        }
        Some(m)
    }
}

/// Slope of the S-curve at the origin, detector output per second of offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorGain {
    pub gain: f64,
    pub pulse_id: String,
}

/// `u[k] = Re{ conj(r(k + 1/2)) * (r(k + 1) - r(k)) }` on the 2-sps stream.
///
/// Positive when the receiver samples late.
pub fn gardner_errors(rx: &ReceiverSamples) -> Result<TimingErrorSequence> {
    let n = rx.samples.len() / 2;
    if n < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: n,
            unit: "symbols",
        });
    }
    let s = &rx.samples;
    let u = (0..n - 2)
        .map(|k| (s[2 * k + 1].conj() * (s[2 * k + 2] - s[2 * k])).re)
        .collect();
    Ok(TimingErrorSequence {
        u,
        symbol_period_assumed: rx.assumed_symbol_period,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SCurvePoint {
    pub offset: f64,
    pub mean_u: f64,
    /// Standard error of `mean_u`, treating detector outputs as independent.
    pub std_err: f64,
}

/// A matched-filtered random burst that can be sampled at any constant
/// timing offset with the correct symbol rate.
#[derive(Debug, Clone)]
pub struct ErrorProbe {
    stream: SampleStream,
    count: usize,
}

impl ErrorProbe {
    pub fn new(
        pulse: &PulseShape,
        modulation: Modulation,
        count: usize,
        seed: u64,
        channel: &ChannelSpec,
    ) -> Result<Self> {
        let symbols = generate_symbols(modulation, count, seed);
        let stream = receive_burst(&symbols, pulse, channel, 2, seed ^ 0x5eed)?;
        Ok(Self { stream, count })
    }

    /// Probe built from caller-supplied symbols, e.g. an alternating pattern.
    pub fn from_symbols(
        symbols: &crate::waveform::SymbolSequence,
        pulse: &PulseShape,
        channel: &ChannelSpec,
        seed: u64,
    ) -> Result<Self> {
        let stream = receive_burst(symbols, pulse, channel, 2, seed)?;
        Ok(Self {
            stream,
            count: symbols.count(),
        })
    }

    pub fn scaled(mut self, amplitude: f64) -> Self {
        self.stream.samples.iter_mut().for_each(|s| *s *= amplitude);
        self
    }

    pub fn samples_at(&self, offset: f64) -> Result<ReceiverSamples> {
        resample_two_sps(&self.stream, 1.0, offset, self.count)
    }

    pub fn measure(&self, offset: f64) -> Result<SCurvePoint> {
        let u = gardner_errors(&self.samples_at(offset)?)?.u;
        let n = u.len() as f64;
        let mean = u.iter().sum::<f64>() / n;
        let var = u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(SCurvePoint {
            offset,
            mean_u: mean,
            std_err: (var / n).sqrt(),
        })
    }
}

/// Mean detector output versus static timing offset.
///
/// All points are measured on the same noiseless burst, so symmetric
/// offsets see identical data.
pub fn s_curve(
    pulse: &PulseShape,
    modulation: Modulation,
    offsets: &[f64],
    symbols_per_point: usize,
    seed: u64,
) -> Result<Vec<SCurvePoint>> {
    if let Some(bad) = offsets.iter().find(|d| !(d.abs() < 0.5)) {
        return Err(Error::invalid("offsets", format!("{bad} outside (-T/2, T/2)")));
    }
    let probe = ErrorProbe::new(pulse, modulation, symbols_per_point, seed, &ChannelSpec::default())?;
    offsets.iter().map(|&d| probe.measure(d)).collect()
}

/// Knobs for [`calibrate_gain_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainCalibration {
    pub symbols: usize,
    /// Half-width of the central difference, seconds.
    pub step: f64,
    /// Signal amplitude; the detector is quadratic in it.
    pub amplitude: f64,
}

impl Default for GainCalibration {
    fn default() -> Self {
        Self {
            symbols: 20_000,
            step: 1.0 / 64.0,
            amplitude: 1.0,
        }
    }
}

/// Detector gain from a central difference of the S-curve at zero offset.
pub fn calibrate_gain(pulse: &PulseShape, modulation: Modulation, seed: u64) -> Result<DetectorGain> {
    calibrate_gain_with(pulse, modulation, &GainCalibration::default(), seed)
}

pub fn calibrate_gain_with(
    pulse: &PulseShape,
    modulation: Modulation,
    cal: &GainCalibration,
    seed: u64,
) -> Result<DetectorGain> {
    let probe = ErrorProbe::new(pulse, modulation, cal.symbols, seed, &ChannelSpec::default())?.scaled(cal.amplitude);
    let hi = probe.measure(cal.step)?.mean_u;
    let lo = probe.measure(-cal.step)?.mean_u;
    let slope = (hi - lo) / (2.0 * cal.step);
    if !(slope > 0.0) {
        return Err(Error::DegenerateGain { slope });
    }
    Ok(DetectorGain {
        gain: slope,
        pulse_id: format!("{}/{}", pulse.describe(), modulation),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{default_pulse, SymbolSequence};
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn pulse() -> PulseShape {
        default_pulse()
    }

    fn alternating(n: usize) -> SymbolSequence {
        SymbolSequence {
            symbols: (0..n)
                .map(|k| Complex64::new(if k % 2 == 0 { 1.0 } else { -1.0 }, 0.0))
                .collect(),
            modulation: Modulation::Bpsk,
        }
    }

    /// Raised cosine, the analytic composite pulse.
    fn raised_cosine(beta: f64, t: f64) -> f64 {
        if t.abs() < 1e-12 {
            return 1.0;
        }
        if (t.abs() - 1.0 / (2.0 * beta)).abs() < 1e-12 {
            return PI / 4.0 * (PI / (2.0 * beta)).sin() / (PI / (2.0 * beta));
        }
        let x = PI * t;
        (x.sin() / x) * (beta * x).cos() / (1.0 - (2.0 * beta * t).powi(2))
    }

    #[test]
    fn too_short_input_rejected() {
        let rx = ReceiverSamples {
            samples: vec![Complex64::new(1.0, 0.0); 4],
            assumed_symbol_period: 1.0,
            count_symbols: 2,
        };
        assert!(matches!(gardner_errors(&rx), Err(Error::TooShort { .. })));
    }

    #[test]
    fn matches_direct_complex_arithmetic() {
        let rx = ReceiverSamples {
            samples: vec![
                Complex64::new(0.3, -1.1),
                Complex64::new(-0.7, 0.2),
                Complex64::new(1.5, 0.4),
                Complex64::new(0.1, 0.9),
                Complex64::new(-0.4, -0.6),
                Complex64::new(2.0, 0.0),
            ],
            assumed_symbol_period: 1.0,
            count_symbols: 3,
        };
        let u = gardner_errors(&rx).unwrap();
        assert_eq!(u.len(), 1);
        let (a, m, b) = (rx.samples[0], rx.samples[1], rx.samples[2]);
        let expect = (m.re * (b.re - a.re)) + (m.im * (b.im - a.im));
        assert!((u.u[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn alternating_pattern_on_time_is_null() {
        let probe = ErrorProbe::from_symbols(&alternating(200), &pulse(), &ChannelSpec::default(), 0).unwrap();
        let u = gardner_errors(&probe.samples_at(0.0).unwrap()).unwrap();
        let edge = pulse().span;
        for k in edge..u.len() - edge {
            assert!(u.u[k].abs() < 1e-3, "k = {k}: {}", u.u[k]);
        }
    }

    #[test]
    fn constant_symbols_give_zero_error() {
        let ones = SymbolSequence {
            symbols: vec![Complex64::new(1.0, 0.0); 200],
            modulation: Modulation::Bpsk,
        };
        let probe = ErrorProbe::from_symbols(&ones, &pulse(), &ChannelSpec::default(), 0).unwrap();
        for tau in [-0.2, 0.05, 0.3] {
            let u = gardner_errors(&probe.samples_at(tau).unwrap()).unwrap();
            for k in 12..u.len() - 12 {
                assert!(u.u[k].abs() < 5e-3, "tau {tau} k {k}: {}", u.u[k]);
            }
        }
    }

    #[test]
    fn late_sampling_near_half_symbol_is_positive_and_matches_analytic_pulse() {
        let n = 200;
        let syms = alternating(n);
        let probe = ErrorProbe::from_symbols(&syms, &pulse(), &ChannelSpec::default(), 0).unwrap();
        let r = |t: f64| -> f64 {
            syms.symbols
                .iter()
                .enumerate()
                .map(|(j, a)| a.re * raised_cosine(0.5, t - j as f64))
                .sum()
        };
        for delta in [0.05, 0.1, 0.2] {
            let off = 0.5 - delta;
            let u = gardner_errors(&probe.samples_at(off).unwrap()).unwrap();
            for k in 20..n - 20 {
                let t = k as f64 + off;
                let direct = r(t + 0.5) * (r(t + 1.0) - r(t));
                assert!(u.u[k] > 0.0);
                assert!(
                    (u.u[k] - direct).abs() < 1e-2,
                    "delta {delta} k {k}: {} vs {direct}",
                    u.u[k]
                );
            }
        }
    }

    #[test]
    fn s_curve_null_and_odd() {
        let offs = [-0.3, -0.1, 0.0, 0.1, 0.3];
        let pts = s_curve(&pulse(), Modulation::Bpsk, &offs, 5000, 42).unwrap();
        assert!(pts[2].mean_u.abs() < 1e-3, "{}", pts[2].mean_u);
        for i in 0..2 {
            let (a, b) = (pts[i], pts[4 - i]);
            let se = (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
            assert!((a.mean_u + b.mean_u).abs() < 3.0 * se);
            assert!(b.mean_u > 0.0);
        }
        assert!(s_curve(&pulse(), Modulation::Bpsk, &[0.5], 100, 1).is_err());
    }

    #[test]
    fn gain_positive_and_stable_across_seeds() {
        let p = pulse();
        let a = calibrate_gain(&p, Modulation::Bpsk, 1).unwrap();
        let b = calibrate_gain(&p, Modulation::Bpsk, 2).unwrap();
        assert!(a.gain > 0.0);
        assert!((a.gain - b.gain).abs() / a.gain < 0.05, "{} vs {}", a.gain, b.gain);
        let q = calibrate_gain(&p, Modulation::Qpsk, 1).unwrap();
        assert!(q.gain > 0.0);
        assert!(a.pulse_id.contains("bpsk") && q.pulse_id.contains("qpsk"));
    }

    #[test]
    fn gain_scales_with_amplitude_squared() {
        let p = pulse();
        let cal = GainCalibration {
            symbols: 4000,
            ..Default::default()
        };
        let g1 = calibrate_gain_with(&p, Modulation::Bpsk, &cal, 9).unwrap().gain;
        let g3 = calibrate_gain_with(&p, Modulation::Bpsk, &GainCalibration { amplitude: 3.0, ..cal }, 9)
            .unwrap()
            .gain;
        assert!((g3 / g1 - 9.0).abs() < 1e-9);
    }

    #[test]
    fn response_is_periodic_in_offset() {
        let probe = ErrorProbe::new(&pulse(), Modulation::Bpsk, 6000, 5, &ChannelSpec::default()).unwrap();
        for d in [0.55, 0.7] {
            let a = probe.measure(d).unwrap();
            let b = probe.measure(d - 1.0).unwrap();
            let se = (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
            assert!(
                (a.mean_u - b.mean_u).abs() < 3.0 * se,
                "d = {d}: {} vs {}",
                a.mean_u,
                b.mean_u
            );
        }
    }
}
