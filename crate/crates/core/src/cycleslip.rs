//! Cycle-slip detection from the spectrum of the detector output, and
//! symbol-rate correction.
//!
//! A rate error `eps` makes the timing offset drift by `eps / (1 + eps)`
//! symbols per symbol, so the detector wraps every `K = (1 + eps) / |eps|`
//! symbols and its output picks up a tone at `1 / K`. A constant offset
//! only produces DC. The zero-padded DFT tells the two apart and the peak
//! bin `q` gives `K ~ L / q`.

use crate::error::{Error, Result};
use crate::ted::TimingErrorSequence;
use crate::waveform::ReceiverSamples;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_ROUNDS: usize = 5;
pub const DEFAULT_CANDIDATES: usize = 16;

/// Highest bin searched, as a fraction of `L`.
const SEARCH_LIMIT: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipReport {
    /// Non-DC peak bin when a slip is declared, else 0.
    pub q: usize,
    /// Slip period `L / q` in symbols; infinite (JSON `null`) without a slip.
    #[serde(rename = "K_hat")]
    pub k_hat: f64,
    pub is_slip: bool,
    /// `|U(peak)| / |U(0)|` for the strongest non-DC bin.
    pub dominance: f64,
    #[serde(rename = "L")]
    pub l: usize,
}

/// `U(l) = sum_k u(k) exp(+j 2 pi k l / L)` with zero padding to `L`.
pub fn spectrum(u: &TimingErrorSequence, dft_len: usize) -> Result<Vec<Complex64>> {
    if dft_len < u.len() {
        return Err(Error::DftTooShort { dft_len, len: u.len() });
    }
    let mut buf: Vec<Complex64> = u.u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    buf.resize(dft_len, Complex64::new(0.0, 0.0));
    if dft_len > 0 {
        // The unnormalized inverse transform carries the positive exponent.
        let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(dft_len));
        fft.process(&mut buf);
    }
    Ok(buf)
}

thread_local! {
    // The planner caches plans by length.
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// First bin of the non-DC search: above the DC main lobe, `ceil(2L/N)`.
pub fn dc_guard(dft_len: usize, len: usize) -> usize {
    (2 * dft_len).div_ceil(len.max(1))
}

/// Look for a slip tone in `u`.
pub fn detect(u: &TimingErrorSequence, dft_len: usize, threshold: f64) -> Result<SlipReport> {
    if !(threshold > 0.0) {
        return Err(Error::invalid("threshold", format!("{threshold} must be > 0")));
    }
    let spec = spectrum(u, dft_len)?;
    let first = dc_guard(dft_len, u.len()) + 1;
    let last = (dft_len as f64 * SEARCH_LIMIT).floor() as usize;
    let dc = spec.first().map_or(0.0, |z| z.norm());
    let mut peak = (0usize, 0.0f64);
    for (l, z) in spec.iter().enumerate().take(last + 1).skip(first) {
        let m = z.norm();
        if m > peak.1 {
            peak = (l, m);
        }
    }
    let dominance = if peak.1 == 0.0 {
        0.0
    } else if dc == 0.0 {
        f64::INFINITY
    } else {
        peak.1 / dc
    };
    let is_slip = peak.0 != 0 && dominance > threshold;
    Ok(SlipReport {
        q: if is_slip { peak.0 } else { 0 },
        k_hat: if is_slip {
            dft_len as f64 / peak.0 as f64
        } else {
            f64::INFINITY
        },
        is_slip,
        dominance,
        l: dft_len,
    })
}

/// Half-width of the noise-floor window used by [`peak_bins`], in lobes.
const FLOOR_LOBES: usize = 10;

/// Bins of the `count` most prominent spectral lobes in the slip search
/// band, most prominent first.
///
/// Prominence is the lobe height over the median magnitude within
/// `FLOOR_LOBES` lobe widths on either side. Detector self-noise rises
/// towards high frequencies, so raw height alone favours noise lobes
/// there. Lobes closer than `L / N` bins to a more prominent one are
/// treated as part of it.
pub fn peak_bins(u: &TimingErrorSequence, dft_len: usize, count: usize) -> Result<Vec<usize>> {
    let spec = spectrum(u, dft_len)?;
    let first = (dc_guard(dft_len, u.len()) + 1).max(1);
    let last = ((dft_len as f64 * SEARCH_LIMIT).floor() as usize).min(dft_len.saturating_sub(2));
    if first > last {
        return Ok(Vec::new());
    }
    let mag: Vec<f64> = spec.iter().map(|z| z.norm()).collect();
    let width = dft_len.div_ceil(u.len().max(1));
    let reach = FLOOR_LOBES * width;
    let mut window = Vec::with_capacity(2 * reach + 1);
    let mut maxima: Vec<(usize, f64)> = Vec::new();
    for l in first..=last {
        if !(mag[l] > 0.0 && mag[l] >= mag[l - 1] && mag[l] >= mag[l + 1]) {
            continue;
        }
        window.clear();
        window.extend_from_slice(&mag[l.saturating_sub(reach).max(first)..=(l + reach).min(last)]);
        let mid = window.len() / 2;
        let floor = *window.select_nth_unstable_by(mid, f64::total_cmp).1;
        maxima.push((l, if floor > 0.0 { mag[l] / floor } else { f64::INFINITY }));
    }
    maxima.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<usize> = Vec::with_capacity(count);
    for (l, _) in maxima {
        if out.len() == count {
            break;
        }
        if out.iter().all(|&p| p.abs_diff(l) >= width) {
            out.push(l);
        }
    }
    Ok(out)
}

/// Candidate true rates `(1 - 1/K) R` and `(1 + 1/K) R`; the spectrum
/// magnitude cannot tell the sign of the rate error.
pub fn rate_hypotheses(rate_assumed: f64, k_hat: f64) -> Result<(f64, f64)> {
    if !(k_hat > 1.0) {
        return Err(Error::invalid("K_hat", format!("{k_hat} must exceed 1")));
    }
    let step = rate_assumed / k_hat;
    Ok((rate_assumed - step, rate_assumed + step))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateSign {
    Minus,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRound {
    #[serde(rename = "K_hat")]
    pub k_hat: f64,
    pub chosen_sign: RateSign,
    pub rate: f64,
    pub dominance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedRate {
    pub rate: f64,
    pub rounds: usize,
    pub history: Vec<CorrectionRound>,
    /// The final spectrum is DC-dominant.
    pub converged: bool,
    /// Report on the samples at the final rate.
    pub final_report: SlipReport,
}

/// Slip-correction loop settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipConfig {
    pub dft_len: usize,
    pub threshold: f64,
    pub max_rounds: usize,
    /// Spectral lobes tried per round; 1 uses the detected peak only.
    pub candidates: usize,
}

impl Default for SlipConfig {
    fn default() -> Self {
        Self {
            dft_len: 5000,
            threshold: DEFAULT_THRESHOLD,
            max_rounds: DEFAULT_MAX_ROUNDS,
            candidates: DEFAULT_CANDIDATES,
        }
    }
}

/// Correct the receiver symbol rate until no slip tone remains.
///
/// Each round takes the detected peak and the most prominent lobes of the
/// spectrum (see [`peak_bins`]), `cfg.candidates` in all, forms both rate
/// hypotheses for each, and
/// regenerates the samples with `resample` and the detector output with
/// `errors` for every candidate. The one with the weakest slip tone is
/// kept. Self-noise of the detector can outgrow the slip tone in a short
/// burst, so the strongest lobe is not always the slip. A candidate that
/// cannot be sampled (e.g. its instants run past the capture) is skipped.
/// The loop stops without converging if no candidate lowers the dominance
/// or after `max_rounds` corrections.
pub fn resolve_rate<R, U>(mut resample: R, mut errors: U, rate_initial: f64, cfg: &SlipConfig) -> Result<CorrectedRate>
where
    R: FnMut(f64) -> Result<ReceiverSamples>,
    U: FnMut(&ReceiverSamples) -> Result<TimingErrorSequence>,
{
    if cfg.max_rounds == 0 {
        return Err(Error::invalid("max_rounds", "must be at least 1"));
    }
    if cfg.candidates == 0 {
        return Err(Error::invalid("candidates", "must be at least 1"));
    }
    if !(rate_initial > 0.0) {
        return Err(Error::invalid("rate", format!("{rate_initial} must be positive")));
    }
    let mut probe = |rate: f64| -> Result<(SlipReport, TimingErrorSequence)> {
        let u = errors(&resample(rate)?)?;
        Ok((detect(&u, cfg.dft_len, cfg.threshold)?, u))
    };

    let mut rate = rate_initial;
    let (mut report, mut u) = probe(rate)?;
    let mut history = Vec::new();
    while report.is_slip && history.len() < cfg.max_rounds {
        let mut bins = vec![report.q];
        if cfg.candidates > 1 {
            let extra = peak_bins(&u, cfg.dft_len, cfg.candidates)?;
            bins.extend(extra.into_iter().filter(|&q| q != report.q).take(cfg.candidates - 1));
        }
        let mut best: Option<(CorrectionRound, SlipReport, TimingErrorSequence)> = None;
        for q in bins {
            let k_hat = cfg.dft_len as f64 / q as f64;
            let (minus, plus) = rate_hypotheses(rate, k_hat)?;
            for (sign, cand) in [(RateSign::Minus, minus), (RateSign::Plus, plus)] {
                let Ok((r, cu)) = probe(cand) else { continue };
                if best.as_ref().is_none_or(|b| r.dominance < b.1.dominance) {
                    let round = CorrectionRound {
                        k_hat,
                        chosen_sign: sign,
                        rate: cand,
                        dominance: r.dominance,
                    };
                    best = Some((round, r, cu));
                }
            }
        }
        match best {
            Some((round, r, cu)) if r.dominance < report.dominance => {
                rate = round.rate;
                history.push(round);
                report = r;
                u = cu;
            }
            _ => break,
        }
    }
    Ok(CorrectedRate {
        rate,
        rounds: history.len(),
        history,
        converged: !report.is_slip,
        final_report: report,
    })
}
