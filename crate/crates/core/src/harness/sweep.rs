use super::{cached_gain, derive_seed, format_sig, run_trial_with, BerRecord, Pipeline, TrialConfig};
use crate::error::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const CSV_HEADER: &str = "ebn0_db,eps,burst_len,pipeline,trials,bits,errors,ber,slip_rate,k_hat_mean,iter_mean";

/// Grid of Eb/N0, burst length and rate offset. Every other field comes
/// from `template`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub template: TrialConfig,
    pub ebn0_db: Vec<f64>,
    pub burst_lens: Vec<usize>,
    pub eps: Vec<f64>,
    pub trials: usize,
    pub base_seed: u64,
}

impl SweepSpec {
    /// Grid points in output order: Eb/N0 outermost, then burst length,
    /// then rate offset.
    pub fn points(&self) -> Vec<([u64; 3], TrialConfig)> {
        let mut out = Vec::new();
        for (i, &ebn0) in self.ebn0_db.iter().enumerate() {
            for (j, &n) in self.burst_lens.iter().enumerate() {
                for (k, &eps) in self.eps.iter().enumerate() {
                    let cfg = TrialConfig {
                        ebn0_db: ebn0,
                        burst_len: n,
                        eps,
                        ..self.template.clone()
                    };
                    out.push(([i as u64, j as u64, k as u64], cfg));
                }
            }
        }
        out
    }

    /// Seed of trial `t` at grid coordinates `coords`.
    pub fn trial_seed(&self, coords: [u64; 3], t: usize) -> u64 {
        derive_seed(self.base_seed, &[coords[0], coords[1], coords[2], t as u64])
    }
}

/// Aggregated result at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ebn0_db: f64,
    pub eps: f64,
    pub burst_len: usize,
    pub pipeline: Pipeline,
    pub trials: usize,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    /// Fraction of trials with a slip tone at the initial rate.
    pub slip_rate: f64,
    /// Mean slip period over trials that detected one; NaN if none did.
    pub k_hat_mean: f64,
    pub iter_mean: f64,
    pub nonconverged: usize,
}

impl SweepRow {
    fn aggregate(cfg: &TrialConfig, records: &[BerRecord]) -> Self {
        let bits: u64 = records.iter().map(|r| r.bits_total).sum();
        let errors: u64 = records.iter().map(|r| r.bit_errors).sum();
        let slips: Vec<f64> = records.iter().filter(|r| r.slip_detected).map(|r| r.k_hat).collect();
        let n = records.len().max(1) as f64;
        Self {
            ebn0_db: cfg.ebn0_db,
            eps: cfg.eps,
            burst_len: cfg.burst_len,
            pipeline: cfg.pipeline,
            trials: records.len(),
            bits,
            errors,
            ber: if bits == 0 { 0.0 } else { errors as f64 / bits as f64 },
            slip_rate: slips.len() as f64 / n,
            k_hat_mean: if slips.is_empty() {
                f64::NAN
            } else {
                slips.iter().sum::<f64>() / slips.len() as f64
            },
            iter_mean: records.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
            nonconverged: records.iter().filter(|r| !r.converged).count(),
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            format_sig(self.ebn0_db),
            format_sig(self.eps),
            self.burst_len,
            self.pipeline,
            self.trials,
            self.bits,
            self.errors,
            format_sig(self.ber),
            format_sig(self.slip_rate),
            format_sig(self.k_hat_mean),
            format_sig(self.iter_mean),
        )
    }
}

/// Run every grid point and aggregate per point. Trials may execute in
/// any order; rows always come back in grid order.
pub fn ber_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    let points = spec.points();
    for (_, cfg) in &points {
        cfg.validate()?;
    }
    let pulse = spec.template.pulse()?;
    let gain = cached_gain(&pulse, spec.template.modulation)?;
    let jobs: Vec<TrialConfig> = points
        .iter()
        .flat_map(|(coords, cfg)| {
            (0..spec.trials).map(move |t| TrialConfig {
                seed: spec.trial_seed(*coords, t),
                ..cfg.clone()
            })
        })
        .collect();
    let records = jobs
        .par_iter()
        .map(|cfg| run_trial_with(cfg, &pulse, &gain))
        .collect::<Result<Vec<_>>>()?;
    Ok(points
        .iter()
        .zip(records.chunks(spec.trials))
        .map(|((_, cfg), recs)| SweepRow::aggregate(cfg, recs))
        .collect())
}

pub fn write_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}
