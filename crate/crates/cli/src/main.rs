use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use slipsync_core::harness::{ber_sweep, format_sig, write_csv, SweepSpec};
use slipsync_core::ted::s_curve;
use slipsync_core::waveform::srrc_pulse;
use slipsync_core::{
    gardner_errors, spectrum, Modulation, Pipeline, ReceivedBurst, RecoveryConfig, TrialConfig, SCHEMA_VERSION,
};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Cycle-slip aware symbol synchronization experiments.
#[derive(Parser)]
#[command(name = "slipsync", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// BER versus Eb/N0 (and optionally burst length and rate offset), as CSV.
    Ber(BerArgs),
    /// Slip report for a single burst, as JSON.
    Detect(DetectArgs),
    /// Gardner S-curve, as CSV.
    Scurve(ScurveArgs),
}

#[derive(Args)]
struct BerArgs {
    #[arg(long = "mod", default_value = "bpsk")]
    modulation: Modulation,
    /// Single value or `start:step:stop`, dB.
    #[arg(long, default_value = "0:2:10")]
    snr_db: String,
    /// Normalized rate offset; comma-separated for a sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.1", allow_negative_numbers = true)]
    eps: Vec<f64>,
    /// Burst length in symbols; comma-separated for a sweep.
    #[arg(long, value_delimiter = ',', default_value = "300")]
    burst: Vec<usize>,
    /// Initial timing offset as a fraction of T.
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
    tau: f64,
    #[arg(long, default_value = "corrected")]
    pipeline: Pipeline,
    /// Segment length for burst-by-burst recovery.
    #[arg(long, default_value_t = 50)]
    segment: usize,
    #[arg(long, default_value_t = 5000)]
    dft_len: usize,
    /// Bursts per grid point.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 3 if any trial fails to converge.
    #[arg(long)]
    strict: bool,
    /// Timing-recovery iteration cap.
    #[arg(long, default_value_t = 20)]
    max_iters: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    phase: f64,
    /// Carrier offset, cycles per symbol.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    carrier_offset: f64,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long = "mod", default_value = "bpsk")]
    modulation: Modulation,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    eps: f64,
    #[arg(long, default_value_t = 500)]
    burst: usize,
    /// Eb/N0 in dB; `inf` for a noiseless burst.
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    snr_db: f64,
    /// Initial timing offset as a fraction of T.
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
    tau: f64,
    #[arg(long, default_value_t = 5000)]
    dft_len: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Spectral lobes tried per correction round.
    #[arg(long, default_value_t = slipsync_core::cycleslip::DEFAULT_CANDIDATES)]
    candidates: usize,
    /// Also run the rate correction and report every round.
    #[arg(long)]
    correct: bool,
    /// Write `t,u` of the detector output at the assumed rate.
    #[arg(long)]
    errors_out: Option<PathBuf>,
    /// Write `bin,magnitude` of the detector spectrum at the assumed rate.
    #[arg(long)]
    spectrum_out: Option<PathBuf>,
}

#[derive(Args)]
struct ScurveArgs {
    #[arg(long, default_value_t = 0.5)]
    rolloff: f64,
    /// Number of offsets, evenly spaced over [-0.45T, 0.45T].
    #[arg(long, default_value_t = 25)]
    points: usize,
    #[arg(long, default_value_t = 5000)]
    symbols: usize,
    #[arg(long = "mod", default_value = "bpsk")]
    modulation: Modulation,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Trials that did not converge, reported under `--strict`.
struct NonConverged(usize);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Ber(a) => ber(a),
        Command::Detect(a) => detect(a).map(|()| None),
        Command::Scurve(a) => scurve(a).map(|()| None),
    };
    match outcome {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(NonConverged(n))) => {
            eprintln!("error: {n} trial(s) did not converge");
            ExitCode::from(3)
        }
        // A reader that hangs up early (`| head`) is not our failure.
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<slipsync_core::Error>(),
            Some(slipsync_core::Error::InvalidParameter { .. })
        ) || c.downcast_ref::<ConfigError>().is_some()
    })
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| matches!(c.downcast_ref::<io::Error>(), Some(io) if io.kind() == io::ErrorKind::BrokenPipe))
}

#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// `x` or `start:step:stop`, inclusive of `stop` up to rounding.
fn parse_range(s: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| -> anyhow::Result<f64> {
        p.trim()
            .parse::<f64>()
            .map_err(|_| ConfigError(format!("bad number `{p}` in `{s}`")).into())
    };
    match parts.as_slice() {
        [x] => Ok(vec![num(x)?]),
        [a, b, c] => {
            let (start, step, stop) = (num(a)?, num(b)?, num(c)?);
            if step.is_nan() || step <= 0.0 || stop < start {
                return Err(ConfigError(format!("range `{s}` needs step > 0 and stop >= start")).into());
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(ConfigError(format!("expected `x` or `start:step:stop`, got `{s}`")).into()),
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn warn(cfg: &TrialConfig) {
    for w in cfg.channel().warnings() {
        eprintln!("warning: {w}");
    }
}

fn ber(a: BerArgs) -> anyhow::Result<Option<NonConverged>> {
    let template = TrialConfig {
        modulation: a.modulation,
        tau_over_t: a.tau,
        dft_len: a.dft_len,
        pipeline: a.pipeline,
        segment_len: a.segment,
        seed: a.seed,
        phase: a.phase,
        carrier_offset: a.carrier_offset,
        recovery: RecoveryConfig {
            max_iters: a.max_iters,
            ..RecoveryConfig::default()
        },
        ..TrialConfig::default()
    };
    let spec = SweepSpec {
        template,
        ebn0_db: parse_range(&a.snr_db)?,
        burst_lens: a.burst,
        eps: a.eps,
        trials: a.trials,
        base_seed: a.seed,
    };
    for (_, cfg) in spec.points() {
        cfg.validate()?;
        warn(&cfg);
    }
    let rows = ber_sweep(&spec)?;
    let mut out = output(a.out.as_deref())?;
    write_csv(&rows, &mut out)?;
    out.flush()?;
    let bad: usize = rows.iter().map(|r| r.nonconverged).sum();
    Ok((a.strict && bad > 0).then_some(NonConverged(bad)))
}

fn detect(a: DetectArgs) -> anyhow::Result<()> {
    let cfg = TrialConfig {
        modulation: a.modulation,
        burst_len: a.burst,
        ebn0_db: a.snr_db,
        eps: a.eps,
        tau_over_t: a.tau,
        dft_len: a.dft_len,
        seed: a.seed,
        slip_candidates: a.candidates,
        ..TrialConfig::default()
    };
    cfg.validate()?;
    warn(&cfg);
    let slip = cfg.slip_config();
    let burst = ReceivedBurst::new(&cfg, &cfg.pulse()?)?;
    let report = burst.detect(&slip)?;

    if a.errors_out.is_some() || a.spectrum_out.is_some() {
        let u = gardner_errors(&burst.sample(burst.assumed_rate)?)?;
        if let Some(p) = &a.errors_out {
            let mut w = output(Some(p))?;
            writeln!(w, "t,u")?;
            for (k, x) in u.u.iter().enumerate() {
                writeln!(
                    w,
                    "{},{}",
                    format_sig(k as f64 * u.symbol_period_assumed),
                    format_sig(*x)
                )?;
            }
            w.flush()?;
        }
        if let Some(p) = &a.spectrum_out {
            let mut w = output(Some(p))?;
            writeln!(w, "bin,magnitude")?;
            for (q, z) in spectrum(&u, cfg.dft_len)?.iter().enumerate() {
                writeln!(w, "{q},{}", format_sig(z.norm()))?;
            }
            w.flush()?;
        }
    }

    let mut doc = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "report": report,
    });
    if a.correct {
        let corrected = burst.resolve(&slip)?;
        doc["corrected"] = serde_json::to_value(&corrected)?;
        doc["rate_error"] = serde_json::json!(corrected.rate - 1.0);
    }
    let mut out = output(None)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
    out.flush()?;
    Ok(())
}

fn scurve(a: ScurveArgs) -> anyhow::Result<()> {
    if a.points < 2 {
        bail!(ConfigError(format!("points = {} must be >= 2", a.points)));
    }
    let pulse = srrc_pulse(
        a.rolloff,
        slipsync_core::waveform::DEFAULT_SPAN,
        slipsync_core::waveform::DEFAULT_OVERSAMPLING,
    )?;
    let step = 0.9 / (a.points - 1) as f64;
    let offsets: Vec<f64> = (0..a.points).map(|i| -0.45 + i as f64 * step).collect();
    let curve = s_curve(&pulse, a.modulation, &offsets, a.symbols, a.seed)?;
    let mut w = output(a.out.as_deref())?;
    writeln!(w, "offset,mean_u,std_err")?;
    for p in curve {
        writeln!(
            w,
            "{},{},{}",
            format_sig(p.offset),
            format_sig(p.mean_u),
            format_sig(p.std_err)
        )?;
    }
    w.flush()?;
    Ok(())
}
