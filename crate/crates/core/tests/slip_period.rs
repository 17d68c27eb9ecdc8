use slipsync_core::waveform::{default_pulse, receive_burst, resample_two_sps};
use slipsync_core::{
    detect, gardner_errors, ChannelSpec, Complex64, Modulation, ReceivedBurst, SymbolSequence, TrialConfig,
};

fn alternating(n: usize) -> SymbolSequence {
    SymbolSequence {
        symbols: (0..n)
            .map(|k| Complex64::new(if k % 2 == 0 { 1.0 } else { -1.0 }, 0.0))
            .collect(),
        modulation: Modulation::Bpsk,
    }
}

#[test]
fn period_identity_on_alternating_bursts() {
    let n = 500;
    let l = 5000;
    let stream = receive_burst(&alternating(n), &default_pulse(), &ChannelSpec::default(), n / 2, 0).unwrap();
    for eps in [-0.3, -0.2, -0.1, -0.05, -0.02, 0.02, 0.05, 0.1, 0.2, 0.3] {
        let rx = resample_two_sps(&stream, 1.0 / (1.0 + eps), 0.1, n).unwrap();
        let r = detect(&gardner_errors(&rx).unwrap(), l, 0.5).unwrap();
        let k = ((1.0 + eps) / eps).abs();
        let q = r.q as f64;
        let bound = (l as f64 / (q * (q - 1.0))).max(1.0);
        assert!(r.is_slip, "eps {eps}");
        assert!((r.k_hat - k).abs() <= bound, "eps {eps}: K_hat {} vs {k}", r.k_hat);
    }
}

#[test]
fn constant_offset_is_not_a_slip() {
    let cfg = TrialConfig {
        burst_len: 500,
        ebn0_db: f64::INFINITY,
        eps: 0.0,
        seed: 0,
        ..Default::default()
    };
    let r = ReceivedBurst::new(&cfg, &default_pulse())
        .unwrap()
        .detect(&cfg.slip_config())
        .unwrap();
    assert!(!r.is_slip, "{r:?}");
    assert!(r.dominance < 0.5);
}

/// Self-noise occasionally pushes a lobe over the threshold without any
/// rate error; the correction must then leave the rate alone.
#[test]
fn correction_keeps_a_correct_rate() {
    for seed in 0..20 {
        let cfg = TrialConfig {
            burst_len: 500,
            ebn0_db: f64::INFINITY,
            eps: 0.0,
            seed,
            ..Default::default()
        };
        let c = ReceivedBurst::new(&cfg, &default_pulse())
            .unwrap()
            .resolve(&cfg.slip_config())
            .unwrap();
        assert!((c.rate - 1.0).abs() < 0.005, "seed {seed}: {c:?}");
    }
}

#[test]
fn correction_converges_across_rate_errors() {
    for eps in [-0.2, -0.1, -0.05, -0.02, 0.02, 0.05, 0.1, 0.2] {
        for seed in 0..5 {
            let cfg = TrialConfig {
                burst_len: 500,
                ebn0_db: f64::INFINITY,
                eps,
                seed,
                ..Default::default()
            };
            let c = ReceivedBurst::new(&cfg, &default_pulse())
                .unwrap()
                .resolve(&cfg.slip_config())
                .unwrap();
            assert!((c.rate - 1.0).abs() < 0.005, "eps {eps} seed {seed}: {}", c.rate);
            assert!(c.rounds <= 3);
        }
    }
}

#[test]
fn single_candidate_follows_detected_peak() {
    let cfg = TrialConfig {
        burst_len: 500,
        ebn0_db: f64::INFINITY,
        slip_candidates: 1,
        seed: 3,
        ..Default::default()
    };
    let burst = ReceivedBurst::new(&cfg, &default_pulse()).unwrap();
    let first = burst.detect(&cfg.slip_config()).unwrap();
    let c = burst.resolve(&cfg.slip_config()).unwrap();
    if let Some(round) = c.history.first() {
        assert_eq!(round.k_hat, first.k_hat);
    }
}
