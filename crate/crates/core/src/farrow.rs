//! Cubic Lagrange interpolation in Farrow form.
//!
//! The four samples `r[-1], r[0], r[1], r[2]` sit at abscissae -1, 0, 1, 2
//! and the interpolant is evaluated at `1 + mu`, between `r[1]` and `r[2]`.
//! Expanding the Lagrange basis at `x = 1 + mu` gives
//!
//! ```text
//! c3 = -r[-1]/6 + r[0]/2 - r[1]/2 + r[2]/6
//! c2 =            r[0]/2 - r[1]   + r[2]/2
//! c1 =  r[-1]/6 - r[0]   + r[1]/2 + r[2]/3
//! c0 =                     r[1]
//! x(mu) = ((c3 mu + c2) mu + c1) mu + c0
//! ```
//!
//! The coefficient combinations are fixed; `mu` only enters through the
//! Horner recursion, which is what makes it a Farrow structure. The
//! combinations are computed from differences against `r[1]` so constants
//! are reproduced exactly.

use crate::error::{Error, Result};
use crate::waveform::ReceiverSamples;
use num_complex::Complex64;

/// Four consecutive samples and the fractional position inside them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpWindow {
    pub r: [Complex64; 4],
    pub mu: f64,
}

impl InterpWindow {
    pub fn new(r: [Complex64; 4], mu: f64) -> Result<Self> {
        check_mu(mu)?;
        Ok(Self { r, mu })
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if (0.0..1.0).contains(&mu) {
        Ok(())
    } else {
        Err(Error::invalid("mu", format!("{mu} not in [0, 1)")))
    }
}

/// Farrow coefficient rows `[c0, c1, c2, c3]` for a window.
#[inline]
pub fn coefficients(r: &[Complex64; 4]) -> [Complex64; 4] {
    let d_m1 = r[0] - r[2];
    let d_0 = r[1] - r[2];
    let d_2 = r[3] - r[2];
    let c3 = (d_2 - d_m1) / 6.0 + d_0 * 0.5;
    let c2 = (d_0 + d_2) * 0.5;
    let c1 = d_m1 / 6.0 - d_0 + d_2 / 3.0;
    [r[2], c1, c2, c3]
}

#[inline]
fn eval(r: &[Complex64; 4], mu: f64) -> Complex64 {
    let [c0, c1, c2, c3] = coefficients(r);
    ((c3 * mu + c2) * mu + c1) * mu + c0
}

/// Value of the cubic through the window, evaluated at abscissa `1 + mu`.
pub fn interpolate(window: &InterpWindow) -> Result<Complex64> {
    check_mu(window.mu)?;
    Ok(eval(&window.r, window.mu))
}

/// Interpolate `samples` at fractional index `pos` (in samples).
///
/// The window is `samples[i-2 ..= i+1]` with `i = floor(pos)`, indices
/// clamped to the valid range. Returns the value and whether clamping was
/// needed.
#[inline]
pub(crate) fn interpolate_at(samples: &[Complex64], pos: f64) -> (Complex64, bool) {
    let (i, mu) = split_position(pos);
    let last = samples.len() as i64 - 1;
    if mu == 0.0 {
        let c = i.clamp(0, last);
        return (samples[c as usize], c != i);
    }
    let mut clamped = false;
    let mut r = [Complex64::new(0.0, 0.0); 4];
    for (j, slot) in r.iter_mut().enumerate() {
        let idx = i - 2 + j as i64;
        let c = idx.clamp(0, last);
        clamped |= c != idx;
        *slot = samples[c as usize];
    }
    (eval(&r, mu), clamped)
}

/// Split a fractional index into integer base and `mu` in [0, 1). Positions
/// within 1e-9 of an integer snap to it so that on-grid requests return
/// the stored sample exactly.
#[inline]
pub(crate) fn split_position(pos: f64) -> (i64, f64) {
    let nearest = pos.round();
    if (pos - nearest).abs() < 1e-9 {
        return (nearest as i64, 0.0);
    }
    let base = pos.floor();
    let mu = pos - base;
    if mu >= 1.0 {
        (base as i64 + 1, 0.0)
    } else {
        (base as i64, mu)
    }
}

/// Result of [`fractional_delay`].
#[derive(Debug, Clone, PartialEq)]
pub struct Shifted {
    pub rx: ReceiverSamples,
    /// Output indices whose window ran past either end of the input and was
    /// clamped.
    pub clamped: Vec<usize>,
}

/// Resample a 2-sample-per-symbol stream at `t_n + shift_seconds`.
///
/// A positive shift advances the stream: a shift of one sample period
/// yields `out[n] = in[n + 1]`. Shifts larger than a sample are handled as
/// an integer move plus a fractional residue. Length is preserved; outputs
/// near the edges use a clamped window and are listed in
/// [`Shifted::clamped`].
pub fn fractional_delay(rx: &ReceiverSamples, shift_seconds: f64) -> Shifted {
    let ts = rx.sample_period();
    let offset = shift_seconds / ts;
    let mut clamped = Vec::new();
    let samples = (0..rx.samples.len())
        .map(|n| {
            let (v, c) = interpolate_at(&rx.samples, n as f64 + offset);
            if c {
                clamped.push(n);
            }
            v
        })
        .collect();
    Shifted {
        rx: ReceiverSamples {
            samples,
            assumed_symbol_period: rx.assumed_symbol_period,
            count_symbols: rx.count_symbols,
        },
        clamped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    /// Lagrange polynomial through (-1, 0, 1, 2) evaluated at `x`, written
    /// out directly in product form.
    fn lagrange(r: &[Complex64; 4], x: f64) -> Complex64 {
        let nodes = [-1.0, 0.0, 1.0, 2.0];
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &xi) in nodes.iter().enumerate() {
            let mut basis = 1.0;
            for (j, &xj) in nodes.iter().enumerate() {
                if i != j {
                    basis *= (x - xj) / (xi - xj);
                }
            }
            acc += r[i] * basis;
        }
        acc
    }

    fn win(v: [f64; 4], mu: f64) -> InterpWindow {
        InterpWindow::new([c(v[0]), c(v[1]), c(v[2]), c(v[3])], mu).unwrap()
    }

    #[test]
    fn constant_reproduced_exactly() {
        for &mu in &[0.0, 0.1, 0.37, 0.5, 0.999] {
            for &k in &[1.0, -3.25, 1e-7, 12345.678] {
                let y = interpolate(&win([k; 4], mu)).unwrap();
                assert_eq!(y, c(k));
            }
        }
    }

    #[test]
    fn ramp_window() {
        let y = interpolate(&win([-1.0, 0.0, 1.0, 2.0], 0.25)).unwrap();
        assert!((y.re - 1.25).abs() < 1e-15 && y.im == 0.0);
    }

    #[test]
    fn cubic_window() {
        let y = interpolate(&win([-1.0, 0.0, 1.0, 8.0], 0.5)).unwrap();
        assert!((y.re - 3.375).abs() < 1e-14, "{y}");
    }

    #[test]
    fn mu_out_of_range() {
        assert!(InterpWindow::new([c(0.0); 4], 1.0).is_err());
        assert!(InterpWindow::new([c(0.0); 4], -0.01).is_err());
        let bad = InterpWindow {
            r: [c(0.0); 4],
            mu: f64::NAN,
        };
        assert!(interpolate(&bad).is_err());
    }

    #[test]
    fn horner_form_expands_to_lagrange_basis() {
        // Feeding unit vectors through the coefficient rows gives the
        // monomial coefficients of each basis polynomial at 1 + mu.
        let expected = [
            [0.0, 1.0 / 6.0, 0.0, -1.0 / 6.0],
            [0.0, -1.0, 0.5, 0.5],
            [1.0, 0.5, -1.0, -0.5],
            [0.0, 1.0 / 3.0, 0.5, 1.0 / 6.0],
        ];
        for (i, row) in expected.iter().enumerate() {
            let mut r = [c(0.0); 4];
            r[i] = c(1.0);
            let got = coefficients(&r);
            for p in 0..4 {
                assert!((got[p].re - row[p]).abs() < 1e-15, "basis {i} power {p}");
            }
            for mu in [0.0, 0.3, 0.77] {
                let horner = eval(&r, mu).re;
                assert!((horner - lagrange(&r, 1.0 + mu).re).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_shift_is_identity() {
        let rx = ReceiverSamples {
            samples: (0..40)
                .map(|n| Complex64::new((n as f64 * 0.7).sin(), n as f64))
                .collect(),
            assumed_symbol_period: 1.0,
            count_symbols: 20,
        };
        let out = fractional_delay(&rx, 0.0);
        assert_eq!(out.rx, rx);
    }

    #[test]
    fn one_sample_shift_advances_by_one_index() {
        let rx = ReceiverSamples {
            samples: (0..40)
                .map(|n| Complex64::new((n as f64 * 0.9).cos(), -(n as f64)))
                .collect(),
            assumed_symbol_period: 1.0 / 1.1,
            count_symbols: 20,
        };
        let out = fractional_delay(&rx, rx.sample_period());
        for n in 0..39 {
            assert!((out.rx.samples[n] - rx.samples[n + 1]).norm() < 1e-12);
        }
        assert_eq!(out.clamped, vec![39]);
    }

    #[test]
    fn round_trip_on_slow_tone() {
        // Tone at 1/50 of the sample rate.
        let n = 400;
        let w = 2.0 * std::f64::consts::PI / 50.0;
        let rx = ReceiverSamples {
            samples: (0..n).map(|k| Complex64::from_polar(1.0, w * k as f64)).collect(),
            assumed_symbol_period: 1.0,
            count_symbols: n / 2,
        };
        for d in [0.1, 0.23, 0.5, 0.81] {
            let there = fractional_delay(&rx, d);
            let back = fractional_delay(&there.rx, -d);
            let interior = 4..n - 4;
            let mse: f64 = interior
                .clone()
                .map(|k| (back.rx.samples[k] - rx.samples[k]).norm_sqr())
                .sum::<f64>()
                / interior.len() as f64;
            assert!(mse.sqrt() < 1e-3, "d = {d}: rms {}", mse.sqrt());
        }
    }

    #[test]
    fn clamped_edges_are_flagged() {
        let rx = ReceiverSamples {
            samples: vec![c(1.0); 10],
            assumed_symbol_period: 1.0,
            count_symbols: 5,
        };
        let out = fractional_delay(&rx, 0.25);
        assert!(out.clamped.contains(&0));
        assert!(out.clamped.contains(&9));
        assert!(out.rx.samples.iter().all(|&s| s == c(1.0)));
        assert_eq!(out.rx.samples.len(), 10);
    }

    proptest! {
        #[test]
        fn exact_on_cubics(a in -5.0..5.0f64, b in -5.0..5.0f64, cc in -5.0..5.0f64,
                           d in -5.0..5.0f64, mu in 0.0..1.0f64) {
            let p = |x: f64| ((a * x + b) * x + cc) * x + d;
            let w = win([p(-1.0), p(0.0), p(1.0), p(2.0)], mu);
            let y = interpolate(&w).unwrap();
            prop_assert!((y.re - p(1.0 + mu)).abs() < 1e-11);
        }

        #[test]
        fn linear_and_complex_consistent(
            re in proptest::array::uniform4(-10.0..10.0f64),
            im in proptest::array::uniform4(-10.0..10.0f64),
            k in -3.0..3.0f64,
            mu in 0.0..1.0f64,
        ) {
            let z: [Complex64; 4] = std::array::from_fn(|i| Complex64::new(re[i], im[i]));
            let whole = interpolate(&InterpWindow::new(z, mu).unwrap()).unwrap();
            let real = interpolate(&win(re, mu)).unwrap().re;
            let imag = interpolate(&win(im, mu)).unwrap().re;
            prop_assert_eq!(whole.re, real);
            prop_assert_eq!(whole.im, imag);
            let scaled: [Complex64; 4] = std::array::from_fn(|i| z[i] * k);
            let ys = interpolate(&InterpWindow::new(scaled, mu).unwrap()).unwrap();
            prop_assert!((ys - whole * k).norm() < 1e-11);
        }
    }
}
