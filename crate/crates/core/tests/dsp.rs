use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use physfuse::dsp::{
    decimate, design_butterworth, normalize_per_subject, FilterKind, IirFilter, Modality, SignalRecord,
};
use physfuse::Error;

/// Magnitude of a bilinear-transformed Butterworth design from the prewarped
/// analog prototype, in closed form.
fn analytic_magnitude(kind: FilterKind, order: usize, fs: f64, f: f64) -> f64 {
    let warp = |hz: f64| (PI * hz / fs).tan();
    let w = warp(f);
    let ratio = match kind {
        FilterKind::Lowpass { cutoff_hz } => w / warp(cutoff_hz),
        FilterKind::Bandpass { low_hz, high_hz } => {
            let (wl, wh) = (warp(low_hz), warp(high_hz));
            (w * w - wl * wh) / (w * (wh - wl))
        }
    };
    1.0 / (1.0 + ratio.abs().powi(2 * order as i32)).sqrt()
}

fn ecg(samples: Vec<f64>, fs: f64) -> SignalRecord {
    SignalRecord::new(vec![samples], fs, "s01", "t01", Modality::Ecg).unwrap()
}

#[test]
fn lowpass_60_at_256_has_half_power_cutoff() {
    let f = design_butterworth(FilterKind::Lowpass { cutoff_hz: 60.0 }, 8, 256.0).unwrap();
    assert!((f.magnitude(60.0) - 1.0 / 2f64.sqrt()).abs() < 1e-6);
    assert_eq!(f.sections.len(), 4);
    assert!(f.max_pole_magnitude() < 1.0);
}

#[test]
fn bandpass_is_unity_at_geometric_centre() {
    let f = design_butterworth(FilterKind::Bandpass { low_hz: 0.8, high_hz: 50.0 }, 8, 128.0).unwrap();
    assert!((f.magnitude((0.8f64 * 50.0).sqrt()) - 1.0).abs() < 1e-3);
    assert_eq!(f.sections.len(), 8);
}

#[test]
fn designs_match_closed_form_response() {
    for (kind, order, fs) in [
        (FilterKind::Lowpass { cutoff_hz: 60.0 }, 8, 256.0),
        (FilterKind::Lowpass { cutoff_hz: 57.6 }, 8, 512.0),
        (FilterKind::Lowpass { cutoff_hz: 10.0 }, 2, 100.0),
        (FilterKind::Bandpass { low_hz: 0.8, high_hz: 50.0 }, 8, 256.0),
        (FilterKind::Bandpass { low_hz: 4.0, high_hz: 45.0 }, 8, 128.0),
        (FilterKind::Bandpass { low_hz: 10.0, high_hz: 20.0 }, 4, 200.0),
    ] {
        let f = design_butterworth(kind, order, fs).unwrap();
        for i in 1..200 {
            let hz = fs / 2.0 * i as f64 / 200.0;
            let (got, want) = (f.magnitude(hz), analytic_magnitude(kind, order, fs, hz));
            assert!((got - want).abs() < 1e-9, "{kind:?} @ {hz} Hz: {got} vs {want}");
        }
    }
}

/// Direct-form I difference equations, section by section.
fn difference_equations(f: &IirFilter, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for s in &f.sections {
        let input = y.clone();
        for n in 0..input.len() {
            let at = |v: &[f64], k: usize| if n >= k { v[n - k] } else { 0.0 };
            y[n] = s.b0 * input[n] + s.b1 * at(&input, 1) + s.b2 * at(&input, 2) - s.a1 * at(&y, 1) - s.a2 * at(&y, 2);
        }
    }
    y
}

#[test]
fn filtering_runs_the_section_cascade() {
    let f = design_butterworth(FilterKind::Bandpass { low_hz: 0.8, high_hz: 50.0 }, 8, 256.0).unwrap();
    let x: Vec<f64> = (0..2000).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
    let (got, want) = (f.filter_samples(&x), difference_equations(&f, &x));
    let diff = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-9, "{diff}");
}

#[test]
fn impulse_response_spectrum_matches_design() {
    let fs = 256.0;
    let f = design_butterworth(FilterKind::Lowpass { cutoff_hz: 60.0 }, 8, fs).unwrap();
    let n = 4096;
    let mut impulse = vec![0.0; n];
    impulse[0] = 1.0;
    let h = f.apply(&ecg(impulse, fs)).unwrap().channels.remove(0);
    let mut worst = 0.0f64;
    for bin in (0..n / 2).step_by(7) {
        let spectrum: Complex64 = h
            .iter()
            .enumerate()
            .map(|(k, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (bin * k) as f64 / n as f64))
            .sum();
        let hz = bin as f64 * fs / n as f64;
        worst = worst.max((spectrum.norm() - f.magnitude(hz)).abs());
    }
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn hundred_hz_tone_is_rejected_by_eeg_band() {
    let fs = 256.0;
    let f = design_butterworth(FilterKind::Bandpass { low_hz: 0.8, high_hz: 50.0 }, 8, fs).unwrap();
    let x: Vec<f64> = (0..(20.0 * fs) as usize).map(|i| (2.0 * PI * 100.0 * i as f64 / fs).sin()).collect();
    let y = f.filter_samples(&x);
    let peak = y[y.len() / 2..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(20.0 * peak.log10() <= -40.0, "{} dB", 20.0 * peak.log10());
}

#[test]
fn filtering_rejects_other_rates() {
    let f = design_butterworth(FilterKind::Lowpass { cutoff_hz: 60.0 }, 8, 256.0).unwrap();
    assert!(matches!(f.apply(&ecg(vec![0.0; 10], 512.0)), Err(Error::Contract(_))));
    assert_eq!(f.apply(&ecg(vec![0.0; 10], 256.0)).unwrap().channels[0], vec![0.0; 10]);
}

/// Least-squares amplitude of a sinusoid at a known frequency.
fn fitted_amplitude(y: &[f64], hz: f64, fs: f64) -> f64 {
    let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &v) in y.iter().enumerate() {
        let p = 2.0 * PI * hz * i as f64 / fs;
        let (s, c) = p.sin_cos();
        ss += s * s;
        sc += s * c;
        cc += c * c;
        ys += v * s;
        yc += v * c;
    }
    let det = ss * cc - sc * sc;
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    a.hypot(b)
}

#[test]
fn decimation_keeps_a_slow_sinusoid() {
    let x: Vec<f64> = (0..2560 * 2).map(|i| (2.0 * PI * 5.0 * i as f64 / 256.0).sin()).collect();
    let out = decimate(&ecg(x, 256.0), 128.0).unwrap();
    assert_eq!(out.sample_rate, 128.0);
    assert_eq!(out.channels[0].len(), 2560);
    let amp = fitted_amplitude(&out.channels[0][256..], 5.0, 128.0);
    assert!((amp - 1.0).abs() < 0.02, "{amp}");

    let same = ecg(vec![1.0, 2.0, 3.0], 128.0);
    assert_eq!(decimate(&same, 128.0).unwrap(), same);
    assert!(matches!(decimate(&ecg(vec![0.0; 100], 200.0), 128.0), Err(Error::UnsupportedRate(_))));
}

#[test]
fn normalization_examples() {
    let out = normalize_per_subject(&[ecg(vec![1.0, 2.0, 3.0], 128.0)], "s01").unwrap();
    let want = [-1.224744871391589, 0.0, 1.224744871391589];
    for (a, b) in out[0].channels[0].iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
    let again = normalize_per_subject(&out, "s01").unwrap();
    for (a, b) in again[0].channels[0].iter().zip(&out[0].channels[0]) {
        assert!((a - b).abs() < 1e-6);
    }
    // statistics span every record of the subject
    let two = normalize_per_subject(&[ecg(vec![0.0, 1.0], 128.0), ecg(vec![5.0, 6.0, 7.0], 128.0)], "s01").unwrap();
    let all: Vec<f64> = two.iter().flat_map(|r| r.channels[0].clone()).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
    assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
    assert!(matches!(
        normalize_per_subject(&[ecg(vec![2.0; 5], 128.0)], "s01"),
        Err(Error::DegenerateSignal(_))
    ));
}

fn any_design() -> impl Strategy<Value = (FilterKind, usize, f64)> {
    let fs = prop_oneof![Just(128.0), Just(250.0), Just(256.0), Just(512.0), Just(1000.0), Just(1024.0)];
    (fs, 1usize..7, 0.002f64..0.45, 0.05f64..0.95, any::<bool>()).prop_map(|(fs, half, lo, width, band)| {
        let nyq = fs / 2.0;
        let low = lo * nyq;
        let kind = if band {
            FilterKind::Bandpass {
                low_hz: low,
                high_hz: low + width * (0.98 * nyq - low),
            }
        } else {
            FilterKind::Lowpass { cutoff_hz: low.max(0.5) }
        };
        (kind, 2 * half, fs)
    })
}

proptest! {
    #[test]
    fn every_design_is_stable((kind, order, fs) in any_design()) {
        let f = design_butterworth(kind, order, fs).unwrap();
        prop_assert!(f.max_pole_magnitude() < 1.0);
        let sections = match kind {
            FilterKind::Lowpass { .. } => order.div_ceil(2),
            FilterKind::Bandpass { .. } => order,
        };
        prop_assert_eq!(f.sections.len(), sections);
    }

    #[test]
    fn filtering_is_linear(
        x in prop::collection::vec(-1.0f64..1.0, 64),
        y in prop::collection::vec(-1.0f64..1.0, 64),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let f = design_butterworth(FilterKind::Bandpass { low_hz: 0.8, high_hz: 50.0 }, 8, 256.0).unwrap();
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let lhs = f.filter_samples(&mixed);
        let (fx, fy) = (f.filter_samples(&x), f.filter_samples(&y));
        for i in 0..64 {
            prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() < 1e-6);
        }
    }
}
