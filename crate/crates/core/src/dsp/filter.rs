//! Butterworth IIR design via the bilinear transform, realized as a cascade of
//! second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::signal::SignalRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterKind {
    Lowpass { cutoff_hz: f64 },
    Bandpass { low_hz: f64, high_hz: f64 },
}

/// `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + self.b1 * z_inv + self.b2 * z2) / (1.0 + self.a1 * z_inv + self.a2 * z2)
    }

    pub fn poles(&self) -> [Complex64; 2] {
        // roots of z² + a1 z + a2
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IirFilter {
    pub sections: Vec<Biquad>,
    pub kind: FilterKind,
    pub order: usize,
    pub sample_rate: f64,
}

/// Designs a digital Butterworth filter. `order` is the prototype order; a
/// band-pass design has twice as many poles (one section per prototype pole).
pub fn design_butterworth(kind: FilterKind, order: usize, fs: f64) -> Result<IirFilter> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::Domain(format!("filter order {order} must be even and ≥ 2")));
    }
    if !(fs > 0.0) {
        return Err(Error::Domain(format!("sample rate {fs} must be positive")));
    }
    let nyquist = fs / 2.0;
    let check = |f: f64, what: &str| -> Result<()> {
        if !(f > 0.0 && f < nyquist) {
            return Err(Error::Domain(format!(
                "{what} {f} Hz must lie strictly between 0 and Nyquist {nyquist} Hz"
            )));
        }
        Ok(())
    };
    let prewarp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let bilinear = |s: Complex64| (2.0 * fs + s) / (2.0 * fs - s);
    // Upper-half-plane poles of the unit-cutoff analog prototype.
    let proto: Vec<Complex64> = (0..order / 2)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect();

    let sections = match kind {
        FilterKind::Lowpass { cutoff_hz } => {
            check(cutoff_hz, "cutoff")?;
            let wc = prewarp(cutoff_hz);
            proto
                .iter()
                .map(|&p| {
                    let z = bilinear(p * wc);
                    let a1 = -2.0 * z.re;
                    let a2 = z.norm_sqr();
                    // unity gain at DC: numerator (1 + z⁻¹)² evaluates to 4
                    let g = (1.0 + a1 + a2) / 4.0;
                    Biquad {
                        b0: g,
                        b1: 2.0 * g,
                        b2: g,
                        a1,
                        a2,
                    }
                })
                .collect::<Vec<_>>()
        }
        FilterKind::Bandpass { low_hz, high_hz } => {
            check(low_hz, "low cutoff")?;
            check(high_hz, "high cutoff")?;
            if low_hz >= high_hz {
                return Err(Error::Domain(format!(
                    "band-pass low cutoff {low_hz} Hz must be below high cutoff {high_hz} Hz"
                )));
            }
            let (w1, w2) = (prewarp(low_hz), prewarp(high_hz));
            let bw = w2 - w1;
            let w0sq = w1 * w2;
            let center = 2.0 * (w0sq.sqrt() / (2.0 * fs)).atan();
            let z_inv = Complex64::from_polar(1.0, -center);
            let mut out = Vec::with_capacity(order);
            for &p in &proto {
                // s² − p·bw·s + w0² = 0
                let pb = p * bw;
                let disc = (pb * pb - 4.0 * w0sq).sqrt();
                for s in [(pb + disc) / 2.0, (pb - disc) / 2.0] {
                    let z = bilinear(s);
                    let mut sec = Biquad {
                        b0: 1.0,
                        b1: 0.0,
                        b2: -1.0,
                        a1: -2.0 * z.re,
                        a2: z.norm_sqr(),
                    };
                    let g = 1.0 / sec.response(z_inv).norm();
                    sec.b0 *= g;
                    sec.b2 *= g;
                    out.push(sec);
                }
            }
            out
        }
    };
    Ok(IirFilter {
        sections,
        kind,
        order,
        sample_rate: fs,
    })
}

impl IirFilter {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / self.sample_rate);
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn max_pole_magnitude(&self) -> f64 {
        self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// Causal single pass, zero initial state, transposed direct form II.
    pub fn filter_samples(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b0 * input + z1;
                z1 = s.b1 * input - s.a1 * out + z2;
                z2 = s.b2 * input - s.a2 * out;
                *v = out;
            }
        }
        y
    }

    /// Filters every channel of `record`.
    pub fn apply(&self, record: &SignalRecord) -> Result<SignalRecord> {
        if (record.sample_rate - self.sample_rate).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "filter designed for {} Hz applied to a {} Hz record ({}/{})",
                self.sample_rate, record.sample_rate, record.subject_id, record.trial_id
            )));
        }
        let channels = record.channels.iter().map(|c| self.filter_samples(c)).collect();
        Ok(record.with_channels(channels, record.sample_rate))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowpass_half_power_at_cutoff() {
        let f = design_butterworth(FilterKind::Lowpass { cutoff_hz: 60.0 }, 8, 256.0).unwrap();
        assert_eq!(f.sections.len(), 4);
        assert!((f.magnitude(60.0) - 0.5f64.sqrt()).abs() < 1e-6);
        assert!((f.magnitude(0.0) - 1.0).abs() < 1e-12);
        assert!(f.max_pole_magnitude() < 1.0);
    }

    #[test]
    fn bandpass_section_count_and_center_gain() {
        let f = design_butterworth(
            FilterKind::Bandpass {
                low_hz: 0.8,
                high_hz: 50.0,
            },
            8,
            128.0,
        )
        .unwrap();
        assert_eq!(f.sections.len(), 8);
        let center = (0.8f64 * 50.0).sqrt();
        assert!((f.magnitude(center) - 1.0).abs() < 1e-3);
        assert!((f.magnitude(0.8) - 0.5f64.sqrt()).abs() < 1e-6);
        assert!((f.magnitude(50.0) - 0.5f64.sqrt()).abs() < 1e-6);
        assert!(f.max_pole_magnitude() < 1.0);
    }

    #[test]
    fn invalid_designs_rejected() {
        let lp = |fc| design_butterworth(FilterKind::Lowpass { cutoff_hz: fc }, 8, 128.0);
        assert!(matches!(lp(64.0), Err(Error::Domain(_))));
        assert!(matches!(lp(0.0), Err(Error::Domain(_))));
        assert!(design_butterworth(FilterKind::Lowpass { cutoff_hz: 10.0 }, 3, 128.0).is_err());
        assert!(design_butterworth(
            FilterKind::Bandpass {
                low_hz: 30.0,
                high_hz: 20.0
            },
            4,
            128.0
        )
        .is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let f = design_butterworth(FilterKind::Lowpass { cutoff_hz: 20.0 }, 4, 128.0).unwrap();
        assert!(f.filter_samples(&[0.0; 64]).iter().all(|&v| v == 0.0));
    }
}
