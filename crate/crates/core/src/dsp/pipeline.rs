//! Fixed preprocessing order: filter → decimate → normalize → segment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsp::filter::{design_butterworth, FilterKind, IirFilter};
use crate::dsp::signal::{Modality, Segment, SignalRecord};
use crate::error::{Error, Result};

pub const TARGET_RATE: f64 = 128.0;
pub const WINDOW_SECONDS: f64 = 10.0;
/// Samples per segment at the target rate.
pub const SEGMENT_LEN: usize = 1280;

pub const ANTI_ALIAS_ORDER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    #[serde(flatten)]
    pub kind: FilterKind,
    pub order: usize,
}

impl FilterSpec {
    pub fn design(&self, fs: f64) -> Result<IirFilter> {
        design_butterworth(self.kind, self.order, fs)
    }
}

/// Per-modality filters; `None` skips filtering for that modality.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterPreset {
    pub ecg: Option<FilterSpec>,
    pub eeg: Option<FilterSpec>,
}

impl FilterPreset {
    pub const NAMES: [&'static str; 3] = ["amigos", "amigos-eeg-alt", "none"];

    pub fn named(name: &str) -> Result<Self> {
        let ecg = FilterSpec {
            kind: FilterKind::Lowpass { cutoff_hz: 60.0 },
            order: 8,
        };
        let eeg = |low_hz, high_hz| FilterSpec {
            kind: FilterKind::Bandpass { low_hz, high_hz },
            order: 8,
        };
        match name {
            "amigos" => Ok(Self {
                ecg: Some(ecg),
                eeg: Some(eeg(0.8, 50.0)),
            }),
            "amigos-eeg-alt" => Ok(Self {
                ecg: Some(ecg),
                eeg: Some(eeg(4.0, 45.0)),
            }),
            "none" => Ok(Self::default()),
            other => Err(Error::Config(format!(
                "unknown filter preset `{other}` (known: {})",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn for_modality(&self, m: Modality) -> Option<&FilterSpec> {
        match m {
            Modality::Ecg => self.ecg.as_ref(),
            Modality::Eeg => self.eeg.as_ref(),
        }
    }
}

/// Anti-alias low-pass at `0.45·target_rate`, then keep every k-th sample.
pub fn decimate(record: &SignalRecord, target_rate: f64) -> Result<SignalRecord> {
    let ratio = record.sample_rate / target_rate;
    let k = ratio.round();
    if !(k >= 1.0) || (ratio - k).abs() > 1e-9 {
        return Err(Error::UnsupportedRate(format!(
            "{} Hz is not an integer multiple of {} Hz ({}/{})",
            record.sample_rate, target_rate, record.subject_id, record.trial_id
        )));
    }
    let k = k as usize;
    if k == 1 {
        return Ok(record.clone());
    }
    let aa = design_butterworth(
        FilterKind::Lowpass {
            cutoff_hz: 0.45 * target_rate,
        },
        ANTI_ALIAS_ORDER,
        record.sample_rate,
    )?;
    let channels = record
        .channels
        .iter()
        .map(|c| aa.filter_samples(c).into_iter().step_by(k).collect())
        .collect();
    Ok(record.with_channels(channels, target_rate))
}

/// Per-channel location and population scale.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Pools every sample of each channel across `channels_of`.
    pub fn fit<'a, I>(channels_of: I, what: &str) -> Result<Self>
    where
        I: IntoIterator<Item = Vec<&'a [f64]>>,
    {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let mut items = Vec::new();
        for chans in channels_of {
            if sum.is_empty() {
                sum = vec![0.0; chans.len()];
                sq = vec![0.0; chans.len()];
            } else if chans.len() != sum.len() {
                return Err(Error::dim("normalize", format!("channel count varies within {what}")));
            }
            count += chans.first().map_or(0, |c| c.len());
            for (c, x) in chans.iter().enumerate() {
                sum[c] += x.iter().sum::<f64>();
            }
            items.push(chans);
        }
        if count == 0 {
            return Err(Error::Contract(format!("no samples to normalize for {what}")));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        // second pass around the mean for accuracy
        for chans in &items {
            for (c, x) in chans.iter().enumerate() {
                sq[c] += x.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
        let std: Vec<f64> = sq.iter().map(|s| (s / n).sqrt()).collect();
        if let Some(c) = std.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::DegenerateSignal(format!(
                "channel {c} of {what} has zero variance"
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn apply_in_place(&self, channels: &mut [Vec<f64>]) {
        for (c, x) in channels.iter_mut().enumerate() {
            for v in x.iter_mut() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
    }

    /// Applies to a channel-major flat buffer with `samples.len() / channels` steps.
    pub fn apply_flat(&self, samples: &mut [f64]) {
        let t = samples.len() / self.mean.len();
        for (c, chunk) in samples.chunks_mut(t).enumerate() {
            for v in chunk {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
    }
}

/// Zero-mean, unit-variance per channel for one subject, separately per
/// modality, using all of that subject's samples in `records`.
pub fn normalize_per_subject(records: &[SignalRecord], subject_id: &str) -> Result<Vec<SignalRecord>> {
    let mine: Vec<&SignalRecord> = records.iter().filter(|r| r.subject_id == subject_id).collect();
    if mine.is_empty() {
        return Err(Error::Contract(format!("no records for subject `{subject_id}`")));
    }
    let mut stats = BTreeMap::new();
    for m in Modality::ALL {
        let group: Vec<&SignalRecord> = mine.iter().copied().filter(|r| r.modality == m).collect();
        if group.is_empty() {
            continue;
        }
        let what = format!("subject {subject_id} {m}");
        let fitted = NormStats::fit(
            group
                .iter()
                .map(|r| r.channels.iter().map(Vec::as_slice).collect::<Vec<_>>()),
            &what,
        )?;
        stats.insert(m, fitted);
    }
    Ok(mine
        .into_iter()
        .map(|r| {
            let mut out = r.clone();
            stats[&r.modality].apply_in_place(&mut out.channels);
            out
        })
        .collect())
}

/// Consecutive non-overlapping windows; a trailing partial window is dropped.
pub fn segment(record: &SignalRecord, window_s: f64) -> Result<Vec<Segment>> {
    if (record.sample_rate - TARGET_RATE).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "segmentation expects {TARGET_RATE} Hz, record {}/{} is at {} Hz",
            record.subject_id, record.trial_id, record.sample_rate
        )));
    }
    let len = (window_s * record.sample_rate).round() as usize;
    if len == 0 {
        return Err(Error::Contract("segment window must be positive".into()));
    }
    let count = record.num_samples() / len;
    Ok((0..count)
        .map(|w| Segment {
            subject_id: record.subject_id.clone(),
            trial_id: record.trial_id.clone(),
            window: w,
            modality: record.modality,
            channels: record.channels.len(),
            samples: record
                .channels
                .iter()
                .flat_map(|c| c[w * len..(w + 1) * len].iter().copied())
                .collect(),
        })
        .collect())
}

/// Filter at the native rate, then decimate to 128 Hz.
pub fn filter_and_decimate(record: &SignalRecord, preset: &FilterPreset) -> Result<SignalRecord> {
    let filtered = match preset.for_modality(record.modality) {
        Some(spec) => spec.design(record.sample_rate)?.apply(record)?,
        None => record.clone(),
    };
    decimate(&filtered, TARGET_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ecg(samples: Vec<f64>, fs: f64) -> SignalRecord {
        SignalRecord::new(vec![samples], fs, "s1", "t1", Modality::Ecg).unwrap()
    }

    #[test]
    fn segment_counts() {
        let n = |secs: f64| segment(&ecg(vec![0.5; (secs * 128.0).round() as usize], 128.0), 10.0).unwrap();
        let six = n(65.0);
        assert_eq!(six.len(), 6);
        assert!(six.iter().all(|s| s.len() == SEGMENT_LEN));
        assert_eq!(n(10.0).len(), 1);
        assert_eq!(n(9.9).len(), 0);
    }

    #[test]
    fn segment_rejects_other_rates() {
        assert!(matches!(segment(&ecg(vec![0.0; 2560], 256.0), 10.0), Err(Error::Contract(_))));
    }

    #[test]
    fn normalize_small_channel() {
        let out = normalize_per_subject(&[ecg(vec![1.0, 2.0, 3.0], 128.0)], "s1").unwrap();
        let v = &out[0].channels[0];
        let e = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((v[0] + e).abs() < 1e-12 && v[1].abs() < 1e-12 && (v[2] - e).abs() < 1e-12);
        assert!((e - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn normalize_constant_is_degenerate() {
        let r = normalize_per_subject(&[ecg(vec![4.0; 10], 128.0)], "s1");
        assert!(matches!(r, Err(Error::DegenerateSignal(_))));
        assert!(matches!(normalize_per_subject(&[], "s1"), Err(Error::Contract(_))));
    }

    #[test]
    fn decimate_lengths_and_errors() {
        let r = ecg(vec![0.0; 2560], 256.0);
        let d = decimate(&r, 128.0).unwrap();
        assert_eq!(d.num_samples(), 1280);
        assert_eq!(d.sample_rate, 128.0);
        let same = ecg((0..100).map(f64::from).collect(), 128.0);
        assert_eq!(decimate(&same, 128.0).unwrap(), same);
        assert!(matches!(decimate(&ecg(vec![0.0; 100], 200.0), 128.0), Err(Error::UnsupportedRate(_))));
    }

    #[test]
    fn presets() {
        for name in FilterPreset::NAMES {
            FilterPreset::named(name).unwrap();
        }
        assert!(FilterPreset::named("bogus").is_err());
        let alt = FilterPreset::named("amigos-eeg-alt").unwrap();
        assert_eq!(
            alt.eeg.unwrap().kind,
            FilterKind::Bandpass {
                low_hz: 4.0,
                high_hz: 45.0
            }
        );
    }
}
