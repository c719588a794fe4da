use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electrode order for the 10 EEG channels.
pub const EEG_CHANNELS: [&str; 10] = ["F7", "F3", "T7", "P7", "O1", "O2", "P8", "T8", "F4", "F8"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Ecg,
    Eeg,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Ecg, Modality::Eeg];

    pub fn channel_count(self) -> usize {
        match self {
            Modality::Ecg => 1,
            Modality::Eeg => EEG_CHANNELS.len(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Ecg => "ecg",
            Modality::Eeg => "eeg",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ecg" => Ok(Modality::Ecg),
            "eeg" => Ok(Modality::Eeg),
            _ => Err(Error::Config(format!("unknown modality `{s}` (expected ecg or eeg)"))),
        }
    }
}

/// One trial of one modality: `channels[c][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: f64,
    pub subject_id: String,
    pub trial_id: String,
    pub modality: Modality,
}

impl SignalRecord {
    pub fn new(
        channels: Vec<Vec<f64>>,
        sample_rate: f64,
        subject_id: impl Into<String>,
        trial_id: impl Into<String>,
        modality: Modality,
    ) -> Result<Self> {
        let r = Self {
            channels,
            sample_rate,
            subject_id: subject_id.into(),
            trial_id: trial_id.into(),
            modality,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let want = self.modality.channel_count();
        if self.channels.len() != want {
            return Err(Error::dim(
                "signal_record",
                format!(
                    "{} record {}/{} has {} channels, expected {}",
                    self.modality,
                    self.subject_id,
                    self.trial_id,
                    self.channels.len(),
                    want
                ),
            ));
        }
        let n = self.channels[0].len();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::dim(
                "signal_record",
                format!("ragged channels in {}/{}", self.subject_id, self.trial_id),
            ));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Domain(format!("sample rate {} must be positive", self.sample_rate)));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate
    }

    /// Same identity, new samples.
    pub fn with_channels(&self, channels: Vec<Vec<f64>>, sample_rate: f64) -> Self {
        Self {
            channels,
            sample_rate,
            subject_id: self.subject_id.clone(),
            trial_id: self.trial_id.clone(),
            modality: self.modality,
        }
    }
}

/// A fixed-length window cut from one trial. Samples are channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub subject_id: String,
    pub trial_id: String,
    pub window: usize,
    pub modality: Modality,
    pub channels: usize,
    pub samples: Vec<f64>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.samples.len() / self.channels.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let t = self.len();
        &self.samples[c * t..(c + 1) * t]
    }

    /// `(subject, trial, window)` identifies the same 10 s across modalities.
    pub fn key(&self) -> (&str, &str, usize) {
        (&self.subject_id, &self.trial_id, self.window)
    }
}
