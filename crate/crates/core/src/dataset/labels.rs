use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::manifest::Manifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Arousal,
    Valence,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Arousal, Target::Valence];

    pub fn name(self) -> &'static str {
        match self {
            Target::Arousal => "arousal",
            Target::Valence => "valence",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arousal" => Ok(Target::Arousal),
            "valence" => Ok(Target::Valence),
            _ => Err(Error::Config(format!("unknown target `{s}` (expected arousal or valence)"))),
        }
    }
}

/// Binary labels per trial; segments inherit their trial's label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    /// Absent for a dimension that no trial rates.
    pub thresholds: BTreeMap<Target, f64>,
    pub labels: BTreeMap<(String, String), BTreeMap<Target, u8>>,
}

impl LabelSet {
    pub fn get(&self, subject: &str, trial: &str, target: Target) -> Option<u8> {
        self.labels
            .get(&(subject.to_string(), trial.to_string()))
            .and_then(|m| m.get(&target).copied())
    }
}

/// Threshold = mean rating; strictly above → 1, otherwise 0.
pub fn threshold_ratings(ratings: &[f64]) -> Option<(f64, Vec<u8>)> {
    if ratings.is_empty() {
        return None;
    }
    let mean = ratings.iter().sum::<f64>() / ratings.len() as f64;
    Some((mean, ratings.iter().map(|&r| u8::from(r > mean)).collect()))
}

pub fn binarize_labels(manifest: &Manifest) -> Result<LabelSet> {
    let mut thresholds = BTreeMap::new();
    let mut labels: BTreeMap<(String, String), BTreeMap<Target, u8>> = BTreeMap::new();
    for target in Target::ALL {
        let rated: Vec<_> = manifest
            .entries
            .iter()
            .filter_map(|e| {
                let r = match target {
                    Target::Arousal => e.arousal,
                    Target::Valence => e.valence,
                };
                r.map(|r| (e, r))
            })
            .collect();
        let ratings: Vec<f64> = rated.iter().map(|&(_, r)| r).collect();
        let Some((thr, bits)) = threshold_ratings(&ratings) else {
            continue;
        };
        thresholds.insert(target, thr);
        for ((e, _), bit) in rated.iter().zip(bits) {
            labels
                .entry((e.subject_id.clone(), e.trial_id.clone()))
                .or_default()
                .insert(target, bit);
        }
    }
    if thresholds.is_empty() {
        return Err(Error::Contract(format!("manifest `{}` has no labeled trials", manifest.name)));
    }
    Ok(LabelSet { thresholds, labels })
}
