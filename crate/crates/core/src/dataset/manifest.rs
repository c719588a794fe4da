use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::io::{read_header, read_signal};
use crate::dsp::{Modality, SignalRecord};
use crate::error::{Error, Result};

pub const RATING_MIN: f64 = 1.0;
pub const RATING_MAX: f64 = 9.0;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialFiles {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecg: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eeg: Option<PathBuf>,
}

impl TrialFiles {
    pub fn get(&self, m: Modality) -> Option<&PathBuf> {
        match m {
            Modality::Ecg => self.ecg.as_ref(),
            Modality::Eeg => self.eeg.as_ref(),
        }
    }

    pub fn set(&mut self, m: Modality, p: PathBuf) {
        match m {
            Modality::Ecg => self.ecg = Some(p),
            Modality::Eeg => self.eeg = Some(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub trial_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arousal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valence: Option<f64>,
    pub files: TrialFiles,
}

impl ManifestEntry {
    pub fn is_labeled(&self) -> bool {
        self.arousal.is_some() || self.valence.is_some()
    }
}

/// Dataset index. File paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub sample_rate: f64,
    pub modalities: Vec<Modality>,
    #[serde(default)]
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn has(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.subject_id.as_str()).collect()
    }

    fn sort(&mut self) {
        self.entries
            .sort_by(|a, b| (&a.subject_id, &a.trial_id).cmp(&(&b.subject_id, &b.trial_id)));
    }

    /// Checks structure and ratings without touching signal files.
    pub fn validate_entries(&self, path: &Path) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::load(path, "manifest lists no modalities"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::load(path, format!("sample_rate {} must be positive", self.sample_rate)));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            let who = format!("trial {}/{}", e.subject_id, e.trial_id);
            if !seen.insert((&e.subject_id, &e.trial_id)) {
                return Err(Error::load(path, format!("duplicate {who}")));
            }
            for (dim, r) in [("arousal", e.arousal), ("valence", e.valence)] {
                if let Some(r) = r {
                    if !(RATING_MIN..=RATING_MAX).contains(&r) {
                        return Err(Error::load(
                            path,
                            format!("{who}: {dim} rating {r} outside [{RATING_MIN}, {RATING_MAX}]"),
                        ));
                    }
                }
            }
            for &m in &self.modalities {
                if e.files.get(m).is_none() {
                    return Err(Error::load(path, format!("{who}: no {m} file")));
                }
            }
        }
        Ok(())
    }

    /// Reads one trial's signal for modality `m`.
    pub fn read_record(&self, entry: &ManifestEntry, m: Modality) -> Result<SignalRecord> {
        let rel = entry.files.get(m).ok_or_else(|| {
            Error::Contract(format!("trial {}/{} has no {m} file", entry.subject_id, entry.trial_id))
        })?;
        let path = self.resolve(rel);
        let (h, channels) = read_signal(&path)?;
        SignalRecord::new(channels, h.sample_rate, &entry.subject_id, &entry.trial_id, m)
            .map_err(|e| Error::load(&path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Parses, validates, and sorts a manifest. Every referenced signal file must
/// exist with a well-formed header whose rate and channel count agree.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: Manifest = toml::from_str(&text).map_err(|e| Error::load(path, e.to_string()))?;
    m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate_entries(path)?;
    for e in &m.entries {
        for &modality in &m.modalities {
            let file = m.resolve(e.files.get(modality).expect("validated"));
            let h = read_header(&file).map_err(|err| {
                Error::load(path, format!("trial {}/{}: {err}", e.subject_id, e.trial_id))
            })?;
            if h.channels != modality.channel_count() {
                return Err(Error::load(
                    &file,
                    format!("{modality} needs {} channels, header says {}", modality.channel_count(), h.channels),
                ));
            }
            if (h.sample_rate - m.sample_rate).abs() > 1e-9 {
                return Err(Error::load(
                    &file,
                    format!("rate {} Hz differs from manifest rate {} Hz", h.sample_rate, m.sample_rate),
                ));
            }
        }
    }
    m.sort();
    Ok(m)
}
