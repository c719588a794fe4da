//! Preprocessed, windowed view of a manifest: one row per 10 s window shared
//! by every modality of a trial.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::dataset::labels::{binarize_labels, LabelSet, Target};
use crate::dataset::manifest::Manifest;
use crate::dsp::{filter_and_decimate, segment, FilterPreset, Modality, NormStats, WINDOW_SECONDS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentKey {
    pub subject_id: String,
    pub trial_id: String,
    pub window: usize,
}

impl std::fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}#{}", self.subject_id, self.trial_id, self.window)
    }
}

#[derive(Debug, Clone)]
pub struct SegmentTable {
    pub keys: Vec<SegmentKey>,
    /// Filtered and decimated but not normalized, channel-major per row.
    pub raw: BTreeMap<Modality, Vec<Vec<f64>>>,
    pub labels: Vec<BTreeMap<Target, u8>>,
    pub label_set: Option<LabelSet>,
    pub segment_len: usize,
}

/// Per (subject, modality) normalization fitted on a subset of rows.
#[derive(Debug, Clone, Default)]
pub struct NormTable {
    pub per_subject: BTreeMap<(String, Modality), NormStats>,
    pub pooled: BTreeMap<Modality, NormStats>,
}

impl SegmentTable {
    /// Reads every trial, filters, decimates to 128 Hz, and cuts windows.
    /// Rows exist only for windows present in all modalities of the manifest.
    pub fn build(manifest: &Manifest, preset: &FilterPreset) -> Result<Self> {
        let label_set = binarize_labels(manifest).ok();
        let per_trial: Vec<Result<BTreeMap<Modality, Vec<Vec<f64>>>>> = manifest
            .entries
            .par_iter()
            .map(|e| {
                let mut out = BTreeMap::new();
                for &m in &manifest.modalities {
                    let rec = manifest.read_record(e, m)?;
                    let rec = filter_and_decimate(&rec, preset)?;
                    let segs = segment(&rec, WINDOW_SECONDS)?;
                    out.insert(m, segs.into_iter().map(|s| s.samples).collect());
                }
                Ok(out)
            })
            .collect();
        let mut keys = Vec::new();
        let mut raw: BTreeMap<Modality, Vec<Vec<f64>>> =
            manifest.modalities.iter().map(|&m| (m, Vec::new())).collect();
        let mut labels = Vec::new();
        for (e, trial) in manifest.entries.iter().zip(per_trial) {
            let mut trial = trial?;
            let windows = trial.values().map(Vec::len).min().unwrap_or(0);
            let lab: BTreeMap<Target, u8> = Target::ALL
                .iter()
                .filter_map(|&t| {
                    label_set
                        .as_ref()
                        .and_then(|ls| ls.get(&e.subject_id, &e.trial_id, t))
                        .map(|b| (t, b))
                })
                .collect();
            for w in 0..windows {
                keys.push(SegmentKey {
                    subject_id: e.subject_id.clone(),
                    trial_id: e.trial_id.clone(),
                    window: w,
                });
                labels.push(lab.clone());
            }
            for (m, segs) in trial.iter_mut() {
                raw.get_mut(m)
                    .expect("listed modality")
                    .extend(segs.drain(..windows));
            }
        }
        Ok(Self {
            keys,
            raw,
            labels,
            label_set,
            segment_len: crate::dsp::SEGMENT_LEN,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.raw.keys().copied().collect()
    }

    pub fn label(&self, row: usize, target: Target) -> Option<u8> {
        self.labels[row].get(&target).copied()
    }

    /// Rows that carry a label for `target`.
    pub fn labeled_rows(&self, target: Target) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.label(r, target).is_some()).collect()
    }

    /// Rows with a label for any target.
    pub fn any_labeled_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&r| !self.labels[r].is_empty()).collect()
    }

    pub fn unlabeled_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.labels[r].is_empty()).collect()
    }

    fn channels_of(&self, m: Modality) -> usize {
        m.channel_count()
    }

    /// Fits per-subject statistics on `rows` only. Subjects without rows in
    /// the fit set fall back to statistics pooled over all of `rows`.
    pub fn fit_norm(&self, rows: &[usize]) -> Result<NormTable> {
        let mut table = NormTable::default();
        for (&m, data) in &self.raw {
            let c = self.channels_of(m);
            let split = |r: usize| -> Vec<&[f64]> { data[r].chunks(self.segment_len).take(c).collect() };
            let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for &r in rows {
                by_subject.entry(&self.keys[r].subject_id).or_default().push(r);
            }
            for (subject, rs) in by_subject {
                let stats = NormStats::fit(rs.iter().map(|&r| split(r)), &format!("subject {subject} {m}"))?;
                table.per_subject.insert((subject.to_string(), m), stats);
            }
            if !rows.is_empty() {
                let pooled = NormStats::fit(rows.iter().map(|&r| split(r)), &format!("pooled {m}"))?;
                table.pooled.insert(m, pooled);
            }
        }
        Ok(table)
    }

    /// Normalized copy of one row's samples.
    pub fn normalized(&self, m: Modality, row: usize, norm: &NormTable) -> Result<Vec<f64>> {
        let data = self
            .raw
            .get(&m)
            .ok_or_else(|| Error::Contract(format!("dataset has no {m} signals")))?;
        let stats = norm
            .per_subject
            .get(&(self.keys[row].subject_id.clone(), m))
            .or_else(|| norm.pooled.get(&m))
            .ok_or_else(|| Error::Contract(format!("no normalization statistics for {m}")))?;
        let mut v = data[row].clone();
        stats.apply_flat(&mut v);
        Ok(v)
    }
}
