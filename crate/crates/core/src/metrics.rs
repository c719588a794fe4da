//! Binary classification metrics, t-based confidence intervals, and report files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::dataset::{SegmentKey, Target};
use crate::error::{Error, Result};

pub const REPORT_TABLE: &str = "report.csv";
pub const REPORT_SUMMARY: &str = "summary.toml";
pub const REPORT_FOLDS: &str = "folds.csv";

/// Hard decision: strictly positive logit → class 1.
pub fn predict(logit: f64) -> u8 {
    u8::from(logit > 0.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(labels: &[u8], preds: &[u8]) -> Result<Self> {
        if labels.len() != preds.len() {
            return Err(Error::dim(
                "confusion",
                format!("{} labels vs {} predictions", labels.len(), preds.len()),
            ));
        }
        let mut c = Self::default();
        for (&y, &p) in labels.iter().zip(preds) {
            match (y, p) {
                (1, 1) => c.tp += 1,
                (0, 1) => c.fp += 1,
                (0, 0) => c.tn += 1,
                (1, 0) => c.fn_ += 1,
                _ => return Err(Error::Domain(format!("labels and predictions must be 0 or 1, got ({y}, {p})"))),
            }
        }
        Ok(c)
    }

    pub fn from_logits(labels: &[u8], logits: &[f64]) -> Result<Self> {
        let preds: Vec<u8> = logits.iter().map(|&z| predict(z)).collect();
        Self::from_predictions(labels, &preds)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::Contract("metrics need at least one evaluated segment".into()));
        }
        Ok(())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, as `2tp / (2tp + fp + fn)`; 0 for a
/// class that is neither present nor predicted.
fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    c.nonempty()?;
    Ok(ratio(c.tp + c.tn, c.total()))
}

/// Unweighted mean of the positive-class and negative-class F1.
pub fn macro_f1(c: &ConfusionCounts) -> Result<f64> {
    c.nonempty()?;
    Ok((f1(c.tp, c.fp, c.fn_) + f1(c.tn, c.fn_, c.fp)) / 2.0)
}

/// Mean of the two per-class recalls.
pub fn balanced_accuracy(c: &ConfusionCounts) -> Result<f64> {
    c.nonempty()?;
    Ok((ratio(c.tp, c.tp + c.fn_) + ratio(c.tn, c.tn + c.fp)) / 2.0)
}

/// Student-t CDF through the regularized incomplete beta function.
pub fn t_cdf(t: f64, dof: f64) -> f64 {
    let tail = 0.5 * beta_reg(dof / 2.0, 0.5, dof / (dof + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse Student-t CDF by bisection on [`t_cdf`].
pub fn t_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || !(dof > 0.0) {
        return Err(Error::Domain(format!("t quantile needs 0 < p < 1 and dof > 0, got p={p}, dof={dof}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    while t_cdf(lo, dof) > p {
        lo *= 2.0;
    }
    while t_cdf(hi, dof) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `(mean, t_{(1+level)/2, k−1} · s/√k)` with `s` the sample standard deviation.
pub fn t_confidence_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    let k = values.len();
    if k < 2 {
        return Err(Error::Contract(format!("confidence interval needs at least 2 values, got {k}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level {level} must lie in (0, 1)")));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok((values[0], 0.0));
    }
    let n = k as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = t_quantile((1.0 + level) / 2.0, n - 1.0)?;
    Ok((mean, t * var.sqrt() / n.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ecg,
    Eeg,
    Fused,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Ecg, ModelKind::Eeg, ModelKind::Fused];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ecg => "ecg",
            ModelKind::Eeg => "eeg",
            ModelKind::Fused => "fused",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Accuracy, Metric::F1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub fold: usize,
    pub model: ModelKind,
    pub target: Target,
    pub metric: Metric,
    pub value: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMember {
    pub fold: usize,
    pub subject_id: String,
    pub trial_id: String,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    /// Test segments of every fold.
    pub test_sets: Vec<Vec<SegmentKey>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: ModelKind,
    pub target: Target,
    pub metric: Metric,
    pub folds: usize,
    pub mean: f64,
    pub ci95_half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Summary {
    cells: Vec<Aggregate>,
}

impl RunReport {
    /// Adds accuracy and F1 rows for one (fold, model, target) evaluation.
    pub fn record(&mut self, fold: usize, model: ModelKind, target: Target, c: &ConfusionCounts) -> Result<()> {
        let bal = balanced_accuracy(c)?;
        for (metric, value) in [(Metric::Accuracy, accuracy(c)?), (Metric::F1, macro_f1(c)?)] {
            self.rows.push(ReportRow {
                fold,
                model,
                target,
                metric,
                value,
                balanced_accuracy: bal,
            });
        }
        Ok(())
    }

    pub fn sort(&mut self) {
        self.rows
            .sort_by(|a, b| (a.fold, a.model, a.target, a.metric).cmp(&(b.fold, b.model, b.target, b.metric)));
    }

    pub fn values(&self, model: ModelKind, target: Target, metric: Metric) -> Vec<f64> {
        let mut rows: Vec<&ReportRow> = self
            .rows
            .iter()
            .filter(|r| r.model == model && r.target == target && r.metric == metric)
            .collect();
        rows.sort_by_key(|r| r.fold);
        rows.iter().map(|r| r.value).collect()
    }

    /// Mean and 95% CI half-width per (model, target, metric) cell.
    pub fn aggregate(&self) -> Result<Vec<Aggregate>> {
        let mut cells: BTreeMap<(ModelKind, Target, Metric), Vec<(usize, f64)>> = BTreeMap::new();
        for r in &self.rows {
            cells.entry((r.model, r.target, r.metric)).or_default().push((r.fold, r.value));
        }
        cells
            .into_iter()
            .map(|((model, target, metric), mut v)| {
                v.sort_by_key(|&(f, _)| f);
                let vals: Vec<f64> = v.iter().map(|&(_, x)| x).collect();
                let (mean, half) = if vals.len() >= 2 {
                    t_confidence_interval(&vals, 0.95)?
                } else {
                    (vals[0], f64::NAN)
                };
                Ok(Aggregate {
                    model,
                    target,
                    metric,
                    folds: vals.len(),
                    mean,
                    ci95_half_width: half,
                })
            })
            .collect()
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Writes `report.csv`, `summary.toml`, and `folds.csv` into `dir`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sorted = report.clone();
    sorted.sort();

    let table = dir.join(REPORT_TABLE);
    let mut w = csv::Writer::from_path(&table).map_err(|e| csv_err(&table, e))?;
    for r in &sorted.rows {
        w.serialize(r).map_err(|e| csv_err(&table, e))?;
    }
    w.flush().map_err(|e| Error::io(&table, e))?;

    let folds = dir.join(REPORT_FOLDS);
    let mut w = csv::Writer::from_path(&folds).map_err(|e| csv_err(&folds, e))?;
    for (fold, keys) in sorted.test_sets.iter().enumerate() {
        for k in keys {
            w.serialize(FoldMember {
                fold,
                subject_id: k.subject_id.clone(),
                trial_id: k.trial_id.clone(),
                window: k.window,
            })
            .map_err(|e| csv_err(&folds, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&folds, e))?;

    let summary = Summary {
        cells: sorted.aggregate()?,
    };
    let text = toml::to_string(&summary).map_err(|e| Error::Config(e.to_string()))?;
    let sp = dir.join(REPORT_SUMMARY);
    fs::write(&sp, text).map_err(|e| Error::io(&sp, e))
}

/// Reads back a `report.csv` (and `folds.csv` when present).
pub fn read_report(dir: &Path) -> Result<RunReport> {
    let table = dir.join(REPORT_TABLE);
    let mut r = csv::Reader::from_path(&table).map_err(|e| csv_err(&table, e))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<ReportRow>, _>>()
        .map_err(|e| Error::load(&table, e.to_string()))?;
    let mut test_sets: Vec<Vec<SegmentKey>> = Vec::new();
    let folds = dir.join(REPORT_FOLDS);
    if folds.exists() {
        let mut r = csv::Reader::from_path(&folds).map_err(|e| csv_err(&folds, e))?;
        for m in r.deserialize::<FoldMember>() {
            let m = m.map_err(|e| Error::load(&folds, e.to_string()))?;
            if test_sets.len() <= m.fold {
                test_sets.resize(m.fold + 1, Vec::new());
            }
            test_sets[m.fold].push(SegmentKey {
                subject_id: m.subject_id,
                trial_id: m.trial_id,
                window: m.window,
            });
        }
    }
    Ok(RunReport { rows, test_sets })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_confusion() {
        let c = ConfusionCounts::from_predictions(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap();
        assert_eq!(accuracy(&c).unwrap(), 0.75);
        let want = (2.0 / 3.0 + 0.8) / 2.0;
        assert!((macro_f1(&c).unwrap() - want).abs() < 1e-15);
        assert!(accuracy(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn t_table_value() {
        assert!((t_quantile(0.975, 9.0).unwrap() - 2.262157).abs() < 1e-4);
        assert!((t_quantile(0.025, 9.0).unwrap() + 2.262157).abs() < 1e-4);
    }

    #[test]
    fn flat_folds_have_zero_width() {
        let (m, h) = t_confidence_interval(&[0.8; 10], 0.95).unwrap();
        assert!((m - 0.8).abs() < 1e-15);
        assert_eq!(h, 0.0);
        assert!(t_confidence_interval(&[0.8], 0.95).is_err());
    }
}
