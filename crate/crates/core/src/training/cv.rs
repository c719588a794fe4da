use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::{make_folds, Fold, FoldPlan, SegmentTable, Target};
use crate::dsp::Modality;
use crate::error::{Error, Result};
use crate::metrics::{ConfusionCounts, ModelKind, RunReport};
use crate::model::{save_fused, save_model, FusedModel, Mode, ModelConfig, SingleModalityModel, FUSION_HIDDEN};
use crate::rng::{derive_seed, stream, Stream};
use crate::tensor::Scalar;
use crate::training::config::TrainConfig;
use crate::training::log::RunLog;
use crate::training::loops::{classify_logits, finetune_emotion, fused_logits, pretrain_mvp, train_fused, FusionItem};

/// Everything the cross-validation protocol needs besides the data.
#[derive(Debug, Clone)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    pub targets: Vec<Target>,
    pub ecg: ModelConfig,
    pub eeg: ModelConfig,
    /// `None` trains every fold from scratch.
    pub pretrain: Option<TrainConfig>,
    pub finetune: TrainConfig,
    pub fuse: TrainConfig,
    pub fusion_hidden: Vec<usize>,
    /// Share of each fold's labeled training segments that keep their
    /// labels. Validation labels are always kept.
    pub label_fraction: f64,
    /// Worker threads for folds; 1 runs them in order on the calling thread.
    pub jobs: usize,
    /// Per-fold logs and checkpoints go to `out/fold_<k>/` when set.
    pub out: Option<PathBuf>,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 0,
            targets: Target::ALL.to_vec(),
            ecg: ModelConfig::default(),
            eeg: ModelConfig::default(),
            pretrain: None,
            finetune: TrainConfig::finetune(),
            fuse: TrainConfig::fuse(),
            fusion_hidden: FUSION_HIDDEN.to_vec(),
            label_fraction: 1.0,
            jobs: 1,
            out: None,
        }
    }
}

impl CvOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "eval.label_fraction {} must be in (0, 1]",
                self.label_fraction
            )));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("eval.folds {} must be at least 2", self.folds)));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("eval.targets is empty".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.ecg.validate()?;
        self.eeg.validate()?;
        if let Some(p) = &self.pretrain {
            p.validate()?;
        }
        self.finetune.validate()?;
        self.fuse.validate()
    }

    fn model_config(&self, m: Modality) -> &ModelConfig {
        match m {
            Modality::Ecg => &self.ecg,
            Modality::Eeg => &self.eeg,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: RunReport,
    /// Fold plan over `labeled_rows`, indices into that list.
    pub plan: FoldPlan,
    /// Table rows that took part in the folds.
    pub labeled_rows: Vec<usize>,
}

/// Table rows used by one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldRows {
    pub pretrain: Vec<usize>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldRows {
    fn from_fold(fold: &Fold, labeled: &[usize], unlabeled: &[usize]) -> Self {
        let map = |ix: &[usize]| -> Vec<usize> { ix.iter().map(|&i| labeled[i]).collect() };
        let (train, validation, test) = (map(&fold.train), map(&fold.validation), map(&fold.test));
        let mut pretrain: Vec<usize> = train.iter().chain(&validation).chain(unlabeled).copied().collect();
        pretrain.sort_unstable();
        Self {
            pretrain,
            train,
            validation,
            test,
        }
    }

    /// Fails if any test row also feeds pre-training, training, or validation.
    pub fn check_leakage(&self) -> Result<()> {
        let test: BTreeSet<usize> = self.test.iter().copied().collect();
        for (what, rows) in [
            ("pre-training", &self.pretrain),
            ("training", &self.train),
            ("validation", &self.validation),
        ] {
            if let Some(r) = rows.iter().find(|r| test.contains(r)) {
                return Err(Error::Contract(format!("leakage: test row {r} is also in the {what} set")));
            }
        }
        Ok(())
    }
}

/// Keeps a seeded `fraction` of `rows` (at least one), in their original order.
fn label_subset(rows: &[usize], fraction: f64, seed: u64, path: &[u64]) -> Vec<usize> {
    if fraction >= 1.0 || rows.is_empty() {
        return rows.to_vec();
    }
    let keep = ((rows.len() as f64 * fraction).round() as usize).clamp(1, rows.len());
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut stream(seed, Stream::LabelSubset, path));
    let mut picked: Vec<usize> = order[..keep].to_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| rows[i]).collect()
}

fn target_tag(t: Target) -> u64 {
    match t {
        Target::Arousal => 0,
        Target::Valence => 1,
    }
}

struct FoldResult {
    cells: Vec<(ModelKind, Target, ConfusionCounts)>,
}

fn fold_log(dir: Option<&Path>, name: &str) -> Result<RunLog> {
    match dir {
        Some(d) => RunLog::to_file(&d.join(format!("{name}.jsonl"))),
        None => Ok(RunLog::in_memory()),
    }
}

fn run_fold<T: Scalar>(
    table: &SegmentTable,
    rows: &FoldRows,
    fold: usize,
    opts: &CvOptions,
) -> Result<FoldResult> {
    rows.check_leakage()?;
    let seed = derive_seed(opts.seed, Stream::Split, &[fold as u64]);
    let dir = opts.out.as_ref().map(|o| o.join(format!("fold_{fold}")));
    let dir = dir.as_deref();
    let norm = table.fit_norm(&rows.pretrain)?;
    let modalities = table.modalities();

    // normalized inputs of every row this fold touches
    let mut inputs: BTreeMap<Modality, BTreeMap<usize, Vec<T>>> = BTreeMap::new();
    for &m in &modalities {
        let per_row = inputs.entry(m).or_default();
        for &r in rows.pretrain.iter().chain(&rows.test) {
            let v = table.normalized(m, r, &norm)?;
            per_row.insert(r, v.into_iter().map(T::from_f64).collect());
        }
    }
    let gather = |m: Modality, rs: &[usize]| -> Vec<Vec<T>> { rs.iter().map(|r| inputs[&m][r].clone()).collect() };

    let mut cells = Vec::new();
    let mut tuned: BTreeMap<(Modality, Target), SingleModalityModel<T>> = BTreeMap::new();
    for &m in &modalities {
        let config = opts.model_config(m).clone();
        let base = match &opts.pretrain {
            Some(pcfg) => {
                let mut cfg = pcfg.clone();
                cfg.seed = seed;
                let mut model = SingleModalityModel::<T>::new(m, config, Mode::Pretrain, seed)?;
                let mut log = fold_log(dir, &format!("pretrain_{m}"))?;
                pretrain_mvp(&mut model, &gather(m, &rows.pretrain), &cfg, &mut log)?;
                if let Some(d) = dir {
                    let p = d.join(format!("pretrain_{m}.phfu"));
                    save_model(&model, None, &p)?;
                    log.set_checkpoint(&p)?;
                }
                model.into_finetune(seed)
            }
            None => SingleModalityModel::<T>::new(m, config, Mode::Finetune, seed)?,
        };
        for &target in &opts.targets {
            let tt = target_tag(target);
            let has = |r: &usize| table.label(*r, target).is_some();
            let train_rows: Vec<usize> = rows.train.iter().copied().filter(has).collect();
            let val_rows: Vec<usize> = rows.validation.iter().copied().filter(has).collect();
            let train_rows = label_subset(&train_rows, opts.label_fraction, seed, &[tt, 0]);
            let test_rows: Vec<usize> = rows.test.iter().copied().filter(has).collect();
            if train_rows.is_empty() || test_rows.is_empty() {
                return Err(Error::Contract(format!("no {target} labels in the training or test split")));
            }
            let labels = |rs: &[usize]| -> Vec<u8> { rs.iter().map(|&r| table.label(r, target).unwrap_or(0)).collect() };
            let mut cfg = opts.finetune.clone();
            cfg.seed = seed;
            cfg.target = Some(target);
            let mut model = base.clone();
            let mut log = fold_log(dir, &format!("finetune_{m}_{target}"))?;
            finetune_emotion(
                &mut model,
                (&gather(m, &train_rows), &labels(&train_rows)),
                (&gather(m, &val_rows), &labels(&val_rows)),
                &cfg,
                &mut log,
            )?;
            if let Some(d) = dir {
                let p = d.join(format!("finetune_{m}_{target}.phfu"));
                save_model(&model, Some(target), &p)?;
                log.set_checkpoint(&p)?;
            }
            let logits = classify_logits(&model, &gather(m, &test_rows))?;
            let kind = match m {
                Modality::Ecg => ModelKind::Ecg,
                Modality::Eeg => ModelKind::Eeg,
            };
            cells.push((kind, target, ConfusionCounts::from_logits(&labels(&test_rows), &logits)?));
            tuned.insert((m, target), model);
        }
    }

    if modalities.contains(&Modality::Ecg) && modalities.contains(&Modality::Eeg) {
        for &target in &opts.targets {
            let tt = target_tag(target);
            let ecg = tuned.remove(&(Modality::Ecg, target)).expect("tuned above");
            let eeg = tuned.remove(&(Modality::Eeg, target)).expect("tuned above");
            let mut fused = FusedModel::new(target, ecg, eeg, &opts.fusion_hidden, opts.fuse.dropout, seed)?;
            let has = |r: &usize| table.label(*r, target).is_some();
            let train_rows: Vec<usize> = rows.train.iter().copied().filter(has).collect();
            let val_rows: Vec<usize> = rows.validation.iter().copied().filter(has).collect();
            let train_rows = label_subset(&train_rows, opts.label_fraction, seed, &[tt, 0]);
            let test_rows: Vec<usize> = rows.test.iter().copied().filter(has).collect();
            let items = |rs: &[usize]| -> Vec<FusionItem<'_, T>> {
                rs.iter()
                    .map(|&r| FusionItem {
                        key: &table.keys[r],
                        ecg: &inputs[&Modality::Ecg][&r],
                        eeg: &inputs[&Modality::Eeg][&r],
                        label: table.label(r, target).unwrap_or(0),
                    })
                    .collect()
            };
            let mut cfg = opts.fuse.clone();
            cfg.seed = seed;
            cfg.target = Some(target);
            let mut log = fold_log(dir, &format!("fuse_{target}"))?;
            train_fused(&mut fused, &items(&train_rows), &items(&val_rows), &cfg, &mut log)?;
            if let Some(d) = dir {
                let p = d.join(format!("fused_{target}.phfu"));
                save_fused(&fused, &p)?;
                log.set_checkpoint(&p)?;
            }
            let test_items = items(&test_rows);
            let logits = fused_logits(&fused, &test_items)?;
            let labels: Vec<u8> = test_items.iter().map(|i| i.label).collect();
            cells.push((ModelKind::Fused, target, ConfusionCounts::from_logits(&labels, &logits)?));
        }
    }
    Ok(FoldResult { cells })
}

/// Segment-level k-fold protocol over every labeled window. Unlabeled windows
/// only ever join the pre-training pool. Per fold: normalization statistics
/// from the non-test rows, optional pre-training per modality, fine-tuning per
/// modality and target, fusion per target, and test-set evaluation.
pub fn run_cross_validation<T: Scalar>(table: &SegmentTable, opts: &CvOptions) -> Result<CvOutcome> {
    opts.validate()?;
    let labeled = table.any_labeled_rows();
    let unlabeled = table.unlabeled_rows();
    let plan = make_folds(labeled.len(), opts.folds, opts.seed)?;
    let fold_rows: Vec<FoldRows> = plan
        .folds
        .iter()
        .map(|f| FoldRows::from_fold(f, &labeled, &unlabeled))
        .collect();
    let work = |f: usize| -> Result<FoldResult> {
        log::info!("fold {}/{}", f + 1, opts.folds);
        run_fold::<T>(table, &fold_rows[f], f, opts).map_err(|e| Error::Fold {
            fold: f,
            source: Box::new(e),
        })
    };
    let results: Vec<Result<FoldResult>> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..opts.folds).into_par_iter().map(work).collect())
    } else {
        (0..opts.folds).map(work).collect()
    };
    let mut report = RunReport::default();
    for (f, res) in results.into_iter().enumerate() {
        for (kind, target, counts) in res?.cells {
            report.record(f, kind, target, &counts)?;
        }
        report
            .test_sets
            .push(fold_rows[f].test.iter().map(|&r| table.keys[r].clone()).collect());
    }
    report.sort();
    Ok(CvOutcome {
        report,
        plan,
        labeled_rows: labeled,
    })
}

/// Row sets of every fold, for inspection and leakage checks.
pub fn fold_rows(table: &SegmentTable, folds: usize, seed: u64) -> Result<Vec<FoldRows>> {
    let labeled = table.any_labeled_rows();
    let unlabeled = table.unlabeled_rows();
    Ok(make_folds(labeled.len(), folds, seed)?
        .folds
        .iter()
        .map(|f| FoldRows::from_fold(f, &labeled, &unlabeled))
        .collect())
}
