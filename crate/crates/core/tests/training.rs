mod common;

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use physfuse::dataset::{sample_mask, SegmentTable, SyntheticSpec, Target};
use physfuse::dsp::Modality;
use physfuse::metrics::{accuracy, ConfusionCounts};
use physfuse::model::{save_model, FusedModel, Mode, SingleModalityModel};
use physfuse::nn::LrSchedule;
use physfuse::rng::{stream, Stream};
use physfuse::training::{
    classify_logits, finetune_emotion, mvp_eval_loss, pretrain_mvp, read_log, run_cross_validation, train_fused,
    FusionItem, RunLog,
};
use physfuse::Error;

/// Normalized segments of a corpus where every labeled trial is informative
/// in both modalities.
struct Corpus {
    table: SegmentTable,
    ecg: Vec<Vec<f64>>,
    eeg: Vec<Vec<f64>>,
    arousal: Vec<u8>,
}

fn build_corpus(spec: SyntheticSpec, seed: u64) -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let (_, table) = common::synth(dir.path(), &spec, seed, None);
    let rows: Vec<usize> = (0..table.len()).collect();
    let norm = table.fit_norm(&rows).unwrap();
    let take = |m| rows.iter().map(|&r| table.normalized(m, r, &norm).unwrap()).collect();
    Corpus {
        ecg: take(Modality::Ecg),
        eeg: take(Modality::Eeg),
        arousal: rows.iter().map(|&r| table.label(r, Target::Arousal).unwrap()).collect(),
        table,
    }
}

fn both_informative(trials: usize, duration_s: f64) -> SyntheticSpec {
    SyntheticSpec {
        subjects: 4,
        trials_per_subject: trials,
        duration_s,
        ecg_only_fraction: 0.0,
        eeg_only_fraction: 0.0,
        ..SyntheticSpec::default()
    }
}

fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| build_corpus(both_informative(10, 30.0), 31))
}

/// One window per trial, so held-out accuracy averages over independent trials.
fn many_trials() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| build_corpus(both_informative(60, 10.0), 37))
}

fn train_accuracy(model: &SingleModalityModel<f64>, x: &[Vec<f64>], y: &[u8]) -> f64 {
    let logits = classify_logits(model, x).unwrap();
    accuracy(&ConfusionCounts::from_logits(y, &logits).unwrap()).unwrap()
}

fn arousal_finetune(epochs: usize) -> physfuse::training::TrainConfig {
    let mut tc = common::finetune(epochs, 3e-3);
    tc.target = Some(Target::Arousal);
    tc
}

/// Error of copying the masked input, whose masked positions are zero, under
/// the same masks the evaluation draws.
fn copy_input_loss(data: &[Vec<f64>], channels: usize, tc: &physfuse::training::TrainConfig, seed: u64) -> f64 {
    let mut total = 0.0;
    for (i, x) in data.iter().enumerate() {
        let t = x.len() / channels;
        let mut rng = stream(seed, Stream::Mask, &[u64::MAX, i as u64]);
        let mask = sample_mask(t, tc.mask.span_length, tc.mask.mask_ratio, &mut rng).unwrap();
        let (mut sq, mut n) = (0.0, 0);
        for ch in x.chunks(t) {
            for (v, &m) in ch.iter().zip(&mask.mask) {
                if m {
                    sq += v * v;
                    n += 1;
                }
            }
        }
        total += sq / n as f64;
    }
    total / data.len() as f64
}

#[test]
fn masked_value_pretraining_learns_structure() {
    let c = corpus();
    let data = &c.eeg[..48];
    let held_out = &c.eeg[48..72];
    let tc = common::pretrain(100, 2e-3);
    let mut model = SingleModalityModel::<f64>::new(Modality::Eeg, common::small_model(), Mode::Pretrain, 1).unwrap();
    let mut log = RunLog::in_memory();
    pretrain_mvp(&mut model, data, &tc, &mut log).unwrap();
    let losses = log.losses();
    assert_eq!(losses.len(), 100);
    assert!(losses[0] > *losses.last().unwrap(), "{losses:?}");

    let learned = mvp_eval_loss(&model, held_out, &tc, 99).unwrap();
    let baseline = copy_input_loss(held_out, Modality::Eeg.channel_count(), &tc, 99);
    assert!(learned <= 0.8 * baseline, "learned {learned} vs baseline {baseline}");

    for (r, e) in log.records.iter().enumerate() {
        assert_eq!(e.epoch, r + 1);
        assert_eq!(e.lr, tc.schedule.lr_at(r + 1));
    }
}

#[test]
fn pretraining_is_reproducible() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let tc = common::pretrain(2, 1e-3);
    let mut bytes = Vec::new();
    let mut logs = Vec::new();
    for run in 0..2 {
        let mut model =
            SingleModalityModel::<f32>::new(Modality::Ecg, common::small_model(), Mode::Pretrain, 4).unwrap();
        let data: Vec<Vec<f32>> = c.ecg[..16].iter().map(|x| x.iter().map(|&v| v as f32).collect()).collect();
        let log_path = dir.path().join(format!("log{run}.jsonl"));
        let mut log = RunLog::to_file(&log_path).unwrap();
        pretrain_mvp(&mut model, &data, &tc, &mut log).unwrap();
        let path = dir.path().join(format!("m{run}.phfu"));
        save_model(&model, None, &path).unwrap();
        bytes.push(std::fs::read(&path).unwrap());
        logs.push(
            read_log(&log_path)
                .unwrap()
                .into_iter()
                .map(|r| (r.epoch, r.lr, r.train_loss))
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(logs[0], logs[1]);
    assert_eq!(logs[0].len(), 2);
}

#[test]
fn separable_data_is_fit() {
    let c = corpus();
    let mut model =
        SingleModalityModel::<f64>::new(Modality::Ecg, common::small_model(), Mode::Finetune, 2).unwrap();
    finetune_emotion(&mut model, (&c.ecg[..60], &c.arousal[..60]), (&[], &[]), &arousal_finetune(100), &mut RunLog::in_memory())
        .unwrap();
    let acc = train_accuracy(&model, &c.ecg[..60], &c.arousal[..60]);
    assert!(acc >= 0.95, "train accuracy {acc}");
}

#[test]
fn shuffled_labels_stay_at_chance() {
    let c = many_trials();
    let (train, val) = (0..80, 80..240);
    let mut shuffled = c.arousal[train.clone()].to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let mut model =
        SingleModalityModel::<f64>::new(Modality::Ecg, common::small_model(), Mode::Finetune, 2).unwrap();
    finetune_emotion(&mut model, (&c.ecg[train], &shuffled), (&[], &[]), &arousal_finetune(100), &mut RunLog::in_memory())
        .unwrap();
    let acc = train_accuracy(&model, &c.ecg[val.clone()], &c.arousal[val]);
    assert!((acc - 0.5).abs() <= 0.1, "validation accuracy with shuffled labels {acc}");
}

#[test]
fn best_validation_epoch_is_kept() {
    let c = corpus();
    let tc = arousal_finetune(6);
    let mut model =
        SingleModalityModel::<f64>::new(Modality::Eeg, common::small_model(), Mode::Finetune, 6).unwrap();
    let mut log = RunLog::in_memory();
    let summary = finetune_emotion(
        &mut model,
        (&c.eeg[..40], &c.arousal[..40]),
        (&c.eeg[40..60], &c.arousal[40..60]),
        &tc,
        &mut log,
    )
    .unwrap();
    let accs: Vec<f64> = log.records.iter().map(|r| r.val_accuracy.unwrap()).collect();
    let best = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first_best = accs.iter().position(|&a| a == best).unwrap() + 1;
    assert_eq!(summary.best_epoch, first_best);
    assert_eq!(summary.best_val_accuracy, Some(best));
    assert_eq!(train_accuracy(&model, &c.eeg[40..60], &c.arousal[40..60]), best);
}

#[test]
fn phase_and_target_contracts() {
    let c = corpus();
    let mut model =
        SingleModalityModel::<f64>::new(Modality::Ecg, common::small_model(), Mode::Finetune, 0).unwrap();
    let no_target = common::finetune(1, 1e-3);
    let err = finetune_emotion(&mut model, (&c.ecg[..4], &c.arousal[..4]), (&[], &[]), &no_target, &mut RunLog::in_memory())
        .unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
    let err = pretrain_mvp(&mut model, &c.ecg[..4], &common::pretrain(2, 1e-3), &mut RunLog::in_memory()).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
    let err = finetune_emotion(
        &mut model,
        (&c.ecg[..4], &c.arousal[..4]),
        (&[], &[]),
        &common::pretrain(2, 1e-3),
        &mut RunLog::in_memory(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Contract(_)));

    let eeg = SingleModalityModel::<f64>::new(Modality::Eeg, common::small_model(), Mode::Finetune, 0).unwrap();
    let mut fused = FusedModel::new(Target::Arousal, model, eeg, &[8], 0.0, 0).unwrap();
    let items: Vec<FusionItem<'_, f64>> = (0..4)
        .map(|i| FusionItem {
            key: &c.table.keys[i],
            ecg: &c.ecg[i],
            eeg: &c.eeg[i],
            label: c.arousal[i],
        })
        .collect();
    let mut tc = common::fuse(1, 1e-3);
    tc.target = Some(Target::Valence);
    let err = train_fused(&mut fused, &items, &[], &tc, &mut RunLog::in_memory()).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn divergence_is_a_numeric_error_annotated_with_its_fold() {
    let c = corpus();
    let mut opts = common::arousal_cv(2, 0, common::finetune(2, 1e6), common::fuse(1, 1e-3));
    opts.finetune.adam.epsilon = 1e-30;
    opts.finetune.schedule = LrSchedule::StepDecay {
        initial: 1e30,
        factor: 1.0,
        period_epochs: 1,
    };
    match run_cross_validation::<f32>(&c.table, &opts) {
        Err(e @ Error::Fold { .. }) => {
            assert!(e.to_string().contains("fold"), "{e}");
            assert!(matches!(e.root(), Error::Numeric(_)), "{e}");
        }
        other => panic!("expected a fold error, got {other:?}"),
    }
}

#[test]
fn cross_validation_reports_every_cell() {
    let c = corpus();
    let opts = common::arousal_cv(2, 3, common::finetune(2, 3e-3), common::fuse(2, 1e-2));
    let out = run_cross_validation::<f32>(&c.table, &opts).unwrap();
    // 2 folds × 3 models × 1 target × 2 metrics
    assert_eq!(out.report.rows.len(), 12);
    assert_eq!(out.report.test_sets.iter().map(Vec::len).sum::<usize>(), out.labeled_rows.len());
    let again = run_cross_validation::<f32>(&c.table, &opts).unwrap();
    assert_eq!(out.report, again.report);
    assert!(out.report.rows.iter().all(|r| (0.0..=1.0).contains(&r.value)));
}
