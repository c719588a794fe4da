mod common;

use std::fs;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use physfuse::dataset::{SegmentKey, Target};
use physfuse::dsp::Modality;
use physfuse::model::{
    load_fused, load_model, save_fused, save_model, FusedModel, Mode, ModelConfig, SingleModalityModel,
};
use physfuse::nn::{Ctx, Param, Parameters};
use physfuse::training::{train_fused, FusionItem, RunLog};
use physfuse::Error;

fn segment(m: Modality, cfg: &ModelConfig, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m.channel_count() * cfg.segment_len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn backbone_values<T: physfuse::Scalar>(m: &SingleModalityModel<T>) -> Vec<(String, Vec<u64>)> {
    let mut out = Vec::new();
    m.visit_backbone("", &mut |name, p: &Param<T>| {
        out.push((name.to_string(), p.value.data().iter().map(|v| v.as_f64().to_bits()).collect()));
    });
    out
}

fn key(window: usize) -> SegmentKey {
    SegmentKey {
        subject_id: "s00".into(),
        trial_id: "t00".into(),
        window,
    }
}

fn fused(seed: u64) -> FusedModel<f64> {
    let cfg = common::small_model();
    let ecg = SingleModalityModel::new(Modality::Ecg, cfg.clone(), Mode::Finetune, seed).unwrap();
    let eeg = SingleModalityModel::new(Modality::Eeg, cfg, Mode::Finetune, seed + 1).unwrap();
    FusedModel::new(Target::Arousal, ecg, eeg, &[16], 0.0, seed).unwrap()
}

#[test]
fn full_size_pretrain_output_covers_every_sample_and_channel() {
    let cfg = ModelConfig::default();
    for m in Modality::ALL {
        let model = SingleModalityModel::<f32>::new(m, cfg.clone(), Mode::Pretrain, 0).unwrap();
        let x: Vec<f32> = segment(m, &cfg, 1).into_iter().map(|v| v as f32).collect();
        let mut ctx = Ctx::eval();
        let input = model.input(&mut ctx, &x).unwrap();
        let out = model.forward_pretrain(&mut ctx, "", input).unwrap();
        assert_eq!(ctx.graph.shape(out), &[1280, m.channel_count()]);
        assert!(ctx.graph.value(out).all_finite());
    }
}

#[test]
fn penultimate_widths() {
    let ecg = SingleModalityModel::<f32>::new(Modality::Ecg, ModelConfig::default(), Mode::Finetune, 0).unwrap();
    let eeg = SingleModalityModel::<f32>::new(Modality::Eeg, ModelConfig::default(), Mode::Finetune, 0).unwrap();
    assert_eq!(ecg.penultimate_size(), 64);
    let f = FusedModel::new(Target::Valence, ecg, eeg, &[64, 32], 0.0, 0).unwrap();
    assert_eq!(f.fusion_width(), 128);
}

#[test]
fn wrong_input_length_is_a_dimension_error() {
    let cfg = common::small_model();
    let model = SingleModalityModel::<f64>::new(Modality::Eeg, cfg, Mode::Finetune, 0).unwrap();
    assert!(matches!(model.predict(&[0.0; 100]), Err(Error::Dimension { .. })));
    let mut ctx = Ctx::eval();
    let x = ctx.graph.constant(physfuse::Tensor::zeros(&[model.channels(), 1280]));
    assert!(matches!(model.forward_pretrain(&mut ctx, "", x), Err(Error::Contract(_))));
}

#[test]
fn same_segment_same_logit() {
    let cfg = common::small_model();
    let model = SingleModalityModel::<f64>::new(Modality::Ecg, cfg.clone(), Mode::Finetune, 3).unwrap();
    let x = segment(Modality::Ecg, &cfg, 7);
    let (a, pa) = model.predict(&x).unwrap();
    let (b, pb) = model.predict(&x).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(pa, pb);
    let (c, _) = model.predict(&segment(Modality::Ecg, &cfg, 8)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn classification_reads_only_the_cls_row() {
    let cfg = common::small_model();
    let model = SingleModalityModel::<f64>::new(Modality::Eeg, cfg.clone(), Mode::Finetune, 5).unwrap();
    let x = segment(Modality::Eeg, &cfg, 9);
    let mut ctx = Ctx::eval();
    let input = model.input(&mut ctx, &x).unwrap();
    let seq = model.backbone(&mut ctx, "", input).unwrap();
    let (logit, _) = model.classify_sequence(&mut ctx, "", seq).unwrap();
    let want = ctx.graph.value(logit).data()[0];

    // reverse every token row after CLS and scramble their values
    let value = ctx.graph.value(seq).clone();
    let (rows, d) = value.dims2().unwrap();
    let mut data = value.data().to_vec();
    for r in 1..rows {
        let src = rows - r;
        for j in 0..d {
            data[r * d + j] = value.data()[src * d + j] * 3.0 - 1.0;
        }
    }
    let altered = ctx.graph.constant(physfuse::Tensor::new(vec![rows, d], data).unwrap());
    let (logit2, _) = model.classify_sequence(&mut ctx, "", altered).unwrap();
    assert_eq!(ctx.graph.value(logit2).data()[0].to_bits(), want.to_bits());

    // changing the CLS row does change the output
    let mut data = value.data().to_vec();
    data[0] += 1.0;
    let moved = ctx.graph.constant(physfuse::Tensor::new(vec![rows, d], data).unwrap());
    let (logit3, _) = model.classify_sequence(&mut ctx, "", moved).unwrap();
    assert_ne!(ctx.graph.value(logit3).data()[0], want);
}

#[test]
fn fused_logit_depends_on_both_modalities() {
    let model = fused(11);
    let cfg = common::small_model();
    let (e, g) = (segment(Modality::Ecg, &cfg, 1), segment(Modality::Eeg, &cfg, 2));
    let k = key(0);
    let logit = |e: &[f64], g: &[f64]| {
        let mut ctx = Ctx::eval();
        let z = model.fused_forward(&mut ctx, (&k, e), (&k, g)).unwrap();
        ctx.graph.value(z).data()[0]
    };
    let base = logit(&e, &g);
    assert_ne!(base, logit(&e, &vec![0.0; g.len()]));
    assert_ne!(base, logit(&vec![0.0; e.len()], &g));
    assert_eq!(base, logit(&e, &g));

    let mut ctx = Ctx::eval();
    let err = model.fused_forward(&mut ctx, (&key(0), &e), (&key(1), &g)).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
    assert!(FusedModel::new(Target::Arousal, model.eeg.clone(), model.ecg.clone(), &[8], 0.0, 0).is_err());
}

#[test]
fn fusion_training_only_moves_the_head() {
    let mut model = fused(13);
    let cfg = common::small_model();
    let keys: Vec<SegmentKey> = (0..8).map(key).collect();
    let data: Vec<(Vec<f64>, Vec<f64>)> = (0..8)
        .map(|i| (segment(Modality::Ecg, &cfg, 100 + i), segment(Modality::Eeg, &cfg, 200 + i)))
        .collect();
    let items: Vec<FusionItem<'_, f64>> = keys
        .iter()
        .zip(&data)
        .enumerate()
        .map(|(i, (k, (e, g)))| FusionItem {
            key: k,
            ecg: e,
            eeg: g,
            label: (i % 2) as u8,
        })
        .collect();
    let before = model.backbone_hash();
    let head_before = model.fusion_head.param_hash();
    let tc = common::fuse(3, 1e-2);
    let (_, adam) = train_fused(&mut model, &items[..6], &items[6..], &tc, &mut RunLog::in_memory()).unwrap();
    assert_eq!(model.backbone_hash(), before);
    assert_ne!(model.fusion_head.param_hash(), head_before);
    let tracked: Vec<&str> = adam.tracked().collect();
    assert!(!tracked.is_empty());
    assert!(tracked.iter().all(|n| n.starts_with("fusion_head.")), "{tracked:?}");
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_model();
    let model = SingleModalityModel::<f64>::new(Modality::Eeg, cfg.clone(), Mode::Finetune, 17).unwrap();
    let path = dir.path().join("m.phfu");
    save_model(&model, Some(Target::Valence), &path).unwrap();
    let (back, target) = load_model::<f64>(&path, Some((Modality::Eeg, &cfg))).unwrap();
    assert_eq!(target, Some(Target::Valence));
    assert_eq!(back.param_hash(), model.param_hash());

    let f = fused(19);
    let fp = dir.path().join("f.phfu");
    save_fused(&f, &fp).unwrap();
    let fb = load_fused::<f64>(&fp, Some((&cfg, &cfg))).unwrap();
    assert_eq!(fb.param_hash(), f.param_hash());
    assert!(load_model::<f64>(&fp, None).is_err());
}

#[test]
fn damaged_checkpoints_are_load_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_model();
    let model = SingleModalityModel::<f32>::new(Modality::Ecg, cfg.clone(), Mode::Pretrain, 1).unwrap();
    let path = dir.path().join("m.phfu");
    save_model(&model, None, &path).unwrap();
    let bytes = fs::read(&path).unwrap();

    let cases: [(&str, Vec<u8>); 3] = [
        ("truncated", bytes[..bytes.len() - 5].to_vec()),
        ("magic", [b"NOPE".as_slice(), &bytes[4..]].concat()),
        ("version", [&bytes[..4], 99u32.to_le_bytes().as_slice(), &bytes[8..]].concat()),
    ];
    for (what, damaged) in cases {
        let p = dir.path().join(format!("{what}.phfu"));
        fs::write(&p, damaged).unwrap();
        let err = load_model::<f32>(&p, None).unwrap_err();
        assert!(matches!(err, Error::Load { .. }), "{what}: {err}");
    }
    assert!(matches!(load_model::<f32>(&dir.path().join("missing"), None), Err(Error::Io { .. })));
    // stored as f32, so a 64-bit load must refuse
    assert!(load_model::<f64>(&path, None).is_err());

    let other = ModelConfig {
        hidden_size: 32,
        ..cfg.clone()
    };
    match load_model::<f32>(&path, Some((Modality::Ecg, &other))) {
        Err(Error::ConfigMismatch { field, .. }) => assert_eq!(field, "hidden_size"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        load_model::<f32>(&path, Some((Modality::Eeg, &cfg))),
        Err(Error::ConfigMismatch { .. })
    ));
}

#[test]
fn finetuning_starts_from_the_pretrained_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_model();
    let pre = SingleModalityModel::<f64>::new(Modality::Eeg, cfg.clone(), Mode::Pretrain, 23).unwrap();
    let path = dir.path().join("pre.phfu");
    save_model(&pre, None, &path).unwrap();
    let (loaded, _) = load_model::<f64>(&path, Some((Modality::Eeg, &cfg))).unwrap();
    let tuned = loaded.into_finetune(29);
    assert_eq!(backbone_values(&tuned), backbone_values(&pre));
    assert!(tuned.mvp_head.is_none());

    // the emotion head depends only on the seed, not on where the backbone came from
    let scratch = SingleModalityModel::<f64>::new(Modality::Eeg, cfg, Mode::Finetune, 29).unwrap();
    assert_eq!(
        tuned.emotion_head.as_ref().unwrap().param_hash(),
        scratch.emotion_head.as_ref().unwrap().param_hash()
    );
    assert_ne!(backbone_values(&tuned), backbone_values(&scratch));
}
