use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::autograd::Var;
use crate::dataset::{sample_mask, SegmentKey, Target};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, ConfusionCounts};
use crate::model::{load_model, FusedModel, Mode, SingleModalityModel};
use crate::nn::{bce_with_logits, mse_masked, Adam, Ctx, Fcn, Parameters};
use crate::rng::{stream, Stream};
use crate::tensor::{Scalar, Tensor};
use crate::training::config::{Phase, TrainConfig};
use crate::training::log::{EpochRecord, RunLog};

/// Outcome of a supervised phase.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub final_train_loss: f64,
}

fn check_phase(cfg: &TrainConfig, want: Phase) -> Result<()> {
    if cfg.phase != want {
        return Err(Error::Contract(format!(
            "{} routine called with a {} config",
            want.name(),
            cfg.phase.name()
        )));
    }
    cfg.validate()
}

fn finite_loss(v: f64, phase: Phase, epoch: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{} loss became {v} in epoch {epoch}", phase.name())))
    }
}

fn clip_grads<T: Scalar, M: Parameters<T> + ?Sized>(model: &mut M, max_norm: f64) {
    let mut sq = 0.0;
    model.visit("", &mut |_, p| {
        if let Some(g) = &p.grad {
            sq += g.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = T::from_f64(max_norm / norm);
        model.visit_mut("", &mut |_, p| {
            if let Some(g) = &mut p.grad {
                g.data_mut().iter_mut().for_each(|v| *v = *v * s);
            }
        });
    }
}

/// One epoch of shuffled mini-batches. `item` builds the loss of one example
/// on a fresh training context; gradients are averaged over each batch.
fn run_epoch<T, M>(
    model: &mut M,
    prefix: &str,
    adam: &mut Adam<T>,
    cfg: &TrainConfig,
    epoch: usize,
    n: usize,
    mut item: impl FnMut(&M, usize, &mut Ctx<T>) -> Result<Var>,
) -> Result<f64>
where
    T: Scalar,
    M: Parameters<T>,
{
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(cfg.seed, Stream::Shuffle, &cfg.stream_path(&[epoch as u64])));
    let lr = cfg.schedule.lr_at(epoch);
    let mut total = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        model.zero_grad();
        let scale = T::from_f64(1.0 / batch.len() as f64);
        for &idx in batch {
            let rng = stream(cfg.seed, Stream::Dropout, &cfg.stream_path(&[epoch as u64, idx as u64]));
            let mut ctx = Ctx::train(rng);
            let loss = item(model, idx, &mut ctx)?;
            let v = finite_loss(ctx.graph.value(loss).data()[0].as_f64(), cfg.phase, epoch)?;
            total += v;
            ctx.graph.backward(loss)?;
            model.accumulate_grads(prefix, &ctx.graph, scale);
        }
        if let Some(c) = cfg.grad_clip {
            clip_grads(model, c);
        }
        adam.step(model, prefix, lr)?;
    }
    if !model.all_finite() {
        return Err(Error::Numeric(format!("{} parameters became non-finite in epoch {epoch}", cfg.phase.name())));
    }
    Ok(total / n as f64)
}

/// Masked-value pre-training: each step masks fresh spans, zeroes them, and
/// regresses the original values at the masked positions.
pub fn pretrain_mvp<T: Scalar>(
    model: &mut SingleModalityModel<T>,
    data: &[Vec<T>],
    cfg: &TrainConfig,
    log: &mut RunLog,
) -> Result<()> {
    check_phase(cfg, Phase::Pretrain)?;
    if data.is_empty() {
        return Err(Error::Contract("pre-training corpus is empty".into()));
    }
    if model.mode != Mode::Pretrain {
        return Err(Error::Contract("pre-training needs a model in pretrain mode".into()));
    }
    model.transformer.dropout_rate = cfg.dropout;
    model.set_head_dropout(0.0);
    let (c, t) = (model.channels(), model.config.segment_len);
    let targets: Vec<Tensor<T>> = data
        .iter()
        .map(|x| Tensor::new([c, t], x.clone()).and_then(|m| m.transpose2()))
        .collect::<Result<_>>()?;
    let mut adam = Adam::new(cfg.adam);
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        let loss = run_epoch(model, "", &mut adam, cfg, epoch, data.len(), |m, idx, ctx| {
            let mut rng = stream(cfg.seed, Stream::Mask, &[epoch as u64, idx as u64]);
            let mask = sample_mask(t, cfg.mask.span_length, cfg.mask.mask_ratio, &mut rng)?;
            let mut masked = data[idx].clone();
            mask.apply(&mut masked);
            let x = m.input(ctx, &masked)?;
            let pred = m.forward_pretrain(ctx, "", x)?;
            mse_masked(&mut ctx.graph, pred, &targets[idx], &mask.mask)
        })?;
        log.push(EpochRecord {
            phase: Phase::Pretrain,
            epoch,
            lr: cfg.schedule.lr_at(epoch),
            train_loss: loss,
            val_loss: None,
            val_accuracy: None,
            wall_s: start.elapsed().as_secs_f64(),
        })?;
    }
    Ok(())
}

/// Eval-mode masked loss with masks drawn from `seed`, averaged over `data`.
pub fn mvp_eval_loss<T: Scalar>(
    model: &SingleModalityModel<T>,
    data: &[Vec<T>],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    let (c, t) = (model.channels(), model.config.segment_len);
    let mut total = 0.0;
    for (i, x) in data.iter().enumerate() {
        let mut rng = stream(seed, Stream::Mask, &[u64::MAX, i as u64]);
        let mask = sample_mask(t, cfg.mask.span_length, cfg.mask.mask_ratio, &mut rng)?;
        let mut masked = x.clone();
        mask.apply(&mut masked);
        let mut ctx = Ctx::eval();
        let xv = model.input(&mut ctx, &masked)?;
        let pred = model.forward_pretrain(&mut ctx, "", xv)?;
        let target = Tensor::new([c, t], x.clone())?.transpose2()?;
        let l = mse_masked(&mut ctx.graph, pred, &target, &mask.mask)?;
        total += ctx.graph.value(l).data()[0].as_f64();
    }
    Ok(total / data.len().max(1) as f64)
}

/// Eval-mode logits for each segment.
pub fn classify_logits<T: Scalar>(model: &SingleModalityModel<T>, data: &[Vec<T>]) -> Result<Vec<f64>> {
    data.iter().map(|x| model.predict(x).map(|(z, _)| z.as_f64())).collect()
}

fn bce_mean(logits: &[f64], labels: &[u8]) -> f64 {
    let n = logits.len().max(1) as f64;
    logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let y = f64::from(y);
            z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
        })
        .sum::<f64>()
        / n
}

fn val_metrics(logits: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    let c = ConfusionCounts::from_logits(labels, logits)?;
    Ok((bce_mean(logits, labels), accuracy(&c)?))
}

fn check_labels(labels: &[u8], n: usize, what: &str) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Contract(format!("{what}: {} labels for {n} segments", labels.len())));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Domain(format!("{what}: labels must be 0 or 1")));
    }
    Ok(())
}

/// Supervised fine-tuning of every parameter on the CLS head. The weights of
/// the epoch with the best validation accuracy are kept (earliest on ties);
/// without validation data the final weights are kept.
pub fn finetune_emotion<T: Scalar>(
    model: &mut SingleModalityModel<T>,
    train: (&[Vec<T>], &[u8]),
    val: (&[Vec<T>], &[u8]),
    cfg: &TrainConfig,
    log: &mut RunLog,
) -> Result<FitSummary> {
    check_phase(cfg, Phase::Finetune)?;
    if cfg.target.is_none() {
        return Err(Error::Contract("fine-tuning needs a target (arousal or valence)".into()));
    }
    if train.0.is_empty() {
        return Err(Error::Contract("fine-tuning set is empty".into()));
    }
    check_labels(train.1, train.0.len(), "training")?;
    check_labels(val.1, val.0.len(), "validation")?;
    if model.mode != Mode::Finetune {
        return Err(Error::Contract("fine-tuning needs a model in finetune mode".into()));
    }
    model.transformer.dropout_rate = model.config.transformer_dropout;
    model.set_head_dropout(cfg.dropout);
    let labels: Vec<T> = train.1.iter().map(|&y| T::from_f64(f64::from(y))).collect();
    let mut adam = Adam::new(cfg.adam);
    let start = Instant::now();
    let mut best: Option<(f64, usize, SingleModalityModel<T>)> = None;
    let mut last_loss = f64::NAN;
    for epoch in 1..=cfg.epochs {
        let loss = run_epoch(model, "", &mut adam, cfg, epoch, train.0.len(), |m, idx, ctx| {
            let x = m.input(ctx, &train.0[idx])?;
            let (logit, _) = m.forward_classify(ctx, "", x)?;
            bce_with_logits(&mut ctx.graph, logit, &labels[idx..idx + 1])
        })?;
        last_loss = loss;
        let (val_loss, val_acc) = if val.0.is_empty() {
            (None, None)
        } else {
            let logits = classify_logits(model, val.0)?;
            let (l, a) = val_metrics(&logits, val.1)?;
            (Some(l), Some(a))
        };
        if let Some(a) = val_acc {
            if best.as_ref().is_none_or(|(b, _, _)| a > *b) {
                best = Some((a, epoch, model.clone()));
            }
        }
        log.push(EpochRecord {
            phase: Phase::Finetune,
            epoch,
            lr: cfg.schedule.lr_at(epoch),
            train_loss: loss,
            val_loss,
            val_accuracy: val_acc,
            wall_s: start.elapsed().as_secs_f64(),
        })?;
    }
    Ok(match best {
        Some((acc, epoch, m)) => {
            *model = m;
            FitSummary {
                best_epoch: epoch,
                best_val_accuracy: Some(acc),
                final_train_loss: last_loss,
            }
        }
        None => FitSummary {
            best_epoch: cfg.epochs,
            best_val_accuracy: None,
            final_train_loss: last_loss,
        },
    })
}

/// One aligned ECG/EEG window with its label.
#[derive(Debug, Clone, Copy)]
pub struct FusionItem<'a, T> {
    pub key: &'a SegmentKey,
    pub ecg: &'a [T],
    pub eeg: &'a [T],
    pub label: u8,
}

/// Frozen penultimate features for each item.
pub fn fusion_features<T: Scalar>(model: &FusedModel<T>, items: &[FusionItem<'_, T>]) -> Result<Vec<Tensor<T>>> {
    items
        .iter()
        .map(|it| model.feature_vector((it.key, it.ecg), (it.key, it.eeg)))
        .collect()
}

fn head_logits<T: Scalar>(head: &Fcn<T>, feats: &[Tensor<T>]) -> Result<Vec<f64>> {
    feats
        .iter()
        .map(|f| {
            let mut ctx = Ctx::eval();
            let x = ctx.graph.constant(f.clone());
            let (z, _) = head.forward(&mut ctx, "fusion_head", x)?;
            Ok(ctx.graph.value(z).data()[0].as_f64())
        })
        .collect()
}

/// Eval-mode fused logits.
pub fn fused_logits<T: Scalar>(model: &FusedModel<T>, items: &[FusionItem<'_, T>]) -> Result<Vec<f64>> {
    head_logits(&model.fusion_head, &fusion_features(model, items)?)
}

/// Trains only the fusion head; both backbones stay bit-identical. Backbone
/// features are computed once in eval mode and reused across epochs.
pub fn train_fused<T: Scalar>(
    model: &mut FusedModel<T>,
    train: &[FusionItem<'_, T>],
    val: &[FusionItem<'_, T>],
    cfg: &TrainConfig,
    log: &mut RunLog,
) -> Result<(FitSummary, Adam<T>)> {
    check_phase(cfg, Phase::Fuse)?;
    if train.is_empty() {
        return Err(Error::Contract("fusion training set is empty".into()));
    }
    if let Some(t) = cfg.target {
        if t != model.target {
            return Err(Error::Contract(format!(
                "fusion config targets {t} but the backbones were fine-tuned for {}",
                model.target
            )));
        }
    }
    let before = model.backbone_hash();
    let train_feats = fusion_features(model, train)?;
    let val_feats = fusion_features(model, val)?;
    let train_labels: Vec<T> = train.iter().map(|it| T::from_f64(f64::from(it.label))).collect();
    let val_labels: Vec<u8> = val.iter().map(|it| it.label).collect();
    check_labels(&val_labels, val.len(), "validation")?;
    model.fusion_head.dropout_rate = cfg.dropout;
    let mut adam = Adam::new(cfg.adam);
    let start = Instant::now();
    let mut best: Option<(f64, usize, Fcn<T>)> = None;
    let mut last_loss = f64::NAN;
    for epoch in 1..=cfg.epochs {
        let loss = run_epoch(
            &mut model.fusion_head,
            "fusion_head",
            &mut adam,
            cfg,
            epoch,
            train.len(),
            |head, idx, ctx| {
                let x = ctx.graph.constant(train_feats[idx].clone());
                let (z, _) = head.forward(ctx, "fusion_head", x)?;
                bce_with_logits(&mut ctx.graph, z, &train_labels[idx..idx + 1])
            },
        )?;
        last_loss = loss;
        let (val_loss, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let logits = head_logits(&model.fusion_head, &val_feats)?;
            let (l, a) = val_metrics(&logits, &val_labels)?;
            (Some(l), Some(a))
        };
        if let Some(a) = val_acc {
            if best.as_ref().is_none_or(|(b, _, _)| a > *b) {
                best = Some((a, epoch, model.fusion_head.clone()));
            }
        }
        log.push(EpochRecord {
            phase: Phase::Fuse,
            epoch,
            lr: cfg.schedule.lr_at(epoch),
            train_loss: loss,
            val_loss,
            val_accuracy: val_acc,
            wall_s: start.elapsed().as_secs_f64(),
        })?;
    }
    let summary = match best {
        Some((acc, epoch, head)) => {
            model.fusion_head = head;
            FitSummary {
                best_epoch: epoch,
                best_val_accuracy: Some(acc),
                final_train_loss: last_loss,
            }
        }
        None => FitSummary {
            best_epoch: cfg.epochs,
            best_val_accuracy: None,
            final_train_loss: last_loss,
        },
    };
    if model.backbone_hash() != before {
        return Err(Error::Contract("fusion training modified a frozen backbone".into()));
    }
    Ok((summary, adam))
}

/// Loads two fine-tuned checkpoints for fusion; their targets must agree.
pub fn load_fusion_backbones<T: Scalar>(
    ecg: &Path,
    eeg: &Path,
) -> Result<(SingleModalityModel<T>, SingleModalityModel<T>, Target)> {
    let (e, te) = load_model::<T>(ecg, None)?;
    let (g, tg) = load_model::<T>(eeg, None)?;
    match (te, tg) {
        (Some(a), Some(b)) if a == b => Ok((e, g, a)),
        (a, b) => Err(Error::Contract(format!(
            "fusion backbones disagree on target: ECG {} vs EEG {}",
            a.map_or("none".into(), |t| t.to_string()),
            b.map_or("none".into(), |t| t.to_string())
        ))),
    }
}
