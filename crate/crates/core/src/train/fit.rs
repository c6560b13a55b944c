//! The training loop, batch planning and evaluation.

use std::collections::HashSet;
use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{bce_with_logits, Adam, AdamConfig};
use crate::model::{classify, Modality, Pass, TwoStreamModel};
use crate::params::Parameters;
use crate::rng::{keyed_rng, sub_index};
use crate::tensor::Tensor;
use crate::train::early_stopping::run_with_early_stopping;
use crate::train::metrics::{Confusion, MetricsReport};
use crate::train::TrainConfig;

/// Studies per forward pass when predicting.
const PREDICT_CHUNK: usize = 16;

/// Consecutive ranges of at most `batch_size`. A trailing batch of one is
/// merged into the one before it.
pub fn plan_batches(n: usize, batch_size: usize) -> Result<Vec<Range<usize>>> {
    if batch_size < 2 {
        return Err(Error::invalid("plan_batches", format!("batch size {batch_size} is below 2")));
    }
    if n < 2 {
        return Err(Error::invalid("plan_batches", format!("{n} samples; a batch needs at least 2")));
    }
    let mut out: Vec<Range<usize>> = (0..n).step_by(batch_size).map(|s| s..(s + batch_size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() < 2) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("two batches").end = last.end;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when training without a validation set.
    pub val_loss: Option<f64>,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_f1\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, opt(r.val_loss), opt(r.val_f1)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: History,
    /// The epoch whose weights the model holds after training.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub seed: u64,
}

/// Trains `model` in place. With a validation set, training stops early and
/// the model is left holding the weights of the epoch with the lowest
/// validation loss; without one it runs all `cfg.epochs` and keeps the last.
/// An overfit probe instead stops at the first epoch whose validation F1 is
/// 1.0 and keeps that epoch's weights.
pub fn train(
    model: &mut TwoStreamModel<f32>,
    modality: Modality,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_modality(model, modality)?;
    if train_set.is_empty() || val_set.is_some_and(Dataset::is_empty) {
        return Err(Error::invalid("train", "training and validation sets must be non-empty"));
    }
    if let (Some(val_set), false) = (val_set, cfg.overfit_probe) {
        let train_ids: HashSet<String> = train_set.ids().into_iter().collect();
        let shared: Vec<String> = val_set.ids().into_iter().filter(|id| train_ids.contains(id)).collect();
        if !shared.is_empty() {
            return Err(Error::invalid(
                "train",
                format!("{} studies are in both training and validation sets: {shared:?}", shared.len()),
            ));
        }
    }
    let seed = cfg.effective_seed();
    let batches = plan_batches(train_set.len(), cfg.batch_size)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    let mut history = History::default();

    let mut run_epoch = |model: &mut TwoStreamModel<f32>, epoch: usize| -> Result<Option<(f64, f64)>> {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut keyed_rng(seed, "epoch shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        for (b, range) in batches.iter().enumerate() {
            let stream = sub_index(epoch as u64, b as u64);
            let idx = &order[range.clone()];
            let batch = if cfg.overfit_probe {
                train_set.batch(idx, None::<&mut rand_chacha::ChaCha8Rng>)?
            } else {
                train_set.batch(idx, Some(&mut keyed_rng(seed, "augment", stream)))?
            };
            let patches = modality.patches(&batch.t1, &batch.t2);
            let pass = Pass::train(seed, stream).with_frozen_backbone(cfg.freeze_backbone);
            let (logits, cache) = model.forward_train(patches, pass)?;
            let (loss, dlogits) = bce_with_logits(&logits, &batch.labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            let grads = model.backward(patches, &cache, &dlogits)?;
            model.commit(&cache);
            adam.step_module(model, &grads)?;
            loss_sum += loss * idx.len() as f64;
        }
        let (val_loss, val_f1) = match val_set {
            Some(v) => {
                let (l, f) = validation_metrics(model, modality, v)?;
                (Some(l), Some(f))
            }
            None => (None, None),
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_f1,
        });
        Ok(val_loss.zip(val_f1))
    };

    let (epochs_run, best_epoch, best_val_loss, stopped_early) = if let (Some(_), true) = (val_set, cfg.overfit_probe) {
        // The probe succeeds at the first perfect fit and keeps those weights.
        let mut last = (0, f64::NAN);
        for epoch in 1..=cfg.epochs {
            let (loss, f1) = run_epoch(model, epoch)?.expect("validation metrics");
            last = (epoch, loss);
            if f1 == 1.0 {
                break;
            }
        }
        (last.0, last.0, Some(last.1), last.0 < cfg.epochs)
    } else if val_set.is_some() {
        let run = run_with_early_stopping(
            model,
            cfg.epochs,
            cfg.patience,
            |m, e| Ok::<_, Error>(run_epoch(m, e)?.expect("validation metrics").0),
            |m| m.named_tensors(),
        )?;
        if let Some(best) = &run.best {
            model.load_named(best, true)?;
        }
        (run.epochs_run, run.best_epoch, Some(run.best_loss), run.stopped_early)
    } else {
        for epoch in 1..=cfg.epochs {
            run_epoch(model, epoch)?;
        }
        (cfg.epochs, cfg.epochs, None, false)
    };
    Ok(TrainOutcome {
        epochs_run,
        history,
        best_epoch,
        best_val_loss,
        stopped_early,
        seed,
    })
}

fn check_modality(model: &TwoStreamModel<f32>, modality: Modality) -> Result<()> {
    if model.stream_mode() != modality.stream_mode() {
        return Err(Error::invalid(
            "train",
            format!("modality {modality} needs a {:?} model, got {:?}", modality.stream_mode(), model.stream_mode()),
        ));
    }
    Ok(())
}

fn validation_metrics(model: &TwoStreamModel<f32>, modality: Modality, set: &Dataset) -> Result<(f64, f64)> {
    let logits = predict_logits(model, modality, set)?;
    let labels: Vec<f64> = set.classes().iter().map(|&c| c as f64).collect();
    let (loss, _) = bce_with_logits(&Tensor::new(vec![logits.len()], logits.clone())?, &labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "validation loss".into(),
        });
    }
    let (_, predicted) = classify(&Tensor::new(vec![logits.len()], logits)?, 0.5)?;
    let f1 = Confusion::from_predictions(&predicted, &set.classes())?.f1();
    Ok((loss, f1))
}

/// Eval-mode logits, one per study, without augmentation.
pub fn predict_logits(model: &TwoStreamModel<f32>, modality: Modality, set: &Dataset) -> Result<Vec<f32>> {
    check_modality(model, modality)?;
    let all: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for idx in all.chunks(PREDICT_CHUNK) {
        let batch = set.batch(idx, None::<&mut rand_chacha::ChaCha8Rng>)?;
        let logits = model.logits(modality.patches(&batch.t1, &batch.t2), Pass::eval())?;
        out.extend_from_slice(logits.data());
    }
    Ok(out)
}

/// Malignancy probability per study.
pub fn predict(model: &TwoStreamModel<f32>, modality: Modality, set: &Dataset) -> Result<Vec<f64>> {
    let logits = predict_logits(model, modality, set)?;
    Ok(classify(&Tensor::new(vec![logits.len()], logits)?, 0.5)?.0)
}

pub fn evaluate(model: &TwoStreamModel<f32>, modality: Modality, set: &Dataset, threshold: f64) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    let probs = predict(model, modality, set)?;
    MetricsReport::from_scores(&probs, &set.classes(), threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_plans() {
        let lens = |n, b| plan_batches(n, b).unwrap().iter().map(|r| r.len()).collect::<Vec<_>>();
        assert_eq!(lens(64, 32), vec![32, 32]);
        assert_eq!(lens(65, 32), vec![32, 33]);
        assert_eq!(lens(66, 32), vec![32, 32, 2]);
        assert_eq!(lens(8, 32), vec![8]);
        assert!(plan_batches(1, 32).is_err());
    }
}
