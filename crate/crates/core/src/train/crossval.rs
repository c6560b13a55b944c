//! Stratified k-fold cross-validation.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_kfold, Dataset};
use crate::error::{Error, Result};
use crate::train::{evaluate, train, ModelSpec, TrainConfig};

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("mean_sd", "no values"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self { mean, sd: var.sqrt() })
    }
}

/// `0.800 ± 0.10`.
impl fmt::Display for MeanSd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.2}", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_f1: f64,
    pub val_f1: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub train_f1: MeanSd,
    pub val_f1: MeanSd,
}

impl CvReport {
    pub fn from_folds(mut folds: Vec<FoldResult>) -> Result<Self> {
        folds.sort_by_key(|f| f.fold);
        let train: Vec<f64> = folds.iter().map(|f| f.train_f1).collect();
        let val: Vec<f64> = folds.iter().map(|f| f.val_f1).collect();
        Ok(Self {
            train_f1: MeanSd::of(&train)?,
            val_f1: MeanSd::of(&val)?,
            folds,
        })
    }

    /// Mean best epoch over the folds, rounded, at least 1.
    pub fn typical_epochs(&self) -> usize {
        let sum: usize = self.folds.iter().map(|f| f.best_epoch).sum();
        ((sum as f64 / self.folds.len() as f64).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    pub fold_seed: u64,
    /// Folds trained at once. Results do not depend on it.
    pub workers: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            k: 10,
            fold_seed: 0,
            workers: 1,
        }
    }
}

/// Runs `f` on a pool of `workers` threads (at least one).
pub(crate) fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid("worker pool", e.to_string()))?;
    Ok(pool.install(f))
}

/// Trains one fresh model per fold on the other folds and scores it on its
/// training folds and on the held-out fold.
pub fn cross_validate(data: &Dataset, spec: &ModelSpec, cfg: &TrainConfig, opts: &CvOptions) -> Result<CvReport> {
    let plan = stratified_kfold(&data.ids(), &data.classes(), opts.k, opts.fold_seed)?;
    let run_fold = |i: usize| -> Result<FoldResult> {
        let (train_ids, val_ids) = plan.fold(i);
        let train_set = data.subset(&train_ids)?;
        let val_set = data.subset(&val_ids)?;
        let mut model = spec.build(cfg.dropout)?;
        let outcome = train(&mut model, spec.modality, &train_set, Some(&val_set), cfg)?;
        Ok(FoldResult {
            fold: i,
            train_f1: evaluate(&model, spec.modality, &train_set, 0.5)?.f1,
            val_f1: evaluate(&model, spec.modality, &val_set, 0.5)?.f1,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.epochs_run,
        })
    };
    let folds = with_workers(opts.workers, || (0..plan.k).into_par_iter().map(run_fold).collect::<Result<Vec<_>>>())??;
    CvReport::from_folds(folds)
}
