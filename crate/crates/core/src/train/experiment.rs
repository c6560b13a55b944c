//! The modality × tap experiment matrix and the cheaper holdout comparison.

use serde::{Deserialize, Serialize};

use crate::backbone::TapPoint;
use crate::data::{stratified_kfold, stratified_split, Dataset};
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::train::crossval::with_workers;
use crate::train::{cross_validate, evaluate, train, CvOptions, CvReport, MeanSd, MetricsReport, ModelSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub modalities: Vec<Modality>,
    pub taps: Vec<TapPoint>,
    pub cv: CvOptions,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            modalities: Modality::ALL.to_vec(),
            taps: TapPoint::ALL.to_vec(),
            cv: CvOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub modality: Modality,
    pub tap: TapPoint,
    pub cv: CvReport,
}

/// The best tap of one modality, retrained on the whole training portion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub model: String,
    pub modality: Modality,
    pub tap: TapPoint,
    pub train_f1: MeanSd,
    pub val_f1: MeanSd,
    /// Epochs of the final run: the mean best epoch over the folds.
    pub final_epochs: usize,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub cells: Vec<CellResult>,
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentReport {
    pub fn table(&self) -> String {
        render_table(&self.rows)
    }
}

pub fn render_table(rows: &[ExperimentRow]) -> String {
    let header = ["Model", "Time", "Feats", "Train (F1)", "Val (F1)", "F1", "Prec", "Rec"];
    let body: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.model.split('-').next().unwrap_or_default().to_string(),
                r.modality.to_string().to_uppercase(),
                r.tap.to_string(),
                r.train_f1.to_string(),
                r.val_f1.to_string(),
                format!("{:.3}", r.test.f1),
                format!("{:.3}", r.test.precision),
                format!("{:.3}", r.test.recall),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(&header.map(String::from));
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for row in &body {
        out.push_str(&line(row));
    }
    out
}

/// The tap with the highest mean validation F1; ties go to the deeper tap.
pub fn select_tap(scores: &[(TapPoint, f64)]) -> Option<TapPoint> {
    scores
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(tap, _)| tap)
}

/// For every modality and tap: cross-validate on `train_part`. Per modality,
/// the selected tap is retrained on all of `train_part` for the mean best
/// epoch of its folds and scored once on `test`.
pub fn experiment_matrix(
    train_part: &Dataset,
    test: &Dataset,
    base: &ModelSpec,
    cfg: &TrainConfig,
    opts: &ExperimentOptions,
) -> Result<ExperimentReport> {
    if opts.modalities.is_empty() || opts.taps.is_empty() {
        return Err(Error::invalid("experiment_matrix", "need at least one modality and one tap"));
    }
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for &modality in &opts.modalities {
        let mut scores = Vec::new();
        for &tap in &opts.taps {
            let spec = base.with_modality(modality).with_tap(tap);
            let cv = cross_validate(train_part, &spec, cfg, &opts.cv)?;
            scores.push((tap, cv.val_f1.mean));
            cells.push(CellResult { modality, tap, cv });
        }
        let tap = select_tap(&scores).expect("at least one tap");
        let cv = &cells
            .iter()
            .find(|c| c.modality == modality && c.tap == tap)
            .expect("cell for the selected tap")
            .cv;
        let final_cfg = TrainConfig {
            epochs: cv.typical_epochs(),
            patience: 0,
            ..cfg.clone()
        };
        let spec = base.with_modality(modality).with_tap(tap);
        let mut model = spec.build(cfg.dropout)?;
        with_workers(opts.cv.workers, || train(&mut model, modality, train_part, None, &final_cfg))??;
        rows.push(ExperimentRow {
            model: modality.model_name().to_string(),
            modality,
            tap,
            train_f1: cv.train_f1,
            val_f1: cv.val_f1,
            final_epochs: final_cfg.epochs,
            test: evaluate(&model, modality, test, 0.5)?,
        });
    }
    Ok(ExperimentReport { cells, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutRow {
    pub model: String,
    pub modality: Modality,
    pub tap: TapPoint,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test: MetricsReport,
}

/// One early-stopped run per modality at a fixed tap: fold 0 of a stratified
/// `val_k`-fold plan over `train_part` is the validation set, the rest is
/// trained on, and the restored model is scored once on `test`.
pub fn holdout_comparison(
    train_part: &Dataset,
    test: &Dataset,
    base: &ModelSpec,
    cfg: &TrainConfig,
    modalities: &[Modality],
    val_k: usize,
    fold_seed: u64,
) -> Result<Vec<HoldoutRow>> {
    let plan = stratified_kfold(&train_part.ids(), &train_part.classes(), val_k, fold_seed)?;
    let (train_ids, val_ids) = plan.fold(0);
    let train_set = train_part.subset(&train_ids)?;
    let val_set = train_part.subset(&val_ids)?;
    modalities
        .iter()
        .map(|&modality| {
            let spec = base.with_modality(modality);
            let mut model = spec.build(cfg.dropout)?;
            let outcome = train(&mut model, modality, &train_set, Some(&val_set), cfg)?;
            Ok(HoldoutRow {
                model: modality.model_name().to_string(),
                modality,
                tap: spec.tap,
                best_epoch: outcome.best_epoch,
                epochs_run: outcome.epochs_run,
                test: evaluate(&model, modality, test, 0.5)?,
            })
        })
        .collect()
}

/// The longitudinal-benefit trial for one seed: a stratified 70/30 split of
/// `cohort`, then [`holdout_comparison`] of all three modalities with the
/// tiny backbone at `tap` and default training settings. The seed drives the
/// split, the validation fold, initialisation and training.
pub fn benefit_trial(cohort: &Dataset, tap: TapPoint, seed: u64) -> Result<Vec<HoldoutRow>> {
    let plan = stratified_split(&cohort.ids(), &cohort.classes(), 0.7, seed)?;
    let train_part = cohort.subset(&plan.train_ids)?;
    let test = cohort.subset(&plan.test_ids)?;
    let base = ModelSpec {
        init_seed: seed,
        ..ModelSpec::tiny(tap, Modality::T1T2)
    };
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    holdout_comparison(&train_part, &test, &base, &cfg, &Modality::ALL, 10, seed)
}

/// Test F1 of the two-stream row minus the better single-time row.
pub fn benefit_margin(rows: &[HoldoutRow]) -> Option<f64> {
    let f1 = |m: Modality| rows.iter().find(|r| r.modality == m).map(|r| r.test.f1);
    Some(f1(Modality::T1T2)? - f1(Modality::T1)?.max(f1(Modality::T2)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_selection_prefers_deeper_on_ties() {
        use TapPoint::*;
        assert_eq!(select_tap(&[(Block1, 0.7), (Block3, 0.8), (Block2, 0.8)]), Some(Block3));
        assert_eq!(select_tap(&[(AvgPool, 0.6), (Block4, 0.9)]), Some(Block4));
        assert_eq!(select_tap(&[]), None);
    }
}
