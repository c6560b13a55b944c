//! Trains a tiny two-stream model on an in-memory synthetic cohort, scores it
//! on held-out studies and saves a checkpoint.
//!
//! ```text
//! cargo run --release --example train_two_stream -- model.nckp
//! ```

use std::path::PathBuf;

use ts3dcnn::backbone::TapPoint;
use ts3dcnn::checkpoint::Checkpoint;
use ts3dcnn::data::{stratified_kfold, stratified_split, Dataset, SynthConfig, PATCH_SIZE};
use ts3dcnn::model::Modality;
use ts3dcnn::train::{evaluate, train, ModelSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "model.nckp".into()).into();
    let synth = SynthConfig {
        n_studies: 60,
        n_malignant: 36,
        seed: 3,
        ..SynthConfig::default()
    };
    let cohort = Dataset::synthesize(&synth, PATCH_SIZE)?;
    let split = stratified_split(&cohort.ids(), &cohort.classes(), 0.7, 0)?;
    let train_part = cohort.subset(&split.train_ids)?;
    let test = cohort.subset(&split.test_ids)?;
    let folds = stratified_kfold(&train_part.ids(), &train_part.classes(), 5, 0)?;
    let (fit_ids, val_ids) = folds.fold(0);
    let (fit, val) = (train_part.subset(&fit_ids)?, train_part.subset(&val_ids)?);

    let spec = ModelSpec::tiny(TapPoint::AvgPool, Modality::T1T2);
    let cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let mut model = spec.build(cfg.dropout)?;
    let outcome = train(&mut model, Modality::T1T2, &fit, Some(&val), &cfg)?;
    print!("{}", outcome.history.to_csv());
    println!("kept epoch {} of {}", outcome.best_epoch, outcome.epochs_run);

    let report = evaluate(&model, Modality::T1T2, &test, 0.5)?;
    println!("test F1 {:.3}, AUC {:?}", report.f1, report.auc);
    Checkpoint::from_model(&model, &spec, None)?.write(&out)?;
    println!("saved {}", out.display());
    Ok(())
}
