//! Stratified k-fold cross-validation of the T2-only baseline.

use ts3dcnn::backbone::TapPoint;
use ts3dcnn::data::{Dataset, SynthConfig, PATCH_SIZE};
use ts3dcnn::model::Modality;
use ts3dcnn::train::{cross_validate, CvOptions, ModelSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = SynthConfig {
        n_studies: 40,
        n_malignant: 24,
        ..SynthConfig::default()
    };
    let data = Dataset::synthesize(&synth, PATCH_SIZE)?;
    let spec = ModelSpec::tiny(TapPoint::AvgPool, Modality::T2);
    let cfg = TrainConfig {
        epochs: 12,
        patience: 4,
        ..TrainConfig::default()
    };
    let opts = CvOptions {
        k: 4,
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        ..CvOptions::default()
    };
    let report = cross_validate(&data, &spec, &cfg, &opts)?;
    for f in &report.folds {
        println!(
            "fold {}: train F1 {:.3}, val F1 {:.3}, best epoch {} of {}",
            f.fold, f.train_f1, f.val_f1, f.best_epoch, f.epochs_run
        );
    }
    println!("train F1 {}, val F1 {}", report.train_f1, report.val_f1);
    Ok(())
}
