//! The modality × tap experiment on a reduced cohort, printed as a table.

use ts3dcnn::backbone::TapPoint;
use ts3dcnn::data::{stratified_split, Dataset, SynthConfig, PATCH_SIZE};
use ts3dcnn::model::Modality;
use ts3dcnn::train::{experiment_matrix, CvOptions, ExperimentOptions, ModelSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = SynthConfig {
        n_studies: 48,
        n_malignant: 30,
        ..SynthConfig::default()
    };
    let cohort = Dataset::synthesize(&synth, PATCH_SIZE)?;
    let split = stratified_split(&cohort.ids(), &cohort.classes(), 0.7, 0)?;
    let train_part = cohort.subset(&split.train_ids)?;
    let test = cohort.subset(&split.test_ids)?;

    let cfg = TrainConfig {
        epochs: 8,
        patience: 3,
        ..TrainConfig::default()
    };
    let opts = ExperimentOptions {
        modalities: Modality::ALL.to_vec(),
        taps: vec![TapPoint::Block4, TapPoint::AvgPool],
        cv: CvOptions {
            k: 3,
            ..CvOptions::default()
        },
    };
    let base = ModelSpec::tiny(TapPoint::AvgPool, Modality::T1T2);
    let report = experiment_matrix(&train_part, &test, &base, &cfg, &opts)?;
    println!("{}", report.table());
    Ok(())
}
