//! Reuses a trained backbone: save it alone, load it into a fresh two-stream
//! model and train only the head.

use ts3dcnn::backbone::TapPoint;
use ts3dcnn::checkpoint::Checkpoint;
use ts3dcnn::data::{Dataset, SynthConfig};
use ts3dcnn::model::Modality;
use ts3dcnn::train::{evaluate, train, ModelSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = SynthConfig {
        n_studies: 32,
        n_malignant: 16,
        volume_extent: 48,
        ..SynthConfig::default()
    };
    let data = Dataset::synthesize(&synth, 16)?;
    let ids = data.ids();
    let (fit, val) = (data.subset(&ids[..24])?, data.subset(&ids[24..])?);
    let cfg = TrainConfig {
        epochs: 10,
        patience: 5,
        batch_size: 8,
        lr: 1e-3,
        ..TrainConfig::default()
    };

    // A single-time model provides the backbone.
    let donor_spec = ModelSpec {
        patch_extent: 16,
        ..ModelSpec::tiny(TapPoint::AvgPool, Modality::T2)
    };
    let mut donor = donor_spec.build(cfg.dropout)?;
    train(&mut donor, Modality::T2, &fit, Some(&val), &cfg)?;
    let bytes = Checkpoint::from_backbone(&donor.backbone, &donor_spec)?.to_bytes()?;
    println!("backbone checkpoint: {} bytes", bytes.len());

    let spec = donor_spec.with_modality(Modality::T1T2);
    let mut model = spec.build(cfg.dropout)?;
    let report = Checkpoint::from_bytes(&bytes, "backbone.nckp".as_ref())?.load_into(&mut model, false)?;
    println!("loaded {} tensors; freshly initialised: {:?}", report.loaded.len(), report.missing);

    let frozen = TrainConfig {
        freeze_backbone: true,
        ..cfg
    };
    train(&mut model, Modality::T1T2, &fit, Some(&val), &frozen)?;
    println!("two-stream validation F1 {:.3}", evaluate(&model, Modality::T1T2, &val, 0.5)?.f1);
    Ok(())
}
