//! From a rendered CT volume to an augmented pair of 32³ input patches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ts3dcnn::data::{augment_pair, extract_patch, normalize_hu, synthesize_study, SynthConfig, PATCH_SIZE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig::default();
    let s = synthesize_study(&cfg, 0)?;
    println!(
        "{} ({}): {:.1} mm -> {:.1} mm over {} days",
        s.study.study_id, s.study.label, s.study.t1.diameter_mm, s.study.t2.diameter_mm, s.study.interval_days
    );
    for hu in [-1200.0, -1000.0, -850.0, 40.0, 400.0, 900.0] {
        println!("HU {hu:>7} -> {:.3}", normalize_hu(hu));
    }

    let t1 = extract_patch(&s.t1, s.study.t1.center_voxel, PATCH_SIZE)?;
    let t2 = extract_patch(&s.t2, s.study.t2.center_voxel, PATCH_SIZE)?;
    println!("patch shape {:?}", t1.shape());
    let bright = |t: &ts3dcnn::tensor::Tensor<f32>| t.data().iter().filter(|&&v| v > 0.5).count();
    println!("voxels above 0.5: T1 {}, T2 {}", bright(&t1), bright(&t2));

    // Both time points get the same random cube symmetry.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a1, a2, g) = augment_pair(&t1, &t2, &mut rng)?;
    println!("symmetry {g:?}");
    println!("after augmentation: T1 {}, T2 {}", bright(&a1), bright(&a2));
    Ok(())
}
