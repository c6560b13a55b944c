//! Writes a small synthetic paired-scan cohort to disk and summarises it.
//!
//! ```text
//! cargo run --release --example synthetic_cohort -- /tmp/cohort
//! ```

use std::path::PathBuf;

use ts3dcnn::data::{synthesize_study, write_cohort, Label, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "cohort".into()).into();
    let cfg = SynthConfig {
        n_studies: 20,
        n_malignant: 12,
        seed: 7,
        ..SynthConfig::default()
    };
    let index = write_cohort(&cfg, &out)?;
    println!("{} manifests under {}", index.manifests.len(), out.display());

    // The same studies can be rendered in memory, one at a time.
    let mut growth = [Vec::new(), Vec::new()];
    for i in 0..cfg.n_studies {
        let s = synthesize_study(&cfg, i)?;
        let g = s.study.t2.diameter_mm - s.study.t1.diameter_mm;
        growth[s.study.label.class() as usize].push(g);
    }
    for (class, label) in [(1, Label::Malignant), (0, Label::Benign)] {
        let g = &growth[class];
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        println!("{label:>9}: {:>2} studies, mean diameter growth {mean:.2} mm", g.len());
    }
    Ok(())
}
