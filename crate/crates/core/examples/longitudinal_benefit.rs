//! Two-stream versus single-time models on the default synthetic cohort.
//!
//! ```text
//! cargo run --release --example longitudinal_benefit -- [tap] [seed...]
//! ```

use std::time::Instant;

use ts3dcnn::backbone::TapPoint;
use ts3dcnn::data::{Dataset, SynthConfig, PATCH_SIZE};
use ts3dcnn::train::{benefit_margin, benefit_trial};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let tap: TapPoint = args.next().as_deref().unwrap_or("avgpool").parse()?;
    let mut seeds: Vec<u64> = args.map(|a| a.parse()).collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        seeds = vec![1, 2, 3];
    }

    let cohort = Dataset::synthesize(&SynthConfig::default(), PATCH_SIZE)?;
    println!("cohort: {} studies, tap {tap}", cohort.len());
    for seed in seeds {
        let start = Instant::now();
        let rows = benefit_trial(&cohort, tap, seed)?;
        for r in &rows {
            println!(
                "seed {seed}  {:<10} best epoch {:>3} of {:>3}  test F1 {:.3}  AUC {}",
                r.model,
                r.best_epoch,
                r.epochs_run,
                r.test.f1,
                r.test.auc.map_or("n/a".into(), |a| format!("{a:.3}"))
            );
        }
        let margin = benefit_margin(&rows).unwrap_or(f64::NAN);
        println!("seed {seed}  margin {margin:+.3}  ({:.0?})", start.elapsed());
    }
    Ok(())
}
