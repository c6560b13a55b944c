//! Confusion counts, F1 and the ROC curve of a handful of scores.

use ts3dcnn::train::{roc_auc, Confusion, MetricsReport};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scores = [0.95, 0.85, 0.8, 0.7, 0.55, 0.5, 0.4, 0.3, 0.3, 0.1];
    let labels = [1, 1, 0, 1, 1, 0, 1, 0, 0, 0];

    for t in [0.3, 0.5, 0.8] {
        let c = Confusion::from_scores(&scores, &labels, t)?;
        println!(
            "threshold {t}: tp {} fp {} tn {} fn {}  precision {:.3} recall {:.3} F1 {:.3}",
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            c.precision(),
            c.recall(),
            c.f1()
        );
    }
    let (points, auc) = roc_auc(&scores, &labels)?;
    println!("AUC {auc:.3} over {} ROC points", points.len());
    print!("{}", MetricsReport::from_scores(&scores, &labels, 0.5)?.roc_csv());
    Ok(())
}
