//! Confusion counts, precision/recall/F1 and ROC analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// Predictions are positive when `score >= threshold`.
    pub fn from_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        check_inputs("confusion", scores, labels)?;
        let mut c = Self::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn from_predictions(predicted: &[u8], labels: &[u8]) -> Result<Self> {
        let scores: Vec<f64> = predicted.iter().map(|&p| p as f64).collect();
        Self::from_scores(&scores, labels, 0.5)
    }

    /// `tp / (tp + fp)`, 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`, 0 when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_inputs(op: &'static str, scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(op, "labels", scores.len(), labels.len()));
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(Error::invalid(op, format!("label {} at position {i} is not 0 or 1", labels[i])));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite {
            context: format!("{op} score at position {i}"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// Stepwise ROC over the distinct scores in descending order, starting from
/// `(0, 0)` at a threshold just above the largest score, and the trapezoid
/// AUC. Tied scores move both rates at once, which counts each tied
/// positive/negative pair as one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<(Vec<RocPoint>, f64)> {
    check_inputs("roc_auc", scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("roc_auc", "both classes must be present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let top = scores[order[0]];
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: if top.is_finite() { top.next_up() } else { top },
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("origin point");
        let p = RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok((points, auc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Empty when only one class is present.
    pub roc_points: Vec<RocPoint>,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn from_scores(probabilities: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::invalid("evaluate", "empty dataset"));
        }
        let c = Confusion::from_scores(probabilities, labels, threshold)?;
        let both = c.tp + c.fn_ > 0 && c.fp + c.tn > 0;
        let (roc_points, auc) = if both {
            let (p, a) = roc_auc(probabilities, labels)?;
            (p, Some(a))
        } else {
            (Vec::new(), None)
        };
        Ok(Self {
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            roc_points,
            auc,
            threshold,
        })
    }

    pub fn confusion(&self) -> Confusion {
        Confusion {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }

    /// `threshold,fpr,tpr` rows.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.roc_points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        out
    }
}
