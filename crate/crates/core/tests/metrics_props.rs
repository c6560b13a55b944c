use proptest::prelude::*;
use ts3dcnn::train::{roc_auc, Confusion, MetricsReport};

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..20).prop_map(|q| q as f64 / 19.0), n),
            prop::collection::vec(0u8..2, n),
        )
    })
}

proptest! {
    #[test]
    fn roc_is_a_monotone_staircase((scores, labels) in scored_labels()) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let (points, auc) = roc_auc(&scores, &labels).unwrap();
        prop_assert_eq!((points[0].fpr, points[0].tpr), (0.0, 0.0));
        let last = points.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in points.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            prop_assert!(w[1].threshold < w[0].threshold);
        }
        prop_assert!((0.0..=1.0).contains(&auc));
    }

    #[test]
    fn flipping_scores_mirrors_auc((scores, labels) in scored_labels()) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let (_, auc) = roc_auc(&scores, &labels).unwrap();
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        let (_, mirrored) = roc_auc(&flipped, &labels).unwrap();
        prop_assert!((auc + mirrored - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_counts_partition((scores, labels) in scored_labels(), t in 0.0f64..1.0) {
        let c = Confusion::from_scores(&scores, &labels, t).unwrap();
        prop_assert_eq!(c.tp + c.fp + c.tn + c.fn_, scores.len());
        let f1 = c.f1();
        prop_assert!((0.0..=1.0).contains(&f1));
        prop_assert!(f1 <= c.precision().max(c.recall()) + 1e-15);
    }

    #[test]
    fn report_agrees_with_confusion((scores, labels) in scored_labels(), t in 0.0f64..1.0) {
        let r = MetricsReport::from_scores(&scores, &labels, t).unwrap();
        let c = Confusion::from_scores(&scores, &labels, t).unwrap();
        prop_assert_eq!(r.confusion(), c);
        prop_assert_eq!(r.auc.is_some(), labels.contains(&0) && labels.contains(&1));
    }
}

#[test]
fn empty_predicted_positive_set_gives_zero_precision() {
    let c = Confusion::from_scores(&[0.1, 0.2, 0.3], &[1, 0, 1], 0.9).unwrap();
    assert_eq!((c.tp, c.fp), (0, 0));
    assert_eq!(c.precision(), 0.0);
    assert_eq!(c.f1(), 0.0);
}

#[test]
fn empty_and_mismatched_inputs_are_errors() {
    assert!(MetricsReport::from_scores(&[], &[], 0.5).is_err());
    assert!(Confusion::from_scores(&[0.1], &[1, 0], 0.5).is_err());
    assert!(Confusion::from_scores(&[0.1], &[2], 0.5).is_err());
    assert!(roc_auc(&[f64::NAN, 0.2], &[1, 0]).is_err());
}
