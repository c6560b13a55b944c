//! Stratified train/test splits and k-fold plans.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::keyed_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    /// `(train, validation)` ids for fold `i`.
    pub fn fold(&self, i: usize) -> (Vec<String>, Vec<String>) {
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        (train, self.folds[i].clone())
    }
}

/// Positions of each class, in input order.
fn by_class(op: &'static str, ids: &[String], labels: &[u8]) -> Result<[Vec<usize>; 2]> {
    if ids.len() != labels.len() {
        return Err(Error::shape(op, "labels", ids.len(), labels.len()));
    }
    let mut classes = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        match l {
            0 | 1 => classes[l as usize].push(i),
            other => return Err(Error::invalid(op, format!("label {other} at position {i} is not 0 or 1"))),
        }
    }
    Ok(classes)
}

fn gather(ids: &[String], mut positions: Vec<usize>) -> Vec<String> {
    positions.sort_unstable();
    positions.into_iter().map(|p| ids[p].clone()).collect()
}

/// Per class: seeded shuffle, first `round(fraction * n)` go to training.
/// Both id lists keep the input order.
pub fn stratified_split(ids: &[String], labels: &[u8], fraction: f64, seed: u64) -> Result<SplitPlan> {
    const OP: &str = "stratified_split";
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(OP, format!("fraction {fraction} must be in (0, 1)")));
    }
    let classes = by_class(OP, ids, labels)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, mut members) in classes.into_iter().enumerate() {
        if members.is_empty() {
            return Err(Error::invalid(OP, format!("class {c} is empty")));
        }
        members.shuffle(&mut keyed_rng(seed, "split", c as u64));
        let n_train = (fraction * members.len() as f64).round() as usize;
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    Ok(SplitPlan {
        train_ids: gather(ids, train),
        test_ids: gather(ids, test),
        seed,
        fraction,
    })
}

/// Seeded shuffle per class, then round-robin over the folds. The round-robin
/// continues across classes, so fold sizes also differ by at most one.
pub fn stratified_kfold(ids: &[String], labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    const OP: &str = "stratified_kfold";
    if k < 2 {
        return Err(Error::invalid(OP, format!("k = {k}; need at least 2 folds")));
    }
    let classes = by_class(OP, ids, labels)?;
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (c, mut members) in classes.into_iter().enumerate() {
        if members.len() < k {
            return Err(Error::invalid(
                OP,
                format!("class {c} has {} members, fewer than k = {k}", members.len()),
            ));
        }
        members.shuffle(&mut keyed_rng(seed, "kfold", c as u64));
        for m in members {
            folds[next].push(m);
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan {
        k,
        folds: folds.into_iter().map(|f| gather(ids, f)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort(n_pos: usize, n_neg: usize) -> (Vec<String>, Vec<u8>) {
        let labels: Vec<u8> = (0..n_pos).map(|_| 1).chain((0..n_neg).map(|_| 0)).collect();
        let ids = (0..labels.len()).map(|i| format!("S{i:04}")).collect();
        (ids, labels)
    }

    #[test]
    fn fraction_bounds() {
        let (ids, labels) = cohort(5, 5);
        assert!(stratified_split(&ids, &labels, 1.0, 0).is_err());
        assert!(stratified_split(&ids, &labels, 0.0, 0).is_err());
    }

    #[test]
    fn empty_class_is_rejected() {
        let (ids, labels) = cohort(5, 0);
        assert!(stratified_split(&ids, &labels, 0.5, 0).is_err());
    }

    #[test]
    fn kfold_needs_two_folds_and_enough_members() {
        let (ids, labels) = cohort(12, 12);
        assert!(stratified_kfold(&ids, &labels, 1, 0).is_err());
        assert!(stratified_kfold(&ids, &labels, 13, 0).is_err());
    }

    #[test]
    fn fold_views_partition() {
        let (ids, labels) = cohort(6, 4);
        let plan = stratified_kfold(&ids, &labels, 2, 1).unwrap();
        let (train, val) = plan.fold(0);
        assert_eq!(train.len() + val.len(), 10);
        assert!(val.iter().all(|v| !train.contains(v)));
    }
}
