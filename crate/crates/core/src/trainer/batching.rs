use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::trainer::TrainConfig;

/// Class-balanced batches for one epoch, as dataset indices.
///
/// Each batch holds `batch_size / N` samples of every class. Classes are
/// walked through a per-epoch permutation, wrapping around for smaller
/// classes, until the largest class has been covered once.
pub fn make_batches<T: Scalar>(ds: &Dataset<T>, cfg: &TrainConfig, epoch: usize) -> Result<Vec<Vec<usize>>> {
    balanced_batches(&ds.indices_by_class(), cfg.batch_size, cfg.seed, epoch)
}

pub fn balanced_batches(by_class: &[Vec<usize>], batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    let n = by_class.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let per_class = batch_size / n;
    if per_class < 2 {
        return Err(Error::InvalidConfig(format!("batch_size {batch_size} gives fewer than 2 samples per class for {n} classes")));
    }
    if let Some((class, members)) = by_class.iter().enumerate().find(|(_, m)| m.len() < 2) {
        return Err(Error::ClassTooSmall { class, count: members.len(), needed: 2 });
    }
    let mut rng = rng::stream(seed, &[rng::STREAM_BATCHES, epoch as u64]);
    let perms: Vec<Vec<usize>> = by_class
        .iter()
        .map(|m| {
            let mut p = m.clone();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let largest = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let count = largest.div_ceil(per_class);
    let mut batches = Vec::with_capacity(count);
    for b in 0..count {
        let mut batch = Vec::with_capacity(per_class * n);
        for p in &perms {
            batch.extend((0..per_class).map(|j| p[(b * per_class + j) % p.len()]));
        }
        batch.shuffle(&mut rng);
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(sizes: &[usize]) -> Vec<Vec<usize>> {
        let mut next = 0;
        sizes
            .iter()
            .map(|&s| {
                let v: Vec<usize> = (next..next + s).collect();
                next += s;
                v
            })
            .collect()
    }

    fn class_of(by: &[Vec<usize>], i: usize) -> usize {
        by.iter().position(|m| m.contains(&i)).unwrap()
    }

    #[test]
    fn four_classes_eight_each() {
        let by = classes(&[40, 40, 40, 40]);
        let batches = balanced_batches(&by, 32, 1, 0).unwrap();
        assert_eq!(batches.len(), 5);
        for b in &batches {
            assert_eq!(b.len(), 32);
            for c in 0..4 {
                assert_eq!(b.iter().filter(|&&i| class_of(&by, i) == c).count(), 8);
            }
        }
    }

    #[test]
    fn remainder_dropped_for_three_classes() {
        let by = classes(&[40, 40, 40]);
        let batches = balanced_batches(&by, 32, 1, 0).unwrap();
        assert!(batches.iter().all(|b| b.len() == 30));
    }

    #[test]
    fn every_sample_covered_each_epoch() {
        let by = classes(&[13, 40, 7]);
        for epoch in 0..3 {
            let batches = balanced_batches(&by, 12, 5, epoch).unwrap();
            let mut seen: Vec<usize> = batches.concat();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), 60);
        }
    }

    #[test]
    fn determinism_per_seed_and_epoch() {
        let by = classes(&[20, 20]);
        assert_eq!(balanced_batches(&by, 8, 3, 1).unwrap(), balanced_batches(&by, 8, 3, 1).unwrap());
        assert_ne!(balanced_batches(&by, 8, 3, 1).unwrap(), balanced_batches(&by, 8, 3, 2).unwrap());
    }

    #[test]
    fn small_classes_rejected() {
        assert!(matches!(balanced_batches(&classes(&[5, 1]), 8, 0, 0), Err(Error::ClassTooSmall { class: 1, .. })));
        assert!(matches!(balanced_batches(&classes(&[5, 5]), 3, 0, 0), Err(Error::InvalidConfig(_))));
    }
}
