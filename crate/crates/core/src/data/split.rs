//! Seeded train/test partition and mini-batch ordering.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{indexed_substream, substream, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Samples that did not fill a whole batch on either side.
    pub unused: Vec<usize>,
}

impl SplitIndices {
    pub fn total(&self) -> usize {
        self.train.len() + self.test.len() + self.unused.len()
    }
}

/// Shuffles `0..p` and cuts it into batch-aligned train and test blocks.
///
/// `train = ⌊⌊ratio·p⌋ / batch⌋·batch`, `test = ⌊⌊(1 − ratio)·p⌋ / batch⌋·batch`,
/// and whatever remains is reported as unused. Not stratified.
pub fn split_indices(p: usize, ratio: f64, batch: usize, seed: u64) -> Result<SplitIndices> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("train ratio must lie in (0, 1), got {ratio}")));
    }
    if batch == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if p < batch {
        return Err(Error::input(format!("{p} samples cannot fill one batch of {batch}")));
    }
    // Guard against 0.7·10 evaluating to 6.999…
    let raw_train = (ratio * p as f64 + 1e-9).floor() as usize;
    let raw_test = ((1.0 - ratio) * p as f64 + 1e-9).floor() as usize;
    let n_train = raw_train.min(p) / batch * batch;
    let n_test = raw_test.min(p - n_train) / batch * batch;

    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut substream(seed, Stream::Split));
    let unused = order.split_off(n_train + n_test);
    let test = order.split_off(n_train);
    Ok(SplitIndices {
        train: order,
        test,
        unused,
    })
}

/// Full batches of the training indices, reshuffled per epoch. A tail shorter
/// than `batch` is dropped.
pub fn train_batches(train: &[usize], batch: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order = train.to_vec();
    order.shuffle(&mut indexed_substream(seed, Stream::Shuffle, epoch));
    order.chunks_exact(batch).map(<[usize]>::to_vec).collect()
}

/// Test indices in fixed order; the last batch may be short.
pub fn eval_batches(indices: &[usize], batch: usize) -> Vec<Vec<usize>> {
    indices.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_partition(s: &SplitIndices, p: usize) {
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).chain(&s.unused).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..p).collect::<Vec<_>>());
    }

    #[test]
    fn full_corpus_counts() {
        let s = split_indices(9339, 0.7, 256, 42).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.unused.len()), (6400, 2560, 379));
        check_partition(&s, 9339);
    }

    #[test]
    fn even_split_has_no_remainder() {
        let s = split_indices(512, 0.5, 256, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.unused.len()), (256, 256, 0));
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(matches!(split_indices(100, 0.7, 256, 0), Err(Error::Input(_))));
        assert!(matches!(split_indices(1000, 1.0, 256, 0), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            split_indices(1000, 0.7, 32, 5).unwrap(),
            split_indices(1000, 0.7, 32, 5).unwrap()
        );
        assert_ne!(
            split_indices(1000, 0.7, 32, 5).unwrap(),
            split_indices(1000, 0.7, 32, 6).unwrap()
        );
    }

    #[test]
    fn partition_for_many_sizes() {
        for p in [256, 300, 777, 2048, 4095] {
            let s = split_indices(p, 0.7, 64, p as u64).unwrap();
            assert_eq!(s.train.len() % 64, 0);
            assert_eq!(s.test.len() % 64, 0);
            check_partition(&s, p);
        }
    }

    #[test]
    fn epoch_batches_reshuffle_but_cover_train() {
        let train: Vec<usize> = (100..164).collect();
        let e0 = train_batches(&train, 16, 3, 0);
        let e1 = train_batches(&train, 16, 3, 1);
        assert_eq!(e0.len(), 4);
        assert_ne!(e0, e1);
        assert_eq!(e0, train_batches(&train, 16, 3, 0));
        let mut flat: Vec<usize> = e1.concat();
        flat.sort_unstable();
        assert_eq!(flat, train);
    }

    #[test]
    fn eval_batches_keep_order_and_tail() {
        let b = eval_batches(&[5, 4, 3, 2, 1], 2);
        assert_eq!(b, vec![vec![5, 4], vec![3, 2], vec![1]]);
    }
}
