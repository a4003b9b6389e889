use rand::seq::SliceRandom;

use super::DomainDataset;
use crate::error::{ensure, Result};

/// Train/dev/test proportions.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, dev: f64, test: f64) -> Self {
        SplitFractions { train, dev, test }
    }
}

impl Default for SplitFractions {
    /// Proportional analogue of 200 dev / 400 test out of roughly 2000.
    fn default() -> Self {
        SplitFractions::new(0.7, 0.1, 0.2)
    }
}

/// Shuffles with `seed` and partitions into disjoint train/dev/test sets.
pub fn split_dataset(
    dataset: &DomainDataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset, DomainDataset)> {
    let SplitFractions { train, dev, test } = fractions;
    ensure!(
        train > 0.0 && dev > 0.0 && test > 0.0,
        "split fractions must be positive: {fractions:?}"
    );
    ensure!(
        ((train + dev + test) - 1.0).abs() < 1e-9,
        "split fractions must sum to 1: {fractions:?}"
    );
    let n = dataset.len();
    let n_train = (n as f64 * train).round() as usize;
    let n_dev = ((n as f64 * dev).round() as usize).min(n - n_train.min(n));
    let n_test = n.saturating_sub(n_train + n_dev);
    ensure!(
        n_train > 0 && n_dev > 0 && n_test > 0,
        "split of {n} examples by {fractions:?} leaves an empty part ({n_train}/{n_dev}/{n_test})"
    );
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::seeded(seed));
    Ok((
        dataset.subset(&order[..n_train])?,
        dataset.subset(&order[n_train..n_train + n_dev])?,
        dataset.subset(&order[n_train + n_dev..])?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Content, Example};

    fn ds(n: usize) -> DomainDataset {
        DomainDataset::new(
            "d",
            (0..n)
                .map(|i| Example::new(Content::Tokens(vec![i as u32]), Some((i % 2) as u8)))
                .collect(),
            true,
        )
        .unwrap()
    }

    fn ids(d: &DomainDataset) -> Vec<u32> {
        d.examples()
            .iter()
            .map(|e| match &e.content {
                Content::Tokens(t) => t[0],
                _ => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn sizes_follow_fractions() {
        let (a, b, c) = split_dataset(&ds(100), SplitFractions::new(0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (80, 10, 10));
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let (a, b, c) = split_dataset(&ds(57), SplitFractions::default(), 9).unwrap();
        let mut all: Vec<u32> = [ids(&a), ids(&b), ids(&c)].concat();
        all.sort_unstable();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_under_seed() {
        let f = SplitFractions::default();
        let x = split_dataset(&ds(40), f, 5).unwrap();
        let y = split_dataset(&ds(40), f, 5).unwrap();
        assert_eq!(x, y);
        let z = split_dataset(&ds(40), f, 6).unwrap();
        assert_ne!(ids(&x.0), ids(&z.0));
    }

    #[test]
    fn empty_split_rejected() {
        assert!(split_dataset(&ds(10), SplitFractions::new(0.99, 0.005, 0.005), 1).is_err());
        assert!(split_dataset(&ds(10), SplitFractions::new(0.5, 0.5, 0.5), 1).is_err());
    }
}
