use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::WindowPair;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<WindowPair>,
    pub test: Vec<WindowPair>,
    pub class_count: usize,
    /// Share of each class over all pairs.
    pub class_proportions: Vec<f64>,
}

pub fn class_proportions(labels: impl IntoIterator<Item = usize>, classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    let mut total = 0usize;
    for l in labels {
        counts[l] += 1;
        total += 1;
    }
    counts
        .into_iter()
        .map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect()
}

/// Splits pairs per class so each class sends `round(fraction · count)`
/// pairs to the test side, at least one and never all of them. Classes
/// with no pairs are allowed; `class_count` is inferred from the largest
/// label when `None`.
pub fn stratified_split(
    pairs: Vec<WindowPair>,
    test_fraction: f64,
    seed: u64,
    class_count: Option<usize>,
) -> Result<DatasetSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no window pairs to split".into()));
    }
    let inferred = pairs.iter().map(|p| p.label).max().unwrap() + 1;
    let classes = class_count.unwrap_or(inferred);
    if inferred > classes {
        return Err(Error::LabelOutOfRange {
            label: inferred - 1,
            classes,
        });
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, p) in pairs.iter().enumerate() {
        by_class[p.label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; pairs.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        match members.len() {
            0 => continue,
            1 => return Err(Error::ClassTooSmall { class, count: 1 }),
            n => {
                let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
                members.shuffle(&mut rng);
                for &i in &members[..n_test] {
                    is_test[i] = true;
                }
            }
        }
    }
    let class_proportions = class_proportions(pairs.iter().map(|p| p.label), classes);
    let (test, train): (Vec<_>, Vec<_>) = pairs
        .into_iter()
        .zip(is_test)
        .partition(|(_, t)| *t);
    Ok(DatasetSplit {
        train: train.into_iter().map(|(p, _)| p).collect(),
        test: test.into_iter().map(|(p, _)| p).collect(),
        class_count: classes,
        class_proportions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn pairs(labels: &[usize]) -> Vec<WindowPair> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| WindowPair {
                channels: 1,
                t_narrow: 1,
                t_wide: 2,
                wide: vec![i as f32; 2],
                label,
                end_index: i + 2,
            })
            .collect()
    }

    #[test]
    fn three_of_ten_per_class() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let s = stratified_split(pairs(&labels), 0.3, 1, None).unwrap();
        for c in 0..3 {
            assert_eq!(s.test.iter().filter(|p| p.label == c).count(), 3);
        }
        assert_eq!(s.train.len(), 21);
        assert!((s.class_proportions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_split() {
        let labels: Vec<usize> = (0..50).map(|i| i % 4).collect();
        let a = stratified_split(pairs(&labels), 0.25, 9, None).unwrap();
        let b = stratified_split(pairs(&labels), 0.25, 9, None).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(pairs(&labels), 0.25, 10, None).unwrap();
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn singleton_class_is_named() {
        let labels = [0, 0, 0, 1, 2, 2];
        match stratified_split(pairs(&labels), 0.5, 0, None) {
            Err(Error::ClassTooSmall { class, count }) => assert_eq!((class, count), (1, 1)),
            other => panic!("{other:?}"),
        }
        assert!(stratified_split(pairs(&labels), 1.0, 0, None).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_pairs(
            counts in proptest::collection::vec(2usize..20, 2..6),
            fraction in 0.05f64..0.95, seed in any::<u64>(),
        ) {
            let labels: Vec<usize> = counts.iter().enumerate()
                .flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
            let s = stratified_split(pairs(&labels), fraction, seed, None).unwrap();
            let train: BTreeSet<_> = s.train.iter().map(|p| p.end_index).collect();
            let test: BTreeSet<_> = s.test.iter().map(|p| p.end_index).collect();
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(train.len() + test.len(), labels.len());
            for (c, &n) in counts.iter().enumerate() {
                let got = s.test.iter().filter(|p| p.label == c).count() as f64;
                prop_assert!((got - fraction * n as f64).abs() <= 1.0);
            }
        }
    }
}
