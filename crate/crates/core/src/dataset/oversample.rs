use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DatasetSplit;
use crate::error::{bail, Result};

/// Fraction of training sequences whose target holds the highest class.
pub fn positive_fraction(split: &DatasetSplit) -> Option<f64> {
    if split.train.is_empty() {
        return None;
    }
    let pos = split.train.iter().filter(|s| s.is_positive()).count();
    Some(pos as f64 / split.train.len() as f64)
}

/// Duplicates positive training sequences round-robin until they make up
/// at least `eta` of the training set, using the fewest copies that get
/// there. The training set is then shuffled with `seed`; validation and
/// test are left alone.
///
/// When `eta` does not exceed the natural proportion (or there is nothing
/// to duplicate) the training multiset is unchanged.
pub fn oversample(split: &DatasetSplit, eta: f64, seed: u64) -> Result<DatasetSplit> {
    if !(0.0..=1.0).contains(&eta) {
        bail!(Contract, "eta must lie in [0, 1], got {eta}");
    }
    let positives: Vec<_> = split.train.iter().filter(|s| s.is_positive()).cloned().collect();
    let n_pos = positives.len();
    let n_neg = split.train.len() - n_pos;

    let mut train = split.train.clone();
    let reaches = |p: usize| p as f64 >= eta * (p + n_neg) as f64;
    if reaches(n_pos) {
        log::warn!(
            "eta={eta} does not exceed the natural positive proportion {:.4}; nothing duplicated",
            n_pos as f64 / split.train.len().max(1) as f64
        );
    } else if n_pos == 0 {
        log::warn!("no positive training sequences; oversampling skipped");
    } else {
        if eta >= 1.0 {
            bail!(Contract, "eta=1 cannot be reached while negative sequences remain");
        }
        let mut target = (eta * n_neg as f64 / (1.0 - eta)).ceil() as usize;
        while target > n_pos && reaches(target - 1) {
            target -= 1;
        }
        while !reaches(target) {
            target += 1;
        }
        train.extend((0..target - n_pos).map(|i| positives[i % n_pos].clone()));
    }
    train.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(DatasetSplit { train, validation: split.validation.clone(), test: split.test.clone(), eta: Some(eta) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SequenceSample;
    use crate::grid::ClassMap;
    use std::sync::Arc;

    fn sample(t: i64, positive: bool) -> Arc<SequenceSample> {
        let labels = if positive { vec![1, 1, 1] } else { vec![1, 0, 0] };
        Arc::new(SequenceSample {
            input: vec![t as f32; 12],
            channels: 12,
            height: 1,
            width: 1,
            target: ClassMap::new(3, 1, 1, labels, vec![true]).unwrap(),
            t_last: t,
            lead_steps: 6,
        })
    }

    fn split(n: usize, n_pos: usize) -> DatasetSplit {
        DatasetSplit {
            train: (0..n).map(|i| sample(i as i64, i < n_pos)).collect(),
            validation: vec![sample(1000, true), sample(1001, false)],
            test: vec![sample(2000, false)],
            eta: None,
        }
    }

    #[test]
    fn thirty_of_hundred_to_ninety_percent() {
        let s = split(100, 30);
        let out = oversample(&s, 0.9, 7).unwrap();
        let pos = out.train.iter().filter(|x| x.is_positive()).count();
        assert_eq!(pos, 630);
        assert_eq!(out.train.len(), 700);
        assert_eq!(positive_fraction(&out), Some(0.9));
        assert_eq!(out.validation, s.validation);
        assert_eq!(out.test, s.test);
    }

    #[test]
    fn natural_eta_is_a_no_op() {
        let s = split(100, 30);
        let out = oversample(&s, 0.3, 1).unwrap();
        let mut a: Vec<i64> = s.train.iter().map(|x| x.t_last).collect();
        let mut b: Vec<i64> = out.train.iter().map(|x| x.t_last).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        let low = oversample(&s, 0.1, 1).unwrap();
        assert_eq!(low.train.len(), 100);
    }

    #[test]
    fn duplicates_are_exact_copies_and_round_robin() {
        let s = split(10, 3);
        let out = oversample(&s, 0.8, 3).unwrap();
        // 7 negatives need 28 positives: each of the 3 sources appears 9 or 10 times.
        let mut per_source = std::collections::BTreeMap::new();
        for x in &out.train {
            let src = s.train.iter().find(|y| y.t_last == x.t_last).unwrap();
            assert_eq!(**src, **x);
            *per_source.entry(x.t_last).or_insert(0) += 1;
        }
        assert_eq!(per_source.len(), 10);
        let counts: Vec<_> = (0..3).map(|t| per_source[&t]).collect();
        assert_eq!(counts.iter().sum::<usize>(), 28);
        assert!(counts.iter().all(|c| *c == 9 || *c == 10));
    }

    #[test]
    fn shuffle_is_seeded() {
        let s = split(50, 10);
        let a = oversample(&s, 0.9, 11).unwrap();
        let b = oversample(&s, 0.9, 11).unwrap();
        let c = oversample(&s, 0.9, 12).unwrap();
        let order = |d: &DatasetSplit| d.train.iter().map(|x| x.t_last).collect::<Vec<_>>();
        assert_eq!(order(&a), order(&b));
        assert_ne!(order(&a), order(&c));
    }

    #[test]
    fn invalid_eta() {
        let s = split(10, 3);
        assert!(oversample(&s, 1.5, 0).is_err());
        assert!(oversample(&s, 1.0, 0).is_err());
        assert_eq!(oversample(&split(10, 0), 0.9, 0).unwrap().train.len(), 10);
    }
}
