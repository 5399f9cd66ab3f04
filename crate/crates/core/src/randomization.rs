//! Treatment allocation: simple randomization and stratified permuted blocks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Arm;
use crate::error::{Error, Result};

/// Independent Bernoulli(`allocation`) assignment to the treatment arm.
pub fn simple_randomize(n: usize, allocation: f64, seed: u64) -> Result<Vec<Arm>> {
    simple_randomize_with(n, allocation, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn simple_randomize_with<R: Rng + ?Sized>(
    n: usize,
    allocation: f64,
    rng: &mut R,
) -> Result<Vec<Arm>> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 subjects, got {n}"
        )));
    }
    if !(0.0..=1.0).contains(&allocation) {
        return Err(Error::InvalidInput(format!(
            "allocation probability must lie in [0, 1], got {allocation}"
        )));
    }
    Ok((0..n)
        .map(|_| {
            if rng.random_bool(allocation) {
                Arm::Treatment
            } else {
                Arm::Control
            }
        })
        .collect())
}

/// Levels of the stratification factors for one subject.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StratumKey {
    pub levels: Vec<u8>,
}

impl StratumKey {
    pub fn new(levels: Vec<u8>) -> Self {
        StratumKey { levels }
    }
}

/// Nearest-rank empirical quantile: the `ceil(p n)`-th smallest value.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Empirical quartile bin (0..=3) of each value; a value equal to a
/// cutpoint falls in the lower bin.
pub fn quartile_bins(values: &[f64]) -> Vec<u8> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts = [0.25, 0.5, 0.75].map(|p| nearest_rank(&sorted, p));
    values
        .iter()
        .map(|&x| cuts.iter().filter(|&&c| c < x).count() as u8)
        .collect()
}

/// Strata formed by the sign of `split` (`x > 0`) crossed with the empirical
/// quartiles of `graded`. A 0/1 indicator splits on its two levels.
pub fn strata_from_covariates(split: &[f64], graded: &[f64]) -> Result<Vec<StratumKey>> {
    if split.len() != graded.len() {
        return Err(Error::InvalidInput(format!(
            "stratification inputs differ in length: {} vs {}",
            split.len(),
            graded.len()
        )));
    }
    Ok(split
        .iter()
        .zip(quartile_bins(graded))
        .map(|(&s, q)| StratumKey::new(vec![u8::from(s > 0.0), q]))
        .collect())
}

/// Stratified permuted-block randomization in arrival order.
pub fn spb_randomize(strata: &[StratumKey], block_size: usize, seed: u64) -> Result<Vec<Arm>> {
    spb_randomize_with(strata, block_size, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Each stratum draws from its own sequence of balanced blocks, each a
/// uniformly shuffled arrangement of `block_size / 2` subjects per arm.
pub fn spb_randomize_with<R: Rng + ?Sized>(
    strata: &[StratumKey],
    block_size: usize,
    rng: &mut R,
) -> Result<Vec<Arm>> {
    if block_size == 0 || !block_size.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "block size must be a positive even number, got {block_size}"
        )));
    }
    let mut open: BTreeMap<&StratumKey, Vec<Arm>> = BTreeMap::new();
    let mut out = Vec::with_capacity(strata.len());
    for key in strata {
        let block = open.entry(key).or_default();
        if block.is_empty() {
            block.extend((0..block_size).map(|k| {
                if k < block_size / 2 {
                    Arm::Treatment
                } else {
                    Arm::Control
                }
            }));
            block.shuffle(rng);
        }
        out.push(block.pop().expect("block refilled above"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn treated(v: &[Arm]) -> usize {
        v.iter().filter(|&&a| a == Arm::Treatment).count()
    }

    #[test]
    fn simple_is_deterministic() {
        assert_eq!(
            simple_randomize(50, 0.5, 3).unwrap(),
            simple_randomize(50, 0.5, 3).unwrap()
        );
        assert_ne!(
            simple_randomize(50, 0.5, 3).unwrap(),
            simple_randomize(50, 0.5, 4).unwrap()
        );
    }

    #[test]
    fn simple_fraction_concentrates() {
        let v = simple_randomize(100_000, 0.5, 11).unwrap();
        let f = treated(&v) as f64 / v.len() as f64;
        assert!((f - 0.5).abs() < 0.005, "{f}");
    }

    #[test]
    fn simple_boundaries() {
        assert!(simple_randomize(10, 1.0, 0)
            .unwrap()
            .iter()
            .all(|&a| a == Arm::Treatment));
        assert!(simple_randomize(10, 0.0, 0)
            .unwrap()
            .iter()
            .all(|&a| a == Arm::Control));
        assert!(simple_randomize(1, 0.5, 0).is_err());
        assert!(simple_randomize(10, 1.5, 0).is_err());
    }

    #[test]
    fn nearest_rank_quartiles() {
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_eq!(quartile_bins(&v), vec![0, 0, 1, 1, 2, 2, 3, 3]);
        let sorted = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(nearest_rank(&sorted, 0.25), 2.0);
        assert_eq!(nearest_rank(&sorted, 0.5), 3.0);
        assert_eq!(nearest_rank(&sorted, 0.75), 4.0);
    }

    #[test]
    fn eight_strata_from_indicator_and_quartiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nrm = Normal::new(0.0, 2.0).unwrap();
        let x1: Vec<f64> = (0..400)
            .map(|_| f64::from(rng.random_bool(0.5) as u8))
            .collect();
        let x2: Vec<f64> = (0..400).map(|_| nrm.sample(&mut rng)).collect();
        let keys = strata_from_covariates(&x1, &x2).unwrap();
        let distinct: std::collections::BTreeSet<_> = keys.iter().collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn spb_balance_within_strata() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let keys: Vec<StratumKey> = (0..503)
            .map(|_| StratumKey::new(vec![rng.random_range(0..2), rng.random_range(0..4)]))
            .collect();
        let arms = spb_randomize(&keys, 4, 9).unwrap();
        let mut diff: BTreeMap<&StratumKey, i64> = BTreeMap::new();
        for (k, a) in keys.iter().zip(&arms) {
            *diff.entry(k).or_default() += if *a == Arm::Treatment { 1 } else { -1 };
        }
        assert!(diff.values().all(|d| d.abs() <= 2));
        assert_eq!(arms, spb_randomize(&keys, 4, 9).unwrap());
    }

    #[test]
    fn spb_complete_block_is_balanced() {
        let keys = vec![StratumKey::new(vec![0]); 4];
        for seed in 0..20 {
            assert_eq!(treated(&spb_randomize(&keys, 4, seed).unwrap()), 2);
        }
    }

    #[test]
    fn spb_rejects_odd_blocks() {
        let keys = vec![StratumKey::new(vec![0]); 4];
        assert!(spb_randomize(&keys, 3, 0).is_err());
        assert!(spb_randomize(&keys, 0, 0).is_err());
    }

    #[test]
    fn spb_marginal_probability_is_half() {
        let keys: Vec<StratumKey> = (0..7)
            .map(|i| StratumKey::new(vec![(i % 2) as u8]))
            .collect();
        let draws = 10_000;
        let mut counts = [0usize; 7];
        for seed in 0..draws {
            for (c, a) in counts
                .iter_mut()
                .zip(spb_randomize(&keys, 4, seed).unwrap())
            {
                *c += usize::from(a == Arm::Treatment);
            }
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.5).abs() <= 0.01, "{f}");
        }
    }
}
