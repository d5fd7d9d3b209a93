//! Conditional masks. A set entry (`true`) marks a feature that is noised
//! and denoised; clear entries are conditioning features.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How training chooses the conditional mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Every feature is generated; only the target conditions.
    #[default]
    Full,
    /// Each row masks a random non-empty feature subset.
    Dynamic,
}

/// Row-major `n × k` masks for one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    pub rows: usize,
    pub cols: usize,
    pub cond: Vec<bool>,
    pub missing: Vec<bool>,
    pub eff: Vec<bool>,
}

impl MaskSet {
    pub fn new(rows: usize, cols: usize, cond: Vec<bool>, missing: Vec<bool>) -> Result<Self> {
        if cond.len() != rows * cols {
            return Err(Error::Shape {
                op: "mask",
                lhs: vec![cond.len()],
                rhs: vec![rows, cols],
            });
        }
        let eff = compose_eff(&cond, &missing)?;
        Ok(Self {
            rows,
            cols,
            cond,
            missing,
            eff,
        })
    }

    pub fn cond_row(&self, r: usize) -> &[bool] {
        &self.cond[r * self.cols..(r + 1) * self.cols]
    }

    pub fn missing_row(&self, r: usize) -> &[bool] {
        &self.missing[r * self.cols..(r + 1) * self.cols]
    }

    pub fn eff_row(&self, r: usize) -> &[bool] {
        &self.eff[r * self.cols..(r + 1) * self.cols]
    }

    /// Whether a cell contributes to the training loss: masked and observed.
    pub fn scored(&self, r: usize, f: usize) -> bool {
        let i = r * self.cols + f;
        self.cond[i] && !self.missing[i]
    }
}

pub fn mask_full(rows: usize, cols: usize) -> Vec<bool> {
    vec![true; rows * cols]
}

/// Fills `out` with a uniformly sized, uniformly chosen non-empty subset.
pub fn mask_dynamic_row<R: Rng + ?Sized>(out: &mut [bool], rng: &mut R) {
    let k = out.len();
    if k == 0 {
        return;
    }
    let count = rng.random_range(1..=k);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    out.fill(false);
    for &i in &order[..count] {
        out[i] = true;
    }
}

pub fn mask_dynamic<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<bool> {
    let mut m = vec![false; rows * cols];
    if cols > 0 {
        for row in m.chunks_mut(cols) {
            mask_dynamic_row(row, rng);
        }
    }
    m
}

/// Imputation mask: exactly the missing cells are generated.
pub fn mask_from_missing(missing: &[bool]) -> Vec<bool> {
    missing.to_vec()
}

/// Elementwise OR.
pub fn compose_eff(cond: &[bool], missing: &[bool]) -> Result<Vec<bool>> {
    if cond.len() != missing.len() {
        return Err(Error::Shape {
            op: "compose_eff",
            lhs: vec![cond.len()],
            rhs: vec![missing.len()],
        });
    }
    Ok(cond.iter().zip(missing).map(|(a, b)| *a || *b).collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::stats::chi_square_p_value;

    #[test]
    fn full_mask() {
        let m = mask_full(2, 3);
        assert_eq!(m, vec![true; 6]);
        let set = MaskSet::new(2, 3, m, vec![false; 6]).unwrap();
        assert!(set.eff.iter().all(|e| *e));
        assert!((0..2).all(|r| set.eff_row(r).iter().filter(|e| **e).count() == 3));
    }

    #[test]
    fn single_feature_is_always_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(mask_dynamic(100, 1, &mut rng).iter().all(|m| *m));
    }

    #[test]
    fn dynamic_count_and_inclusion_statistics() {
        let (n, k) = (100_000, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = mask_dynamic(n, k, &mut rng);
        let mut counts = vec![0u64; k];
        let mut inclusion = vec![0u64; k];
        for row in m.chunks(k) {
            let c = row.iter().filter(|x| **x).count();
            counts[c - 1] += 1;
            for (i, x) in row.iter().enumerate() {
                inclusion[i] += u64::from(*x);
            }
        }
        assert!(chi_square_p_value(&counts, &vec![n as f64 / k as f64; k]) > 0.01);
        // Σ_c (1/K)(c/K) = (K+1)/(2K)
        let p: f64 = (1..=k).map(|c| c as f64 / (k * k) as f64).sum();
        assert!((p - (k + 1) as f64 / (2 * k) as f64).abs() < 1e-15);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for inc in inclusion {
            assert!((inc as f64 / n as f64 - p).abs() < 3.0 * se);
        }
    }

    #[test]
    fn dynamic_is_seeded() {
        let a = mask_dynamic(50, 4, &mut ChaCha8Rng::seed_from_u64(9));
        let b = mask_dynamic(50, 4, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn missing_derived_masks() {
        assert_eq!(mask_from_missing(&[false, true, false]), vec![false, true, false]);
        assert_eq!(mask_from_missing(&[false; 3]), vec![false; 3]);
        assert_eq!(mask_from_missing(&[true; 3]), vec![true; 3]);
    }

    #[test]
    fn composition() {
        assert_eq!(
            compose_eff(&[true, false, false], &[false, false, true]).unwrap(),
            vec![true, false, true]
        );
        assert!(compose_eff(&[true], &[true, false]).is_err());
        let set = MaskSet::new(1, 3, vec![true, false, true], vec![true, true, false]).unwrap();
        assert!(!set.scored(0, 0) && !set.scored(0, 1) && set.scored(0, 2));
    }

    proptest! {
        #[test]
        fn eff_dominates_and_is_idempotent(bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..64)) {
            let (cond, missing): (Vec<bool>, Vec<bool>) = bits.into_iter().unzip();
            let eff = compose_eff(&cond, &missing).unwrap();
            for i in 0..eff.len() {
                prop_assert!(eff[i] >= cond[i] && eff[i] >= missing[i]);
            }
            prop_assert_eq!(compose_eff(&eff, &eff).unwrap(), eff.clone());
            prop_assert_eq!(compose_eff(&cond, &vec![false; cond.len()]).unwrap(), cond);
        }

        #[test]
        fn dynamic_rows_are_never_empty(k in 1usize..12, seed in any::<u64>()) {
            let m = mask_dynamic(20, k, &mut ChaCha8Rng::seed_from_u64(seed));
            for row in m.chunks(k) {
                prop_assert!(row.iter().any(|x| *x));
            }
        }
    }
}
