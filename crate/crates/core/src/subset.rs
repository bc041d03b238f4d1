use std::fmt;

use serde::{Deserialize, Serialize};

/// A set of conditional-covariate indices (0-based columns of Z), kept
/// sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Subset(Vec<usize>);

impl Subset {
    pub fn empty() -> Self {
        Subset(Vec::new())
    }

    pub fn full(m: usize) -> Self {
        Subset((0..m).collect())
    }

    pub fn new(mut idx: Vec<usize>) -> Self {
        idx.sort_unstable();
        idx.dedup();
        Subset(idx)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn is_full(&self, m: usize) -> bool {
        self.0.len() == m
    }

    /// Indices of `0..m` not in the subset.
    pub fn complement(&self, m: usize) -> Vec<usize> {
        (0..m).filter(|&j| !self.contains(j)).collect()
    }

    /// Membership indicator vector of length `m`.
    pub fn indicator(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for &j in &self.0 {
            out[j] = 1.0;
        }
        out
    }

    pub fn with(&self, j: usize) -> Subset {
        let mut v = self.0.clone();
        v.push(j);
        Subset::new(v)
    }

    /// Maps every index through `perm` (new index of old column `j` is
    /// `perm[j]`).
    pub fn relabel(&self, perm: &[usize]) -> Subset {
        Subset::new(self.0.iter().map(|&j| perm[j]).collect())
    }

    /// Stable 64-bit key used to derive per-subset random streams. Unlike
    /// `std::hash`, the value never changes between builds.
    pub fn stable_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &j in &self.0 {
            for b in (j as u64).to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, j) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", j + 1)?;
        }
        write!(f, "}}")
    }
}

/// Mixes a master seed with a stream key (splitmix64 finalizer).
pub fn derive_seed(master: u64, key: u64) -> u64 {
    let mut z = master ^ key.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_and_complements() {
        let s = Subset::new(vec![3, 1, 3]);
        assert_eq!(s.indices(), &[1, 3]);
        assert_eq!(s.complement(5), vec![0, 2, 4]);
        assert_eq!(s.indicator(4), vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(s.to_string(), "{2,4}");
    }

    #[test]
    fn stable_hash_distinguishes_subsets() {
        assert_ne!(Subset::empty().stable_hash(), Subset::new(vec![0]).stable_hash());
        assert_ne!(
            Subset::new(vec![0, 1]).stable_hash(),
            Subset::new(vec![1]).stable_hash()
        );
        assert_ne!(derive_seed(1, 2), derive_seed(2, 1));
    }
}
