use std::fmt;

use crate::error::{Error, Result};

/// A finite configuration: the set of occupied sites of `{0, .., n-1}`.
///
/// Bit `i` of the packed representation is the occupancy of site `i`, which
/// is also the state index used by the exact generator matrices.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    words: Vec<u64>,
    n_sites: usize,
    len: usize,
}

impl Configuration {
    pub fn empty(n_sites: usize) -> Self {
        Configuration {
            words: vec![0; n_sites.div_ceil(64)],
            n_sites,
            len: 0,
        }
    }

    pub fn full(n_sites: usize) -> Self {
        let mut c = Self::empty(n_sites);
        for x in 0..n_sites {
            c.set(x);
        }
        c
    }

    pub fn from_sites(n_sites: usize, sites: &[usize]) -> Result<Self> {
        let mut c = Self::empty(n_sites);
        for &x in sites {
            c.insert(x)?;
        }
        Ok(c)
    }

    /// Configuration whose occupancy is the low `n_sites` bits of `mask`.
    pub fn from_mask(n_sites: usize, mask: u64) -> Self {
        assert!(n_sites <= 64, "mask encoding supports at most 64 sites");
        let mut c = Self::empty(n_sites);
        if n_sites > 0 {
            let m = if n_sites == 64 {
                mask
            } else {
                mask & ((1u64 << n_sites) - 1)
            };
            c.words[0] = m;
            c.len = m.count_ones() as usize;
        }
        c
    }

    pub fn to_mask(&self) -> u64 {
        assert!(
            self.n_sites <= 64,
            "mask encoding supports at most 64 sites"
        );
        self.words.first().copied().unwrap_or(0)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, x: usize) -> bool {
        x < self.n_sites && self.words[x / 64] >> (x % 64) & 1 == 1
    }

    fn check_range(&self, x: usize) -> Result<()> {
        if x >= self.n_sites {
            return Err(Error::SiteOutOfRange {
                site: x,
                n_sites: self.n_sites,
            });
        }
        Ok(())
    }

    fn set(&mut self, x: usize) {
        self.words[x / 64] |= 1 << (x % 64);
        self.len += 1;
    }

    pub fn insert(&mut self, x: usize) -> Result<()> {
        self.check_range(x)?;
        if self.contains(x) {
            return Err(Error::SiteOccupied(x));
        }
        self.set(x);
        Ok(())
    }

    pub fn remove(&mut self, x: usize) -> Result<()> {
        self.check_range(x)?;
        if !self.contains(x) {
            return Err(Error::SiteEmpty(x));
        }
        self.words[x / 64] &= !(1 << (x % 64));
        self.len -= 1;
        Ok(())
    }

    /// `xξ`, the configuration with `x` added.
    pub fn with(&self, x: usize) -> Result<Self> {
        let mut c = self.clone();
        c.insert(x)?;
        Ok(c)
    }

    /// `ξ \ x`.
    pub fn without(&self, x: usize) -> Result<Self> {
        let mut c = self.clone();
        c.remove(x)?;
        Ok(c)
    }

    /// Occupied sites in ascending order.
    pub fn sites(&self) -> Vec<usize> {
        self.iter().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut m = word;
            std::iter::from_fn(move || {
                if m == 0 {
                    return None;
                }
                let i = m.trailing_zeros() as usize;
                m &= m - 1;
                Some(w * 64 + i)
            })
        })
    }

    /// Empty sites in ascending order.
    pub fn holes(&self) -> Vec<usize> {
        (0..self.n_sites).filter(|&x| !self.contains(x)).collect()
    }

    pub fn is_subset_of(&self, other: &Configuration) -> bool {
        self.n_sites == other.n_sites
            && self
                .words
                .iter()
                .zip(&other.words)
                .all(|(a, b)| a & !b == 0)
    }

    /// One character per site, `'1'` for occupied, site 0 first.
    pub fn to_bitstring(&self) -> String {
        (0..self.n_sites)
            .map(|x| if self.contains(x) { '1' } else { '0' })
            .collect()
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut c = Self::empty(s.len());
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '1' => c.set(i),
                '0' => {}
                other => return Err(Error::Parse(format!("invalid bit '{other}' in {s:?}"))),
            }
        }
        Ok(c)
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Configuration({})", self.to_bitstring())
    }
}
