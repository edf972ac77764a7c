//! Per-channel contiguous token n-grams.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::TokenGrid;

/// A token tuple. Ordered by length first, then lexicographically, which
/// fixes feature ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ngram(pub Vec<u32>);

impl Ord for Ngram {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Ngram {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Ngram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

impl FromStr for Ngram {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split('-')
            .map(|t| t.trim().parse().map_err(|_| Error::InvalidInput(format!("bad n-gram `{s}`"))))
            .collect::<Result<Vec<u32>>>()
            .map(Ngram)
    }
}

/// Validated set of n-gram orders, sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NgramOrders(Vec<usize>);

impl NgramOrders {
    pub fn new(orders: &[usize]) -> Result<Self> {
        let mut v = orders.to_vec();
        v.sort_unstable();
        v.dedup();
        if v.is_empty() {
            return Err(Error::Config("at least one n-gram order is required".into()));
        }
        if let Some(bad) = v.iter().find(|&&n| !(2..=4).contains(&n)) {
            return Err(Error::Config(format!("n-gram order {bad} outside 2..=4")));
        }
        Ok(Self(v))
    }

    pub fn orders(&self) -> &[usize] {
        &self.0
    }
}

impl Default for NgramOrders {
    fn default() -> Self {
        Self(vec![2, 3, 4])
    }
}

impl FromStr for NgramOrders {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad n-gram list `{s}`")))
            })
            .collect::<Result<Vec<usize>>>()?;
        Self::new(&v)
    }
}

impl fmt::Display for NgramOrders {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|n| n.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NgramOccurrence {
    pub channel: usize,
    pub start: usize,
    pub gram: Ngram,
}

/// Every contiguous n-gram of every channel row, channel-major, then by
/// order, then by start. Orders longer than the row are skipped.
pub fn extract_ngrams(grid: &TokenGrid, orders: &NgramOrders) -> Vec<NgramOccurrence> {
    let mut out = Vec::new();
    for c in 0..grid.channels() {
        let row = grid.row(c);
        for &n in orders.orders() {
            if row.len() < n {
                continue;
            }
            for s in 0..=row.len() - n {
                out.push(NgramOccurrence {
                    channel: c,
                    start: s,
                    gram: Ngram(row[s..s + n].to_vec()),
                });
            }
        }
    }
    out
}

/// Channel-pooled n-gram counts.
pub fn count_ngrams(grid: &TokenGrid, orders: &NgramOrders) -> BTreeMap<Ngram, u64> {
    let mut m = BTreeMap::new();
    for o in extract_ngrams(grid, orders) {
        *m.entry(o.gram).or_insert(0) += 1;
    }
    m
}
