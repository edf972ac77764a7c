//! Naive Bayes over pooled n-gram features.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::analysis::ngram::{count_ngrams, Ngram, NgramOrders};
use crate::error::{Error, Result};
use crate::model::TokenGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NbMode {
    /// Multinomial likelihood over n-gram counts.
    Counts,
    /// Bernoulli likelihood over per-grid feature presence.
    Presence,
}

impl fmt::Display for NbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NbMode::Counts => "counts",
            NbMode::Presence => "presence",
        })
    }
}

impl FromStr for NbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "counts" => Ok(NbMode::Counts),
            "presence" => Ok(NbMode::Presence),
            _ => Err(Error::Config(format!("unknown naive Bayes mode `{s}` (counts or presence)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NaiveBayes {
    pub mode: NbMode,
    pub alpha: f64,
    pub orders: NgramOrders,
    pub priors: Vec<f64>,
    /// Observed features; a feature's id is its index.
    pub vocab: Vec<Ngram>,
    index: BTreeMap<Ngram, usize>,
    /// `counts[class][feature]`: occurrences (counts mode) or grids containing
    /// the feature (presence mode).
    pub counts: Vec<Vec<u64>>,
    /// Per class: total occurrences (counts mode) or grid count (presence mode).
    pub totals: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NbScore {
    /// Unnormalized log joint `log P(c) + log P(x | c)` per class.
    pub log_joint: Vec<f64>,
    pub predicted: usize,
}

impl NbScore {
    /// Normalized posterior probabilities.
    pub fn posteriors(&self) -> Vec<f64> {
        let m = self.log_joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.log_joint.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    /// `log P(1|x) - log P(0|x)` for binary models.
    pub fn log_odds(&self) -> f64 {
        self.log_joint[1] - self.log_joint[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedFeature {
    pub id: usize,
    pub gram: Ngram,
    pub llr: f64,
    pub target_count: u64,
}

impl NaiveBayes {
    /// Fits class-conditional feature distributions. Labels must cover
    /// every class id from 0 to the largest label, with at least two classes.
    pub fn fit(grids: &[TokenGrid], labels: &[usize], orders: &NgramOrders, alpha: f64, mode: NbMode) -> Result<Self> {
        if grids.is_empty() {
            return Err(Error::InvalidInput("naive Bayes needs at least one training grid".into()));
        }
        if grids.len() != labels.len() {
            return Err(Error::InvalidInput(format!("{} grids but {} labels", grids.len(), labels.len())));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("smoothing alpha {alpha} must be positive and finite")));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut per_class = vec![0u64; classes];
        for &l in labels {
            per_class[l] += 1;
        }
        if classes < 2 {
            return Err(Error::InvalidInput("naive Bayes needs at least two classes".into()));
        }
        if let Some(c) = per_class.iter().position(|&n| n == 0) {
            return Err(Error::InvalidInput(format!("class {c} has no training grids")));
        }
        let grid_counts: Vec<BTreeMap<Ngram, u64>> = grids.iter().map(|g| count_ngrams(g, orders)).collect();
        let mut index = BTreeMap::new();
        for gc in &grid_counts {
            for k in gc.keys() {
                index.entry(k.clone()).or_insert(0usize);
            }
        }
        for (i, v) in index.values_mut().enumerate() {
            *v = i;
        }
        let vocab: Vec<Ngram> = index.keys().cloned().collect();
        let mut counts = vec![vec![0u64; vocab.len()]; classes];
        let mut totals = vec![0u64; classes];
        for (gc, &l) in grid_counts.iter().zip(labels) {
            for (gram, &n) in gc {
                let add = match mode {
                    NbMode::Counts => n,
                    NbMode::Presence => 1,
                };
                counts[l][index[gram]] += add;
                if mode == NbMode::Counts {
                    totals[l] += n;
                }
            }
            if mode == NbMode::Presence {
                totals[l] += 1;
            }
        }
        let n = labels.len() as f64;
        Ok(Self {
            mode,
            alpha,
            orders: orders.clone(),
            priors: per_class.iter().map(|&k| k as f64 / n).collect(),
            vocab,
            index,
            counts,
            totals,
        })
    }

    pub fn classes(&self) -> usize {
        self.priors.len()
    }

    pub fn feature_id(&self, gram: &Ngram) -> Option<usize> {
        self.index.get(gram).copied()
    }

    fn v(&self) -> f64 {
        self.vocab.len() as f64
    }

    /// `P(f | c)` under the fitted smoothing. In presence mode this is the
    /// probability that `f` occurs in a grid of class `c`.
    pub fn prob(&self, class: usize, feature: Option<usize>) -> f64 {
        let count = feature.map_or(0, |f| self.counts[class][f]) as f64;
        let total = self.totals[class] as f64;
        match self.mode {
            NbMode::Counts => (count + self.alpha) / (total + self.alpha * self.v()),
            NbMode::Presence => (count + self.alpha) / (total + 2.0 * self.alpha),
        }
    }

    pub fn score(&self, grid: &TokenGrid) -> NbScore {
        let counts = count_ngrams(grid, &self.orders);
        let log_joint: Vec<f64> = (0..self.classes())
            .map(|c| {
                let mut s = self.priors[c].ln();
                match self.mode {
                    NbMode::Counts => {
                        for (gram, &n) in &counts {
                            s += n as f64 * self.prob(c, self.feature_id(gram)).ln();
                        }
                    }
                    NbMode::Presence => {
                        for f in 0..self.vocab.len() {
                            let p = self.prob(c, Some(f));
                            s += if counts.contains_key(&self.vocab[f]) { p.ln() } else { (1.0 - p).ln() };
                        }
                    }
                }
                s
            })
            .collect();
        let predicted = (0..log_joint.len()).fold(0, |b, c| if log_joint[c] > log_joint[b] { c } else { b });
        NbScore { log_joint, predicted }
    }

    /// Features ranked by `log P(f|target) - log P(f|rest)`, the rest being
    /// all other classes pooled. Ties go to the higher target count, then the
    /// lower feature id.
    pub fn top_features(&self, target: usize, k: usize) -> Result<Vec<RankedFeature>> {
        if target >= self.classes() {
            return Err(Error::InvalidInput(format!("target class {target} outside {} classes", self.classes())));
        }
        let rest_total: u64 = (0..self.classes()).filter(|&c| c != target).map(|c| self.totals[c]).sum();
        let denom = match self.mode {
            NbMode::Counts => rest_total as f64 + self.alpha * self.v(),
            NbMode::Presence => rest_total as f64 + 2.0 * self.alpha,
        };
        let mut ranked: Vec<RankedFeature> = (0..self.vocab.len())
            .map(|f| {
                let rest: u64 = (0..self.classes()).filter(|&c| c != target).map(|c| self.counts[c][f]).sum();
                let p_rest = (rest as f64 + self.alpha) / denom;
                RankedFeature {
                    id: f,
                    gram: self.vocab[f].clone(),
                    llr: self.prob(target, Some(f)).ln() - p_rest.ln(),
                    target_count: self.counts[target][f],
                }
            })
            .collect();
        ranked.sort_by(|a, b| {
            b.llr
                .total_cmp(&a.llr)
                .then(b.target_count.cmp(&a.target_count))
                .then(a.id.cmp(&b.id))
        });
        ranked.truncate(k);
        Ok(ranked)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            NbMode::Counts => "counts",
            NbMode::Presence => "presence",
        };
        let _ = writeln!(s, "mode: {mode}");
        let _ = writeln!(s, "alpha: {}", self.alpha);
        let _ = writeln!(s, "n-gram orders: {}", self.orders);
        let _ = writeln!(s, "vocabulary: {}", self.vocab.len());
        for (c, p) in self.priors.iter().enumerate() {
            let _ = writeln!(s, "class {c}: prior {p:.4}, total {}", self.totals[c]);
        }
        s
    }
}

pub const TOP_FEATURES_CSV_HEADER: &str = "rank,feature_id,feature,llr,target_count";

pub fn top_features_csv(features: &[RankedFeature]) -> String {
    let mut s = format!("{TOP_FEATURES_CSV_HEADER}\n");
    for (i, f) in features.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{},{}", i + 1, f.id, f.gram, f.llr, f.target_count);
    }
    s
}
