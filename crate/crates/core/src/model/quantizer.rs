//! Nearest-codeword lookup and codebook statistics.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Index of the Euclidean-nearest codebook row; ties go to the lowest index.
pub fn nearest_code(h: &[f64], codebook: &Tensor) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for j in 0..codebook.rows() {
        let d: f64 = codebook.row(j).iter().zip(h).map(|(v, x)| (x - v) * (x - v)).sum();
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Nearest code for every row of an `R×D` hidden matrix.
pub fn quantize_rows(h: &Tensor, codebook: &Tensor) -> Result<Vec<usize>> {
    if codebook.rows() == 0 || codebook.is_empty() {
        return Err(Error::InvalidInput("codebook is empty".into()));
    }
    if h.cols() != codebook.cols() {
        return Err(Error::Dimension(format!(
            "hidden width {} vs codebook width {}",
            h.cols(),
            codebook.cols()
        )));
    }
    Ok((0..h.rows()).map(|r| nearest_code(h.row(r), codebook)).collect())
}

/// `C×N` grid of 0-based codebook indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGrid {
    channels: usize,
    patches: usize,
    indices: Vec<u32>,
}

impl TokenGrid {
    pub fn new(channels: usize, patches: usize, indices: Vec<u32>) -> Result<Self> {
        if indices.len() != channels * patches {
            return Err(Error::Dimension(format!(
                "token grid {channels}×{patches} needs {} indices, got {}",
                channels * patches,
                indices.len()
            )));
        }
        Ok(Self {
            channels,
            patches,
            indices,
        })
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let patches = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != patches) {
            return Err(Error::Dimension("ragged token rows".into()));
        }
        Self::new(rows.len(), patches, rows.concat())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn get(&self, channel: usize, patch: usize) -> u32 {
        self.indices[channel * self.patches + patch]
    }

    pub fn row(&self, channel: usize) -> &[u32] {
        &self.indices[channel * self.patches..(channel + 1) * self.patches]
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn max_index(&self) -> Option<u32> {
        self.indices.iter().copied().max()
    }
}

pub fn usage_histogram<'a>(grids: impl IntoIterator<Item = &'a TokenGrid>, codebook_size: usize) -> Vec<u64> {
    let mut hist = vec![0u64; codebook_size];
    for g in grids {
        for &i in g.indices() {
            hist[i as usize] += 1;
        }
    }
    hist
}

/// `exp(H)` of the empirical code distribution (1 = collapsed, K = uniform).
pub fn perplexity(hist: &[u64]) -> f64 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    h.exp()
}

pub fn perplexity_of_indices(indices: &[usize], codebook_size: usize) -> f64 {
    let mut hist = vec![0u64; codebook_size];
    for &i in indices {
        hist[i] += 1;
    }
    perplexity(&hist)
}

/// Distance from each codebook row to its nearest other row.
pub fn nearest_neighbor_distances(codebook: &Tensor) -> Vec<(usize, usize, f64)> {
    let k = codebook.rows();
    (0..k)
        .map(|i| {
            let mut best = (i, f64::INFINITY);
            for j in (0..k).filter(|&j| j != i) {
                let d: f64 = codebook
                    .row(i)
                    .iter()
                    .zip(codebook.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if d < best.1 {
                    best = (j, d);
                }
            }
            (i, best.0, best.1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn nearest_by_inspection() {
        let cb = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(nearest_code(&[0.9, 0.8], &cb), 1);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut rows = vec![vec![5.0, 5.0]; 6];
        rows[2] = vec![1.0, 0.0];
        rows[5] = vec![-1.0, 0.0];
        let cb = Tensor::from_rows(&rows).unwrap();
        assert_eq!(nearest_code(&[0.0, 0.0], &cb), 2);
    }

    #[test]
    fn matches_exhaustive_distances() {
        let mut rng = Rng::new(0);
        let cb = Tensor::new(vec![32, 6], (0..192).map(|_| rng.normal()).collect()).unwrap();
        let h = Tensor::new(vec![50, 6], (0..300).map(|_| rng.normal()).collect()).unwrap();
        let got = quantize_rows(&h, &cb).unwrap();
        for (r, &idx) in got.iter().enumerate() {
            let d: Vec<f64> = (0..32)
                .map(|j| (0..6).map(|t| (h.row(r)[t] - cb.row(j)[t]).powi(2)).sum())
                .collect();
            let min = d.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(idx, d.iter().position(|&x| x == min).unwrap());
        }
    }

    #[test]
    fn perplexity_bounds() {
        assert!((perplexity(&[5, 5, 5, 5]) - 4.0).abs() < 1e-12);
        assert!((perplexity(&[9, 0, 0]) - 1.0).abs() < 1e-12);
        assert_eq!(perplexity(&[0, 0]), 0.0);
    }
}
