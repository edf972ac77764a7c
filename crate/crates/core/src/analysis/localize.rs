//! Mapping discriminative n-gram matches back to time spans.

use std::fmt::Write as _;

use crate::analysis::bayes::RankedFeature;
use crate::analysis::ngram::Ngram;
use crate::error::{Error, Result};
use crate::features::{patch_time_span_for, PatchConfig};
use crate::model::TokenGrid;
use crate::signal_io::{Mask, CANONICAL_RATE_HZ};

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationEntry {
    pub window_id: String,
    pub channel: usize,
    pub channel_label: String,
    pub start_patch: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub feature: Ngram,
    pub llr: f64,
}

/// Every occurrence of every feature in each channel row, each mapped to the
/// union of its patches' spans. Sorted by descending LLR, then channel, then
/// start.
pub fn localize(
    window_id: &str,
    grid: &TokenGrid,
    features: &[RankedFeature],
    cfg: &PatchConfig,
    window_len: usize,
    channel_labels: &[String],
) -> Result<Vec<LocalizationEntry>> {
    if channel_labels.len() != grid.channels() {
        return Err(Error::InvalidInput(format!(
            "{} channel labels for a {}-channel grid",
            channel_labels.len(),
            grid.channels()
        )));
    }
    let expected = cfg.patch_count(window_len)?;
    if expected != grid.patches() {
        return Err(Error::InvalidInput(format!(
            "grid has {} patches, window geometry gives {expected}",
            grid.patches()
        )));
    }
    let mut out = Vec::new();
    for f in features {
        let n = f.gram.0.len();
        for c in 0..grid.channels() {
            let row = grid.row(c);
            if row.len() < n {
                continue;
            }
            for s in 0..=row.len() - n {
                if row[s..s + n] == f.gram.0[..] {
                    let (start_s, _) = patch_time_span_for(s, cfg, window_len)?;
                    let (_, end_s) = patch_time_span_for(s + n - 1, cfg, window_len)?;
                    out.push(LocalizationEntry {
                        window_id: window_id.to_string(),
                        channel: c,
                        channel_label: channel_labels[c].clone(),
                        start_patch: s,
                        start_s,
                        end_s,
                        feature: f.gram.clone(),
                        llr: f.llr,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| {
        b.llr
            .total_cmp(&a.llr)
            .then(a.channel.cmp(&b.channel))
            .then(a.start_patch.cmp(&b.start_patch))
    });
    Ok(out)
}

pub const LOCALIZATION_CSV_HEADER: &str = "window_id,channel,start_s,end_s,feature,llr";

pub fn localization_csv(entries: &[LocalizationEntry]) -> String {
    let mut s = format!("{LOCALIZATION_CSV_HEADER}\n");
    for e in entries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            e.window_id, e.channel_label, e.start_s, e.end_s, e.feature, e.llr
        );
    }
    s
}

pub fn localization_text(entries: &[LocalizationEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let _ = writeln!(
            s,
            "{:<24} {:<5} {:>7.3}s {:>7.3}s  {:<16} {:>8.4}",
            e.window_id,
            e.channel_label,
            e.start_s,
            e.end_s,
            e.feature.to_string(),
            e.llr
        );
    }
    s
}

/// Sorted, merged union of `(start, end)` intervals.
pub fn interval_union(spans: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = spans.iter().copied().filter(|(a, b)| b > a).collect();
    v.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn total_len(u: &[(f64, f64)]) -> f64 {
    u.iter().map(|(a, b)| b - a).sum()
}

/// Intersection over union of the time covered by two interval sets,
/// ignoring channels. Zero when both are empty.
pub fn temporal_iou(predicted: &[(f64, f64)], truth: &[(f64, f64)]) -> f64 {
    let (p, t) = (interval_union(predicted), interval_union(truth));
    let mut inter = 0.0;
    for &(a, b) in &p {
        for &(c, d) in &t {
            inter += (b.min(d) - a.max(c)).max(0.0);
        }
    }
    let union = total_len(&p) + total_len(&t) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Time spans in seconds of every marked run in a 250 Hz mask, all channels.
pub fn mask_spans(mask: &Mask) -> Vec<(f64, f64)> {
    let fs = f64::from(CANONICAL_RATE_HZ);
    (0..mask.channels())
        .flat_map(|c| mask.runs(c))
        .map(|(s, e)| (s as f64 / fs, e as f64 / fs))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature(gram: &[u32], llr: f64) -> RankedFeature {
        RankedFeature {
            id: 0,
            gram: Ngram(gram.to_vec()),
            llr,
            target_count: 1,
        }
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("ch{i}")).collect()
    }

    #[test]
    fn span_arithmetic() {
        let mut rows = vec![vec![0u32; 12]; 2];
        rows[1][3] = 5;
        rows[1][4] = 7;
        let grid = TokenGrid::from_rows(&rows).unwrap();
        let cfg = PatchConfig::default();
        let names = vec!["Fp1".to_string(), "Fz".to_string()];
        let rep = localize("w", &grid, &[feature(&[5, 7], 2.0)], &cfg, 3000, &names).unwrap();
        assert_eq!(rep.len(), 1);
        assert_eq!(rep[0].channel_label, "Fz");
        assert_eq!(rep[0].start_s, 3.0 * 256.0 / 250.0);
        assert_eq!(rep[0].end_s, 4.0 * 256.0 / 250.0 + 256.0 / 250.0);
        assert!(localization_csv(&rep).starts_with("window_id,channel,start_s,end_s,feature,llr\nw,Fz,3.072,"));
    }

    #[test]
    fn no_match_and_bounds() {
        let grid = TokenGrid::from_rows(&[vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]]).unwrap();
        let cfg = PatchConfig::default();
        let none = localize("w", &grid, &[feature(&[2, 1], 1.0)], &cfg, 3000, &labels(1)).unwrap();
        assert!(none.is_empty());
        let tail = localize("w", &grid, &[feature(&[11, 12], 1.0), feature(&[1, 2, 3], 3.0)], &cfg, 3000, &labels(1))
            .unwrap();
        assert_eq!(tail.len(), 2);
        assert_eq!(tail[0].feature, Ngram(vec![1, 2, 3]));
        assert_eq!(tail[1].end_s, 12.0);
        for e in &tail {
            assert!(0.0 <= e.start_s && e.end_s <= 12.0);
        }
    }

    #[test]
    fn iou_examples() {
        assert_eq!(temporal_iou(&[(0.0, 2.0)], &[(1.0, 3.0)]), 1.0 / 3.0);
        assert_eq!(temporal_iou(&[(0.0, 1.0), (0.5, 2.0)], &[(0.0, 2.0)]), 1.0);
        assert_eq!(temporal_iou(&[], &[(0.0, 2.0)]), 0.0);
        assert_eq!(interval_union(&[(3.0, 4.0), (0.0, 1.0), (0.9, 2.0)]), vec![(0.0, 2.0), (3.0, 4.0)]);
    }

    #[test]
    fn mask_spans_from_runs() {
        let mut m = Mask::empty(2, 1000);
        for s in 250..500 {
            m.set(1, s, true);
        }
        assert_eq!(mask_spans(&m), vec![(1.0, 2.0)]);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let grid = TokenGrid::from_rows(&[vec![0; 12]]).unwrap();
        let cfg = PatchConfig::default();
        assert!(localize("w", &grid, &[], &cfg, 3000, &labels(2)).is_err());
        assert!(localize("w", &grid, &[], &cfg, 2000, &labels(1)).is_err());
    }
}
