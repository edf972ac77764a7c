//! Ranking metrics and evaluation reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    Ok(())
}

/// Twice the Mann-Whitney U statistic of the positives (ties count one half),
/// with the positive and negative counts. Exact in integers.
pub fn mann_whitney_u2(scores: &[f64], labels: &[bool]) -> Result<(u128, u64, u64)> {
    check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    // Sum over positives of twice their (1-based, tie-averaged) rank.
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j + 1) as u128;
        let pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        rank2_sum += rank2 * pos;
        i = j + 1;
    }
    let np = n_pos as u128;
    Ok((rank2_sum - np * (np + 1), n_pos, n_neg))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed so that `auroc(s, y) + auroc(s, !y) == 1.0`
/// holds exactly in floating point.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (u2, n_pos, n_neg) = mann_whitney_u2(scores, labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes ({n_pos} positives, {n_neg} negatives)"
        )));
    }
    let t2 = 2 * n_pos as u128 * n_neg as u128;
    Ok(if 2 * u2 <= t2 {
        u2 as f64 / t2 as f64
    } else {
        1.0 - (t2 - u2) as f64 / t2 as f64
    })
}

/// Average precision: mean over positives of the precision at their rank,
/// ranking by descending score with ties kept in input order.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if labels[k] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub positives: usize,
    pub auroc: f64,
    pub auprc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n_classes: usize,
    pub samples: usize,
    /// Classes present in the labels, one-vs-rest.
    pub per_class: Vec<ClassMetrics>,
    /// Positive-class metric for binary tasks, unweighted class mean otherwise.
    pub auroc: f64,
    pub auprc: f64,
    /// `confusion[true][predicted]`; binary predictions threshold p >= 0.5,
    /// multi-class predictions take the argmax.
    pub confusion: Vec<Vec<u64>>,
    pub warnings: Vec<String>,
}

/// One-vs-rest metrics from row-major `samples × n_classes` scores.
pub fn macro_metrics(scores: &[f64], n_classes: usize, labels: &[usize]) -> Result<EvalReport> {
    if n_classes < 2 {
        return Err(Error::InvalidInput("macro metrics need at least 2 classes".into()));
    }
    if scores.len() != labels.len() * n_classes {
        return Err(Error::Dimension(format!(
            "{} scores for {} samples × {n_classes} classes",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidInput(format!("label {bad} outside {n_classes} classes")));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no samples to evaluate".into()));
    }
    let mut per_class = Vec::new();
    let mut warnings = Vec::new();
    for c in 0..n_classes {
        let col: Vec<f64> = scores.iter().skip(c).step_by(n_classes).copied().collect();
        let y: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let positives = y.iter().filter(|&&b| b).count();
        if positives == 0 {
            warnings.push(format!("class {c} absent from labels; skipped"));
            continue;
        }
        if positives == y.len() {
            warnings.push(format!("class {c} is the only class present; skipped"));
            continue;
        }
        per_class.push(ClassMetrics {
            class: c,
            positives,
            auroc: auroc(&col, &y)?,
            auprc: auprc(&col, &y)?,
        });
    }
    if per_class.is_empty() {
        return Err(Error::UndefinedMetric("no class has both positives and negatives".into()));
    }
    let k = per_class.len() as f64;
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (i, &l) in labels.iter().enumerate() {
        let row = &scores[i * n_classes..(i + 1) * n_classes];
        let pred = (0..n_classes).fold(0, |best, j| if row[j] > row[best] { j } else { best });
        confusion[l][pred] += 1;
    }
    Ok(EvalReport {
        n_classes,
        samples: labels.len(),
        auroc: per_class.iter().map(|m| m.auroc).sum::<f64>() / k,
        auprc: per_class.iter().map(|m| m.auprc).sum::<f64>() / k,
        per_class,
        confusion,
        warnings,
    })
}

/// Report for a binary task from positive-class probabilities.
pub fn binary_report(probs: &[f64], labels: &[usize]) -> Result<EvalReport> {
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidInput(format!("binary task given label {bad}")));
    }
    let y: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    let two: Vec<f64> = probs.iter().flat_map(|&p| [1.0 - p, p]).collect();
    let mut report = macro_metrics(&two, 2, labels)?;
    report.auroc = auroc(probs, &y)?;
    report.auprc = auprc(probs, &y)?;
    let mut confusion = vec![vec![0u64; 2]; 2];
    for (&p, &l) in probs.iter().zip(labels) {
        confusion[l][usize::from(p >= 0.5)] += 1;
    }
    report.confusion = confusion;
    Ok(report)
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scope,class,positives,auroc,auprc\n");
        for m in &self.per_class {
            let _ = writeln!(s, "class,{},{},{},{}", m.class, m.positives, m.auroc, m.auprc);
        }
        let _ = writeln!(s, "aggregate,,{},{},{}", self.samples, self.auroc, self.auprc);
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kind = if self.n_classes == 2 { "binary" } else { "macro" };
        let _ = writeln!(s, "samples: {}", self.samples);
        let _ = writeln!(s, "{kind} AUROC: {:.4}", self.auroc);
        let _ = writeln!(s, "{kind} AUPRC: {:.4}", self.auprc);
        for m in &self.per_class {
            let _ = writeln!(
                s,
                "  class {}: n={} AUROC {:.4} AUPRC {:.4}",
                m.class, m.positives, m.auroc, m.auprc
            );
        }
        let _ = writeln!(s, "confusion (rows = true class):");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "  {}", cells.join(" "));
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &b(&[0, 0, 1, 1])).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &b(&[0, 0, 1, 1])).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &b(&[0, 1, 0, 1, 1, 0])).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &b(&[1, 1])), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auroc_matches_pairwise_and_complements() {
        let mut rng = Rng::new(3);
        for _ in 0..200 {
            let n = 2 + rng.below(40);
            let scores: Vec<f64> = (0..n).map(|_| rng.below(6) as f64 / 5.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let a = auroc(&scores, &labels).unwrap();
            assert!((a - pairwise(&scores, &labels)).abs() < 1e-12);
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            assert_eq!(a + auroc(&scores, &flipped).unwrap(), 1.0);
            for f in [|x: f64| x.exp(), |x: f64| 3.0 * x - 1.0, |x: f64| x * x * x] {
                let t: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
                assert_eq!(auroc(&t, &labels).unwrap(), a);
            }
        }
    }

    #[test]
    fn auprc_examples() {
        let v = auprc(&[0.9, 0.8, 0.7], &b(&[1, 0, 1])).unwrap();
        assert!((v - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(auprc(&[0.9, 0.8, 0.1, 0.05], &b(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert!(matches!(auprc(&[0.9], &b(&[0])), Err(Error::UndefinedMetric(_))));
        // Ties keep input order.
        assert_eq!(auprc(&[0.5, 0.5], &b(&[0, 1])).unwrap(), 0.5);
    }

    #[test]
    fn random_scores_auprc_near_prevalence() {
        let mut rng = Rng::new(9);
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.3)).collect();
        let p = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
        assert!((auprc(&scores, &labels).unwrap() - p).abs() < 0.05);
    }

    #[test]
    fn macro_examples() {
        let probs = [0.2, 0.9, 0.4, 0.7, 0.1];
        let labels = [0, 1, 1, 1, 0];
        let rep = binary_report(&probs, &labels).unwrap();
        let y: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        let two: Vec<f64> = probs.iter().flat_map(|&p| [1.0 - p, p]).collect();
        let mac = macro_metrics(&two, 2, &labels).unwrap();
        assert_eq!(mac.auroc, auroc(&probs, &y).unwrap());
        assert_eq!(rep.auroc, mac.auroc);

        // Class 0 separable, classes 1 and 2 indistinguishable.
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            let l = i % 3;
            labels.push(l);
            scores.extend_from_slice(&[if l == 0 { 1.0 } else { 0.0 }, 0.5, 0.5]);
        }
        let rep = macro_metrics(&scores, 3, &labels).unwrap();
        assert!((rep.auroc - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn macro_invariant_to_class_permutation() {
        let mut rng = Rng::new(1);
        let n = 60;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let scores: Vec<f64> = (0..n * 3).map(|_| rng.uniform()).collect();
        let perm = [2usize, 0, 1];
        let plabels: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let mut pscores = vec![0.0; n * 3];
        for i in 0..n {
            for c in 0..3 {
                pscores[i * 3 + perm[c]] = scores[i * 3 + c];
            }
        }
        let a = macro_metrics(&scores, 3, &labels).unwrap();
        let b = macro_metrics(&pscores, 3, &plabels).unwrap();
        assert!((a.auroc - b.auroc).abs() < 1e-12);
        assert!((a.auprc - b.auprc).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_warned() {
        let scores = [0.9, 0.05, 0.05, 0.1, 0.8, 0.1, 0.7, 0.2, 0.1];
        let rep = macro_metrics(&scores, 3, &[0, 1, 0]).unwrap();
        assert_eq!(rep.per_class.len(), 2);
        assert!(rep.warnings[0].contains("class 2"));
        assert!(rep.to_text().contains("warning"));
        assert!(rep.to_csv().starts_with("scope,class"));
    }
}
