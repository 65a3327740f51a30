//! Ranking metrics for imbalanced binary classification.
//!
//! With ~5% positive labels, accuracy is uninformative, so model quality
//! is reported as AUCROC and AUCPR. Both are rank statistics: any
//! strictly monotone transform of the scores leaves them exactly
//! unchanged. Ties are handled explicitly — midranks for AUCROC, score
//! groups for AUCPR — so discrete or saturated models score sensibly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn validate(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {bad}")));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Ascending index sort by score; equal scores keep input order (which
/// cannot affect either metric — ties are grouped downstream).
fn sorted_indices(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    idx
}

/// Area under the ROC curve via the Mann–Whitney U statistic with
/// midranks for ties: the probability a random positive outscores a
/// random negative, ties counting half.
///
/// Needs at least one positive and one negative label.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = validate(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::undefined_metric(format!(
            "AUCROC needs both classes; got {pos} positive, {neg} negative"
        )));
    }

    let idx = sorted_indices(scores);
    let n = idx.len();
    let mut rank_sum = 0.0; // sum of positive ranks, midrank for ties
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks are 1-based; a tie block spanning positions i..j (0-based)
        // has ranks i+1..=j averaging to (i + j + 1) / 2.
        let midrank = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            if labels[k] == 1 {
                rank_sum += midrank;
            }
        }
        i = j;
    }

    let p = pos as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * neg as f64))
}

/// Area under the precision–recall curve as average precision with tied
/// scores handled as groups: walking score groups from highest to
/// lowest, each group contributes
/// `(positives in group / total positives) * (cumulative positives /
/// cumulative samples)`.
///
/// Needs at least one positive label. A constant scorer yields exactly
/// the positive prevalence.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = validate(scores, labels)?;
    if pos == 0 {
        return Err(Error::undefined_metric("AUCPR needs at least one positive label"));
    }

    let idx = sorted_indices(scores);
    let n = idx.len();
    let mut ap = 0.0;
    let mut tp_cum = 0usize;
    let mut seen = 0usize;
    // Walk descending: from the top of the ascending order.
    let mut hi = n;
    while hi > 0 {
        let mut lo = hi;
        while lo > 0 && scores[idx[lo - 1]] == scores[idx[hi - 1]] {
            lo -= 1;
        }
        let group = &idx[lo..hi];
        let tp_group = group.iter().filter(|&&k| labels[k] == 1).count();
        tp_cum += tp_group;
        seen += group.len();
        if tp_group > 0 {
            ap += (tp_group as f64 / pos as f64) * (tp_cum as f64 / seen as f64);
        }
        hi = lo;
    }
    Ok(ap)
}

/// Evaluation summary for one training regime on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub regime: String,
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl EvalReport {
    pub fn compute(regime: impl Into<String>, scores: &[f64], labels: &[u8]) -> Result<EvalReport> {
        let auc_roc = auc_roc(scores, labels)?;
        let auc_pr = auc_pr(scores, labels)?;
        let n_pos = labels.iter().filter(|&&y| y == 1).count();
        Ok(EvalReport {
            regime: regime.into(),
            auc_roc,
            auc_pr,
            n_pos,
            n_neg: labels.len() - n_pos,
        })
    }

    /// Plain `key = value` text block. Floats use Rust's shortest
    /// round-trip formatting, so `from_record` recovers exact bits.
    pub fn to_record(&self) -> String {
        format!(
            "regime = {}\nauc_roc = {}\nauc_pr = {}\nn_pos = {}\nn_neg = {}\n",
            self.regime, self.auc_roc, self.auc_pr, self.n_pos, self.n_neg
        )
    }

    pub fn from_record(text: &str) -> Result<EvalReport> {
        let mut regime = None;
        let mut auc_roc = None;
        let mut auc_pr = None;
        let mut n_pos = None;
        let mut n_neg = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once(" = ") else {
                return Err(Error::parse(line_no, format!("expected `key = value`, got `{line}`")));
            };
            let bad = |what: &str| Error::parse(line_no, format!("invalid {what}: `{value}`"));
            match key {
                "regime" => regime = Some(value.to_string()),
                "auc_roc" => auc_roc = Some(value.parse().map_err(|_| bad("auc_roc"))?),
                "auc_pr" => auc_pr = Some(value.parse().map_err(|_| bad("auc_pr"))?),
                "n_pos" => n_pos = Some(value.parse().map_err(|_| bad("n_pos"))?),
                "n_neg" => n_neg = Some(value.parse().map_err(|_| bad("n_neg"))?),
                other => return Err(Error::parse(line_no, format!("unknown key `{other}`"))),
            }
        }
        let missing = |what: &str| Error::invalid(format!("evaluation record missing `{what}`"));
        Ok(EvalReport {
            regime: regime.ok_or_else(|| missing("regime"))?,
            auc_roc: auc_roc.ok_or_else(|| missing("auc_roc"))?,
            auc_pr: auc_pr.ok_or_else(|| missing("auc_pr"))?,
            n_pos: n_pos.ok_or_else(|| missing("n_pos"))?,
            n_neg: n_neg.ok_or_else(|| missing("n_neg"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// O(P*N) pairwise AUCROC: fraction of positive/negative pairs
    /// ordered correctly, ties counting half.
    fn auc_roc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            if yi != 1 {
                continue;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yj != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    /// Average precision by full rescans at each distinct threshold:
    /// step-integrates precision over recall increments.
    fn auc_pr_rescan(scores: &[f64], labels: &[u8]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let pos = labels.iter().filter(|&&y| y == 1).count() as f64;

        let mut ap = 0.0;
        let mut last_recall = 0.0;
        for &t in &thresholds {
            let predicted = scores.iter().filter(|&&s| s >= t).count() as f64;
            let tp = scores.iter().zip(labels).filter(|&(&s, &y)| s >= t && y == 1).count() as f64;
            let precision = tp / predicted;
            let recall = tp / pos;
            ap += (recall - last_recall) * precision;
            last_recall = recall;
        }
        ap
    }

    #[test]
    fn roc_textbook_examples() {
        // Pairwise wins: 0.35>0.1, 0.35<0.4, 0.8>0.1, 0.8>0.4 → 3/4.
        assert_eq!(auc_roc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        // Wins: 0.9>0.6, 0.9>0.1, 0.4<0.6, 0.4>0.1 → 3/4.
        assert_eq!(auc_roc(&[0.9, 0.4, 0.6, 0.1], &[1, 1, 0, 0]).unwrap(), 0.75);
    }

    #[test]
    fn pr_textbook_examples() {
        // Positives at ranks 1 and 3: AP = (1/2)(1/1) + (1/2)(2/3) = 5/6.
        let ap = auc_pr(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15, "got {ap}");
        let ap = auc_pr(&[0.9, 0.8, 0.7], &[1, 0, 1]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15, "got {ap}");
    }

    #[test]
    fn perfect_and_inverted_rankings() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let labels = [0, 0, 1, 1];
        assert_eq!(auc_roc(&scores, &labels).unwrap(), 1.0);
        assert_eq!(auc_pr(&scores, &labels).unwrap(), 1.0);
        let flipped = [1, 1, 0, 0];
        assert_eq!(auc_roc(&scores, &flipped).unwrap(), 0.0);
    }

    #[test]
    fn all_tied_scores_give_half_roc_and_prevalence_pr() {
        let scores = [0.5, 0.5, 0.5, 0.5, 0.5];
        let labels = [1, 0, 0, 0, 0];
        assert_eq!(auc_roc(&scores, &labels).unwrap(), 0.5);
        assert_eq!(auc_pr(&scores, &labels).unwrap(), 0.2, "AP of constant scorer = prevalence");
    }

    #[test]
    fn constant_scorer_pr_equals_prevalence_exactly() {
        for (n, p) in [(100, 13), (64, 1), (10, 9)] {
            let scores = vec![0.123; n];
            let mut labels = vec![0u8; n];
            for slot in labels.iter_mut().take(p) {
                *slot = 1;
            }
            let ap = auc_pr(&scores, &labels).unwrap();
            assert_eq!(ap, p as f64 / n as f64, "n={n} p={p}");
        }
    }

    #[test]
    fn partial_ties_use_midranks() {
        let scores = [0.2, 0.5, 0.5, 0.9];
        let labels = [0, 1, 0, 1];
        // Pairwise: (0.5>0.2)=1, (0.5 vs 0.5)=0.5, (0.9>0.2)=1, (0.9>0.5)=1
        // → 3.5/4.
        assert_eq!(auc_roc(&scores, &labels).unwrap(), 3.5 / 4.0);
    }

    #[test]
    fn matches_pairwise_oracle_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..30 {
            let n = 3 + (trial % 40);
            // Coarse grid scores force plenty of ties.
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.random::<f64>() * 8.0).floor() / 8.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
            labels[0] = 1;
            labels[1 % n] = 0;
            let fast = auc_roc(&scores, &labels).unwrap();
            let slow = auc_roc_pairwise(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "trial {trial}: {fast} vs {slow}");
        }
    }

    #[test]
    fn matches_rescan_oracle_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for trial in 0..30 {
            let n = 3 + (trial % 40);
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.random::<f64>() * 8.0).floor() / 8.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
            labels[0] = 1;
            let fast = auc_pr(&scores, &labels).unwrap();
            let slow = auc_pr_rescan(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "trial {trial}: {fast} vs {slow}");
        }
    }

    #[test]
    fn monotone_transform_leaves_metrics_exactly_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let scores: Vec<f64> =
            (0..200).map(|_| (rng.random::<f64>() * 16.0).floor() / 16.0).collect();
        let labels: Vec<u8> = (0..200).map(|i| u8::from(i % 5 == 0)).collect();
        let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() - 0.5).collect();
        assert_eq!(auc_roc(&scores, &labels).unwrap(), auc_roc(&transformed, &labels).unwrap());
        assert_eq!(auc_pr(&scores, &labels).unwrap(), auc_pr(&transformed, &labels).unwrap());
    }

    #[test]
    fn label_flip_complements_roc() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let scores: Vec<f64> = (0..150).map(|_| rng.random()).collect();
        let labels: Vec<u8> = (0..150).map(|i| u8::from(i % 4 == 0)).collect();
        let flipped: Vec<u8> = labels.iter().map(|&y| 1 - y).collect();
        let a = auc_roc(&scores, &labels).unwrap();
        let b = auc_roc(&scores, &flipped).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12, "{a} + {b} != 1");
    }

    #[test]
    fn random_scores_near_half_for_both_metrics() {
        // On balanced labels a random scorer has AUCROC → 0.5 and
        // AP → prevalence = 0.5.
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let auc = auc_roc(&scores, &labels).unwrap();
        assert!((auc - 0.5).abs() < 0.03, "random scorer AUCROC {auc}");
        let ap = auc_pr(&scores, &labels).unwrap();
        assert!((ap - 0.5).abs() < 0.03, "random scorer AUCPR {ap}");
    }

    #[test]
    fn single_class_labels_are_undefined_for_roc() {
        let scores = [0.2, 0.8];
        assert!(matches!(auc_roc(&scores, &[1, 1]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auc_roc(&scores, &[0, 0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auc_pr(&scores, &[0, 0]), Err(Error::UndefinedMetric(_))));
        // All-positive AP is defined (trivially 1).
        assert_eq!(auc_pr(&scores, &[1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn rejects_malformed_inputs() {
        assert!(auc_roc(&[0.1], &[1, 0]).is_err());
        assert!(auc_roc(&[], &[]).is_err());
        assert!(auc_roc(&[f64::NAN, 0.2], &[1, 0]).is_err());
        assert!(auc_roc(&[f64::INFINITY, 0.2], &[1, 0]).is_err());
        assert!(auc_roc(&[0.1, 0.2], &[1, 2]).is_err());
    }

    #[test]
    fn eval_report_round_trips_exact_bits() {
        let scores = [0.11, 0.52, 0.52, 0.97, 0.33];
        let labels = [0, 1, 0, 1, 0];
        let report = EvalReport::compute("fedavg", &scores, &labels).unwrap();
        let text = report.to_record();
        let back = EvalReport::from_record(&text).unwrap();
        assert_eq!(report, back);
        assert_eq!(report.auc_roc.to_bits(), back.auc_roc.to_bits());
        assert_eq!(report.auc_pr.to_bits(), back.auc_pr.to_bits());
        assert_eq!(report.n_pos, 2);
        assert_eq!(report.n_neg, 3);
    }

    #[test]
    fn eval_record_parse_errors() {
        assert!(EvalReport::from_record("regime = x\n").is_err(), "missing fields");
        assert!(EvalReport::from_record("bogus line\n").is_err());
        assert!(EvalReport::from_record("regime = x\nauc_roc = abc\n").is_err());
        assert!(EvalReport::from_record(
            "regime = x\nauc_roc = 0.5\nauc_pr = 0.5\nn_pos = 1\nn_neg = 1\nmystery = 2\n"
        )
        .is_err());
    }
}
