//! Ranking metrics.

use crate::{Error, Result};

/// Area under the ROC curve by rank sum: the probability that a random
/// positive scores above a random negative, with ties worth one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one positive and one negative".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of (doubled) 1-based mid-ranks of the positives, kept integral so
    // the result is exact up to the final division.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share the mid-rank (i + j + 2) / 2.
        let doubled_mid = (i + j + 2) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        doubled_rank_sum += doubled_mid * tied_pos;
        i = j + 1;
    }
    let p = positives as u128;
    // U = R - P(P+1)/2, doubled.
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// Relative improvement over a base model, measured from the 0.5 floor of a
/// random guesser, in percent.
pub fn rela_impr(auc: f64, auc_base: f64) -> Result<f64> {
    if auc_base == 0.5 {
        return Err(Error::UndefinedMetric(
            "base AUC of 0.5 leaves relative improvement undefined".into(),
        ));
    }
    Ok(((auc - 0.5) / (auc_base - 0.5) - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_example() {
        let a = auc(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]).unwrap();
        assert_eq!(a, 0.75);
    }

    #[test]
    fn separated_and_tied() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
        assert!(auc(&[], &[]).is_err());
    }

    #[test]
    fn rela_impr_table_values() {
        assert!((rela_impr(0.9393, 0.8702).unwrap() - 18.67).abs() < 0.01);
        assert!((rela_impr(0.8808, 0.8579).unwrap() - 6.40).abs() < 0.01);
        assert_eq!(rela_impr(0.77, 0.77).unwrap(), 0.0);
        assert!(rela_impr(0.7, 0.5).is_err());
    }
}
