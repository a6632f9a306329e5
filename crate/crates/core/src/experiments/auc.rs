use crate::error::{Error, Result};

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counted half. Computed from mid-ranks in
/// `O(n log n)`.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidLabel {
            label: l as usize,
            classes: 2,
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidValue("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidValue("ROC-AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks, tied groups sharing their mean rank (1-based).
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += mid * pos_in_group as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}
