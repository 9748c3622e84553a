use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann–Whitney U statistic with average
/// ranks for ties: `AUC = U / (n1 n0)`.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::SingleClass("AUC is undefined".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (1-based: start+1 ..= end) share their average
        let avg = (start + 1 + end) as f64 / 2.0;
        let positives = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum_pos += avg * positives as f64;
        start = end;
    }
    let (n1, n0) = (n1 as f64, n0 as f64);
    let u = rank_sum_pos - n1 * (n1 + 1.0) / 2.0;
    Ok(u / (n1 * n0))
}
