/// One ranked prediction: its score and whether it hit a ground-truth item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedHit {
    pub score: f64,
    pub hit: bool,
}

/// Orders by descending score; equal scores keep their input order.
pub fn rank(hits: &mut [RankedHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score));
}

/// Precision and recall after each ranked prediction.
pub fn pr_curve(ranked: &[RankedHit], num_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    ranked
        .iter()
        .enumerate()
        .map(|(i, h)| {
            tp += usize::from(h.hit);
            let recall = if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 };
            (recall, tp as f64 / (i + 1) as f64)
        })
        .collect()
}

/// All-point interpolated average precision of an already ranked list.
/// With no ground truth the AP is 1 for an empty list and 0 otherwise.
pub fn average_precision(ranked: &[RankedHit], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if ranked.is_empty() { 1.0 } else { 0.0 };
    }
    let curve = pr_curve(ranked, num_gt);
    // Interpolated precision: best precision at any recall at least this
    // high.
    let mut envelope: Vec<f64> = curve.iter().map(|c| c.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(r, _)) in curve.iter().enumerate() {
        if r > prev_recall {
            ap += (r - prev_recall) * envelope[i];
            prev_recall = r;
        }
    }
    ap
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hits(v: &[(f64, bool)]) -> Vec<RankedHit> {
        v.iter().map(|&(score, hit)| RankedHit { score, hit }).collect()
    }

    #[test]
    fn ap_cases() {
        assert_eq!(average_precision(&hits(&[(0.9, true), (0.8, true)]), 2), 1.0);
        assert_eq!(average_precision(&hits(&[(0.9, true)]), 2), 0.5);
        // hit, miss, hit over 2 gt: 0.5*1 + 0.5*(2/3)
        let ap = average_precision(&hits(&[(0.9, true), (0.8, false), (0.7, true)]), 2);
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(average_precision(&[], 3), 0.0);
        assert_eq!(average_precision(&[], 0), 1.0);
    }

    #[test]
    fn ranking_is_stable() {
        let mut h = hits(&[(0.5, false), (0.5, true), (0.9, false)]);
        rank(&mut h);
        assert_eq!(h, hits(&[(0.9, false), (0.5, false), (0.5, true)]));
    }
}
