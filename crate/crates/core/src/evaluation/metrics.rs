use serde::{Deserialize, Serialize};

use super::ap::{average_precision, pr_curve, rank, RankedHit};
use crate::error::{Error, Result};
use crate::geometry::{box_iou, discrete_frechet, BezierLane};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Fréchet thresholds in meters for lane detection.
    pub frechet_thresholds: Vec<f64>,
    /// Threshold used to match lanes before scoring topology.
    pub topology_frechet: f64,
    pub iou_threshold: f64,
    /// Points sampled per lane for the Fréchet distance.
    pub samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            frechet_thresholds: vec![1.0, 2.0, 3.0],
            topology_frechet: 1.0,
            iou_threshold: 0.75,
            samples: 11,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frechet_thresholds.is_empty() || self.frechet_thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("eval.frechet_thresholds must be non-empty and positive".into()));
        }
        if !(self.topology_frechet > 0.0) || !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config("eval thresholds out of range".into()));
        }
        if self.samples < 2 {
            return Err(Error::Config("eval.samples must be at least 2".into()));
        }
        Ok(())
    }
}

/// Prediction indices by descending confidence, ties by ascending index.
fn confidence_order(conf: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..conf.len()).collect();
    idx.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
    idx
}

/// Greedy one-to-one matching over a prediction×gt score table: each
/// prediction in confidence order takes the best still-free ground-truth
/// item that passes `accept`. Returns `(ranked hits, gt -> pred)`.
fn greedy_match(
    conf: &[f64],
    num_gt: usize,
    quality: impl Fn(usize, usize) -> f64,
    accept: impl Fn(f64) -> bool,
    higher_is_better: bool,
) -> (Vec<RankedHit>, Vec<Option<usize>>) {
    let mut owner = vec![None; num_gt];
    let mut hits = Vec::with_capacity(conf.len());
    for p in confidence_order(conf) {
        let mut best: Option<(usize, f64)> = None;
        for g in 0..num_gt {
            if owner[g].is_some() {
                continue;
            }
            let q = quality(p, g);
            if !accept(q) {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, b)) => {
                    if higher_is_better {
                        q > b
                    } else {
                        q < b
                    }
                }
            };
            if better {
                best = Some((g, q));
            }
        }
        if let Some((g, _)) = best {
            owner[g] = Some(p);
        }
        hits.push(RankedHit {
            score: conf[p],
            hit: best.is_some(),
        });
    }
    (hits, owner)
}

/// `P×G` discrete Fréchet distances between sampled lanes.
pub fn frechet_matrix(pred: &[BezierLane], gt: &[BezierLane], samples: usize) -> Result<Vec<Vec<f64>>> {
    let gs = gt.iter().map(|l| l.sample(samples)).collect::<Result<Vec<_>>>()?;
    pred.iter()
        .map(|p| {
            let ps = p.sample(samples)?;
            gs.iter().map(|g| discrete_frechet(&ps, g)).collect()
        })
        .collect()
}

/// Greedy lane matching at one Fréchet threshold.
pub fn match_lanes(
    pred: &[BezierLane],
    dist: &[Vec<f64>],
    num_gt: usize,
    threshold: f64,
) -> (Vec<RankedHit>, Vec<Option<usize>>) {
    let conf: Vec<f64> = pred.iter().map(|l| l.confidence).collect();
    greedy_match(&conf, num_gt, |p, g| dist[p][g], |d| d < threshold, false)
}

/// Scored box detection in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDetection {
    pub bbox: [f64; 4],
    pub class_id: u32,
    pub confidence: f64,
}

/// Greedy per-class box matching; returns ranked hits per class and the
/// gt -> pred map over all classes.
pub fn match_boxes(
    pred: &[BoxDetection],
    gt: &[([f64; 4], u32)],
    iou_threshold: f64,
) -> (Vec<(u32, Vec<RankedHit>)>, Vec<Option<usize>>) {
    let mut classes: Vec<u32> = gt.iter().map(|g| g.1).chain(pred.iter().map(|p| p.class_id)).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut owner = vec![None; gt.len()];
    let mut per_class = Vec::new();
    for c in classes {
        let pi: Vec<usize> = (0..pred.len()).filter(|&i| pred[i].class_id == c).collect();
        let gi: Vec<usize> = (0..gt.len()).filter(|&i| gt[i].1 == c).collect();
        let conf: Vec<f64> = pi.iter().map(|&i| pred[i].confidence).collect();
        let (hits, own) = greedy_match(
            &conf,
            gi.len(),
            |p, g| box_iou(&pred[pi[p]].bbox, &gt[gi[g]].0),
            |q| q >= iou_threshold,
            true,
        );
        for (g, p) in own.into_iter().enumerate() {
            owner[gi[g]] = p.map(|p| pi[p]);
        }
        per_class.push((c, hits));
    }
    (per_class, owner)
}

/// Lane detection AP of one scene, averaged over thresholds.
pub fn det_l(pred: &[BezierLane], gt: &[BezierLane], thresholds: &[f64], samples: usize) -> Result<f64> {
    let dist = frechet_matrix(pred, gt, samples)?;
    let aps: Vec<f64> = thresholds
        .iter()
        .map(|&t| {
            let (mut hits, _) = match_lanes(pred, &dist, gt.len(), t);
            rank(&mut hits);
            average_precision(&hits, gt.len())
        })
        .collect();
    Ok(aps.iter().sum::<f64>() / aps.len().max(1) as f64)
}

/// Traffic-element AP of one scene, averaged over classes present in the
/// ground truth.
pub fn det_t(pred: &[BoxDetection], gt: &[([f64; 4], u32)], iou_threshold: f64) -> f64 {
    let (per_class, _) = match_boxes(pred, gt, iou_threshold);
    class_mean_ap(&per_class, gt)
}

fn class_mean_ap(per_class: &[(u32, Vec<RankedHit>)], gt: &[([f64; 4], u32)]) -> f64 {
    let mut aps = Vec::new();
    for (c, hits) in per_class {
        let n = gt.iter().filter(|g| g.1 == *c).count();
        if n > 0 {
            let mut h = hits.clone();
            rank(&mut h);
            aps.push(average_precision(&h, n));
        }
    }
    if aps.is_empty() {
        return if per_class.iter().all(|(_, h)| h.is_empty()) { 1.0 } else { 0.0 };
    }
    aps.iter().sum::<f64>() / aps.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    LaneLane,
    LaneTe,
}

/// Per-vertex topology APs: for every ground-truth row vertex with at
/// least one edge, its candidate partners are ranked by the predicted
/// score between the matched predictions (0 when either side is
/// unmatched; equal scores rank by ascending partner index).
pub fn topology_aps(
    scores: &Tensor,
    row_to_pred: &[Option<usize>],
    col_to_pred: &[Option<usize>],
    gt_adj: &[Vec<u8>],
    kind: TopologyKind,
) -> Result<Vec<f64>> {
    if scores.rank() != 2 {
        return Err(Error::shape("topology", format!("{:?}, expected 2D scores", scores.shape())));
    }
    let cols = scores.shape()[1];
    let mut aps = Vec::new();
    for (i, row) in gt_adj.iter().enumerate() {
        if row.len() != col_to_pred.len() {
            return Err(Error::shape("topology", "adjacency and matching disagree"));
        }
        let num_edges = row.iter().filter(|&&v| v == 1).count();
        if num_edges == 0 {
            continue;
        }
        let mut hits: Vec<RankedHit> = (0..row.len())
            .filter(|&j| !(kind == TopologyKind::LaneLane && j == i))
            .map(|j| {
                let score = match (row_to_pred[i], col_to_pred[j]) {
                    (Some(p), Some(q)) => scores.data()[p * cols + q],
                    _ => 0.0,
                };
                RankedHit { score, hit: row[j] == 1 }
            })
            .collect();
        rank(&mut hits);
        aps.push(average_precision(&hits, num_edges));
    }
    Ok(aps)
}

/// Mean per-vertex AP; `None` when the ground truth has no edges.
pub fn top_score(
    scores: &Tensor,
    row_to_pred: &[Option<usize>],
    col_to_pred: &[Option<usize>],
    gt_adj: &[Vec<u8>],
    kind: TopologyKind,
) -> Result<Option<f64>> {
    let aps = topology_aps(scores, row_to_pred, col_to_pred, gt_adj, kind)?;
    Ok(if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    })
}

/// OpenLane-V2 score `¼·(DET_l + DET_t + √TOP_ll + √TOP_lt)`.
pub fn ols(det_l: f64, det_t: f64, top_ll: f64, top_lt: f64) -> Result<f64> {
    for (name, v) in [("DET_l", det_l), ("DET_t", det_t), ("TOP_ll", top_ll), ("TOP_lt", top_lt)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
        }
    }
    Ok(0.25 * (det_l + det_t + top_ll.sqrt() + top_lt.sqrt()))
}

pub(crate) fn pooled_ap(mut hits: Vec<RankedHit>, num_gt: usize) -> (f64, Vec<(f64, f64)>) {
    rank(&mut hits);
    (average_precision(&hits, num_gt), pr_curve(&hits, num_gt))
}

pub(crate) fn pooled_class_ap(per_class: &[(u32, Vec<RankedHit>)], gt: &[([f64; 4], u32)]) -> (f64, Vec<(u32, f64)>) {
    let mut out = Vec::new();
    for (c, hits) in per_class {
        let n = gt.iter().filter(|g| g.1 == *c).count();
        if n > 0 {
            let mut h = hits.clone();
            rank(&mut h);
            out.push((*c, average_precision(&h, n)));
        }
    }
    (class_mean_ap(per_class, gt), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lane(y: f64, conf: f64) -> BezierLane {
        BezierLane::new(std::array::from_fn(|i| [i as f64 * 5.0, y, 0.0]), conf, 0).unwrap()
    }

    #[test]
    fn det_l_fixtures() {
        let gt = [lane(0.0, 1.0), lane(4.0, 1.0)];
        let th = [1.0, 2.0, 3.0];
        assert_eq!(det_l(&gt, &gt, &th, 11).unwrap(), 1.0);
        assert_eq!(det_l(&[], &gt, &th, 11).unwrap(), 0.0);
        assert_eq!(det_l(&[lane(0.0, 0.9)], &gt, &th, 11).unwrap(), 0.5);
        assert_eq!(det_l(&[], &[], &th, 11).unwrap(), 1.0);
        // 1.5 m off: a miss at 1 m, a hit at 2 and 3 m.
        let v = det_l(&[lane(1.5, 0.9)], &gt[..1], &th, 11).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn det_l_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let gt: Vec<BezierLane> = (0..4).map(|i| lane(i as f64 * 3.5, 1.0)).collect();
            let pred: Vec<BezierLane> = (0..6)
                .map(|_| lane(rng.gen_range(-1.0..12.0), rng.gen_range(0.0..1.0)))
                .collect();
            let aps: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|&t| det_l(&pred, &gt, &[t], 11).unwrap()).collect();
            assert!(aps[0] <= aps[1] && aps[1] <= aps[2], "{aps:?}");
        }
    }

    #[test]
    fn det_t_fixtures() {
        let gt = [([0.2, 0.2, 0.1, 0.1], 0), ([0.6, 0.6, 0.1, 0.1], 0)];
        let exact: Vec<BoxDetection> = gt
            .iter()
            .map(|g| BoxDetection {
                bbox: g.0,
                class_id: g.1,
                confidence: 0.9,
            })
            .collect();
        assert_eq!(det_t(&exact, &gt, 0.75), 1.0);
        assert_eq!(det_t(&exact[..1], &gt, 0.75), 0.5);
        // Shifted by a third of the width: IoU = (2/3) / (4/3) = 0.5.
        let shifted: Vec<BoxDetection> = exact
            .iter()
            .map(|d| BoxDetection {
                bbox: [d.bbox[0] + 0.1 / 3.0, d.bbox[1], 0.1, 0.1],
                ..*d
            })
            .collect();
        assert!((box_iou(&shifted[0].bbox, &gt[0].0) - 0.5).abs() < 1e-12);
        assert_eq!(det_t(&shifted, &gt, 0.75), 0.0);
        // Wrong class never matches.
        let wrong: Vec<BoxDetection> = exact.iter().map(|d| BoxDetection { class_id: 1, ..*d }).collect();
        assert_eq!(det_t(&wrong, &gt, 0.75), 0.0);
    }

    fn chain() -> Vec<Vec<u8>> {
        vec![vec![0, 1, 0], vec![0, 0, 1], vec![0, 0, 0]]
    }

    #[test]
    fn top_on_lane_chain() {
        let ident: Vec<Option<usize>> = (0..3).map(Some).collect();
        let zeros = Tensor::zeros(&[3, 3]);
        // Lane 0 ranks {1 (edge), 2}: AP 1. Lane 1 ranks {0, 2 (edge)}: AP 1/2.
        let v = top_score(&zeros, &ident, &ident, &chain(), TopologyKind::LaneLane).unwrap().unwrap();
        assert!((v - 0.75).abs() < 1e-12);
        let mut perfect = Tensor::zeros(&[3, 3]);
        perfect.data_mut()[1] = 1.0;
        perfect.data_mut()[5] = 1.0;
        let v = top_score(&perfect, &ident, &ident, &chain(), TopologyKind::LaneLane).unwrap().unwrap();
        assert_eq!(v, 1.0);
        // Unmatched lanes score 0 whatever the prediction says.
        let partial = [Some(0), None, Some(2)];
        let v = top_score(&perfect, &partial, &partial, &chain(), TopologyKind::LaneLane).unwrap().unwrap();
        assert!((v - 0.75).abs() < 1e-12);
        let none = vec![vec![0u8; 3]; 3];
        assert_eq!(top_score(&zeros, &ident, &ident, &none, TopologyKind::LaneLane).unwrap(), None);
    }

    #[test]
    fn lane_te_topology_keeps_every_column() {
        let lanes: Vec<Option<usize>> = (0..2).map(Some).collect();
        let tes = [Some(1), Some(0)];
        let adj = vec![vec![1, 0], vec![0, 1]];
        // Scores are indexed by prediction slots; routing swaps the TEs.
        let scores = Tensor::new(vec![2, 2], vec![0.1, 0.9, 0.8, 0.2]).unwrap();
        let v = top_score(&scores, &lanes, &tes, &adj, TopologyKind::LaneTe).unwrap().unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn ols_reproduces_table_rows() {
        let v = ols(0.338, 0.509, 0.292, 0.322).unwrap();
        assert!((100.0 * v - 48.9).abs() <= 0.05);
        let v = ols(0.285, 0.505, 0.217, 0.273).unwrap();
        assert!((100.0 * v - 44.5).abs() <= 0.05);
        assert_eq!(ols(1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(ols(0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert!(ols(1.2, 0.0, 0.0, 0.0).is_err());
        assert!(ols(0.0, 0.0, -0.1, 0.0).is_err());
    }

    #[test]
    fn lane_metrics_ignore_prediction_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let gt: Vec<BezierLane> = (0..3).map(|i| lane(i as f64 * 3.5, 1.0)).collect();
            let mut pred: Vec<BezierLane> = (0..5)
                .map(|_| lane(rng.gen_range(-1.0..8.0), rng.gen_range(0.0..1.0)))
                .collect();
            let a = det_l(&pred, &gt, &[1.0, 2.0], 11).unwrap();
            pred.shuffle(&mut rng);
            assert_eq!(a, det_l(&pred, &gt, &[1.0, 2.0], 11).unwrap());
        }
    }

    #[test]
    fn greedy_takes_closest_free_lane() {
        let gt = [lane(0.0, 1.0), lane(0.6, 1.0)];
        let pred = [lane(0.5, 0.9), lane(0.1, 0.8)];
        let dist = frechet_matrix(&pred, &gt, 11).unwrap();
        let (hits, owner) = match_lanes(&pred, &dist, 2, 1.0);
        assert_eq!(owner, vec![Some(1), Some(0)]);
        assert!(hits.iter().all(|h| h.hit));
    }
}
