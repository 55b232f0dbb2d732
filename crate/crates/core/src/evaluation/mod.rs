//! Detection and topology metrics in the OpenLane-V2 style.

mod ap;
mod metrics;
mod plots;

pub use ap::{average_precision, pr_curve, rank, RankedHit};
pub use metrics::{
    det_l, det_t, frechet_matrix, match_boxes, match_lanes, ols, top_score, topology_aps, BoxDetection, EvalConfig,
    TopologyKind,
};
pub use plots::{pr_curve_svg, score_histogram_svg};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::error::Error;
use crate::model::{LanePredictions, Predictions, TeDetection, TePredictions};
use crate::numerics::tape::sigmoid_value;
use crate::numerics::Tensor;
use crate::scenes::Scene;

/// Aggregate metrics over a set of scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub det_l: f64,
    pub det_t: f64,
    pub top_ll: f64,
    pub top_lt: f64,
    pub ols: f64,
    /// `(threshold m, AP)`.
    pub det_l_thresholds: Vec<(f64, f64)>,
    /// `(class, AP)` for classes present in the ground truth.
    pub det_t_classes: Vec<(u32, f64)>,
    pub scenes: usize,
    pub lanes_gt: usize,
    pub lanes_matched: usize,
    pub tes_gt: usize,
    pub tes_matched: usize,
    /// Conventions applied to empty sets.
    pub flags: Vec<String>,
}

fn fmt(v: f64) -> String {
    format!("{v:.9}")
}

impl MetricsReport {
    /// `key = value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("DET_l", fmt(self.det_l));
        kv("DET_t", fmt(self.det_t));
        kv("TOP_ll", fmt(self.top_ll));
        kv("TOP_lt", fmt(self.top_lt));
        kv("OLS", fmt(self.ols));
        for (t, ap) in &self.det_l_thresholds {
            kv(&format!("DET_l@{t:.1}m"), fmt(*ap));
        }
        for (c, ap) in &self.det_t_classes {
            kv(&format!("DET_t@class{c}"), fmt(*ap));
        }
        kv("scenes", self.scenes.to_string());
        kv("lanes_gt", self.lanes_gt.to_string());
        kv("lanes_matched", self.lanes_matched.to_string());
        kv("tes_gt", self.tes_gt.to_string());
        kv("tes_matched", self.tes_matched.to_string());
        kv("flags", self.flags.join(","));
        s
    }

    pub const CSV_HEADER: &'static str = "DET_l,DET_t,TOP_ll,TOP_lt,OLS";

    pub fn csv_row(&self) -> String {
        [self.det_l, self.det_t, self.top_ll, self.top_lt, self.ols]
            .iter()
            .map(|v| fmt(*v))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Report plus the raw material for plots.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Pooled lane precision–recall curve at the first threshold.
    pub lane_pr: Vec<(f64, f64)>,
    /// Predicted L2L scores on matched pairs, split by ground truth.
    pub l2l_scores: (Vec<f64>, Vec<f64>),
    pub l2t_scores: (Vec<f64>, Vec<f64>),
}

fn probabilities(logits: &Tensor) -> Tensor {
    let mut t = logits.clone();
    t.data_mut().iter_mut().for_each(|v| *v = sigmoid_value(*v));
    t
}

fn split_scores(
    scores: &Tensor,
    rows: &[Option<usize>],
    cols: &[Option<usize>],
    adj: &[Vec<u8>],
    skip_diagonal: bool,
    out: &mut (Vec<f64>, Vec<f64>),
) {
    let c = scores.shape()[1];
    for (i, r) in rows.iter().enumerate() {
        for (j, q) in cols.iter().enumerate() {
            if skip_diagonal && i == j {
                continue;
            }
            if let (Some(p), Some(q)) = (r, q) {
                let s = scores.data()[p * c + q];
                if adj[i][j] == 1 {
                    out.0.push(s);
                } else {
                    out.1.push(s);
                }
            }
        }
    }
}

/// Evaluates final-layer predictions against their scenes.
pub fn evaluate(items: &[(&Predictions, &Scene)], cfg: &EvalConfig) -> Result<Evaluation> {
    cfg.validate()?;
    let nt = cfg.frechet_thresholds.len();
    let mut lane_hits = vec![Vec::new(); nt];
    let mut lanes_gt = 0;
    let mut lanes_matched = 0;
    let mut te_hits: std::collections::BTreeMap<u32, Vec<RankedHit>> = Default::default();
    let mut te_gt_all: Vec<([f64; 4], u32)> = Vec::new();
    let mut tes_matched = 0;
    let mut top_ll_aps = Vec::new();
    let mut top_lt_aps = Vec::new();
    let mut l2l_scores = (Vec::new(), Vec::new());
    let mut l2t_scores = (Vec::new(), Vec::new());

    for (pred, scene) in items {
        let lanes = pred.lanes.final_lanes();
        let dist = frechet_matrix(lanes, &scene.lanes, cfg.samples)?;
        let g = scene.lanes.len();
        lanes_gt += g;
        for (k, &t) in cfg.frechet_thresholds.iter().enumerate() {
            let (hits, _) = match_lanes(lanes, &dist, g, t);
            lane_hits[k].extend(hits);
        }
        let (_, lane_owner) = match_lanes(lanes, &dist, g, cfg.topology_frechet);
        lanes_matched += lane_owner.iter().flatten().count();

        let dets: Vec<BoxDetection> = pred
            .tes
            .detections
            .iter()
            .map(|d| BoxDetection {
                bbox: d.bbox,
                class_id: d.class_id,
                confidence: d.confidence,
            })
            .collect();
        let gt_boxes: Vec<([f64; 4], u32)> = scene
            .traffic_elements
            .iter()
            .map(|te| (te.normalized(scene.camera.image_size), te.class_id))
            .collect();
        let (per_class, te_owner) = match_boxes(&dets, &gt_boxes, cfg.iou_threshold);
        tes_matched += te_owner.iter().flatten().count();
        for (c, hits) in per_class {
            te_hits.entry(c).or_default().extend(hits);
        }
        te_gt_all.extend(gt_boxes);

        let l2l = probabilities(&pred.l2l);
        let l2t = probabilities(&pred.l2t);
        top_ll_aps.extend(topology_aps(&l2l, &lane_owner, &lane_owner, &scene.adj_l2l, TopologyKind::LaneLane)?);
        top_lt_aps.extend(topology_aps(&l2t, &lane_owner, &te_owner, &scene.adj_l2t, TopologyKind::LaneTe)?);
        split_scores(&l2l, &lane_owner, &lane_owner, &scene.adj_l2l, true, &mut l2l_scores);
        split_scores(&l2t, &lane_owner, &te_owner, &scene.adj_l2t, false, &mut l2t_scores);
    }

    let mut flags = Vec::new();
    let mut det_l_thresholds = Vec::new();
    let mut lane_pr = Vec::new();
    for (k, hits) in lane_hits.into_iter().enumerate() {
        let (ap, pr) = metrics::pooled_ap(hits, lanes_gt);
        if k == 0 {
            lane_pr = pr;
        }
        det_l_thresholds.push((cfg.frechet_thresholds[k], ap));
    }
    if lanes_gt == 0 {
        flags.push("no_gt_lanes".to_string());
    }
    let det_l = det_l_thresholds.iter().map(|x| x.1).sum::<f64>() / nt as f64;
    let per_class: Vec<(u32, Vec<RankedHit>)> = te_hits.into_iter().collect();
    let (det_t, det_t_classes) = metrics::pooled_class_ap(&per_class, &te_gt_all);
    if te_gt_all.is_empty() {
        flags.push("no_gt_traffic_elements".to_string());
    }
    let mean_or_flag = |aps: &[f64], flag: &str, flags: &mut Vec<String>| {
        if aps.is_empty() {
            flags.push(flag.to_string());
            0.0
        } else {
            aps.iter().sum::<f64>() / aps.len() as f64
        }
    };
    let top_ll = mean_or_flag(&top_ll_aps, "no_gt_l2l_edges", &mut flags);
    let top_lt = mean_or_flag(&top_lt_aps, "no_gt_l2t_edges", &mut flags);
    let report = MetricsReport {
        det_l,
        det_t,
        top_ll,
        top_lt,
        ols: ols(det_l, det_t, top_ll, top_lt)?,
        det_l_thresholds,
        det_t_classes,
        scenes: items.len(),
        lanes_gt,
        lanes_matched,
        tes_gt: te_gt_all.len(),
        tes_matched,
        flags,
    };
    Ok(Evaluation {
        report,
        lane_pr,
        l2l_scores,
        l2t_scores,
    })
}

/// Logit used for confident oracle outputs.
const ORACLE_LOGIT: f64 = 20.0;

fn adjacency_logits(adj: &[Vec<u8>], rows: usize, cols: usize) -> Result<Tensor> {
    let data = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .map(|(i, j)| if adj[i][j] == 1 { ORACLE_LOGIT } else { -ORACLE_LOGIT })
        .collect();
    Tensor::new(vec![rows, cols], data)
}

/// Predictions that reproduce `scene`'s lanes and traffic elements exactly
/// with confident scores. Topology logits default to the ground-truth
/// adjacency; `l2l` `(L, L)` and `l2t` `(L, T)` override them.
pub fn oracle_predictions(scene: &Scene, l2l: Option<Tensor>, l2t: Option<Tensor>) -> Result<Predictions> {
    let (nl, nt) = (scene.num_lanes(), scene.num_tes());
    let check = |t: &Tensor, shape: [usize; 2], what: &'static str| {
        if t.shape() != shape {
            return Err(Error::shape(what, format!("{:?}, expected {shape:?}", t.shape())));
        }
        Ok(())
    };
    let l2l = match l2l {
        Some(t) => {
            check(&t, [nl, nl], "oracle_predictions l2l")?;
            t
        }
        None => adjacency_logits(&scene.adj_l2l, nl, nl)?,
    };
    let l2t = match l2t {
        Some(t) => {
            check(&t, [nl, nt], "oracle_predictions l2t")?;
            t
        }
        None => adjacency_logits(&scene.adj_l2t, nl, nt)?,
    };
    let conf = sigmoid_value(ORACLE_LOGIT);
    let lanes: Vec<_> = scene
        .lanes
        .iter()
        .map(|l| crate::geometry::BezierLane::new(l.control_points, conf, l.class_id))
        .collect::<Result<_>>()?;
    let detections = scene
        .traffic_elements
        .iter()
        .map(|te| TeDetection {
            bbox: te.normalized(scene.camera.image_size),
            class_id: te.class_id,
            confidence: conf,
        })
        .collect();
    Ok(Predictions {
        lanes: LanePredictions {
            endpoints: lanes.iter().map(|l| (l.start(), l.end())).collect(),
            layers: vec![lanes],
            logits: Tensor::full(&[nl, 1], ORACLE_LOGIT),
            queries: Tensor::zeros(&[nl, 1]),
        },
        tes: TePredictions {
            queries: Tensor::zeros(&[nt, 1]),
            detections,
            logits: Tensor::full(&[nt, 1], ORACLE_LOGIT),
        },
        l2l,
        l2t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{generate_scene, SceneConfig};

    #[test]
    fn ground_truth_as_predictions_scores_one() {
        let cfg = SceneConfig::default();
        let scenes: Vec<Scene> = (0..5).map(|s| generate_scene(&cfg, s).unwrap()).collect();
        let preds: Vec<Predictions> = scenes.iter().map(|s| oracle_predictions(s, None, None).unwrap()).collect();
        let items: Vec<(&Predictions, &Scene)> = preds.iter().zip(&scenes).collect();
        let r = evaluate(&items, &EvalConfig::default()).unwrap().report;
        assert_eq!((r.det_l, r.det_t, r.top_ll, r.top_lt, r.ols), (1.0, 1.0, 1.0, 1.0, 1.0), "{}", r.to_text());
        assert!(r.flags.is_empty());
    }

    #[test]
    fn inverted_topology_scores_lower_top_only() {
        let scene = generate_scene(&SceneConfig::default(), 2).unwrap();
        let n = scene.num_lanes();
        let inv = Tensor::new(
            vec![n, n],
            (0..n * n).map(|k| if scene.adj_l2l[k / n][k % n] == 1 { -5.0 } else { 5.0 }).collect(),
        )
        .unwrap();
        let pred = oracle_predictions(&scene, Some(inv), None).unwrap();
        let r = evaluate(&[(&pred, &scene)], &EvalConfig::default()).unwrap().report;
        assert_eq!((r.det_l, r.det_t, r.top_lt), (1.0, 1.0, 1.0));
        assert!(r.top_ll < 1.0);
    }

    #[test]
    fn report_text_is_stable() {
        let scene = generate_scene(&SceneConfig::default(), 1).unwrap();
        let pred = oracle_predictions(&scene, None, None).unwrap();
        let a = evaluate(&[(&pred, &scene)], &EvalConfig::default()).unwrap().report.to_text();
        let b = evaluate(&[(&pred, &scene)], &EvalConfig::default()).unwrap().report.to_text();
        assert_eq!(a, b);
        assert!(a.starts_with("DET_l = 1.000000000\n"));
    }
}
