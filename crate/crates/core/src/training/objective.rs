use serde::{Deserialize, Serialize};

use super::losses::{
    bezier_chamfer_loss, focal_loss, focal_match_cost, giou_loss, infonce_topology_loss, l1_loss, FocalConfig,
    Reduction,
};
use super::matching::{hungarian_match, MatchResult};
use crate::error::{Error, Result};
use crate::geometry::{bernstein_matrix, box_giou, chamfer_distance};
use crate::model::ForwardOutput;
use crate::numerics::{Tape, Tensor, Var};
use crate::scenes::Scene;

/// Weights of the eight loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub te_cls: f64,
    pub te_l1: f64,
    pub te_giou: f64,
    pub lane_cls: f64,
    pub lane_l1: f64,
    pub lane_chamfer: f64,
    pub topo_cls: f64,
    pub contrastive: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            te_cls: 2.0,
            te_l1: 5.0,
            te_giou: 2.0,
            lane_cls: 1.5,
            lane_l1: 0.05,
            lane_chamfer: 0.02,
            topo_cls: 5.0,
            contrastive: 0.1,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            te_cls: 0.0,
            te_l1: 0.0,
            te_giou: 0.0,
            lane_cls: 0.0,
            lane_l1: 0.0,
            lane_chamfer: 0.0,
            topo_cls: 0.0,
            contrastive: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.te_cls,
            self.te_l1,
            self.te_giou,
            self.lane_cls,
            self.lane_l1,
            self.lane_chamfer,
            self.topo_cls,
            self.contrastive,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub focal: FocalConfig,
    /// Focal settings for the adjacency logits.
    pub topo_focal: FocalConfig,
    /// Hard negatives mined per line in the contrastive term.
    pub negatives: usize,
    /// Curve samples for the Chamfer term.
    pub samples: usize,
    /// Apply topology terms at every decoder layer instead of the last only.
    pub topology_every_layer: bool,
    pub contrastive: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            focal: FocalConfig::default(),
            topo_focal: FocalConfig::default(),
            negatives: 3,
            samples: 11,
            topology_every_layer: false,
            contrastive: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.focal.validate()?;
        self.topo_focal.validate()?;
        if self.samples < 2 {
            return Err(Error::Config("loss.samples must be at least 2".into()));
        }
        Ok(())
    }
}

/// Ground truth of one scene in the units the model predicts.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTarget {
    /// `(G,4,3)` control points in meters.
    pub lanes: Tensor,
    pub lane_classes: Vec<u32>,
    /// `(T,4)` normalized `(cx, cy, w, h)`.
    pub boxes: Tensor,
    pub te_classes: Vec<u32>,
    pub adj_l2l: Vec<Vec<u8>>,
    pub adj_l2t: Vec<Vec<u8>>,
}

impl SceneTarget {
    pub fn from_scene(scene: &Scene) -> Result<Self> {
        let g = scene.lanes.len();
        let lanes = Tensor::new(
            vec![g, 4, 3],
            scene.lanes.iter().flat_map(|l| l.control_points.iter().flatten().copied()).collect(),
        )?;
        let t = scene.traffic_elements.len();
        let boxes = Tensor::new(
            vec![t, 4],
            scene
                .traffic_elements
                .iter()
                .flat_map(|te| te.normalized(scene.camera.image_size))
                .collect(),
        )?;
        Ok(Self {
            lanes,
            lane_classes: scene.lanes.iter().map(|l| l.class_id).collect(),
            boxes,
            te_classes: scene.traffic_elements.iter().map(|te| te.class_id).collect(),
            adj_l2l: scene.adj_l2l.clone(),
            adj_l2t: scene.adj_l2t.clone(),
        })
    }

    pub fn num_lanes(&self) -> usize {
        self.lane_classes.len()
    }

    pub fn num_tes(&self) -> usize {
        self.te_classes.len()
    }
}

/// Weighted value of every term, summed over decoder layers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub te_cls: f64,
    pub te_l1: f64,
    pub te_giou: f64,
    pub lane_cls: f64,
    pub lane_l1: f64,
    pub lane_chamfer: f64,
    pub topo_cls: f64,
    pub contrastive: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const TERMS: [&'static str; 8] = [
        "te_cls",
        "te_l1",
        "te_giou",
        "lane_cls",
        "lane_l1",
        "lane_chamfer",
        "topo_cls",
        "contrastive",
    ];

    pub fn terms(&self) -> [(&'static str, f64); 8] {
        let v = [
            self.te_cls,
            self.te_l1,
            self.te_giou,
            self.lane_cls,
            self.lane_l1,
            self.lane_chamfer,
            self.topo_cls,
            self.contrastive,
        ];
        std::array::from_fn(|i| (Self::TERMS[i], v[i]))
    }

    fn slot(&mut self, name: &str) -> &mut f64 {
        match name {
            "te_cls" => &mut self.te_cls,
            "te_l1" => &mut self.te_l1,
            "te_giou" => &mut self.te_giou,
            "lane_cls" => &mut self.lane_cls,
            "lane_l1" => &mut self.lane_l1,
            "lane_chamfer" => &mut self.lane_chamfer,
            "topo_cls" => &mut self.topo_cls,
            "contrastive" => &mut self.contrastive,
            _ => unreachable!("unknown loss term {name}"),
        }
    }

    /// First term (in declaration order) that is not finite.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.terms().iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| *n).or(if self.total.is_finite() {
            None
        } else {
            Some("total")
        })
    }

    pub fn add_assign(&mut self, other: &LossBreakdown) {
        for (name, v) in other.terms() {
            *self.slot(name) += v;
        }
        self.total += other.total;
    }

    pub fn scaled(&self, s: f64) -> LossBreakdown {
        let mut out = LossBreakdown::default();
        for (name, v) in self.terms() {
            *out.slot(name) = v * s;
        }
        out.total = self.total * s;
        out
    }
}

/// Accumulates weighted terms on the tape, tagging failures with the term.
struct Terms<'t> {
    tape: &'t Tape,
    parts: Vec<Var>,
    breakdown: LossBreakdown,
}

impl<'t> Terms<'t> {
    fn add(&mut self, name: &'static str, weight: f64, f: impl FnOnce() -> Result<Var>) -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        let v = f().map_err(|e| match e {
            Error::NonFinite { .. } => Error::NumericalAbort {
                step: 0,
                term: name.to_string(),
            },
            other => other,
        })?;
        let v = self.tape.scale(v, weight)?;
        *self.breakdown.slot(name) += self.tape.item(v)?;
        self.parts.push(v);
        Ok(())
    }
}

fn rows(t: &Tensor) -> Vec<&[f64]> {
    let n = t.shape()[0];
    if n == 0 {
        return Vec::new();
    }
    t.data().chunks(t.numel() / n).collect()
}

fn sample_points(cp: &[f64], basis: &Tensor) -> Vec<[f64; 3]> {
    let k = basis.shape()[0];
    (0..k)
        .map(|s| {
            let b = &basis.data()[4 * s..4 * s + 4];
            std::array::from_fn(|d| (0..4).map(|i| b[i] * cp[3 * i + d]).sum())
        })
        .collect()
}

/// Lane matching cost: classification + control-point L1 + sampled Chamfer.
pub fn lane_cost_matrix(
    control_points: &Tensor,
    logits: &Tensor,
    target: &SceneTarget,
    cfg: &LossConfig,
) -> Result<Vec<Vec<f64>>> {
    let w = &cfg.weights;
    let basis = bernstein_matrix(cfg.samples)?;
    let gt = rows(&target.lanes);
    let gt_pts: Vec<_> = gt.iter().map(|g| sample_points(g, &basis)).collect();
    rows(control_points)
        .into_iter()
        .zip(rows(logits))
        .map(|(cp, lg)| {
            let pts = sample_points(cp, &basis);
            gt.iter()
                .zip(&gt_pts)
                .zip(&target.lane_classes)
                .map(|((g, gp), &c)| {
                    let l1: f64 = cp.iter().zip(*g).map(|(a, b)| (a - b).abs()).sum();
                    Ok(w.lane_cls * focal_match_cost(lg[c as usize], &cfg.focal)
                        + w.lane_l1 * l1
                        + w.lane_chamfer * chamfer_distance(&pts, gp)?)
                })
                .collect()
        })
        .collect()
}

/// TE matching cost: classification + box L1 + (1 - GIoU).
pub fn te_cost_matrix(boxes: &Tensor, logits: &Tensor, target: &SceneTarget, cfg: &LossConfig) -> Result<Vec<Vec<f64>>> {
    let w = &cfg.weights;
    let gt = rows(&target.boxes);
    rows(boxes)
        .into_iter()
        .zip(rows(logits))
        .map(|(b, lg)| {
            let b4 = [b[0], b[1], b[2], b[3]];
            gt.iter()
                .zip(&target.te_classes)
                .map(|(g, &c)| {
                    let g4 = [g[0], g[1], g[2], g[3]];
                    let l1: f64 = b4.iter().zip(&g4).map(|(x, y)| (x - y).abs()).sum();
                    Ok(w.te_cls * focal_match_cost(lg[c as usize], &cfg.focal)
                        + w.te_l1 * l1
                        + w.te_giou * (1.0 - box_giou(&b4, &g4)?))
                })
                .collect()
        })
        .collect()
}

fn class_targets(num_pred: usize, classes: usize, m: &MatchResult, gt_classes: &[u32]) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[num_pred, classes]);
    for (p, g) in m.matched_pairs() {
        let c = gt_classes[g] as usize;
        if c >= classes {
            return Err(Error::invalid(format!("ground-truth class {c} outside {classes} predicted classes")));
        }
        t.data_mut()[p * classes + c] = 1.0;
    }
    Ok(t)
}

/// Matched `(pred rows, gt rows)` index lists.
fn pairs(m: &MatchResult) -> (Vec<usize>, Vec<usize>) {
    m.matched_pairs().unzip()
}

fn gather_rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let per = if t.shape()[0] == 0 { 0 } else { t.numel() / t.shape()[0] };
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, idx.iter().flat_map(|&i| t.data()[i * per..(i + 1) * per].iter().copied()).collect())
}

/// Ground-truth adjacency routed through row and column matchings onto
/// prediction slots; unmatched slots get no relations.
pub fn route_adjacency(adj: &[Vec<u8>], row_match: &MatchResult, col_match: &MatchResult) -> Result<Tensor> {
    let (r, c) = (row_match.assignment.len(), col_match.assignment.len());
    let mut t = Tensor::zeros(&[r, c]);
    for (pi, gi) in row_match.matched_pairs() {
        for (pj, gj) in col_match.matched_pairs() {
            t.data_mut()[pi * c + pj] = f64::from(adj[gi][gj]);
        }
    }
    Ok(t)
}

/// Matchings of one decoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMatch {
    pub lanes: MatchResult,
    pub tes: MatchResult,
}

/// Hungarian matchings of every decoder layer.
pub fn match_layers(tape: &Tape, out: &ForwardOutput, target: &SceneTarget, cfg: &LossConfig) -> Result<Vec<LayerMatch>> {
    if out.lanes.layers.len() != out.tes.layers.len() {
        return Err(Error::invalid("lane and TE decoders have different depths"));
    }
    out.lanes
        .layers
        .iter()
        .zip(&out.tes.layers)
        .map(|(ll, tl)| {
            let lc = lane_cost_matrix(&tape.value(ll.control_points), &tape.value(ll.logits), target, cfg)?;
            let tc = te_cost_matrix(&tape.value(tl.boxes), &tape.value(tl.logits), target, cfg)?;
            Ok(LayerMatch {
                lanes: hungarian_match(&lc)?,
                tes: hungarian_match(&tc)?,
            })
        })
        .collect()
}

/// Full training objective with deep supervision; returns the scalar
/// loss and its per-term breakdown.
pub fn total_loss(
    tape: &Tape,
    out: &ForwardOutput,
    target: &SceneTarget,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    cfg.validate()?;
    let w = cfg.weights;
    let matches = match_layers(tape, out, target, cfg)?;
    let mut terms = Terms {
        tape,
        parts: Vec::new(),
        breakdown: LossBreakdown::default(),
    };
    let n_lanes = target.num_lanes() as f64;
    let n_tes = target.num_tes() as f64;
    let last = matches.len() - 1;
    for (layer, m) in matches.iter().enumerate() {
        let ll = out.lanes.layers[layer];
        let tl = out.tes.layers[layer];
        let lane_shape = tape.shape(ll.logits);
        let te_shape = tape.shape(tl.logits);

        let lane_t = class_targets(lane_shape[0], lane_shape[1], &m.lanes, &target.lane_classes)?;
        terms.add("lane_cls", w.lane_cls, || {
            focal_loss(tape, ll.logits, &lane_t, &cfg.focal, Reduction::Normalized(n_lanes))
        })?;
        let (lp, lg) = pairs(&m.lanes);
        if !lp.is_empty() {
            let gt = gather_rows(&target.lanes, &lg)?;
            let pred = tape.index_select(ll.control_points, 0, &lp)?;
            terms.add("lane_l1", w.lane_l1, || {
                tape.scale(tape.sum(l1_loss(tape, pred, &gt)?)?, 1.0 / n_lanes)
            })?;
            terms.add("lane_chamfer", w.lane_chamfer, || {
                tape.scale(tape.sum(bezier_chamfer_loss(tape, pred, &gt, cfg.samples)?)?, 1.0 / n_lanes)
            })?;
        }

        let te_t = class_targets(te_shape[0], te_shape[1], &m.tes, &target.te_classes)?;
        terms.add("te_cls", w.te_cls, || {
            focal_loss(tape, tl.logits, &te_t, &cfg.focal, Reduction::Normalized(n_tes))
        })?;
        let (tp, tg) = pairs(&m.tes);
        if !tp.is_empty() {
            let gt = gather_rows(&target.boxes, &tg)?;
            let pred = tape.index_select(tl.boxes, 0, &tp)?;
            terms.add("te_l1", w.te_l1, || tape.scale(tape.sum(l1_loss(tape, pred, &gt)?)?, 1.0 / n_tes))?;
            terms.add("te_giou", w.te_giou, || {
                tape.scale(tape.sum(giou_loss(tape, pred, &gt)?)?, 1.0 / n_tes)
            })?;
        }

        if layer == last || cfg.topology_every_layer {
            // Topology logits exist for the final layer only; earlier layers
            // reuse them with their own matchings.
            let l2l_t = route_adjacency(&target.adj_l2l, &m.lanes, &m.lanes)?;
            let l2t_t = route_adjacency(&target.adj_l2t, &m.lanes, &m.tes)?;
            let pos = |t: &Tensor| t.data().iter().sum::<f64>();
            terms.add("topo_cls", w.topo_cls, || {
                let a = focal_loss(tape, out.l2l, &l2l_t, &cfg.topo_focal, Reduction::Normalized(pos(&l2l_t)))?;
                let b = focal_loss(tape, out.l2t, &l2t_t, &cfg.topo_focal, Reduction::Normalized(pos(&l2t_t)))?;
                tape.add(a, b)
            })?;
            if cfg.contrastive {
                terms.add("contrastive", w.contrastive, || {
                    let a = infonce_topology_loss(tape, out.l2l, &l2l_t, cfg.negatives)?;
                    let b = infonce_topology_loss(tape, out.l2t, &l2t_t, cfg.negatives)?;
                    tape.add(a, b)
                })?;
            }
        }
    }
    let Terms {
        parts, mut breakdown, ..
    } = terms;
    let total = match parts.as_slice() {
        [] => tape.scalar(0.0)?,
        [one] => *one,
        many => {
            let flat = many.iter().map(|&p| tape.reshape(p, &[1])).collect::<Result<Vec<_>>>()?;
            tape.sum(tape.concat(&flat, 0)?)?
        }
    };
    breakdown.total = tape.item(total)?;
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Ablation, LaneDecoderOutput, LaneLayerOutput, Model, ModelConfig, TeDecoderOutput, TeLayerOutput};
    use crate::numerics::gradcheck::{check_params, GradCheckOptions};
    use crate::scenes::{generate_scene, rasterize, SceneConfig};

    const SAT: f64 = 20.0;

    /// Outputs equal to the ground truth in the first slots, with `extra`
    /// confidently empty slots after them.
    fn perfect_output(tape: &Tape, t: &SceneTarget, layers: usize, extra: usize) -> ForwardOutput {
        let (g, m) = (t.num_lanes(), t.num_tes());
        let (p, q) = (g + extra, m + extra);
        let mut cp = t.lanes.data().to_vec();
        for e in 0..extra {
            cp.extend((0..4).flat_map(|i| [100.0 + e as f64, i as f64, 0.0]));
        }
        let cp = Tensor::new(vec![p, 4, 3], cp).unwrap();
        let lane_logits = Tensor::new(vec![p, 1], (0..p).map(|i| if i < g { SAT } else { -SAT }).collect()).unwrap();
        let mut bx = t.boxes.data().to_vec();
        for _ in 0..extra {
            bx.extend([0.9, 0.9, 0.05, 0.05]);
        }
        let bx = Tensor::new(vec![q, 4], bx).unwrap();
        let mut te_logits = vec![-SAT; q * 3];
        for (i, &c) in t.te_classes.iter().enumerate() {
            te_logits[i * 3 + c as usize] = SAT;
        }
        let te_logits = Tensor::new(vec![q, 3], te_logits).unwrap();
        let adj = |a: &[Vec<u8>], r: usize, c: usize| {
            let mut v = vec![-SAT; r * c];
            for (i, row) in a.iter().enumerate() {
                for (j, &e) in row.iter().enumerate() {
                    if e == 1 {
                        v[i * c + j] = SAT;
                    }
                }
            }
            tape.leaf(Tensor::new(vec![r, c], v).unwrap())
        };
        let lanes = LaneDecoderOutput {
            reference: tape.leaf(cp.clone()),
            layers: (0..layers)
                .map(|_| LaneLayerOutput {
                    control_points: tape.leaf(cp.clone()),
                    logits: tape.leaf(lane_logits.clone()),
                })
                .collect(),
            queries: tape.leaf(Tensor::zeros(&[p, 4])),
        };
        let tes = TeDecoderOutput {
            reference: tape.leaf(bx.clone()),
            layers: (0..layers)
                .map(|_| TeLayerOutput {
                    boxes: tape.leaf(bx.clone()),
                    logits: tape.leaf(te_logits.clone()),
                })
                .collect(),
            queries: tape.leaf(Tensor::zeros(&[q, 4])),
        };
        ForwardOutput {
            lanes,
            tes,
            l2l: adj(&t.adj_l2l, p, p),
            l2t: adj(&t.adj_l2t, p, q),
        }
    }

    fn scene_target(seed: u64) -> SceneTarget {
        SceneTarget::from_scene(&generate_scene(&SceneConfig::default(), seed).unwrap()).unwrap()
    }

    #[test]
    fn perfect_predictions_cost_almost_nothing() {
        for seed in 0..20 {
            let t = scene_target(seed);
            let tape = Tape::new();
            let out = perfect_output(&tape, &t, 2, 3);
            let (loss, b) = total_loss(&tape, &out, &t, &LossConfig::default()).unwrap();
            let v = tape.item(loss).unwrap();
            assert!(v < 0.01, "seed {seed}: {b:?}");
            let m = match_layers(&tape, &out, &t, &LossConfig::default()).unwrap();
            for layer in m {
                for g in 0..t.num_lanes() {
                    assert_eq!(layer.lanes.assignment[g], Some(g));
                }
            }
        }
    }

    #[test]
    fn zero_weights_give_zero() {
        let t = scene_target(4);
        let tape = Tape::new();
        let out = perfect_output(&tape, &t, 2, 1);
        let cfg = LossConfig {
            weights: LossWeights::zero(),
            ..LossConfig::default()
        };
        let (loss, b) = total_loss(&tape, &out, &t, &cfg).unwrap();
        assert_eq!(tape.item(loss).unwrap(), 0.0);
        assert_eq!(b, LossBreakdown::default());
    }

    #[test]
    fn breakdown_sums_to_total() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(2);
        for seed in 0..10 {
            let t = scene_target(seed);
            let tape = Tape::new();
            let mut out = perfect_output(&tape, &t, 3, 2);
            // Perturb everything so every term is active.
            let jitter = |tape: &Tape, v: Var, rng: &mut rand_chacha::ChaCha8Rng, s: f64| {
                let mut x = tape.value(v).clone();
                x.data_mut().iter_mut().for_each(|e| *e += rand::Rng::gen_range(rng, -s..s));
                tape.leaf(x)
            };
            for l in &mut out.lanes.layers {
                l.control_points = jitter(&tape, l.control_points, &mut rng, 1.0);
                l.logits = jitter(&tape, l.logits, &mut rng, 25.0);
            }
            for l in &mut out.tes.layers {
                l.boxes = jitter(&tape, l.boxes, &mut rng, 0.01);
                l.logits = jitter(&tape, l.logits, &mut rng, 25.0);
            }
            out.l2l = jitter(&tape, out.l2l, &mut rng, 25.0);
            out.l2t = jitter(&tape, out.l2t, &mut rng, 25.0);
            let (loss, b) = total_loss(&tape, &out, &t, &LossConfig::default()).unwrap();
            let sum: f64 = b.terms().iter().map(|x| x.1).sum();
            assert!((sum - b.total).abs() < 1e-12 * b.total.max(1.0));
            assert_eq!(tape.item(loss).unwrap(), b.total);
            assert!(b.terms().iter().all(|x| x.1 > 0.0), "{b:?}");
        }
    }

    #[test]
    fn routing_follows_matches() {
        let adj = vec![vec![0, 1], vec![0, 0]];
        let rows = MatchResult {
            assignment: vec![Some(1), None, Some(0)],
            total_cost: 0.0,
        };
        let routed = route_adjacency(&adj, &rows, &rows).unwrap();
        // gt 0 -> 1 becomes slot 2 -> slot 0.
        let mut want = Tensor::zeros(&[3, 3]);
        want.data_mut()[2 * 3] = 1.0;
        assert_eq!(routed, want);
    }

    #[test]
    fn non_finite_term_is_named() {
        let t = scene_target(1);
        let tape = Tape::new();
        let mut out = perfect_output(&tape, &t, 2, 1);
        let mut l2t = tape.value(out.l2t).clone();
        l2t.data_mut()[0] = f64::NAN;
        out.l2t = tape.leaf(l2t);
        // Matching only reads lane and TE outputs, so the NaN surfaces in
        // the first term that consumes the adjacency logits.
        let r = total_loss(&tape, &out, &t, &LossConfig::default());
        match r {
            Err(Error::NumericalAbort { term, .. }) => assert_eq!(term, "topo_cls"),
            Ok((_, b)) => assert_eq!(b.first_non_finite(), Some("topo_cls")),
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        let scfg = SceneConfig {
            forward_lanes: [1, 1],
            backward_lanes: [0, 0],
            intersection_probability: 0.0,
            max_breakpoints: 2,
            traffic_elements: [1, 2],
            ..SceneConfig::default()
        };
        let scene = generate_scene(&scfg, 3).unwrap();
        let (bev, fv) = rasterize(&scene, &scfg.raster).unwrap();
        let target = SceneTarget::from_scene(&scene).unwrap();
        let mcfg = ModelConfig {
            layers: 1,
            lane_queries: 3,
            te_queries: 2,
            dim: 8,
            heads: 2,
            offsets: 1,
            ffn_dim: 8,
            encoding_dim: 4,
            detach_topology_geometry: false,
            ..ModelConfig::default()
        };
        let model = Model::new(mcfg, Ablation::full(), scfg.input_spec(), 9).unwrap();
        let inputs = crate::model::SceneInputs {
            bev: &bev,
            fv: &fv,
            camera: &scene.camera,
        };
        let report = check_params(
            &model.params,
            |g| {
                let out = model.forward(g, &inputs)?;
                Ok(total_loss(g, &out, &target, &LossConfig::default())?.0)
            },
            &GradCheckOptions {
                max_coords: 6,
                ..GradCheckOptions::default()
            },
        )
        .unwrap();
        assert!(report.passed(1e-4), "{report:?}");
    }
}
