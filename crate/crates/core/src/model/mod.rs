//! Lane and traffic-element decoders assembled with the topology heads.

mod config;
mod decoder;
mod grid;

pub use config::{Ablation, BevExtent, InputSpec, ModelConfig};
pub use decoder::{LaneDecoder, LaneDecoderOutput, LaneLayerOutput, TeDecoder, TeDecoderOutput, TeLayerOutput};
pub use grid::{FeatureGrid, Frame, GridExtent};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{BezierLane, CameraModel, SinusoidalConfig};
use crate::numerics::{Graph, ParameterSet, Tape, Tensor, Var};
use crate::topology::{L2lHead, L2tHead};

/// Everything a forward pass reads from a scene.
#[derive(Debug, Clone, Copy)]
pub struct SceneInputs<'a> {
    pub bev: &'a FeatureGrid,
    pub fv: &'a FeatureGrid,
    pub camera: &'a CameraModel,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub lanes: LaneDecoderOutput,
    pub tes: TeDecoderOutput,
    /// `(N_lane, N_lane)` adjacency logits.
    pub l2l: Var,
    /// `(N_lane, N_te)` adjacency logits.
    pub l2t: Var,
}

/// Detected traffic element in normalized image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TeDetection {
    /// `(cx, cy, w, h)` in `[0, 1]`.
    pub bbox: [f64; 4],
    pub class_id: u32,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanePredictions {
    /// Lanes per decoder layer; confidence is the sigmoid of the best class
    /// logit.
    pub layers: Vec<Vec<BezierLane>>,
    /// Final-layer `(N, classes)` logits.
    pub logits: Tensor,
    /// Final `(N, C)` lane queries.
    pub queries: Tensor,
    /// Final `(start, end)` BEV endpoints per lane.
    pub endpoints: Vec<([f64; 3], [f64; 3])>,
}

impl LanePredictions {
    pub fn final_lanes(&self) -> &[BezierLane] {
        self.layers.last().map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TePredictions {
    pub queries: Tensor,
    pub detections: Vec<TeDetection>,
    pub logits: Tensor,
}

/// Plain-value snapshot of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub lanes: LanePredictions,
    pub tes: TePredictions,
    pub l2l: Tensor,
    pub l2t: Tensor,
}

fn best_class(row: &[f64]) -> (u32, f64) {
    let (i, v) = row
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    (i as u32, crate::numerics::tape::sigmoid_value(v))
}

impl ForwardOutput {
    pub fn values(&self, tape: &Tape) -> Result<Predictions> {
        let mut layers = Vec::with_capacity(self.lanes.layers.len());
        for out in &self.lanes.layers {
            let cp = tape.value(out.control_points).clone();
            let logits = tape.value(out.logits).clone();
            let classes = logits.shape()[1];
            let lanes = cp
                .data()
                .chunks(12)
                .zip(logits.data().chunks(classes))
                .map(|(c, l)| {
                    let (class_id, conf) = best_class(l);
                    let pts = std::array::from_fn(|i| [c[3 * i], c[3 * i + 1], c[3 * i + 2]]);
                    BezierLane::new(pts, conf, class_id)
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(lanes);
        }
        let last_lane = self.lanes.layers.last().ok_or_else(|| Error::invalid("no decoder layers"))?;
        let last_te = self.tes.layers.last().ok_or_else(|| Error::invalid("no decoder layers"))?;
        let endpoints = layers
            .last()
            .map(|ls| ls.iter().map(|l| (l.start(), l.end())).collect())
            .unwrap_or_default();
        let boxes = tape.value(last_te.boxes).clone();
        let te_logits = tape.value(last_te.logits).clone();
        let classes = te_logits.shape()[1];
        let detections = boxes
            .data()
            .chunks(4)
            .zip(te_logits.data().chunks(classes))
            .map(|(b, l)| {
                let (class_id, confidence) = best_class(l);
                TeDetection {
                    bbox: [b[0], b[1], b[2], b[3]],
                    class_id,
                    confidence,
                }
            })
            .collect();
        Ok(Predictions {
            lanes: LanePredictions {
                layers,
                logits: tape.value(last_lane.logits).clone(),
                queries: tape.value(self.lanes.queries).clone(),
                endpoints,
            },
            tes: TePredictions {
                queries: tape.value(self.tes.queries).clone(),
                detections,
                logits: te_logits,
            },
            l2l: tape.value(self.l2l).clone(),
            l2t: tape.value(self.l2t).clone(),
        })
    }
}

/// The full network: parameters plus the block layout that reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub spec: InputSpec,
    pub params: ParameterSet,
    lane: LaneDecoder,
    te: TeDecoder,
    l2l: L2lHead,
    l2t: L2tHead,
    /// Diagnostic: replace every attention output with zeros.
    pub zero_attention: bool,
}

impl Model {
    /// Builds a model with freshly initialized parameters; initialization is
    /// a pure function of `seed`.
    pub fn new(config: ModelConfig, ablation: Ablation, spec: InputSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        spec.bev_extent.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParameterSet::new();
        let lane = LaneDecoder::new(&mut ps, &mut rng, &config, ablation, spec.bev_channels, spec.bev_extent)?;
        let te = TeDecoder::new(&mut ps, &mut rng, &config, spec.fv_channels)?;
        let enc = SinusoidalConfig::new(config.encoding_dim, config.encoding_scale)?;
        let l2l = L2lHead::new(&mut ps, &mut rng, "l2l", config.dim, enc, ablation.baseline_l2l)?;
        let l2t = L2tHead::new(
            &mut ps,
            &mut rng,
            "l2t",
            config.dim,
            spec.fv_channels,
            config.samples,
            config.l2t_pooling,
            ablation.baseline_l2t,
        )?;
        Ok(Self {
            config,
            ablation,
            spec,
            params: ps,
            lane,
            te,
            l2l,
            l2t,
            zero_attention: false,
        })
    }

    pub fn lane_decoder(&self) -> &LaneDecoder {
        &self.lane
    }

    pub fn te_decoder(&self) -> &TeDecoder {
        &self.te
    }

    pub fn l2l_head(&self) -> &L2lHead {
        &self.l2l
    }

    pub fn l2t_head(&self) -> &L2tHead {
        &self.l2t
    }

    fn check_inputs(&self, inputs: &SceneInputs) -> Result<()> {
        if inputs.bev.channels() != self.spec.bev_channels || inputs.fv.channels() != self.spec.fv_channels {
            return Err(Error::shape(
                "model",
                format!(
                    "grids with {}/{} channels for a model built for {}/{}",
                    inputs.bev.channels(),
                    inputs.fv.channels(),
                    self.spec.bev_channels,
                    self.spec.fv_channels
                ),
            ));
        }
        Ok(())
    }

    pub fn lane_forward(&self, g: &Graph, bev: &FeatureGrid) -> Result<LaneDecoderOutput> {
        let v = g.constant(bev.values.clone());
        self.lane.forward(g, bev, v, self.zero_attention)
    }

    pub fn te_forward(&self, g: &Graph, fv: &FeatureGrid) -> Result<TeDecoderOutput> {
        let v = g.constant(fv.values.clone());
        self.te.forward(g, fv, v, self.zero_attention)
    }

    /// Both decoders, then the topology heads on the final-layer outputs.
    pub fn forward(&self, g: &Graph, inputs: &SceneInputs) -> Result<ForwardOutput> {
        if !std::ptr::eq(g.params(), &self.params) && g.params().len() != self.params.len() {
            return Err(Error::invalid("graph is bound to a different parameter set"));
        }
        self.check_inputs(inputs)?;
        let bev_values = g.constant(inputs.bev.values.clone());
        let fv_values = g.constant(inputs.fv.values.clone());
        let lanes = self.lane.forward(g, inputs.bev, bev_values, self.zero_attention)?;
        let tes = self.te.forward(g, inputs.fv, fv_values, self.zero_attention)?;
        let last_lane = *lanes.layers.last().expect("validated layer count");
        let last_te = *tes.layers.last().expect("validated layer count");
        // The heads read geometry as fixed cues; topology supervision moves
        // queries, not curves or boxes.
        let (curves, boxes) = if self.config.detach_topology_geometry {
            (g.detach(last_lane.control_points), g.detach(last_te.boxes))
        } else {
            (last_lane.control_points, last_te.boxes)
        };
        let l2l = self.l2l.forward(g, lanes.queries, curves)?;
        let l2t = self.l2t.forward(
            g,
            lanes.queries,
            curves,
            inputs.camera,
            inputs.fv,
            fv_values,
            tes.queries,
            boxes,
        )?;
        Ok(ForwardOutput { lanes, tes, l2l, l2t })
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, inputs: &SceneInputs) -> Result<Predictions> {
        let g = Graph::inference(&self.params);
        let out = self.forward(&g, inputs)?;
        out.values(&g)
    }
}
