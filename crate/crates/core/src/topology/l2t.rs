use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{broadcast_concat, RelationEmbedding, RelationKind};
use crate::error::{Error, Result};
use crate::geometry::{encode_var, sample_curves, CameraModel, SinusoidalConfig};
use crate::model::FeatureGrid;
use crate::numerics::layers::{Linear, Mlp};
use crate::numerics::{Graph, ParameterSet, Tensor, Var};

/// Aggregation of FV features over a lane's projected points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

const MASK_FILL: f64 = 1e6;

/// Lane-to-traffic-element head with front-view alignment of lanes. With
/// `baseline` set, the FV features and 2D positional terms are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct L2tHead {
    pub mlp_lane: Mlp,
    pub mlp_te: Mlp,
    pub fv_embed: Linear,
    pub pair: Linear,
    pub out: Mlp,
    pub encoding: SinusoidalConfig,
    pub samples: usize,
    pub pooling: Pooling,
    pub baseline: bool,
    pub dim: usize,
}

/// Per-lane FV alignment terms, each `(N, C)`.
pub struct Alignment {
    pub features: Var,
    pub position: Var,
    pub visible_points: Vec<usize>,
}

impl L2tHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParameterSet,
        rng: &mut impl Rng,
        name: &str,
        dim: usize,
        fv_channels: usize,
        samples: usize,
        pooling: Pooling,
        baseline: bool,
    ) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::invalid("lane-to-element head needs an even width"));
        }
        Ok(Self {
            mlp_lane: Mlp::new(ps, rng, &format!("{name}.mlp_lane"), &[dim, dim, dim])?,
            mlp_te: Mlp::new(ps, rng, &format!("{name}.mlp_te"), &[dim, dim, dim])?,
            fv_embed: Linear::new(ps, rng, &format!("{name}.fv_embed"), fv_channels, dim)?,
            pair: Linear::new(ps, rng, &format!("{name}.pair"), 2 * dim, dim)?,
            out: Mlp::new(ps, rng, &format!("{name}.out"), &[dim, dim, 1])?,
            encoding: SinusoidalConfig::new(dim / 2, 16.0 * std::f64::consts::PI)?,
            samples,
            pooling,
            baseline,
            dim,
        })
    }

    /// Projects each lane's on-curve samples into the image, pools the FV
    /// features at visible points, and encodes the mean visible pixel.
    /// Lanes without visible points get zero vectors.
    pub fn align(
        &self,
        g: &Graph,
        control_points: Var,
        camera: &CameraModel,
        fv: &FeatureGrid,
        fv_values: Var,
    ) -> Result<Alignment> {
        let n = g.shape(control_points)[0];
        let k = self.samples;
        let pts = sample_curves(g, control_points, k)?;
        let (uv, mask) = camera.project_var(g, g.reshape(pts, &[n * k, 3])?)?;
        let visible: Vec<usize> = mask.chunks(k).map(|m| m.iter().filter(|&&v| v).count()).collect();
        let mask_t = g.constant(Tensor::new(
            vec![n, k, 1],
            mask.iter().map(|&m| f64::from(u8::from(m))).collect(),
        )?);
        let any = g.constant(Tensor::new(
            vec![n, 1],
            visible.iter().map(|&c| f64::from(u8::from(c > 0))).collect(),
        )?);
        let inv_count = g.constant(Tensor::new(
            vec![n, 1],
            visible.iter().map(|&c| 1.0 / c.max(1) as f64).collect(),
        )?);

        let embedded = self.fv_embed.forward(g, fv_values)?;
        let cells = fv.to_grid_var(g, uv)?;
        let sampled = g.reshape(g.bilinear_sample(embedded, cells)?, &[n, k, self.dim])?;
        let features = match self.pooling {
            Pooling::Mean => g.mul(g.sum_axis(g.mul(sampled, mask_t)?, 1)?, inv_count)?,
            Pooling::Max => {
                let fill = g.scale(g.rsub_scalar(1.0, mask_t)?, MASK_FILL)?;
                let masked = g.sub(fill, sampled)?;
                let max = g.neg(g.min_axis(masked, 1)?)?;
                g.mul(max, any)?
            }
        };

        let (w, h) = camera.image_size;
        let norm = g.constant(Tensor::new(vec![2], vec![1.0 / f64::from(w), 1.0 / f64::from(h)])?);
        let uvn = g.reshape(g.mul(uv, norm)?, &[n, k, 2])?;
        let mean_uv = g.mul(g.sum_axis(g.mul(uvn, mask_t)?, 1)?, inv_count)?;
        let position = g.mul(encode_var(g, mean_uv, &self.encoding)?, any)?;
        Ok(Alignment {
            features,
            position,
            visible_points: visible,
        })
    }

    /// Positional encoding of normalized `(M, 4)` box centers.
    pub fn box_position(&self, g: &Graph, boxes: Var) -> Result<Var> {
        let centers = g.slice(boxes, 1, 0, 2)?;
        encode_var(g, centers, &self.encoding)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn relation_embedding(
        &self,
        g: &Graph,
        lane_queries: Var,
        control_points: Var,
        camera: &CameraModel,
        fv: &FeatureGrid,
        fv_values: Var,
        te_queries: Var,
        te_boxes: Var,
    ) -> Result<RelationEmbedding> {
        let mut lane = self.mlp_lane.forward(g, lane_queries)?;
        let mut te = self.mlp_te.forward(g, te_queries)?;
        if !self.baseline {
            let a = self.align(g, control_points, camera, fv, fv_values)?;
            lane = g.add(g.add(lane, a.features)?, a.position)?;
            te = g.add(te, self.box_position(g, te_boxes)?)?;
        }
        let values = self.pair.forward(g, broadcast_concat(g, lane, te)?)?;
        Ok(RelationEmbedding {
            values,
            kind: RelationKind::L2t,
        })
    }

    /// `(N_lane, N_te)` logits.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &Graph,
        lane_queries: Var,
        control_points: Var,
        camera: &CameraModel,
        fv: &FeatureGrid,
        fv_values: Var,
        te_queries: Var,
        te_boxes: Var,
    ) -> Result<Var> {
        let rel = self.relation_embedding(g, lane_queries, control_points, camera, fv, fv_values, te_queries, te_boxes)?;
        let s = g.shape(rel.values);
        let logits = self.out.forward(g, rel.values)?;
        g.reshape(logits, &s[..2])
    }
}
