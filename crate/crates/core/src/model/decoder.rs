use rand::Rng;

use super::config::{Ablation, BevExtent, ModelConfig};
use super::grid::FeatureGrid;
use crate::attention::{
    curve_guided_cross_attention, deformable_cross_attention, geometry_biased_self_attention, CurveAttentionParams,
    GeometryBiasParams, MultiHeadAttention,
};
use crate::error::{Error, Result};
use crate::geometry::{sample_curves, SinusoidalConfig};
use crate::numerics::layers::{FeedForward, LayerNorm, Linear, Mlp};
use crate::numerics::{Graph, ParameterSet, Tensor, Var};

fn uniform_param(ps: &mut ParameterSet, rng: &mut impl Rng, name: &str, shape: &[usize], bound: f64) -> Result<String> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    ps.insert(name, Tensor::new(shape.to_vec(), data)?)?;
    Ok(name.to_string())
}

/// Two-layer regression head whose output layer starts at zero, so the
/// first refinement step is the identity.
fn zero_head(ps: &mut ParameterSet, rng: &mut impl Rng, name: &str, dim: usize, out: usize) -> Result<Mlp> {
    Ok(Mlp {
        layers: vec![
            Linear::new(ps, rng, &format!("{name}.0"), dim, dim)?,
            Linear::zeroed(ps, &format!("{name}.1"), dim, out)?,
        ],
    })
}

/// Residual + norm wiring shared by both decoders.
fn residual(g: &Graph, norm: &LayerNorm, x: Var, update: Option<Var>) -> Result<Var> {
    match update {
        Some(u) => norm.forward(g, g.add(x, u)?),
        None => norm.forward(g, x),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LaneLayer {
    bias: GeometryBiasParams,
    self_attn: MultiHeadAttention,
    norm_sa: LayerNorm,
    cross_attn: CurveAttentionParams,
    norm_ca: LayerNorm,
    ffn: FeedForward,
    norm_ffn: LayerNorm,
    regression: Mlp,
    classifier: Linear,
}

/// Per-layer lane outputs on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LaneLayerOutput {
    /// `(N, 4, 3)` control points in meters.
    pub control_points: Var,
    /// `(N, classes)`.
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct LaneDecoderOutput {
    /// Curves before the first layer.
    pub reference: Var,
    pub layers: Vec<LaneLayerOutput>,
    /// Final `(N, C)` lane queries.
    pub queries: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneDecoder {
    queries: String,
    reference: Linear,
    layers: Vec<LaneLayer>,
    extent: BevExtent,
    normalized: bool,
    samples: usize,
    ablation: Ablation,
    num_queries: usize,
}

impl LaneDecoder {
    pub fn new(
        ps: &mut ParameterSet,
        rng: &mut impl Rng,
        cfg: &ModelConfig,
        ablation: Ablation,
        bev_channels: usize,
        extent: BevExtent,
    ) -> Result<Self> {
        let c = cfg.dim;
        let queries = uniform_param(ps, rng, "lane.queries", &[cfg.lane_queries, c], 1.0)?;
        let reference = Linear::new(ps, rng, "lane.reference", c, 12)?;
        let ca_points = if ablation.no_curve_ca { 4 } else { cfg.samples };
        let enc = SinusoidalConfig::new(cfg.encoding_dim, cfg.encoding_scale)?;
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("lane.layer{l}");
                Ok(LaneLayer {
                    bias: GeometryBiasParams::new(ps, rng, &format!("{p}.geometry_bias"), enc, c, cfg.heads, cfg.bias_mode)?,
                    self_attn: MultiHeadAttention::new(ps, rng, &format!("{p}.self_attn"), c, cfg.heads)?,
                    norm_sa: LayerNorm::new(ps, &format!("{p}.norm_sa"), c)?,
                    cross_attn: CurveAttentionParams::new(
                        ps,
                        rng,
                        &format!("{p}.cross_attn"),
                        c,
                        bev_channels,
                        cfg.heads,
                        cfg.offsets,
                        ca_points,
                        cfg.weight_norm,
                    )?,
                    norm_ca: LayerNorm::new(ps, &format!("{p}.norm_ca"), c)?,
                    ffn: FeedForward::new(ps, rng, &format!("{p}.ffn"), c, cfg.ffn_dim)?,
                    norm_ffn: LayerNorm::new(ps, &format!("{p}.norm_ffn"), c)?,
                    regression: zero_head(ps, rng, &format!("{p}.regression"), c, 12)?,
                    classifier: Linear::new(ps, rng, &format!("{p}.classifier"), c, cfg.lane_classes)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            queries,
            reference,
            layers,
            extent,
            normalized: cfg.normalized_coords,
            samples: cfg.samples,
            ablation,
            num_queries: cfg.lane_queries,
        })
    }

    /// Normalized-space activations `(N, 12)` to `(N, 4, 3)` meters.
    pub fn denormalize(&self, g: &Graph, z: Var) -> Result<Var> {
        let n = g.shape(z)[0];
        let unit = if self.normalized { g.sigmoid(z)? } else { z };
        let unit = g.reshape(unit, &[n, 4, 3])?;
        let size = g.constant(Tensor::new(vec![3], self.extent.size().to_vec())?);
        let min = g.constant(Tensor::new(vec![3], self.extent.min().to_vec())?);
        g.add(g.mul(unit, size)?, min)
    }

    pub fn forward(&self, g: &Graph, bev: &FeatureGrid, bev_values: Var, zero_attention: bool) -> Result<LaneDecoderOutput> {
        if bev.frame != super::Frame::Bev {
            return Err(Error::invalid("lane decoder needs a BEV grid"));
        }
        let mut q = g.param(&self.queries)?;
        let mut z = self.reference.forward(g, q)?;
        let reference = self.denormalize(g, z)?;
        let mut curves = reference;
        let mut outputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let sa = if zero_attention {
                None
            } else if self.ablation.plain_sa {
                Some(layer.self_attn.forward(g, q, None)?)
            } else {
                Some(geometry_biased_self_attention(g, q, curves, &layer.bias, &layer.self_attn)?)
            };
            q = residual(g, &layer.norm_sa, q, sa)?;

            let ca = if zero_attention {
                None
            } else if self.ablation.no_curve_ca {
                Some(curve_guided_cross_attention(g, q, curves, bev, bev_values, &layer.cross_attn)?)
            } else {
                let pts = sample_curves(g, curves, self.samples)?;
                Some(curve_guided_cross_attention(g, q, pts, bev, bev_values, &layer.cross_attn)?)
            };
            q = residual(g, &layer.norm_ca, q, ca)?;
            let ff = layer.ffn.forward(g, q)?;
            q = residual(g, &layer.norm_ffn, q, Some(ff))?;

            z = g.add(z, layer.regression.forward(g, q)?)?;
            curves = self.denormalize(g, z)?;
            outputs.push(LaneLayerOutput {
                control_points: curves,
                logits: layer.classifier.forward(g, q)?,
            });
        }
        Ok(LaneDecoderOutput {
            reference,
            layers: outputs,
            queries: q,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TeLayer {
    self_attn: MultiHeadAttention,
    norm_sa: LayerNorm,
    cross_attn: CurveAttentionParams,
    norm_ca: LayerNorm,
    ffn: FeedForward,
    norm_ffn: LayerNorm,
    regression: Mlp,
    classifier: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct TeLayerOutput {
    /// `(M, 4)` normalized `(cx, cy, w, h)`.
    pub boxes: Var,
    /// `(M, classes)`.
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct TeDecoderOutput {
    pub reference: Var,
    pub layers: Vec<TeLayerOutput>,
    pub queries: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeDecoder {
    queries: String,
    reference: Linear,
    layers: Vec<TeLayer>,
    num_queries: usize,
}

impl TeDecoder {
    pub fn new(ps: &mut ParameterSet, rng: &mut impl Rng, cfg: &ModelConfig, fv_channels: usize) -> Result<Self> {
        let c = cfg.dim;
        let queries = uniform_param(ps, rng, "te.queries", &[cfg.te_queries, c], 1.0)?;
        let reference = Linear::new(ps, rng, "te.reference", c, 4)?;
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("te.layer{l}");
                Ok(TeLayer {
                    self_attn: MultiHeadAttention::new(ps, rng, &format!("{p}.self_attn"), c, cfg.heads)?,
                    norm_sa: LayerNorm::new(ps, &format!("{p}.norm_sa"), c)?,
                    cross_attn: CurveAttentionParams::new(
                        ps,
                        rng,
                        &format!("{p}.cross_attn"),
                        c,
                        fv_channels,
                        cfg.heads,
                        cfg.offsets,
                        1,
                        cfg.weight_norm,
                    )?,
                    norm_ca: LayerNorm::new(ps, &format!("{p}.norm_ca"), c)?,
                    ffn: FeedForward::new(ps, rng, &format!("{p}.ffn"), c, cfg.ffn_dim)?,
                    norm_ffn: LayerNorm::new(ps, &format!("{p}.norm_ffn"), c)?,
                    regression: zero_head(ps, rng, &format!("{p}.regression"), c, 4)?,
                    classifier: Linear::new(ps, rng, &format!("{p}.classifier"), c, cfg.te_classes)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            queries,
            reference,
            layers,
            num_queries: cfg.te_queries,
        })
    }

    pub fn forward(&self, g: &Graph, fv: &FeatureGrid, fv_values: Var, zero_attention: bool) -> Result<TeDecoderOutput> {
        if fv.frame != super::Frame::Fv {
            return Err(Error::invalid("traffic-element decoder needs an FV grid"));
        }
        let m = self.num_queries;
        let e = fv.extent;
        let to_pixels = g.constant(Tensor::new(vec![2], vec![e.x_max - e.x_min, e.y_max - e.y_min])?);
        let origin = g.constant(Tensor::new(vec![2], vec![e.x_min, e.y_min])?);
        let mut q = g.param(&self.queries)?;
        let mut b = self.reference.forward(g, q)?;
        let reference = g.sigmoid(b)?;
        let mut boxes = reference;
        let mut outputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let sa = if zero_attention { None } else { Some(layer.self_attn.forward(g, q, None)?) };
            q = residual(g, &layer.norm_sa, q, sa)?;
            let ca = if zero_attention {
                None
            } else {
                let centers = g.add(g.mul(g.slice(boxes, 1, 0, 2)?, to_pixels)?, origin)?;
                let cells = g.reshape(fv.to_grid_var(g, centers)?, &[m, 1, 2])?;
                Some(deformable_cross_attention(g, q, cells, fv_values, &layer.cross_attn)?)
            };
            q = residual(g, &layer.norm_ca, q, ca)?;
            let ff = layer.ffn.forward(g, q)?;
            q = residual(g, &layer.norm_ffn, q, Some(ff))?;
            b = g.add(b, layer.regression.forward(g, q)?)?;
            boxes = g.sigmoid(b)?;
            outputs.push(TeLayerOutput {
                boxes,
                logits: layer.classifier.forward(g, q)?,
            });
        }
        Ok(TeDecoderOutput {
            reference,
            layers: outputs,
            queries: q,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }
}
