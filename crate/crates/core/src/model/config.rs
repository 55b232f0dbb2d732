use serde::{Deserialize, Serialize};

use crate::attention::{BiasMode, WeightNorm};
use crate::error::{Error, Result};
use crate::topology::Pooling;

/// Decoder and head sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub lane_queries: usize,
    pub te_queries: usize,
    pub dim: usize,
    pub heads: usize,
    pub offsets: usize,
    pub samples: usize,
    pub ffn_dim: usize,
    pub lane_classes: usize,
    pub te_classes: usize,
    /// Sinusoidal width per encoded scalar for geometric cues.
    pub encoding_dim: usize,
    /// Input scale applied to meters/radians before encoding.
    pub encoding_scale: f64,
    /// Predict curves in sigmoid-bounded normalized coordinates; when false
    /// the normalized coordinates are unbounded (identity activation).
    pub normalized_coords: bool,
    pub bias_mode: BiasMode,
    pub weight_norm: WeightNorm,
    pub l2t_pooling: Pooling,
    /// Feed the topology heads stop-gradient copies of the final curves
    /// and boxes, so relation losses only train queries and head weights.
    pub detach_topology_geometry: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            lane_queries: 20,
            te_queries: 8,
            dim: 32,
            heads: 4,
            offsets: 2,
            samples: 11,
            ffn_dim: 64,
            lane_classes: 1,
            te_classes: 3,
            encoding_dim: 16,
            encoding_scale: 1.0,
            normalized_coords: true,
            bias_mode: BiasMode::PerHead,
            weight_norm: WeightNorm::Joint,
            l2t_pooling: Pooling::Mean,
            detach_topology_geometry: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return fail("model.layers must be at least 1".into());
        }
        if self.samples < 2 || self.samples % 2 == 0 {
            return fail(format!("model.samples must be odd and >= 3, got {}", self.samples));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return fail(format!("model.dim {} must be divisible by model.heads {}", self.dim, self.heads));
        }
        if self.dim % 2 != 0 {
            return fail("model.dim must be even".into());
        }
        if self.encoding_dim == 0 || self.encoding_dim % 2 != 0 {
            return fail("model.encoding_dim must be even and positive".into());
        }
        if self.lane_queries == 0 || self.te_queries == 0 || self.offsets == 0 {
            return fail("query and offset counts must be positive".into());
        }
        if self.lane_classes == 0 || self.te_classes == 0 || self.ffn_dim == 0 {
            return fail("class counts and ffn width must be positive".into());
        }
        if !(self.encoding_scale.is_finite() && self.encoding_scale > 0.0) {
            return fail("model.encoding_scale must be positive".into());
        }
        Ok(())
    }
}

/// Component switches for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Standard self-attention without geometry bias.
    pub plain_sa: bool,
    /// Cross-attention references the 4 control points instead of K curve
    /// samples.
    pub no_curve_ca: bool,
    /// Lane-to-lane head without positional and distance cues.
    pub baseline_l2l: bool,
    /// Lane-to-element head without front-view alignment.
    pub baseline_l2t: bool,
    /// Drop the contrastive topology loss.
    pub no_contrastive: bool,
}

impl Ablation {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn baseline() -> Self {
        Self {
            plain_sa: true,
            no_curve_ca: true,
            baseline_l2l: true,
            baseline_l2t: true,
            no_contrastive: true,
        }
    }

    /// Short label listing enabled components.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if !self.plain_sa {
            parts.push("SA");
        }
        if !self.no_curve_ca {
            parts.push("CA");
        }
        if !self.baseline_l2l {
            parts.push("L2L");
        }
        if !self.baseline_l2t {
            parts.push("L2T");
        }
        if !self.no_contrastive {
            parts.push("NCE");
        }
        if parts.is_empty() {
            "baseline".into()
        } else {
            parts.join("+")
        }
    }
}

/// Metric box covered by the BEV grid; curve coordinates are normalized
/// against it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BevExtent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for BevExtent {
    fn default() -> Self {
        Self {
            x_min: -10.0,
            x_max: 30.0,
            y_min: -10.0,
            y_max: 10.0,
            z_min: -2.0,
            z_max: 2.0,
        }
    }
}

impl BevExtent {
    pub fn validate(&self) -> Result<()> {
        let v = [self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max];
        if v.iter().any(|x| !x.is_finite())
            || self.x_max <= self.x_min
            || self.y_max <= self.y_min
            || self.z_max <= self.z_min
        {
            return Err(Error::Config(format!("degenerate BEV extent {self:?}")));
        }
        Ok(())
    }

    pub fn min(&self) -> [f64; 3] {
        [self.x_min, self.y_min, self.z_min]
    }

    pub fn size(&self) -> [f64; 3] {
        [self.x_max - self.x_min, self.y_max - self.y_min, self.z_max - self.z_min]
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (self.x_min..=self.x_max).contains(&p[0])
            && (self.y_min..=self.y_max).contains(&p[1])
            && (self.z_min..=self.z_max).contains(&p[2])
    }

    pub fn normalize(&self, p: &[f64; 3]) -> [f64; 3] {
        let (m, s) = (self.min(), self.size());
        std::array::from_fn(|i| (p[i] - m[i]) / s[i])
    }

    pub fn grid_extent(&self) -> super::GridExtent {
        super::GridExtent {
            x_min: self.x_min,
            x_max: self.x_max,
            y_min: self.y_min,
            y_max: self.y_max,
        }
    }
}

/// Shapes of the inputs a model is built for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputSpec {
    pub bev_channels: usize,
    pub fv_channels: usize,
    pub bev_extent: BevExtent,
}
