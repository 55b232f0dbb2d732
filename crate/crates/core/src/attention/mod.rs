//! Geometry-biased self-attention and curve-guided deformable
//! cross-attention.

mod deformable;
mod self_attention;

pub use deformable::{curve_guided_cross_attention, deformable_cross_attention, CurveAttentionParams, WeightNorm};
pub use self_attention::{
    geometry_bias_matrix, geometry_biased_self_attention, BiasMode, GeometryBiasParams, MultiHeadAttention,
};
