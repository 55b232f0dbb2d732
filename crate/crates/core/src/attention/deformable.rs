use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureGrid;
use crate::numerics::layers::Linear;
use crate::numerics::{Graph, ParameterSet, Tensor, Var};

/// Normalization of deformable sampling weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightNorm {
    /// Softmax over all K·N sampling locations of a head.
    #[default]
    Joint,
    /// Softmax over the N offsets of each reference point, then divided by K.
    PerPoint,
}

/// Deformable cross-attention around K reference points per query.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveAttentionParams {
    pub heads: usize,
    pub offsets_per_point: usize,
    pub points: usize,
    pub dim: usize,
    pub offsets: Linear,
    pub weights: Linear,
    pub value: Linear,
    pub out: Linear,
    pub offset_scale: String,
    pub norm: WeightNorm,
}

impl CurveAttentionParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParameterSet,
        rng: &mut impl Rng,
        name: &str,
        dim: usize,
        grid_channels: usize,
        heads: usize,
        offsets_per_point: usize,
        points: usize,
        norm: WeightNorm,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 || offsets_per_point == 0 || points == 0 {
            return Err(Error::invalid(format!(
                "invalid deformable attention layout: width {dim}, {heads} heads, {offsets_per_point} offsets, {points} points"
            )));
        }
        let (m, k, n) = (heads, points, offsets_per_point);
        // Offsets start as a small rosette so the N samples of a point differ.
        let mut bias = Vec::with_capacity(m * k * n * 2);
        for h in 0..m {
            let theta = 2.0 * std::f64::consts::PI * h as f64 / m as f64;
            for _ in 0..k {
                for j in 0..n {
                    let r = 0.5 * (j + 1) as f64;
                    bias.extend_from_slice(&[r * theta.sin(), r * theta.cos()]);
                }
            }
        }
        let offsets = Linear::with_values(
            ps,
            &format!("{name}.offsets"),
            Tensor::zeros(&[dim, m * k * n * 2]),
            Tensor::new(vec![m * k * n * 2], bias)?,
        )?;
        let weights = Linear::zeroed(ps, &format!("{name}.weights"), dim, m * k * n)?;
        let value = Linear::new(ps, rng, &format!("{name}.value"), grid_channels, dim)?;
        let out = Linear::new(ps, rng, &format!("{name}.out"), dim, dim)?;
        let offset_scale = format!("{name}.offset_scale");
        ps.insert(offset_scale.clone(), Tensor::ones(&[m]))?;
        Ok(Self {
            heads,
            offsets_per_point,
            points,
            dim,
            offsets,
            weights,
            value,
            out,
            offset_scale,
            norm,
        })
    }

    /// Normalized sampling weights `(Q, heads, K·N)`.
    pub fn attention_weights(&self, g: &Graph, queries: Var) -> Result<Var> {
        let q = g.shape(queries)[0];
        let (m, k, n) = (self.heads, self.points, self.offsets_per_point);
        let raw = self.weights.forward(g, queries)?;
        match self.norm {
            WeightNorm::Joint => g.softmax_lastdim(g.reshape(raw, &[q, m, k * n])?),
            WeightNorm::PerPoint => {
                let w = g.softmax_lastdim(g.reshape(raw, &[q, m, k, n])?)?;
                g.reshape(g.scale(w, 1.0 / k as f64)?, &[q, m, k * n])
            }
        }
    }
}

/// Cross-attention of `(Q,C)` queries into `grid`, sampling around
/// `(Q,K,2)` reference points given as continuous `(row, col)` grid
/// coordinates. Returns `(Q,C)`.
pub fn deformable_cross_attention(
    g: &Graph,
    queries: Var,
    reference: Var,
    grid: Var,
    params: &CurveAttentionParams,
) -> Result<Var> {
    let (m, k, n, c) = (params.heads, params.points, params.offsets_per_point, params.dim);
    let qs = g.shape(queries);
    let q = match qs.as_slice() {
        [q, d] if *d == c => *q,
        _ => return Err(Error::shape("deformable_attention", format!("queries {qs:?} for width {c}"))),
    };
    let rs = g.shape(reference);
    if rs != [q, k, 2] {
        return Err(Error::shape(
            "deformable_attention",
            format!("reference points {rs:?}, expected [{q}, {k}, 2]"),
        ));
    }
    let dh = c / m;

    let value = params.value.forward(g, grid)?;
    let scale = g.reshape(g.param(&params.offset_scale)?, &[1, m, 1, 1, 1])?;
    let offsets = g.reshape(params.offsets.forward(g, queries)?, &[q, m, k, n, 2])?;
    let offsets = g.mul(offsets, scale)?;
    let loc = g.add(g.reshape(reference, &[q, 1, k, 1, 2])?, offsets)?;
    let weights = params.attention_weights(g, queries)?;

    let mut heads = Vec::with_capacity(m);
    for h in 0..m {
        let v = g.slice(value, 2, h * dh, (h + 1) * dh)?;
        let pts = g.reshape(g.slice(loc, 1, h, h + 1)?, &[q * k * n, 2])?;
        let sampled = g.reshape(g.bilinear_sample(v, pts)?, &[q, k * n, dh])?;
        let w = g.reshape(g.slice(weights, 1, h, h + 1)?, &[q, 1, k * n])?;
        heads.push(g.reshape(g.matmul(w, sampled)?, &[q, dh])?);
    }
    let ctx = g.concat(&heads, 1)?;
    params.out.forward(g, ctx)
}

/// Curve-guided cross-attention for a batch of lanes: reference points are
/// the K on-curve samples `(Q,K,3)` (meters) mapped into the BEV grid.
pub fn curve_guided_cross_attention(
    g: &Graph,
    queries: Var,
    curve_points: Var,
    grid: &FeatureGrid,
    grid_values: Var,
    params: &CurveAttentionParams,
) -> Result<Var> {
    let s = g.shape(curve_points);
    match s.as_slice() {
        [_, k, 3] if *k == params.points => {}
        _ => {
            return Err(Error::shape(
                "curve_guided_cross_attention",
                format!("curve samples {s:?} for K = {}", params.points),
            ))
        }
    }
    let xy = g.slice(curve_points, 2, 0, 2)?;
    let reference = grid.to_grid_var(g, xy)?;
    deformable_cross_attention(g, queries, reference, grid_values, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn weights_sum_to_one_per_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for norm in [WeightNorm::Joint, WeightNorm::PerPoint] {
            let mut ps = ParameterSet::new();
            let params = CurveAttentionParams::new(&mut ps, &mut rng, "ca", 16, 3, 4, 3, 5, norm).unwrap();
            // Non-zero weight projections so the softmax is not uniform.
            for (name, t) in ps.iter_mut() {
                if name.starts_with("ca.weights.") {
                    *t = random(&mut rng, &t.shape().to_vec(), -2.0, 2.0);
                }
            }
            let g = Graph::inference(&ps);
            let q = g.constant(random(&mut rng, &[6, 16], -2.0, 2.0));
            let w = g.value(params.attention_weights(&g, q).unwrap()).clone();
            assert_eq!(w.shape(), [6, 4, 15]);
            for row in w.data().chunks(15) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_grid_gives_projected_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ps = ParameterSet::new();
        let params = CurveAttentionParams::new(&mut ps, &mut rng, "ca", 8, 3, 2, 2, 4, WeightNorm::Joint).unwrap();
        let g = Graph::inference(&ps);
        let feature = [0.3, -1.2, 0.7];
        let grid = g.constant(Tensor::new(vec![16, 16, 3], feature.repeat(256)).unwrap());
        let q = g.constant(random(&mut rng, &[5, 8], -1.0, 1.0));
        // Reference points stay clear of the zero-padded border.
        let refs = g.constant(random(&mut rng, &[5, 4, 2], 4.0, 11.0));
        let out = g.value(deformable_cross_attention(&g, q, refs, grid, &params).unwrap()).clone();
        let one = g.constant(Tensor::new(vec![1, 3], feature.to_vec()).unwrap());
        let expected = g.value(params.out.forward(&g, params.value.forward(&g, one).unwrap()).unwrap()).clone();
        for row in out.data().chunks(8) {
            for (a, b) in row.iter().zip(expected.data()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_bad_layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParameterSet::new();
        assert!(CurveAttentionParams::new(&mut ps, &mut rng, "ca", 9, 3, 2, 2, 4, WeightNorm::Joint).is_err());
        let params = CurveAttentionParams::new(&mut ps, &mut rng, "ok", 8, 3, 2, 2, 4, WeightNorm::Joint).unwrap();
        let g = Graph::inference(&ps);
        let q = g.constant(Tensor::zeros(&[2, 8]));
        let refs = g.constant(Tensor::zeros(&[2, 3, 2]));
        let grid = g.constant(Tensor::zeros(&[4, 4, 3]));
        assert!(matches!(
            deformable_cross_attention(&g, q, refs, grid, &params),
            Err(Error::Shape { .. })
        ));
    }
}
