use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{encode_var, pairwise_relations, SinusoidalConfig};
use crate::numerics::layers::{Linear, Mlp};
use crate::numerics::{Graph, ParameterSet, Var};

/// How many bias values the geometry encoder emits per lane pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// One bias per attention head.
    #[default]
    PerHead,
    /// One bias broadcast to every head.
    Shared,
}

/// Encoder mapping pairwise (distance, angle) to attention biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryBiasParams {
    pub encoding: SinusoidalConfig,
    pub mlp: Mlp,
    pub heads: usize,
    pub mode: BiasMode,
}

impl GeometryBiasParams {
    pub fn new(
        ps: &mut ParameterSet,
        rng: &mut impl Rng,
        name: &str,
        encoding: SinusoidalConfig,
        hidden: usize,
        heads: usize,
        mode: BiasMode,
    ) -> Result<Self> {
        let out = match mode {
            BiasMode::PerHead => heads,
            BiasMode::Shared => 1,
        };
        let mlp = Mlp::new(ps, rng, name, &[2 * encoding.output_dim, hidden, out])?;
        Ok(Self {
            encoding,
            mlp,
            heads,
            mode,
        })
    }
}

/// `(heads, N, N)` additive bias from `(N,4,3)` control points.
pub fn geometry_bias_matrix(g: &Graph, control_points: Var, params: &GeometryBiasParams) -> Result<Var> {
    let n = g.shape(control_points)[0];
    let (dist, angle) = pairwise_relations(g, control_points)?;
    let rel = g.concat(&[g.reshape(dist, &[n, n, 1])?, g.reshape(angle, &[n, n, 1])?], 2)?;
    let enc = encode_var(g, rel, &params.encoding)?;
    let bias = params.mlp.forward(g, enc)?;
    let bias = g.permute(bias, &[2, 0, 1])?;
    match params.mode {
        BiasMode::PerHead => Ok(bias),
        BiasMode::Shared => g.broadcast_to(bias, &[params.heads, n, n]),
    }
}

/// Multi-head attention with an optional per-head additive logit bias.
/// Logits are scaled by `1/sqrt(d_model)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParameterSet, rng: &mut impl Rng, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::invalid(format!("width {dim} is not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(ps, rng, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(ps, rng, &format!("{name}.k"), dim, dim)?,
            v: Linear::new(ps, rng, &format!("{name}.v"), dim, dim)?,
            out: Linear::new(ps, rng, &format!("{name}.out"), dim, dim)?,
            heads,
            dim,
        })
    }

    fn split_heads(&self, g: &Graph, x: Var, n: usize) -> Result<Var> {
        let x = g.reshape(x, &[n, self.heads, self.dim / self.heads])?;
        g.permute(x, &[1, 0, 2])
    }

    /// Self-attention over `(N,C)` tokens; `bias` is `(heads,N,N)`.
    pub fn forward(&self, g: &Graph, x: Var, bias: Option<Var>) -> Result<Var> {
        let shape = g.shape(x);
        let n = match shape.as_slice() {
            [n, c] if *c == self.dim => *n,
            _ => return Err(Error::shape("self_attention", format!("{shape:?} for width {}", self.dim))),
        };
        let q = self.split_heads(g, self.q.forward(g, x)?, n)?;
        let k = self.split_heads(g, self.k.forward(g, x)?, n)?;
        let v = self.split_heads(g, self.v.forward(g, x)?, n)?;
        let logits = g.matmul(q, g.transpose(k)?)?;
        let mut logits = g.scale(logits, 1.0 / (self.dim as f64).sqrt())?;
        if let Some(b) = bias {
            let bs = g.shape(b);
            if bs != [self.heads, n, n] {
                return Err(Error::shape("self_attention", format!("bias {bs:?} for {} heads, {n} tokens", self.heads)));
            }
            logits = g.add(logits, b)?;
        }
        let attn = g.softmax_lastdim(logits)?;
        let ctx = g.matmul(attn, v)?;
        let ctx = g.permute(ctx, &[1, 0, 2])?;
        let ctx = g.reshape(ctx, &[n, self.dim])?;
        self.out.forward(g, ctx)
    }
}

/// Self-attention among lane queries biased by their pairwise geometry.
pub fn geometry_biased_self_attention(
    g: &Graph,
    queries: Var,
    control_points: Var,
    bias_params: &GeometryBiasParams,
    attention: &MultiHeadAttention,
) -> Result<Var> {
    let nq = g.shape(queries)[0];
    let nl = g.shape(control_points)[0];
    if nq != nl {
        return Err(Error::shape("geometry_biased_self_attention", format!("{nq} queries vs {nl} lanes")));
    }
    let bias = geometry_bias_matrix(g, control_points, bias_params)?;
    attention.forward(g, queries, Some(bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_lanes(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        let data = (0..n * 12).map(|_| rng.gen_range(-20.0..20.0)).collect();
        Tensor::new(vec![n, 4, 3], data).unwrap()
    }

    #[test]
    fn bias_is_symmetric_per_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mode in [BiasMode::PerHead, BiasMode::Shared] {
            let mut ps = ParameterSet::new();
            let enc = SinusoidalConfig::new(16, 0.1).unwrap();
            let params = GeometryBiasParams::new(&mut ps, &mut rng, "bias", enc, 16, 4, mode).unwrap();
            let g = Graph::inference(&ps);
            let cp = g.constant(random_lanes(&mut rng, 7));
            let bias = g.value(geometry_bias_matrix(&g, cp, &params).unwrap()).clone();
            assert_eq!(bias.shape(), [4, 7, 7]);
            for h in 0..4 {
                for i in 0..7 {
                    for j in 0..7 {
                        assert!((bias.at(&[h, i, j]) - bias.at(&[h, j, i])).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParameterSet::new();
        let attn = MultiHeadAttention::new(&mut ps, &mut rng, "attn", 8, 2).unwrap();
        let g = Graph::inference(&ps);
        let x = g.constant(Tensor::new(vec![5, 8], (0..40).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap());
        assert_eq!(g.shape(attn.forward(&g, x, None).unwrap()), [5, 8]);
        let bad_bias = g.constant(Tensor::zeros(&[2, 4, 4]));
        assert!(matches!(attn.forward(&g, x, Some(bad_bias)), Err(Error::Shape { .. })));

        let logits = g.constant(Tensor::new(vec![3, 4, 6], (0..72).map(|_| rng.gen_range(-30.0..30.0)).collect()).unwrap());
        let p = g.value(g.softmax_lastdim(logits).unwrap()).clone();
        for row in p.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
