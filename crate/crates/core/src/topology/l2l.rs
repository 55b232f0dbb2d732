use rand::Rng;

use super::{broadcast_concat, endpoints_xy, RelationEmbedding, RelationKind};
use crate::error::{Error, Result};
use crate::geometry::{encode_var, SinusoidalConfig};
use crate::numerics::layers::{Linear, Mlp};
use crate::numerics::{Graph, ParameterSet, Var};

/// Lane-to-lane head. With `baseline` set, positional and distance cues
/// are dropped and only the broadcast-concatenated queries are used.
#[derive(Debug, Clone, PartialEq)]
pub struct L2lHead {
    pub mlp_pred: Mlp,
    pub mlp_succ: Mlp,
    pub pair: Linear,
    pub pe_start: Linear,
    pub pe_end: Linear,
    pub dist: Mlp,
    pub out: Mlp,
    pub position_encoding: SinusoidalConfig,
    pub distance_encoding: SinusoidalConfig,
    pub baseline: bool,
    pub dim: usize,
}

impl L2lHead {
    pub fn new(
        ps: &mut ParameterSet,
        rng: &mut impl Rng,
        name: &str,
        dim: usize,
        encoding: SinusoidalConfig,
        baseline: bool,
    ) -> Result<Self> {
        let e = encoding.output_dim;
        Ok(Self {
            mlp_pred: Mlp::new(ps, rng, &format!("{name}.mlp_pred"), &[dim, dim, dim])?,
            mlp_succ: Mlp::new(ps, rng, &format!("{name}.mlp_succ"), &[dim, dim, dim])?,
            pair: Linear::new(ps, rng, &format!("{name}.pair"), 2 * dim, dim)?,
            pe_start: Linear::new(ps, rng, &format!("{name}.pe_start"), 2 * e, dim)?,
            pe_end: Linear::new(ps, rng, &format!("{name}.pe_end"), 2 * e, dim)?,
            dist: Mlp::new(ps, rng, &format!("{name}.dist"), &[e, dim, dim])?,
            out: Mlp::new(ps, rng, &format!("{name}.out"), &[dim, dim, 1])?,
            position_encoding: encoding,
            distance_encoding: encoding,
            baseline,
            dim,
        })
    }

    /// `G = pair(MLP(Q_i) © MLP(Q_j)) + PE_end(i) + PE_start(j)`.
    pub fn relation_embedding(&self, g: &Graph, queries: Var, control_points: Var) -> Result<RelationEmbedding> {
        let n = g.shape(queries)[0];
        if n == 0 {
            return Err(Error::invalid("lane-to-lane head needs at least one lane"));
        }
        let pred = self.mlp_pred.forward(g, queries)?;
        let succ = self.mlp_succ.forward(g, queries)?;
        let mut rel = self.pair.forward(g, broadcast_concat(g, pred, succ)?)?;
        if !self.baseline {
            let (start, end) = endpoints_xy(g, control_points)?;
            let pe_end = self.pe_end.forward(g, encode_var(g, end, &self.position_encoding)?)?;
            let pe_start = self.pe_start.forward(g, encode_var(g, start, &self.position_encoding)?)?;
            rel = g.add(rel, g.reshape(pe_end, &[n, 1, self.dim])?)?;
            rel = g.add(rel, g.reshape(pe_start, &[1, n, self.dim])?)?;
        }
        Ok(RelationEmbedding {
            values: rel,
            kind: RelationKind::L2l,
        })
    }

    /// Entry `(i, j)` embeds the BEV gap from lane i's end to lane j's start.
    pub fn dist_embed(&self, g: &Graph, control_points: Var) -> Result<Var> {
        let (start, end) = endpoints_xy(g, control_points)?;
        let n = g.shape(start)[0];
        let gap = g.sub(g.reshape(end, &[n, 1, 2])?, g.reshape(start, &[1, n, 2])?)?;
        let gap = g.norm_lastdim(gap)?;
        let gap = g.reshape(gap, &[n, n, 1])?;
        self.dist.forward(g, encode_var(g, gap, &self.distance_encoding)?)
    }

    /// `(N, N)` logits from a relation block and optional distance block.
    pub fn predict(&self, g: &Graph, rel: &RelationEmbedding, dist: Option<Var>) -> Result<Var> {
        let s = g.shape(rel.values);
        let x = match dist {
            Some(d) => {
                let ds = g.shape(d);
                if ds != s {
                    return Err(Error::shape("l2l_predict", format!("{s:?} vs {ds:?}")));
                }
                g.add(rel.values, d)?
            }
            None => rel.values,
        };
        let logits = self.out.forward(g, x)?;
        g.reshape(logits, &s[..2])
    }

    pub fn forward(&self, g: &Graph, queries: Var, control_points: Var) -> Result<Var> {
        let rel = self.relation_embedding(g, queries, control_points)?;
        let dist = if self.baseline {
            None
        } else {
            Some(self.dist_embed(g, control_points)?)
        };
        self.predict(g, &rel, dist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distance_cue_is_directed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParameterSet::new();
        let enc = SinusoidalConfig::new(8, 0.1).unwrap();
        let head = L2lHead::new(&mut ps, &mut rng, "l2l", 8, enc, false).unwrap();
        let g = Graph::inference(&ps);
        // Lane 1 starts where lane 0 ends.
        let straight = |x0: f64| (0..4).flat_map(move |k| [x0 + 10.0 * k as f64 / 3.0, 0.0, 0.0]);
        let cp = g.constant(Tensor::new(vec![2, 4, 3], straight(0.0).chain(straight(10.0)).collect()).unwrap());
        let d = g.value(head.dist_embed(&g, cp).unwrap()).clone();
        let c = d.shape()[2];
        let row = |i: usize, j: usize| (0..c).map(|k| d.at(&[i, j, k])).collect::<Vec<_>>();
        assert_ne!(row(0, 1), row(1, 0));

        let q = g.constant(Tensor::new(vec![2, 8], (0..16).map(|i| i as f64 / 16.0).collect()).unwrap());
        assert_eq!(g.shape(head.forward(&g, q, cp).unwrap()), [2, 2]);
    }
}
