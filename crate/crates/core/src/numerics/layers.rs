//! Parameterized building blocks. Each block remembers the names of its
//! parameters; values live in a [`ParameterSet`] and are bound per forward
//! pass through a [`Graph`].

use rand::Rng;

use super::params::{Graph, ParameterSet};
use super::tape::Var;
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite uniform draws")
}

/// Affine map over the last axis: `x @ W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    weight: String,
    bias: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weight and bias drawn from `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn new(ps: &mut ParameterSet, rng: &mut impl Rng, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = uniform(rng, &[in_dim, out_dim], bound);
        let b = uniform(rng, &[out_dim], bound);
        Self::with_values(ps, name, w, b)
    }

    /// All-zero weight and bias.
    pub fn zeroed(ps: &mut ParameterSet, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_values(ps, name, Tensor::zeros(&[in_dim, out_dim]), Tensor::zeros(&[out_dim]))
    }

    pub fn with_values(ps: &mut ParameterSet, name: &str, weight: Tensor, bias: Tensor) -> Result<Self> {
        let (in_dim, out_dim) = match weight.shape() {
            [i, o] if bias.shape() == [*o] => (*i, *o),
            _ => {
                return Err(Error::shape(
                    "linear",
                    format!("weight {:?} with bias {:?}", weight.shape(), bias.shape()),
                ))
            }
        };
        let l = Self {
            weight: format!("{name}.weight"),
            bias: format!("{name}.bias"),
            in_dim,
            out_dim,
        };
        ps.insert(l.weight.clone(), weight)?;
        ps.insert(l.bias.clone(), bias)?;
        Ok(l)
    }

    pub fn weight_name(&self) -> &str {
        &self.weight
    }

    pub fn bias_name(&self) -> &str {
        &self.bias
    }

    pub fn forward(&self, g: &Graph, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        match shape.last() {
            Some(&d) if d == self.in_dim => {}
            _ => {
                return Err(Error::shape(
                    "linear",
                    format!("input {shape:?} for in_dim {}", self.in_dim),
                ))
            }
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let flat = if shape.len() == 2 { x } else { g.reshape(x, &[rows, self.in_dim])? };
        let y = g.matmul(flat, g.param(&self.weight)?)?;
        let y = g.add(y, g.param(&self.bias)?)?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out = shape;
        *out.last_mut().expect("non-empty") = self.out_dim;
        g.reshape(y, &out)
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`.
    pub fn new(ps: &mut ParameterSet, rng: &mut impl Rng, name: &str, dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("an MLP needs at least input and output widths"));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(ps, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, g: &Graph, mut x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, x)?;
            if i < last {
                x = g.relu(x)?;
            }
        }
        Ok(x)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }
}

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    gain: String,
    bias: String,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParameterSet, name: &str, dim: usize) -> Result<Self> {
        let ln = Self {
            gain: format!("{name}.gain"),
            bias: format!("{name}.bias"),
            eps: 1e-5,
        };
        ps.insert(ln.gain.clone(), Tensor::ones(&[dim]))?;
        ps.insert(ln.bias.clone(), Tensor::zeros(&[dim]))?;
        Ok(ln)
    }

    pub fn forward(&self, g: &Graph, x: Var) -> Result<Var> {
        let n = g.layer_norm(x, self.eps)?;
        let n = g.mul(n, g.param(&self.gain)?)?;
        g.add(n, g.param(&self.bias)?)
    }
}

/// Position-wise feed-forward block `Linear -> ReLU -> Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub mlp: Mlp,
}

impl FeedForward {
    pub fn new(ps: &mut ParameterSet, rng: &mut impl Rng, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(ps, rng, name, &[dim, hidden, dim])?,
        })
    }

    pub fn forward(&self, g: &Graph, x: Var) -> Result<Var> {
        self.mlp.forward(g, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_handles_batched_inputs() {
        let mut ps = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::new(&mut ps, &mut rng, "l", 3, 5).unwrap();
        let bound = 1.0 / 3f64.sqrt();
        assert!(ps.get("l.weight").unwrap().data().iter().all(|v| v.abs() <= bound));
        let g = Graph::new(&ps);
        let x = g.constant(Tensor::ones(&[2, 4, 3]));
        let y = l.forward(&g, x).unwrap();
        assert_eq!(g.shape(y), vec![2, 4, 5]);
    }
}
