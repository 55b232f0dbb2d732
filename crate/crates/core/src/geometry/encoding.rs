use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Interleaved sin/cos encoding of scalars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidalConfig {
    pub output_dim: usize,
    pub temperature: f64,
    pub input_scale: f64,
}

impl SinusoidalConfig {
    pub fn new(output_dim: usize, input_scale: f64) -> Result<Self> {
        let cfg = Self {
            output_dim,
            temperature: 10_000.0,
            input_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 || self.output_dim % 2 != 0 {
            return Err(Error::invalid(format!("encoding width {} must be even and positive", self.output_dim)));
        }
        if self.temperature <= 0.0 || !self.temperature.is_finite() || !self.input_scale.is_finite() {
            return Err(Error::invalid("encoding temperature must be positive and scale finite"));
        }
        Ok(())
    }

    /// Angular frequency for each output slot (each pair shares one).
    fn frequencies(&self) -> Vec<f64> {
        let d = self.output_dim as f64;
        (0..self.output_dim)
            .map(|i| self.input_scale / self.temperature.powf((2 * (i / 2)) as f64 / d))
            .collect()
    }
}

/// Encodes each value into `output_dim` features
/// `[sin(v·ω₀), cos(v·ω₀), sin(v·ω₁), …]` and concatenates.
pub fn sinusoidal_encode(values: &[f64], cfg: &SinusoidalConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "sinusoidal_encode" });
    }
    let freqs = cfg.frequencies();
    Ok(values
        .iter()
        .flat_map(|v| {
            freqs.iter().enumerate().map(move |(i, w)| {
                let a = v * w;
                if i % 2 == 0 {
                    a.sin()
                } else {
                    a.cos()
                }
            })
        })
        .collect())
}

/// Tape version: `(..., S)` values to `(..., S·output_dim)` features.
pub fn encode_var(tape: &Tape, values: Var, cfg: &SinusoidalConfig) -> Result<Var> {
    cfg.validate()?;
    let shape = tape.shape(values);
    let d = cfg.output_dim;
    let mut expanded = shape.clone();
    expanded.push(1);
    let v = tape.reshape(values, &expanded)?;
    let freqs = tape.constant(Tensor::new(vec![d], cfg.frequencies())?);
    let arg = tape.mul(v, freqs)?;
    let even: Vec<f64> = (0..d).map(|i| f64::from(u8::from(i % 2 == 0))).collect();
    let odd: Vec<f64> = even.iter().map(|e| 1.0 - e).collect();
    let s = tape.mul(tape.sin(arg)?, tape.constant(Tensor::new(vec![d], even)?))?;
    let c = tape.mul(tape.cos(arg)?, tape.constant(Tensor::new(vec![d], odd)?))?;
    let enc = tape.add(s, c)?;
    let mut out = shape;
    match out.last_mut() {
        Some(last) => *last *= d,
        None => out.push(d),
    }
    tape.reshape(enc, &out)
}
