//! Central finite-difference gradient checks.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::{Graph, ParameterSet};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is ~0 are compared absolutely.
    pub floor: f64,
    /// Per-tensor cap on checked coordinates; larger tensors are subsampled.
    pub max_coords: usize,
    pub seed: u64,
    /// Times a failing coordinate is retried with the step divided by 10.
    /// A kink inside the stencil (ReLU, |x|, a bilinear cell edge) stops
    /// mattering once the step is small enough; a wrong gradient does not.
    pub refinements: usize,
    /// Test hook: analytic gradients are scaled by `1 + corrupt`, either
    /// wholesale or, with `corrupt_op` set, only through that operation's
    /// backward pass.
    pub corrupt: f64,
    pub corrupt_op: Option<&'static str>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-4,
            max_coords: 24,
            seed: 0,
            refinements: 2,
            corrupt: 0.0,
            corrupt_op: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
    /// Coordinates that needed a smaller step.
    pub coords_refined: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.coords_checked += other.coords_checked;
        self.coords_refined += other.coords_refined;
    }
}

impl Default for GradCheckReport {
    fn default() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: None,
            coords_checked: 0,
            coords_refined: 0,
        }
    }
}

const REFINE_ABOVE: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks d loss / d params for a scalar function built on a [`Graph`].
pub fn check_params<F>(params: &ParameterSet, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Graph) -> Result<Var>,
{
    let graph = Graph::new(params);
    let global = match opts.corrupt_op {
        Some(op) => {
            graph.corrupt_backward(op, opts.corrupt);
            0.0
        }
        None => opts.corrupt,
    };
    let loss = f(&graph)?;
    let grads = graph.backward(loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name).map_or(0, Tensor::numel);
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = params.get(&name).expect("name from set").data()[i];
            let mut eval = |v: f64| -> Result<f64> {
                work.get_mut(&name).expect("name from set").data_mut()[i] = v;
                let g = Graph::inference(&work);
                let l = f(&g)?;
                g.item(l)
            };
            let analytic = grads[&name].data()[i] * (1.0 + global);
            let mut step = opts.step;
            let mut err = f64::INFINITY;
            for attempt in 0..=opts.refinements {
                let numeric = (eval(orig + step)? - eval(orig - step)?) / (2.0 * step);
                err = err.min(relative_error(analytic, numeric, opts.floor));
                if err < REFINE_ABOVE {
                    break;
                }
                if attempt == 0 && opts.refinements > 0 {
                    report.coords_refined += 1;
                }
                step /= 10.0;
            }
            work.get_mut(&name).expect("name from set").data_mut()[i] = orig;
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

/// Checks a function of plain input tensors. Inputs are exposed to `f` in
/// order as differentiable variables.
pub fn check_inputs<F>(inputs: &[Tensor], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let mut ps = ParameterSet::new();
    let names: Vec<String> = (0..inputs.len()).map(|i| format!("input{i:02}")).collect();
    for (n, t) in names.iter().zip(inputs) {
        ps.insert(n.clone(), t.clone())?;
    }
    check_params(
        &ps,
        |g| {
            let vars = names.iter().map(|n| g.param(n)).collect::<Result<Vec<_>>>()?;
            f(g.tape(), &vars)
        },
        opts,
    )
}

/// Reduces a tensor-valued output to a scalar via a fixed random weighting,
/// so every output entry influences the checked gradient.
pub fn random_projection(tape: &Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out);
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

/// Uniform random tensor in `[lo, hi)`.
pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_corruption() {
        let x = Tensor::from_vec(vec![0.3, -0.7, 1.1]).unwrap();
        let f = |t: &Tape, v: &[Var]| {
            let s = t.sin(v[0])?;
            t.sum(s)
        };
        let ok = check_inputs(&[x.clone()], f, &GradCheckOptions::default()).unwrap();
        assert!(ok.passed(1e-6), "{ok:?}");
        let bad = check_inputs(
            &[x],
            f,
            &GradCheckOptions {
                corrupt: 0.01,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!bad.passed(1e-4));
    }
}
