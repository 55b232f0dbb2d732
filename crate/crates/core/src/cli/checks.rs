//! Finite-difference gradient suite over tape primitives and composite
//! blocks.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::attention::{
    curve_guided_cross_attention, deformable_cross_attention, geometry_bias_matrix, geometry_biased_self_attention,
    BiasMode, CurveAttentionParams, GeometryBiasParams, MultiHeadAttention, WeightNorm,
};
use crate::error::Result;
use crate::geometry::{chamfer_var, encode_var, pairwise_relations, sample_curves, CameraModel, SinusoidalConfig};
use crate::model::{Ablation, FeatureGrid, Frame, GridExtent, Model, ModelConfig, SceneInputs};
use crate::numerics::gradcheck::{check_params, random_projection, random_tensor, GradCheckOptions, GradCheckReport};
use crate::numerics::layers::{FeedForward, LayerNorm, Linear, Mlp};
use crate::numerics::{Graph, ParameterSet, Tape, Tensor, Var};
use crate::scenes::{generate_scene, rasterize, SceneConfig};
use crate::topology::{L2lHead, L2tHead, Pooling};
use crate::training::{
    bezier_chamfer_loss, focal_loss, giou_loss, infonce_topology_loss, l1_loss, total_loss, FocalConfig, LossConfig,
    Reduction, SceneTarget,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Primitive,
    Composite,
}

impl CheckKind {
    fn label(self) -> &'static str {
        match self {
            CheckKind::Primitive => "primitive",
            CheckKind::Composite => "composite",
        }
    }
}

type CheckFn = fn(u64, &GradCheckOptions) -> Result<GradCheckReport>;

/// One named check, run once per seed.
pub struct CheckCase {
    pub name: &'static str,
    pub kind: CheckKind,
    run: CheckFn,
}

impl CheckCase {
    pub fn run(&self, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
        (self.run)(seed, opts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub kind: CheckKind,
    pub cases: usize,
    pub coords: usize,
    /// Coordinates re-estimated with a smaller step.
    pub refined: usize,
    pub max_rel_error: f64,
    /// Seed, parameter and coordinate of the worst entry.
    pub worst: Option<(u64, String, usize)>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteOptions {
    pub cases: usize,
    pub tolerance: f64,
    pub gradcheck: GradCheckOptions,
    /// Run only checks whose name contains this string.
    pub filter: Option<String>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            cases: 20,
            tolerance: 1e-4,
            gradcheck: GradCheckOptions::default(),
            filter: None,
        }
    }
}

/// Runs every selected check over `cases` seeds, checks in parallel.
pub fn run_gradcheck_suite(opts: &SuiteOptions) -> Result<Vec<CheckRow>> {
    let cases: Vec<CheckCase> = gradcheck_cases()
        .into_iter()
        .filter(|c| opts.filter.as_deref().map_or(true, |f| c.name.contains(f)))
        .collect();
    cases
        .par_iter()
        .map(|case| {
            let mut row = CheckRow {
                name: case.name,
                kind: case.kind,
                cases: opts.cases,
                coords: 0,
                refined: 0,
                max_rel_error: 0.0,
                worst: None,
                passed: true,
            };
            for seed in 0..opts.cases as u64 {
                let r = case.run(
                    seed,
                    &GradCheckOptions {
                        seed,
                        ..opts.gradcheck
                    },
                )?;
                row.coords += r.coords_checked;
                row.refined += r.coords_refined;
                if row.worst.is_none() || r.max_rel_error > row.max_rel_error {
                    row.max_rel_error = r.max_rel_error;
                    row.worst = r.worst.map(|(n, i)| (seed, n, i));
                }
            }
            row.passed = row.max_rel_error < opts.tolerance;
            Ok(row)
        })
        .collect()
}

/// Fixed-width table: one line per check plus a summary line.
pub fn format_table(rows: &[CheckRow], tolerance: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<28} {:<10} {:>6} {:>7} {:>8} {:>14}  {}",
        "check", "kind", "cases", "coords", "refined", "max_rel_err", "status"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<28} {:<10} {:>6} {:>7} {:>8} {:>14.6e}  {}",
            r.name,
            r.kind.label(),
            r.cases,
            r.coords,
            r.refined,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        let _ = writeln!(s, "all {} checks passed (tolerance {tolerance:e})", rows.len());
    } else {
        let _ = writeln!(s, "{} of {} checks failed: {}", failed.len(), rows.len(), failed.join(", "));
    }
    s
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("shape matches data")
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xC4EC_4)
}

/// Values bounded away from zero, with random signs.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = random_tensor(rng, shape, lo, hi);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Checks `f` applied to `inputs`, reduced by a seeded random projection.
fn check_tensors(
    seed: u64,
    opts: &GradCheckOptions,
    inputs: Vec<Tensor>,
    f: impl Fn(&Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut ps = ParameterSet::new();
    let names: Vec<String> = (0..inputs.len()).map(|i| format!("input{i}")).collect();
    for (n, t) in names.iter().zip(inputs) {
        ps.insert(n.clone(), t)?;
    }
    check_params(
        &ps,
        |g| {
            let vars = names.iter().map(|n| g.param(n)).collect::<Result<Vec<_>>>()?;
            let out = f(g.tape(), &vars)?;
            project(g.tape(), out, seed)
        },
        opts,
    )
}

fn project(tape: &Tape, out: Var, seed: u64) -> Result<Var> {
    if tape.value(out).numel() == 1 {
        tape.reshape(out, &[])
    } else {
        random_projection(tape, out, seed)
    }
}

/// Checks a block built into `ps` together with its inputs. Every
/// parameter is jittered first so zero-initialized heads are exercised.
fn check_block<M>(
    seed: u64,
    opts: &GradCheckOptions,
    build: impl FnOnce(&mut ParameterSet, &mut ChaCha8Rng) -> Result<M>,
    inputs: Vec<(&str, Tensor)>,
    f: impl Fn(&Graph, &M, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut ps = ParameterSet::new();
    let block = build(&mut ps, &mut r)?;
    for (_, t) in ps.iter_mut() {
        for v in t.data_mut() {
            *v += r.gen_range(-0.3..0.3);
        }
    }
    let names: Vec<String> = inputs.iter().map(|(n, _)| format!("input.{n}")).collect();
    for (n, (_, t)) in names.iter().zip(inputs) {
        ps.insert(n.clone(), t)?;
    }
    check_params(
        &ps,
        |g| {
            let vars = names.iter().map(|n| g.param(n)).collect::<Result<Vec<_>>>()?;
            let out = f(g, &block, &vars)?;
            project(g.tape(), out, seed)
        },
        opts,
    )
}

macro_rules! primitive {
    ($name:literal, |$rng:ident| $inputs:expr, |$t:ident, $v:ident| $body:expr) => {
        CheckCase {
            name: $name,
            kind: CheckKind::Primitive,
            run: |seed, opts| {
                let mut $rng = rng(seed);
                let inputs: Vec<Tensor> = $inputs;
                check_tensors(seed, opts, inputs, |$t: &Tape, $v: &[Var]| $body)
            },
        }
    };
}

fn lanes(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    // Roughly longitudinal curves ahead of the origin, in meters.
    let mut data = Vec::with_capacity(n * 12);
    for _ in 0..n {
        let x0 = rng.gen_range(4.0..12.0);
        let y0 = rng.gen_range(-6.0..6.0);
        let len = rng.gen_range(8.0..16.0);
        for i in 0..4 {
            let s = i as f64 / 3.0;
            data.extend([
                x0 + s * len + rng.gen_range(-0.5..0.5),
                y0 + rng.gen_range(-1.5..1.5),
                rng.gen_range(-0.2..0.2),
            ]);
        }
    }
    tensor(vec![n, 4, 3], data)
}

fn bev_grid(rng: &mut ChaCha8Rng, channels: usize) -> Result<FeatureGrid> {
    FeatureGrid::new(
        random_tensor(rng, &[8, 12, channels], -1.0, 1.0),
        GridExtent {
            x_min: 0.0,
            x_max: 30.0,
            y_min: -10.0,
            y_max: 10.0,
        },
        Frame::Bev,
    )
}

fn fv_grid(rng: &mut ChaCha8Rng, channels: usize) -> Result<FeatureGrid> {
    FeatureGrid::new(
        random_tensor(rng, &[6, 10, channels], -1.0, 1.0),
        GridExtent {
            x_min: 0.0,
            x_max: 480.0,
            y_min: 0.0,
            y_max: 240.0,
        },
        Frame::Fv,
    )
}

fn camera() -> Result<CameraModel> {
    CameraModel::forward_facing([0.0, 0.0, 1.6], 0.02, 240.0, 240.0, (480, 240))
}

fn boxes(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let data = (0..n)
        .flat_map(|_| {
            [
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.05..0.3),
                rng.gen_range(0.05..0.3),
            ]
        })
        .collect();
    tensor(vec![n, 4], data)
}

fn binary(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor {
    let n: usize = shape.iter().product();
    tensor(shape.to_vec(), (0..n).map(|_| f64::from(u8::from(rng.gen_bool(p)))).collect())
}

/// Every registered check.
pub fn gradcheck_cases() -> Vec<CheckCase> {
    let mut cases = primitive_cases();
    cases.extend(composite_cases());
    cases
}

fn primitive_cases() -> Vec<CheckCase> {
    vec![
        primitive!("matmul", |r| vec![random_tensor(&mut r, &[3, 4], -1.0, 1.0), random_tensor(&mut r, &[4, 2], -1.0, 1.0)], |t, v| t.matmul(v[0], v[1])),
        primitive!("matmul_batched", |r| vec![random_tensor(&mut r, &[2, 3, 4], -1.0, 1.0), random_tensor(&mut r, &[2, 4, 2], -1.0, 1.0)], |t, v| t.matmul(v[0], v[1])),
        primitive!("transpose", |r| vec![random_tensor(&mut r, &[3, 5], -1.0, 1.0)], |t, v| t.transpose(v[0])),
        primitive!("add_broadcast", |r| vec![random_tensor(&mut r, &[3, 4], -1.0, 1.0), random_tensor(&mut r, &[4], -1.0, 1.0)], |t, v| t.add(v[0], v[1])),
        primitive!("sub", |r| vec![random_tensor(&mut r, &[2, 3], -1.0, 1.0), random_tensor(&mut r, &[2, 1], -1.0, 1.0)], |t, v| t.sub(v[0], v[1])),
        primitive!("mul", |r| vec![random_tensor(&mut r, &[2, 3], -1.0, 1.0), random_tensor(&mut r, &[1, 3], -1.0, 1.0)], |t, v| t.mul(v[0], v[1])),
        primitive!("div", |r| vec![random_tensor(&mut r, &[2, 3], -1.0, 1.0), away_from_zero(&mut r, &[2, 3], 0.5, 2.0)], |t, v| t.div(v[0], v[1])),
        primitive!("maximum_minimum", |r| {
            let a = random_tensor(&mut r, &[2, 4], -1.0, 1.0);
            let gap = away_from_zero(&mut r, &[2, 4], 0.1, 1.0);
            let b = tensor(vec![2, 4], a.data().iter().zip(gap.data()).map(|(x, d)| x + d).collect());
            vec![a, b]
        }, |t, v| t.add(t.maximum(v[0], v[1])?, t.scale(t.minimum(v[0], v[1])?, 0.7)?)),
        primitive!("scalar_ops", |r| vec![random_tensor(&mut r, &[5], -1.0, 1.0)], |t, v| {
            let a = t.add_scalar(t.scale(v[0], 1.7)?, -0.3)?;
            t.rsub_scalar(2.0, t.neg(a)?)
        }),
        primitive!("relu", |r| vec![away_from_zero(&mut r, &[6], 0.1, 1.0)], |t, v| t.relu(v[0])),
        primitive!("sigmoid", |r| vec![random_tensor(&mut r, &[6], -4.0, 4.0)], |t, v| t.sigmoid(v[0])),
        primitive!("softplus", |r| vec![random_tensor(&mut r, &[6], -4.0, 4.0)], |t, v| t.softplus(v[0])),
        primitive!("exp", |r| vec![random_tensor(&mut r, &[6], -2.0, 2.0)], |t, v| t.exp(v[0])),
        primitive!("log", |r| vec![random_tensor(&mut r, &[6], 0.2, 3.0)], |t, v| t.log(v[0])),
        primitive!("sqrt", |r| vec![random_tensor(&mut r, &[6], 0.2, 3.0)], |t, v| t.sqrt(v[0])),
        primitive!("abs", |r| vec![away_from_zero(&mut r, &[6], 0.1, 1.0)], |t, v| t.abs(v[0])),
        primitive!("sin_cos", |r| vec![random_tensor(&mut r, &[6], -3.0, 3.0)], |t, v| t.add(t.sin(v[0])?, t.cos(v[0])?)),
        primitive!("powf", |r| vec![random_tensor(&mut r, &[6], 0.2, 2.0)], |t, v| t.powf(v[0], 2.5)),
        primitive!("atan2", |r| vec![away_from_zero(&mut r, &[6], 0.3, 1.0), away_from_zero(&mut r, &[6], 0.3, 1.0)], |t, v| t.atan2(v[0], v[1])),
        primitive!("softmax_lastdim", |r| vec![random_tensor(&mut r, &[3, 5], -2.0, 2.0)], |t, v| t.softmax_lastdim(v[0])),
        primitive!("layer_norm", |r| vec![random_tensor(&mut r, &[3, 6], -2.0, 2.0)], |t, v| t.layer_norm(v[0], 1e-5)),
        primitive!("norm_lastdim", |r| vec![random_tensor(&mut r, &[4, 3], -2.0, 2.0)], |t, v| t.norm_lastdim(v[0])),
        primitive!("sum_mean", |r| vec![random_tensor(&mut r, &[3, 4], -1.0, 1.0)], |t, v| {
            let s = t.reshape(t.sum(t.mul(v[0], v[0])?)?, &[1])?;
            let m = t.reshape(t.mean(t.exp(v[0])?)?, &[1])?;
            t.concat(&[s, m], 0)
        }),
        primitive!("sum_axis_mean_axis", |r| vec![random_tensor(&mut r, &[2, 3, 4], -1.0, 1.0)], |t, v| {
            let a = t.sum_axis(v[0], 1)?;
            let b = t.mean_axis(v[0], 1)?;
            t.concat(&[a, b], 1)
        }),
        primitive!("min_axis", |r| vec![random_tensor(&mut r, &[3, 5], -1.0, 1.0)], |t, v| t.min_axis(v[0], 1)),
        primitive!("reshape_permute", |r| vec![random_tensor(&mut r, &[2, 3, 4], -1.0, 1.0)], |t, v| {
            t.reshape(t.permute(v[0], &[2, 0, 1])?, &[4, 6])
        }),
        primitive!("concat_slice", |r| vec![random_tensor(&mut r, &[2, 3], -1.0, 1.0), random_tensor(&mut r, &[2, 2], -1.0, 1.0)], |t, v| {
            let c = t.concat(&[v[0], v[1]], 1)?;
            t.slice(c, 1, 1, 4)
        }),
        primitive!("index_select", |r| vec![random_tensor(&mut r, &[4, 3], -1.0, 1.0)], |t, v| t.index_select(v[0], 0, &[3, 1, 1])),
        primitive!("broadcast_to", |r| vec![random_tensor(&mut r, &[1, 3], -1.0, 1.0)], |t, v| t.broadcast_to(v[0], &[4, 3])),
        primitive!("bilinear_sample", |r| {
            let grid = random_tensor(&mut r, &[4, 5, 2], -1.0, 1.0);
            // Keep samples away from cell boundaries, where the map has kinks.
            let pts = (0..6)
                .flat_map(|_| [r.gen_range(0..3) as f64 + r.gen_range(0.05..0.95), r.gen_range(0..4) as f64 + r.gen_range(0.05..0.95)])
                .collect();
            vec![grid, tensor(vec![6, 2], pts)]
        }, |t, v| t.bilinear_sample(v[0], v[1])),
    ]
}

fn composite_cases() -> Vec<CheckCase> {
    vec![
        CheckCase {
            name: "linear_mlp_ffn",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                let x = random_tensor(&mut r, &[3, 6], -1.0, 1.0);
                check_block(
                    seed,
                    opts,
                    |ps, r| {
                        Ok((
                            Linear::new(ps, r, "lin", 6, 6)?,
                            Mlp::new(ps, r, "mlp", &[6, 8, 6])?,
                            FeedForward::new(ps, r, "ffn", 6, 10)?,
                            LayerNorm::new(ps, "norm", 6)?,
                        ))
                    },
                    vec![("x", x)],
                    |g, (lin, mlp, ffn, norm), v| {
                        let h = mlp.forward(g, lin.forward(g, v[0])?)?;
                        norm.forward(g, g.add(h, ffn.forward(g, h)?)?)
                    },
                )
            },
        },
        CheckCase {
            name: "sinusoidal_encoding",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                let x = random_tensor(&mut r, &[4, 2], -3.0, 3.0);
                check_tensors(seed, opts, vec![x], |t, v| encode_var(t, v[0], &SinusoidalConfig::new(8, 1.0)?))
            },
        },
        CheckCase {
            name: "bezier_sampling",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                check_tensors(seed, opts, vec![lanes(&mut r, 3)], |t, v| sample_curves(t, v[0], 11))
            },
        },
        CheckCase {
            name: "pairwise_relations",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                check_tensors(seed, opts, vec![lanes(&mut r, 4)], |t, v| {
                    let (d, a) = pairwise_relations(t, v[0])?;
                    t.concat(&[d, a], 1)
                })
            },
        },
        CheckCase {
            name: "chamfer",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                let a = random_tensor(&mut r, &[2, 5, 3], -2.0, 2.0);
                let b = random_tensor(&mut r, &[2, 7, 3], -2.0, 2.0);
                check_tensors(seed, opts, vec![a, b], |t, v| chamfer_var(t, v[0], v[1]))
            },
        },
        CheckCase {
            name: "camera_projection",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                let pts = tensor(
                    vec![5, 3],
                    (0..5)
                        .flat_map(|_| [r.gen_range(4.0..30.0), r.gen_range(-5.0..5.0), r.gen_range(-0.5..2.0)])
                        .collect(),
                );
                check_tensors(seed, opts, vec![pts], |t, v| Ok(camera()?.project_var(t, v[0])?.0))
            },
        },
        CheckCase {
            name: "geometry_bias",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                let cp = lanes(&mut r, 4);
                check_block(
                    seed,
                    opts,
                    |ps, r| GeometryBiasParams::new(ps, r, "bias", SinusoidalConfig::new(8, 1.0)?, 8, 2, BiasMode::PerHead),
                    vec![("curves", cp)],
                    |g, p, v| geometry_bias_matrix(g, v[0], p),
                )
            },
        },
        CheckCase {
            name: "geometry_biased_self_attn",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                let q = random_tensor(&mut r, &[4, 8], -1.0, 1.0);
                let cp = lanes(&mut r, 4);
                check_block(
                    seed,
                    opts,
                    |ps, r| {
                        Ok((
                            GeometryBiasParams::new(ps, r, "bias", SinusoidalConfig::new(8, 1.0)?, 8, 2, BiasMode::PerHead)?,
                            MultiHeadAttention::new(ps, r, "attn", 8, 2)?,
                        ))
                    },
                    vec![("queries", q), ("curves", cp)],
                    |g, (b, a), v| geometry_biased_self_attention(g, v[0], v[1], b, a),
                )
            },
        },
        CheckCase {
            name: "deformable_cross_attn",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                let q = random_tensor(&mut r, &[3, 8], -1.0, 1.0);
                let refs = tensor(
                    vec![3, 2, 2],
                    (0..6).flat_map(|_| [r.gen_range(1.0..6.0), r.gen_range(1.0..10.0)]).collect(),
                );
                let grid = random_tensor(&mut r, &[8, 12, 3], -1.0, 1.0);
                check_block(
                    seed,
                    opts,
                    |ps, r| CurveAttentionParams::new(ps, r, "ca", 8, 3, 2, 2, 2, WeightNorm::Joint),
                    vec![("queries", q), ("reference", refs), ("grid", grid)],
                    |g, p, v| deformable_cross_attention(g, v[0], v[1], v[2], p),
                )
            },
        },
        CheckCase {
            name: "curve_guided_cross_attn",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                let q = random_tensor(&mut r, &[3, 8], -1.0, 1.0);
                let cp = lanes(&mut r, 3);
                let bev = bev_grid(&mut r, 3)?;
                check_block(
                    seed,
                    opts,
                    |ps, r| CurveAttentionParams::new(ps, r, "ca", 8, 3, 2, 2, 5, WeightNorm::PerPoint),
                    vec![("queries", q), ("curves", cp), ("bev", bev.values.clone())],
                    |g, p, v| {
                        let pts = sample_curves(g, v[1], 5)?;
                        curve_guided_cross_attention(g, v[0], pts, &bev, v[2], p)
                    },
                )
            },
        },
        CheckCase {
            name: "l2l_head",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                let q = random_tensor(&mut r, &[4, 8], -1.0, 1.0);
                let cp = lanes(&mut r, 4);
                check_block(
                    seed,
                    opts,
                    |ps, r| L2lHead::new(ps, r, "l2l", 8, SinusoidalConfig::new(4, 1.0)?, false),
                    vec![("queries", q), ("curves", cp)],
                    |g, h, v| h.forward(g, v[0], v[1]),
                )
            },
        },
        CheckCase {
            name: "l2t_head",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                let lq = random_tensor(&mut r, &[3, 8], -1.0, 1.0);
                let cp = lanes(&mut r, 3);
                let tq = random_tensor(&mut r, &[2, 8], -1.0, 1.0);
                let bx = boxes(&mut r, 2);
                let fv = fv_grid(&mut r, 3)?;
                let cam = camera()?;
                let pooling = if seed % 2 == 0 { Pooling::Mean } else { Pooling::Max };
                check_block(
                    seed,
                    opts,
                    |ps, r| L2tHead::new(ps, r, "l2t", 8, 3, 5, pooling, false),
                    vec![("lane_queries", lq), ("curves", cp), ("fv", fv.values.clone()), ("te_queries", tq), ("boxes", bx)],
                    |g, h, v| h.forward(g, v[0], v[1], &cam, &fv, v[2], v[3], v[4]),
                )
            },
        },
        CheckCase {
            name: "focal_loss",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                let x = random_tensor(&mut r, &[4, 3], -4.0, 4.0);
                let y = binary(&mut r, &[4, 3], 0.4);
                check_tensors(seed, opts, vec![x], |t, v| focal_loss(t, v[0], &y, &FocalConfig::default(), Reduction::Mean))
            },
        },
        CheckCase {
            name: "giou_l1_loss",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                let p = boxes(&mut r, 3);
                let y = boxes(&mut r, 3);
                check_tensors(seed, opts, vec![p], |t, v| {
                    t.add(giou_loss(t, v[0], &y)?, l1_loss(t, v[0], &y)?)
                })
            },
        },
        CheckCase {
            name: "bezier_chamfer_loss",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                let p = lanes(&mut r, 2);
                let y = lanes(&mut r, 2);
                check_tensors(seed, opts, vec![p], |t, v| bezier_chamfer_loss(t, v[0], &y, 11))
            },
        },
        CheckCase {
            name: "infonce_loss",
            kind: CheckKind::Composite,
            run: |seed, opts| {
                let mut r = rng(seed);
                // Distinct logits keep the hard-negative selection stable.
                let x = random_tensor(&mut r, &[4, 5], -3.0, 3.0);
                let y = binary(&mut r, &[4, 5], 0.3);
                check_tensors(seed, opts, vec![x], |t, v| infonce_topology_loss(t, v[0], &y, 3))
            },
        },
        CheckCase {
            name: "total_loss_tiny_model",
            kind: CheckKind::Composite,
            run: tiny_model_check,
        },
    ]
}

fn tiny_model_check(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let scfg = SceneConfig {
        forward_lanes: [1, 1],
        backward_lanes: [0, 0],
        intersection_probability: 0.0,
        max_breakpoints: 2,
        traffic_elements: [1, 2],
        ..SceneConfig::default()
    };
    let scene = generate_scene(&scfg, seed)?;
    let (bev, fv) = rasterize(&scene, &scfg.raster)?;
    let target = SceneTarget::from_scene(&scene)?;
    let mcfg = ModelConfig {
        layers: 1,
        lane_queries: 3,
        te_queries: 2,
        dim: 8,
        heads: 2,
        offsets: 1,
        ffn_dim: 8,
        encoding_dim: 4,
        detach_topology_geometry: false,
        ..ModelConfig::default()
    };
    let mut model = Model::new(mcfg, Ablation::full(), scfg.input_spec(), seed)?;
    let mut r = rng(seed);
    for (_, t) in model.params.iter_mut() {
        for v in t.data_mut() {
            *v += r.gen_range(-0.05..0.05);
        }
    }
    let inputs = SceneInputs {
        bev: &bev,
        fv: &fv,
        camera: &scene.camera,
    };
    let loss_cfg = LossConfig::default();
    check_params(
        &model.params,
        |g| {
            let out = model.forward(g, &inputs)?;
            Ok(total_loss(g, &out, &target, &loss_cfg)?.0)
        },
        &GradCheckOptions {
            max_coords: opts.max_coords.min(4),
            ..*opts
        },
    )
}
