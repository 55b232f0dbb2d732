use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{total_loss, LossBreakdown, LossConfig, SceneTarget};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig, Evaluation, MetricsReport};
use crate::model::{FeatureGrid, Model, Predictions, SceneInputs};
use crate::numerics::optim::clip_grad_norm;
use crate::numerics::params::accumulate_grads;
use crate::numerics::{AdamWConfig, GradMap, Graph, OptimizerState};
use crate::scenes::{rasterize, RasterConfig, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Global gradient-norm limit; 0 disables clipping.
    pub clip_norm: f64,
    /// Evaluate on the held-out set every this many steps; 0 disables.
    pub eval_every: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 1,
            optimizer: AdamWConfig {
                lr: 2e-3,
                ..AdamWConfig::default()
            },
            clip_norm: 10.0,
            eval_every: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        let o = &self.optimizer;
        let ok = o.lr > 0.0
            && o.min_lr >= 0.0
            && o.min_lr <= o.lr
            && o.weight_decay >= 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config("train.clip_norm must be non-negative".into()));
        }
        self.loss.validate()
    }
}

/// A scene with its rasterized inputs and training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scene: Scene,
    pub bev: FeatureGrid,
    pub fv: FeatureGrid,
    pub target: SceneTarget,
}

impl Sample {
    pub fn new(scene: Scene, raster: &RasterConfig) -> Result<Self> {
        let (bev, fv) = rasterize(&scene, raster)?;
        let target = SceneTarget::from_scene(&scene)?;
        Ok(Self { scene, bev, fv, target })
    }

    pub fn inputs(&self) -> SceneInputs<'_> {
        SceneInputs {
            bev: &self.bev,
            fv: &self.fv,
            camera: &self.scene.camera,
        }
    }
}

/// Rasterizes scenes in parallel, preserving order.
pub fn prepare_samples(scenes: Vec<Scene>, raster: &RasterConfig) -> Result<Vec<Sample>> {
    scenes.into_par_iter().map(|s| Sample::new(s, raster)).collect()
}

/// Loss configuration after applying the model's ablation flags.
pub fn effective_loss(model: &Model, cfg: &LossConfig) -> LossConfig {
    LossConfig {
        contrastive: cfg.contrastive && !model.ablation.no_contrastive,
        ..*cfg
    }
}

/// Loss and parameter gradients of one scene.
pub fn scene_gradients(model: &Model, sample: &Sample, cfg: &LossConfig) -> Result<(GradMap, LossBreakdown)> {
    let abort = |stage: &str, e: Error| match e {
        Error::NonFinite { op } => Error::NumericalAbort {
            step: 0,
            term: format!("{stage}:{op}"),
        },
        other => other,
    };
    let g = Graph::new(&model.params);
    let out = model.forward(&g, &sample.inputs()).map_err(|e| abort("forward", e))?;
    let (loss, breakdown) = total_loss(&g, &out, &sample.target, cfg).map_err(|e| abort("matching", e))?;
    if let Some(term) = breakdown.first_non_finite() {
        return Err(Error::NumericalAbort {
            step: 0,
            term: term.to_string(),
        });
    }
    let grads = g.backward(loss).map_err(|e| match e {
        Error::NonFinite { .. } | Error::Tape(_) => Error::NumericalAbort {
            step: 0,
            term: "gradient".into(),
        },
        other => other,
    })?;
    Ok((grads, breakdown))
}

/// Predictions for every sample, computed in parallel.
pub fn predict_samples(model: &Model, samples: &[Sample]) -> Result<Vec<Predictions>> {
    samples.par_iter().map(|s| model.predict(&s.inputs())).collect()
}

pub fn evaluate_model(model: &Model, samples: &[Sample], cfg: &EvalConfig) -> Result<Evaluation> {
    let preds = predict_samples(model, samples)?;
    let items: Vec<(&Predictions, &Scene)> = preds.iter().zip(samples.iter().map(|s| &s.scene)).collect();
    evaluate(&items, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub grad_norm: f64,
    pub loss: LossBreakdown,
}

impl StepRecord {
    /// One log line: `step lr term... total grad_norm` as `key=value`.
    pub fn log_line(&self) -> String {
        let mut parts = vec![format!("step={}", self.step), format!("lr={:.9e}", self.lr)];
        parts.extend(self.loss.terms().iter().map(|(k, v)| format!("{k}={v:.9e}")));
        parts.push(format!("total={:.9e}", self.loss.total));
        parts.push(format!("grad_norm={:.9e}", self.grad_norm));
        parts.join(" ")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<(usize, MetricsReport)>,
}

/// Seeded epoch-permutation sampler.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            cursor: n,
        }
    }

    fn next(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

/// Optimizes `model` on `data`. Per step: a seeded batch, per-scene losses
/// and gradients in parallel, gradients summed in batch order and
/// averaged, optional clipping, and one cosine-scheduled AdamW update.
/// One line per step goes to `log` when given; `eval` is scored every
/// `eval_every` steps and after the last step.
pub fn train(
    model: &mut Model,
    data: &[Sample],
    cfg: &TrainConfig,
    seed: u64,
    mut log: Option<&mut dyn Write>,
    eval: Option<(&[Sample], &EvalConfig)>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training needs at least one scene"));
    }
    let loss_cfg = effective_loss(model, &cfg.loss);
    let mut opt = OptimizerState::new(&model.params, cfg.optimizer, cfg.steps.max(1));
    let mut sampler = Sampler::new(data.len(), seed);
    let mut history = TrainHistory::default();
    for step in 1..=cfg.steps {
        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| sampler.next()).collect();
        let snapshot: &Model = model;
        let results: Vec<Result<(GradMap, LossBreakdown)>> = batch
            .par_iter()
            .map(|&i| scene_gradients(snapshot, &data[i], &loss_cfg))
            .collect();
        let mut grads = model.params.zero_grads();
        let mut breakdown = LossBreakdown::default();
        for r in results {
            let (g, b) = r.map_err(|e| match e {
                Error::NumericalAbort { term, .. } => Error::NumericalAbort { step, term },
                other => other,
            })?;
            accumulate_grads(&mut grads, &g)?;
            breakdown.add_assign(&b);
        }
        let inv = 1.0 / batch.len() as f64;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        let breakdown = breakdown.scaled(inv);
        let grad_norm = if cfg.clip_norm > 0.0 {
            clip_grad_norm(&mut grads, cfg.clip_norm)
        } else {
            clip_grad_norm(&mut grads, f64::INFINITY)
        };
        if !grad_norm.is_finite() {
            return Err(Error::NumericalAbort {
                step,
                term: "gradient".into(),
            });
        }
        let lr = opt.step(&mut model.params, &grads)?;
        let record = StepRecord {
            step,
            lr,
            grad_norm,
            loss: breakdown,
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", record.log_line()).map_err(|e| Error::io("<train log>", e))?;
        }
        history.steps.push(record);
        if let Some((set, ecfg)) = eval {
            if cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.steps) {
                history.snapshots.push((step, evaluate_model(model, set, ecfg)?.report));
            }
        }
    }
    Ok(history)
}
