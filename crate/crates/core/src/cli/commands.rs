//! Command implementations behind the `lanetopo` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checks::{format_table, run_gradcheck_suite, CheckRow, SuiteOptions};
use super::config::{parse_variant, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::{ols, pr_curve_svg, score_histogram_svg, Evaluation, MetricsReport};
use crate::model::{Ablation, Model};
use crate::numerics::checkpoint;
use crate::scenes::{generate_dataset, load_dataset, save_dataset, Manifest};
use crate::training::{evaluate_model, prepare_samples, train, Sample};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.txt";
pub const METRICS_FILE: &str = "metrics.txt";
pub const METRICS_JSON_FILE: &str = "metrics.json";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Generates `cfg.dataset.count` scenes into `out`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.echo(out)?;
    let scenes = generate_dataset(&cfg.scenes, cfg.seed, cfg.dataset.count)?;
    save_dataset(out, &scenes, &cfg.scenes, cfg.seed)
}

/// A dataset loaded and rasterized with the settings it was generated with.
pub struct LoadedData {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

pub fn load_samples(dir: &Path) -> Result<LoadedData> {
    let (manifest, scenes) = load_dataset(dir)?;
    let samples = prepare_samples(scenes, &manifest.config.raster)?;
    Ok(LoadedData { manifest, samples })
}

fn check_compatible(train: &Manifest, eval: &Manifest) -> Result<()> {
    if train.config.input_spec() != eval.config.input_spec() {
        return Err(Error::Config(
            "evaluation dataset was rasterized with different grid settings than the training dataset".into(),
        ));
    }
    Ok(())
}

fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    write_file(&dir.join(METRICS_FILE), report.to_text())?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Config(format!("metrics json: {e}")))?;
    write_file(&dir.join(METRICS_JSON_FILE), json + "\n")
}

pub struct TrainOutcome {
    pub model: Model,
    pub final_loss: f64,
    pub snapshots: Vec<(usize, MetricsReport)>,
}

/// Trains on `data`, writing the checkpoint, the per-step log and any
/// periodic metric snapshots into `out`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, eval_data: Option<&Path>, out: &Path) -> Result<TrainOutcome> {
    cfg.echo(out)?;
    let train_set = load_samples(data)?;
    let eval_set = eval_data.map(load_samples).transpose()?;
    if let Some(e) = &eval_set {
        check_compatible(&train_set.manifest, &e.manifest)?;
    }
    let mut model = Model::new(
        cfg.model.clone(),
        cfg.ablation,
        train_set.manifest.config.input_spec(),
        cfg.seed,
    )?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let eval_samples = eval_set.as_ref().map_or(&train_set.samples, |e| &e.samples);
    let history = train(
        &mut model,
        &train_set.samples,
        &cfg.train,
        cfg.seed,
        Some(&mut log),
        Some((eval_samples, &cfg.eval)),
    )?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    checkpoint::save(&out.join(CHECKPOINT_FILE), &model.params)?;
    for (step, report) in &history.snapshots {
        write_file(&out.join(format!("metrics_step{step:06}.txt")), report.to_text())?;
    }
    Ok(TrainOutcome {
        final_loss: history.steps.last().map_or(f64::NAN, |s| s.loss.total),
        snapshots: history.snapshots,
        model,
    })
}

/// Rebuilds the configured model and loads `checkpoint` into it.
pub fn load_model(cfg: &RunConfig, manifest: &Manifest, checkpoint_path: &Path) -> Result<Model> {
    let mut model = Model::new(cfg.model.clone(), cfg.ablation, manifest.config.input_spec(), cfg.seed)?;
    let params = checkpoint::load(checkpoint_path)?;
    model.params.assign_from(params).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!(
            "{} does not fit the configured model: {msg}",
            checkpoint_path.display()
        )),
        other => other,
    })?;
    Ok(model)
}

/// Scores a checkpoint on `data`; writes the report and, with `plots`, SVG
/// figures.
pub fn cmd_eval(cfg: &RunConfig, checkpoint_path: &Path, data: &Path, out: &Path, plots: bool) -> Result<Evaluation> {
    cfg.echo(out)?;
    let set = load_samples(data)?;
    let model = load_model(cfg, &set.manifest, checkpoint_path)?;
    let evaluation = evaluate_model(&model, &set.samples, &cfg.eval)?;
    write_report(out, &evaluation.report)?;
    if plots {
        write_plots(out, &evaluation, cfg.eval.frechet_thresholds[0])?;
    }
    Ok(evaluation)
}

pub fn write_plots(dir: &Path, evaluation: &Evaluation, threshold: f64) -> Result<()> {
    write_file(
        &dir.join("lane_pr.svg"),
        pr_curve_svg(&format!("Lane detection at {threshold:.1} m"), &evaluation.lane_pr),
    )?;
    let (pos, neg) = &evaluation.l2l_scores;
    write_file(&dir.join("l2l_scores.svg"), score_histogram_svg("Lane-lane scores", pos, neg, 20))?;
    let (pos, neg) = &evaluation.l2t_scores;
    write_file(&dir.join("l2t_scores.svg"), score_histogram_svg("Lane-element scores", pos, neg, 20))
}

/// Runs the gradient suite; the table is also written to `out` when given.
pub fn cmd_gradcheck(opts: &SuiteOptions, out: Option<&Path>) -> Result<(Vec<CheckRow>, String)> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let echo = toml::to_string(opts).map_err(|e| Error::Config(format!("cannot serialize options: {e}")))?;
        write_file(&dir.join("gradcheck_config.toml"), echo)?;
    }
    let rows = run_gradcheck_suite(opts)?;
    let table = format_table(&rows, opts.tolerance);
    if let Some(dir) = out {
        write_file(&dir.join("gradcheck.txt"), &table)?;
    }
    Ok((rows, table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub ablation: Ablation,
    /// `(model seed, report)` per run.
    pub runs: Vec<(u64, MetricsReport)>,
}

impl AblationRow {
    /// Mean of DET_l, DET_t, TOP_ll, TOP_lt, OLS over seeds.
    pub fn mean(&self) -> [f64; 5] {
        let mut m = [0.0; 5];
        for (_, r) in &self.runs {
            for (acc, v) in m.iter_mut().zip([r.det_l, r.det_t, r.top_ll, r.top_lt, r.ols]) {
                *acc += v;
            }
        }
        m.map(|v| v / self.runs.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub data_seed: u64,
    pub eval_data_seed: Option<u64>,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub model_seeds: Vec<u64>,
    pub steps: usize,
}

impl AblationTable {
    /// Rows = variants, component check marks, then metrics on a 0-100
    /// scale averaged over seeds.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<3} {:<18} {:^4} {:^4} {:^4} {:^4} {:^4} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "#", "variant", "SA", "CA", "L2L", "L2T", "NCE", "DET_l", "DET_t", "TOP_ll", "TOP_lt", "OLS"
        );
        for (i, row) in self.rows.iter().enumerate() {
            let a = row.ablation;
            let mark = |off: bool| if off { "" } else { "x" };
            let m = row.mean();
            let _ = writeln!(
                s,
                "{:<3} {:<18} {:^4} {:^4} {:^4} {:^4} {:^4} {:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>7.1}",
                i + 1,
                row.label,
                mark(a.plain_sa),
                mark(a.no_curve_ca),
                mark(a.baseline_l2l),
                mark(a.baseline_l2t),
                mark(a.no_contrastive),
                100.0 * m[0],
                100.0 * m[1],
                100.0 * m[2],
                100.0 * m[3],
                100.0 * m[4],
            );
        }
        let seeds: Vec<String> = self.model_seeds.iter().map(u64::to_string).collect();
        let eval = match self.eval_data_seed {
            Some(seed) => format!("{} held-out scenes (data seed {seed})", self.eval_scenes),
            None => "the training scenes".into(),
        };
        let _ = writeln!(
            s,
            "data seed {} ({} training scenes); evaluated on {eval}; model seeds {}; {} steps; means over seeds",
            self.data_seed,
            self.train_scenes,
            seeds.join(", "),
            self.steps
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("variant,seed,{}\n", MetricsReport::CSV_HEADER);
        for row in &self.rows {
            for (seed, r) in &row.runs {
                let _ = writeln!(s, "{},{seed},{}", row.label, r.csv_row());
            }
        }
        s
    }
}

/// Trains every configured variant once per model seed on the same data
/// and tabulates held-out metrics. Progress lines go to `progress`.
pub fn cmd_ablate(
    cfg: &RunConfig,
    data: &Path,
    eval_data: Option<&Path>,
    out: &Path,
    mut progress: Option<&mut dyn Write>,
) -> Result<AblationTable> {
    cfg.echo(out)?;
    let variants = cfg
        .ablate
        .variants
        .iter()
        .map(|v| Ok((v.clone(), parse_variant(v)?)))
        .collect::<Result<Vec<_>>>()?;
    let train_set = load_samples(data)?;
    let eval_set = eval_data.map(load_samples).transpose()?;
    if let Some(e) = &eval_set {
        check_compatible(&train_set.manifest, &e.manifest)?;
    }
    let eval_samples = eval_set.as_ref().map_or(&train_set.samples, |e| &e.samples);
    let mut rows = Vec::with_capacity(variants.len());
    for (label, ablation) in variants {
        let mut runs = Vec::with_capacity(cfg.ablate.seeds.len());
        for &seed in &cfg.ablate.seeds {
            let mut model = Model::new(
                cfg.model.clone(),
                ablation,
                train_set.manifest.config.input_spec(),
                seed,
            )?;
            train(&mut model, &train_set.samples, &cfg.train, seed, None, None)?;
            let report = evaluate_model(&model, eval_samples, &cfg.eval)?.report;
            let dir = out.join(label.replace('+', "_")).join(format!("seed{seed}"));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_report(&dir, &report)?;
            if let Some(w) = progress.as_deref_mut() {
                let _ = writeln!(w, "{label} seed {seed}: {}", report.csv_row());
            }
            runs.push((seed, report));
        }
        rows.push(AblationRow {
            label,
            ablation,
            runs,
        });
    }
    let table = AblationTable {
        rows,
        data_seed: train_set.manifest.base_seed,
        eval_data_seed: eval_set.as_ref().map(|e| e.manifest.base_seed),
        train_scenes: train_set.samples.len(),
        eval_scenes: eval_samples.len(),
        model_seeds: cfg.ablate.seeds.clone(),
        steps: cfg.train.steps,
    };
    write_file(&out.join("ablation.txt"), table.to_text())?;
    write_file(&out.join("ablation.csv"), table.to_csv())?;
    let json = serde_json::to_string_pretty(&table).map_err(|e| Error::Config(format!("ablation json: {e}")))?;
    write_file(&out.join("ablation.json"), json + "\n")?;
    Ok(table)
}

/// One row of a metric-components file.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentRow {
    pub method: String,
    pub subset: String,
    /// DET_l, DET_t, TOP_ll, TOP_lt on a 0-100 scale.
    pub components: [f64; 4],
    pub published_ols: Option<f64>,
}

impl ComponentRow {
    /// OLS on a 0-100 scale.
    pub fn ols(&self) -> Result<f64> {
        let [a, b, c, d] = self.components.map(|v| v / 100.0);
        Ok(100.0 * ols(a, b, c, d)?)
    }
}

/// Parses `method,subset,det_l,det_t,top_ll,top_lt[,ols]` lines on a 0-100
/// scale. A header line and `#` comments are skipped.
pub fn parse_components(text: &str, origin: &Path) -> Result<Vec<ComponentRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("method,") {
            continue;
        }
        let bad = |detail: String| Error::Parse {
            path: origin.to_path_buf(),
            field: format!("line {}", n + 1),
            detail,
        };
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(6..=7).contains(&cells.len()) {
            return Err(bad(format!("expected 6 or 7 columns, found {}", cells.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        rows.push(ComponentRow {
            method: cells[0].to_string(),
            subset: cells[1].to_string(),
            components: [num(cells[2])?, num(cells[3])?, num(cells[4])?, num(cells[5])?],
            published_ols: cells.get(6).map(|s| num(s)).transpose()?,
        });
    }
    Ok(rows)
}

/// What a `report` input turned out to be.
#[derive(Debug, Clone, PartialEq)]
pub enum ReportInput {
    Metrics(PathBuf, MetricsReport),
    Components(PathBuf, Vec<ComponentRow>),
}

/// Reads metric reports (`metrics.json`, or directories holding one) and
/// component files (`.csv`).
pub fn read_report_input(path: &Path) -> Result<ReportInput> {
    let file = if path.is_dir() { path.join(METRICS_JSON_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    if file.extension().is_some_and(|e| e == "csv") {
        return Ok(ReportInput::Components(file.clone(), parse_components(&text, &file)?));
    }
    let mut de = serde_json::Deserializer::from_str(&text);
    let report = serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Parse {
        path: file.clone(),
        field: e.path().to_string(),
        detail: e.inner().to_string(),
    })?;
    Ok(ReportInput::Metrics(file, report))
}

/// Formats report inputs as tables on a 0-100 scale.
pub fn format_report(inputs: &[ReportInput]) -> Result<String> {
    let mut s = String::new();
    let metrics: Vec<_> = inputs
        .iter()
        .filter_map(|i| match i {
            ReportInput::Metrics(p, r) => Some((p, r)),
            ReportInput::Components(..) => None,
        })
        .collect();
    if !metrics.is_empty() {
        let _ = writeln!(
            s,
            "{:<40} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "source", "DET_l", "DET_t", "TOP_ll", "TOP_lt", "OLS"
        );
        for (p, r) in metrics {
            let _ = writeln!(
                s,
                "{:<40} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
                p.display(),
                100.0 * r.det_l,
                100.0 * r.det_t,
                100.0 * r.top_ll,
                100.0 * r.top_lt,
                100.0 * r.ols
            );
        }
    }
    for input in inputs {
        let ReportInput::Components(p, rows) = input else { continue };
        if !s.is_empty() {
            s.push('\n');
        }
        let _ = writeln!(s, "{}", p.display());
        let _ = writeln!(
            s,
            "{:<16} {:<7} {:>7} {:>7} {:>7} {:>7} {:>9} {:>9} {:>7}",
            "method", "subset", "DET_l", "DET_t", "TOP_ll", "TOP_lt", "OLS", "published", "diff"
        );
        for r in rows {
            let o = r.ols()?;
            let (publ, diff) = match r.published_ols {
                Some(v) => (format!("{v:.1}"), format!("{:+.3}", o - v)),
                None => ("-".into(), "-".into()),
            };
            let _ = writeln!(
                s,
                "{:<16} {:<7} {:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>9.3} {:>9} {:>7}",
                r.method, r.subset, r.components[0], r.components[1], r.components[2], r.components[3], o, publ, diff
            );
        }
    }
    Ok(s)
}
