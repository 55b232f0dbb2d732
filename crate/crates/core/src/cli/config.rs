//! Run configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::model::{Ablation, ModelConfig};
use crate::scenes::SceneConfig;
use crate::training::TrainConfig;

/// Name of the resolved-config echo written by every command.
pub const CONFIG_ECHO: &str = "config.toml";

/// Everything a run depends on. Missing keys take their defaults; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds scene generation, model initialization and batch order.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub ablation: Ablation,
    pub scenes: SceneConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            ablation: Ablation::full(),
            scenes: SceneConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            ablate: AblateConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Scenes written by `generate`.
    pub count: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { count: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    /// Variant labels: `baseline`, `full`, or components joined by `+`
    /// out of SA, CA, L2L, L2T, NCE.
    pub variants: Vec<String>,
    /// Model seeds; every variant is trained once per seed.
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: ["baseline", "SA", "SA+CA", "full"].map(String::from).to_vec(),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Training dataset directory.
    pub data: Option<PathBuf>,
    /// Held-out dataset for evaluation; the training set when absent.
    pub eval_data: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            Error::Config(format!(
                "{}: field `{}`: {}",
                origin.display(),
                e.path(),
                e.inner().message().trim()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenes.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        for v in &self.ablate.variants {
            parse_variant(v)?;
        }
        if self.ablate.variants.is_empty() || self.ablate.seeds.is_empty() {
            return Err(Error::Config("ablate.variants and ablate.seeds must be non-empty".into()));
        }
        Ok(())
    }

    /// Writes the resolved config into `dir`, creating it.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_ECHO);
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Parses an ablation variant label (inverse of [`Ablation::label`]).
pub fn parse_variant(label: &str) -> Result<Ablation> {
    match label.trim() {
        "full" => return Ok(Ablation::full()),
        "baseline" => return Ok(Ablation::baseline()),
        _ => {}
    }
    let mut a = Ablation::baseline();
    for part in label.split('+').map(str::trim) {
        let flag = match part {
            "SA" => &mut a.plain_sa,
            "CA" => &mut a.no_curve_ca,
            "L2L" => &mut a.baseline_l2l,
            "L2T" => &mut a.baseline_l2t,
            "NCE" => &mut a.no_contrastive,
            other => {
                return Err(Error::Config(format!(
                    "unknown component `{other}` in ablation variant `{label}` (expected SA, CA, L2L, L2T, NCE)"
                )))
            }
        };
        *flag = false;
    }
    Ok(a)
}
