use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Scene, SceneConfig};
use crate::error::{Error, Result};

pub const SCENE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// JSON formatter that prints every float with 17 significant digits.
struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        write!(writer, "{:.16e}", f64::from(value))
    }
}

pub(crate) fn to_exact_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::invalid(format!("serialization failed: {e}")))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::invalid(e.to_string()))
}

#[derive(Serialize)]
struct SceneFileRef<'a> {
    version: u32,
    #[serde(flatten)]
    scene: &'a Scene,
}

/// Versioned JSON text of a scene.
pub fn scene_to_json(scene: &Scene) -> Result<String> {
    to_exact_json(&SceneFileRef {
        version: SCENE_VERSION,
        scene,
    })
}

/// Deserializes `value`, reporting the path of the first offending field.
pub(crate) fn from_value_at<T: DeserializeOwned>(value: serde_json::Value, path: &Path) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        Error::Parse {
            path: path.to_path_buf(),
            field,
            detail: e.into_inner().to_string(),
        }
    })
}

pub(crate) fn parse_json(text: &str, path: &Path) -> Result<serde_json::Value> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        field: ".".into(),
        detail: e.to_string(),
    })
}

/// Removes and checks the `version` key of a versioned object.
pub(crate) fn take_version(value: &mut serde_json::Value, path: &Path, what: &'static str, expected: u32) -> Result<()> {
    let parse_err = |detail: &str| Error::Parse {
        path: path.to_path_buf(),
        field: "version".into(),
        detail: detail.into(),
    };
    let obj = value.as_object_mut().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        field: ".".into(),
        detail: "expected a JSON object".into(),
    })?;
    let v = obj.remove("version").ok_or_else(|| parse_err("missing field"))?;
    let found = v
        .as_u64()
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| parse_err("expected an unsigned integer"))?;
    if found != expected {
        return Err(Error::Version { what, found, expected });
    }
    Ok(())
}

/// Parses and validates scene JSON; `path` is used in error messages.
pub fn scene_from_json(text: &str, path: &Path) -> Result<Scene> {
    let mut value = parse_json(text, path)?;
    take_version(&mut value, path, "scene file", SCENE_VERSION)?;
    let scene: Scene = from_value_at(value, path)?;
    scene.validate().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        field: "scene".into(),
        detail: e.to_string(),
    })?;
    Ok(scene)
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    let text = scene_to_json(scene)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    scene_from_json(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub file: String,
}

/// Index of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub base_seed: u64,
    pub count: usize,
    /// Generator settings, including the raster resolution and noise.
    pub config: SceneConfig,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestRef<'a> {
    version: u32,
    #[serde(flatten)]
    manifest: &'a Manifest,
}

/// Writes one file per scene plus the manifest.
pub fn save_dataset(dir: &Path, scenes: &[Scene], config: &SceneConfig, base_seed: u64) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(scenes.len());
    for s in scenes {
        let file = format!("{}.json", s.scene_id);
        save_scene(&dir.join(&file), s)?;
        entries.push(ManifestEntry {
            id: s.scene_id.clone(),
            seed: s.seed,
            file,
        });
    }
    let manifest = Manifest {
        base_seed,
        count: scenes.len(),
        config: config.clone(),
        entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = to_exact_json(&ManifestRef {
        version: SCENE_VERSION,
        manifest: &manifest,
    })?;
    fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut value = parse_json(&text, &path)?;
    take_version(&mut value, &path, "manifest", SCENE_VERSION)?;
    let manifest: Manifest = from_value_at(value, &path)?;
    if manifest.count != manifest.entries.len() {
        return Err(Error::Parse {
            path,
            field: "count".into(),
            detail: format!("{} entries listed", manifest.entries.len()),
        });
    }
    Ok(manifest)
}

/// Manifest and scenes of a dataset directory, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<Scene>)> {
    let manifest = read_manifest(dir)?;
    let scenes = manifest
        .entries
        .iter()
        .map(|e| {
            let s = load_scene(&dir.join(&e.file))?;
            if s.scene_id != e.id || s.seed != e.seed {
                return Err(Error::Parse {
                    path: dir.join(&e.file),
                    field: "scene_id".into(),
                    detail: format!("does not match manifest entry {}", e.id),
                });
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, scenes))
}
