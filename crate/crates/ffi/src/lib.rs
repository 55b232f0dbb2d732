//! C ABI over `lanetopo`: scene generation and loading, model
//! construction from a TOML run config, checkpoint loading, inference and
//! the OLS formula.
//!
//! Objects are opaque handles released with their `*_free` function.
//! Every fallible call returns an [`LtStatus`]; on failure the message is
//! kept per thread and read with [`lt_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lanetopo::cli::config::RunConfig;
use lanetopo::error::Error;
use lanetopo::evaluation::ols;
use lanetopo::model::{Model, Predictions, SceneInputs};
use lanetopo::numerics::checkpoint;
use lanetopo::numerics::tape::sigmoid_value;
use lanetopo::scenes::{generate_scene, load_scene, rasterize, Scene, SceneConfig};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Numerical = 5,
    OutOfRange = 6,
    Panic = 7,
    Internal = 8,
}

impl From<&Error> for LtStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Infeasible(_) => LtStatus::Config,
            Error::InvalidArgument(_) => LtStatus::InvalidArgument,
            Error::Parse { .. } | Error::Version { .. } | Error::Io { .. } | Error::Checkpoint(_) => LtStatus::Data,
            Error::NonFinite { .. } | Error::NumericalAbort { .. } => LtStatus::Numerical,
            Error::Shape { .. } | Error::Tape(_) | Error::Degenerate(_) => LtStatus::Internal,
        }
    }
}

/// A road scene with ground truth.
pub struct LtScene {
    scene: Scene,
    config: SceneConfig,
}

/// A model with the settings it was built from.
pub struct LtModel {
    model: Model,
    config: RunConfig,
}

/// Output of one forward pass.
pub struct LtPredictions {
    predictions: Predictions,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: LtStatus, msg: impl Into<String>) -> LtStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> LtStatus {
    let status = LtStatus::from(&e);
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into [`LtStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), LtStatus>) -> LtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LtStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(LtStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, LtStatus> {
    if p.is_null() {
        return Err(fail(LtStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LtStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn read_config(toml: *const c_char) -> Result<RunConfig, LtStatus> {
    if toml.is_null() {
        return Ok(RunConfig::default());
    }
    let text = read_str(toml, "config")?;
    RunConfig::from_toml(text, Path::new("<config string>")).map_err(from_error)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, LtStatus> {
    p.as_ref().ok_or_else(|| fail(LtStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, LtStatus> {
    p.as_mut().ok_or_else(|| fail(LtStatus::NullPointer, format!("{what} is null")))
}

fn index(i: usize, n: usize, what: &str) -> Result<(), LtStatus> {
    if i < n {
        Ok(())
    } else {
        Err(fail(LtStatus::OutOfRange, format!("{what} index {i} out of range 0..{n}")))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lt_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// OpenLane-V2 score from the four components in `[0, 1]`.
///
/// # Safety
/// `out` must be a valid pointer to a `double`.
#[no_mangle]
pub unsafe extern "C" fn lt_ols(det_l: f64, det_t: f64, top_ll: f64, top_lt: f64, out: *mut f64) -> LtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ols(det_l, det_t, top_ll, top_lt).map_err(from_error)?;
        Ok(())
    })
}

/// Generates one scene. `config_toml` is a run config (only its `scenes`
/// table is used) or null for defaults.
///
/// # Safety
/// `config_toml` must be null or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_scene_generate(
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut LtScene,
) -> LtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let config = read_config(config_toml)?.scenes;
        let scene = generate_scene(&config, seed).map_err(from_error)?;
        *out = Box::into_raw(Box::new(LtScene { scene, config }));
        Ok(())
    })
}

/// Loads a scene file; `config_toml` supplies the raster settings used for
/// inference (null for defaults).
///
/// # Safety
/// `path` must be a NUL-terminated string; `config_toml` null or
/// NUL-terminated; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_scene_load(
    path: *const c_char,
    config_toml: *const c_char,
    out: *mut *mut LtScene,
) -> LtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = read_str(path, "path")?;
        let config = read_config(config_toml)?.scenes;
        let scene = load_scene(Path::new(path)).map_err(from_error)?;
        *out = Box::into_raw(Box::new(LtScene { scene, config }));
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lt_scene_free(scene: *mut LtScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// # Safety
/// `scene` must be a valid handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn lt_scene_num_lanes(scene: *const LtScene) -> usize {
    scene.as_ref().map_or(0, |s| s.scene.num_lanes())
}

/// # Safety
/// `scene` must be a valid handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn lt_scene_num_traffic_elements(scene: *const LtScene) -> usize {
    scene.as_ref().map_or(0, |s| s.scene.num_tes())
}

/// Writes lane `i`'s 4 control points as 12 doubles `(x, y, z)` each.
///
/// # Safety
/// `scene` must be a valid handle; `out` must point to 12 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lt_scene_lane(scene: *const LtScene, i: usize, out: *mut f64) -> LtStatus {
    guard(|| {
        let s = handle(scene, "scene")?;
        index(i, s.scene.num_lanes(), "lane")?;
        if out.is_null() {
            return Err(fail(LtStatus::NullPointer, "out is null"));
        }
        let cp = s.scene.lanes[i].control_points;
        let flat: Vec<f64> = cp.iter().flatten().copied().collect();
        ptr::copy_nonoverlapping(flat.as_ptr(), out, 12);
        Ok(())
    })
}

/// Ground-truth lane-to-lane edge `i -> j` (1 when lane `j` continues lane
/// `i`).
///
/// # Safety
/// `scene` must be a valid handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_scene_l2l_edge(scene: *const LtScene, i: usize, j: usize, out: *mut u8) -> LtStatus {
    guard(|| {
        let s = handle(scene, "scene")?;
        let n = s.scene.num_lanes();
        index(i, n, "lane")?;
        index(j, n, "lane")?;
        *out_ptr(out, "out")? = s.scene.adj_l2l[i][j];
        Ok(())
    })
}

/// Ground-truth lane-to-element edge (1 when element `t` governs lane `i`).
///
/// # Safety
/// `scene` must be a valid handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_scene_l2t_edge(scene: *const LtScene, i: usize, t: usize, out: *mut u8) -> LtStatus {
    guard(|| {
        let s = handle(scene, "scene")?;
        index(i, s.scene.num_lanes(), "lane")?;
        index(t, s.scene.num_tes(), "traffic element")?;
        *out_ptr(out, "out")? = s.scene.adj_l2t[i][t];
        Ok(())
    })
}

/// Builds a freshly initialized model from a run config (null for
/// defaults) and the scene settings it will read.
///
/// # Safety
/// `config_toml` must be null or NUL-terminated; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_model_new(config_toml: *const c_char, seed: u64, out: *mut *mut LtModel) -> LtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let config = read_config(config_toml)?;
        let model = Model::new(
            config.model.clone(),
            config.ablation,
            config.scenes.input_spec(),
            seed,
        )
        .map_err(from_error)?;
        *out = Box::into_raw(Box::new(LtModel { model, config }));
        Ok(())
    })
}

/// Replaces the model's parameters with a checkpoint file's.
///
/// # Safety
/// `model` must be a valid handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lt_model_load_checkpoint(model: *mut LtModel, path: *const c_char) -> LtStatus {
    guard(|| {
        let m = model
            .as_mut()
            .ok_or_else(|| fail(LtStatus::NullPointer, "model is null"))?;
        let path = read_str(path, "path")?;
        let params = checkpoint::load(Path::new(path)).map_err(from_error)?;
        m.model.params.assign_from(params).map_err(from_error)
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lt_model_free(model: *mut LtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the model on a scene's rasterized inputs.
///
/// # Safety
/// `model` and `scene` must be valid handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_model_predict(
    model: *const LtModel,
    scene: *const LtScene,
    out: *mut *mut LtPredictions,
) -> LtStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let s = handle(scene, "scene")?;
        let out = out_ptr(out, "out")?;
        if s.config.input_spec() != m.config.scenes.input_spec() {
            return Err(fail(
                LtStatus::Config,
                "scene raster settings do not match the model's inputs",
            ));
        }
        let (bev, fv) = rasterize(&s.scene, &s.config.raster).map_err(from_error)?;
        let inputs = SceneInputs {
            bev: &bev,
            fv: &fv,
            camera: &s.scene.camera,
        };
        let predictions = m.model.predict(&inputs).map_err(from_error)?;
        *out = Box::into_raw(Box::new(LtPredictions { predictions }));
        Ok(())
    })
}

/// # Safety
/// `predictions` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lt_predictions_free(predictions: *mut LtPredictions) {
    if !predictions.is_null() {
        drop(Box::from_raw(predictions));
    }
}

/// Number of lane slots (the lane query count).
///
/// # Safety
/// `predictions` must be a valid handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn lt_predictions_num_lanes(predictions: *const LtPredictions) -> usize {
    predictions
        .as_ref()
        .map_or(0, |p| p.predictions.lanes.final_lanes().len())
}

/// Writes predicted lane `i`'s 12 control-point coordinates and its
/// confidence.
///
/// # Safety
/// `predictions` must be a valid handle; `control_points` must point to 12
/// writable doubles; `confidence` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_predictions_lane(
    predictions: *const LtPredictions,
    i: usize,
    control_points: *mut f64,
    confidence: *mut f64,
) -> LtStatus {
    guard(|| {
        let p = handle(predictions, "predictions")?;
        let lanes = p.predictions.lanes.final_lanes();
        index(i, lanes.len(), "lane")?;
        if control_points.is_null() {
            return Err(fail(LtStatus::NullPointer, "control_points is null"));
        }
        let conf = out_ptr(confidence, "confidence")?;
        let flat: Vec<f64> = lanes[i].control_points.iter().flatten().copied().collect();
        ptr::copy_nonoverlapping(flat.as_ptr(), control_points, 12);
        *conf = lanes[i].confidence;
        Ok(())
    })
}

/// Predicted probability that lane slot `j` continues lane slot `i`.
///
/// # Safety
/// `predictions` must be a valid handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_predictions_l2l_score(
    predictions: *const LtPredictions,
    i: usize,
    j: usize,
    out: *mut f64,
) -> LtStatus {
    guard(|| {
        let p = handle(predictions, "predictions")?;
        let l2l = &p.predictions.l2l;
        let n = l2l.shape()[0];
        index(i, n, "lane")?;
        index(j, n, "lane")?;
        *out_ptr(out, "out")? = sigmoid_value(l2l.at(&[i, j]));
        Ok(())
    })
}

/// Predicted probability that traffic-element slot `t` governs lane slot
/// `i`.
///
/// # Safety
/// `predictions` must be a valid handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_predictions_l2t_score(
    predictions: *const LtPredictions,
    i: usize,
    t: usize,
    out: *mut f64,
) -> LtStatus {
    guard(|| {
        let p = handle(predictions, "predictions")?;
        let l2t = &p.predictions.l2t;
        index(i, l2t.shape()[0], "lane")?;
        index(t, l2t.shape()[1], "traffic element")?;
        *out_ptr(out, "out")? = sigmoid_value(l2t.at(&[i, t]));
        Ok(())
    })
}
