use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use lanetopo_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        lt_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

const SMALL_MODEL: &str = "[model]\nlayers = 1\nlane_queries = 4\nte_queries = 2\ndim = 8\nheads = 2\nffn_dim = 8\nencoding_dim = 4\n";

#[test]
fn scene_round_trip_through_handles() {
    unsafe {
        let mut scene = ptr::null_mut();
        assert_eq!(lt_scene_generate(ptr::null(), 4, &mut scene), LtStatus::Ok);
        let n = lt_scene_num_lanes(scene);
        assert!(n > 0);
        assert!(lt_scene_num_traffic_elements(scene) > 0);
        let mut cp = [0.0; 12];
        assert_eq!(lt_scene_lane(scene, 0, cp.as_mut_ptr()), LtStatus::Ok);
        assert!(cp.iter().all(|v| v.is_finite()));
        let mut edge = 9u8;
        assert_eq!(lt_scene_l2l_edge(scene, 0, 0, &mut edge), LtStatus::Ok);
        assert_eq!(edge, 0);
        assert_eq!(lt_scene_lane(scene, n, cp.as_mut_ptr()), LtStatus::OutOfRange);
        assert!(last_error().contains("out of range"));
        lt_scene_free(scene);
    }
}

#[test]
fn prediction_scores_are_probabilities() {
    let cfg = CString::new(SMALL_MODEL).unwrap();
    unsafe {
        let mut scene = ptr::null_mut();
        let mut model = ptr::null_mut();
        let mut pred = ptr::null_mut();
        assert_eq!(lt_scene_generate(cfg.as_ptr(), 1, &mut scene), LtStatus::Ok);
        assert_eq!(lt_model_new(cfg.as_ptr(), 0, &mut model), LtStatus::Ok);
        assert_eq!(lt_model_predict(model, scene, &mut pred), LtStatus::Ok);
        assert_eq!(lt_predictions_num_lanes(pred), 4);
        let (mut cp, mut conf) = ([0.0; 12], 0.0);
        assert_eq!(lt_predictions_lane(pred, 3, cp.as_mut_ptr(), &mut conf), LtStatus::Ok);
        assert!((0.0..=1.0).contains(&conf));
        let mut s = -1.0;
        assert_eq!(lt_predictions_l2l_score(pred, 0, 1, &mut s), LtStatus::Ok);
        assert!((0.0..=1.0).contains(&s));
        assert_eq!(lt_predictions_l2t_score(pred, 0, 1, &mut s), LtStatus::Ok);
        assert_eq!(lt_predictions_l2t_score(pred, 0, 2, &mut s), LtStatus::OutOfRange);
        lt_predictions_free(pred);
        lt_model_free(model);
        lt_scene_free(scene);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let bad = CString::new("[model]\nlayerz = 1\n").unwrap();
    let missing = CString::new("/nonexistent/checkpoint.bin").unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(lt_model_new(bad.as_ptr(), 0, &mut model), LtStatus::Config);
        assert!(last_error().contains("layerz"), "{}", last_error());
        assert!(model.is_null());
        assert_eq!(lt_model_new(ptr::null(), 0, ptr::null_mut()), LtStatus::NullPointer);
        assert_eq!(lt_model_new(ptr::null(), 0, &mut model), LtStatus::Ok);
        assert_eq!(lt_model_load_checkpoint(model, missing.as_ptr()), LtStatus::Data);
        lt_model_free(model);
        let mut v = 0.0;
        assert_eq!(lt_ols(0.338, 0.509, 0.292, 0.322, &mut v), LtStatus::Ok);
        assert!((100.0 * v - 48.9).abs() < 0.05);
        assert_eq!(lt_ols(1.5, 0.0, 0.0, 0.0, &mut v), LtStatus::InvalidArgument);
        // Freeing null is a no-op.
        lt_scene_free(ptr::null_mut());
    }
}

#[test]
fn error_buffer_truncates_and_terminates() {
    unsafe {
        let mut v = 0.0;
        lt_ols(2.0, 0.0, 0.0, 0.0, &mut v);
        let mut small = [1 as c_char; 4];
        let full = lt_last_error_message(small.as_mut_ptr(), small.len());
        assert!(full > 3);
        assert_eq!(small[3], 0);
        assert_eq!(lt_last_error_message(ptr::null_mut(), 0), full);
        assert!(!CStr::from_ptr(lt_version()).to_bytes().is_empty());
    }
}

#[test]
fn header_declares_every_export_and_compiles() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/lanetopo.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    for line in src.lines().filter(|l| l.contains("extern \"C\" fn ")) {
        let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = Command::new(&cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", "-"])
        .arg(format!("-I{}", dir.join("include").display()))
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            child
                .stdin
                .take()
                .unwrap()
                .write_all(b"#include \"lanetopo.h\"\nint main(void) { LtScene *s = 0; return (int)lt_scene_num_lanes(s); }\n")?;
            child.wait_with_output()
        })
        .expect("C compiler available");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
