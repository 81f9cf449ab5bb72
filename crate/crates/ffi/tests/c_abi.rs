use std::ffi::{CStr, CString};
use std::ptr;

use lumos::autodiff::{RngStream, Tensor};
use lumos::batch::Batch;
use lumos::extraction::{extract_model, serialize, CompactModel};
use lumos::gate::GateConfig;
use lumos::graph::ModelSpec;
use lumos::layers::Model;
use lumos_ffi::*;

const MLP: &str = r#"{"nodes":[{"kind":"input","name":"x","shape":[8]},
    {"kind":"fc","name":"h1","units":6,"activation":"tanh"},
    {"kind":"fc","name":"o","units":2}]}"#;

const GRAPH: &str = r#"{"nodes":[{"kind":"input","name":"x","shape":[3],"graph":true},
    {"kind":"gcn","name":"g","units":4},
    {"kind":"pool","name":"p"},
    {"kind":"fc","name":"o","units":1}]}"#;

fn compact(json: &str, closed_inputs: &[usize]) -> CompactModel {
    let spec: ModelSpec = serde_json::from_str(json).unwrap();
    let mut model = Model::new(spec, GateConfig::default(), 3).unwrap();
    if let Some(g) = model.gates.get_mut("h1.gate") {
        let mut la = vec![4.0; g.len()];
        for &i in closed_inputs {
            la[i] = -8.0;
        }
        g.log_alpha = Tensor::vector(la);
    }
    extract_model(&model).unwrap().compact
}

fn load(bytes: &[u8]) -> *mut LumosModel {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { lumos_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut h) }, LumosStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    let p = lumos_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn forward_matches_the_rust_model_bit_for_bit() {
    let cm = compact(MLP, &[1, 4]);
    let h = load(&serialize(&cm));
    unsafe {
        assert_eq!(lumos_model_input_width(h), 8);
        assert_eq!(lumos_model_output_width(h), 2);
        assert_eq!(lumos_model_param_count(h), cm.param_count());

        let mut keep = [usize::MAX; 8];
        let mut n = 0;
        assert_eq!(lumos_model_input_features(h, keep.as_mut_ptr(), keep.len(), &mut n), LumosStatus::Ok);
        assert_eq!(&keep[..n], &[0, 2, 3, 5, 6, 7]);

        let mut rng = RngStream::new(9);
        let x = lumos::autodiff::uniform_sample(&mut rng, -1.0, 1.0, &[5, 8]);
        let expect = cm.forward(&Batch::dense(x.clone())).unwrap();
        let mut out = vec![0.0; 10];
        assert_eq!(lumos_model_forward(h, x.data().as_ptr(), 5, out.as_mut_ptr(), out.len()), LumosStatus::Ok);
        assert_eq!(out, expect.data());
        lumos_model_free(h);
    }
}

#[test]
fn load_from_path_and_report_failures() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.lum");
    let bytes = serialize(&compact(MLP, &[]));
    std::fs::write(&path, &bytes).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(lumos_model_load(c_path.as_ptr(), &mut h), LumosStatus::Ok);
        lumos_model_free(h);

        let missing = CString::new(dir.path().join("none.lum").to_str().unwrap()).unwrap();
        assert_eq!(lumos_model_load(missing.as_ptr(), &mut h), LumosStatus::Io);
        assert!(h.is_null());
        assert!(last_error().contains("none.lum"));

        let mut bad = bytes.clone();
        bad[12] ^= 1;
        assert_eq!(lumos_model_from_bytes(bad.as_ptr(), bad.len(), &mut h), LumosStatus::Format);
        assert!(last_error().contains("checksum"));
        assert_eq!(lumos_model_from_bytes(bytes.as_ptr(), 3, &mut h), LumosStatus::Format);
    }
}

#[test]
fn argument_checks() {
    let h = load(&serialize(&compact(MLP, &[])));
    let x = [0.0; 16];
    let mut out = [0.0; 4];
    unsafe {
        assert_eq!(lumos_model_from_bytes(ptr::null(), 0, &mut ptr::null_mut()), LumosStatus::NullPointer);
        assert_eq!(lumos_model_from_bytes(x.as_ptr().cast(), 8, ptr::null_mut()), LumosStatus::NullPointer);
        assert_eq!(lumos_model_forward(ptr::null(), x.as_ptr(), 2, out.as_mut_ptr(), 4), LumosStatus::NullPointer);
        assert_eq!(lumos_model_forward(h, x.as_ptr(), 2, out.as_mut_ptr(), 3), LumosStatus::Shape);
        assert!(last_error().contains("need 4"));
        assert_eq!(lumos_model_forward(h, x.as_ptr(), 2, out.as_mut_ptr(), 4), LumosStatus::Ok);

        let mut n = 0;
        assert_eq!(lumos_model_input_features(h, ptr::null_mut(), 0, &mut n), LumosStatus::Shape);
        assert_eq!(n, 8);

        assert_eq!(lumos_model_input_width(ptr::null()), 0);
        lumos_model_free(ptr::null_mut());
        lumos_model_free(h);
    }
}

#[test]
fn graph_models_are_refused() {
    let h = load(&serialize(&compact(GRAPH, &[])));
    let x = [0.0; 3];
    let mut out = [0.0; 1];
    unsafe {
        assert_eq!(lumos_model_forward(h, x.as_ptr(), 1, out.as_mut_ptr(), 1), LumosStatus::InvalidArgument);
        lumos_model_free(h);
    }
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(lumos_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lumos.h")).unwrap();
    for sym in ["lumos_model_load", "lumos_model_forward", "lumos_last_error_message", "typedef struct LumosModel LumosModel"] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}

/// Compiles and runs a C program against the static library when a C
/// compiler is on the path.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    let Some(lib) = std::fs::read_dir(deps.parent().unwrap())
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .find(|p| p.file_name().is_some_and(|n| n == "liblumos_ffi.a"))
    else {
        eprintln!("static library not built; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.lum");
    std::fs::write(&model, serialize(&compact(MLP, &[0]))).unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "lumos.h"
int main(int argc, char **argv) {
    LumosModel *m = NULL;
    if (lumos_model_load(argv[1], &m) != LUMOS_STATUS_OK) { puts(lumos_last_error_message()); return 1; }
    size_t w = lumos_model_input_width(m), k = lumos_model_output_width(m);
    double x[8] = {0}, y[2];
    if (w != 8 || k != 2) return 2;
    if (lumos_model_forward(m, x, 1, y, 2) != LUMOS_STATUS_OK) return 3;
    if (lumos_model_forward(m, x, 1, y, 1) != LUMOS_STATUS_SHAPE) return 4;
    lumos_model_free(m);
    printf("ok %s\n", lumos_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = std::process::Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = std::process::Command::new(&bin).arg(&model).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
