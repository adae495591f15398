use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use umood::masking::{gen_mask, save_mask};
use umood::nn::{save_checkpoint, Checkpoint, Classifier};
use umood::numerics::RandomStream;
use umood::scoring::{score_energy, score_msp};
use umood_ffi::*;

fn model() -> Classifier {
    Classifier::init(vec![3, 5, 4], &mut RandomStream::new(7)).unwrap()
}

fn last_error() -> String {
    let p = umood_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn checkpoint_roundtrip_and_scores_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let m = model();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&Checkpoint::of(&m, 3, 1, "abc"), &path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();

    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(umood_model_load(c.as_ptr(), &mut h), UmoodStatus::Ok);
        assert_eq!(umood_model_input_dim(h), 3);
        assert_eq!(umood_model_class_count(h), 4);
        assert_eq!(umood_model_param_count(h), m.params().len());

        let x = [0.3, -1.0, 2.0, 1.5, 0.0, -0.2];
        let mut logits = [0.0; 8];
        assert_eq!(umood_forward(h, ptr::null(), x.as_ptr(), 2, 3, logits.as_mut_ptr(), 8), UmoodStatus::Ok);
        assert_eq!(&logits[4..], m.forward(&x[3..], None).unwrap().as_slice());

        let mut s = [0.0; 2];
        assert_eq!(
            umood_score(h, ptr::null(), UmoodMethod::Energy, 1.0, 0.0, x.as_ptr(), 2, 3, s.as_mut_ptr()),
            UmoodStatus::Ok
        );
        assert_eq!(s[0], score_energy(&m, &x[..3], 1.0, None).unwrap());
        assert_eq!(
            umood_score(h, ptr::null(), UmoodMethod::Odin, 1.0, 0.0, x.as_ptr(), 2, 3, s.as_mut_ptr()),
            UmoodStatus::Ok
        );
        assert_eq!(s[1], score_msp(&m, &x[3..], None).unwrap());
        umood_model_free(h);
    }
}

#[test]
fn masks_apply_and_mismatches_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = model();
    let mask = gen_mask(&m, 0.5, 3).unwrap();
    let mp = dir.path().join("m.mask");
    save_mask(&mask, &mp).unwrap();
    let c = CString::new(mp.to_str().unwrap()).unwrap();
    let dims = m.dims().to_vec();
    let x = [0.3, -1.0, 2.0];
    unsafe {
        let (mut h, mut k) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            umood_model_from_params(dims.as_ptr(), dims.len(), m.params().as_ptr(), m.params().len(), &mut h),
            UmoodStatus::Ok
        );
        assert_eq!(umood_mask_load(c.as_ptr(), &mut k), UmoodStatus::Ok);
        let mut z = [0.0; 4];
        assert_eq!(umood_forward(h, k, x.as_ptr(), 1, 3, z.as_mut_ptr(), 4), UmoodStatus::Ok);
        assert_eq!(z.to_vec(), m.forward(&x, Some(&mask)).unwrap());

        let other = Classifier::init(vec![3, 6, 4], &mut RandomStream::new(1)).unwrap();
        let od = other.dims().to_vec();
        let mut h2 = ptr::null_mut();
        umood_model_from_params(od.as_ptr(), od.len(), other.params().as_ptr(), other.params().len(), &mut h2);
        assert_eq!(umood_forward(h2, k, x.as_ptr(), 1, 3, z.as_mut_ptr(), 4), UmoodStatus::InvalidArgument);
        assert!(last_error().contains("mask"));
        umood_model_free(h2);
        umood_mask_free(k);
        umood_model_free(h);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut h = ptr::null_mut();
        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        assert_eq!(umood_model_load(missing.as_ptr(), &mut h), UmoodStatus::Data);
        assert!(h.is_null());
        assert!(last_error().contains("not found"));

        assert_eq!(umood_model_load(ptr::null(), &mut h), UmoodStatus::NullPointer);

        let dims = [2usize, 3];
        let params = [0.0; 4];
        assert_eq!(
            umood_model_from_params(dims.as_ptr(), 2, params.as_ptr(), 4, &mut h),
            UmoodStatus::InvalidArgument
        );

        let m = model();
        let d = m.dims().to_vec();
        umood_model_from_params(d.as_ptr(), d.len(), m.params().as_ptr(), m.params().len(), &mut h);
        let x = [0.0; 2];
        let mut out = [0.0; 4];
        assert_eq!(
            umood_forward(h, ptr::null(), x.as_ptr(), 1, 2, out.as_mut_ptr(), 4),
            UmoodStatus::InvalidArgument
        );
        assert_eq!(umood_forward(ptr::null(), ptr::null(), x.as_ptr(), 1, 2, out.as_mut_ptr(), 4), UmoodStatus::NullPointer);
        umood_model_free(h);
        umood_model_free(ptr::null_mut());
        assert_eq!(umood_model_input_dim(ptr::null()), 0);
    }
}

#[test]
fn metrics_match_library() {
    let id = [3.0, 2.0, 2.0, 1.0];
    let ood = [2.0, 0.0, -1.0];
    let mut m = UmoodMetrics::default();
    unsafe {
        assert_eq!(umood_metrics(id.as_ptr(), 4, ood.as_ptr(), 3, &mut m), UmoodStatus::Ok);
    }
    let s = umood::metrics::ScoredSet::new(id.to_vec(), ood.to_vec()).unwrap();
    assert_eq!(m.fpr95, umood::metrics::fpr95(&s).unwrap());
    assert_eq!(m.auroc, umood::metrics::auroc(&s).unwrap());
    assert_eq!(m.aupr, umood::metrics::aupr(&s).unwrap());
    unsafe {
        assert_eq!(umood_metrics(id.as_ptr(), 0, ood.as_ptr(), 3, &mut m), UmoodStatus::InvalidArgument);
    }
    let v = unsafe { CStr::from_ptr(umood_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/abi-<hash> → target/<profile>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

#[test]
fn header_is_current() {
    let h = std::fs::read_to_string(header_dir().join("umood.h")).unwrap();
    for sym in [
        "umood_last_error",
        "umood_model_load",
        "umood_model_from_params",
        "umood_mask_load",
        "umood_forward",
        "umood_score",
        "umood_metrics",
        "UMOOD_STATUS_DATA = 3",
        "typedef struct UmoodModel UmoodModel;",
    ] {
        assert!(h.contains(sym), "header lacks {sym}");
    }
}

/// Compile and run a C client against the header and the static library.
/// Skipped when no C compiler is installed.
#[test]
fn c_client_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let lib = target_dir().join("libumood_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "umood.h"
int main(void) {
    size_t dims[3] = {2, 3, 2};
    double params[17];
    for (int i = 0; i < 17; i++) params[i] = 0.1 * (i % 5) - 0.2;
    UmoodModel *m = NULL;
    if (umood_model_from_params(dims, 3, params, 17, &m) != UMOOD_STATUS_OK) return 1;
    double x[4] = {1.0, -1.0, 0.5, 2.0}, s[2];
    if (umood_score(m, NULL, UMOOD_METHOD_MSP, 1.0, 0.0, x, 2, 2, s) != UMOOD_STATUS_OK) return 2;
    if (umood_score(m, NULL, UMOOD_METHOD_MSP, 1.0, 0.0, x, 2, 3, s) != UMOOD_STATUS_INVALID_ARGUMENT) return 3;
    if (umood_last_error() == NULL) return 4;
    UmoodMetrics r;
    double id[2] = {2.0, 1.0}, ood[2] = {0.0, 1.5};
    if (umood_metrics(id, 2, ood, 2, &r) != UMOOD_STATUS_OK) return 5;
    printf("%.3f %.3f %.3f\n", s[0], s[1], r.auroc);
    umood_model_free(m);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("client");
    let out = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(header_dir())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "cc failed: {}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "client exited with {:?}", run.status.code());
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.trim().ends_with("0.750"), "{text}");
}
