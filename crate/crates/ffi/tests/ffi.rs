use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use oodbench_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ood_last_error()) }.to_string_lossy().into_owned()
}

fn tiny_spec() -> OodGridSpec {
    OodGridSpec {
        num_categories: 3,
        num_conditions: 3,
        grid_rows: 2,
        grid_cols: 2,
        glyph_size: 6,
        canvas_size: 12,
        samples_per_combination: 4,
        noise_std: 0.05,
    }
}

#[test]
fn dataset_round_trip() {
    unsafe {
        let mut ds: *mut OodDataset = ptr::null_mut();
        assert_eq!(ood_dataset_generate(&tiny_spec(), 3, &mut ds), OodStatus::Ok);
        assert_eq!(ood_dataset_len(ds), 36);
        let (mut c, mut n, mut h, mut w) = (0, 0, 0, 0);
        assert_eq!(ood_dataset_shape(ds, &mut c, &mut n, &mut h, &mut w), OodStatus::Ok);
        assert_eq!((c, n, h, w), (3, 3, 12, 12));

        let mut px = vec![0u8; 144];
        let (mut cat, mut cond) = (9, 9);
        assert_eq!(ood_dataset_item(ds, 5, px.as_mut_ptr(), 144, &mut cat, &mut cond), OodStatus::Ok);
        assert!(cat < 3 && cond < 3);
        assert_eq!(
            ood_dataset_item(ds, 5, px.as_mut_ptr(), 10, &mut cat, &mut cond),
            OodStatus::BufferTooSmall
        );
        assert_eq!(
            ood_dataset_item(ds, 99, px.as_mut_ptr(), 144, &mut cat, &mut cond),
            OodStatus::InvalidArgument
        );
        assert!(last_error().contains("out of range"));

        let dir = tempfile::tempdir().unwrap();
        let p = CString::new(dir.path().join("d").to_str().unwrap()).unwrap();
        assert_eq!(ood_dataset_save(ds, p.as_ptr()), OodStatus::Ok);
        let mut back: *mut OodDataset = ptr::null_mut();
        assert_eq!(ood_dataset_load(p.as_ptr(), &mut back), OodStatus::Ok);
        let mut px2 = vec![0u8; 144];
        ood_dataset_item(back, 5, px2.as_mut_ptr(), 144, &mut cat, &mut cond);
        assert_eq!(px, px2);
        ood_dataset_free(back);
        ood_dataset_free(ds);
        ood_dataset_free(ptr::null_mut());
    }
}

#[test]
fn errors_and_nulls() {
    unsafe {
        let mut ds: *mut OodDataset = ptr::null_mut();
        assert_eq!(ood_dataset_generate(ptr::null(), 0, &mut ds), OodStatus::NullPointer);
        let mut bad = tiny_spec();
        bad.num_conditions = 7;
        assert_eq!(ood_dataset_generate(&bad, 0, &mut ds), OodStatus::InvalidArgument);
        assert!(!last_error().is_empty());
        let missing = CString::new("/nonexistent/oodbench").unwrap();
        assert_ne!(ood_dataset_load(missing.as_ptr(), &mut ds), OodStatus::Ok);
        assert!(ds.is_null());
        let mut spec = tiny_spec();
        assert_eq!(ood_grid_spec_default(&mut spec), OodStatus::Ok);
        assert_eq!(last_error(), "");
        assert_eq!((spec.num_categories, spec.grid_rows, spec.canvas_size), (9, 3, 42));
        assert_eq!(CStr::from_ptr(ood_version()).to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn ladder_levels() {
    unsafe {
        let degrees = [2usize, 3, 4];
        let mut l: *mut OodLadder = ptr::null_mut();
        assert_eq!(ood_ladder_sample(5, 5, degrees.as_ptr(), 3, 11, &mut l), OodStatus::Ok);
        assert_eq!(ood_ladder_num_levels(l), 3);
        let mut count = 0;
        assert_eq!(ood_ladder_level_pairs(l, 1, ptr::null_mut(), 0, &mut count), OodStatus::Ok);
        assert_eq!(count, 15);
        let mut pairs = vec![0usize; 2 * count];
        assert_eq!(ood_ladder_level_pairs(l, 1, pairs.as_mut_ptr(), pairs.len(), &mut count), OodStatus::Ok);
        for cat in 0..5 {
            assert_eq!(pairs.chunks(2).filter(|p| p[0] == cat).count(), 3);
        }
        assert_eq!(ood_ladder_level_pairs(l, 3, ptr::null_mut(), 0, &mut count), OodStatus::InvalidArgument);
        ood_ladder_free(l);
        let bad = [3usize, 2];
        assert_eq!(ood_ladder_sample(5, 5, bad.as_ptr(), 2, 0, &mut l), OodStatus::InvalidArgument);
    }
}

#[test]
fn scores_and_statistics() {
    unsafe {
        let cells = [0.8, 0.4, 0.2, 0.2];
        let mut s = OodNeuronScore::default();
        assert_eq!(ood_score_cells(cells.as_ptr(), 2, 2, false, &mut s), OodStatus::Ok);
        assert!((s.selectivity - 0.5).abs() < 1e-12);
        assert!((s.invariance - 0.6).abs() < 1e-12);
        assert!((s.si - 0.3f64.sqrt()).abs() < 1e-12);

        let si = [0.0, 0.0, 0.0, 0.0, 1.0];
        let mut sum = OodSiSummary::default();
        assert_eq!(ood_layer_si_summary(si.as_ptr(), 5, 0.2, &mut sum), OodStatus::Ok);
        assert_eq!((sum.summary, sum.top_count), (1.0, 1));

        let (mut m, mut h) = (0.0, 0.0);
        assert_eq!(ood_mean_ci95(si.as_ptr(), 5, &mut m, &mut h), OodStatus::Ok);
        assert!((h - 0.5552).abs() < 1e-3);
        assert_eq!(ood_mean_ci95(si.as_ptr(), 1, &mut m, &mut h), OodStatus::InvalidArgument);

        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [-2.0, -4.0, -6.0, -8.0];
        let mut r = 0.0;
        assert_eq!(ood_pearson(xs.as_ptr(), ys.as_ptr(), 4, &mut r), OodStatus::Ok);
        assert!((r + 1.0).abs() < 1e-12);
        let flat = [1.0; 4];
        assert_eq!(ood_pearson(xs.as_ptr(), flat.as_ptr(), 4, &mut r), OodStatus::UndefinedCorrelation);
    }
}

#[test]
fn frequency_table() {
    // Invariance-loss row: 10 SI-up cases all improving, 1 of 2 SI-down improving.
    let acc: Vec<u8> = [vec![1; 10], vec![1, 0]].concat();
    let si: Vec<u8> = [vec![1; 10], vec![0, 0]].concat();
    let mut t = OodFrequencyTable::default();
    unsafe {
        assert_eq!(ood_delta_frequency_table(acc.as_ptr(), si.as_ptr(), 12, &mut t), OodStatus::Ok);
    }
    let f = |n, d| OodFraction {
        numerator: n,
        denominator: d,
    };
    assert_eq!(t.p_acc_up, f(11, 12));
    assert_eq!(t.p_si_up, f(10, 12));
    assert_eq!(t.p_acc_up_given_si_up, f(10, 10));
    assert_eq!(t.p_acc_up_given_si_down, f(1, 2));
}

const TRAIN_CONFIG: &str = r#"{
  "data": {"grid": {"num_categories": 3, "num_conditions": 3, "cell_grid": [2, 2],
                    "glyph_size": 6, "canvas_size": 12, "samples_per_combination": 8}},
  "split": {"degrees": [1, 2], "sizes": {"train": 12, "val": 6, "ood": 9}},
  "network": {"arch": "mlp", "hidden": 8},
  "train": {"epochs": 2, "batch_size": 4}
}"#;

#[test]
fn model_train_save_load() {
    unsafe {
        let cfg = CString::new(TRAIN_CONFIG).unwrap();
        let (mut a, mut b): (*mut OodModel, *mut OodModel) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(ood_model_train(cfg.as_ptr(), &mut a), OodStatus::Ok);
        assert_eq!(ood_model_train(cfg.as_ptr(), &mut b), OodStatus::Ok);
        let mut ha = [0 as std::ffi::c_char; 65];
        let mut hb = [0 as std::ffi::c_char; 65];
        assert_eq!(ood_model_checkpoint_sha256(a, ha.as_mut_ptr(), 65), OodStatus::Ok);
        assert_eq!(ood_model_checkpoint_sha256(b, hb.as_mut_ptr(), 65), OodStatus::Ok);
        assert_eq!(CStr::from_ptr(ha.as_ptr()), CStr::from_ptr(hb.as_ptr()));
        assert_eq!(ood_model_checkpoint_sha256(a, ha.as_mut_ptr(), 64), OodStatus::BufferTooSmall);

        let mut spec = tiny_spec();
        spec.samples_per_combination = 8;
        let mut ds: *mut OodDataset = ptr::null_mut();
        ood_dataset_generate(&spec, 0, &mut ds);
        let mut acc = -1.0;
        assert_eq!(ood_model_evaluate(a, ds, &mut acc), OodStatus::Ok);
        assert!((0.0..=1.0).contains(&acc));
        let mut labels = vec![99usize; ood_dataset_len(ds)];
        assert_eq!(ood_model_predict(a, ds, labels.as_mut_ptr(), labels.len()), OodStatus::Ok);
        assert!(labels.iter().all(|&l| l < 3));
        let mut s = OodSiSummary::default();
        assert_eq!(ood_model_si_summary(a, ds, &mut s), OodStatus::Ok);
        assert!((0.0..=1.0).contains(&s.summary));

        let dir = tempfile::tempdir().unwrap();
        let ck = CString::new(dir.path().join("m.bin").to_str().unwrap()).unwrap();
        assert_eq!(ood_model_save(a, ck.as_ptr()), OodStatus::Ok);
        let net = oodbench::neuralcore::NetworkSpec::mlp((1, 12, 12), 3, 8, 0.99, 1e-3);
        let net = CString::new(serde_json::to_string(&net).unwrap()).unwrap();
        let mut c: *mut OodModel = ptr::null_mut();
        assert_eq!(ood_model_load(net.as_ptr(), ck.as_ptr(), &mut c), OodStatus::Ok);
        let mut hc = [0 as std::ffi::c_char; 65];
        ood_model_checkpoint_sha256(c, hc.as_mut_ptr(), 65);
        assert_eq!(CStr::from_ptr(ha.as_ptr()), CStr::from_ptr(hc.as_ptr()));

        let wrong = oodbench::neuralcore::NetworkSpec::mlp((1, 12, 12), 3, 9, 0.99, 1e-3);
        let wrong = CString::new(serde_json::to_string(&wrong).unwrap()).unwrap();
        let mut d: *mut OodModel = ptr::null_mut();
        assert_eq!(ood_model_load(wrong.as_ptr(), ck.as_ptr(), &mut d), OodStatus::Consistency);

        let bad_cfg = CString::new(r#"{"train": {"epochs": "x"}}"#).unwrap();
        assert_eq!(ood_model_train(bad_cfg.as_ptr(), &mut d), OodStatus::Config);
        assert!(last_error().contains("/train/epochs"));

        for m in [a, b, c] {
            ood_model_free(m);
        }
        ood_dataset_free(ds);
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_api() {
    let h = std::fs::read_to_string(crate_dir().join("include/oodbench.h")).unwrap();
    for name in [
        "typedef struct OodDataset OodDataset;",
        "typedef struct OodModel OodModel;",
        "OOD_STATUS_NULL_POINTER = 15",
        "ood_last_error(void)",
        "ood_dataset_generate(",
        "ood_ladder_level_pairs(",
        "ood_delta_frequency_table(",
        "ood_model_train(",
        "ood_mean_ci95(",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "oodbench.h"

int main(void) {
    OodGridSpec spec;
    if (ood_grid_spec_default(&spec) != OOD_STATUS_OK) return 1;
    spec.num_categories = 3; spec.num_conditions = 3;
    spec.grid_rows = 2; spec.grid_cols = 2;
    spec.glyph_size = 6; spec.canvas_size = 12; spec.samples_per_combination = 2;
    OodDataset *ds = NULL;
    if (ood_dataset_generate(&spec, 1, &ds) != OOD_STATUS_OK) return 2;
    if (ood_dataset_len(ds) != 18) return 3;
    double v[5] = {0, 0, 0, 0, 1}, mean = 0, half = 0;
    if (ood_mean_ci95(v, 5, &mean, &half) != OOD_STATUS_OK) return 4;
    if (ood_mean_ci95(v, 1, &mean, &half) != OOD_STATUS_INVALID_ARGUMENT) return 5;
    if (strlen(ood_last_error()) == 0) return 6;
    ood_dataset_free(ds);
    printf("%.4f %.4f\n", mean, half);
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping C link check: no C compiler");
        return;
    }
    // Build the static library into a private target dir so the link always
    // sees the current sources.
    let target_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("c-link");
    let status = Command::new(env!("CARGO"))
        .args(["build", "-p", "oodbench-ffi", "--lib", "--target-dir"])
        .arg(&target_dir)
        .current_dir(crate_dir())
        .status()
        .unwrap();
    assert!(status.success(), "building the static library failed");
    let lib = target_dir.join("debug").join("liboodbench_ffi.a");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.2000 0.5553");
}
