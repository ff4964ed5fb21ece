use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use cmt_core::autodiff::Tensor;
use cmt_core::data::Task;
use cmt_core::interpret::RolloutInput;
use cmt_core::model::{param_layout, predict, save_checkpoint, CheckpointMeta, CrossModalConfig, ModelInput, ModelParams};
use cmt_core::synthgen::toy_stay;
use cmt_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cmt_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn metrics_through_the_c_abi() {
    let s = [0.9, 0.8, 0.7, 0.6];
    let l = [1u8, 0, 1, 0];
    let mut v = 0.0;
    assert_eq!(unsafe { cmt_auroc(s.as_ptr(), l.as_ptr(), 4, &mut v) }, CmtStatus::Ok);
    assert_eq!(v, 0.75);
    assert_eq!(unsafe { cmt_auprc(s.as_ptr(), l.as_ptr(), 4, &mut v) }, CmtStatus::Ok);
    assert!((v - 5.0 / 6.0).abs() < 1e-15);
    assert!(last_error().is_empty());

    let ones = [1u8; 4];
    assert_eq!(unsafe { cmt_auroc(s.as_ptr(), ones.as_ptr(), 4, &mut v) }, CmtStatus::Undefined);
    assert!(last_error().contains("AUROC"));
    assert_eq!(unsafe { cmt_auroc(ptr::null(), l.as_ptr(), 4, &mut v) }, CmtStatus::NullPointer);
}

#[test]
fn rollout_from_buffers_and_files() {
    let layers = [0.5f64; 8];
    let mut out = [0.0; 4];
    assert_eq!(unsafe { cmt_rollout(layers.as_ptr(), 2, 2, out.as_mut_ptr()) }, CmtStatus::Ok);
    for (a, b) in out.iter().zip([0.625, 0.375, 0.375, 0.625]) {
        assert!((a - b).abs() < 1e-12);
    }
    let bad = [0.9f64, 0.9, 0.5, 0.5];
    assert_eq!(unsafe { cmt_rollout(bad.as_ptr(), 1, 2, out.as_mut_ptr()) }, CmtStatus::InvalidInput);

    let dir = tempfile::tempdir().unwrap();
    let input = RolloutInput {
        layers: vec![Tensor::new(vec![2, 2], vec![0.5; 4]).unwrap()],
        tokens: vec!["[CLS]".into(), "ok".into()],
        word_groups: vec![None, Some(0)],
        chunk_tokens: None,
    };
    input.write(dir.path()).unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cmt_rollout_load(path.as_ptr(), &mut h) }, CmtStatus::Ok);
    assert_eq!(unsafe { cmt_rollout_size(h) }, 2);
    let mut small = [0.0; 3];
    assert_eq!(unsafe { cmt_rollout_matrix(h, small.as_mut_ptr(), 3) }, CmtStatus::BufferTooSmall);
    assert_eq!(unsafe { cmt_rollout_matrix(h, out.as_mut_ptr(), 4) }, CmtStatus::Ok);
    assert!((out[0] - 0.75).abs() < 1e-12);
    unsafe { cmt_rollout_free(h) };

    let missing = CString::new("/nonexistent/rollout").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cmt_rollout_load(missing.as_ptr(), &mut h) }, CmtStatus::Io);
    assert!(h.is_null());
}

#[test]
fn checkpoint_prediction_matches_core() {
    let cfg = CrossModalConfig::default();
    let params = ModelParams::<f32>::init(&cfg, 5).unwrap();
    let meta = CheckpointMeta {
        config: cfg.clone(),
        task: Task::Decomp,
        seed: 5,
        step: 0,
        epoch: 0,
        param_names: param_layout(&cfg).into_iter().map(|(n, _)| n).collect(),
        config_overrides: Vec::new(),
        scaler: None,
        note_types: None,
    };
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &params, &meta).unwrap();

    let stay = toy_stay(6, &[0.5, 2.0, 4.5], 1);
    let input = ModelInput::<f32>::from_stay(&stay).unwrap();
    let (expected, _) = predict(&params, &input).unwrap();

    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cmt_model_load(path.as_ptr(), &mut h) }, CmtStatus::Ok);
    assert_eq!(unsafe { (cmt_model_n_outputs(h), cmt_model_d_ehr(h), cmt_model_d_cn(h)) }, (1, 42, 769));
    let mut out = vec![0f32; 6];
    let status = unsafe {
        cmt_model_predict(
            h,
            input.ehr.data().as_ptr(),
            6,
            input.notes.data().as_ptr(),
            input.note_times.as_ptr(),
            input.notes.rows(),
            out.as_mut_ptr(),
            out.len(),
        )
    };
    assert_eq!(status, CmtStatus::Ok, "{}", last_error());
    assert_eq!(out, expected.data());
    let status = unsafe {
        cmt_model_predict(h, input.ehr.data().as_ptr(), 6, ptr::null(), ptr::null(), 0, out.as_mut_ptr(), 5)
    };
    assert_eq!(status, CmtStatus::BufferTooSmall);
    unsafe { cmt_model_free(h) };
    unsafe { cmt_model_free(ptr::null_mut()) };
}

#[test]
fn header_declares_the_api() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cmt.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["cmt_auroc", "cmt_auprc", "cmt_rollout_load", "cmt_model_predict", "cmt_last_error", "CMT_STATUS_OK"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    if let Ok(out) = std::process::Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
