use std::ffi::{CStr, CString};
use std::ptr;

use meta_lqr::taskgen;
use meta_lqr_ffi::*;

fn last_error() -> String {
    let p = mlqr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn boeing_set(m: usize) -> *mut MlqrTaskSet {
    let levels = [1e-3; 4];
    let mut set = ptr::null_mut();
    assert_eq!(unsafe { mlqr_task_set_boeing(m, levels.as_ptr(), 7, &mut set) }, MlqrStatus::Ok);
    set
}

fn k0() -> *mut MlqrGain {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { mlqr_gain_boeing_k0(&mut g) }, MlqrStatus::Ok);
    g
}

#[test]
fn cost_matches_library() {
    let (task, gain) = taskgen::boeing_nominal();
    let json = CString::new(serde_json::to_string(&vec![task.clone()]).unwrap()).unwrap();
    let mut set = ptr::null_mut();
    let g = k0();
    unsafe {
        assert_eq!(mlqr_task_set_from_json(json.as_ptr(), &mut set), MlqrStatus::Ok);
        let mut len = 0;
        assert_eq!(mlqr_task_set_len(set, &mut len), MlqrStatus::Ok);
        assert_eq!(len, 1);
        let mut c = 0.0;
        assert_eq!(mlqr_cost(set, 0, g, &mut c), MlqrStatus::Ok);
        assert_eq!(c, meta_lqr::lqr::cost(&task, &gain).unwrap());

        let mut grad = [0.0; 8];
        assert_eq!(mlqr_gradient(set, 0, g, grad.as_mut_ptr(), grad.len()), MlqrStatus::Ok);
        let expect = meta_lqr::linalg::vec_row_major(&meta_lqr::lqr::gradient_exact(&task, &gain).unwrap());
        assert_eq!(grad.to_vec(), expect);

        let mut small = [0.0; 3];
        assert_eq!(mlqr_gradient(set, 0, g, small.as_mut_ptr(), small.len()), MlqrStatus::BufferTooSmall);
        assert!(last_error().contains('8'));

        let mut opt = ptr::null_mut();
        assert_eq!(mlqr_optimal_gain(set, 0, &mut opt), MlqrStatus::Ok);
        let mut jstar = 0.0;
        assert_eq!(mlqr_cost(set, 0, opt, &mut jstar), MlqrStatus::Ok);
        assert!(jstar < c);
        mlqr_gain_free(opt);
        mlqr_gain_free(g);
        mlqr_task_set_free(set);
    }
}

#[test]
fn gain_roundtrip_and_dims() {
    let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(mlqr_gain_new(2, 3, data.as_ptr(), &mut g), MlqrStatus::Ok);
        let (mut nu, mut nx) = (0, 0);
        assert_eq!(mlqr_gain_dims(g, &mut nu, &mut nx), MlqrStatus::Ok);
        assert_eq!((nu, nx), (2, 3));
        let mut back = [0.0; 6];
        assert_eq!(mlqr_gain_values(g, back.as_mut_ptr(), 6), MlqrStatus::Ok);
        assert_eq!(back, data);
        mlqr_gain_free(g);
    }
}

#[test]
fn errors_are_reported() {
    let set = boeing_set(3);
    unsafe {
        let mut c = 0.0;
        assert_eq!(mlqr_cost(set, 0, ptr::null(), &mut c), MlqrStatus::NullPointer);
        assert!(last_error().contains("gain"));

        let zeros = [0.0; 8];
        let mut g = ptr::null_mut();
        assert_eq!(mlqr_gain_new(2, 4, zeros.as_ptr(), &mut g), MlqrStatus::Ok);
        assert_eq!(mlqr_cost(set, 0, g, &mut c), MlqrStatus::Unstable);
        assert_eq!(mlqr_cost(set, 9, g, &mut c), MlqrStatus::InvalidInput);
        mlqr_gain_free(g);

        let wrong = [0.0; 3];
        assert_eq!(mlqr_gain_new(1, 3, wrong.as_ptr(), &mut g), MlqrStatus::Ok);
        assert_eq!(mlqr_cost(set, 0, g, &mut c), MlqrStatus::Dimension);
        mlqr_gain_free(g);

        let bad = CString::new("{\"tasks\": 3}").unwrap();
        let mut other = ptr::null_mut();
        assert_eq!(mlqr_task_set_from_json(bad.as_ptr(), &mut other), MlqrStatus::InvalidInput);
        assert!(other.is_null());
        mlqr_task_set_free(set);
        mlqr_task_set_free(ptr::null_mut());
        mlqr_gain_free(ptr::null_mut());
        mlqr_string_free(ptr::null_mut());
    }
}

#[test]
fn meta_learning_and_theory() {
    let set = boeing_set(4);
    let g0 = k0();
    let params = MlqrMamlParams { eta_l: 1e-6, eta: 4e-5, iterations: 20, max_halvings: 10 };
    let zo = MlqrZoParams { radius: 1e-2, samples: 10, seed: 3 };
    unsafe {
        let mut before = 0.0;
        assert_eq!(mlqr_cost(set, 0, g0, &mut before), MlqrStatus::Ok);
        let mut mb = ptr::null_mut();
        assert_eq!(mlqr_run_model_based(set, g0, &params, &mut mb), MlqrStatus::Ok);
        let mut after = 0.0;
        assert_eq!(mlqr_cost(set, 0, mb, &mut after), MlqrStatus::Ok);
        assert!(after < before);

        let mut mf = ptr::null_mut();
        assert_eq!(mlqr_run_model_free(set, g0, &params, &zo, &mut mf), MlqrStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(mlqr_run_model_free(set, g0, &params, &zo, &mut again), MlqrStatus::Ok);
        let (mut a, mut b) = ([0.0; 8], [0.0; 8]);
        mlqr_gain_values(mf, a.as_mut_ptr(), 8);
        mlqr_gain_values(again, b.as_mut_ptr(), 8);
        assert_eq!(a, b);

        let bad = MlqrMamlParams { eta: -1.0, ..params };
        let mut none = ptr::null_mut();
        assert_eq!(mlqr_run_model_based(set, g0, &bad, &mut none), MlqrStatus::Config);

        let mut json = ptr::null_mut();
        assert_eq!(mlqr_check_theory(set, g0, &params, &zo, &mut json), MlqrStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        mlqr_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["conditions"].as_array().is_some_and(|c| !c.is_empty()));

        for g in [mb, mf, again, g0] {
            mlqr_gain_free(g);
        }
        mlqr_task_set_free(set);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/meta_lqr.h")).unwrap();
    for name in ["mlqr_task_set_from_json", "mlqr_run_model_free", "mlqr_check_theory", "MLQR_STATUS_GUARD"] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
