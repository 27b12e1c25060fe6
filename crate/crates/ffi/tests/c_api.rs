use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use peduncle_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ped_last_error_message()) }.to_string_lossy().into_owned()
}

fn simulated(seed: u64) -> *mut PedTrial {
    let config = CString::new(r#"{ "noise_sigma": 0.0 }"#).unwrap();
    let mut trial = ptr::null_mut();
    let status = unsafe { ped_simulate_trial(config.as_ptr(), seed, 0, &mut trial) };
    assert_eq!(status, PedStatus::Ok, "{}", last_error());
    trial
}

#[test]
fn simulate_fit_and_score() {
    let trial = simulated(3);
    unsafe {
        assert!(ped_trial_sample_count(trial) > 10);
        let mut truth = [0.0; 3];
        assert_eq!(ped_trial_ground_truth(trial, truth.as_mut_ptr()), PedStatus::Ok);

        let mut result = ptr::null_mut();
        assert_eq!(ped_fit(trial, ptr::null(), &mut result), PedStatus::Ok, "{}", last_error());
        let mut summary = std::mem::zeroed::<PedFitSummary>();
        assert_eq!(ped_fit_result_get(result, &mut summary), PedStatus::Ok);
        assert!(summary.converged);
        assert!(summary.final_mse < 1e-10);
        let err = ped_localization_error(summary.r_o_hat.as_ptr(), truth.as_ptr());
        assert!(err < 1e-6, "{err}");
        assert!(last_error().is_empty());

        ped_fit_result_free(result);
        ped_trial_free(trial);
    }
}

#[test]
fn save_load_and_bias_compensation() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.json").to_str().unwrap()).unwrap();
    let trial = simulated(4);
    unsafe {
        assert_eq!(ped_trial_save(trial, path.as_ptr()), PedStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(ped_trial_load(path.as_ptr(), &mut loaded), PedStatus::Ok);
        assert_eq!(ped_trial_sample_count(loaded), ped_trial_sample_count(trial));
        let mut clean = ptr::null_mut();
        assert_eq!(ped_trial_bias_compensate(loaded, &mut clean), PedStatus::Ok);
        assert_eq!(ped_trial_sample_count(clean), ped_trial_sample_count(trial));
        ped_trial_free(clean);
        ped_trial_free(loaded);
        ped_trial_free(trial);
    }
}

#[test]
fn trial_from_arrays_matches_the_model() {
    // Hand moves straight up from the origin; attachment 0.1 m above the fruit.
    let (k, l) = (250.0, 0.1);
    let n = 20;
    let truth = [0.0, 0.0, 0.1];
    let mut t = Vec::new();
    let mut trans = Vec::new();
    let mut rot = Vec::new();
    let mut force = Vec::new();
    for i in 0..n {
        let z = -0.001 * i as f64;
        t.push(i as f64 * 0.002);
        trans.extend([0.0, 0.0, z]);
        rot.extend([1.0, 0.0, 0.0, 0.0]);
        let stretch = truth[2] - z - l;
        force.extend([0.0, 0.0, k * stretch]);
    }
    let id = CString::new("arrays").unwrap();
    let grasp = [0.0; 3];
    let mut trial = ptr::null_mut();
    unsafe {
        let status = ped_trial_from_arrays(
            id.as_ptr(),
            true,
            k,
            l,
            grasp.as_ptr(),
            n,
            t.as_ptr(),
            trans.as_ptr(),
            rot.as_ptr(),
            force.as_ptr(),
            ptr::null(),
            truth.as_ptr(),
            &mut trial,
        );
        assert_eq!(status, PedStatus::Ok, "{}", last_error());
        assert_eq!(ped_trial_sample_count(trial), n);
        ped_trial_free(trial);

        let status = ped_trial_from_arrays(
            id.as_ptr(),
            true,
            -1.0,
            l,
            grasp.as_ptr(),
            n,
            t.as_ptr(),
            trans.as_ptr(),
            rot.as_ptr(),
            force.as_ptr(),
            ptr::null(),
            ptr::null(),
            &mut trial,
        );
        assert_eq!(status, PedStatus::Validation);
        assert!(!last_error().is_empty());
    }
}

#[test]
fn non_converged_fit_still_returns_a_result() {
    let trial = simulated(5);
    let mut config = ped_solver_config_default();
    config.max_iterations_per_run = 1;
    config.max_restarts = 0;
    unsafe {
        let mut result = ptr::null_mut();
        assert_eq!(ped_fit(trial, &config, &mut result), PedStatus::NotConverged);
        assert!(!result.is_null());
        let mut summary = std::mem::zeroed::<PedFitSummary>();
        assert_eq!(ped_fit_result_get(result, &mut summary), PedStatus::Ok);
        assert!(!summary.converged);
        assert_eq!(summary.restarts_used, 0);
        ped_fit_result_free(result);
        ped_trial_free(trial);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut trial = ptr::null_mut();
        assert_eq!(ped_trial_load(ptr::null(), &mut trial), PedStatus::NullArgument);
        assert!(last_error().contains("path"));

        let missing = CString::new("/nonexistent/dir/trial.json").unwrap();
        assert_eq!(ped_trial_load(missing.as_ptr(), &mut trial), PedStatus::Io);
        assert!(trial.is_null());

        let bad = CString::new(r#"{ "noise_sigma": "loud" }"#).unwrap();
        assert_eq!(ped_simulate_trial(bad.as_ptr(), 1, 0, &mut trial), PedStatus::Validation);

        let mut result = ptr::null_mut();
        assert_eq!(ped_fit(ptr::null(), ptr::null(), &mut result), PedStatus::NullArgument);
        assert_eq!(ped_fit_result_get(ptr::null(), ptr::null_mut()), PedStatus::NullArgument);
        assert_eq!(ped_trial_sample_count(ptr::null()), 0);
        ped_trial_free(ptr::null_mut());
        ped_fit_result_free(ptr::null_mut());

        let a = [0.0, 0.0, 1.0];
        let mut deg = 0.0;
        assert_eq!(ped_orientation_error(a.as_ptr(), a.as_ptr(), a.as_ptr(), &mut deg), PedStatus::Solver);
        let b = [1.0, 0.0, 0.0];
        let o = [0.0; 3];
        assert_eq!(ped_orientation_error(a.as_ptr(), b.as_ptr(), o.as_ptr(), &mut deg), PedStatus::Ok);
        assert!((deg - 90.0).abs() < 1e-12);
        assert!(ped_localization_error(ptr::null(), a.as_ptr()).is_nan());
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/peduncle.h");
    let text = std::fs::read_to_string(&header).expect("header generated by build script");
    for name in [
        "ped_trial_load",
        "ped_trial_from_arrays",
        "ped_fit",
        "ped_fit_result_get",
        "ped_simulate_trial",
        "ped_last_error_message",
        "PED_STATUS_NOT_CONVERGED",
        "typedef struct PedTrial PedTrial",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&header).output() else {
        eprintln!("cc not available; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
