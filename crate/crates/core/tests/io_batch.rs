mod common;

use std::fs;

use peduncle_core::batch::{emit_plot_data, load_report, load_timing, run_batch, save_report, timing_path, BatchOptions, PlotKind, TrialStatus};
use peduncle_core::geometry::quaternion_wxyz;
use peduncle_core::io::{load_corpus, load_trial, save_corpus, save_trial};
use peduncle_core::model::Label;
use peduncle_core::simulator::generate_corpus;
use peduncle_core::{Error, RigidTransform, SpringParams, Trial, TrialSample, Vec3, Wrench};
use proptest::prelude::*;

fn finite(r: f64) -> impl Strategy<Value = f64> {
    prop_oneof![-r..r, Just(0.0), Just(-0.0), Just(1e-300), Just(f64::EPSILON)]
}

fn v3() -> impl Strategy<Value = Vec3> {
    (finite(10.0), finite(10.0), finite(10.0)).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn trial() -> impl Strategy<Value = Trial> {
    let sample = ((0.1..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), v3(), v3(), v3());
    (
        prop::collection::vec((1e-6..0.01f64, sample), 2..12),
        prop::bool::ANY,
        v3(),
        1.0..1000.0f64,
        0.01..0.3f64,
    )
        .prop_map(|(steps, success, grasp, k, l)| {
            let mut t = 0.0;
            let samples = steps
                .into_iter()
                .map(|(dt, ((w, x, y, z), p, f, tau))| {
                    t += dt;
                    TrialSample {
                        t,
                        pose: RigidTransform::new(quaternion_wxyz(w, x, y, z), p),
                        wrench: Wrench::sensor(f, tau),
                    }
                })
                .collect::<Vec<_>>();
            let label = if success { Label::Success } else { Label::Failure };
            let truth = samples[0].pose.transform_point(&grasp) + Vec3::new(0.0, 0.0, l);
            Trial::new("rt", label, SpringParams::new(k, l).unwrap(), grasp, Some(truth), samples).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trial_round_trip_is_lossless(trial in trial()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        save_trial(&trial, &path).unwrap();
        let back = load_trial(&path).unwrap();
        prop_assert_eq!(&back, &trial);
        save_trial(&back, dir.path().join("u.json")).unwrap();
        prop_assert_eq!(fs::read(&path).unwrap(), fs::read(dir.path().join("u.json")).unwrap());
    }
}

fn write_corpus(n: usize, failure_fraction: f64, seed: u64) -> tempfile::TempDir {
    let config = common::config(0.1, seed);
    let records = generate_corpus(&config, n, failure_fraction).unwrap();
    let trials: Vec<Trial> = records.into_iter().map(|r| r.trial).collect();
    let dir = tempfile::tempdir().unwrap();
    save_corpus(dir.path(), &trials, Some(&config)).unwrap();
    dir
}

#[test]
fn corpus_manifest_lists_every_trial() {
    let dir = write_corpus(70, 0.0, 1);
    let corpus = load_corpus(dir.path()).unwrap();
    assert_eq!(corpus.manifest.trials.len(), 70);
    assert_eq!(corpus.manifest.seed, Some(1));
    assert_eq!(corpus.manifest.config_digest.as_deref(), Some(common::config(0.1, 1).digest().as_str()));
    assert!(corpus.entries.iter().all(|e| e.trial.is_ok()));
}

#[test]
fn empty_or_missing_corpus_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_corpus(dir.path()), Err(Error::EmptyInput(_))));
    save_corpus(dir.path(), &[], None).unwrap();
    assert!(matches!(load_corpus(dir.path()), Err(Error::EmptyInput(_))));
    assert!(matches!(load_corpus(dir.path().join("nope")), Err(Error::Io { .. })));
}

#[test]
fn corrupted_trial_does_not_abort_the_batch() {
    let dir = write_corpus(70, 0.0, 2);
    fs::write(dir.path().join("trial-0017.json"), "{ not json").unwrap();
    let corpus = load_corpus(dir.path()).unwrap();
    let out = run_batch(&corpus, &BatchOptions { jobs: 4, ..Default::default() }).unwrap();
    assert_eq!(out.report.trials.len(), 70);
    let bad = &out.report.trials[17];
    assert_eq!(bad.id, "trial-0017");
    assert_eq!(bad.status, TrialStatus::Failed);
    assert!(bad.error.as_ref().unwrap().contains("trial-0017.json"));
    assert_eq!(out.report.summary.overall.n_fitted, 69);
    assert!(out.report.class_comparison.is_none());
}

#[test]
fn mixed_corpus_report_has_both_classes() {
    let dir = write_corpus(105, 1.0 / 3.0, 3);
    let out = run_batch(&load_corpus(dir.path()).unwrap(), &BatchOptions { jobs: 4, ..Default::default() }).unwrap();
    let s = out.report.summary.success.as_ref().unwrap();
    let f = out.report.summary.failure.as_ref().unwrap();
    assert_eq!((s.n_trials, f.n_trials), (70, 35));
    let cmp = out.report.class_comparison.as_ref().unwrap();
    assert!(cmp.localization_error_test.p < 0.01);
    assert!(cmp.final_mse_test.p < 0.01);
    assert!(out.timing.all.unwrap().n == 105);
}

#[test]
fn report_bytes_do_not_depend_on_parallelism() {
    let dir = write_corpus(40, 0.25, 4);
    let corpus = load_corpus(dir.path()).unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for jobs in [1, 8] {
        let out = run_batch(&corpus, &BatchOptions { jobs, ..Default::default() }).unwrap();
        let path = out_dir.path().join(format!("report-{jobs}.json"));
        save_report(&out, &path).unwrap();
        assert!(timing_path(&path).exists());
        bytes.push(fs::read(&path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn plot_data_shapes() {
    let dir = write_corpus(12, 0.25, 5);
    let out = run_batch(&load_corpus(dir.path()).unwrap(), &BatchOptions::default()).unwrap();
    let path = dir.path().join("report.json");
    save_report(&out, &path).unwrap();
    let report = load_report(&path).unwrap();
    assert_eq!(report, out.report);
    let timing = load_timing(&path).unwrap();

    let csv = emit_plot_data(&report, None, PlotKind::ErrorVsMse).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "final_mse,localization_error,orientation_error,label");
    assert_eq!(lines.len(), 13);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));

    let csv = emit_plot_data(&report, Some(&timing), PlotKind::RuntimeHist).unwrap();
    assert!(csv.starts_with("trial_id,runtime,converged\n"));
    assert_eq!(csv.lines().count(), 13);

    let csv = emit_plot_data(&report, None, PlotKind::JointLocations).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 13);
    assert!(rows.iter().all(|r| r.split(',').count() == 14));
    assert!(matches!(
        emit_plot_data(&report, None, PlotKind::RuntimeHist),
        Err(Error::MissingData(_))
    ));
}
