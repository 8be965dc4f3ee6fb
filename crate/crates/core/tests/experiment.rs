use std::collections::BTreeSet;
use std::fs;

use lowprec::experiment::{
    dot_error_sweep, export_problem, run_experiment, run_experiments, sweep_csv, ExperimentConfig, SolverKind, Summary,
};
use lowprec::io::{read_matrix_market, read_vector};
use lowprec::{Execution, FloatFormat, ProblemKind, Termination};

fn small(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.problem.grid_n = 16;
    cfg.max_iter = 10;
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn names(files: &[std::path::PathBuf]) -> BTreeSet<String> {
    files
        .iter()
        .map(|f| f.file_name().unwrap().to_string_lossy().into_owned())
        .collect()
}

#[test]
fn deblur_run_writes_declared_files() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_experiment(&small(tmp.path())).unwrap();
    let want: BTreeSet<String> = ["history.csv", "summary.json", "x_true.pgm", "b.pgm", "x_final.pgm", "x_best.pgm"]
        .into_iter()
        .map(String::from)
        .collect();
    assert_eq!(names(&report.files), want);
    let on_disk: BTreeSet<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(on_disk, want);
    let pgm = fs::read(tmp.path().join("x_true.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(pgm.len(), b"P5\n16 16\n255\n".len() + 256);
}

#[test]
fn tomo_run_has_no_data_image() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.problem.kind = ProblemKind::Tomo;
    let report = run_experiment(&cfg).unwrap();
    assert!(!names(&report.files).contains("b.pgm"));
    assert_eq!(report.files.len(), 5);
}

#[test]
fn summary_schema_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.solver = SolverKind::Chebyshev;
    cfg.lambda = 0.1;
    cfg.format = "bfloat16".into();
    let report = run_experiment(&cfg).unwrap();
    let text = fs::read_to_string(tmp.path().join("summary.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let keys: BTreeSet<&str> = value.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    let want: BTreeSet<&str> = [
        "kind",
        "solver",
        "format",
        "termination",
        "nonfinite_site",
        "iterations",
        "planned_iterations",
        "best_iter",
        "best_rel_error",
        "final_rel_error",
        "final_residual_norm",
        "scale",
        "sigma_bounds",
        "counters",
        "config",
    ]
    .into_iter()
    .collect();
    assert_eq!(keys, want);
    assert!(value["config"].get("output_dir").is_none());

    let parsed: Summary = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed.iterations, report.summary.iterations);
    assert_eq!(parsed.format, "bfloat16");
    assert_eq!(parsed.counters.dot_calls, 0);
    assert!(parsed.sigma_bounds.is_some());
    assert_eq!(parsed.config.lambda, 0.1);
}

#[test]
fn noiseless_deblur_errors_fall_early() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.problem.grid_n = 32;
    let report = run_experiment(&cfg).unwrap();
    let errs: Vec<f64> = report.result.history.iter().map(|h| h.rel_error.unwrap()).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn tomo_half_precision_overflow_and_rescue() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(&tmp.path().join("raw"));
    cfg.problem.kind = ProblemKind::Tomo;
    cfg.problem.grid_n = 32;
    cfg.format = "fp16".into();
    cfg.max_iter = 30;
    assert_eq!(run_experiment(&cfg).unwrap().summary.termination, Termination::NonFinite);
    cfg.rescale = 0.01;
    cfg.output_dir = tmp.path().join("scaled");
    let summary = run_experiment(&cfg).unwrap().summary;
    assert_eq!(summary.termination, Termination::MaxIter);
    assert_eq!(summary.scale, 0.01);
}

#[test]
fn invalid_configs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.format = "fp8".into();
    assert!(run_experiment(&cfg).is_err());
    let mut cfg = small(tmp.path());
    cfg.solver = SolverKind::Chebyshev;
    assert!(run_experiment(&cfg).is_err());
    let mut cfg = small(tmp.path());
    cfg.rescale = 0.0;
    assert!(run_experiment(&cfg).is_err());
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"colour": 1}"#).is_err());
}

#[test]
fn config_defaults_fill_missing_fields() {
    let cfg: ExperimentConfig =
        serde_json::from_str(r#"{"format": "fp16", "problem": {"kind": "tomo", "grid_n": 12, "n_angles": 5}}"#).unwrap();
    assert_eq!(cfg.format, "fp16");
    assert_eq!(cfg.problem.geometry().n_angles, 5);
    assert_eq!(cfg.problem.geometry().n_detectors, 17);
    assert_eq!(cfg.block_size, 256);
}

#[test]
fn parallel_batch_matches_individual_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfgs: Vec<ExperimentConfig> = ["fp16", "fp32", "fp64"]
        .iter()
        .map(|f| {
            let mut c = small(&tmp.path().join(f));
            c.format = f.to_string();
            c
        })
        .collect();
    let batch = run_experiments(&cfgs, Execution::Parallel);
    for (cfg, got) in cfgs.iter().zip(batch) {
        let got = got.unwrap();
        let mut again = cfg.clone();
        again.output_dir = tmp.path().join(format!("{}-again", cfg.format));
        let alone = run_experiment(&again).unwrap();
        assert_eq!(got.result, alone.result);
    }
}

#[test]
fn problem_export_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let mut pc = small(tmp.path()).problem;
    pc.grid_n = 8;
    let p = pc.generate().unwrap();
    let files = export_problem(&p, tmp.path()).unwrap();
    assert_eq!(files.len(), 4);
    let a = read_matrix_market(std::io::BufReader::new(fs::File::open(tmp.path().join("A.mtx")).unwrap())).unwrap();
    assert_eq!(a.n_rows(), p.a.n_rows());
    for ((i, j, v), (k, l, w)) in a.triplets().zip(p.a.triplets()) {
        assert_eq!((i, j), (k, l));
        assert!((v - w).abs() <= 1e-15 * w.abs());
    }
    let x = read_vector(fs::File::open(tmp.path().join("x_true.bin")).unwrap()).unwrap();
    assert_eq!(x, p.x_true);
}

#[test]
fn sweep_table_shape() {
    let rows = dot_error_sweep(64, &[FloatFormat::FP16, FloatFormat::FP64], &[1, 8, 64], 3, 1, Execution::Sequential)
        .unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().filter(|r| r.format == "fp64").all(|r| r.mean_abs_error == 0.0));
    let par = dot_error_sweep(64, &[FloatFormat::FP16, FloatFormat::FP64], &[1, 8, 64], 3, 1, Execution::Parallel)
        .unwrap();
    assert_eq!(rows, par);
    let csv = sweep_csv(&rows);
    assert!(csv.starts_with("fmt,block_size,mean_abs_error\nfp16,1,"));
    assert_eq!(csv.lines().count(), 7);
}
