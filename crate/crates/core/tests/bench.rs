use std::fs;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use smp_core::bench::{
    aggregate_csv, compare_runs, mad, metrics_csv, parse_config, parse_seeds, read_metrics, run_experiment, BenchError,
    NoiseLevel, AGGREGATE_VERSION, COLUMNS, METRICS_VERSION,
};
use smp_core::linmodel::OperatorKind;
use smp_core::smp::{Algorithm, EstimatorChoice};

fn small_config(dir: &Path, extra: &str) -> String {
    format!(
        "algorithm = amp\nestimator = polynomial\nN = 512\nM = 256\nT = 2\nseeds = 0,1,2\noutput = {}\n{extra}",
        dir.display()
    )
}

#[test]
fn minimal_config_takes_defaults() {
    let cfg = parse_config("algorithm = amp\nN = 1024\nM = 512\nT = 5").unwrap();
    assert_eq!(cfg.algorithm, Algorithm::Amp);
    assert_eq!((cfg.n, cfg.m, cfg.iterations), (1024, 512, 5));
    assert_eq!(cfg.estimator, EstimatorChoice::Polynomial);
    assert_eq!(cfg.seeds, vec![0]);
}

#[test]
fn reference_cg_vamp_config_parses() {
    let text = "algorithm = cg-vamp\noperator = fijl\nkappa = 1000\nN = 262144\ndelta = 0.05\nsnr_db = 40\ni_cg = 5\nT = 15\n";
    let cfg = parse_config(text).unwrap();
    assert_eq!(cfg.operator, OperatorKind::Fijl);
    assert_eq!(cfg.m, 13107);
    assert_eq!(cfg.kappa, 1000.0);
    assert_eq!(cfg.noise, NoiseLevel::SnrDb(40.0));
    assert_eq!((cfg.i_cg, cfg.iterations), (5, 15));
}

#[test]
fn config_errors_carry_line_numbers() {
    let cases = [
        ("M = 2048\nN = 1024", Some(1)),
        ("N = 64\nbogus = 1", Some(2)),
        ("N = 64\nN = 32", Some(2)),
        ("algorithm = amp\nT = zero", Some(2)),
        ("operator = gaussian\nkappa = 10", Some(2)),
        ("N = 64\nM = 32\ndelta = 0.5", Some(3)),
        ("sparsity = 1.5", Some(1)),
        ("N = 64 but no equals\nfoo", Some(2)),
    ];
    for (text, line) in cases {
        let err = parse_config(text).unwrap_err();
        assert_eq!(err.line, line, "{text:?}: {err}");
        assert!(err.to_string().starts_with(&format!("line {}", line.unwrap())));
    }
}

#[test]
fn seed_lists_and_ranges() {
    assert_eq!(parse_seeds("3").unwrap(), vec![3]);
    assert_eq!(parse_seeds("1, 4,9").unwrap(), vec![1, 4, 9]);
    assert_eq!(parse_seeds("2..5").unwrap(), vec![2, 3, 4]);
    assert!(parse_seeds("5..2").is_err());
    assert!(parse_seeds("a").is_err());
}

#[test]
fn experiment_writes_one_file_per_seed_and_an_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&small_config(dir.path(), "")).unwrap();
    let out = run_experiment(&cfg, 2).unwrap();
    assert_eq!(out.seeds.len(), 3);
    for s in &out.seeds {
        let table = read_metrics(&s.path).unwrap();
        assert_eq!(table.version, METRICS_VERSION);
        assert_eq!(table.header, COLUMNS);
        assert_eq!(table.rows.len(), 2);
    }
    let agg = read_metrics(&out.aggregate_path).unwrap();
    assert_eq!(agg.version, AGGREGATE_VERSION);
    assert_eq!(agg.rows.len(), 2);
    assert_eq!(agg.column("seeds").unwrap(), vec![3.0, 3.0]);
    assert_eq!(out.exit_code(), 0);
}

#[test]
fn rerun_is_byte_identical_and_compares_to_zero() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let cfg = parse_config(&small_config(dir, "oracle = true")).unwrap();
        run_experiment(&cfg, 3).unwrap();
    }
    for name in ["seed_0.csv", "seed_1.csv", "seed_2.csv", "aggregate.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let cmp = compare_runs(&a.path().join("aggregate.csv"), &b.path().join("aggregate.csv")).unwrap();
    assert!(cmp.rows.iter().all(|r| r.delta_nmse_db == 0.0 && r.alpha_err_ratio == 1.0));
    assert_eq!(cmp.max_abs_delta_db(), 0.0);
}

#[test]
fn compare_rejects_mismatched_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&small_config(dir.path(), "")).unwrap();
    run_experiment(&cfg, 1).unwrap();
    let other = dir.path().join("other.csv");
    fs::write(&other, "#something-else v9\nfoo,bar\n1,2\n").unwrap();
    let err = compare_runs(&dir.path().join("seed_0.csv"), &other).unwrap_err();
    assert!(matches!(err, BenchError::SchemaMismatch(..) | BenchError::Format { .. }), "{err:?}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_smp");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "M = 2048\nN = 1024\n").unwrap();
    let status = Command::new(bin).args(["run"]).arg(&bad).output().unwrap().status;
    assert_eq!(status.code(), Some(2));

    let good = dir.path().join("good.conf");
    let out = dir.path().join("out");
    fs::write(&good, small_config(&out, "")).unwrap();
    let run = Command::new(bin).args(["run", "--seeds", "0,1", "--workers", "1"]).arg(&good).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join("seed_1.csv").exists() && !out.join("seed_2.csv").exists());

    let cmp = Command::new(bin)
        .arg("compare")
        .arg(out.join("aggregate.csv"))
        .arg(out.join("aggregate.csv"))
        .output()
        .unwrap();
    assert_eq!(cmp.status.code(), Some(0));

    let missing = Command::new(bin).arg("compare").arg(dir.path().join("nope.csv")).arg(&bad).output().unwrap().status;
    assert_eq!(missing.code(), Some(1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mad_is_shift_invariant_and_nonnegative(v in prop::collection::vec(-1e3f64..1e3, 1..40), shift in -1e3f64..1e3) {
        let m = mad(&v).unwrap();
        prop_assert!(m >= 0.0);
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        prop_assert!((mad(&shifted).unwrap() - m).abs() <= 1e-9 * (1.0 + shift.abs()));
    }

    #[test]
    fn seed_ranges_roundtrip(lo in 0u64..1000, len in 1u64..50) {
        let seeds = parse_seeds(&format!("{lo}..{}", lo + len)).unwrap();
        prop_assert_eq!(seeds.len() as u64, len);
        let listed = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        prop_assert_eq!(parse_seeds(&listed).unwrap(), seeds);
    }
}

#[test]
fn empty_inputs_serialize_to_header_only() {
    let text = metrics_csv(&[]).unwrap();
    assert_eq!(text.lines().count(), 2);
    let agg = aggregate_csv(&[]).unwrap();
    assert_eq!(agg.lines().count(), 2);
}
