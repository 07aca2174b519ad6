use std::fs;
use std::path::Path;
use std::process::Command;

use bma_cli::config::{DataSource, GridEntry, IntSet};
use bma_cli::report::parse_list;
use bma_cli::{run_scan, CliError, ScanConfig};
use bma_core::prelude::*;

fn bma() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bma"))
}

fn write_config(cfg: &ScanConfig, path: &Path) {
    fs::write(path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
}

#[test]
fn empty_data_file_is_a_config_error_with_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty.csv");
    fs::write(&data, "").unwrap();
    let out = dir.path().join("out");
    let mut cfg = ScanConfig::polynomial_benchmark(10, 0);
    cfg.data = DataSource::Path(data);
    cfg.output_dir = out.clone();
    assert!(matches!(run_scan(&cfg), Err(CliError::Config(_))));
    assert!(!out.exists());

    let cfg_path = dir.path().join("cfg.json");
    write_config(&cfg, &cfg_path);
    let status = bma().args(["scan", "--config"]).arg(&cfg_path).status().unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn malformed_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "1,2,3\n0.5,x,0.1\n").unwrap();
    let mut cfg = ScanConfig::polynomial_benchmark(10, 0);
    cfg.data = DataSource::Path(data);
    cfg.output_dir = dir.path().join("out");
    let cfg_path = dir.path().join("cfg.json");
    write_config(&cfg, &cfg_path);
    let status = bma().args(["scan", "--config"]).arg(&cfg_path).status().unwrap();
    assert_eq!(status.code(), Some(3));
    assert!(!cfg.output_dir.exists());
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"data": {"path": "x.csv"}, "models": [], "priors": {}}"#).unwrap();
    let status = bma().args(["scan", "--config"]).arg(&cfg_path).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bma().args(["scan", "--config", "/nonexistent/cfg.json"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn all_fits_failing_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScanConfig::correlator_benchmark(100, 1);
    cfg.max_iterations = Some(1);
    cfg.output_dir = dir.path().join("out");
    let cfg_path = dir.path().join("cfg.json");
    write_config(&cfg, &cfg_path);
    let status = bma().args(["scan", "--config"]).arg(&cfg_path).status().unwrap();
    assert_eq!(status.code(), Some(4));
    // the report explaining the failure is still written
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.output_dir.join("report.json")).unwrap()).unwrap();
    assert!(!report["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn excluding_unconverged_fits_keeps_weights_normalized() {
    // polynomials converge in a couple of iterations, exponentials do not
    let mut cfg = ScanConfig::polynomial_benchmark(160, 2);
    cfg.models.push(GridEntry::MultiExponential {
        n_decay: 2,
        n_oscillating: 0,
        t_min: IntSet::List(vec![1, 2, 3]),
        t_max: None,
        prior: "poly".into(),
    });
    cfg.max_iterations = Some(3);
    cfg.parameters.clear();
    cfg.fixed_model = None;
    let data = cfg.load_data().unwrap();
    let report = bma_cli::scan(&cfg, &data).unwrap();
    let n_usable = report.usable().count();
    let status: Vec<_> = report.fits.iter().map(|f| (&f.fit.label, f.fit.converged)).collect();
    assert!(n_usable > 0 && n_usable < report.fits.len(), "{status:?}");
    for w in &report.weights {
        assert_eq!(w.records.len(), n_usable);
        let total: f64 = w.records.iter().map(|r| r.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for r in &w.records {
            let row = report.fits.iter().find(|f| f.fit.label == r.model_label).unwrap();
            assert!(row.fit.converged);
        }
    }
    assert!(report.warnings.iter().any(|w| w.contains("not converged")));
}

#[test]
fn fits_csv_rows_revalidate() {
    let dir = tempfile::tempdir().unwrap();
    for mut cfg in [ScanConfig::polynomial_benchmark(160, 11), ScanConfig::correlator_benchmark(300, 12)] {
        cfg.output_dir = dir.path().join(&cfg.parameters[0]);
        run_scan(&cfg).unwrap();
        let data = cfg.load_data().unwrap();
        let est = estimate_covariance(&data, cfg.svd_cutoff).unwrap();
        let points = cfg.build_models(data.abscissa()).unwrap();
        let mut rdr = csv::Reader::from_path(cfg.output_dir.join("fits.csv")).unwrap();
        let headers = rdr.headers().unwrap().clone();
        let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec.unwrap();
            let label = &rec[col("model_label")];
            let stored: f64 = rec[col("chi2_aug")].parse().unwrap();
            let params = parse_list(&rec[col("params")]).unwrap();
            let model = &points.iter().find(|p| p.model.label() == label).unwrap().model;
            let kept = restrict(&est, model.selector(), cfg.restrict_mode).unwrap();
            let recomputed = chi2_aug(model, &params, &kept).unwrap().total;
            assert!(
                (recomputed - stored).abs() <= 1e-8 * stored.abs().max(1.0),
                "{label}: {recomputed} vs {stored}"
            );
            rows += 1;
        }
        assert_eq!(rows, points.len());
    }
}

#[test]
fn scan_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScanConfig::correlator_benchmark(150, 9);
    cfg.output_dir = dir.path().join("a");
    cfg.workers = Some(1);
    run_scan(&cfg).unwrap();
    cfg.output_dir = dir.path().join("b");
    cfg.workers = Some(3);
    run_scan(&cfg).unwrap();
    for name in ["report.json", "fits.csv", "weights.csv", "plotdata/fits_E0.csv", "plotdata/estimates_E0.csv"] {
        let a = fs::read_to_string(dir.path().join("a").join(name)).unwrap();
        let b = fs::read_to_string(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    assert!(dir.path().join("a/plotdata/data.csv").exists());
}

#[test]
fn gen_then_scan_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("poly.csv");
    let out = bma()
        .args(["gen", "--kind", "polynomial", "--samples", "80", "--seed", "3", "--output"])
        .arg(&data_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let spec: GeneratorSpec =
        serde_json::from_str(&fs::read_to_string(dir.path().join("poly.csv.spec.json")).unwrap()).unwrap();
    assert_eq!(spec.seed, 3);
    assert_eq!(spec.n_samples, 80);
    let from_file = SampleSet::read_csv(fs::File::open(&data_path).unwrap()).unwrap();
    let direct = generate(&spec).unwrap();
    assert_eq!(from_file.samples(), direct.samples());

    let mut cfg = ScanConfig::polynomial_benchmark(80, 3);
    cfg.data = DataSource::Path(data_path);
    let cfg_path = dir.path().join("cfg.json");
    write_config(&cfg, &cfg_path);
    let out_dir = dir.path().join("scan");
    let out = bma()
        .args(["scan", "--criterion", "aic_cut", "--workers", "2", "--config"])
        .arg(&cfg_path)
        .arg("--output")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("<a0> [aic_cut]"), "{stdout}");
    for name in ["report.json", "fits.csv", "weights.csv", "config.json", "plotdata/data.csv", "plotdata/fits_a0.csv"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
    let echoed: ScanConfig = serde_json::from_str(&fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed.criterion, Criterion::AicCut);
    assert_eq!(echoed.workers, Some(2));
}

#[test]
fn fit_subcommand_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    write_config(&ScanConfig::correlator_benchmark(200, 4), &cfg_path);
    let out = bma()
        .args(["fit", "--model", "exp_1+0_tmin10", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res: FitResult = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(res.n_cut, 10);
    let (e0, sigma) = res.param("E0").unwrap();
    assert!((e0 - 0.8).abs() < 0.1 && sigma > 0.0);

    let status = bma()
        .args(["fit", "--model", "nope", "--config"])
        .arg(&cfg_path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn scaling_subcommand_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    write_config(&ScanConfig::polynomial_benchmark(20, 0), &cfg_path);
    let out_dir = dir.path().join("scaling");
    let out = bma()
        .args(["scaling", "--n", "20,40", "--replicas", "3", "--config"])
        .arg(&cfg_path)
        .arg("--output")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cells = fs::read_to_string(out_dir.join("scaling.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1 + 6);
    assert!(out_dir.join("scaling_summary.csv").exists());
    assert!(out_dir.join("scaling.json").exists());
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["polynomial.json", "correlator.json"] {
        let cfg = ScanConfig::load(&root.join(name)).unwrap();
        let data = cfg.load_data().unwrap();
        assert!(!cfg.build_models(data.abscissa()).unwrap().is_empty());
    }
}
