use std::fs;
use std::path::Path;
use std::process::Command;

use pevo::illposedness::threshold_classify;
use pevo_cli::config::{validate, RunConfig, Severity};
use pevo_cli::runner::{content_hash, load_configs, run_in, sweep, verify_manifest, RunError, OUTPUT_ROOT_ENV};
use serde_json::{json, Value};

fn config(v: Value) -> RunConfig {
    serde_json::from_value(v).unwrap()
}

fn free_solve() -> RunConfig {
    config(json!({
        "experiment": "solve",
        "tag": "free",
        "operator": { "kind": "free", "p": 3 },
        "grid": { "n": 512, "x_min": -20.0, "x_max": 20.0 },
        "time": { "T": 1.0 },
    }))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn errors_of(cfg: &RunConfig) -> Vec<(String, String)> {
    validate(cfg).errors().map(|d| (d.field.clone(), d.message.clone())).collect()
}

#[test]
fn sigma_outside_the_interval_is_rejected() {
    let cfg = config(json!({
        "experiment": "growth", "tag": "g", "operator": { "p": 2, "sigma": 1.2 }, "sigma_k": [8, 16, 32, 64],
    }));
    let errs = errors_of(&cfg);
    assert_eq!(errs.len(), 1, "{errs:?}");
    assert_eq!(errs[0].0, "operator.sigma");
    assert!(errs[0].1.starts_with("σ must lie in ((p−2)/(p−1), 1)"), "{}", errs[0].1);
}

#[test]
fn critical_case_is_a_warning() {
    let cfg = config(json!({
        "experiment": "threshold_scan", "tag": "c", "operator": { "p": 2, "sigma": 0.5 },
        "space": { "s": 2.0, "theta": 2.0 },
        "scan": { "s": { "from": 1.5, "step": 0.5, "count": 2 }, "theta": { "from": 1.5, "step": 0.5, "count": 2 } },
    }));
    let d = validate(&cfg);
    assert!(d.is_ok());
    let w: Vec<_> = d.warnings().collect();
    assert_eq!(w.len(), 1);
    assert!(w[0].message.contains("critical case"));
    let mut off = cfg.clone();
    off.space.theta = Some(2.5);
    assert_eq!(validate(&off).warnings().count(), 0);
}

#[test]
fn auto_grid_resolves_to_the_policy_domain() {
    let cfg = config(json!({
        "experiment": "solve", "tag": "a", "operator": { "p": 2, "sigma": 0.5 },
        "grid": "auto", "sigma_k": [64.0], "time": { "T": 0.01 },
    }));
    let d = validate(&cfg);
    assert!(d.is_ok(), "{:?}", d.items);
    let g = &d.grids[0];
    assert_eq!((g.x_min, g.x_max), (-128.0, 512.0));
    assert!(std::f64::consts::PI * g.n as f64 / 640.0 >= 128.0);
    assert!(std::f64::consts::PI * g.n as f64 / 640.0 < 256.0);
    assert!(d.required_steps.unwrap() > 0);
    // the domain scales with σ_k^{p-1}: [-8192, 32768] is reached at p = 3
    let mut cubic = cfg.clone();
    cubic.operator.p = 3;
    cubic.operator.sigma = Some(0.7);
    let d = validate(&cubic);
    assert!(d.is_ok(), "{:?}", d.items);
    assert_eq!((d.grids[0].x_min, d.grids[0].x_max), (-8192.0, 32768.0));
    let no_sk = config(json!({
        "experiment": "solve", "tag": "a", "operator": { "p": 2, "sigma": 0.5 }, "grid": "auto", "time": { "T": 0.01 },
    }));
    assert_eq!(errors_of(&no_sk)[0].0, "grid");
}

#[test]
fn diagnostics_are_aggregated_with_field_paths() {
    let cfg = config(json!({
        "experiment": "solve", "tag": "bad tag",
        "operator": { "kind": "custom", "p": 3, "coefficients": [{ "j": 4, "expr": "x +" }, { "j": 1, "expr": "<x>^-1" }] },
        "space": { "s": 0.5, "theta": 1.0, "rho1": -1.0 },
        "grid": { "n": 100, "x_min": 0.0, "x_max": 1.0 },
        "time": { "T": -1.0, "steps": 0 },
        "datum": "exp(",
    }));
    let fields: Vec<String> = errors_of(&cfg).into_iter().map(|e| e.0).collect();
    for f in [
        "tag",
        "operator.coefficients[0].j",
        "operator.coefficients[0].expr",
        "space.s",
        "space.theta",
        "space.rho1",
        "time.T",
        "time.steps",
        "grid.n",
        "datum",
    ] {
        assert!(fields.iter().any(|g| g == f), "missing {f} in {fields:?}");
    }
    assert!(validate(&cfg).items.iter().all(|d| d.severity == Severity::Error));
}

#[test]
fn unknown_fields_are_rejected() {
    let text = r#"{"experiment":"solve","tag":"x","operator":{"p":2},"gird":"auto"}"#;
    assert!(RunConfig::from_json(text).is_err());
}

#[test]
fn validation_and_run_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = free_solve();
    cfg.operator = serde_json::from_value(json!({ "p": 2, "sigma": 0.5 })).unwrap();
    cfg.time.as_mut().unwrap().steps = pevo_cli::config::StepsSpec::Count(3);
    let d = validate(&cfg);
    assert!(d.errors().any(|e| e.field == "time.steps"));
    assert!(matches!(run_in(&cfg, dir.path()), Err(RunError::Invalid(_))));
    let required = d.required_steps.unwrap();
    cfg.time.as_mut().unwrap().steps = pevo_cli::config::StepsSpec::Count(required);
    assert!(validate(&cfg).is_ok());
    assert!(run_in(&cfg, dir.path()).is_ok());
    let mut bad = free_solve();
    bad.operator.p = 1;
    assert!(!validate(&bad).is_ok());
    assert!(matches!(run_in(&bad, dir.path()), Err(RunError::Invalid(_))));
}

#[test]
fn free_solve_conserves_l2_and_writes_its_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = free_solve();
    let rec = run_in(&cfg, dir.path()).unwrap();
    assert!(!rec.partial && rec.verdicts["exact_error_below_1e-8"] && rec.verdicts["l2_conserved_to_1e-10"]);
    assert!(verify_manifest(&rec, dir.path()));
    let run_dir = dir.path().join(format!("free-{}", content_hash(&cfg)));
    let csv = fs::read_to_string(run_dir.join("trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("time,l2,sup"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert!(rows.len() > 10);
    assert_eq!(rows.last().unwrap()[0], 1.0);
    for r in &rows {
        assert!((r[1] - rows[0][1]).abs() <= 1e-10 * rows[0][1]);
    }
    // every value carries 17 significant digits
    let cell = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap();
    assert_eq!(cell.split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
    let meta = read_json(&run_dir.join("meta.json"));
    assert_eq!(meta["config"], serde_json::to_value(&cfg).unwrap());
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
    assert!(meta["timing"]["elapsed_ms"].is_u64());
    let report = read_json(&run_dir.join("report.json"));
    assert!(report["exact_relative_error"].as_f64().unwrap() < 1e-8);
}

#[test]
fn threshold_scan_report_matches_the_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(json!({
        "experiment": "threshold_scan", "tag": "scan", "operator": { "p": 2, "sigma": 0.5 },
        "scan": { "s": { "from": 1.2, "step": 0.2, "count": 10 }, "theta": { "from": 1.2, "step": 0.2, "count": 10 } },
    }));
    let rec = run_in(&cfg, dir.path()).unwrap();
    let report = read_json(&dir.path().join(rec.dir_name()).join("report.json"));
    let cells = report["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 100);
    let mut critical = 0;
    for c in cells {
        let (s, theta) = (c["s"].as_f64().unwrap(), c["theta"].as_f64().unwrap());
        let want = threshold_classify(2, 0.5, s, theta).unwrap();
        assert_eq!(c["verdict"], want.as_str(), "({s}, {theta})");
        critical += (want.as_str() == "critical") as usize;
    }
    // θ = min{2, s}: four cells with s < 2 and six with s ≥ 2
    assert_eq!(critical, 10);
    assert_eq!(report["counts"]["critical"], 10);
}

#[test]
fn conjugate_run_reports_a_small_residual() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(json!({
        "experiment": "conjugate", "tag": "conj", "operator": { "p": 2, "sigma": 0.5 },
        "space": { "s": 4.0, "delta": 0.2 },
        "grid": { "n": 512, "x_min": -25.0, "x_max": 25.0 },
        "time": { "T": 1.0 },
    }));
    let rec = run_in(&cfg, dir.path()).unwrap();
    assert!(rec.verdicts["identity_residual_below_1e-8"]);
    let csv = fs::read_to_string(dir.path().join(rec.dir_name()).join("trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
    let mut missing = cfg.clone();
    missing.space.delta = None;
    assert_eq!(errors_of(&missing)[0].0, "space.delta");
}

#[test]
fn decay_probe_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(json!({
        "experiment": "prop1", "tag": "p1", "operator": { "kind": "free", "p": 3 },
        "space": { "s": 1.5, "theta": 2.0, "rho1": 2.0 },
        "grid": { "n": 8192, "x_min": -16.0, "x_max": 48.0 },
        "time": { "T": 0.01 },
    }));
    let rec = run_in(&cfg, dir.path()).unwrap();
    assert!(rec.verdicts["degrading"] && !rec.verdicts["stable_within_10pct"]);
    let report = read_json(&dir.path().join(rec.dir_name()).join("report.json"));
    assert_eq!(report["n"], json!([8192, 16384, 32768]));
    assert_eq!(report["verdict"], "degrading");
}

#[test]
fn psido_check_run_passes_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(json!({
        "experiment": "psido_check", "tag": "psido", "operator": { "p": 2, "sigma": 0.5 }, "sigma_k": [10, 20, 40],
    }));
    let rec = run_in(&cfg, dir.path()).unwrap();
    assert_eq!(rec.verdicts.len(), 5);
    assert!(rec.verdicts.values().all(|&v| v), "{:?}", rec.verdicts);
}

fn growth(tag: &str, sigma: f64) -> RunConfig {
    config(json!({
        "experiment": "growth", "tag": tag, "operator": { "p": 2, "sigma": sigma }, "sigma_k": [8, 16, 32, 64],
    }))
}

#[test]
fn growth_sweep_slopes_decrease_with_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let configs: Vec<_> = [0.3, 0.5, 0.8].iter().map(|&s| (format!("{s}"), growth(&format!("g{s}"), s))).collect();
    let entries = sweep(configs, dir.path(), 3).unwrap();
    let mut slopes = Vec::new();
    let mut base = Vec::new();
    for e in &entries {
        let rec = e.result.as_ref().unwrap();
        let report = read_json(&dir.path().join(rec.dir_name()).join("report.json"));
        slopes.push(report["fitted_slope"].as_f64().unwrap());
        base.push(report["fitted_slope_base_term"].as_f64().unwrap());
        let levels = report["levels"].as_array().unwrap();
        assert_eq!(levels.len(), 4);
    }
    // entries are sorted by tag, so by increasing σ
    assert!(slopes.windows(2).all(|w| w[1] < w[0]), "{slopes:?}");
    assert!(base.windows(2).all(|w| w[1] < w[0]), "{base:?}");
    assert!(entries[1].result.as_ref().unwrap().verdicts["base_term_slope_within_20pct"]);
}

#[test]
fn identical_configs_reproduce_byte_identical_traces() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = free_solve();
    let r1 = run_in(&cfg, a.path()).unwrap();
    let r2 = run_in(&cfg, b.path()).unwrap();
    assert_eq!(r1.hash, r2.hash);
    assert_eq!(r1.content(), r2.content());
    let t1 = fs::read(a.path().join(r1.dir_name()).join("trace.csv")).unwrap();
    let t2 = fs::read(b.path().join(r2.dir_name()).join("trace.csv")).unwrap();
    assert_eq!(t1, t2);
    let mut moved = cfg.clone();
    moved.output_dir = Some("elsewhere".into());
    assert_eq!(content_hash(&moved), r1.hash);
    let mut other = cfg;
    other.time.as_mut().unwrap().horizon = 0.5;
    assert_ne!(content_hash(&other), r1.hash);
}

fn sweep_configs() -> Vec<(String, RunConfig)> {
    let mut out = Vec::new();
    for (i, p) in [2u32, 3, 5].iter().enumerate() {
        let mut c = free_solve();
        c.tag = format!("free-p{p}");
        c.operator.p = *p;
        out.push((format!("{i}.json"), c));
    }
    let mut m = free_solve();
    m.tag = "model".into();
    m.operator = serde_json::from_value(json!({ "p": 2, "sigma": 0.5 })).unwrap();
    m.time.as_mut().unwrap().horizon = 0.1;
    out.push(("3.json".into(), m));
    let mut bad = free_solve();
    bad.tag = "bad".into();
    bad.operator.p = 1;
    out.push(("4.json".into(), bad));
    out
}

#[test]
fn sweep_is_invariant_under_parallelism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let one = sweep(sweep_configs(), a.path(), 1).unwrap();
    let eight = sweep(sweep_configs(), b.path(), 8).unwrap();
    assert_eq!(one.len(), 5);
    for (x, y) in one.iter().zip(&eight) {
        assert_eq!(x.source, y.source);
        match (&x.result, &y.result) {
            (Ok(r), Ok(s)) => {
                assert_eq!(r.content(), s.content());
                let t1 = fs::read(a.path().join(r.dir_name()).join("trace.csv")).unwrap();
                let t2 = fs::read(b.path().join(s.dir_name()).join("trace.csv")).unwrap();
                assert_eq!(t1, t2);
            }
            (Err(RunError::Invalid(_)), Err(RunError::Invalid(_))) => {}
            other => panic!("{other:?}"),
        }
    }
    // sorted by tag-hash, the failing config last
    let names: Vec<String> = one.iter().filter_map(|e| e.result.as_ref().ok().map(|r| r.dir_name())).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    assert_eq!(one.last().unwrap().source, "4.json");
    assert!(one.last().unwrap().result.is_err());
}

#[test]
fn same_config_twice_in_a_sweep_shares_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = free_solve();
    let entries = sweep(vec![("a".into(), cfg.clone()), ("b".into(), cfg)], dir.path(), 2).unwrap();
    let (r1, r2) = (entries[0].result.as_ref().unwrap(), entries[1].result.as_ref().unwrap());
    assert_eq!(r1.hash, r2.hash);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

fn pevo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pevo"))
}

fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

#[test]
fn binary_exit_codes_and_output_root_override() {
    let configs = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let good = write_config(configs.path(), "good.json", &free_solve());
    let status = pevo().arg("validate").arg(&good).output().unwrap();
    assert_eq!(status.status.code(), Some(0));
    let resolved: Value = serde_json::from_slice(&status.stdout).unwrap();
    assert_eq!(resolved["grids"][0]["n"], 512);

    let res = pevo().arg("run").arg(&good).env(OUTPUT_ROOT_ENV, out.path()).output().unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let dir = String::from_utf8(res.stdout).unwrap();
    assert!(Path::new(dir.trim()).join("meta.json").exists());
    assert!(dir.trim().starts_with(out.path().to_str().unwrap()));

    let mut bad = free_solve();
    bad.space.s = Some(0.5);
    let bad = write_config(configs.path(), "bad.json", &bad);
    for cmd in ["validate", "run"] {
        let res = pevo().arg(cmd).arg(&bad).env(OUTPUT_ROOT_ENV, out.path()).output().unwrap();
        assert_eq!(res.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&res.stderr).contains("space.s"));
    }
    let garbage = configs.path().join("garbage.json");
    fs::write(&garbage, "{").unwrap();
    assert_eq!(pevo().arg("run").arg(&garbage).output().unwrap().status.code(), Some(2));
}

#[test]
fn blow_up_is_recorded_with_exit_code_three() {
    let configs = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    // D_t u + i·100 u = 0 is u' = 100 u
    let cfg = config(json!({
        "experiment": "solve", "tag": "blow",
        "operator": { "kind": "custom", "p": 2, "coefficients": [{ "j": 2, "expr": "i*100" }] },
        "grid": { "n": 128, "x_min": -10.0, "x_max": 10.0 },
        "time": { "T": 1.0 },
    }));
    let path = write_config(configs.path(), "blow.json", &cfg);
    let res = pevo().arg("run").arg(&path).env(OUTPUT_ROOT_ENV, out.path()).output().unwrap();
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    let dir = std::path::PathBuf::from(String::from_utf8(res.stdout).unwrap().trim());
    let meta = read_json(&dir.join("meta.json"));
    assert_eq!(meta["partial"], true);
    let t = meta["blow_up"].as_f64().unwrap();
    assert!(t > 0.2 && t < 0.35, "{t}");
    assert_eq!(meta["verdicts"]["completed"], false);
    let csv = fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert!(csv.lines().count() > 2);
}

#[test]
fn sweep_binary_reads_a_directory() {
    let configs = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    for (name, cfg) in sweep_configs().into_iter().take(2) {
        write_config(configs.path(), &name, &cfg);
    }
    assert_eq!(load_configs(configs.path()).unwrap().len(), 2);
    let res = pevo()
        .args(["sweep", configs.path().to_str().unwrap(), "--parallel", "2"])
        .env(OUTPUT_ROOT_ENV, out.path())
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(manifest.as_array().unwrap().len(), 2);
    assert_eq!(fs::read_dir(out.path()).unwrap().count(), 2);
    fs::write(configs.path().join("z.json"), "not json").unwrap();
    let res = pevo().args(["sweep", configs.path().to_str().unwrap()]).env(OUTPUT_ROOT_ENV, out.path()).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
}
