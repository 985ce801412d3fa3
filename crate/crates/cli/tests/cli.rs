use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use platform_trial_cli::commands::{load_design, report_file};
use platform_trial_cli::config::Config;
use platform_trial_cli::output::to_json;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_platform-trial"))
}

fn small_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/small.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn design_then_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = small_config();
    let cfg = cfg.to_str().unwrap();
    assert!(run(&["design", "--config", cfg, "--out", out]).status.success());
    let design_path = dir.path().join("design.json");

    // Reloading is bit-exact and the report of the reloaded design equals
    // the report of a design computed afresh from the configuration.
    let reloaded = load_design(&design_path).unwrap();
    let config = Config::load(Path::new(cfg)).unwrap();
    let fresh = platform_trial::power::size_for_power(&config.spec().unwrap(), &config.numerics()).unwrap();
    assert_eq!(reloaded, fresh);
    let a = to_json(&report_file(&reloaded, &config.numerics()).unwrap()).unwrap();
    let b = to_json(&report_file(&fresh, &config.numerics()).unwrap()).unwrap();
    assert_eq!(a, b);

    let r1 = dir.path().join("r1");
    let r2 = dir.path().join("r2");
    let dp = design_path.to_str().unwrap();
    assert!(run(&["report", "--config", cfg, "--design", dp, "--out", r1.to_str().unwrap()]).status.success());
    assert!(run(&["report", "--config", cfg, "--out", r2.to_str().unwrap()]).status.success());
    assert_eq!(read(&r1.join("report.json")), read(&r2.join("report.json")));
    assert_eq!(read(&r1.join("cdf.csv")), read(&r2.join("cdf.csv")));
    assert_eq!(read(&r1.join("report.json")), a);
}

#[test]
fn json_floats_carry_hex() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    assert!(run(&["design", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]).status.success());
    let v: serde_json::Value = serde_json::from_str(&read(&dir.path().join("design.json"))).unwrap();
    let a = &v["design"]["boundaries"]["a"][0];
    let hex = a["hex"].as_str().unwrap();
    let exact = hexf_value(hex);
    let shown = a["value"].as_f64().unwrap();
    assert!((shown - exact).abs() <= 5e-6 * exact.abs(), "{shown} vs {exact}");
    let mantissa = format!("{shown:e}");
    let digits = mantissa.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count();
    assert!(digits <= 6, "{mantissa}");
    // Integers stay integers.
    assert_eq!(v["config"]["arms"]["K"], 2);
}

fn hexf_value(s: &str) -> f64 {
    platform_trial_cli::output::parse_hex_float(s).unwrap()
}

#[test]
fn simulate_writes_tidy_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--replicates",
        "2000",
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&dir.path().join("simulate.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "add_point,approach,theta_label,metric,estimate,se,replicates,seed");
    let first = lines.next().unwrap();
    assert!(first.starts_with("76.0,planned,H_G,fwer,"), "{first}");
    assert!(first.ends_with(",2000,5"), "{first}");
    assert!(csv.lines().any(|l| l.starts_with("152.0,3,LFC2,power_arm2,")));
    assert!(!csv.contains('\r'));
}

#[test]
fn simulation_ignores_thread_count() {
    let cfg = small_config();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let dir = tempfile::tempdir().unwrap();
        let out = bin()
            .env(platform_trial_cli::THREADS_ENV, threads)
            .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
            .args(["--replicates", "9000"])
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push(read(&dir.path().join("simulate.json")));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = read(&small_config()).replace("\"sigma\": 1.0", "\"sigma\": 1.0, \"rho\": 0.5");
    std::fs::write(&bad, text).unwrap();
    let out = run(&["design", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));

    let missing = run(&["design", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(missing.status.code(), Some(1));

    let usage = run(&["design"]);
    assert_eq!(usage.status.code(), Some(1));

    let bad_threads = bin()
        .env(platform_trial_cli::THREADS_ENV, "zero")
        .args(["design", "--config", small_config().to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    // The late arm competes with a fixed-size rival, so its power cannot
    // approach one however many patients it gets.
    let text = read(&small_config()).replace("\"power\": 0.8", "\"power\": 0.999999");
    std::fs::write(&cfg, text).unwrap();
    let out = run(&["design", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn mismatched_design_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let out = dir.path().to_str().unwrap();
    assert!(run(&["design", "--config", cfg.to_str().unwrap(), "--out", out]).status.success());
    let other = dir.path().join("other.json");
    std::fs::write(&other, read(&cfg).replace("\"alpha\": 0.025", "\"alpha\": 0.05")).unwrap();
    let dp = dir.path().join("design.json");
    let r = run(&["report", "--config", other.to_str().unwrap(), "--design", dp.to_str().unwrap(), "--out", out]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn compare_lists_comparators() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let out = run(&["compare", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let csv = read(&dir.path().join("compare.csv"));
    assert!(csv.starts_with("design,metric,value\n"));
    for label in ["platform", "separate_fwer", "separate_no_fwer", "mams_1stage"] {
        assert!(csv.contains(&format!("\n{label},fwer,")), "{label}");
    }
    let v: serde_json::Value = serde_json::from_str(&read(&dir.path().join("compare.json"))).unwrap();
    assert_eq!(v["failures"].as_array().unwrap().len(), 2);
}
