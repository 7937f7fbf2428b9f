//! End-to-end runs of the mlve binary: the documented examples, exit codes,
//! output files, and rerun determinism.

use std::process::{Command, Output};

fn mlve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlve"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_of(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn oracle_free_theory_example() {
    let out = mlve(&[
        "oracle", "--k", "1", "--p", "1", "--g", "0", "--M", "2", "--jmax", "3",
    ]);
    let v = json_of(&out);
    let re = v["result"]["value"]["re"].as_f64().unwrap();
    let im = v["result"]["value"]["im"].as_f64().unwrap();
    assert!((re - 1.0).abs() < 1e-10, "K1(0, 1) = {re}");
    assert!(im.abs() < 1e-12);
    // the resolved config is embedded in the output
    assert_eq!(v["config"]["model"]["m"], 2);
    assert_eq!(v["config"]["observable"]["momenta"][0], 1);
}

#[test]
fn bkar_check_is_exact() {
    let out = mlve(&["bkar-check", "--n", "3"]);
    let v = json_of(&out);
    assert!(v["result"]["residual"].as_f64().unwrap() < 1e-8);
    assert_eq!(v["result"]["forest_count"], 7);
    assert_eq!(v["result"]["tree_count"], 3);
}

#[test]
fn validation_failures_exit_2() {
    // k without momenta
    let out = mlve(&["lve", "--k", "1", "--g", "0.02"]);
    assert_eq!(out.status.code(), Some(2));
    // unsupported slicing start
    let out = mlve(&["oracle", "--jmin", "2"]);
    assert_eq!(out.status.code(), Some(2));
    // momentum beyond the cutoff N = 4
    let out = mlve(&["oracle", "--p", "99", "--jmax", "2"]);
    assert_eq!(out.status.code(), Some(2));
    // malformed coupling
    let out = mlve(&["oracle", "--g", "zero"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(
        &path,
        "[model]\nm = 2\nj_max = 2\n\n[model.g]\nre = 0.05\n\n[observable]\nk = 1\nmomenta = [2]\n",
    )
    .unwrap();
    let cfg = path.to_str().unwrap();
    // file alone: interaction on, so the cumulant sits below the free value
    let v = json_of(&mlve(&["oracle", "--config", cfg]));
    let at_file_g = v["result"]["value"]["re"].as_f64().unwrap();
    assert!(
        (at_file_g - 0.5).abs() > 1e-4,
        "expected a shifted value, got {at_file_g}"
    );
    // the flag wins over the file and restores the free value exactly
    let v = json_of(&mlve(&["oracle", "--config", cfg, "--g", "0"]));
    let at_flag_g = v["result"]["value"]["re"].as_f64().unwrap();
    assert!((at_flag_g - 0.5).abs() < 1e-10);
}

#[test]
fn lve_reports_orders_and_convergence() {
    let out = mlve(&[
        "lve", "--k", "1", "--p", "1", "--g", "0.02", "--M", "2", "--jmax", "2", "--n-max", "3",
    ]);
    let v = json_of(&out);
    assert_eq!(v["result"]["converged"], true);
    assert_eq!(v["result"]["order_terms"].as_array().unwrap().len(), 3);
    let re = v["result"]["value"]["re"].as_f64().unwrap();
    assert!((re - 1.0).abs() < 0.1, "K1(0.02, 1) = {re}");
}

#[test]
fn scan_writes_rfc4180_csv_and_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("scan.csv");
    let out_str = out_path.to_str().unwrap();
    let args = [
        "scan",
        "--rho-grid",
        "0.02:0.03:0.05",
        "--angle-grid",
        "0:0.6:1.2",
        "--k",
        "1",
        "--p",
        "1",
        "--M",
        "2",
        "--jmax",
        "2",
        "--n-max",
        "2",
        "--out",
        out_str,
    ];
    let first = mlve(&args);
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let csv1 = std::fs::read(&out_path).unwrap();
    let log_path = dir.path().join("scan.log");
    let log1 = std::fs::read(&log_path).unwrap();

    let text = String::from_utf8(csv1.clone()).unwrap();
    let header = text.split("\r\n").next().unwrap();
    assert!(
        header.starts_with("m,j_max,rho,k,momenta,n_max,modulus,gamma"),
        "header: {header}"
    );
    // header + 2 x 3 grid cells, every record CRLF-terminated
    assert_eq!(text.matches("\r\n").count(), 7);

    let second = mlve(&args);
    assert!(second.status.success());
    assert_eq!(
        std::fs::read(&out_path).unwrap(),
        csv1,
        "CSV differs between reruns"
    );
    assert_eq!(
        std::fs::read(&log_path).unwrap(),
        log1,
        "log differs between reruns"
    );
    let log_text = String::from_utf8(log1).unwrap();
    assert!(log_text.contains("empirical_rho"), "log: {log_text}");
    assert!(log_text.contains("seeds:"));
}

#[test]
fn series_reports_coefficients_and_resummation() {
    let out = mlve(&[
        "series", "--k", "1", "--p", "1", "--g", "0.02", "--M", "2", "--jmax", "2", "--order", "4",
    ]);
    let v = json_of(&out);
    let coeffs = v["result"]["coefficients"].as_array().unwrap();
    assert_eq!(coeffs.len(), 5);
    assert!((coeffs[0].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(
        v["result"]["borel_pade"].is_object(),
        "resummation missing: {v}"
    );
}

#[test]
fn self_checks_pass() {
    let out = mlve(&["grassmann-check", "--instances", "60", "--max-pairs", "4"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = mlve(&[
        "resolvent-bound",
        "--gamma-grid",
        "-1.2:1.2:1.2",
        "--samples",
        "2000",
        "--M",
        "2",
        "--jmax",
        "2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("gamma,fill,rho,n,modulus,samples,seed,max_ratio"));
    assert_eq!(text.matches("\r\n").count(), 4);
}
