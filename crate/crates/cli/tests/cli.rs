use std::process::{Command, Output};

use serde_json::Value;

fn eqstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqstab")).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn analyze_example2_reports_stable_verdict() {
    let out = eqstab(&["analyze", "--builtin", "example2", "--region", "0.01:10"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["schema"], 1);
    assert_eq!(v["verdict"]["kind"], "GloballyAsymptoticallyStable");
    assert_eq!(v["spectrum"][0]["re"], -0.5);
    assert_eq!(v["system"]["digest"].as_str().unwrap().len(), 64);
}

#[test]
fn compressor_boundary_reports_surge_flow() {
    let out = eqstab(&["compressor", "boundary"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let phi = v["phi_surge"].as_f64().unwrap();
    assert!(phi > 0.43 && phi < 0.44);
    assert_eq!(v["experimental_surge_flow"], 0.48);
}

#[test]
fn missing_file_is_a_usage_error() {
    let out = eqstab(&["analyze", "--file", "nosuch.sys"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nosuch.sys"));
    assert_eq!(json(&out)["error"]["kind"], "usage");
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(eqstab(&["analyze", "--bogus"]).status.code(), Some(2));
    assert_eq!(eqstab(&["analyze", "--builtin", "nope"]).status.code(), Some(2));
    assert_eq!(
        eqstab(&["analyze", "--builtin", "example3", "--region", "0:1,0:1,0:1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(eqstab(&["compressor", "surge"]).status.code(), Some(2));
    assert_eq!(eqstab(&["--help"]).status.code(), Some(0));
}

#[test]
fn analysis_failures_exit_one() {
    let out = eqstab(&["popov", "--a", "1", "--k", "10"]);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    assert_eq!(v["error"]["kind"], "analysis");
    assert!(v["error"]["message"].as_str().unwrap().contains("Hurwitz"));
    // the definition parses but no planar test applies in one dimension
    assert_eq!(eqstab(&["bendixson", "--builtin", "example2"]).status.code(), Some(1));
}

#[test]
fn file_definitions_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let def = dir.path().join("decay.sys");
    std::fs::write(&def, "# linear decay\ndim 2\nx1' = -x1 + x2\nx2' = -2*x2\n").unwrap();
    let csv = dir.path().join("traj.csv");
    let svg = dir.path().join("traj.svg");
    let out = eqstab(&[
        "simulate",
        "--file",
        def.to_str().unwrap(),
        "--x0",
        "1,-1",
        "--t-end",
        "2",
        "--csv",
        csv.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["system"]["name"], "decay");
    assert_eq!(v["termination"]["kind"], "reached_t_end");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,x1,x2\n") && !text.contains('\r'));
    // CSV values parse back to the reported final state exactly
    let last: Vec<f64> = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();
    let fin: Vec<f64> = v["final_state"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert_eq!(&last[1..], fin.as_slice());
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));

    let out = eqstab(&["analyze", "--file", def.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "region is required for files");
}

#[test]
fn sweep_csv_has_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let out = eqstab(&["compressor", "sweep", "--points", "20", "--csv", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "phi,psi_c,g,real_part,discriminant,eig_re,eig_im"
    );
    assert_eq!(text.lines().count(), 21);
    assert_eq!(json(&out)["complex_everywhere"], true);
}

#[test]
fn threads_variable_is_accepted() {
    let out = Command::new(env!("CARGO_BIN_EXE_eqstab"))
        .args(["sweep-eig", "--builtin", "example3", "--grid", "4"])
        .env("EQSTAB_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["nodes"], 16);
}
