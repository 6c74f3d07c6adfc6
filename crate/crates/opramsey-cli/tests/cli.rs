use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use opramsey_core::linalg::C64;
use opramsey_core::sdp::{SdpConstraint, SdpProblem};
use opramsey_core::space::{BlockLinearMap, SpaceDescriptor};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_opramsey"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn report_of(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

#[test]
fn epi_count_matches_stirling() {
    let rep = report_of(&run(&["epi", "count", "3", "2"]));
    assert_eq!(rep["payload"], json!({"count": 3}));
    assert_eq!(rep["manifest"]["command"], "epi count");
}

#[test]
fn cbnorm_of_identity_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("id_m2.json");
    let id = BlockLinearMap::identity(&SpaceDescriptor::matrix_block(2, 2));
    fs::write(&path, serde_json::to_string(&id).unwrap()).unwrap();
    let arg = format!("@{}", path.display());
    let rep = report_of(&run(&["cbnorm", "--map", &arg]));
    let v = rep["payload"]["value"].as_f64().unwrap();
    assert!((v - 1.0).abs() < 1e-6, "cb norm {v}");
}

#[test]
fn sdp_solve_certifies_infeasible() {
    // X ⪰ 0 scalar with X = −1 pinned: infeasible
    let mut p = SdpProblem::new(vec![1]);
    let mut c = SdpConstraint::new(-1.0);
    c.push_herm(0, 0, 0, C64::new(1.0, 0.0));
    p.constraints.push(c);
    let arg = serde_json::to_string(&p).unwrap();
    let rep = report_of(&run(&["sdp", "solve", "--in", &arg]));
    assert_eq!(rep["payload"]["status"], "infeasible");
}

#[test]
fn choi_csv_has_declared_header() {
    let id = BlockLinearMap::identity(&SpaceDescriptor::matrix_block(2, 2));
    let arg = serde_json::to_string(&id).unwrap();
    let out = run(&["choi", "--map", &arg, "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "row,col,re,im");
    assert_eq!(lines.len(), 17, "4x4 Choi matrix flattens to 16 rows");
}

#[test]
fn exit_codes_follow_the_contract() {
    // unknown subcommand → usage
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(64));
    // precondition violation → 2 (ucp check needs an operator system)
    let id = BlockLinearMap::identity(&SpaceDescriptor::matrix_block(2, 2));
    let arg = serde_json::to_string(&id).unwrap();
    let out = run(&["ucp", "check", "--map", &arg]);
    assert_eq!(out.status.code(), Some(2));
    // budget exhaustion → 3 (drt cap of 1 candidate)
    let coloring = r#"{"kind":"discrete","r":2,"backend":{"backend":"hashed"}}"#;
    let out = run(&[
        "drt", "search", "--n", "6", "--r", "2", "--s", "3", "--coloring", coloring, "--cap", "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    // malformed thread cap → usage
    let out = bin()
        .args(["epi", "count", "3", "2"])
        .env("OPRAMSEY_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn drt_search_reports_witness() {
    let coloring = r#"{"kind":"discrete","r":2,"backend":{"backend":"preimage_count","class":0}}"#;
    let rep = report_of(&run(&[
        "drt", "search", "--n", "4", "--r", "2", "--s", "3", "--coloring", coloring,
    ]));
    assert!(rep["payload"]["candidates_tested"].as_u64().unwrap() > 0);
}

fn assert_replay_roundtrip(dir: &Path, name: &str, args: &[&str]) {
    let path = dir.join(name);
    let out = bin()
        .args(args)
        .args(["--out", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let arg = format!("@{}", path.display());
    let rep = report_of(&run(&["replay", "--report", &arg]));
    assert_eq!(rep["payload"]["match"], json!(true), "replay of {args:?}");
    assert_eq!(rep["payload"]["config_hash_ok"], json!(true));
}

#[test]
fn replay_reproduces_payload_bytes() {
    let dir = tempfile::tempdir().unwrap();
    assert_replay_roundtrip(dir.path(), "epi.json", &["epi", "list", "4", "2", "--limit", "3"]);
    assert_replay_roundtrip(
        dir.path(),
        "nets.json",
        &[
            "nets", "build", "--class", "cq", "--d", "2", "--m", "2", "--q", "1", "--s", "1",
            "--eps", "0.5", "--eps0", "1.0", "--seed", "7",
        ],
    );
}

#[test]
fn replay_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("count.json");
    let out = bin()
        .args(["epi", "count", "5", "2", "--out", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let mut rep: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    rep["payload"]["count"] = json!(999);
    let arg = serde_json::to_string(&rep).unwrap();
    let out = run(&["replay", "--report", &arg]);
    assert_eq!(out.status.code(), Some(1));
    let fresh: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(fresh["payload"]["match"], json!(false));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let args = ["tau", "demo", "--class", "cq", "--d", "2", "--m", "2", "--q", "1", "--s", "1",
        "--eps", "0.5", "--eps0", "1.0", "--seed", "3"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let pa: Value = serde_json::from_slice(&a.stdout).unwrap();
    let pb: Value = serde_json::from_slice(&b.stdout).unwrap();
    assert_eq!(pa["payload"], pb["payload"]);
    assert_eq!(pa["manifest"]["config_hash"], pb["manifest"]["config_hash"]);
}
