use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ergoflow_core::roof::{eval_roof, RoofPart, RoofSpec};
use ergoflow_core::torus::TorusPoint;
use ergoflow_core::{desk, fmt_q, q};

fn ergoflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergoflow"))
        .args(args)
        .current_dir(dir)
        .env_remove("ERGOFLOW_PRECISION_BITS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn construct_relaxed_stage_one_writes_state() {
    let d = tempfile::tempdir().unwrap();
    let o = ergoflow(&["construct", "--stages", "1", "--mode", "relaxed", "--tau", "6"], d.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let state = fs::read_to_string(d.path().join("ergoflow-out/state.json")).unwrap();
    assert!(state.contains("\"mode\": \"relaxed\""));
    assert!(stdout(&o).contains("# tau = 6/1"));
    assert!(d.path().join("ergoflow-out/construct.csv").exists());
}

#[test]
fn construct_faithful_emits_magnitude_certificate() {
    let d = tempfile::tempdir().unwrap();
    let o = ergoflow(&["construct", "--stages", "1", "--mode", "faithful"], d.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("magnitude certificate"));
}

#[test]
fn usage_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&ergoflow(&["verify", "--suite", "tower", "--schedule", "missing.txt"], d.path())), 2);
    assert_eq!(code(&ergoflow(&["verify", "--suite", "nope"], d.path())), 2);
    assert_eq!(code(&ergoflow(&["construct", "--mode", "faithful", "--tau", "6"], d.path())), 2);
    assert_eq!(code(&ergoflow(&["frobnicate"], d.path())), 2);
    assert_eq!(code(&ergoflow(&["export", "--reports", "nowhere"], d.path())), 2);
    fs::write(d.path().join("f.ini"), "[run]\nmode = faithful\n[relaxed]\nsigma = 8\n").unwrap();
    assert_eq!(code(&ergoflow(&["--config", "f.ini", "construct"], d.path())), 2);
}

#[test]
fn verify_suites_on_builtins() {
    let d = tempfile::tempdir().unwrap();
    let o = ergoflow(&["verify", "--suite", "tower", "--schedule", "toy"], d.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("(iv)"));
    assert_eq!(code(&ergoflow(&["verify", "--suite", "dk", "--samples", "10"], d.path())), 0);
    let j = ergoflow(&["verify", "--suite", "v123", "--format", "json"], d.path());
    assert_eq!(code(&j), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&j)).unwrap();
    assert_eq!(v["title"], "v123");
}

#[test]
fn verify_propc_on_relaxed_state() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&ergoflow(&["construct", "--stages", "1"], d.path())), 0);
    let o = ergoflow(&["verify", "--suite", "propC", "--state", "ergoflow-out/state.json", "--samples", "3"], d.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("propC |S + q log q - q Phi| < 155q"));
}

#[test]
fn export_is_tidy_and_idempotent() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&ergoflow(&["verify", "--suite", "tower", "--schedule", "toy"], d.path())), 0);
    assert_eq!(code(&ergoflow(&["verify", "--suite", "psi", "--samples", "5"], d.path())), 0);
    let a = ergoflow(&["export"], d.path());
    let b = ergoflow(&["export"], d.path());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.starts_with("suite,k,sample,value,bound,margin,passed\n"));
    assert!(text.contains("\npsi,") && text.contains("\ntower,"));
    let j = ergoflow(&["export", "--format", "json"], d.path());
    let rows: Vec<serde_json::Value> = serde_json::from_str(&stdout(&j)).unwrap();
    assert_eq!(rows.len(), text.lines().count() - 1);
}

#[test]
fn verify_output_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let args = ["verify", "--suite", "dk", "--samples", "8", "--seed", "11", "--output"];
    let mut a = args.to_vec();
    a.push("one");
    let mut b = args.to_vec();
    b.push("two");
    ergoflow(&a, d.path());
    ergoflow(&b, d.path());
    for f in ["dk.json", "dk.csv", "dk.txt"] {
        assert_eq!(fs::read(d.path().join("one").join(f)).unwrap(), fs::read(d.path().join("two").join(f)).unwrap(), "{}", f);
    }
}

#[test]
fn near_rollover_is_undecided_at_low_precision() {
    // a time within ~2^-250 below the roof: a 64-bit ceiling cannot tell
    // whether the point rolls over, the default ceiling can
    let cfg = desk::config("desk").unwrap();
    let spec = RoofSpec::for_config(&cfg, q(3, 1)).unwrap();
    let f = eval_roof(&spec, &TorusPoint::new(q(1, 3), 0), RoofPart::F).unwrap();
    let t = fmt_q(&f.enclose(256).unwrap().lo_ratio());
    let d = tempfile::tempdir().unwrap();
    let low = ergoflow(&["flow", "--x", "1/3", "--time", &t, "--precision-bits", "64"], d.path());
    assert_eq!(code(&low), 3, "{}", String::from_utf8_lossy(&low.stderr));
    let high = ergoflow(&["flow", "--x", "1/3", "--time", &t], d.path());
    assert_eq!(code(&high), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&high)).unwrap();
    assert_eq!(v["x"], "1/3");
    let env = Command::new(env!("CARGO_BIN_EXE_ergoflow"))
        .args(["flow", "--x", "1/3", "--time", &t])
        .current_dir(d.path())
        .env("ERGOFLOW_PRECISION_BITS", "64")
        .output()
        .unwrap();
    assert_eq!(code(&env), 3);
}

#[test]
fn probe_is_seeded() {
    let d = tempfile::tempdir().unwrap();
    let args = ["probe", "--samples", "500", "--seed", "5", "--times", "0,2.5"];
    let a = ergoflow(&args, d.path());
    let b = ergoflow(&args, d.path());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("t,estimate,stderr,seed\n"));
}
