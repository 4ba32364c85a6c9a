use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_klbts");

fn klbts(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("KLBTS_SEED").output().unwrap()
}

fn gen(dir: &Path, name: &str, shape: [&str; 3], seed: &str) {
    let out = klbts(&["gen", shape[0], shape[1], shape[2], "--seed", seed, "--out", name], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "a.json", ["5", "10", "0.7"], "4");
    gen(dir.path(), "b.json", ["5", "10", "0.7"], "4");
    let a = std::fs::read_to_string(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read_to_string(dir.path().join("b.json")).unwrap());
    let mdp = klbts::Mdp::from_json_str(&a).unwrap();
    assert_eq!((mdp.num_states(), mdp.num_actions(), mdp.gamma()), (5, 10, 0.7));
    assert_eq!(mdp.to_json_string(), a);
}

#[test]
fn seed_env_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let run = |env: Option<&str>| {
        let mut cmd = Command::new(BIN);
        cmd.args(["gen", "2", "2", "0.5", "--seed", "1"]).env_remove("KLBTS_SEED");
        if let Some(v) = env {
            cmd.env("KLBTS_SEED", v);
        }
        cmd.current_dir(dir.path()).output().unwrap().stdout
    };
    let plain = run(None);
    assert_ne!(plain, run(Some("2")));
    assert_eq!(run(Some("1")), plain);
}

#[test]
fn solve_and_allocation_print_json() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "m.json", ["2", "2", "0.5"], "0");
    let out = klbts(&["solve", "--mdp", "m.json"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["policy"].as_array().unwrap().len(), 2);
    let out = klbts(&["allocation", "--mdp", "m.json"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let total: f64 = v["omega_bar"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(v["v_program"].as_f64().unwrap() <= v["u_bound"].as_f64().unwrap());
}

#[test]
fn run_writes_a_record() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "m.json", ["2", "2", "0.5"], "0");
    let out = klbts(&["run", "--mdp", "m.json", "--delta", "0.1", "--seed", "3", "--out-jsonl", "r.jsonl"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["correct"], serde_json::Value::Bool(true));
    let lines = std::fs::read_to_string(dir.path().join("r.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1);
}

#[test]
fn sweep_outputs() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "m.json", ["2", "2", "0.5"], "0");
    let out = klbts(
        &[
            "sweep",
            "--mdp",
            "m.json",
            "--deltas",
            "0.1,0.01",
            "--runs",
            "2",
            "--baseline",
            "bespoke-nmin",
            "--out-csv",
            "s.csv",
            "--out-svg",
            "s.svg",
            "--out-jsonl",
            "s.jsonl",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert!(csv.starts_with("delta,mean_tau,std_tau,errors,bound_4U_log,budget_exhausted,bespoke_nmin_total\n"));
    assert_eq!(csv.lines().count(), 3);
    let svg = std::fs::read_to_string(dir.path().join("s.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("log(1/delta)"));
    assert_eq!(std::fs::read_to_string(dir.path().join("s.jsonl")).unwrap().lines().count(), 4);
}

#[test]
fn empty_delta_list_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "m.json", ["2", "2", "0.5"], "0");
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"mdp": {"path": "m.json"}, "deltas": [], "runs_per_delta": 3, "outputs": {"csv": "e.csv"}}"#,
    )
    .unwrap();
    let out = klbts(&["sweep", "--config", "cfg.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert_eq!(csv, "delta,mean_tau,std_tau,errors,bound_4U_log,budget_exhausted\n");
}

#[test]
fn invalid_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "m.json", ["2", "2", "0.5"], "0");
    let out = klbts(&["sweep", "--mdp", "m.json", "--deltas", "0.01,0.1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("strictly decreasing"));
    let out = klbts(&["solve", "--mdp", "missing.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    std::fs::write(dir.path().join("bad.json"), r#"{"S": 1, "A": 1, "gamma": 0.5, "transitions": [[[0.5]]], "rewards": [[{"kind": "bernoulli", "mean": 0.5}]]}"#).unwrap();
    let out = klbts(&["solve", "--mdp", "bad.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("transitions[0][0]"));
}

#[test]
fn verify_and_oracle_on_generated_model() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "m.json", ["2", "2", "0.5"], "0");
    let out = klbts(&["verify", "--mdp", "m.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let out = klbts(&["oracle", "--mdp", "m.json", "--restarts", "10"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["consistent_with_bound"], serde_json::Value::Bool(true));
}
