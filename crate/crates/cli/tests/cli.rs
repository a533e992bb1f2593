use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treeconfig"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, v: Value) {
    fs::write(dir.join(name), v.to_string()).unwrap();
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn fixtures() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let maps: Vec<Value> = [[0.0, 0.0], [0.7, 0.0], [0.0, 0.7], [0.7, 0.7]]
        .iter()
        .map(|tr| json!({"ratio": 0.3, "translation": tr}))
        .collect();
    write(d, "ifs.json", json!({"d": 2, "maps": maps, "depth": 3}));
    write(d, "path4.json", json!({"n": 4, "edges": [[0, 1], [1, 2], [2, 3]]}));
    write(d, "path3.json", json!({"n": 3, "edges": [[0, 1], [1, 2]]}));
    write(d, "edge.json", json!({"n": 2, "edges": [[0, 1]]}));
    write(d, "one.json", json!({"d": 2, "atoms": [[0.5, 0.5]], "weights": [1.0]}));
    write(
        d,
        "pair.json",
        json!({"d": 2, "atoms": [[0.0, 0.0], [1.0, 0.0]], "weights": [0.5, 0.5], "label": "pair"}),
    );
    assert!(run(&["generate", "--ifs", "ifs.json", "--out", "mu.json"], d)
        .status
        .success());
    dir
}

#[test]
fn generate_writes_every_atom() {
    let dir = fixtures();
    let mu: Value = serde_json::from_slice(&fs::read(dir.path().join("mu.json")).unwrap()).unwrap();
    assert_eq!(mu["d"], 2);
    assert_eq!(mu["atoms"].as_array().unwrap().len(), 64);
    let capped = run(
        &["generate", "--ifs", "ifs.json", "--out", "x.json", "--cap", "63"],
        dir.path(),
    );
    assert_eq!(capped.status.code(), Some(3));
}

#[test]
fn oracle_and_peel_agree() {
    let dir = fixtures();
    for restricted in [false, true] {
        let mut values = Vec::new();
        for method in ["oracle", "peel"] {
            let mut args = vec![
                "integral",
                "--measure",
                "mu.json",
                "--tree",
                "path3.json",
                "--t",
                "0.5",
                "--eps",
                "0.1",
                "--method",
                method,
            ];
            if restricted {
                args.push("--restricted");
            }
            let out = run(&args, dir.path());
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            let doc = stdout_json(&out);
            assert_eq!(doc["method"], method);
            assert_eq!(doc["tree_label"], "path3");
            assert_eq!(doc["restricted"], restricted);
            values.push(doc["value"].as_f64().unwrap());
        }
        assert!(values[0] > 0.0);
        assert!((values[0] - values[1]).abs() <= 1e-12 * values[0]);
    }
}

#[test]
fn pigeonhole_and_frostman_json() {
    let dir = fixtures();
    let out = run(
        &[
            "pigeonhole",
            "--measure",
            "mu.json",
            "--t",
            "0.5",
            "--eps",
            "0.1",
            "--depth",
            "2",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let doc = stdout_json(&out);
    assert_eq!(doc["stages"].as_array().unwrap().len(), 2);
    assert!(doc["stages"][1]["kept"].as_u64().unwrap() > 0);

    let out = run(
        &[
            "pigeonhole",
            "--measure",
            "one.json",
            "--t",
            "0.5",
            "--eps",
            "0.1",
            "--depth",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));

    let out = run(
        &[
            "frostman",
            "--measure",
            "mu.json",
            "--centers",
            "16",
            "--radii",
            "0.3,0.09,0.027",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(stdout_json(&out)["s_hat"].as_f64().unwrap() > 0.0);
}

#[test]
fn embed_outcomes_and_exit_codes() {
    let dir = fixtures();
    let d = dir.path();
    let none = run(
        &[
            "embed",
            "--measure",
            "one.json",
            "--tree",
            "edge.json",
            "--t",
            "0.5",
            "--eps",
            "0.1",
        ],
        d,
    );
    assert_eq!(none.status.code(), Some(4));
    assert_eq!(stdout_json(&none)["found"], false);

    let found = run(
        &[
            "embed",
            "--measure",
            "pair.json",
            "--tree",
            "edge.json",
            "--t",
            "1",
            "--eps",
            "0.01",
        ],
        d,
    );
    assert!(found.status.success());
    let doc = stdout_json(&found);
    assert_eq!(doc["assignment"], json!([0, 1]));
    assert_eq!(doc["distinct"], true);

    let budget = run(
        &[
            "embed",
            "--measure",
            "mu.json",
            "--tree",
            "path4.json",
            "--t",
            "0.5",
            "--eps",
            "0.1",
            "--budget",
            "1",
        ],
        d,
    );
    assert_eq!(budget.status.code(), Some(3));
    assert_eq!(stdout_json(&budget)["reason"], "budget");
}

#[test]
fn usage_and_validation_errors_exit_2() {
    let dir = fixtures();
    let d = dir.path();
    assert_eq!(run(&["integral", "--bogus"], d).status.code(), Some(2));
    assert_eq!(run(&["nonsense"], d).status.code(), Some(2));
    let bad_eps = run(
        &[
            "integral",
            "--measure",
            "mu.json",
            "--tree",
            "edge.json",
            "--t",
            "0.1",
            "--eps",
            "0.2",
        ],
        d,
    );
    assert_eq!(bad_eps.status.code(), Some(2));
    let missing = run(
        &[
            "integral",
            "--measure",
            "nope.json",
            "--tree",
            "edge.json",
            "--t",
            "0.5",
            "--eps",
            "0.1",
        ],
        d,
    );
    assert_eq!(missing.status.code(), Some(2));
    let oracle_cap = run(
        &[
            "integral",
            "--measure",
            "mu.json",
            "--tree",
            "path4.json",
            "--t",
            "0.5",
            "--eps",
            "0.1",
            "--method",
            "oracle",
            "--cap",
            "1000",
        ],
        d,
    );
    assert_eq!(oracle_cap.status.code(), Some(3));
}

#[test]
fn scan_two_atom_fixture() {
    let dir = fixtures();
    let d = dir.path();
    write(
        d,
        "scan.json",
        json!({
            "measure": {"measure": "pair.json"},
            "tree": "edge.json",
            "t_grid": {"min": 0.5, "max": 1.5, "steps": 11},
            "eps_ladder": {"eps0": 0.04, "halvings": 5},
            "seed": 1,
            "output_dir": "out"
        }),
    );
    let out = run(&["scan", "--config", "scan.json"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let interval = stdout_json(&out);
    assert_eq!(interval["I_lo"], 1.0);
    assert_eq!(interval["I_hi"], 1.0);
    let csv = fs::read_to_string(d.join("out/scan.csv")).unwrap();
    assert_eq!(csv.lines().count(), 56);
    assert!(csv
        .lines()
        .any(|l| l.starts_with("1,0.0025,") && l.ends_with(",true,found,ok")));
    assert!(csv
        .lines()
        .any(|l| l.starts_with("0.5,0.04,") && l.ends_with(",false,na,stage1_fail")));
    let report: Value = serde_json::from_slice(&fs::read(d.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 55);
}

#[test]
fn bad_thread_setting_is_rejected() {
    let dir = fixtures();
    let d = dir.path();
    write(
        d,
        "scan.json",
        json!({
            "measure": {"measure": "pair.json"},
            "tree": "edge.json",
            "t_grid": {"min": 0.5, "max": 1.5, "steps": 3},
            "eps_ladder": {"eps0": 0.04, "halvings": 1},
            "output_dir": "out"
        }),
    );
    let out = Command::new(env!("CARGO_BIN_EXE_treeconfig"))
        .args(["scan", "--config", "scan.json"])
        .env("TREECONFIG_THREADS", "zero")
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
