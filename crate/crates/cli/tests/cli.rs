use std::process::{Command, Output};

fn layerforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_layerforge")).args(args).env_remove("LAYERFORGE_THREADS").output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn num(v: &serde_json::Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn locate_reports_cubic_layer() {
    let out = layerforge(&["locate", "--problem", "cubic"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["command"], "locate");
    assert!((num(&v["result"]["t0"]) - 0.5).abs() < 1e-10);
    assert!((num(&v["result"]["c_i"]) - 0.0833333).abs() < 1e-6);
}

#[test]
fn output_is_byte_identical_across_runs() {
    let a = layerforge(&["locate", "--problem", "cubic-wavy", "--eps", "0.03"]);
    let b = layerforge(&["locate", "--eps", "0.03", "--problem", "cubic-wavy"]);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("\"t2\": 1.18435"), "{text}");
}

#[test]
fn usage_errors_name_the_flag() {
    for (args, flag) in [
        (vec!["phi", "--problem", "cubic", "--eps", "0"], "--eps"),
        (vec!["solve", "--n", "66"], "--n"),
        (vec!["solve", "--c-tau", "2"], "--c-tau"),
        (vec!["expand", "--p", "0.5"], "--p"),
        (vec!["expand", "--p-prime", "-0.2"], "--p-prime"),
        (vec!["expand", "--eps", "0.01", "--h-hat", "0.2"], "--h-hat"),
        (vec!["locate", "--problem", "no-such-problem"], "--problem"),
    ] {
        let out = layerforge(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(flag), "{args:?}: {err}");
    }
    assert_eq!(layerforge(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn thread_variable_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_layerforge")).arg("locate").env("LAYERFORGE_THREADS", "0").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("LAYERFORGE_THREADS"));
    let ok = Command::new(env!("CARGO_BIN_EXE_layerforge")).arg("locate").env("LAYERFORGE_THREADS", "2").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn csv_goes_to_out_directory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_str().unwrap();
    let out = layerforge(&["dump-kink", "--format", "csv", "--out", path]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(dir.path().join("dump-kink.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("xi,v0,chi"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(row.len(), 3);
    assert!(row[0] < -20.0 && row[1] > 0.0 && row[1] < 1e-6);
}

#[test]
fn wrong_orientation_is_a_failed_check() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("flipped.json");
    std::fs::write(
        &file,
        r#"{"name": "flipped", "b": "u*(u-(0.25+0.5*x))*(u-1)", "phi0": "0.25+0.5*x", "phi1": "0", "phi2": "1",
            "g0": 0, "g1": 1, "epsilon": 0.01}"#,
    )
    .unwrap();
    let p = file.to_str().unwrap();
    let locate = layerforge(&["locate", "--problem", p]);
    assert_eq!(locate.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&locate.stderr).contains("C_I"));
    let check = layerforge(&["check", "--problem", p]);
    assert_eq!(check.status.code(), Some(1));
    let v = json(&check);
    let a5 = v["result"]["checks"].as_array().unwrap().iter().find(|c| c["name"] == "A5").unwrap().clone();
    assert_eq!(a5["passed"], false);
}

#[test]
fn solve_and_compare_agree() {
    let solve = layerforge(&["solve", "--eps", "0.01", "--n", "512"]);
    assert_eq!(solve.status.code(), Some(0));
    let s = json(&solve);
    assert!(s["result"]["iterations"].as_u64().unwrap() <= 8);
    assert_eq!(s["result"]["u"].as_array().unwrap().len(), 513);
    let cmp = layerforge(&["compare", "--eps", "0.01", "--n", "512"]);
    let d = &json(&cmp)["result"]["distances"];
    assert!(num(&d["max"]) < 1e-2 && num(&d["max"]) >= num(&d["outer"]));
}

#[test]
fn sweeps_report_pass() {
    for args in [vec!["phi"], vec!["decay"], vec!["monotone", "--eps", "0.001"]] {
        let out = layerforge(&args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let phi = json(&layerforge(&["phi", "--format", "json"]));
    assert_eq!(phi["result"]["passed"], true);
    assert_eq!(phi["result"]["values"].as_array().unwrap().len(), 10);
}

#[test]
fn expand_emits_requested_grid() {
    let out = layerforge(&["expand", "--n", "64", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 66);
    assert_eq!(text.lines().next(), Some("x,u_as,beta,truncated"));
}

#[test]
fn full_suite_reports_the_known_red_criterion() {
    let out = layerforge(&["all", "--format", "json"]);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    let criteria = v["result"]["criteria"].as_array().unwrap();
    assert_eq!(criteria.len(), 12);
    let red: Vec<u64> = criteria.iter().filter(|c| c["passed"] == false).map(|c| c["id"].as_u64().unwrap()).collect();
    assert_eq!(red, vec![5]);
    let lines = String::from_utf8_lossy(&out.stderr);
    assert_eq!(lines.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count(), 12);
}
