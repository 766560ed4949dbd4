//! End-to-end runs of every subcommand through the argument parser, writing
//! into temporary directories.

use std::path::Path;

use tempfile::TempDir;

use super::try_run;

/// Exit code and error message of one invocation.
struct Output {
    code: i32,
    message: String,
}

fn ftmpc(args: &[&str]) -> Output {
    match try_run(std::iter::once("ftmpc").chain(args.iter().copied())) {
        Ok(()) => Output { code: 0, message: String::new() },
        Err(e) => Output { code: e.exit_code(), message: e.to_string() },
    }
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).filter(|l| !l.starts_with('#')).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn design_file_round_trip_reproduces_the_trajectory() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("design");
    let out = ftmpc(&["design", "--config", "si_linear", "--out", d.to_str().unwrap()]);
    assert_eq!(out.code, 0, "{}", out.message);

    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let design_path = d.join("design.json");
    let with_file =
        ftmpc(&["simulate", "--config", "si_linear", "--design", design_path.to_str().unwrap(), "--x0", "2,-0.7", "--out", a.to_str().unwrap()]);
    let fresh = ftmpc(&["simulate", "--config", "si_linear", "--x0", "2,-0.7", "--out", b.to_str().unwrap()]);
    assert_eq!(with_file.code, 0, "{}", with_file.message);
    assert_eq!(fresh.code, 0);
    let csv = read(&a.join("trajectory.csv"));
    assert_eq!(csv, read(&b.join("trajectory.csv")));
    assert!(csv.lines().any(|l| l.starts_with("# T=") && l != "# T=none"), "{csv}");
    assert!(csv.starts_with("k,x_1,x_2,u_1,objective,status,iterations\n"));
}

#[test]
fn design_file_carries_the_terminal_data() {
    let tmp = TempDir::new().unwrap();
    let out = ftmpc(&["design", "--config", "si_linear", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.code, 0);
    let v: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("design.json"))).unwrap();
    let design = &v["design"];
    let eps = design["eps"].as_f64().unwrap();
    assert!((4.0..=4.3).contains(&eps), "{eps}");
    let p = &design["p"]["data"];
    assert!((p[0][0].as_f64().unwrap() - 6.7).abs() < 0.1);
    assert!((p[0][1].as_f64().unwrap() - 22.2).abs() < 0.1);
    assert!(design["k_db"]["data"][0][0].as_f64().unwrap() > 7.6);
    assert_eq!(v["validation"][0]["passed"], serde_json::Value::Bool(true));
}

#[test]
fn short_horizon_and_non_stabilizing_gain_are_design_errors() {
    let tmp = TempDir::new().unwrap();
    let short = write_config(tmp.path(), "short.json", r#"{"plant": "si_linear", "horizon": 1}"#);
    let out = ftmpc(&["design", "--config", &short, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.code, 2);
    assert!(out.message.contains("control horizon must be greater than or equal to the system dimension"), "{}", out.message);

    let zero = write_config(tmp.path(), "zero.json", r#"{"plant": "si_linear", "gain": {"rows": 1, "cols": 2, "data": [[0, 0]]}}"#);
    let out = ftmpc(&["design", "--config", &zero, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.code, 2);
    assert!(out.message.contains("not stabilizing"), "{}", out.message);
}

#[test]
fn misspelled_keys_and_bad_flags_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let bad = write_config(tmp.path(), "bad.json", r#"{"plant": "si_linear", "constraints": {"u_max": [5]}}"#);
    let out = ftmpc(&["design", "--config", &bad]);
    assert_eq!(out.code, 1);
    assert!(out.message.contains("constraints") && out.message.contains("u_max"), "{}", out.message);

    assert_eq!(ftmpc(&["simulate", "--config", "si_linear", "--x0", "a,b"]).code, 1);
    assert_eq!(ftmpc(&["simulate", "--config", "si_linear"]).code, 1);
    assert_eq!(ftmpc(&["launch"]).code, 1);
}

#[test]
fn mismatched_design_file_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("d");
    assert_eq!(ftmpc(&["design", "--config", "si_linear", "--out", d.to_str().unwrap()]).code, 0);
    let other = write_config(
        tmp.path(),
        "other.json",
        r#"{"plant": {"a": {"rows": 2, "cols": 2, "data": [[1.2, 1], [0, 0.9]]},
                      "b": {"rows": 2, "cols": 1, "data": [[0], [0.5]]}},
            "horizon": 8, "constraints": {"u_lo": [-5], "u_hi": [5]}}"#,
    );
    let design = d.join("design.json");
    let out = ftmpc(&["simulate", "--config", &other, "--design", design.to_str().unwrap(), "--x0", "0.1,0.1"]);
    assert_eq!(out.code, 1);
    assert!(out.message.contains("does not match"), "{}", out.message);
}

#[test]
fn origin_gives_all_zero_rows_and_infeasible_start_exits_three() {
    let tmp = TempDir::new().unwrap();
    let out = ftmpc(&["simulate", "--config", "si_linear", "--x0", "0,0", "--steps", "5", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.code, 0);
    let csv = read(&tmp.path().join("trajectory.csv"));
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 6);
    for row in &rows {
        for v in &row[1..4] {
            assert!(v.is_empty() || v.parse::<f64>().unwrap() == 0.0, "{row:?}");
        }
    }
    assert!(csv.contains("# T=0"));

    let out = ftmpc(&["simulate", "--config", "si_linear", "--x0", "40,40", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.code, 3);
    assert!(out.message.contains("check_feasible = false"));
}

#[test]
fn nonlinear_run_settles_inside_the_state_band() {
    let tmp = TempDir::new().unwrap();
    let out = ftmpc(&["simulate", "--config", "nonlinear", "--x0", "0.5,-0.3", "--steps", "15", "--svg", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.code, 0, "{}", out.message);
    let csv = read(&tmp.path().join("trajectory.csv"));
    for row in data_rows(&csv) {
        assert!(row[2].parse::<f64>().unwrap().abs() < std::f64::consts::FRAC_PI_2);
        if !row[3].is_empty() {
            assert!(row[3].parse::<f64>().unwrap().abs() <= 2.0);
        }
    }
    assert!(csv.lines().any(|l| l.starts_with("# T=") && l != "# T=none"));
    assert!(read(&tmp.path().join("trajectory.svg")).starts_with("<svg"));
}

#[test]
fn feasibility_map_is_deterministic_and_contains_the_baseline() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "scan.json", r#"{"plant": "si_linear", "scan": {"lo": [-3, -3], "hi": [3, 3], "resolution": [21, 21]}}"#);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(ftmpc(&["feasibility", "--config", &cfg, "--svg", "--out", a.to_str().unwrap()]).code, 0);
    assert_eq!(ftmpc(&["feasibility", "--config", &cfg, "--out", b.to_str().unwrap()]).code, 0);
    let csv = read(&a.join("feasibility.csv"));
    assert_eq!(csv, read(&b.join("feasibility.csv")));
    assert!(csv.starts_with("x1,x2,label\n"));
    assert!(csv.contains("0,0,feasible_both\n"), "origin cell");
    let summary = csv.lines().last().unwrap();
    assert!(summary.contains("baseline_only=0"), "{summary}");
    let field = |key: &str| -> usize { summary.split_whitespace().find_map(|kv| kv.strip_prefix(key)).unwrap().parse().unwrap() };
    assert!(field("proposed=") > field("baseline="), "{summary}");
    let svg = read(&a.join("feasibility.svg"));
    assert!(svg.contains("stroke-dasharray=\"5 3\""));
}

#[test]
fn monte_carlo_is_seed_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "mc.json", r#"{"plant": "si_linear", "disturbance": {"bound": 1}, "runs": 4, "seed": 11}"#);
    let run = |dir: &str, seed: &str| {
        let out_dir = tmp.path().join(dir);
        let out = ftmpc(&["montecarlo", "--config", &cfg, "--x0", "1,-0.4", "--steps", "30", "--seed", seed, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(out.code, 0, "{}", out.message);
        read(&out_dir.join("montecarlo.csv"))
    };
    let first = run("a", "11");
    assert_eq!(first, run("b", "11"));
    assert_ne!(first, run("c", "12"));
    assert_eq!(data_rows(&first).len(), 4);
}

#[test]
fn validate_and_multi_input_commands_succeed() {
    let tmp = TempDir::new().unwrap();
    let out = ftmpc(&["validate", "--config", "si_linear"]);
    assert_eq!(out.code, 0);
    let d = tmp.path().join("d");
    assert_eq!(ftmpc(&["design", "--config", "mi_linear", "--out", d.to_str().unwrap()]).code, 0);
    let design = d.join("design.json");
    assert_eq!(ftmpc(&["validate", "--config", "mi_linear", "--design", design.to_str().unwrap()]).code, 0);

    let out = ftmpc(&["simulate", "--config", "mi_linear", "--x0", "1,-0.4,0.5", "--steps", "20", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.code, 0, "{}", out.message);
    for row in data_rows(&read(&tmp.path().join("trajectory.csv"))) {
        assert!(row[5].is_empty() || row[5] == "0", "second input must stay at zero: {row:?}");
    }
}
