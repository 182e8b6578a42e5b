use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SCENARIO: &str = r#"
[grid]
width = 2
height = 2

[stations]
spots = [2, 0, 0, 1]

[fleet]
vehicles = 8

[demand]
horizon = 6
rates = [1.5, 0.2, 0.2, 0.2]
od = [[0.1, 0.3, 0.3, 0.3], [0.5, 0.1, 0.2, 0.2], [0.5, 0.2, 0.1, 0.2], [0.4, 0.3, 0.2, 0.1]]

[durations]
trip_base = 1
trip_per_hop = 1
charge = 2
"#;

fn run_config(out: &str) -> String {
    format!(
        r#"
scenario = "city.toml"
out_dir = "{out}"
checkpoint_every = 2

[trainer]
episodes = 3
steps_per_episode = 6
batch_size = 8
replay_capacity = 100
"#
    )
}

fn eamod(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eamod"))
        .args(args)
        .current_dir(cwd)
        .env_remove("EAMOD_OUT_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("city.toml"), SCENARIO).unwrap();
    fs::write(dir.path().join("run.toml"), run_config("run")).unwrap();
    dir
}

#[test]
fn project_simplex_hand_case() {
    let dir = tempfile::tempdir().unwrap();
    let o = eamod(&["project", "--point", "1.5,-0.5", "--simplex"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let x: Vec<f64> = stdout(&o).trim().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((x[0] - 1.0).abs() < 1e-6 && x[1].abs() < 1e-6, "{x:?}");
}

#[test]
fn project_box_clamps() {
    let dir = tempfile::tempdir().unwrap();
    let o = eamod(
        &["project", "--point", "0.5,-2,0.1", "--lower", "-0.3,-0.2,-0.2", "--upper", "0.3,0.2,0.2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let x: Vec<f64> = stdout(&o).trim().split(',').map(|v| v.parse().unwrap()).collect();
    for (a, b) in x.iter().zip([0.3, -0.2, 0.1]) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn project_polytope_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("half.toml"),
        "witness = [0.0, 0.0]\n[[rows]]\nnormal = [1.0, 1.0]\nbound = 1.0\n",
    )
    .unwrap();
    let o = eamod(&["project", "--point", "1,1", "--polytope", "half.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let x: Vec<f64> = stdout(&o).trim().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((x[0] - 0.5).abs() < 1e-6 && (x[1] - 0.5).abs() < 1e-6);
}

#[test]
fn dimension_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = eamod(&["project", "--point", "1,2", "--lower", "0", "--upper", "1"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = eamod(&["project", "--nope"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_small_suite() {
    let dir = tempfile::tempdir().unwrap();
    let o = eamod(&["gradcheck", "--cases", "2", "--seed", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("max relative error"));
}

#[test]
fn bad_od_row_exits_with_validation_code() {
    let dir = workspace();
    let bad = SCENARIO.replace("[0.1, 0.3, 0.3, 0.3]", "[0.1, 0.3, 0.3, 0.2]");
    fs::write(dir.path().join("city.toml"), bad).unwrap();
    let o = eamod(&["train", "--config", "run.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("demand.od[0]"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = workspace();
    let text = run_config("run").replace("episodes = 3", "episodes = 3\nepochs = 4");
    fs::write(dir.path().join("run.toml"), text).unwrap();
    let o = eamod(&["train", "--config", "run.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epochs"));
}

#[test]
fn missing_scenario_is_a_validation_error() {
    let dir = workspace();
    fs::remove_file(dir.path().join("city.toml")).unwrap();
    let o = eamod(&["train", "--config", "run.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn train_evaluate_compare_roundtrip() {
    let dir = workspace();
    let p = dir.path();
    let o = eamod(&["train", "--config", "run.toml", "--seed", "4"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(p.join("run/metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "episode,mean_reward,mean_u_c,mean_u_s,critic_loss");
    assert_eq!(lines.len(), 4);
    assert!(p.join("run/effective_config.toml").is_file());
    assert!(p.join("run/checkpoint_00002.json").is_file());
    assert!(p.join("run/checkpoint.json").is_file());
    let effective = fs::read_to_string(p.join("run/effective_config.toml")).unwrap();
    assert!(effective.contains("seed = 4") && effective.contains("gamma = 0.99"));

    // identical invocation, identical bytes
    let o = eamod(&["train", "--config", "run.toml", "--seed", "4", "--out", "again"], p);
    assert!(o.status.success());
    assert_eq!(metrics, fs::read_to_string(p.join("again/metrics.csv")).unwrap());

    let o = eamod(&["train", "--config", "run.toml", "--seed", "4", "--baseline", "true", "--out", "base"], p);
    assert!(o.status.success(), "{}", stderr(&o));

    for (ck, out) in [("run/checkpoint.json", "a.json"), ("base/checkpoint.json", "b.json")] {
        let o = eamod(
            &["evaluate", "--checkpoint", ck, "--scenario", "city.toml", "--noise", "1", "--seeds", "1,2,3", "--out", out],
            p,
        );
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("mean"));
    }
    let first = fs::read_to_string(p.join("a.json")).unwrap();
    let o = eamod(
        &["evaluate", "--checkpoint", "run/checkpoint.json", "--scenario", "city.toml", "--seeds", "1,2,3", "--out", "a2.json"],
        p,
    );
    assert!(o.status.success());
    assert_eq!(first, fs::read_to_string(p.join("a2.json")).unwrap());

    let o = eamod(&["compare", "--a", "a.json", "--b", "b.json", "--csv", "cmp.csv"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.contains("avg reward") && table.contains("avg u_c") && table.contains('%'));
    let csv = fs::read_to_string(p.join("cmp.csv")).unwrap();
    assert!(csv.starts_with("metric,a,b,increasing_rate_pct"));
    assert_eq!(csv.lines().count(), 4);

    let o = eamod(&["compare", "--a", "a.json", "--b", "a.json", "--csv", "same.csv"], p);
    assert!(stdout(&o).matches("+0.00%").count() == 3, "{}", stdout(&o));
}

#[test]
fn evaluate_rejects_mismatched_grid() {
    let dir = workspace();
    let p = dir.path();
    let o = eamod(&["train", "--config", "run.toml", "--episodes", "1"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let wide = SCENARIO
        .replace("width = 2\nheight = 2", "width = 4\nheight = 1");
    fs::write(p.join("wide.toml"), wide).unwrap();
    let o = eamod(&["evaluate", "--checkpoint", "run/checkpoint.json", "--scenario", "wide.toml"], p);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn output_root_variable_redirects_relative_outputs() {
    let dir = workspace();
    let root = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_eamod"))
        .args(["train", "--config", "run.toml", "--episodes", "1"])
        .current_dir(dir.path())
        .env("EAMOD_OUT_ROOT", root.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.path().join("run/metrics.csv").is_file());
    assert!(!dir.path().join("run").exists());
}
