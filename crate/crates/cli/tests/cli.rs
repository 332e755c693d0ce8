use std::fs;
use std::process::{Command, Output};

fn dtfn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtfn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Data rows of CSV output, skipping `#` comments.
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn table_beta_09_matches_printed() {
    let o = dtfn(&["table", "--beta", "0.9", "--format", "csv"]);
    assert!(o.status.success());
    let golden = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/table1_printed.csv")).unwrap();
    let printed: Vec<Vec<f64>> = csv_rows(&golden)
        .into_iter()
        .filter(|r| r[0] == "0.9")
        .map(|r| r.iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    let ours = csv_rows(&stdout(&o));
    assert_eq!(ours.len(), 11);
    for (a, b) in ours.iter().zip(&printed) {
        for j in 2..5 {
            let x: f64 = a[j].parse().unwrap();
            assert!((x - b[j]).abs() < 5e-5, "k={} col {j}: {x} vs {}", a[1], b[j]);
        }
    }
}

#[test]
fn single_row_range() {
    let o = dtfn(&["table", "--k-min", "3", "--k-max", "3", "--format", "csv"]);
    assert!(o.status.success());
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1], "3");
}

#[test]
fn header_carries_version_and_hash() {
    let a = stdout(&dtfn(&["table", "--k-max", "2"]));
    let b = stdout(&dtfn(&["table", "--k-max", "2"]));
    assert_eq!(a, b);
    let first = a.lines().next().unwrap();
    assert!(
        first.starts_with(&format!("# dtfn {} table config=", env!("CARGO_PKG_VERSION"))),
        "{first}"
    );
    let c = stdout(&dtfn(&["table", "--k-max", "3"]));
    assert_ne!(first, c.lines().next().unwrap());
}

#[test]
fn solve_worked_example_json() {
    let o = dtfn(&["solve", "--alpha", "0.5", "--beta", "0.9", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 16);
    let pol = &v["result"][0]["policy"];
    assert_eq!(pol["k_star"], 1);
    assert!((pol["theta"].as_f64().unwrap() - 0.9039).abs() < 5e-5);
    assert!((pol["distortion"].as_f64().unwrap() - 0.044).abs() < 5e-4);
}

#[test]
fn solve_at_critical_alpha() {
    let o = dtfn(&["solve", "--alpha", "0.6", "--beta", "1", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"][0]["policy"]["distortion"].as_f64().unwrap(), 0.0);
}

#[test]
fn solve_tiny_alpha_terminates() {
    let o = dtfn(&["solve", "--alpha", "0.0001", "--beta", "0.9", "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["result"][0]["policy"]["k_star"].as_u64().unwrap() > 5);
}

#[test]
fn config_errors_exit_2() {
    let o = dtfn(&["solve", "--alpha", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--alpha"));
    let o = dtfn(&["solve"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        "beta = 0.9\n# comment\nsource = { kind = \"birth-death\", p = 0.7 }\n",
    )
    .unwrap();
    let o = dtfn(&["table", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("run.toml:3:"), "{err}");

    fs::write(&path, "beta = 0.9\nhorizn = 5\n").unwrap();
    let o = dtfn(&["table", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "beta = [0.95]\nk_max = 2\nformat = \"csv\"\n").unwrap();
    let p = path.to_str().unwrap();
    let rows = csv_rows(&stdout(&dtfn(&["table", "--config", p])));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "0.9500");
    let rows = csv_rows(&stdout(&dtfn(&["table", "--config", p, "--beta", "1"])));
    assert_eq!(rows[0][0], "1.0000");
}

#[test]
fn curve_breakpoints_continuous() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curves");
    let o = dtfn(&[
        "curve",
        "--beta",
        "0.9,0.95,1",
        "--k-max",
        "10",
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bp = fs::read_to_string(out.join("cstar_breakpoints.csv")).unwrap();
    for r in csv_rows(&bp) {
        assert_eq!(r[5].parse::<f64>().unwrap(), 0.0, "{r:?}");
    }
    let v = fs::read_to_string(out.join("dt_vertices.csv")).unwrap();
    assert_eq!(csv_rows(&v).len(), 33);
    assert!(fs::read_to_string(out.join("dt_samples.csv"))
        .unwrap()
        .starts_with("# dtfn"));
}

#[test]
fn verify_perturbation_and_empty_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.toml");
    fs::write(
        &path,
        "[verify]\np_values = [0.3]\nbetas = [0.9]\nk_max = 4\ndp_k_max = 2\ne_max = 120\nlambda_intervals = 2\na4_k_max = 10\n",
    )
    .unwrap();
    let p = path.to_str().unwrap();
    let o = dtfn(&["verify", "--config", p, "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dtfn(&[
        "verify",
        "--config",
        p,
        "--format",
        "json",
        "--perturb",
        "closed-form:2:0.001",
    ]);
    assert_eq!(o.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let f = &v["result"]["failures"][0];
    assert!(f["label"].as_str().unwrap().contains("[perturbed]"));
    assert!((f["delta"].as_f64().unwrap() - 1e-3).abs() < 1e-9);

    fs::write(&path, "[verify]\np_values = []\n").unwrap();
    let o = dtfn(&["verify", "--config", p]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("empty grid"));
}

#[test]
fn simulate_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    let o = dtfn(&[
        "simulate",
        "--strategy",
        "threshold:2",
        "--beta",
        "1",
        "--horizon",
        "5000",
        "--replicates",
        "2",
        "--seed",
        "9",
        "--trajectory",
        traj.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&traj).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# dtfn"));
    assert_eq!(lines.next().unwrap(), "t,x,u,z,e,xhat");
    assert_eq!(lines.count(), 1000);
    let again = dtfn(&[
        "simulate",
        "--strategy",
        "threshold:2",
        "--beta",
        "1",
        "--horizon",
        "5000",
        "--replicates",
        "2",
        "--seed",
        "9",
        "--format",
        "json",
    ]);
    let a: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(a["result"][0]["report"]["d_hat"], b["result"][0]["report"]["d_hat"]);
}

#[test]
fn lagrange_reports_interval() {
    let o = dtfn(&["lagrange", "--lambda", "5", "--beta", "1", "--format", "csv"]);
    assert!(o.status.success());
    let r = &csv_rows(&stdout(&o))[0];
    assert_eq!(r[2], "3");
    assert_eq!(r[6], "4.6667");
    assert_eq!(r[7], "12.3810");
}
