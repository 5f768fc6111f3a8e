use std::process::{Command, Output};

fn shbvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shbvm"))
        .args(args)
        .env_remove("SHBVM_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn run_csv_reports_selected_order() {
    let o = shbvm(&["run", "--problem", "kepler", "--method", "shbvm", "--n", "10", "--periods", "1", "--out", "csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("# problem=kepler method=shbvm"));
    let rows = data_lines(&text);
    assert_eq!(rows[0], "n,k,s,time,e_H,e_M,e_L,e_C,e_y,rate_H,rate_M,rate_L,rate_C,rate_y");
    assert!(rows[1].starts_with("10,20,16,"), "{}", rows[1]);
}

#[test]
fn csv_output_is_reproducible_without_timing() {
    let args = ["run", "--problem", "lotka-volterra", "--method", "hbvm:8,4", "--n", "20", "--periods", "2", "--out", "csv", "--no-timing"];
    let a = shbvm(&args);
    let b = shbvm(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn json_output_parses() {
    let o = shbvm(&["run", "--problem", "stiff", "--method", "gauss:4", "--n", "200", "--out", "json", "--seed-figure"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("\"s\": 4"));
    assert!(text.contains("\"decay\""));
    assert!(text.contains("\"e_y\""));
}

#[test]
fn table_prints_rates() {
    let o = shbvm(&["table", "--problem", "kepler", "--method", "gauss:2", "--n", "100,200", "--periods", "1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows = data_lines(&text);
    assert_eq!(rows.len(), 3);
    assert!(rows[1].contains("---"));
    assert!(rows[2].contains(" 4.0"), "{}", rows[2]);
}

#[test]
fn table_rejects_non_doubling_sequence() {
    let o = shbvm(&["table", "--problem", "kepler", "--method", "gauss:2", "--n", "100,300"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("double"));
}

#[test]
fn invalid_specs_exit_with_one() {
    for args in [
        &["run", "--problem", "kepler", "--n", "0"][..],
        &["run", "--problem", "pendulum", "--n", "10"],
        &["run", "--method", "hbvm:2,4", "--n", "10"],
        &["run", "--method", "rk4", "--n", "10"],
        &["run", "--n", "10", "--iteration", "jacobi"],
        &["run", "--problem", "kepler"],
        &["frobnicate"],
    ] {
        let o = shbvm(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn divergence_exits_with_two() {
    let o = shbvm(&["run", "--problem", "stiff", "--method", "gauss:4", "--iteration", "fixed-point", "--n", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

#[test]
fn help_exits_with_zero() {
    let o = shbvm(&["--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("tableau"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# gauss run\nproblem = kepler\nmethod = gauss:2\nn = 50\nout = csv\n").unwrap();
    let path = cfg.to_str().unwrap();

    let o = shbvm(&["run", "--config", path, "--no-timing"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data_lines(&stdout(&o))[1].starts_with("50,2,2,"));

    let o = shbvm(&["run", "--config", path, "--n", "60", "--method", "gauss:3", "--no-timing"]);
    assert!(data_lines(&stdout(&o))[1].starts_with("60,3,3,"));

    std::fs::write(&cfg, "speed = 3\n").unwrap();
    assert_eq!(shbvm(&["run", "--config", path]).status.code(), Some(1));
}

#[test]
fn out_dir_env_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_shbvm"))
        .args(["run", "--problem", "kepler", "--method", "gauss:2", "--n", "20", "--out", "csv"])
        .env("SHBVM_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    let written = std::fs::read_to_string(dir.path().join("kepler_gauss-2_n20_p1.csv")).unwrap();
    assert_eq!(written, stdout(&o));
}

#[test]
fn trajectory_file_has_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    let o = shbvm(&["run", "--problem", "kepler", "--method", "gauss:2", "--n", "25", "--periods", "2", "--trajectory", traj.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&traj).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,t,y1,y2,y3,y4,H,M,L");
    assert_eq!(lines.len(), 1 + 51);
}

#[test]
fn figure_and_tableau() {
    let o = shbvm(&["figure", "--n", "5,40", "--out", "csv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("# n=5 kappa="));
    assert_eq!(data_lines(&text).len(), 1 + 2 * 16);

    let o = shbvm(&["tableau", "--s", "2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("\"k\": 2"));
    assert!(text.contains("0.21132486540518"));

    assert_eq!(shbvm(&["tableau", "--s", "3", "--k", "2"]).status.code(), Some(1));
}
