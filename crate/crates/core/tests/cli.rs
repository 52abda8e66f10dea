use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ratealloc::sim::{run_experiment, ExperimentConfig, PolicySpec};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ratealloc"));
    cmd.env_remove("RATEALLOC_OUT_DIR");
    cmd
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn csv_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["ts-sweep", "--config", golden("ts-sweep.conf").to_str().unwrap(), "--out", "res"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let got = std::fs::read_to_string(dir.path().join("res/ts-sweep.csv")).unwrap();
    let want = std::fs::read_to_string(golden("ts-sweep.csv")).unwrap();
    assert_eq!(got, want);
    let manifest = std::fs::read_to_string(dir.path().join("res/ts-sweep.manifest")).unwrap();
    assert_eq!(manifest, std::fs::read_to_string(golden("ts-sweep.manifest")).unwrap());
}

#[test]
fn golden_rows_agree_with_library() {
    let csv = std::fs::read_to_string(golden("ts-sweep.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    for (row, a) in lines.zip([0.1, 1.0, 10.0]) {
        let cells: Vec<&str> = row.split(',').collect();
        let cfg = ExperimentConfig {
            mean_snr_db: vec![0.0, 10.0],
            concavity: vec![a, a],
            frames: 500,
            seed: 11,
            ..ExperimentConfig::symmetric(2, 0.0, a, PolicySpec::Ts)
        };
        let stats = run_experiment(&cfg).unwrap();
        assert_eq!(cells[col("taur")].parse::<f64>().unwrap(), stats.taur);
        assert_eq!(cells[col("mean_rate_user_2")].parse::<f64>().unwrap(), stats.mean_rate[1]);
        assert_eq!(cells[col("rate_std_user_1")].parse::<f64>().unwrap(), stats.rate_std[0]);
    }
}

#[test]
fn user_count_sweep_gives_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("fig1.conf"),
        "concavity = 0.1\nsnr_gap_db = 8.2\nframes = 300\nsweep_key = \"users\"\nsweep_values = [8, 16, 24, 32]\n",
    )
    .unwrap();
    let out = run_in(dir.path(), &["ts-sweep", "--config", "fig1.conf", "--out", "."]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("ts-sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].ends_with(",rate_std_user_32"));
    let users: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(users, ["8", "16", "24", "32"]);
    // rows with fewer users leave the trailing per-user cells empty
    assert!(lines[1].ends_with(",,,"));
    assert!(!lines[4].ends_with(','));
}

#[test]
fn paired_commands_emit_matched_ts_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gs-sweep", "--set", "users=3", "--set", "frames=400", "--out", "."]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("gs-sweep.csv")).unwrap();
    let policies: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(policies, ["ts", "gs"]);
}

#[test]
fn repeated_invocation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["qtsl", "--set", "users=4", "--set", "slots=4", "--set", "frames=1000", "--set", "seed=5"];
    for out in ["a", "b"] {
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--out", out]);
        assert!(run_in(dir.path(), &full).status.success());
    }
    let a = std::fs::read(dir.path().join("a/qtsl.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/qtsl.csv")).unwrap();
    assert_eq!(a, b);

    let replay = run_in(dir.path(), &["replay", "a/qtsl.manifest", "--out", "c"]);
    assert!(replay.status.success(), "{}", stderr(&replay));
    assert_eq!(std::fs::read(dir.path().join("c/qtsl.csv")).unwrap(), a);
}

#[test]
fn out_dir_defaults_to_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .current_dir(dir.path())
        .env("RATEALLOC_OUT_DIR", "from-env")
        .args(["ts-sweep", "--set", "users=2", "--set", "frames=100"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from-env/ts-sweep.csv").exists());
    assert!(dir.path().join("from-env/ts-sweep.manifest").exists());
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["ts-sweep", "--config", "no/such/file.conf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no/such/file.conf"));
}

#[test]
fn bad_value_exits_2_with_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.conf"), "users = 2\n\nalpha = 1.5\n").unwrap();
    let out = run_in(dir.path(), &["gs-sweep", "--config", "bad.conf"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("bad.conf:3"), "{msg}");
    assert!(msg.contains("alpha"), "{msg}");
}

#[test]
fn numeric_failure_exits_3() {
    // weight adaptation cannot equalize in a single step
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["fairness", "--set", "users=2", "--set", "mean_snr_db=0,20", "--set", "max_iterations=1", "--out", "."],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(dir.path().join("fairness.csv").exists());
}

#[test]
fn selfcheck_passes_and_filters_suites() {
    let dir = tempfile::tempdir().unwrap();
    let all = run_in(dir.path(), &["selfcheck", "--instances", "20"]);
    assert_eq!(all.status.code(), Some(0));
    let text = String::from_utf8_lossy(&all.stdout);
    for suite in ["ts-grid", "greedy", "derivatives"] {
        assert!(text.contains(&format!("PASS {suite}")), "{text}");
    }

    let one = run_in(dir.path(), &["selfcheck", "--suite", "greedy", "--seed", "9"]);
    assert_eq!(one.status.code(), Some(0));
    let text = String::from_utf8_lossy(&one.stdout);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("PASS greedy"));
    let again = run_in(dir.path(), &["selfcheck", "--suite", "greedy", "--seed", "9"]);
    assert_eq!(again.stdout, one.stdout);
}
