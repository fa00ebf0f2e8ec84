use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scl_cli::bundle::{Bundle, Status};

fn scl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scl")).args(args).output().expect("scl runs")
}

fn run(command: &str, config: &Path, out: &Path) -> Output {
    scl(&[command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path
}

fn scenario_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

const FREE_HEADER: &str = r#"
schema_version = 1
name = "t"
[potential]
family = "free"
dim = 1
"#;

#[test]
fn missing_energy_exits_two_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("commands = []\n{FREE_HEADER}"));
    let out = run("run", &config, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("energy"), "{stderr}");
}

#[test]
fn inadmissible_weight_is_rejected_at_parse_time() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{FREE_HEADER}[energy]\ne0 = 1.0\n[regions]\ndelta = 0.4\n");
    let out = run("run", &write_config(dir.path(), &text), &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("regions.delta"));
}

#[test]
fn unknown_command_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{FREE_HEADER}[energy]\ne0 = 1.0\n");
    let out = run("frobnicate", &write_config(dir.path(), &text), &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_command_list_gives_empty_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("commands = []\n{FREE_HEADER}[energy]\ne0 = 1.0\n");
    let out_dir = dir.path().join("out");
    let out = run("run", &write_config(dir.path(), &text), &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(out_dir.join("summary.csv")).unwrap(), "command,status,key,value\n");
    let bundle = Bundle::from_json(&fs::read_to_string(out_dir.join("bundle.json")).unwrap()).unwrap();
    assert!(bundle.results.is_empty());
    assert!(out_dir.join("run-manifest.json").exists());
}

#[test]
fn five_point_ladder_gives_five_row_scan() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("h_ladder = [0.4, 0.3, 0.2, 0.15, 0.1]\n{FREE_HEADER}[energy]\ne0 = 1.0\n");
    let out_dir = dir.path().join("out");
    let out = run("resolvent-scan", &write_config(dir.path(), &text), &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(out_dir.join("resolvent-scan-scan.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["h", "re_z", "im_z", "norm", "residual", "converged"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    for (row, h) in rows.iter().zip([0.4, 0.3, 0.2, 0.15, 0.1]) {
        assert_eq!(row[0].parse::<f64>().unwrap(), h);
        assert_eq!(&row[5], "true");
    }
}

#[test]
fn bundle_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let text = format!("commands = [\"flow\", \"escape\"]\n{FREE_HEADER}[energy]\ne0 = 1.0\n[regions]\nr = 3.0\n");
    let out = run("run", &write_config(dir.path(), &text), &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(out_dir.join("bundle.json")).unwrap();
    let bundle = Bundle::from_json(&text).unwrap();
    assert_eq!(bundle.results.len(), 2);
    assert_eq!(bundle.to_json() + "\n", text);
}

#[test]
fn report_reemits_an_existing_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = write_config(dir.path(), &format!("commands = [\"flow\"]\n{FREE_HEADER}[energy]\ne0 = 1.0\n"));
    assert!(run("run", &config, &out_dir).status.success());
    let before = fs::read_to_string(out_dir.join("bundle.json")).unwrap();
    fs::remove_file(out_dir.join("flow-trajectory.csv")).unwrap();
    assert!(run("report", &config, &out_dir).status.success());
    assert_eq!(fs::read_to_string(out_dir.join("bundle.json")).unwrap(), before);
    assert!(out_dir.join("flow-trajectory.csv").exists());
}

#[test]
fn failing_command_does_not_stop_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    // helmholtz has no source to work with.
    let text = format!("commands = [\"helmholtz\", \"flow\"]\n{FREE_HEADER}[energy]\ne0 = 1.0\n");
    let out = run("run", &write_config(dir.path(), &text), &out_dir);
    assert_eq!(out.status.code(), Some(1));
    let bundle = Bundle::from_json(&fs::read_to_string(out_dir.join("bundle.json")).unwrap()).unwrap();
    let status: Vec<Status> = bundle.results.iter().map(|r| r.status).collect();
    assert_eq!(status, [Status::Pass, Status::Error]);
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = scenario_file("free-1d.toml");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("run", &config, &a).status.success());
    let out = scl(&["run", "--config", config.to_str().unwrap(), "--out", b.to_str().unwrap(), "--threads", "2"]);
    assert!(out.status.success());
    let (la, lb) = (listing(&a), listing(&b));
    assert!(la.len() > 10);
    assert_eq!(la, lb);
}

#[test]
fn free_model_smoke_scenario_passes_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run("run", &scenario_file("free-1d.toml"), &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bundle = Bundle::from_json(&fs::read_to_string(out_dir.join("bundle.json")).unwrap()).unwrap();
    assert_eq!(bundle.results.len(), 9);
    assert!(bundle.all_passed());
}

#[test]
fn seed_flag_overrides_the_scenario_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("seed = 5\ncommands = []\n{FREE_HEADER}[energy]\ne0 = 1.0\n"));
    let out_dir = dir.path().join("out");
    let out = scl(&["run", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", "9"]);
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}
