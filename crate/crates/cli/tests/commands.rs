use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use driftguard_cli::manifest::RunManifest;
use tempfile::TempDir;

fn driftguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftguard"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = driftguard(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    driftguard(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn series_csv(values: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::from("value\n");
    for v in values {
        s.push_str(&format!("{v}\n"));
    }
    s
}

const SMALL_TRAIN: &str = r#"{ "b": 2, "train": { "hidden_dim": 4, "max_epochs": 30 } }"#;

#[test]
fn simulate_writes_one_file_per_cell_and_replays() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("one");
    ok(&["simulate", "--seed", "20000", "--out", p(&out)]);
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files.len(), 2, "{files:?}");
    let csv = std::fs::read(out.join("phi0.1_delta0_seed20000.csv")).unwrap();

    let manifest = RunManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.outputs.len(), 1);
    assert_eq!(manifest.seeds, vec![20000]);
    let again = dir.path().join("again");
    ok(&["replay", p(&out.join("manifest.json")), "--out", p(&again)]);
    assert_eq!(std::fs::read(again.join("phi0.1_delta0_seed20000.csv")).unwrap(), csv);

    let cfg = write(&dir, "grid.json", r#"{ "phis": [0.1, 0.5, 0.9], "deltas": [0, 0.25, 0.5, 0.75, 1, 1.5, 2] }"#);
    let grid = dir.path().join("grid");
    ok(&["simulate", "--config", p(&cfg), "--scale", "2", "--out", p(&grid)]);
    let m = RunManifest::load(&grid.join("manifest.json")).unwrap();
    assert_eq!(m.outputs.len(), 3 * 7 * 2);
}

#[test]
fn invalid_configs_exit_with_config_code() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.json", r#"{ "base": { "beta": 0.95 } }"#);
    assert_eq!(code(&["simulate", "--config", p(&bad), "--out", p(dir.path())]), 2);
    let typo = write(&dir, "typo.json", r#"{ "trian": {} }"#);
    let data = write(&dir, "d.csv", &series_csv((0..20).map(f64::from)));
    let out = driftguard(&["train", "--data", p(&data), "--config", p(&typo)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trian"));
    assert_eq!(code(&["monitor", "--seed", "3", "--bundle", "x", "--data", "y"]), 2);
}

#[test]
fn train_and_monitor_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "t.json", SMALL_TRAIN);
    let c = 4.0;
    let flat = write(&dir, "flat.csv", &series_csv(std::iter::repeat(c).take(60)));
    let bundle = dir.path().join("b.json");
    ok(&["train", "--data", p(&flat), "--config", p(&cfg), "--seed", "1", "--out", p(&bundle)]);
    let bytes = std::fs::read(&bundle).unwrap();
    let twin = dir.path().join("b2.json");
    ok(&["train", "--data", p(&flat), "--config", p(&cfg), "--seed", "1", "--out", p(&twin)]);
    assert_eq!(std::fs::read(&twin).unwrap(), bytes);

    let alarms = dir.path().join("a.csv");
    ok(&["monitor", "--bundle", p(&bundle), "--data", p(&flat), "--out", p(&alarms)]);
    let text = std::fs::read_to_string(&alarms).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 60 - 5);
    for row in rows {
        let f_hat: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((f_hat - c).abs() < 0.05 * c, "{row}");
    }

    let noisy: Vec<f64> = (0..80).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
    let data = write(&dir, "noisy.csv", &series_csv(noisy));
    ok(&["monitor", "--bundle", p(&bundle), "--data", p(&data), "--z", "1e9", "--out", p(&alarms)]);
    assert!(std::fs::read_to_string(&alarms).unwrap().lines().skip(1).all(|l| l.ends_with("true")));

    let mismatch = write(&dir, "w.json", r#"{ "window_len": 7 }"#);
    let out = driftguard(&["monitor", "--bundle", p(&bundle), "--data", p(&data), "--config", p(&mismatch)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window length"));
}

#[test]
fn data_problems_exit_with_data_code() {
    let dir = TempDir::new().unwrap();
    let short = write(&dir, "short.csv", &series_csv([1.0, 2.0, 3.0]));
    assert_eq!(code(&["train", "--data", p(&short), "--out", p(&dir.path().join("b.json"))]), 3);
    assert_eq!(code(&["train", "--data", p(&dir.path().join("missing.csv"))]), 3);
    let broken = write(&dir, "broken.csv", "value\n1.0\nabc\n");
    assert_eq!(code(&["train", "--data", p(&broken)]), 3);
}

#[test]
fn evaluate_counts_alarm_times() {
    let dir = TempDir::new().unwrap();
    let header = driftguard_core::chart::ALARM_HEADER;
    let row = |i: usize, ok: bool| format!("{i},0,0,1,-1,1,{ok}\n");
    // times 400 (pre-change) and 405
    let a = write(&dir, "a.csv", &format!("{header}\n{}{}{}", row(398, true), row(399, false), row(404, false)));
    let b = write(&dir, "b.csv", &format!("{header}\n{}", row(410, false)));
    let out = dir.path().join("r.csv");
    ok(&["evaluate", p(&a), p(&b), "--out", p(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "proposed,0,0,2,0.5,1,7,1");
}

#[test]
fn preprocess_commands() {
    let dir = TempDir::new().unwrap();
    let spectra = write(&dir, "s.csv", "a1,a2\n3\n1,1\n");
    let out = dir.path().join("at.csv");
    ok(&["preprocess", "at-summary", "--input", p(&spectra), "--out", p(&out)]);
    let vals: Vec<f64> = std::fs::read_to_string(&out).unwrap().lines().skip(1).map(|l| l.parse().unwrap()).collect();
    assert_eq!(vals, vec![6f64.sqrt(), (2.0f64 / 1.5).sqrt()]);

    let mut day = String::from("timestamp,value\n");
    for m in 0..1440 {
        day.push_str(&format!("2024-03-05T{:02}:{:02}:00Z,2.5\n", m / 60, m % 60));
    }
    let raw = write(&dir, "day.csv", &day);
    let out = dir.path().join("e.csv");
    ok(&["preprocess", "energy-resample", "--input", p(&raw), "--out", p(&out)]);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1 + 37);
}

#[test]
fn reproduce_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "r.json",
        r#"{ "phis": [0.5], "detectors": ["ablated_b", "rnn_residual"],
             "train": { "hidden_dim": 4, "max_epochs": 20 } }"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["reproduce", "table2", "--config", p(&cfg), "--scale", "2", "--jobs", "1", "--out", p(&a)]);
    ok(&["reproduce", "table2", "--config", p(&cfg), "--scale", "2", "--out", p(&b)]);
    let report = std::fs::read(a.join("report.csv")).unwrap();
    assert_eq!(report, std::fs::read(b.join("report.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&report).lines().count(), 1 + 2);
    let c = dir.path().join("c");
    ok(&["replay", p(&a.join("manifest.json")), "--out", p(&c)]);
    assert_eq!(report, std::fs::read(c.join("report.csv")).unwrap());
}
