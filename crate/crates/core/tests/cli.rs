use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn irlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irlink"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_scenario(dir: &TempDir, name: &str, json: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn simulate_lists_every_branch_and_a_summary_per_unit() {
    let out = irlink(&["simulate", "--tx", "2,4,1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(
        lines[0],
        "unit_id,branch_id,power_w,delay_spread_s,ps1_w,ps0_w,snr_db,ber"
    );
    let summaries = lines[1..]
        .iter()
        .filter(|l| l.split(',').nth(1).unwrap().starts_with("best:"))
        .count();
    assert_eq!(summaries, 8);
    assert_eq!(lines.len() - 1 - summaries, 32);
}

#[test]
fn missing_scenario_file_is_an_input_error() {
    let out = irlink(&["simulate", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn invalid_scenario_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let bad = write_scenario(&dir, "bad.json", r#"{"room": {"height_m": -3.0}}"#);
    assert_eq!(
        irlink(&["simulate", "--scenario", &bad]).status.code(),
        Some(2)
    );
    let unknown = write_scenario(&dir, "unknown.json", r#"{"rooom": {}}"#);
    assert_eq!(
        irlink(&["simulate", "--scenario", &unknown]).status.code(),
        Some(2)
    );
    assert_eq!(
        irlink(&["simulate", "--tx", "9,4,1"]).status.code(),
        Some(2)
    );
}

#[test]
fn steer_writes_one_record_per_probe() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("events.jsonl");
    let out = irlink(&["steer", "--tx", "2,4,1", "--log", log.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let records: Vec<Value> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 24);
    for iteration in 0..6 {
        let group: Vec<_> = records
            .iter()
            .filter(|r| r["iteration"] == iteration)
            .collect();
        assert_eq!(group.len(), 4);
        assert_eq!(group.iter().filter(|r| r["chosen"] == true).count(), 1);
    }
}

#[test]
fn failed_acquisition_exits_3_without_a_log() {
    let dir = TempDir::new().unwrap();
    let empty = write_scenario(&dir, "empty.json", r#"{"receivers": {"units": []}}"#);
    let log = dir.path().join("events.jsonl");
    let out = irlink(&[
        "steer",
        "--scenario",
        &empty,
        "--tx",
        "2,4,1",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!Path::new(&log).exists());
}

fn ir_rows(text: &str) -> Vec<(usize, u8, f64, f64)> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("branch_id,bounce_order,delay_s,power_w"));
    lines
        .map(|l| {
            let f: Vec<_> = l.split(',').collect();
            (
                f[0].parse().unwrap(),
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn ir_dump_respects_max_order_and_is_sorted() {
    let los = ir_rows(&stdout(&irlink(&[
        "ir",
        "--tx",
        "2,4,1",
        "--max-order",
        "0",
    ])));
    assert!(!los.is_empty());
    assert!(los.iter().all(|r| r.1 == 0));
    let full = ir_rows(&stdout(&irlink(&[
        "ir",
        "--tx",
        "2,4,1",
        "--max-order",
        "2",
    ])));
    assert!(full.iter().any(|r| r.1 == 2));
    for w in full.windows(2) {
        assert!(w[0].0 < w[1].0 || (w[0].0 == w[1].0 && w[0].2 <= w[1].2));
    }
}

#[test]
fn zero_reflectivity_dump_matches_line_of_sight() {
    let dir = TempDir::new().unwrap();
    let dark = write_scenario(
        &dir,
        "dark.json",
        r#"{"room": {"reflectivity_ceiling": 0.0, "reflectivity_walls": 0.0, "reflectivity_floor": 0.0}}"#,
    );
    let dark_full = irlink(&[
        "ir",
        "--scenario",
        &dark,
        "--tx",
        "1.5,5,1",
        "--max-order",
        "2",
    ])
    .stdout;
    let dark_los = irlink(&[
        "ir",
        "--scenario",
        &dark,
        "--tx",
        "1.5,5,1",
        "--max-order",
        "0",
    ])
    .stdout;
    assert!(!dark_los.is_empty());
    assert_eq!(dark_full, dark_los);
}

#[test]
fn sweep_emits_a_row_per_position_and_mode() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("sweep.csv");
    let out = irlink(&["sweep", "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], irlink::cli::SWEEP_HEADER);
    assert_eq!(lines.len(), 15);
    for row in &lines[1..] {
        let f: Vec<_> = row.split(',').collect();
        let expected = if f[2] == "steered" { "6" } else { "0" };
        assert_eq!(f[9], expected, "{row}");
    }
}
