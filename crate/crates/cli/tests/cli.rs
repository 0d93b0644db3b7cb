use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn lorafield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lorafield"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn airtime_reports_reference_intervals() {
    let o = lorafield(&["airtime", "--sf", "9", "--payload", "11"]);
    assert!(o.status.success());
    assert!(
        stdout(&o).contains("min_interval_s=20.58"),
        "{}",
        stdout(&o)
    );

    let o = lorafield(&["airtime", "--sf", "10", "--payload", "8"]);
    assert!(stdout(&o).contains("toa_s=0.37 min_interval_s=37.07"));
}

#[test]
fn airtime_rejects_invalid_parameters() {
    let o = lorafield(&["airtime", "--sf", "13", "--payload", "8"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("spreading factor"));

    let o = lorafield(&["airtime", "--sf", "9", "--payload", "250"]);
    assert_eq!(o.status.code(), Some(1));

    let o = lorafield(&["airtime", "--sf", "9", "--payload", "11", "--bw", "100000"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = lorafield(&["airtime", "--sf", "9", "--payload", "11", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
}

#[test]
fn help_exits_zero() {
    let o = lorafield(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("analyze"));
}

#[test]
fn plan_chooses_highest_feasible_sf() {
    let o = lorafield(&["plan", "--payload", "11", "--target", "30"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("chosen_sf=9"));

    let o = lorafield(&["plan", "--payload", "8", "--target", "60"]);
    assert!(stdout(&o).contains("chosen_sf=10"));
}

#[test]
fn plan_infeasible_is_a_verdict_not_an_error() {
    let o = lorafield(&["plan", "--payload", "11", "--target", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("infeasible"));
    assert!(out.contains("chosen_sf=none min_interval_s=6.17"), "{out}");
}

#[test]
fn plan_writes_csv_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("plan.csv");
    let o = lorafield(&[
        "plan",
        "--payload",
        "11",
        "--target",
        "30",
        "--csv",
        path(&csv),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sf,toa_s,min_interval_s,feasible,chosen");
    assert_eq!(lines.len(), 7);
    assert!(lines[3].starts_with("9,") && lines[3].ends_with("true,true"));
}

fn simulate(scenario: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--scenario", scenario, "--out", path(out)];
    args.extend_from_slice(extra);
    lorafield(&args)
}

fn analyze(log: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["analyze", "--log", path(log), "--out", path(out)];
    args.extend_from_slice(extra);
    lorafield(&args)
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

const REPORT_FILES: [&str; 4] = [
    "reach.csv",
    "gateway_share.csv",
    "interarrival.csv",
    "loss.csv",
];

#[test]
fn simulate_writes_outputs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = simulate("dom_with_gateway", out, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["uplink.jsonl", "ground_truth.csv", "gateways.csv"] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    assert!(read(&a, "ground_truth.csv")
        .starts_with("device_id,fcnt,tx_time_s,gateway_id,rssi_dbm,received\n"));
}

#[test]
fn closed_loop_without_shadowing_matches_ground_truth_share() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = simulate("port", &sim, &["--shadowing-sigma", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let rep = dir.path().join("rep");
    let registry = sim.join("gateways.csv");
    let o = analyze(
        &sim.join("uplink.jsonl"),
        &rep,
        &["--registry", path(&registry), "--target-interval", "60"],
    );
    assert!(o.status.success(), "{}", stderr(&o));

    // Count ground-truth receptions per gateway and compare with the share table.
    let truth = read(&sim, "ground_truth.csv");
    let mut heard = std::collections::BTreeMap::<String, u64>::new();
    let mut messages = std::collections::BTreeSet::new();
    for line in truth.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[5] == "true" {
            *heard.entry(f[3].to_string()).or_default() += 1;
            messages.insert((f[0].to_string(), f[2].to_string()));
        }
    }
    let share = read(&rep, "gateway_share.csv");
    for line in share.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let want = heard[f[0]] as f64 / messages.len() as f64;
        assert_eq!(f[2].parse::<f64>().unwrap(), want, "{line}");
    }
}

#[test]
fn shuffled_log_gives_identical_report() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert!(simulate("dom_without_gateway", &sim, &[]).status.success());
    let log = read(&sim, "uplink.jsonl");
    let mut lines: Vec<&str> = log.lines().collect();
    lines.shuffle(&mut StdRng::seed_from_u64(3));
    let shuffled = dir.path().join("shuffled.jsonl");
    fs::write(&shuffled, lines.join("\n") + "\n").unwrap();

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(analyze(&sim.join("uplink.jsonl"), &a, &[]).status.success());
    assert!(analyze(&shuffled, &b, &[]).status.success());
    for name in REPORT_FILES {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
}

#[test]
fn malformed_lines_are_reported_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert!(simulate("dom_with_gateway", &sim, &[]).status.success());
    let log = read(&sim, "uplink.jsonl");
    let lines: Vec<&str> = log.lines().collect();
    let mut damaged = Vec::new();
    let mut broken = 0;
    for (i, line) in lines.iter().enumerate() {
        if i % 20 == 7 {
            damaged.push(&line[..line.len() / 2]);
            broken += 1;
        } else {
            damaged.push(line);
        }
    }
    let path_damaged = dir.path().join("damaged.jsonl");
    fs::write(&path_damaged, damaged.join("\n")).unwrap();

    let o = analyze(&path_damaged, &dir.path().join("rep"), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let diagnostics = stderr(&o).lines().filter(|l| l.contains("line ")).count();
    assert_eq!(diagnostics, broken);
    assert!(stdout(&o).contains(&format!("records={}", lines.len() - broken)));
}

#[test]
fn analyze_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = analyze(
        &dir.path().join("missing.jsonl"),
        &dir.path().join("rep"),
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.jsonl"));

    let garbage = dir.path().join("garbage.jsonl");
    fs::write(&garbage, "not json\n{}\n").unwrap();
    let o = analyze(&garbage, &dir.path().join("rep"), &[]);
    assert_eq!(o.status.code(), Some(1));

    let o = analyze(
        &garbage,
        &dir.path().join("rep"),
        &["--target-interval", "0"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate("no_such_scenario", &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        "seed = 1\nduration_s = 10\ngateways = []\ndevices = []\nunknown = 3\n",
    )
    .unwrap();
    let o = simulate(path(&bad), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown"), "{}", stderr(&o));

    let short = dir.path().join("short.toml");
    fs::write(
        &short,
        r#"seed = 1
duration_s = 600

[[gateways]]
gateway_id = "gw"
position = { lat_deg = 53.55, lon_deg = 9.99 }

[[devices]]
device_id = "d"
position = { lat_deg = 53.55, lon_deg = 9.99 }
app_payload_bytes = 11
interval_s = 10
sf = 9
"#,
    )
    .unwrap();
    let o = simulate(path(&short), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("duty-cycle minimum"), "{}", stderr(&o));
}
