//! End-to-end tests driving the `crnpid` binary: exit codes, CSV shapes,
//! experiment artifacts, and verification summaries.

use std::fs;
use std::process::{Command, Output};

fn crnpid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crnpid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(output: &Output) -> String {
    assert!(
        output.status.success(),
        "expected success, got {:?}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout.clone()).expect("utf-8 stdout")
}

/// Returns the value of `species` in the last CSV row.
fn last_value(csv: &str, species: &str) -> f64 {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    let column = header
        .iter()
        .position(|name| *name == species)
        .unwrap_or_else(|| panic!("no column {species} in {header:?}"));
    let last = lines.last().expect("at least one data row");
    last.split(',').nth(column).expect("full row").parse().expect("numeric cell")
}

#[test]
fn simulate_builtin_plant_reaches_its_fixed_point() {
    let output = crnpid(&["simulate", "gene-expression", "--t-end", "50"]);
    let csv = stdout_of(&output);
    assert!(csv.starts_with("time,"), "header first: {csv:.40}");
    let fixed_point = (5.0f64.sqrt() - 1.0) / 2.0;
    assert!((last_value(&csv, "Pro") - fixed_point).abs() < 1e-4);
}

#[test]
fn simulate_rejects_malformed_files_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.crn");
    fs::write(&path, "A -> B\n").unwrap();
    let output = crnpid(&["simulate", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 1"), "stderr: {stderr}");
}

#[test]
fn simulate_accepts_an_empty_network() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.crn");
    fs::write(&path, "").unwrap();
    let output = crnpid(&["simulate", path.to_str().unwrap(), "--t-end", "1"]);
    let csv = stdout_of(&output);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("time"));
    assert_eq!(lines.next(), Some("0"));
}

#[test]
fn simulate_reports_numerical_failure_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("explosive.crn");
    fs::write(&path, "x ->{1000000000} x + x\ninit x = 1\n").unwrap();
    let output = crnpid(&["simulate", path.to_str().unwrap(), "--t-end", "100"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(!output.stderr.is_empty());
}

#[test]
fn simulate_writes_to_a_file_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let output = crnpid(&[
        "simulate",
        "gene-expression",
        "--t-end",
        "10",
        "--grid-points",
        "11",
        "--output",
        out.to_str().unwrap(),
    ]);
    stdout_of(&output);
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 12, "header plus 11 grid rows");
}

#[test]
fn compose_emits_the_full_loop_as_parseable_text() {
    let output = crnpid(&["compose"]);
    let text = stdout_of(&output);
    for needle in ["U+", "R+", "E+", "mRNA", "Pro"] {
        assert!(text.contains(needle), "missing {needle} in loop text");
    }
    // The printed loop must round-trip through the fmt subcommand.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loop.crn");
    fs::write(&path, &text).unwrap();
    let reformatted = stdout_of(&crnpid(&["fmt", path.to_str().unwrap()]));
    assert_eq!(text, reformatted);
}

#[test]
fn compose_honors_gain_flags() {
    let output = crnpid(&["compose", "--ki", "0.5"]);
    let text = stdout_of(&output);
    assert!(
        text.contains("E+ ->{0.5} E+ + I+"),
        "integral production should carry the gain: {text}"
    );
}

#[test]
fn compose_accepts_a_config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("loop.conf");
    fs::write(
        &config,
        "# tracking setup\nreference = constant\nlevel = 4\nki = 0.9\n",
    )
    .unwrap();
    let text = stdout_of(&crnpid(&[
        "compose",
        "--config",
        config.to_str().unwrap(),
        "--ki",
        "0.25",
    ]));
    assert!(text.contains("->{4} R+"), "config level should apply: {text}");
    assert!(
        text.contains("E+ ->{0.25} E+ + I+"),
        "the flag should beat the config file: {text}"
    );
}

#[test]
fn compose_rejects_bad_config_lines() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("loop.conf");
    fs::write(&config, "plant eq gene-expression\n").unwrap();
    let output = crnpid(&["compose", "--config", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("key = value"), "stderr: {stderr}");
}

/// Reads `final_err` for one controller and window out of a report CSV.
fn report_final_err(report: &str, controller: &str, window: &str) -> f64 {
    for line in report.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells[0] == controller && cells[1] == window {
            return cells[4].parse().expect("numeric final_err");
        }
    }
    panic!("no {controller}/{window} row in report:\n{report}");
}

#[test]
fn experiment_tracks_a_constant_reference_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let output = crnpid(&["experiment", "--out", out.to_str().unwrap()]);
    let summary = stdout_of(&output);
    assert!(summary.contains("integral identity drift"));

    for name in ["pi.csv", "pid.csv", "report.csv", "summary.txt"] {
        assert!(out.join(name).is_file(), "missing artifact {name}");
    }
    assert_eq!(summary, fs::read_to_string(out.join("summary.txt")).unwrap());

    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report_final_err(&report, "pi", "steady").abs() < 0.5);
    assert!(report_final_err(&report, "pid", "steady").abs() < 0.5);

    let pi_csv = fs::read_to_string(out.join("pi.csv")).unwrap();
    assert!(pi_csv.starts_with("time,"));
    assert!(pi_csv.lines().count() <= 2002, "trajectory CSVs are decimated");
    let last = pi_csv.lines().last().unwrap();
    assert!(last.starts_with("200,"), "last sample survives decimation: {last}");
}

#[test]
fn experiment_supports_output_sequestration_actuation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let output = crnpid(&[
        "experiment",
        "--actuation",
        "annihilate-output",
        "--out",
        out.to_str().unwrap(),
    ]);
    stdout_of(&output);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report_final_err(&report, "pi", "steady").abs() < 0.5);
    assert!(report_final_err(&report, "pid", "steady").abs() < 0.5);
}

#[test]
fn experiment_rejects_unknown_actuations() {
    let output = crnpid(&["experiment", "--actuation", "teleport"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("teleport"), "stderr: {stderr}");
}

#[test]
fn experiment_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        stdout_of(&crnpid(&["experiment", "--out", out.to_str().unwrap()]));
    }
    for name in ["pi.csv", "pid.csv", "report.csv", "summary.txt"] {
        assert_eq!(
            fs::read_to_string(a.join(name)).unwrap(),
            fs::read_to_string(b.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn verify_derivative_reports_a_decade_of_improvement() {
    let output = crnpid(&["verify", "derivative", "--scales", "1,10"]);
    let text = stdout_of(&output);
    assert!(text.contains("monotone decrease (5% slack): yes"), "{text}");
}

#[test]
fn verify_with_a_single_scale_makes_no_monotonicity_claim() {
    let output = crnpid(&["verify", "derivative", "--scales", "1"]);
    let text = stdout_of(&output);
    assert_eq!(text.lines().count(), 3, "title, header, one row: {text}");
    assert!(!text.contains("monotone"), "{text}");
}

#[test]
fn verify_proportional_writes_an_optional_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("ladder.csv");
    let output = crnpid(&[
        "verify",
        "proportional",
        "--csv",
        csv_path.to_str().unwrap(),
    ]);
    let text = stdout_of(&output);
    assert!(text.contains("monotone decrease (5% slack): yes"), "{text}");
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 4, "header plus three scales: {csv}");
}

#[test]
fn fmt_canonicalizes_in_place_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("messy.crn");
    fs::write(&path, "  A  +  B   ->{ 2.50 }  C\n\n# done\ninit  A = 3\n").unwrap();
    let once = stdout_of(&crnpid(&["fmt", path.to_str().unwrap()]));
    assert!(once.contains("A + B ->{2.5} C"));

    let output = crnpid(&["fmt", path.to_str().unwrap(), "--in-place"]);
    stdout_of(&output);
    assert_eq!(fs::read_to_string(&path).unwrap(), once);
    let twice = stdout_of(&crnpid(&["fmt", path.to_str().unwrap()]));
    assert_eq!(once, twice);
}
