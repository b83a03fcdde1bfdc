use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use fbst_cli::ingest;
use fbst_core::models::TwoGroupData;
use serde_json::Value;

fn fbst() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fbst"))
}

fn run_with_stdin(args: &[&str], stdin: &[u8]) -> Output {
    let mut child = fbst()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin).unwrap();
    child.wait_with_output().unwrap()
}

fn simulate(seed: &str) -> Vec<u8> {
    let out = fbst()
        .args([
            "simulate",
            "two-groups",
            "--n",
            "50",
            "--mu",
            "0,0.8",
            "--sd",
            "1.5,3.2",
            "--seed",
            seed,
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_pipes_into_ttest() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("out.json");
    let out = run_with_stdin(
        &["ttest", "--stdin", "--seed", "7", "--report", report.to_str().unwrap()],
        &simulate("7"),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&report);
    let te: f64 = doc["input_metadata"]["true_effect"].as_str().unwrap().parse().unwrap();
    assert!(
        (te + 0.8 / ((1.5f64 * 1.5 + 3.2 * 3.2) / 2.0).sqrt()).abs() < 1e-12,
        "{te}"
    );
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["config"]["subcommand"], "ttest");
    assert_eq!(doc["config"]["seed"], 7);
    let ev = doc["evalues"][0]["evalue"]["ev_against"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ev));
}

#[test]
fn report_goes_to_stdout_without_a_path() {
    let out = run_with_stdin(&["ttest", "--stdin"], &simulate("1"));
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(doc["bayes_factor"]["bf01"].as_f64().unwrap() > 0.0);
    assert!(doc["notes"][0].as_str().unwrap().contains("chi-square"));
}

#[test]
fn same_config_gives_identical_reports_except_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    std::fs::write(&data, simulate("11")).unwrap();
    let report = dir.path().join("r.json");
    let mut texts = Vec::new();
    for _ in 0..2 {
        let status = fbst()
            .args([
                "ttest",
                "--data",
                data.to_str().unwrap(),
                "--cross-check",
                "--iterations",
                "3000",
                "--seed",
                "5",
            ])
            .args(["--report", report.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(status.success());
        texts.push(std::fs::read_to_string(&report).unwrap());
    }
    let strip = |t: &str| {
        t.lines()
            .filter(|l| !l.trim_start().starts_with("\"timestamp\""))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&texts[0]), strip(&texts[1]));
}

#[test]
fn verify_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = run_with_stdin(
        &[
            "ttest",
            "--stdin",
            "--cross-check",
            "--iterations",
            "3000",
            "--seed",
            "3",
            "--report",
            report.to_str().unwrap(),
        ],
        &simulate("3"),
    );
    assert!(out.status.success());
    let ok = fbst().args(["--verify", report.to_str().unwrap()]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let mut doc = read_json(&report);
    let ev = doc["evalues"][0]["evalue"]["ev_against"].as_f64().unwrap();
    doc["evalues"][0]["evalue"]["ev_against"] = serde_json::json!(ev + 1e-15);
    std::fs::write(&report, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    let bad = fbst().args(["--verify", report.to_str().unwrap()]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("/evalues/0/evalue/ev_against"));
}

#[test]
fn verify_rejects_changed_input_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let report = dir.path().join("r.json");
    std::fs::write(&data, simulate("4")).unwrap();
    let status = fbst()
        .args([
            "ttest",
            "--data",
            data.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    std::fs::write(&data, simulate("5")).unwrap();
    let out = fbst().args(["--verify", report.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

fn assert_well_formed_plot(path: &Path, expect_tangential: bool) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("<?xml version=\"1.0\""));
    let doc = roxmltree::Document::parse(&text).expect("well-formed XML");
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    assert_eq!(root.attribute("version"), Some("1.1"));
    let classes: Vec<&str> = doc.descendants().filter_map(|n| n.attribute("class")).collect();
    assert!(classes.contains(&"complement"));
    assert_eq!(classes.contains(&"tangential"), expect_tangential);
    assert!(doc.descendants().any(|n| n.has_tag_name("circle")));
    assert!(doc.descendants().any(|n| n.attribute("stroke-dasharray").is_some()));
    text
}

/// Two groups whose pooled t statistic is exactly `t` (unit pooled sd).
fn groups_with_t(t: f64, n1: usize, n2: usize) -> String {
    let standardized = |n: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64 + 0.5 * (i % 3) as f64).collect();
        let m = raw.iter().sum::<f64>() / n as f64;
        let sd = (raw.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        raw.iter().map(|v| (v - m) / sd).collect()
    };
    let shift = t * (1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt();
    let g1: Vec<f64> = standardized(n1).iter().map(|z| z + shift).collect();
    let data = TwoGroupData::with_labels(g1, standardized(n2), ["cw".into(), "ccw".into()]).unwrap();
    ingest::two_groups_csv(&data, &BTreeMap::new())
}

#[test]
fn kitchen_rolls_summary_plot_labels_masses() {
    let dir = tempfile::tempdir().unwrap();
    let plot = dir.path().join("k.svg");
    let report = dir.path().join("k.json");
    let csv = groups_with_t(-0.7514, 48, 54);
    let out = run_with_stdin(
        &[
            "ttest",
            "--stdin",
            "--groups",
            "cw,ccw",
            "--report",
            report.to_str().unwrap(),
            "--plot",
            plot.to_str().unwrap(),
        ],
        csv.as_bytes(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&report);
    let t = doc["data_summary"]["t_obs"].as_f64().unwrap();
    assert!((t + 0.7514).abs() < 1e-9, "{t}");
    let text = assert_well_formed_plot(&plot, true);
    let label = |prefix: &str| -> f64 {
        let start = text.find(prefix).unwrap() + prefix.len();
        text[start..start + 5].parse().unwrap()
    };
    let (tangential, complement) = (label("tangential set s &gt; s*: "), label("complement s ≤ s*: "));
    assert_eq!(
        ((tangential * 100.0).round(), (complement * 100.0).round()),
        (57.0, 43.0)
    );
}

#[test]
fn evalue_from_draws_with_plot() {
    let dir = tempfile::tempdir().unwrap();
    let draws = dir.path().join("draws.csv");
    let x = fbst_core::DistributionSpec::normal(0.5, 0.2)
        .unwrap()
        .sample(20_000, 8)
        .unwrap();
    let mut csv = String::from("chain,theta\n");
    for (i, v) in x.iter().enumerate() {
        csv.push_str(&format!("{},{v}\n", 1 + i / 10_000));
    }
    std::fs::write(&draws, csv).unwrap();
    let plot = dir.path().join("e.svg");
    let out = fbst()
        .args([
            "evalue",
            "--data",
            draws.to_str().unwrap(),
            "--param",
            "theta",
            "--theta0",
            "0",
            "--dims",
            "1,0",
        ])
        .args(["--plot", plot.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let ev = doc["evalues"][0]["evalue"]["ev_against"].as_f64().unwrap();
    assert!((ev - 0.98758).abs() <= 0.015, "{ev}");
    assert_eq!(doc["evalues"][0]["evalue"]["method"], "samples");
    assert_eq!(doc["diagnostics"]["parameters"][0], "theta");
    assert_well_formed_plot(&plot, true);
}

#[test]
fn uniform_draws_plot_has_no_tangential_region() {
    let dir = tempfile::tempdir().unwrap();
    let draws = dir.path().join("u.csv");
    let plot = dir.path().join("u.svg");
    // a wide interval null covering every draw: nothing exceeds s*
    let x = fbst_core::DistributionSpec::normal(0.0, 1.0)
        .unwrap()
        .sample(2000, 1)
        .unwrap();
    let body: String = x.iter().map(|v| format!("{v}\n")).collect();
    std::fs::write(&draws, format!("theta\n{body}")).unwrap();
    let out = fbst()
        .args([
            "evalue",
            "--data",
            draws.to_str().unwrap(),
            "--param",
            "theta",
            "--interval",
            "-10,10",
            "--dims",
            "1,0",
        ])
        .args(["--plot", plot.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = assert_well_formed_plot(&plot, false);
    assert!(text.contains("tangential set s &gt; s*: 0.000"));
}

#[test]
fn regress_writes_report_draws_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("reg.csv");
    let mut csv = String::from("y;x;grp\n");
    for i in 0..80 {
        let x = (i as f64 * 0.37).sin() * 2.0;
        let g = if i % 3 == 0 { "b" } else { "a" };
        let noise = ((i * 7919 % 97) as f64 / 97.0 - 0.5) * 2.0;
        let y = 1.0 + 0.7 * x + if g == "b" { 0.5 } else { 0.0 } + noise;
        csv.push_str(&format!("{y};{x};{g}\n"));
    }
    std::fs::write(&data, csv).unwrap();
    let (report, draws, plots) = (
        dir.path().join("r.json"),
        dir.path().join("d.csv"),
        dir.path().join("plots"),
    );
    let out = fbst()
        .args([
            "regress",
            "--data",
            data.to_str().unwrap(),
            "--formula",
            "y ~ x + grp",
            "--seed",
            "2",
        ])
        .args(["--report", report.to_str().unwrap(), "--draws", draws.to_str().unwrap()])
        .args(["--plot", plots.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&report);
    let names: Vec<&str> = doc["evalues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["parameter"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["x", "grpb"]);
    assert_eq!(doc["evalues"][0]["evalue"]["dims"]["k"], 4);
    assert_eq!(doc["evalues"][0]["evalue"]["dims"]["h"], 3);
    assert!(doc["evalues"][0]["evalue"]["ev_against"].as_f64().unwrap() > 0.99);
    assert_eq!(doc["summaries"].as_array().unwrap().len(), 4);
    let header = std::fs::read_to_string(&draws)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(header, "chain,(Intercept),x,grpb,sigma");
    assert_well_formed_plot(&plots.join("x.svg"), true);
    assert!(plots.join("grpb.svg").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, simulate("9")).unwrap();
    let d = data.to_str().unwrap();

    // validation: unknown column, error recorded in the report
    let report = dir.path().join("err.json");
    let out = fbst()
        .args([
            "ttest",
            "--data",
            d,
            "--value-col",
            "score",
            "--report",
            report.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let doc = read_json(&report);
    assert_eq!(doc["error"]["kind"], "validation");
    assert_eq!(doc["error"]["exit_code"], 1);
    assert!(doc["error"]["message"].as_str().unwrap().contains("score"));

    // validation: the cross-check is stochastic and needs a seed
    let out = fbst().args(["ttest", "--data", d, "--cross-check"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // validation: unparseable cell
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "group,value\na,1\na,2\nb,x3\nb,4\n").unwrap();
    let out = fbst()
        .args(["ttest", "--data", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(doc["error"]["message"].as_str().unwrap().contains("x3"));

    // convergence: an unreachable ESS floor
    let reg = dir.path().join("reg.csv");
    std::fs::write(&reg, "y,x\n1,0.1\n2,0.5\n1.5,0.2\n3,1.1\n2.2,0.9\n0.7,-0.3\n").unwrap();
    let report = dir.path().join("conv.json");
    let out = fbst()
        .args([
            "regress",
            "--data",
            reg.to_str().unwrap(),
            "--formula",
            "y ~ x",
            "--seed",
            "1",
        ])
        .args(["--iterations", "300", "--warmup", "100", "--min-ess-per-chain", "1e9"])
        .args(["--report", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&report);
    assert_eq!(doc["error"]["kind"], "convergence");
    assert!(doc["diagnostics"]["rhat"].is_array());

    // missing mandatory seed is rejected by argument parsing
    let out = fbst()
        .args(["simulate", "two-groups", "--n", "5", "--mu", "0,1", "--sd", "1,1"])
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn ingestion_round_trip_preserves_summaries() {
    let text = String::from_utf8(simulate("21")).unwrap();
    let table = ingest::parse_table(&text).unwrap();
    let data = ingest::two_groups(&table, "group", "value", None).unwrap();
    let written = ingest::two_groups_csv(&data, &table.metadata);
    let again = ingest::two_groups(&ingest::parse_table(&written).unwrap(), "group", "value", None).unwrap();
    assert_eq!(data.summary(), again.summary());
    assert_eq!(written, text);
}

#[test]
fn semicolon_files_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("s.csv");
    let mut csv = String::from("\"rotation\";\"score\"\n");
    for i in 0..12 {
        csv.push_str(&format!(
            "cw;{}\nccw;{}\n",
            1.5 + (i % 4) as f64 * 0.5,
            3.0 + (i % 5) as f64 * 0.4
        ));
    }
    std::fs::write(&data, csv).unwrap();
    let out = fbst()
        .args([
            "ttest",
            "--data",
            data.to_str().unwrap(),
            "--group-col",
            "rotation",
            "--value-col",
            "score",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["data_summary"]["labels"][0], "ccw");
    assert_eq!(doc["data_summary"]["n1"], 12);
}
