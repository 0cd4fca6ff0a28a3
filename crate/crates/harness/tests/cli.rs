use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use resjoin_harness::bench::BenchReport;
use resjoin_harness::runner::METRICS_HEADER;

fn resjoin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resjoin")).args(args).output().expect("spawn resjoin")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn gen_then_run_writes_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("l3.csv");
    let out = dir.path().join("out");
    let g = resjoin(&["gen", "--query", "line3", "--graph", "er", "--nodes", "20", "--edges", "30", "--seed", "1", "--out", p(&stream)]);
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    assert_eq!(lines(&stream).len(), 90);

    let r = resjoin(&["run", "--query", "line3", "--stream", p(&stream), "--k", "5", "--checkpoint-every", "30", "--out", p(&out)]);
    assert!(r.status.success());
    let metrics = lines(&out.join("metrics.csv"));
    assert_eq!(metrics[0], METRICS_HEADER);
    let arrivals: Vec<&str> = metrics[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(arrivals, ["30", "60", "90"]);

    let samples = lines(&out.join("samples.csv"));
    assert_eq!(samples[0], "arrival,slot,a1,a2,a3,a4");
    for row in &samples[1..] {
        assert_eq!(row.split(',').count(), 6);
    }
    let last: Vec<&String> = samples.iter().filter(|l| l.starts_with("90,")).collect();
    assert!(last.len() <= 5);
    let sizes: Vec<&str> = metrics[1..].iter().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(sizes.last().unwrap().parse::<usize>().unwrap(), last.len());
}

#[test]
fn empty_stream_gives_one_empty_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("empty.csv");
    fs::write(&stream, "").unwrap();
    let out = dir.path().join("out");
    let r = resjoin(&["run", "--query", "line3", "--stream", p(&stream), "--out", p(&out)]);
    assert!(r.status.success());
    assert_eq!(lines(&out.join("samples.csv")).len(), 1);
    let metrics = lines(&out.join("metrics.csv"));
    assert_eq!(metrics.len(), 2);
    assert!(metrics[1].split(',').all(|f| f == "0"));
}

#[test]
fn malformed_stream_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("bad.csv");
    fs::write(&stream, "G1,1,2\nR9,3,4\n").unwrap();
    let r = resjoin(&["run", "--query", "line3", "--stream", p(&stream), "--out", p(&dir.path().join("out"))]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn unknown_query_is_an_error() {
    let r = resjoin(&["gen", "--query", "no_such_query", "--n", "3"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn frozen_weight_mutation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("two.csv");
    let g = resjoin(&["gen", "--query", "two_table", "--n", "40", "--domain", "4", "--seed", "3", "--out", p(&stream)]);
    assert!(g.status.success());
    let out = dir.path().join("out");
    let args = ["validate", "--query", "two_table", "--stream", p(&stream), "--k", "5", "--trials", "20000", "--out", p(&out)];
    let clean = resjoin(&args);
    assert_eq!(clean.status.code(), Some(0), "{}", String::from_utf8_lossy(&clean.stderr));
    let mut mutated = args.to_vec();
    mutated.extend(["--mutation", "freeze-weight"]);
    assert_eq!(resjoin(&mutated).status.code(), Some(1));
    let report = lines(&out.join("uniformity.csv"));
    assert!(report[0].starts_with("query,k,trials"));
}

#[test]
fn named_checks_are_listed_and_runnable() {
    let list = resjoin(&["validate", "--list"]);
    assert!(list.status.success());
    let text = String::from_utf8_lossy(&list.stdout);
    assert!(text.lines().count() >= 20);
    assert!(text.contains("index.bucket-size"));

    let dir = tempfile::tempdir().unwrap();
    let r = resjoin(&["validate", "--check", "index.bucket-size", "--seed", "5", "--out", p(dir.path())]);
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stdout).starts_with("PASS index.bucket-size"));
    let csv = lines(&dir.path().join("checks.csv"));
    assert_eq!(csv[0], "check,status,detail");
    assert!(csv[1].starts_with("index.bucket-size,PASS,"));

    assert_eq!(resjoin(&["validate", "--check", "nope"]).status.code(), Some(2));
}

#[test]
fn bench_writes_report_and_timing() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("l3.csv");
    resjoin(&["gen", "--query", "line3", "--graph", "er", "--nodes", "30", "--edges", "60", "--seed", "2", "--out", p(&stream)]);
    let out = dir.path().join("out");
    let r = resjoin(&["bench", "--query", "line3", "--stream", p(&stream), "--k", "10", "--out", p(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(lines(&out.join("bench.csv"))[0], BenchReport::HEADER);
    assert_eq!(lines(&out.join("timing.csv"))[0], BenchReport::TIMING_HEADER);
}

#[test]
fn rswp_prints_to_stdout_without_out() {
    let r = resjoin(&["rswp", "--n", "2000", "--k", "20", "--trials", "2", "--density", "0,1"]);
    assert!(r.status.success());
    let text = String::from_utf8_lossy(&r.stdout);
    assert_eq!(text.lines().count(), 3);
}
