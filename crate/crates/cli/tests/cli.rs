use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_busarrival"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// A small synthetic log run through ingest, train and calibrate.
    fn new() -> Self {
        let f = Fixture {
            dir: TempDir::new().unwrap(),
        };
        let raw = f.path("raw.csv");
        let trav = f.path("trav.csv");
        let model = f.path("model.json");
        let report = f.path("report.json");
        let out = run(&[
            "synth",
            "--out",
            p(&raw),
            "--days",
            "3",
            "--trips-per-day",
            "20",
            "--seed",
            "5",
        ]);
        assert_eq!(code(&out), 0, "{out:?}");
        let out = run(&["ingest", p(&raw), "--out", p(&trav)]);
        assert_eq!(code(&out), 0, "{out:?}");
        let out = run(&["train", p(&trav), "--out", p(&model), "--n-estimators", "40"]);
        assert_eq!(code(&out), 0, "{out:?}");
        let out = run(&["calibrate", p(&trav), "--model", p(&model), "--out", p(&report)]);
        assert!(code(&out) <= 1, "{out:?}");
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["ingest", "train", "calibrate", "predict", "replay", "synth"] {
        let out = run(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub}");
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("--config") && text.contains("--route"), "{sub}: {text}");
    }
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn missing_route_config_is_fatal() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.csv");
    fs::write(&raw, "").unwrap();
    let out = run(&[
        "--route",
        p(&dir.path().join("absent.toml")),
        "ingest",
        p(&raw),
        "--out",
        p(&dir.path().join("t.csv")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.toml"));
}

#[test]
fn empty_log_gives_empty_table() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.csv");
    let trav = dir.path().join("t.csv");
    fs::write(&raw, "").unwrap();
    let out = run(&["ingest", p(&raw), "--out", p(&trav)]);
    assert_eq!(code(&out), 0, "{out:?}");
    let text = fs::read_to_string(&trav).unwrap();
    assert_eq!(text.lines().count(), 1, "header only: {text}");
    assert!(dir.path().join("t.diagnostics.csv").exists());
}

#[test]
fn rejected_rows_exit_with_anomaly_code() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.csv");
    fs::write(
        &raw,
        "Vehicle No,Date and Time,Latitude,Longitude,Odometer,Speed\n\
         KA-06-F-0830,02-11-2021 15:14:20,not-a-number,77.1,5,10\n",
    )
    .unwrap();
    let out = run(&["ingest", p(&raw), "--out", p(&dir.path().join("t.csv"))]);
    assert_eq!(code(&out), 1, "{out:?}");
    let diag = fs::read_to_string(dir.path().join("t.diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 2);
}

#[test]
fn unreadable_traversal_table_is_fatal() {
    let dir = TempDir::new().unwrap();
    let trav = dir.path().join("t.csv");
    fs::write(&trav, "this,is,not\na,traversal,table\n").unwrap();
    let out = run(&["train", p(&trav), "--out", p(&dir.path().join("m.json"))]);
    assert_eq!(code(&out), 2);
    let out = run(&[
        "train",
        p(&dir.path().join("absent.csv")),
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn empty_training_split_is_fatal() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.csv");
    let trav = dir.path().join("t.csv");
    fs::write(&raw, "").unwrap();
    assert_eq!(code(&run(&["ingest", p(&raw), "--out", p(&trav)])), 0);
    let out = run(&["train", p(&trav), "--out", p(&dir.path().join("m.json"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn zero_trees_gives_mean_only_model() {
    let f = Fixture::new();
    let model = f.path("mean.json");
    let out = run(&[
        "train",
        p(&f.path("trav.csv")),
        "--out",
        p(&model),
        "--n-estimators",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let json: String = fs::read_to_string(&model).unwrap();
    assert!(json.contains("\"trees\": []"), "{json}");
    let log = fs::read_to_string(f.path("mean.training.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn flags_override_config_file() {
    let f = Fixture::new();
    let cfg = f.path("pipeline.toml");
    fs::write(&cfg, "[train]\nn_estimators = 3\nrng_seed = 9\n").unwrap();
    let from_file = f.path("file.json");
    let from_flag = f.path("flag.json");
    let trav = f.path("trav.csv");
    assert_eq!(
        code(&run(&["--config", p(&cfg), "train", p(&trav), "--out", p(&from_file)])),
        0
    );
    assert_eq!(
        code(&run(&[
            "--config",
            p(&cfg),
            "train",
            p(&trav),
            "--out",
            p(&from_flag),
            "--n-estimators",
            "2"
        ])),
        0
    );
    let count = |path: &Path| fs::read_to_string(path).unwrap().matches("\"columns\"").count();
    assert_eq!(count(&from_file), 3);
    assert_eq!(count(&from_flag), 2);

    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(
        code(&run(&["--config", p(&cfg), "train", p(&trav), "--out", p(&from_file)])),
        2
    );
}

#[test]
fn predict_remaining_sections() {
    let f = Fixture::new();
    let (model, report) = (f.path("model.json"), f.path("report.json"));
    let base = ["predict", "--model", p(&model), "--report", p(&report)];
    let trav = f.path("trav.csv");

    let out = bin()
        .args(base)
        .args(["--store", p(&trav), "--at", "10:00:00", "--from-section", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    assert!(rows[0].starts_with("1,2021-03-03T10:00:00.000,"), "{}", rows[0]);
    assert!(
        rows.iter().all(|r| r.contains(",false,")),
        "probe data for every section: {text}"
    );

    let out = bin()
        .args(base)
        .args([
            "--store",
            p(&trav),
            "--at",
            "2021-03-03T10:00:00",
            "--from-section",
            "9",
        ])
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);

    let empty = f.path("empty.csv");
    fs::write(&empty, "").unwrap();
    let out_file = f.path("pred.csv");
    let out = bin()
        .args(base)
        .args([
            "--store",
            p(&empty),
            "--at",
            "15:14:00",
            "--date",
            "2021-03-03",
            "--from-section",
            "4",
        ])
        .args(["--out", p(&out_file)])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{out:?}");
    let text = fs::read_to_string(&out_file).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().skip(1).all(|r| r.contains(",true,")), "{text}");

    let out = bin()
        .args(base)
        .args(["--store", p(&trav), "--at", "15:14:00", "--from-section", "10"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let out = bin()
        .args(base)
        .args(["--store", p(&empty), "--at", "15:14:00", "--from-section", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "time-only instant with no date");
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = Fixture::new();
    let b = Fixture::new();
    for f in [&a, &b] {
        let out = run(&[
            "replay",
            p(&f.path("trav.csv")),
            "--model",
            p(&f.path("model.json")),
            "--report",
            p(&f.path("report.json")),
            "--out-dir",
            p(&f.path("reports")),
        ]);
        assert!(code(&out) <= 1, "{out:?}");
    }
    for name in [
        "raw.csv",
        "trav.csv",
        "trav.diagnostics.csv",
        "model.json",
        "model.training.csv",
        "report.json",
        "reports/sections.csv",
        "reports/trips.csv",
        "reports/summary.csv",
    ] {
        let x = fs::read(a.path(name)).unwrap();
        assert!(!x.is_empty(), "{name}");
        assert_eq!(x, fs::read(b.path(name)).unwrap(), "{name}");
    }
    let summary = fs::read_to_string(a.path("reports/summary.csv")).unwrap();
    assert!(summary.starts_with("class,model,stratum,n,r2,mae_s\n"));
    for key in ["SIS,hybrid,probe,", "NS,hybrid,probe,", "ALL,forest,all,"] {
        assert!(summary.contains(key), "{key}: {summary}");
    }
}
