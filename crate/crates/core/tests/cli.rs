use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
[run]
seed = 5

[fleet]
node_count = 20
horizon_hours = 720

[workload]
count = 20

[train]
epochs = 1
hidden_size = 8
holdout_hours = 168
window_stride = 12

[sim]
scales = 5, 10
";

fn vecsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vecsim")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let out = vecsim(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.ini");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// gen + train + compare into `out`.
fn pipeline(cfg: &Path, out: &Path) {
    run_ok(&["gen", "--config", s(cfg), "--out", s(out)]);
    run_ok(&["train", "--config", s(cfg), "--out", s(out)]);
    run_ok(&["compare", "--config", s(cfg), "--out", s(out)]);
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).count() - 1
}

#[test]
fn full_pipeline_writes_stamped_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    pipeline(&cfg, &out);

    assert_eq!(data_rows(&out.join("fleet.csv")), 20);
    assert_eq!(data_rows(&out.join("traces.csv")), 20 * 720);
    assert_eq!(data_rows(&out.join("workload.csv")), 20);
    assert_eq!(data_rows(&out.join("loss_curve.csv")), 1);
    assert_eq!(data_rows(&out.join("latency_by_scale.csv")), 2 * 3);

    let mut first_lines = std::collections::BTreeSet::new();
    for entry in fs::read_dir(&out).unwrap() {
        let path = entry.unwrap().path();
        let first = fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
        assert!(first.starts_with("# vecsim ") && first.contains(" config=") && first.ends_with(" seed=5"), "{path:?}: {first}");
        first_lines.insert(first);
    }
    assert_eq!(first_lines.len(), 1, "all files share one header");

    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    for k in ["[veca]", "[vela]", "[vecflex]"] {
        assert!(summary.contains(k));
    }
}

/// Summary figures recomputed from the raw records.csv columns.
fn recompute(records: &Path) -> Vec<(String, f64, f64, f64)> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(records).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (sched, fails, start, prod, lat) =
        (col("scheduler"), col("failures"), col("first_start_s"), col("productivity_rate"), col("search_latency_ms"));
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let mut names: Vec<String> = Vec::new();
    for r in &rows {
        if !names.iter().any(|n| n == &r[sched]) {
            names.push(r[sched].to_string());
        }
    }
    let avg = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    names
        .into_iter()
        .map(|n| {
            let mine: Vec<_> = rows.iter().filter(|r| r[sched] == *n).collect();
            let lat_mean = avg(mine.iter().filter(|r| !r[start].is_empty()).map(|r| r[lat].parse().unwrap()).collect());
            let p_all = avg(mine.iter().filter(|r| !r[prod].is_empty()).map(|r| r[prod].parse().unwrap()).collect());
            let p_rec = avg(
                mine.iter()
                    .filter(|r| !r[prod].is_empty() && &r[fails] != "0")
                    .map(|r| r[prod].parse().unwrap())
                    .collect(),
            );
            (n, lat_mean, p_all, p_rec)
        })
        .collect()
}

fn summary_value(summary: &str, sched: &str, key: &str) -> f64 {
    let block = summary.split(&format!("[{sched}]\n")).nth(1).unwrap();
    let line = block.lines().find(|l| l.starts_with(&format!("{key} "))).unwrap();
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn summary_matches_independent_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    pipeline(&cfg, &out);
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    let rows = recompute(&out.join("records.csv"));
    assert_eq!(rows.len(), 3);
    for (sched, lat, p_all, p_rec) in rows {
        assert!((summary_value(&summary, &sched, "mean_search_latency_ms") - lat).abs() < 1e-6);
        assert!((summary_value(&summary, &sched, "mean_productivity_completed") - p_all).abs() < 1e-6);
        let rec = summary_value(&summary, &sched, "mean_productivity_recovered");
        assert!((rec - p_rec).abs() < 1e-6 || (rec.is_nan() && p_rec.is_nan()));
    }

    let report = run_ok(&["report", "--config", s(&cfg), "--out", s(&out)]);
    let printed = String::from_utf8(report.stdout).unwrap();
    assert!(summary.starts_with(&printed), "report output differs from summary.txt");
}

#[test]
fn refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    run_ok(&["gen", "--config", s(&cfg), "--out", s(&out)]);
    let before = fs::read(out.join("fleet.csv")).unwrap();
    let again = vecsim(&["gen", "--config", s(&cfg), "--out", s(&out), "--seed", "6"]);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert_eq!(fs::read(out.join("fleet.csv")).unwrap(), before);
    run_ok(&["gen", "--config", s(&cfg), "--out", s(&out), "--seed", "6", "--force"]);
    assert_ne!(fs::read(out.join("fleet.csv")).unwrap(), before);
}

#[test]
fn config_errors_exit_one_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");

    let cfg = write_config(dir.path(), &SMALL.replace("[workload]\ncount = 20\n", "[workload]\n"));
    let r = vecsim(&["gen", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("workload.count"));

    let cfg = write_config(dir.path(), &SMALL.replace("epochs = 1", "epochs = one"));
    let r = vecsim(&["gen", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 12"), "{}", String::from_utf8_lossy(&r.stderr));

    let cfg = write_config(dir.path(), SMALL);
    let r = vecsim(&["simulate", "--config", s(&cfg), "--out", s(&out), "--scheduler", "round-robin"]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(vecsim(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let r = vecsim(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("x")), "--scheduler", "veca"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&cfg, &a);
    pipeline(&cfg, &b);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 13);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}
