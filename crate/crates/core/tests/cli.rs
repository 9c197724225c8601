use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recpoison"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Least rated item in a rating file.
fn coldest(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let mut counts = std::collections::BTreeMap::new();
    for line in text.lines() {
        *counts.entry(line.split_whitespace().nth(1).unwrap().to_string()).or_insert(0) += 1;
    }
    counts.into_iter().min_by_key(|(_, c)| *c).unwrap().0
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "2", "--users", "60", "--items", "30", "--density", "0.15", "-o", "data.txt"]);
    ok(d, &["ingest", "data.txt", "-o", "clean.txt"]);
    assert_eq!(std::fs::read(d.join("data.txt")).unwrap(), std::fs::read(d.join("clean.txt")).unwrap());
    let t = coldest(&d.join("data.txt"));

    let train = ok(d, &["train", "data.txt", "--d", "3", "--polish", "50", "-o", "m.ckpt"]);
    assert!(train.contains("stationarity"));
    let inf = ok(d, &["influence", "data.txt", "--model", "m.ckpt", "--target", &t, "--delta", "4", "--weights"]);
    assert!(inf.contains("[user_influence]") && inf.contains("[weights]"));
    assert_eq!(inf.split("[selected]\n").nth(1).unwrap().lines().take_while(|l| !l.starts_with('[')).count(), 4);
    let graph = ok(d, &["influence", "data.txt", "--target", &t, "--recommender", "graph", "--taylor", "3"]);
    assert!(graph.contains("flag taylor resolvent order 3"));

    ok(d, &[
        "attack", "data.txt", "--target", &t, "-m", "3", "-n", "5", "--max-iter", "10", "--delta", "10", "-o", "fakes.txt",
        "--manifest", "run.txt",
    ]);
    let manifest = std::fs::read_to_string(d.join("run.txt")).unwrap();
    assert!(manifest.contains("variant = s-tna-inf") && manifest.contains("loss.2 = "));
    ok(d, &["inject", "data.txt", "--profiles", "fakes.txt", "-o", "poisoned.txt"]);

    let hr = ok(d, &["evaluate", "poisoned.txt", "--target", &t, "--profiles", "fakes.txt"]);
    let row: Vec<&str> = hr.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[2], "60");
    let v: f64 = row[3].parse().unwrap();
    assert!((0.0..=1.0).contains(&v));

    let det = ok(d, &[
        "detect", "poisoned.txt", "--profiles", "fakes.txt", "--save-detector", "det.txt", "--features", "f.txt", "--filtered",
        "kept.txt",
    ]);
    assert!(det.contains("fnr"));
    assert_eq!(std::fs::read_to_string(d.join("f.txt")).unwrap().lines().count(), 1 + 63);
    let again = ok(d, &["detect", "poisoned.txt", "--profiles", "fakes.txt", "--detector", "det.txt"]);
    assert_eq!(det.lines().last(), again.lines().last());
}

#[test]
fn experiment_writes_reports_and_runtime_goes_to_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("exp.toml"),
        "name = \"cli\"\nseeds = [1]\ntargets = { cold = 1 }\nattack = { n = 5, max_iter = 5, variants = [\"random\", \"s-tna-rand\"] }\n[dataset.synth]\nn_users = 50\nn_items = 25\ndensity = 0.2\n",
    )
    .unwrap();
    let out = run(d, &["experiment", "exp.toml", "-o", "res"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("runtime"));
    let report = std::fs::read_to_string(d.join("res/report.txt")).unwrap();
    assert!(report.starts_with("# experiment: cli"));
    assert!(!report.contains("runtime"));
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.txt"), "u1 i1 4\nu1 i2 9\n").unwrap();
    let out = run(d, &["ingest", "bad.txt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.txt:2"));

    std::fs::write(d.join("ok.txt"), "u1 i1 4\nu2 i2 3\n").unwrap();
    let out = run(d, &["evaluate", "ok.txt", "--target", "nope"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));

    std::fs::write(d.join("exp.toml"), "colour = 1\n[dataset]\nfile = \"ok.txt\"\n").unwrap();
    let out = run(d, &["experiment", "exp.toml", "-o", "res"]);
    assert!(!out.status.success());

    let out = run(d, &["attack", "ok.txt", "--target", "i1", "--variant", "mystery", "-o", "x"]);
    assert!(!out.status.success());
}
