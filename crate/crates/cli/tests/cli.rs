use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_imsketch"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Ring plus pseudo-random chords over sparse, non-contiguous ids.
fn toy_graph(dir: &Path) -> PathBuf {
    let mut text = String::from("# toy graph\n");
    let mut state = 12345u64;
    let id = |v: u64| 1000 + 7 * v;
    for v in 0..300u64 {
        text += &format!("{} {}\n", id(v), id((v + 1) % 300));
        for _ in 0..3 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (state >> 33) % 300;
            if u != v {
                text += &format!("{} {}\n", id(v), id(u));
            }
        }
    }
    let path = dir.join("toy.txt");
    fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn seeds_writes_report_with_original_ids() {
    let dir = TempDir::new().unwrap();
    let g = toy_graph(dir.path());
    let out = dir.path().join("out.json");
    let args = ["seeds", "--graph", g.to_str().unwrap(), "--weights", "const:0.1", "--k", "5", "--r", "256", "--devices", "1"];
    run_ok(&[&args[..], &["--out", out.to_str().unwrap()]].concat());
    let v = json(&out);
    let seeds = v["seeds"].as_array().unwrap();
    assert_eq!(seeds.len(), 5);
    assert!(seeds.iter().all(|s| (s.as_u64().unwrap() - 1000) % 7 == 0));
    assert_eq!(v["scores"].as_array().unwrap().len(), 5);
    assert_eq!(v["config"]["run"]["k"], 5);
    assert_eq!(v["config"]["run"]["seed"], 0);
    assert_eq!(v["config"]["weights"], "const:0.1");
    assert!(v["timings"]["total"].as_f64().unwrap() >= 0.0);
    assert!(v["comms"].is_object());
}

#[test]
fn rerun_reproduces_report_except_timings() {
    let dir = TempDir::new().unwrap();
    let g = toy_graph(dir.path());
    let mut reports = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        run_ok(&[
            "seeds", "--graph", g.to_str().unwrap(), "--weights", "wc", "--k", "4", "--r", "128", "--devices", "4",
            "--mode", "naive", "--seed", "9", "--out", out.to_str().unwrap(),
        ]);
        let mut v = json(&out);
        v.as_object_mut().unwrap().remove("timings");
        reports.push(serde_json::to_vec(&v).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn eval_accepts_report_or_list() {
    let dir = TempDir::new().unwrap();
    let g = toy_graph(dir.path());
    let out = dir.path().join("out.json");
    let gs = g.to_str().unwrap();
    run_ok(&["seeds", "--graph", gs, "--weights", "const:0.1", "--k", "3", "--r", "128", "--out", out.to_str().unwrap()]);
    let text = String::from_utf8(
        run_ok(&["eval", "--graph", gs, "--weights", "const:0.1", "--seeds", out.to_str().unwrap(), "--trials", "2000"]).stdout,
    )
    .unwrap();
    let mean: f64 = text.split_whitespace().next().unwrap().parse().unwrap();
    assert!(text.contains('±'));
    assert!(mean >= 3.0, "{text}");

    let listed = run_ok(&["eval", "--graph", gs, "--weights", "const:1.0", "--seeds", "1000", "--trials", "10", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&listed.stdout).unwrap();
    // the ring makes every vertex reachable under certain edges
    assert_eq!(v["mean"], 300.0);
    assert_eq!(v["stderr"], 0.0);
}

#[test]
fn eval_rejects_unknown_vertex() {
    let dir = TempDir::new().unwrap();
    let g = toy_graph(dir.path());
    let out = bin().args(["eval", "--graph", g.to_str().unwrap(), "--weights", "wc", "--seeds", "1001"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("1001"));
}

#[test]
fn partition_stats_csv_shows_fasst_concentration() {
    let dir = TempDir::new().unwrap();
    let g = toy_graph(dir.path());
    let out = dir.path().join("dup.csv");
    run_ok(&[
        "partition-stats", "--graph", g.to_str().unwrap(), "--weights", "const:0.1", "--r", "1024", "--devices", "8",
        "--mode", "fasst", "--out", out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("setting,mode,devices,k,fraction"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r[0] == "const:0.1" && r[1] == "fasst" && r[2] == "8"));
    let frac = |k: usize| rows[k][4].parse::<f64>().unwrap();
    let low: f64 = (0..=2).map(frac).sum();
    assert!(low > (3..=8).map(frac).sum::<f64>());
}

#[test]
fn fillrate_csv_has_both_modes() {
    let dir = TempDir::new().unwrap();
    let g = toy_graph(dir.path());
    let text = String::from_utf8(
        run_ok(&["fillrate", "--graph", g.to_str().unwrap(), "--weights", "const:0.1", "--r", "1024"]).stdout,
    )
    .unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "setting,mode,fill_rate");
    let rate = |l: &str| l.rsplit(',').next().unwrap().parse::<f64>().unwrap();
    assert!(lines[1].starts_with("const:0.1,naive,"));
    assert!(lines[2].starts_with("const:0.1,fasst,"));
    assert!(rate(lines[2]) > rate(lines[1]));
}

#[test]
fn cache_and_text_inputs_agree() {
    let dir = TempDir::new().unwrap();
    let g = toy_graph(dir.path());
    let cache = dir.path().join("toy.bin");
    run_ok(&["convert", "--graph", g.to_str().unwrap(), "--out", cache.to_str().unwrap()]);
    assert_eq!(&fs::read(&cache).unwrap()[..8], b"IMSKCSR1");
    let seeds = |p: &Path| {
        let out = run_ok(&["seeds", "--graph", p.to_str().unwrap(), "--weights", "const:0.2", "--k", "3", "--r", "64"]);
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()["seeds"].clone()
    };
    assert_eq!(seeds(&g), seeds(&cache));
}

#[test]
fn bench_emits_one_row_per_combination() {
    let dir = TempDir::new().unwrap();
    let g = toy_graph(dir.path());
    let text = String::from_utf8(
        run_ok(&["bench", "--graph", g.to_str().unwrap(), "--devices", "1,2", "--k", "2", "--r", "64"]).stdout,
    )
    .unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("graph,setting,devices,mode,"));
    // 2 settings x 2 device counts x 2 modes
    assert_eq!(lines.len(), 1 + 8);
}

#[test]
fn errors_are_reported() {
    let missing = bin().args(["seeds", "--graph", "/nonexistent/graph.txt", "--weights", "wc"]).output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("cannot open graph"));

    let dir = TempDir::new().unwrap();
    let g = toy_graph(dir.path());
    let bad_weights = bin().args(["seeds", "--graph", g.to_str().unwrap(), "--weights", "const:abc"]).output().unwrap();
    assert_eq!(bad_weights.status.code(), Some(2));

    let unknown = bin().args(["seeds", "--graph", g.to_str().unwrap(), "--bogus"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));

    let too_many = bin().args(["seeds", "--graph", g.to_str().unwrap(), "--weights", "wc", "--k", "301"]).output().unwrap();
    assert!(!too_many.status.success());
}
