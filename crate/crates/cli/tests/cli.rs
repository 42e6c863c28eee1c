use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn gdn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdn"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const BRIDGED: &str = "6 7 0\n0 1\n0 2\n1 2\n2 3\n3 4\n3 5\n4 5\n";

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn synth_writes_count_graphs_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let args = ["synth", "--n", "40", "--k", "4", "--modularity", "0.35", "--count", "5", "--seed", "1"];
    for out in ["a", "b"] {
        let o = gdn(&[&args[..], &["--out", out]].concat(), tmp.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = tmp.path().join("a");
    assert_eq!(std::fs::read_dir(a.join("graphs")).unwrap().count(), 5);
    assert_eq!(std::fs::read_to_string(a.join("manifest.txt")).unwrap().lines().count(), 5);
    assert_eq!(std::fs::read_to_string(a.join("truth.txt")).unwrap().lines().count(), 5);
    let (fa, fb) = (read_dir_sorted(&a), read_dir_sorted(&tmp.path().join("b")));
    // run.json records the output directory name, which differs by design.
    let strip = |v: Vec<(String, Vec<u8>)>| v.into_iter().filter(|(n, _)| n != "run.json").collect::<Vec<_>>();
    assert_eq!(strip(fa), strip(fb));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let o = gdn(&["synth", "--n", "10", "--k", "2", "--modularity", "1.5", "--out", "x"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
    assert_eq!(code(&gdn(&["denoise", "--out", "x"], tmp.path())), 2);
    assert_eq!(code(&gdn(&["denoise", "--in", "missing.gdn", "--out", "x"], tmp.path())), 2);
    std::fs::write(tmp.path().join("g.gdn"), BRIDGED).unwrap();
    assert_eq!(code(&gdn(&["denoise", "--in", "g.gdn", "--budget", "3", "--out", "x"], tmp.path())), 2);
    assert_eq!(code(&gdn(&["denoise", "--in", "g.gdn", "--k", "0", "--out", "x"], tmp.path())), 2);
    assert_eq!(code(&gdn(&["noise", "--in", "g.gdn", "--add", "-0.1", "--out", "x"], tmp.path())), 2);
}

#[test]
fn malformed_graph_is_a_runtime_failure() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("g.gdn"), "3 1 0\n0 7\n").unwrap();
    assert_eq!(code(&gdn(&["denoise", "--in", "g.gdn", "--out", "x"], tmp.path())), 1);
}

#[test]
fn denoise_removes_the_bridge() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("g.gdn"), BRIDGED).unwrap();
    let mut removed = 0;
    for seed in 0..20 {
        let out = format!("d{seed}");
        let o = gdn(
            &["denoise", "--in", "g.gdn", "--k", "2", "--budget", "2", "--seed", &seed.to_string(), "--out", &out],
            tmp.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let g = std::fs::read_to_string(tmp.path().join(&out).join("graphs/graph_0000.gdn")).unwrap();
        if !g.lines().any(|l| l == "2 3") {
            removed += 1;
        }
    }
    assert!(removed >= 18, "bridge removed in {removed}/20 seeds");
}

#[test]
fn zero_budget_returns_the_input() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("g.gdn"), BRIDGED).unwrap();
    let o = gdn(&["denoise", "--in", "g.gdn", "--k", "2", "--budget", "0", "--epochs", "5", "--out", "d"], tmp.path());
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(tmp.path().join("d/graphs/graph_0000.gdn")).unwrap(), BRIDGED);
}

#[test]
fn denoise_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    gdn(&["synth", "--n", "30", "--k", "2", "--modularity", "0.35", "--count", "3", "--seed", "4", "--out", "s"], tmp.path());
    gdn(&["noise", "--in", "s/manifest.txt", "--seed", "5", "--out", "n"], tmp.path());
    for (out, jobs) in [("a", "1"), ("b", "3")] {
        let o = gdn(
            &["denoise", "--in", "n/manifest.txt", "--epochs", "30", "--seed", "9", "--jobs", jobs, "--save-params", "--out", out],
            tmp.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let strip = |v: Vec<(String, Vec<u8>)>| v.into_iter().filter(|(n, _)| n != "run.json").collect::<Vec<_>>();
    let a = strip(read_dir_sorted(&tmp.path().join("a")));
    assert!(a.iter().any(|(n, _)| n.ends_with(".ckpt")));
    assert_eq!(a, strip(read_dir_sorted(&tmp.path().join("b"))));
}

#[test]
fn eval_identity_and_mismatch() {
    let tmp = TempDir::new().unwrap();
    gdn(&["synth", "--n", "20", "--k", "2", "--modularity", "0.3", "--count", "3", "--out", "three"], tmp.path());
    gdn(&["synth", "--n", "20", "--k", "2", "--modularity", "0.3", "--count", "4", "--out", "four"], tmp.path());
    let o = gdn(
        &[
            "eval", "--clean", "three/manifest.txt", "--denoised", "three/manifest.txt", "--truth", "three/truth.txt", "--pred",
            "three/truth.txt", "--out", "e",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let csv = stdout(&o);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "graph_id,psnr,wl,acc,nmi,f1");
    assert_eq!(lines.len(), 5);
    for row in &lines[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(&cells[1..], ["150.000000", "1.000000", "1.000000", "1.000000", "1.000000"]);
    }
    assert!(lines[4].starts_with("mean,"));
    assert_eq!(std::fs::read_to_string(tmp.path().join("e/eval.csv")).unwrap(), csv);

    let o = gdn(&["eval", "--clean", "three/manifest.txt", "--denoised", "four/manifest.txt", "--out", "e"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_leaves_cluster_columns_blank_without_labels() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("g.gdn"), BRIDGED).unwrap();
    let o = gdn(&["eval", "--clean", "g.gdn", "--denoised", "g.gdn", "--out", "e"], tmp.path());
    assert!(stdout(&o).contains("\n0,150.000000,1.000000,,,\n"));
}

#[test]
fn spectral_reports() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("g.gdn"), BRIDGED).unwrap();
    let o = gdn(&["spectral", "--in", "g.gdn", "--q", "0", "--trials", "10", "--out", "s"], tmp.path());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().any(|l| l == "mean_sin=0.000000"));

    std::fs::write(tmp.path().join("split.gdn"), "6 6 0\n0 1\n0 2\n1 2\n3 4\n3 5\n4 5\n").unwrap();
    let o = gdn(&["spectral", "--in", "split.gdn", "--trials", "10", "--out", "s"], tmp.path());
    assert_eq!(code(&o), 0);
    let report = stdout(&o);
    assert!(report.lines().any(|l| l == "assumption2=fail"));
    assert!(report.lines().any(|l| l == "kappa=undefined"));
    assert_eq!(code(&gdn(&["spectral", "--in", "g.gdn", "--epsilon", "1", "--out", "s"], tmp.path())), 2);
}

#[test]
fn cluster_separates_disconnected_triangles() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("split.gdn"), "6 6 0\n0 1\n0 2\n1 2\n3 4\n3 5\n4 5\n").unwrap();
    let o = gdn(&["cluster", "--in", "split.gdn", "--k", "2", "--seed", "1", "--out", "c"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let labels = std::fs::read_to_string(tmp.path().join("c/clusters.txt")).unwrap();
    let l: Vec<&str> = labels.split_whitespace().collect();
    assert_eq!(l.len(), 6);
    assert!(l[0] == l[1] && l[1] == l[2] && l[3] == l[4] && l[4] == l[5] && l[0] != l[3], "{labels}");
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("c/run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "cluster");
    assert_eq!(run["config"]["train"]["k"], "2");
    assert_eq!(run["config"]["train"]["epochs"], 200);
}

#[test]
fn noise_reads_tu_directories() {
    let mutag = workspace_root().join("data/MUTAG");
    if !mutag.exists() {
        eprintln!("MUTAG not present; skipping");
        return;
    }
    let tmp = TempDir::new().unwrap();
    let o = gdn(&["noise", "--in", mutag.to_str().unwrap(), "--seed", "1", "--out", "n"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(tmp.path().join("n/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 188);
    assert!(manifest.lines().all(|l| l.contains('\t')), "graph labels carried over");
    assert_eq!(std::fs::read_to_string(tmp.path().join("n/clean_manifest.txt")).unwrap().lines().count(), 188);
}
