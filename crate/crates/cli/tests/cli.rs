use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn pcq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcq"))
        .args(args)
        .env_remove("PCQ_THREADS")
        .output()
        .expect("failed to spawn pcq")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes `count` synthetic clouds into `dir/shapes` and returns that path.
fn synth(dir: &TempDir, count: usize) -> std::path::PathBuf {
    let out = dir.path().join("shapes");
    let o = pcq(&[
        "synth",
        "--out",
        p(&out),
        "--count",
        &count.to_string(),
        "--size",
        "16",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn train(data: &Path, out: &Path, threads: &str) -> Output {
    pcq(&[
        "--threads",
        threads,
        "train",
        p(data),
        "--out",
        p(out),
        "--block-size",
        "16",
        "--steps",
        "3",
        "--channels",
        "2,2,2",
        "--seed",
        "7",
    ])
}

#[test]
fn invalid_arguments_exit_with_usage_error() {
    let o = pcq(&["voxelize", "x.ply", "--out", "o", "--repr", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    let o = pcq(&["metric", "a.ply", "b.ply", "--metric", "tdf-pl"]);
    assert_eq!(o.status.code(), Some(2));
    let o = pcq(&["train", "d", "--out", "w", "--channels", "4,4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn metric_of_cloud_with_itself_is_zero() {
    let dir = TempDir::new().unwrap();
    let shapes = synth(&dir, 1);
    let cloud = shapes.join("shape_000.ply");
    for metric in ["d1-mse", "d2-mse", "tdf-mse"] {
        let o = pcq(&[
            "metric",
            p(&cloud),
            p(&cloud),
            "--metric",
            metric,
            "--block-size",
            "16",
        ]);
        assert!(
            o.status.success(),
            "{metric}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), 0.0, "{metric}");
    }
}

#[test]
fn voxelize_writes_one_file_per_block() {
    let dir = TempDir::new().unwrap();
    let shapes = synth(&dir, 1);
    let out = dir.path().join("blocks");
    let o = pcq(&[
        "voxelize",
        p(&shapes.join("shape_000.ply")),
        "--out",
        p(&out),
        "--block-size",
        "8",
    ]);
    assert!(o.status.success());
    let n: usize = stdout(&o).trim().parse().unwrap();
    assert!(n > 0);
    assert_eq!(fs::read_dir(&out).unwrap().count(), n);
}

#[test]
fn training_is_reproducible_and_weights_load() {
    let dir = TempDir::new().unwrap();
    let shapes = synth(&dir, 2);
    let (w1, w2) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    assert!(train(&shapes, &w1, "1").status.success());
    assert!(train(&shapes, &w2, "3").status.success());
    assert_eq!(fs::read(&w1).unwrap(), fs::read(&w2).unwrap());

    let cloud = shapes.join("shape_000.ply");
    let other = shapes.join("shape_001.ply");
    let o = pcq(&[
        "metric",
        p(&cloud),
        p(&other),
        "--metric",
        "tdf-pl",
        "--weights",
        p(&w1),
        "--block-size",
        "16",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).trim().parse::<f64>().unwrap() >= 0.0);

    // Weights trained on TDF blocks cannot score binary grids.
    let o = pcq(&[
        "metric",
        p(&cloud),
        p(&other),
        "--metric",
        "bin-pl",
        "--weights",
        p(&w1),
        "--block-size",
        "16",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn training_on_empty_directory_fails() {
    let dir = TempDir::new().unwrap();
    let o = train(dir.path(), &dir.path().join("w.bin"), "1");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

fn write_scores(path: &Path) {
    let mut csv = String::from("stimulus_id,content_id,codec,rate_level,mos,perfect,noise\n");
    let codecs = ["octree", "trisoup", "vpcc"];
    for c in 0..4 {
        for s in 0..9 {
            let mos = 1.0 + ((c * 9 + s) * 37 % 41) as f64 / 10.0;
            let noise = ((c * 9 + s) * 53 % 29) as f64;
            csv.push_str(&format!(
                "c{c}s{s},c{c},{},r{},{mos},{mos},{noise}\n",
                codecs[s % 3],
                s / 3
            ));
        }
    }
    fs::write(path, csv).unwrap();
}

#[test]
fn eval_ranks_perfect_metric_first() {
    let dir = TempDir::new().unwrap();
    let scores = dir.path().join("scores.csv");
    write_scores(&scores);
    let out = dir.path().join("report");
    let o = pcq(&["eval", p(&scores), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("method,pcc,srocc,rmse,or"));
    assert!(lines.next().unwrap().starts_with("perfect,"));
    assert!(out.join("predictions.csv").exists());
    assert!(out.join("significance.csv").exists());
}

#[test]
fn eval_groups_by_codec() {
    let dir = TempDir::new().unwrap();
    let scores = dir.path().join("scores.csv");
    write_scores(&scores);
    let out = dir.path().join("report");
    let o = pcq(&["eval", p(&scores), "--out", p(&out), "--group-by", "codec"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for codec in ["octree", "trisoup", "vpcc"] {
        assert!(
            out.join(format!("report_codec-{codec}.csv")).exists(),
            "{codec}"
        );
    }
}

#[test]
fn eval_rejects_unknown_metric_column() {
    let dir = TempDir::new().unwrap();
    let scores = dir.path().join("scores.csv");
    write_scores(&scores);
    let o = pcq(&[
        "eval",
        p(&scores),
        "--out",
        p(&dir.path().join("r")),
        "--metrics",
        "absent",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent"));
}
