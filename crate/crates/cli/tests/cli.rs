use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn subplex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subplex"))
        .args(args)
        .env_remove("SUBPLEX_PORT")
        .output()
        .expect("binary runs")
}

fn write_csv(path: &Path, n: usize, m: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("id");
    for j in 0..m {
        text.push_str(&format!(",feat{j}"));
    }
    text.push('\n');
    for i in 0..n {
        text.push_str(&format!("inst{i}"));
        let offset = (i % 3) as f64;
        for _ in 0..m {
            text.push_str(&format!(",{:.6}", offset + rng.random_range(0.0..0.5)));
        }
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn run_writes_identical_artifacts_twice() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("attr.csv");
    write_csv(&input, 90, 6, 1);
    let outs = ["a", "b"].map(|d| dir.path().join(d));
    for out in &outs {
        let o = subplex(&[
            "run",
            "--input",
            input.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--k",
            "3",
            "--pca-components",
            "4",
            "--id-column",
            "id",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["layout.json", "partition.json", "ranking.json"] {
        let a = std::fs::read(outs[0].join(name)).unwrap();
        let b = std::fs::read(outs[1].join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let part: serde_json::Value =
        serde_json::from_slice(&std::fs::read(outs[0].join("partition.json")).unwrap()).unwrap();
    assert_eq!(part["groups"].as_array().unwrap().len(), 3);
    assert_eq!(part["instance_ids"][0], "inst0");
    let ranking: serde_json::Value =
        serde_json::from_slice(&std::fs::read(outs[0].join("ranking.json")).unwrap()).unwrap();
    assert_eq!(ranking["deviation"]["basis"], "deviation_emd");
    assert_eq!(ranking["group_means"].as_array().unwrap().len(), 3);
}

#[test]
fn k_above_row_count_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("attr.csv");
    write_csv(&input, 4, 2, 2);
    let o = subplex(&["run", "--input", input.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap(), "--k", "9", "--id-column", "id"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("out of range"));
}

#[test]
fn bad_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let o = subplex(&["run", "--input", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,x\n").unwrap();
    let o = subplex(&["run", "--input", bad.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 1"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(subplex(&["run"]).status.code(), Some(2));
    assert_eq!(subplex(&["serve", "--port", "0"]).status.code(), Some(2));
    assert_eq!(subplex(&["serve", "--port", "70000"]).status.code(), Some(2));
    assert_eq!(subplex(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("attr.csv");
    write_csv(&input, 10, 2, 2);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = subplex(&[
        "run",
        "--input",
        input.to_str().unwrap(),
        "--out-dir",
        blocker.join("sub").to_str().unwrap(),
        "--k",
        "2",
        "--id-column",
        "id",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_noise_report_has_one_row_per_level_and_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let o = subplex(&[
        "bench-noise",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--n",
        "200",
        "--noise-counts",
        "0,10,20",
        "--repeats",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("noise_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("noise_report.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn bench_projection_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = subplex(&["bench-projection", "--out-dir", dir.path().to_str().unwrap(), "--sizes", "90,150"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("projection_report.csv")).unwrap();
    assert!(csv.starts_with("n,method,runtime_ms,silhouette"));
    assert_eq!(csv.lines().count(), 5);
    assert!(String::from_utf8_lossy(&o.stdout).contains("lamp"));
}

#[test]
fn odd_synthetic_size_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = subplex(&["bench-noise", "--out-dir", dir.path().to_str().unwrap(), "--n", "7"]);
    assert_eq!(o.status.code(), Some(2));
}
