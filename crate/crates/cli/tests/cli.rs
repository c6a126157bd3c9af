use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn fhesift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fhesift"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes the synthetic set at `size` and returns the directory.
fn images(size: usize) -> TempDir {
    let dir = TempDir::new().unwrap();
    let o = fhesift(&["synth", "--out", s(dir.path()), "--size", &size.to_string()]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run(image: &Path, out: &Path, mode: &str, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--image", s(image), "--mode", mode, "--out", s(out)];
    args.extend(extra);
    fhesift(&args)
}

fn kv(dir: &Path, key: &str) -> Vec<String> {
    fs::read_to_string(dir.join("report.kv"))
        .unwrap()
        .lines()
        .find_map(|l| {
            l.strip_prefix(&format!("{key} "))
                .map(|r| r.split(' ').map(String::from).collect())
        })
        .unwrap_or_else(|| panic!("no `{key}` line"))
}

#[test]
fn bad_magic_reports_offset() {
    let dir = TempDir::new().unwrap();
    let img = dir.path().join("bad.pgm");
    fs::write(&img, b"P7\n2 2\n255\n\x00\x00\x00\x00").unwrap();
    let o = run(&img, &dir.path().join("out"), "plaintext", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("byte offset 0"), "{}", stderr(&o));
}

#[test]
fn truncated_raster_reports_offset() {
    let dir = TempDir::new().unwrap();
    let img = dir.path().join("short.pgm");
    fs::write(&img, b"P5\n4 4\n255\n\x00\x01").unwrap();
    let o = run(&img, &dir.path().join("out"), "plaintext", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("offset"), "{}", stderr(&o));
}

#[test]
fn exhausted_depth_exits_2_and_names_stage() {
    let imgs = images(32);
    let cfg = imgs.path().join("tight.cfg");
    fs::write(&cfg, "depth_budget = 2\n").unwrap();
    let out = imgs.path().join("out");
    let o = run(
        &imgs.path().join("blobs.pgm"),
        &out,
        "interactive",
        &["--config", s(&cfg)],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("scale_space"), "{}", stderr(&o));
}

#[test]
fn flat_deferral_exits_3() {
    let imgs = images(16);
    let cfg = imgs.path().join("flat.cfg");
    fs::write(&cfg, "deferred_nested = false\n").unwrap();
    let o = run(
        &imgs.path().join("blobs.pgm"),
        &imgs.path().join("out"),
        "deferred",
        &["--config", s(&cfg)],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn bad_config_and_usage_exit_1() {
    let imgs = images(16);
    let cfg = imgs.path().join("bad.cfg");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let img = imgs.path().join("blobs.pgm");
    let o = run(
        &img,
        &imgs.path().join("out"),
        "plaintext",
        &["--config", s(&cfg)],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_key"));
    assert_eq!(fhesift(&["run"]).status.code(), Some(1));
    assert_eq!(
        run(&img, &imgs.path().join("out"), "sideways", &[])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn deferred_matches_plaintext_and_is_deterministic() {
    let imgs = images(24);
    let img = imgs.path().join("blob_on_ramp.pgm");
    let plain = imgs.path().join("plain");
    let a = imgs.path().join("a");
    let b = imgs.path().join("b");
    assert!(run(&img, &plain, "plaintext", &[]).status.success());
    for dir in [&a, &b] {
        let o = run(&img, dir, "deferred", &["--seed", "11"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["keypoints.txt", "report.kv", "report.txt", "trace.txt"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }

    let o = fhesift(&[
        "diff",
        s(&plain.join("keypoints.txt")),
        s(&a.join("keypoints.txt")),
        "--exclude",
        s(&plain.join("exclusions.txt")),
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(!text.contains("matched 0\n"), "{text}");
    assert!(text.contains("missing 0\n"), "{text}");
    assert!(text.contains("spurious 0\n"), "{text}");
    assert_eq!(kv(&a, "oracle_diff")[1..3], ["0", "0"]);
    assert_eq!(kv(&a, "rounds"), ["1"]);
    assert_eq!(kv(&a, "server_decrypts"), ["0"]);
}

#[test]
fn report_matches_trace() {
    let imgs = images(20);
    let out = imgs.path().join("out");
    let o = run(
        &imgs.path().join("cluster.pgm"),
        &out,
        "interactive",
        &["--seed", "5"],
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let trace = fs::read_to_string(out.join("trace.txt")).unwrap();
    let field = |k: &str| -> usize {
        trace
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{k} ")))
            .unwrap()
            .parse()
            .unwrap()
    };
    let batches: Vec<Vec<usize>> = trace
        .lines()
        .filter_map(|l| l.strip_prefix("batch "))
        .map(|l| {
            let f: Vec<&str> = l.split(' ').collect();
            [f[0], f[2], f[3], f[4]]
                .iter()
                .map(|v| v.parse().unwrap())
                .collect()
        })
        .collect();
    let sum = |i: usize| batches.iter().map(|b| b[i]).sum::<usize>().to_string();
    let rounds = batches.iter().map(|b| b[0]).max().unwrap();

    assert_eq!(kv(&out, "rounds"), [rounds.to_string()]);
    assert_eq!(kv(&out, "rounds"), [field("rounds").to_string()]);
    assert_eq!(kv(&out, "real_requests"), [sum(1)]);
    assert_eq!(kv(&out, "decoy_requests"), [sum(2)]);
    assert_eq!(kv(&out, "sqrt_requests"), [sum(3)]);
    assert_eq!(
        kv(&out, "bytes_to_client"),
        [field("bytes_to_client").to_string()]
    );
    assert_eq!(
        kv(&out, "bytes_to_server"),
        [field("bytes_to_server").to_string()]
    );

    let o = fhesift(&["report", s(&out.join("report.kv"))]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o),
        fs::read_to_string(out.join("report.txt")).unwrap()
    );
}

#[test]
fn diff_rejects_malformed_keypoints() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.txt");
    fs::write(&a, "not a keypoint\n").unwrap();
    let o = fhesift(&["diff", s(&a), s(&a)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("offset"), "{}", stderr(&o));
}
