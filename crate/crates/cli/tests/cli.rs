//! Integration tests over the compiled binary: exit codes, stream
//! determinism, and the documented output formats.

use std::path::Path;
use std::process::{Command, Output};

fn svdc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svdc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup_corpus(dir: &Path) {
    assert_ok(&svdc(
        &[
            "gencorpus",
            "--kind",
            "gauss-markov",
            "--count",
            "2",
            "--width",
            "24",
            "--height",
            "16",
            "-o",
            "corpus",
        ],
        dir,
    ));
}

#[test]
fn encode_decode_round_trip_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup_corpus(dir);
    assert_ok(&svdc(
        &[
            "genmap",
            "--width",
            "24",
            "--height",
            "16",
            "--constant",
            "10",
            "-o",
            "map.pgm",
        ],
        dir,
    ));
    let enc = svdc(
        &[
            "encode",
            "corpus/0000.pgm",
            "--map",
            "map.pgm",
            "-o",
            "out.svdc",
        ],
        dir,
    );
    assert_ok(&enc);
    let line = String::from_utf8_lossy(&enc.stdout);
    assert!(line.contains("\"bpp\""), "encode must report bpp: {line}");
    assert_ok(&svdc(&["decode", "out.svdc", "-o", "recon.pgm"], dir));
    assert!(dir.join("out.svdc").exists());
    assert!(dir.join("recon.pgm").exists());
}

#[test]
fn missing_map_file_exits_two_and_names_path() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup_corpus(dir);
    let out = svdc(
        &[
            "encode",
            "corpus/0000.pgm",
            "--map",
            "no-such-map.pgm",
            "-o",
            "out.svdc",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("no-such-map.pgm"),
        "stderr must name the path: {stderr}"
    );
}

#[test]
fn fixed_seed_reproduces_streams_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup_corpus(dir);
    assert_ok(&svdc(
        &[
            "genmap",
            "--width",
            "24",
            "--height",
            "16",
            "--kind",
            "rectangle",
            "--levels",
            "4:30",
            "-o",
            "map.pgm",
        ],
        dir,
    ));
    for (seed, name) in [("9", "a.svdc"), ("9", "b.svdc"), ("10", "c.svdc")] {
        assert_ok(&svdc(
            &[
                "--seed",
                seed,
                "encode",
                "corpus/0001.pgm",
                "--map",
                "map.pgm",
                "-o",
                name,
            ],
            dir,
        ));
    }
    let a = std::fs::read(dir.join("a.svdc")).unwrap();
    let b = std::fs::read(dir.join("b.svdc")).unwrap();
    let c = std::fs::read(dir.join("c.svdc")).unwrap();
    assert_eq!(a, b, "same seed must reproduce the stream");
    assert_ne!(a, c, "different seeds must change the stream");
}

#[test]
fn genmap_constant_and_voronoi() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = svdc(
        &[
            "genmap",
            "--width",
            "16",
            "--height",
            "16",
            "--constant",
            "10",
            "-o",
            "const.pgm",
        ],
        dir,
    );
    assert_ok(&out);
    let line = String::from_utf8_lossy(&out.stdout);
    assert!(line.contains("\"distinct_levels\":1"), "{line}");

    let out = svdc(
        &[
            "genmap",
            "--width",
            "64",
            "--height",
            "64",
            "--kind",
            "voronoi",
            "--regions",
            "5",
            "--levels",
            "1:50",
            "-o",
            "vor.pgm",
        ],
        dir,
    );
    assert_ok(&out);
    let line = String::from_utf8_lossy(&out.stdout);
    // 5 sites with a wide level range: expect 5 distinct levels almost surely
    // under the default seed (pinned by determinism)
    assert!(line.contains("\"distinct_levels\":5"), "{line}");
}

#[test]
fn bitmap_totals_match_stream_bits() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup_corpus(dir);
    assert_ok(&svdc(
        &[
            "genmap", "--width", "24", "--height", "16", "--kind", "grid", "--levels", "5:40",
            "-o", "map.pgm",
        ],
        dir,
    ));
    assert_ok(&svdc(
        &[
            "encode",
            "corpus/0000.pgm",
            "--map",
            "map.pgm",
            "-o",
            "out.svdc",
        ],
        dir,
    ));
    assert_ok(&svdc(
        &[
            "bitmap",
            "out.svdc",
            "-o",
            "heat.pgm",
            "--csv",
            "totals.csv",
        ],
        dir,
    ));
    let stream_bits = std::fs::read(dir.join("out.svdc")).unwrap().len() as f64 * 8.0;
    let csv = std::fs::read_to_string(dir.join("totals.csv")).unwrap();
    let mut total = 0.0f64;
    for line in csv.lines().skip(1) {
        let bits: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        total += bits;
    }
    assert!(
        (total - stream_bits).abs() <= 64.0,
        "per-level totals {total} vs stream bits {stream_bits}"
    );
    assert!(dir.join("heat.pgm").exists());
}

#[test]
fn eval_rd_writes_versioned_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup_corpus(dir);
    assert_ok(&svdc(
        &[
            "eval-rd", "--corpus", "corpus", "--levels", "5,20", "-o", "eval.csv",
        ],
        dir,
    ));
    let csv = std::fs::read_to_string(dir.join("eval.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("schema_version,image,map,predictor,sampler"));
    // 2 images x 2 levels x 2 predictors x 2 samplers
    assert_eq!(lines.clone().count(), 16);
    assert!(
        lines.all(|l| l.starts_with("1,")),
        "rows carry the schema version"
    );
}

#[test]
fn selftest_quick_passes_and_detects_corrupt_golden() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = svdc(&["--quick", "selftest"], dir);
    assert_ok(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    for check in [
        "quantizer-uniformity",
        "coder-round-trip",
        "golden-stream",
        "gradient-check",
        "reduction-to-uniform",
    ] {
        assert!(table.contains(check), "missing check {check} in: {table}");
    }
    assert!(!table.contains("FAIL"));

    // corrupt golden: flip one byte of the pinned stream
    let golden = include_bytes!("../../core/tests/data/golden-v1.svdc");
    let mut bad = golden.to_vec();
    bad[20] ^= 0xFF;
    std::fs::write(dir.join("bad.svdc"), &bad).unwrap();
    let out = svdc(&["--quick", "selftest", "--golden", "bad.svdc"], dir);
    assert_eq!(out.status.code(), Some(1));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("FAIL"), "{table}");
}

#[test]
fn decode_rejects_truncated_stream() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup_corpus(dir);
    assert_ok(&svdc(
        &[
            "genmap",
            "--width",
            "24",
            "--height",
            "16",
            "--constant",
            "8",
            "-o",
            "map.pgm",
        ],
        dir,
    ));
    assert_ok(&svdc(
        &[
            "encode",
            "corpus/0000.pgm",
            "--map",
            "map.pgm",
            "-o",
            "out.svdc",
        ],
        dir,
    ));
    let stream = std::fs::read(dir.join("out.svdc")).unwrap();
    std::fs::write(dir.join("cut.svdc"), &stream[..stream.len() - 5]).unwrap();
    let out = svdc(&["decode", "cut.svdc", "-o", "x.pgm"], dir);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_draw_reports_histogram() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = svdc(
        &[
            "--seed",
            "3",
            "genmap",
            "--width",
            "32",
            "--height",
            "32",
            "--training-draw",
            "-o",
            "t.pgm",
        ],
        dir,
    );
    assert_ok(&out);
    let line = String::from_utf8_lossy(&out.stdout);
    assert!(line.contains("histogram"));
    assert!(dir.join("t.pgm").exists());
}
