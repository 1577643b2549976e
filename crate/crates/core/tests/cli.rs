use hgan::dataio::{make_synthetic, save_image_grid, SyntheticKind};
use std::path::Path;
use std::process::{Command, Output};

fn hgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgan")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = hgan(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    let text = format!(
        "generator = tiny\ndiscriminator = sngan\ntotal_steps = 6\nbatch_size = 4\n\
         eval_every = 3\neval_samples = 32\ncheckpoint_every = 3\nsample_count = 4\ndata_n = 64\n{extra}"
    );
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_is_reproducible_and_sample_reads_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train", "--config", &cfg, "--out", s(&a), "--seed", "3"]);
    ok(&["train", "--config", &cfg, "--out", s(&b), "--seed", "3"]);
    for f in ["log.jsonl", "checkpoint-000003.hgan", "checkpoint-000006.hgan", "final.hgan", "samples.ppm"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(x == y, "{f} differs between runs");
    }
    let log = std::fs::read_to_string(a.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first["wall_ms"].is_null());

    let grid = dir.path().join("g.ppm");
    ok(&["sample", "--checkpoint", s(&a.join("final.hgan")), "--n", "6", "--cols", "3", "--out", s(&grid)]);
    let (w, h, _) = hgan::dataio::read_ppm(&grid).unwrap();
    assert_eq!((w, h), (24, 16));
}

#[test]
fn fid_of_a_set_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = make_synthetic(SyntheticKind::GaussianBlobs, 40, 8, 1).unwrap().images;
    let p = dir.path().join("x.ppm");
    save_image_grid(&imgs, &p, 8).unwrap();
    let out = ok(&["fid", "--real", s(&p), "--fake", s(&p), "--tile", "8"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "0.000000");
    let line: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(line["n_real"], 40);
}

#[test]
fn spectrum_csv_has_one_row_per_bin() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = make_synthetic(SyntheticKind::Checkerboard, 4, 32, 2).unwrap().images;
    let p = dir.path().join("s.ppm");
    save_image_grid(&imgs, &p, 2).unwrap();
    let csv = dir.path().join("spec.csv");
    ok(&["spectrum", "--set-a", s(&p), "--set-b", s(&p), "--out", s(&csv), "--tile", "32", "--normalize"]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 23);
}

#[test]
fn bad_invocations_fail() {
    assert!(!hgan(&["frobnicate"]).status.success());
    assert!(!hgan(&["fid", "--bogus"]).status.success());
    assert!(!hgan(&[]).status.success());

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "learning_speed = 3\n");
    let out = hgan(&["train", "--config", &cfg, "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_speed"));

    let cfg = write_config(dir.path(), "");
    let out = hgan(&["benchmark", "--config", &cfg, "--out", "x.csv", "--discriminators", "wgan"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("wgan"));
    let missing = hgan(&["sample", "--checkpoint", s(&dir.path().join("none.hgan")), "--out", "y.ppm"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn benchmark_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let csv = dir.path().join("bench.csv");
    ok(&["benchmark", "--config", &cfg, "--out", s(&csv), "--discriminators", "sngan,dcgan"]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "discriminator,params,fid_proxy,collapsed");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("sngan,") && lines[2].starts_with("dcgan,"));
}
