use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn blpcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blpcs")).args(args).output().expect("spawn blpcs")
}

fn ok(args: &[&str]) -> String {
    let out = blpcs(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name).to_string_lossy().into_owned()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn printed_apsnr(stdout: &str) -> f64 {
    let v = stdout.trim().strip_prefix("APSNR ").and_then(|s| s.strip_suffix(" dB")).expect("APSNR line");
    if v == "inf" {
        f64::INFINITY
    } else {
        v.parse().unwrap()
    }
}

#[test]
fn keygen_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let args = ["keygen", "--seed", "1", "--n", "512", "--sr", "0.3", "--alpha", "0.99", "--beta", "0.95", "--dmax", "60", "--out"];
    let a = p(&dir, "a.key");
    let b = p(&dir, "b.key");
    ok(&[&args[..], &[a.as_str()]].concat());
    ok(&[&args[..], &[b.as_str()]].concat());
    let text = fs::read_to_string(&a).unwrap();
    assert!(text.lines().any(|l| l == "seed=1"));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn out_of_range_rate_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = blpcs(&["keygen", "--seed", "1", "--n", "512", "--sr", "1.5", "--out", &p(&dir, "k.key")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sr must lie in (0, 1]"));
    assert_eq!(blpcs(&["keygen", "--seed", "x"]).status.code(), Some(2));
    assert_eq!(blpcs(&["exp", "nope"]).status.code(), Some(2));
}

#[test]
fn malformed_inputs_exit_3() {
    let dir = TempDir::new().unwrap();
    let key = p(&dir, "k.key");
    ok(&["keygen", "--seed", "1", "--n", "64", "--sr", "0.5", "--out", &key]);
    let junk = p(&dir, "junk");
    fs::write(&junk, b"not a measurement file").unwrap();
    assert_eq!(blpcs(&["decode", "--key", &key, "--input", &junk, "--out", &p(&dir, "o.pgm")]).status.code(), Some(3));
    assert_eq!(blpcs(&["encode", "--key", &key, "--input", &junk, "--out", &p(&dir, "o.blpy")]).status.code(), Some(3));
    fs::write(&junk, b"seed=1\nM=64\n").unwrap();
    assert_eq!(blpcs(&["encode", "--key", &junk, "--input", &data("coffee512.pgm"), "--out", &p(&dir, "o.blpy")]).status.code(), Some(3));
}

fn round_trip(dir: &TempDir, enc_key: &str, dec_key: &str, image: &str) -> f64 {
    let c = p(dir, "c.blpy");
    let out = p(dir, "d.pgm");
    ok(&["encode", "--key", enc_key, "--input", image, "--out", &c]);
    assert_eq!(&fs::read(&c).unwrap()[..4], b"BLPY");
    let stdout = ok(&["decode", "--key", dec_key, "--input", &c, "--out", &out, "--reference", image]);
    assert_eq!(&fs::read(&out).unwrap()[..2], b"P5");
    printed_apsnr(&stdout)
}

#[test]
fn natural_image_half_rate_and_wrong_key() {
    let dir = TempDir::new().unwrap();
    let key = p(&dir, "k.key");
    let wrong = p(&dir, "w.key");
    ok(&["keygen", "--seed", "1", "--n", "512", "--sr", "0.5", "--dmax", "1", "--out", &key]);
    ok(&["keygen", "--seed", "2", "--n", "512", "--sr", "0.5", "--dmax", "1", "--out", &wrong]);
    let good = round_trip(&dir, &key, &key, &data("coffee512.pgm"));
    assert!((29.5..=33.5).contains(&good), "APSNR {good}");
    let bad = round_trip(&dir, &key, &wrong, &data("coffee512.pgm"));
    assert!(bad < 15.0, "wrong-key APSNR {bad}");
}

fn crop_to(dir: &TempDir, side: usize) -> String {
    let img = blpcs::imaging::load_pgm(data("camera512.pgm")).unwrap().crop(100, 200, side).unwrap();
    let path = p(dir, "crop.pgm");
    blpcs::imaging::save_pgm(&img, &path).unwrap();
    path
}

#[test]
fn full_rate_trivial_key_is_lossless() {
    let dir = TempDir::new().unwrap();
    let image = crop_to(&dir, 64);
    let key = p(&dir, "t.key");
    ok(&["keygen", "--seed", "3", "--n", "64", "--sr", "1", "--alpha", "1", "--beta", "1", "--dmax", "1", "--mix-count", "0", "--out", &key]);
    assert_eq!(round_trip(&dir, &key, &key, &image), f64::INFINITY);
}

fn exp_twice(args: &[&str]) -> String {
    let a = ok(args);
    let b = ok(args);
    assert_eq!(a, b, "{args:?} is not reproducible");
    assert!(a.ends_with('\n') && !a.contains('\r'));
    a
}

#[test]
fn fig1_csv_is_deterministic() {
    let csv = exp_twice(&["exp", "fig1", "--seed", "5", "--trials", "3"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("seed,M,K,k,dmax,two_step_rel_error,direct_l1_rel_error"));
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert!(f[5].parse::<f64>().unwrap() < 1e-6);
        assert!(f[6].parse::<f64>().unwrap() > 0.1);
    }
}

#[test]
fn sterm_at_order_one_matches_dct_blocks() {
    let csv = exp_twice(&["exp", "sterm", "--image", &data("camera512.pgm"), "--orders", "1", "--keep", "0.1"]);
    let row = csv.lines().nth(1).unwrap();
    let ratio: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    assert!((ratio - 1.0).abs() <= 1e-6, "{row}");
}

#[test]
fn attack_csv_reports_breaks() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "a.csv");
    let prox = p(&dir, "prox.csv");
    ok(&["attack", "--target", "class1", "--seeds", "2", "--out", &out, "--proximity", &prox]);
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("target,seed,M,K,k,queries,break_success,rel_error\n"));
    assert!(csv.lines().skip(1).all(|l| l.starts_with("class1,") && l.contains(",true,")));
    assert!(Path::new(&prox).exists());
    assert_eq!(blpcs(&["attack", "--target", "rot13"]).status.code(), Some(2));
    exp_twice(&["exp", "attack", "--trials", "1"]);
}

#[test]
fn packet_loss_cell_at_half_rate() {
    let csv = exp_twice(&["exp", "table2", "--image", &data("coffee512.pgm"), "--srs", "0.5", "--trials", "2"]);
    let row = csv.lines().find(|l| l.contains(",plr,0.3,")).expect("plr 0.3 row");
    let apsnr: f64 = row.split(',').nth(5).unwrap().parse().unwrap();
    assert!((27.0..=30.0).contains(&apsnr), "{row}");
}
