//! The `fdp` binary: exit codes, outputs and determinism of each command.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fdp::data::pnm::{read_image, write_image};
use fdp::data::Image;

fn fdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdp"))
        .args(args)
        .env("FDP_THREADS", "1")
        .output()
        .expect("run fdp")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn gen_small(dir: &Path) -> String {
    let out = dir.to_str().unwrap();
    let o = fdp(&[
        "gen-synth", "--out", out, "--subjects", "2", "--clips-per-cell", "1", "--frames", "6",
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    dir.join("manifest.csv").to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&fdp(&[])), 1);
    assert_eq!(code(&fdp(&["frobnicate"])), 1);
    assert_eq!(code(&fdp(&["eval", "--manifest", "m.csv", "--protocol", "sideways"])), 1);
    assert_eq!(code(&fdp(&["stats", "ranksum", "--a", "1,2"])), 1);
    assert_eq!(code(&fdp(&["--help"])), 0);
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = fdp(&["train", "--tiny", "--manifest", missing.to_str().unwrap(), "--out", "x.fdp"]);
    assert_eq!(code(&o), 2, "{}", text(&o));

    // A directory with fewer than two frames.
    let frames = dir.path().join("one");
    fs::create_dir(&frames).unwrap();
    write_image(frames.join("a.pgm"), &Image::filled(1, 2, 2, 0.5)).unwrap();
    let o = fdp(&["dynimg", frames.to_str().unwrap(), "--out", "d.pgm"]);
    assert_eq!(code(&o), 2, "{}", text(&o));
}

#[test]
fn dynimg_of_a_constant_directory_is_mid_gray_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    fs::create_dir(&frames).unwrap();
    for i in 0..5 {
        write_image(frames.join(format!("f{i}.ppm")), &Image::filled(3, 4, 6, 0.2)).unwrap();
    }
    let (a, b) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
    for out in [&a, &b] {
        let o = fdp(&["dynimg", frames.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", text(&o));
    }
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_eq!(&bytes[..11], b"P5\n6 4\n255\n");
    assert!(bytes[11..].iter().all(|&v| v == 128));
}

#[test]
fn dynimg_of_two_frames_is_the_normalized_difference() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    fs::create_dir(&frames).unwrap();
    let first = Image::new(1, 1, 3, vec![0.2, 0.4, 0.6]).unwrap();
    let second = Image::new(1, 1, 3, vec![0.2, 0.6, 1.0]).unwrap();
    write_image(frames.join("0.pgm"), &first).unwrap();
    write_image(frames.join("1.pgm"), &second).unwrap();
    let out = dir.path().join("d.pgm");
    let o = fdp(&["dynimg", frames.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    // Differences 0, 0.2, 0.4 normalize to 0, 0.5, 1.
    let d = read_image(&out).unwrap();
    assert_eq!(d.data(), &[0.0, 128.0 / 255.0, 1.0]);
}

#[test]
fn ranksum_prints_statistics() {
    let o = fdp(&["stats", "ranksum", "--a", "1,2", "--b", "3 4", "--alternative", "less"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let out = text(&o);
    assert!(out.contains("0.166667"), "{out}");

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("a.txt");
    fs::write(&file, "0.5\n0.7\n0.9\n").unwrap();
    let o = fdp(&["stats", "ranksum", "--a", file.to_str().unwrap(), "--b", "0.5,0.7,0.9"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let o = fdp(&["stats", "ranksum", "--a", "1,x", "--b", "2"]);
    assert_ne!(code(&o), 0);
}

#[test]
fn train_is_reproducible_and_eval_reports() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_small(dir.path());
    let mut logs = Vec::new();
    for k in 0..2 {
        let log = dir.path().join(format!("{k}.log"));
        let ckpt = dir.path().join(format!("{k}.fdp"));
        let o = fdp(&[
            "train", "--tiny", "--set", "epochs=2", "--seed", "7", "--deterministic",
            "--manifest", &manifest, "--out", ckpt.to_str().unwrap(), "--log", log.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", text(&o));
        logs.push(fs::read(&log).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
    assert_eq!(String::from_utf8_lossy(&logs[0]).lines().count(), 2);
    let ckpt = dir.path().join("0.fdp");
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(dir.path().join("1.fdp")).unwrap());

    let report = dir.path().join("report.json");
    let o = fdp(&[
        "eval", "--protocol", "holdout", "--manifest", &manifest, "--checkpoint", ckpt.to_str().unwrap(),
        "--test-subjects", "s01", "--out", report.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["clips"], 3);
    assert!(json["average_mse"].as_f64().unwrap() >= 0.0);
    assert!(json["metrics"]["accuracy"].is_number());

    // No clips for the requested subject.
    let o = fdp(&[
        "eval", "--protocol", "holdout", "--manifest", &manifest, "--checkpoint", ckpt.to_str().unwrap(),
        "--test-subjects", "s99",
    ]);
    assert_eq!(code(&o), 2, "{}", text(&o));
}

#[test]
fn eval_refuses_a_class_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_small(&dir.path().join("three"));
    let ckpt = dir.path().join("m.fdp");
    let o = fdp(&[
        "train", "--tiny", "--set", "epochs=1", "--manifest", &manifest, "--out", ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let other = dir.path().join("two");
    let o = fdp(&[
        "gen-synth", "--out", other.to_str().unwrap(), "--subjects", "2", "--classes", "2",
        "--clips-per-cell", "1", "--frames", "6",
    ]);
    assert_eq!(code(&o), 0);
    let o = fdp(&[
        "eval", "--protocol", "cross", "--manifest", other.join("manifest.csv").to_str().unwrap(),
        "--checkpoint", ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    assert!(text(&o).contains("class"), "{}", text(&o));
}
