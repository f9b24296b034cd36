use std::path::Path;
use std::process::{Command, Output};

use affectkit::preprocess::{write_audio, LandmarkSet};

fn affectkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affectkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

const SMALL_SPEC: &str = "\
train.va = 40
train.expr = 40
train.au = 40
val.va = 20
val.expr = 20
val.au = 20
test.va = 20
test.expr = 20
test.au = 20
test.compound = 22
feature_dim = 8
";

fn small_data(dir: &Path, seed: &str, out: &str) {
    std::fs::write(dir.join("spec.cfg"), SMALL_SPEC).unwrap();
    assert_ok(&affectkit(
        dir,
        &["gen-data", "--spec", "spec.cfg", "--seed", seed, "--out", out],
    ));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(affectkit(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(affectkit(dir.path(), &["eval", "--model"]).status.code(), Some(1));
    assert_eq!(affectkit(dir.path(), &["grad-check"]).status.code(), Some(1));
    assert_eq!(affectkit(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = affectkit(dir.path(), &["train", "--config", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.cfg"));
    let o = affectkit(dir.path(), &["grad-check", "--check", "nonexistent"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), "3", "a");
    small_data(dir.path(), "3", "b");
    small_data(dir.path(), "4", "c");
    for f in ["annotations.csv", "features.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        let c = std::fs::read(dir.path().join("c").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
        assert_ne!(a, c, "{f}");
    }
}

#[test]
fn train_eval_fuse_zero_shot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d, "1", "data");
    std::fs::write(
        d.join("run.cfg"),
        "backbone = 16\nlr = 0.01\nepochs = 3\nbatch_size = 12\ncoupling = soft+distr\n\
         data = data\nout = model/m.afmt\nlog = model/log.csv\n",
    )
    .unwrap();
    let o = affectkit(d, &["train", "--config", "run.cfg"]);
    assert_ok(&o);
    assert!(stdout(&o).contains("epoch 3 loss"));
    assert!(d.join("model/m.afmt").exists());
    assert!(d.join("model/m.afmt.cfg").exists());
    let log = std::fs::read_to_string(d.join("model/log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    assert_ok(&affectkit(
        d,
        &[
            "eval",
            "--model",
            "model/m.afmt",
            "--data",
            "data",
            "--report",
            "report.txt",
            "--predictions",
            "preds.csv",
        ],
    ));
    let report = std::fs::read_to_string(d.join("report.txt")).unwrap();
    for key in ["va.ccc_mean", "expr.f1_macro", "au.f1_macro"] {
        assert!(report.contains(key), "{key} missing from\n{report}");
    }
    let preds = std::fs::read_to_string(d.join("preds.csv")).unwrap();
    // 60 basic-task frames plus 22 compound frames.
    assert_eq!(preds.lines().count(), 1 + 82);

    std::fs::write(
        d.join("manifest.csv"),
        "member_id,ccc_v,ccc_a,path\nA,0.4,0.5,preds.csv\nB,0.6,0.3,preds.csv\n",
    )
    .unwrap();
    assert_ok(&affectkit(
        d,
        &["fuse", "--manifest", "manifest.csv", "--out", "fused.csv"],
    ));
    // Fusing a file with itself reproduces its VA columns.
    let fused = std::fs::read_to_string(d.join("fused.csv")).unwrap();
    assert_eq!(fused.lines().next(), Some("id,valence,arousal"));
    assert_eq!(fused.lines().count(), 1 + 82);

    let o = affectkit(
        d,
        &[
            "zero-shot",
            "--predictions",
            "preds.csv",
            "--out",
            "compound.csv",
            "--truth",
            "data",
        ],
    );
    assert_ok(&o);
    assert!(stdout(&o).contains("compound.accuracy"));
    let compound = std::fs::read_to_string(d.join("compound.csv")).unwrap();
    assert_eq!(compound.lines().next(), Some("id,class,name"));
    assert_eq!(compound.lines().count(), 1 + 82);
}

#[test]
fn fuse_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let member = |v: f64| format!("id,valence,arousal\nf0,{v},0\n");
    std::fs::write(d.join("a.csv"), member(0.2)).unwrap();
    std::fs::write(d.join("b.csv"), member(0.5)).unwrap();
    std::fs::write(d.join("manifest.csv"), "A,0.4,0.4,a.csv\nB,0.6,0.6,b.csv\n").unwrap();
    assert_ok(&affectkit(
        d,
        &["fuse", "--manifest", "manifest.csv", "--out", "out.csv"],
    ));
    let out = std::fs::read_to_string(d.join("out.csv")).unwrap();
    let row = out.lines().nth(1).unwrap();
    let v: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((v - 0.38).abs() < 1e-12, "{row}");
}

#[test]
fn align_recovers_identity_on_template() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let t = LandmarkSet::template();
    let mut text = String::from("frame,x1,y1,x2,y2,x3,y3,x4,y4,x5,y5\n0");
    for p in t.points {
        text.push_str(&format!(",{},{}", p[0], p[1]));
    }
    text.push('\n');
    std::fs::write(d.join("lm.csv"), text).unwrap();
    assert_ok(&affectkit(d, &["align", "--landmarks", "lm.csv", "--out", "al.csv"]));
    let out = std::fs::read_to_string(d.join("al.csv")).unwrap();
    let vals: Vec<f64> = out
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .skip(1)
        .map(|x| x.parse().unwrap())
        .collect();
    let expect = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    for (v, e) in vals.iter().zip(expect) {
        assert!((v - e).abs() < 1e-9, "{out}");
    }
}

#[test]
fn spectrogram_frame_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let samples: Vec<f64> = (0..44_100).map(|i| (i as f64 * 0.05).sin()).collect();
    write_audio(std::fs::File::create(d.join("a.raw")).unwrap(), 44_100, &samples).unwrap();
    let o = affectkit(d, &["spectrogram", "--audio", "a.raw", "--out", "s.csv"]);
    assert_ok(&o);
    assert!(stdout(&o).contains("window 1455, hop 970"), "{}", stdout(&o));
    let out = std::fs::read_to_string(d.join("s.csv")).unwrap();
    // 1 + floor((44100 - 1455) / 970) frames.
    assert_eq!(out.lines().count(), 44);
}

#[test]
fn grad_check_all_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = affectkit(dir.path(), &["grad-check", "--all", "--points", "5"]);
    assert_ok(&o);
    let text = stdout(&o);
    assert_eq!(
        text.lines().filter(|l| l.ends_with("ok")).count(),
        affectkit::gradcheck::CHECKS.len()
    );
}
