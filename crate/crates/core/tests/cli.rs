use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use priorseg::io::{self, Tensor};
use priorseg::labels::LabelMap;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_priorseg"))
        .args(args)
        .output()
        .expect("spawn priorseg")
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(root: &Path, count: &str) -> PathBuf {
    let data = root.join("data");
    ok(&["synth", "--seed", "3", "--count", count, "--out", s(&data), "--h", "24", "--w", "24"]);
    data
}

#[test]
fn mask_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "1");
    let scene = data.join("scene_0000");
    let p = |name: &str| dir.path().join(name);

    ok(&["fuse", "--conv4", s(&scene.join("conv4.tsr")), "--conv5", s(&scene.join("conv5.tsr")), "--out", s(&p("pf.tsr")), "--h", "24", "--w", "24"]);
    let pf = io::read_grid2(&p("pf.tsr")).unwrap();
    assert_eq!(pf.dims(), (24, 24));
    assert!(pf.min() >= 0.0 && pf.max() <= 1.0);

    ok(&[
        "cam", "--features", s(&scene.join("cam_features.tsr")), "--weights", s(&data.join("cam_weights.tsr")),
        "--out", s(&p("cams.tsr")), "--h", "24", "--w", "24", "--masks-out", s(&p("bin.tsr")),
    ]);
    let bin = io::read_grid3(&p("bin.tsr")).unwrap();
    assert!(bin.values().iter().all(|v| *v == 0.0 || *v == 1.0));

    let tags = scene.join("tags.txt");
    ok(&["combine", "--pf", s(&p("pf.tsr")), "--cams", s(&p("cams.tsr")), "--out", s(&p("probs.tsr")), "--tags", s(&tags)]);
    let probs = io::read_grid3(&p("probs.tsr")).unwrap();
    let present = io::read_tags(&tags, 5).unwrap().present();
    assert_eq!(probs.channels(), present.len());

    let preds = p("preds");
    std::fs::create_dir(&preds).unwrap();
    ok(&[
        "crf", "--probs", s(&p("probs.tsr")), "--image", s(&scene.join("image.ppm")),
        "--regions", s(&scene.join("regions.pgm")), "--tags", s(&tags),
        "--out-labels", s(&preds.join("scene_0000.pgm")), "--out-probs", s(&p("q.tsr")), "--iters", "5",
    ]);
    let labels = io::read_label_map(&preds.join("scene_0000.pgm")).unwrap();
    assert!(labels.labels().iter().all(|l| present.contains(&(*l as usize))));

    let report = ok(&["eval", "--pred", s(&preds), "--gt", s(&data), "--labels", "5", "--trimap-band", "2", "--confusion"]);
    assert!(report.contains("IoU"), "{report}");
    let csv = ok(&["eval", "--pred", s(&preds), "--gt", s(&data), "--labels", "5", "--csv"]);
    assert!(csv.lines().count() > 1);
}

#[test]
fn train_predict_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "3");
    let head = dir.path().join("head.tsr");
    let history = dir.path().join("history.csv");
    ok(&[
        "train", "--data", s(&data), "--variant", "fgbg", "--epochs", "2", "--seed", "1",
        "--out", s(&head), "--history", s(&history),
    ]);
    assert_eq!(std::fs::read_to_string(&history).unwrap().lines().count(), 3);
    let preds = dir.path().join("preds");
    ok(&["predict", "--head", s(&head), "--data", s(&data), "--out", s(&preds)]);
    assert_eq!(std::fs::read_dir(&preds).unwrap().count(), 3);
    let report = ok(&["eval", "--pred", s(&preds), "--gt", s(&data)]);
    assert!(report.contains("mean"), "{report}");
}

#[test]
fn loss_prints_value_and_writes_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("s.tsr");
    let values: Vec<f64> = (0..3 * 2 * 2).map(|i| (i as f64 * 0.37).sin()).collect();
    io::write_tensor(&scores, &Tensor::new(vec![3, 2, 2], values).unwrap()).unwrap();
    let tags = dir.path().join("tags.txt");
    std::fs::write(&tags, "present=0,2\n").unwrap();
    let mask = dir.path().join("m.pgm");
    io::write_mask(&mask, 2, 2, &[true, false, false, true]).unwrap();
    let grad = dir.path().join("g.tsr");

    let out = ok(&["loss", "--scores", s(&scores), "--tags", s(&tags), "--variant", "fgbg", "--mask", s(&mask), "--grad-out", s(&grad)]);
    let value: f64 = out.trim().parse().unwrap();
    assert!(value.is_finite() && value > 0.0);
    assert_eq!(io::read_tensor(&grad).unwrap().dims, vec![3, 2, 2]);

    let masks = dir.path().join("masks");
    std::fs::create_dir(&masks).unwrap();
    io::write_mask(&masks.join("0.pgm"), 2, 2, &[true, true, false, false]).unwrap();
    io::write_mask(&masks.join("2.pgm"), 2, 2, &[false, false, true, true]).unwrap();
    ok(&["loss", "--scores", s(&scores), "--tags", s(&tags), "--variant", "multiclass", "--masks", s(&masks)]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.tsr");
    io::write_tensor(&t, &Tensor::new(vec![1, 2, 2], vec![0.5; 4]).unwrap()).unwrap();
    let out = dir.path().join("o.tsr");

    // Bad arguments.
    assert_eq!(run(&["fuse", "--conv4", s(&t)]).status.code(), Some(2));
    assert_eq!(run(&["combine", "--pf", s(&t), "--cams", s(&t), "--out", s(&out), "--alpha", "1.5"]).status.code(), Some(2));
    // Missing input.
    let missing = dir.path().join("missing.tsr");
    assert_eq!(run(&["fuse", "--conv4", s(&missing), "--conv5", s(&t), "--out", s(&out)]).status.code(), Some(3));
    // Non-finite payload.
    let mut bytes = std::fs::read(&t).unwrap();
    let n = bytes.len();
    bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    let nan = dir.path().join("nan.tsr");
    std::fs::write(&nan, bytes).unwrap();
    assert_eq!(run(&["fuse", "--conv4", s(&nan), "--conv5", s(&t), "--out", s(&out)]).status.code(), Some(4));
    // Malformed tag file.
    let tags = dir.path().join("tags.txt");
    std::fs::write(&tags, "present=1,1\n").unwrap();
    let lm = dir.path().join("l.pgm");
    io::write_label_map(&lm, &LabelMap::filled(2, 2, 0).unwrap()).unwrap();
    let o = run(&["loss", "--scores", s(&t), "--tags", s(&tags), "--variant", "weak"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
