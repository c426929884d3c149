use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clot::io::{read_features, read_labels, write_features};
use clot::ot::{solve_entropic_kot, Marginals, OtConfig};
use clot::DenseMatrix;
use tempfile::TempDir;

fn clot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clot")).current_dir(dir).args(args).output().expect("binary runs")
}

fn clot_env(dir: &Path, args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clot")).current_dir(dir).env(key, value).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A small synthetic dataset in `<tmp>/ds`.
fn dataset(extra: &str) -> TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("spec.txt"), format!("n_videos = 4\nframes_per_video = 60\nfeature_dim = 8\nseed = 5\n{extra}")).unwrap();
    let o = clot(tmp.path(), &["synth", "--spec", "spec.txt", "--out", "ds"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    tmp
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("run.txt");
    fs::write(&p, format!("epochs = 3\nhidden_dim = 16\nembed_dim = 8\ndec_dim = 8\nheads = 2\nlayers = 1\n{extra}")).unwrap();
    p
}

fn train(dir: &Path) {
    small_config(dir, "");
    let o = clot(dir, &["train", "--data", "ds", "--config", "run.txt", "--out", "m.ckpt", "--log", "log.jsonl"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn synth_is_deterministic_and_validates_specs() {
    let a = dataset("");
    let b = dataset("");
    for name in ["features/video_002.cft", "labels/video_002.txt", "manifest.json"] {
        assert_eq!(fs::read(a.path().join("ds").join(name)).unwrap(), fs::read(b.path().join("ds").join(name)).unwrap());
    }
    fs::write(a.path().join("bad.txt"), "ordering = sideways\n").unwrap();
    let o = clot(a.path(), &["synth", "--spec", "bad.txt", "--out", "x"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sideways"));
}

#[test]
fn train_logs_every_step_and_refuses_to_overwrite() {
    let tmp = dataset("");
    let dir = tmp.path();
    train(dir);
    let log = fs::read_to_string(dir.join("log.jsonl")).unwrap();
    // 4 videos, batch 2, 3 epochs
    assert_eq!(log.lines().count(), 6);
    for (i, line) in log.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["step"], i);
        assert_eq!(v["epoch"], i / 2);
        for key in ["loss", "loss_S", "loss_R", "wall_ms"] {
            assert!(v[key].is_number(), "{key} missing in {line}");
        }
    }
    let o = clot(dir, &["train", "--data", "ds", "--config", "run.txt", "--out", "m.ckpt"]);
    assert_eq!(code(&o), 3);
    let o = clot(dir, &["train", "--data", "ds", "--config", "run.txt", "--out", "m.ckpt", "--force"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn seeded_training_is_reproducible() {
    let tmp = dataset("");
    let dir = tmp.path();
    small_config(dir, "");
    for out in ["a.ckpt", "b.ckpt"] {
        let o = clot(dir, &["train", "--data", "ds", "--config", "run.txt", "--out", out, "--seed", "11"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let o = clot_env(dir, &["train", "--data", "ds", "--config", "run.txt", "--out", "c.ckpt", "--seed", "11"], "CLOT_THREADS", "3");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = fs::read(dir.join("a.ckpt")).unwrap();
    assert_eq!(a, fs::read(dir.join("b.ckpt")).unwrap());
    assert_eq!(a, fs::read(dir.join("c.ckpt")).unwrap());
    let o = clot(dir, &["train", "--data", "ds", "--config", "run.txt", "--out", "d.ckpt", "--seed", "12"]);
    assert_eq!(code(&o), 0);
    assert_ne!(a, fs::read(dir.join("d.ckpt")).unwrap());
}

#[test]
fn segment_writes_labels_and_plots_then_eval_scores_them() {
    let tmp = dataset("");
    let dir = tmp.path();
    train(dir);
    let o = clot(dir, &["segment", "--data", "ds", "--ckpt", "m.ckpt", "--out", "seg"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("TR"));
    for i in 0..4 {
        let labels = read_labels(&dir.join(format!("seg/video_{i:03}.txt"))).unwrap();
        assert_eq!(labels.len(), 60);
        let svg = fs::read_to_string(dir.join(format!("seg/video_{i:03}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<rect"));
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("seg/segments.json")).unwrap()).unwrap();
    assert_eq!(summary[0]["source_stage"], "TR");

    let o = clot(dir, &["segment", "--data", "ds", "--ckpt", "m.ckpt", "--out", "seg_p", "--decode-from", "P"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("seg_p/segments.json")).unwrap()).unwrap();
    assert_eq!(summary[0]["source_stage"], "P");

    let o = clot(dir, &["eval", "--pred", "seg", "--gt", "ds", "--out", "metrics.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    for key in ["mof", "f1", "miou"] {
        let v = m[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    assert_eq!(m["level"], "activity");
}

#[test]
fn segmentation_does_not_depend_on_worker_count() {
    let tmp = dataset("");
    let dir = tmp.path();
    train(dir);
    for (out, threads) in [("one", "1"), ("many", "4")] {
        let o = clot_env(dir, &["segment", "--data", "ds", "--ckpt", "m.ckpt", "--out", out], "CLOT_THREADS", threads);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for i in 0..4 {
        let name = format!("video_{i:03}.txt");
        assert_eq!(fs::read(dir.join("one").join(&name)).unwrap(), fs::read(dir.join("many").join(&name)).unwrap());
    }
    let o = clot_env(dir, &["segment", "--data", "ds", "--ckpt", "m.ckpt", "--out", "x"], "CLOT_THREADS", "lots");
    assert_eq!(code(&o), 2);
}

#[test]
fn video_mode_trains_one_model_per_video() {
    let tmp = dataset("");
    let dir = tmp.path();
    small_config(dir, "mode = video\n");
    let o = clot(dir, &["train", "--data", "ds", "--config", "run.txt", "--out", "v.ckpt", "--log", "v.jsonl"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let models = clot::pipeline::load_models(&dir.join("v.ckpt")).unwrap();
    let prefixes: Vec<&str> = models.iter().map(|(p, _)| p.as_str()).collect();
    assert_eq!(prefixes, ["video_000/", "video_001/", "video_002/", "video_003/"]);
    let log = fs::read_to_string(dir.join("v.jsonl")).unwrap();
    // three epochs of one single-video batch each
    assert_eq!(log.lines().count(), 12);
    assert!(log.contains("\"video\":\"video_003\""));
    let o = clot(dir, &["segment", "--data", "ds", "--ckpt", "v.ckpt", "--out", "seg"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = clot(dir, &["eval", "--pred", "seg", "--gt", "ds", "--level", "video"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("Video level"));
}

#[test]
fn eval_of_ground_truth_is_perfect_and_missing_pairs_are_named() {
    let tmp = dataset("background_fraction = 0.2\n");
    let dir = tmp.path();
    let o = clot(dir, &["eval", "--pred", "ds/labels", "--gt", "ds", "--out", "m.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("m.json")).unwrap()).unwrap();
    assert_eq!((m["mof"].as_f64(), m["f1"].as_f64(), m["miou"].as_f64()), (Some(1.0), Some(1.0), Some(1.0)));
    let o = clot(dir, &["eval", "--pred", "ds/labels", "--gt", "ds", "--ignore", "4", "--level", "video"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    fs::create_dir(dir.join("pred")).unwrap();
    for i in [0, 1, 3] {
        let name = format!("video_{i:03}.txt");
        fs::copy(dir.join("ds/labels").join(&name), dir.join("pred").join(&name)).unwrap();
    }
    let o = clot(dir, &["eval", "--pred", "pred", "--gt", "ds"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("video_002.txt"), "{}", stderr(&o));
}

#[test]
fn solve_writes_coupling_and_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut state = 7u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 40) as f64 / (1u64 << 24) as f64
    };
    let cost = DenseMatrix::from_fn(15, 4, |_, _| f64::from(next() as f32));
    write_features(&dir.join("c.cft"), &cost).unwrap();

    let o = clot(dir, &["solve", "--cost", "c.cft", "--out", "t.cft", "--radius", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = read_features(&dir.join("t.cft")).unwrap();
    assert_eq!(t.shape(), (15, 4));
    for r in t.row_iter() {
        assert!((r.iter().sum::<f64>() - 1.0 / 15.0).abs() < 1e-6);
    }
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("t.json")).unwrap()).unwrap();
    assert_eq!(side["converged"], true);

    let o = clot(dir, &["solve", "--cost", "c.cft", "--out", "kot.cft", "--alpha", "0"]);
    assert_eq!(code(&o), 0);
    let direct = solve_entropic_kot(&cost, &Marginals::uniform(15, 4), &OtConfig::default()).unwrap();
    let written = read_features(&dir.join("kot.cft")).unwrap();
    for (a, b) in written.as_slice().iter().zip(direct.t.as_slice()) {
        assert_eq!(*a, f64::from(*b as f32));
    }

    let o = clot(dir, &["solve", "--cost", "c.cft", "--out", "u.cft", "--inner-iters", "1", "--outer-iters", "1", "--tol", "1e-300"]);
    assert_eq!(code(&o), 0);
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("u.json")).unwrap()).unwrap();
    assert_eq!(side["converged"], false);

    let o = clot(dir, &["solve", "--cost", "missing.cft", "--out", "v.cft"]);
    assert_eq!(code(&o), 2);
    let o = clot(dir, &["solve", "--cost", "c.cft", "--out", "w.cft", "--alpha", "1.5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn check_grad_passes_and_detects_broken_backward() {
    let tmp = tempfile::tempdir().unwrap();
    let o = clot(tmp.path(), &["check-grad", "--seed", "3", "--json", "g.json"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    for component in ["encoder", "dispatch", "self_attention", "cross_attention", "feed_forward", "decoder", "refine", "predict_loss", "end_to_end"] {
        assert!(out.contains(component), "{component} missing from report");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("g.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);

    for fault in ["relu", "softmax"] {
        let o = clot(tmp.path(), &["check-grad", "--inject-fault", fault]);
        assert_ne!(code(&o), 0);
        assert!(stdout(&o).contains("FAIL"));
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let tmp = dataset("");
    let dir = tmp.path();
    fs::write(dir.join("bad.ckpt"), b"CLOTCKPT\x01\x00\x00\x00\x05\x00ab").unwrap();
    let o = clot(dir, &["segment", "--data", "ds", "--ckpt", "bad.ckpt", "--out", "seg"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("offset"));
}
