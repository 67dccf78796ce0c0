use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use protoprior::checkpoint;
use protoprior::data::load_prototypes;
use protoprior::net::{HeadInit, Network};
use protoprior::presets::Preset;
use protoprior::proto::PrototypeSet;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protoprior"))
        .args(args)
        .env_remove("PROTOPRIOR_THREADS")
        .output()
        .expect("spawn cli")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a failing command and returns its single stderr line.
fn fails(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "multi-line error: {stderr}");
    stderr.trim_end().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, classes: usize, per_class: usize) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "--out",
        s(&data),
        "synth",
        "--classes",
        &classes.to_string(),
        "--per-class",
        &per_class.to_string(),
    ]);
    data
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn synth_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = synth(&tmp.path().join("a"), 4, 5);
    let b = synth(&tmp.path().join("b"), 4, 5);
    for file in ["manifest.csv", "config.toml", "prototypes/prototypes.csv", "prototypes/c02.png"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    assert_eq!(lines(&a.join("manifest.csv")).len(), 1 + 20);
    let other = tmp.path().join("c");
    ok(&["--seed", "8", "--out", s(&other), "synth", "--classes", "4", "--per-class", "5"]);
    assert_ne!(
        fs::read(a.join("prototypes/c00.png")).unwrap(),
        fs::read(other.join("prototypes/c00.png")).unwrap()
    );
}

#[test]
fn errors_are_one_categorized_line() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    let msg = fails(&["--out", s(&out), "synth", "--per-class", "2"]);
    assert!(msg.starts_with("error[invalid-config]: "), "{msg}");
    let msg = fails(&["--out", s(&out), "train", "--data", s(&tmp.path().join("nowhere"))]);
    assert!(msg.starts_with("error[missing-file]: "), "{msg}");
    let msg = fails(&["synth"]);
    assert!(msg.starts_with("error[invalid-config]: ") && msg.contains("--out"), "{msg}");
    let msg = fails(&["frobnicate"]);
    assert!(msg.starts_with("error[usage]: "), "{msg}");
}

#[test]
fn hog_dimensions_and_degenerate_input() {
    assert_eq!(ok(&["hog", "--dims-only"]).trim(), "3888");
    assert_eq!(ok(&["hog", "--dims-only", "--side", "60"]).trim(), "1200");
    assert!(fails(&["hog", "--dims-only", "--side", "105"]).starts_with("error[invalid-config]"));

    let tmp = TempDir::new().unwrap();
    let flat = tmp.path().join("flat.png");
    image::GrayImage::from_pixel(30, 30, image::Luma([128])).save(&flat).unwrap();
    let msg = fails(&["hog", s(&flat)]);
    assert!(msg.starts_with("error[degenerate-prototype]: ") && msg.contains("flat.png"), "{msg}");

    let data = synth(tmp.path(), 3, 3);
    let out = tmp.path().join("emb");
    ok(&["--out", s(&out), "hog", s(&data.join("prototypes/c01.png"))]);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("embedding.json")).unwrap()).unwrap();
    let values = json["values"].as_array().unwrap();
    assert_eq!(values.len(), 3888);
    let norm: f64 = values.iter().map(|v| v.as_f64().unwrap().powi(2)).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-5);
}

#[test]
fn train_both_heads_then_eval() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), 4, 6);
    for head in ["prototype", "learned"] {
        let out = tmp.path().join(head);
        ok(&["--out", s(&out), "train", "--data", s(&data), "--head", head, "--epochs", "2", "--checkpoint-every-epoch"]);
        let metrics: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
        assert_eq!(metrics["head"], head);
        assert_eq!(metrics["epochs"].as_array().unwrap().len(), 2);
        assert_eq!(lines(&out.join("metrics.csv")).len(), 3);
        assert!(out.join("checkpoints/epoch-002.bin").is_file());

        let net = checkpoint::load(&out.join("checkpoint.bin")).unwrap();
        assert_eq!(net.head().prototypes().is_some(), head == "prototype");

        let eval_dir = tmp.path().join(format!("eval-{head}"));
        ok(&["--out", s(&eval_dir), "eval", "--data", s(&data), "--checkpoint", s(&out.join("checkpoint.bin"))]);
        let report: serde_json::Value = serde_json::from_slice(&fs::read(eval_dir.join("eval.json")).unwrap()).unwrap();
        assert_eq!(report["overall_accuracy"], metrics["test_accuracy"]);
        assert_eq!(lines(&eval_dir.join("eval.csv")).len(), 1 + 4);
    }
}

#[test]
fn zero_epochs_writes_the_initial_network() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), 3, 3);
    let out = tmp.path().join("t");
    ok(&["--seed", "21", "--out", s(&out), "train", "--data", s(&data), "--epochs", "0"]);
    assert_eq!(lines(&out.join("metrics.csv")).len(), 1);

    let preset = Preset::desk();
    let images = load_prototypes(&data.join("prototypes"), true).unwrap();
    let set = PrototypeSet::build(&images, &preset.hog).unwrap();
    let init = Network::<f32>::new(&preset.architecture, HeadInit::Prototype(set.clone()), 21).unwrap();
    let saved = checkpoint::load(&out.join("checkpoint.bin")).unwrap();
    assert_eq!(saved.params(), init.params());
    assert_eq!(saved.head().prototypes().unwrap().matrix(), set.matrix());
}

#[test]
fn dropout_flag_and_presets() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), 3, 3);
    let out = tmp.path().join("t");
    ok(&["--out", s(&out), "train", "--data", s(&data), "--epochs", "1", "--dropout", "0"]);
    let doc: toml::Value = fs::read_to_string(out.join("config.toml")).unwrap().parse().unwrap();
    let layers = doc["train"]["preset"]["architecture"]["layers"].as_array().unwrap();
    let rates: Vec<f64> = layers
        .iter()
        .filter(|l| l["kind"].as_str() == Some("dropout"))
        .map(|l| l["rate"].as_float().unwrap())
        .collect();
    assert_eq!(rates, vec![0.0]);
    for rate in ["0.5", "0.6", "0.65"] {
        ok(&["--out", s(&out), "train", "--data", s(&data), "--epochs", "0", "--dropout", rate]);
    }
    assert!(fails(&["--out", s(&out), "train", "--data", s(&data), "--dropout", "1.5"]).starts_with("error[invalid-config]"));
    assert!(fails(&["--out", s(&out), "train", "--data", s(&data), "--preset", "huge"]).starts_with("error[invalid-config]"));
}

#[test]
fn config_file_overrides_flags() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), 3, 3);
    let cfg = tmp.path().join("run.toml");
    let out = tmp.path().join("from-file");
    fs::write(
        &cfg,
        format!("seed = 5\nout = {:?}\n[train]\nhead = \"learned\"\n[train.preset.schedule]\nepochs = 1\n", s(&out)),
    )
    .unwrap();
    let ignored = tmp.path().join("from-flag");
    ok(&["--config", s(&cfg), "--seed", "9", "--out", s(&ignored), "train", "--data", s(&data), "--epochs", "4"]);
    assert!(!ignored.exists());
    assert_eq!(lines(&out.join("metrics.csv")).len(), 2);
    let doc: toml::Value = fs::read_to_string(out.join("config.toml")).unwrap().parse().unwrap();
    assert_eq!(doc["seed"].as_integer(), Some(5));
    assert_eq!(doc["train"]["head"].as_str(), Some("learned"));

    // the written config reproduces the run
    let again = tmp.path().join("again");
    ok(&["--config", s(&out.join("config.toml")), "--out", s(&again), "train", "--data", "unused"]);
    assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), fs::read(again.join("metrics.csv")).unwrap());

    fs::write(&cfg, "[train]\nlearning_rte = 0.1\n").unwrap();
    let msg = fails(&["--config", s(&cfg), "--out", s(&out), "train", "--data", s(&data)]);
    assert!(msg.starts_with("error[invalid-config]: ") && msg.contains("learning_rte"), "{msg}");
}

#[test]
fn zeroshot_outputs_and_validation() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), 10, 3);
    let out = tmp.path().join("z");
    ok(&[
        "--out", s(&out), "zeroshot", "--data", s(&data), "--trials", "5", "--unseen", "3", "--epochs", "1",
        "--conse-top-t", "1", "--curve",
    ]);
    let trials = lines(&out.join("trials.csv"));
    assert_eq!(trials.len(), 1 + 5);
    assert!(trials[1..].iter().all(|l| l.ends_with(",1")));
    assert_eq!(lines(&out.join("curve.csv")).len(), 1 + 2);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("zeroshot.json")).unwrap()).unwrap();
    let summary = &json["comparison"]["summary"];
    assert_eq!(summary["trials"], 5);
    assert!((0.0..=1.0).contains(&summary["p_value"].as_f64().unwrap()));
    assert_eq!(json["comparison"]["trials"].as_array().unwrap().len(), 5);
    assert!(json["curve"]["correlation"].is_object());

    let msg = fails(&["--out", s(&out), "zeroshot", "--data", s(&data), "--unseen", "10"]);
    assert!(msg.starts_with("error[invalid-count]: "), "{msg}");
    let msg = fails(&["--out", s(&out), "zeroshot", "--data", s(&data), "--unseen", "2", "--conse-top-t", "9"]);
    assert!(msg.starts_with("error["), "{msg}");
}
