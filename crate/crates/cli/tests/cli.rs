use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use c3det_cli::config::{deep_merge, ResolvedConfig};
use c3det_cli::{main_with_args, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use c3det_core::dataset::read_meta;
use c3det_model::checkpoint::CheckpointInfo;
use c3det_model::params::ParamStore;
use c3det_model::{Checkpoint, ModelConfig, TrainConfig};
use proptest::prelude::*;
use serde_json::{json, Value};

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.json");
    let cfg = json!({
        "gen": {
            "canvas": [64, 64],
            "objects_per_image": [2, 5],
            "object_size": [6, 12],
            "splits": {"train": 4, "val": 1, "test": 3}
        },
        "train": {"epochs": 1, "batch_size": 2, "warmup_steps": 1, "lr_decay_epochs": [], "val_every": 0},
        "eval": {"sessions": 2, "max_clicks": 20}
    });
    fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["c3det"];
    argv.extend_from_slice(args);
    main_with_args(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn untrained_checkpoint(data: &Path, path: &Path, variant: &str) {
    let meta = read_meta(data).unwrap();
    let model = ModelConfig {
        variant: variant.parse().unwrap(),
        ..ModelConfig::desk()
    };
    let params = ParamStore::<f32>::init(&model, meta.classes.len(), 1);
    Checkpoint::new(&model, &meta.classes, &params, CheckpointInfo::default()).save(path).unwrap();
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&[]), EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&["gen-data", "--out", "x", "--bogus-flag"]), EXIT_USAGE);
    assert_eq!(run(&["gen-data"]), EXIT_USAGE, "--out is required");
    assert_eq!(run(&["train", "--data", "d", "--out", "o", "--variant", "nope"]), EXIT_USAGE);
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn binary_reports_runtime_errors_with_subsystem() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_c3det"))
        .args(["eval", "--data", s(&dir.path().join("missing")), "--checkpoint", "nope.json", "--out", s(dir.path())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_FAILURE));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error [dataset]:"), "{stderr}");

    let out = Command::new(env!("CARGO_BIN_EXE_c3det"))
        .args(["gen-data", "--out", s(dir.path()), "--profile", "huge"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_FAILURE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error [config]: unknown profile"));

    let out = Command::new(env!("CARGO_BIN_EXE_c3det")).arg("--no-such-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}

#[test]
fn gen_data_is_deterministic_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        assert_eq!(run(&["gen-data", "--config", s(&cfg), "--seed", "9", "--out", s(out)]), EXIT_OK);
    }
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    assert_eq!(run(&["gen-data", "--config", s(&cfg), "--seed", "10", "--out", s(&c)]), EXIT_OK);
    assert_ne!(tree_bytes(&a), tree_bytes(&c));

    let echoed: ResolvedConfig = serde_json::from_slice(&fs::read(a.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(echoed.profile, "desk");
    assert_eq!(echoed.gen.seed, 9);
    assert_eq!(echoed.train.seed, 9);
    assert_eq!(echoed.eval.seed, 9);
    assert_eq!(echoed.gen.canvas, [64, 64]);
    assert_eq!(echoed.gen.splits.test, 3);
    // Keys absent from the file keep the profile's values.
    assert_eq!(echoed.gen.max_pair_iou, 0.3);
    assert_eq!(echoed.model, ModelConfig::desk());
    assert_eq!(fs::read_dir(a.join("labels/test")).unwrap().count(), 3);
}

#[test]
fn profiles_and_file_merge() {
    let dir = tempfile::tempdir().unwrap();
    let desk = ResolvedConfig::load(None, None).unwrap();
    assert_eq!(desk.profile, "desk");
    assert_eq!(desk.model, ModelConfig::desk());
    assert_eq!(desk.train, TrainConfig::desk());

    let paper = ResolvedConfig::load(None, Some("paper-profile")).unwrap();
    assert_eq!(paper.model, ModelConfig::paper_profile());
    assert_eq!(paper.train, TrainConfig::default());

    let file = dir.path().join("c.json");
    fs::write(&file, r#"{"profile": "default", "model": {"lambda_uel": 0.5}, "train": {"epochs": 3}}"#).unwrap();
    let c = ResolvedConfig::load(Some(&file), None).unwrap();
    assert_eq!(c.profile, "default");
    assert_eq!(c.model.lambda_uel, 0.5);
    assert_eq!(c.model.backbone_channels, ModelConfig::default().backbone_channels);
    assert_eq!(c.train.epochs, 3);
    assert_eq!(c.train.lr, TrainConfig::default().lr);
    // The flag wins over the file's profile key.
    let c = ResolvedConfig::load(Some(&file), Some("desk")).unwrap();
    assert_eq!(c.profile, "desk");
    assert_eq!(c.model.backbone_channels, ModelConfig::desk().backbone_channels);

    fs::write(&file, r#"{"modle": {}}"#).unwrap();
    let err = ResolvedConfig::load(Some(&file), None).unwrap_err();
    assert!(format!("{err:#}").contains("modle"), "{err:#}");
    fs::write(&file, r#"{"train": {"epochs": 0}}"#).unwrap();
    assert!(ResolvedConfig::load(Some(&file), None).is_err());
    fs::write(&file, "[1, 2]").unwrap();
    assert!(ResolvedConfig::load(Some(&file), None).is_err());
    assert!(ResolvedConfig::load(None, Some("gpu")).is_err());
}

#[test]
fn banner_round_trips() {
    let c = ResolvedConfig::load(None, None).unwrap();
    let banner = c.banner();
    let json = banner.strip_prefix("resolved config:\n").unwrap();
    let back: ResolvedConfig = serde_json::from_str(json).unwrap();
    assert_eq!(back, c);
}

#[test]
fn eval_writes_protocol_csvs_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = dir.path().join("data");
    assert_eq!(run(&["gen-data", "--config", s(&cfg), "--out", s(&data)]), EXIT_OK);
    let ckpt = dir.path().join("model.json");
    untrained_checkpoint(&data, &ckpt, "full");

    let (a, b) = (dir.path().join("eval_a"), dir.path().join("eval_b"));
    for out in [&a, &b] {
        let code = run(&["eval", "--config", s(&cfg), "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(out), "--seed", "4"]);
        assert_eq!(code, EXIT_OK);
    }
    for name in ["full_runs.csv", "full_summary.csv", "full_per_class.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let mut runs = csv::Reader::from_path(a.join("full_runs.csv")).unwrap();
    assert_eq!(runs.headers().unwrap(), vec!["clicks", "session", "map"]);
    assert_eq!(runs.records().count(), 21 * 2);
    let mut summary = csv::Reader::from_path(a.join("full_summary.csv")).unwrap();
    assert_eq!(summary.headers().unwrap(), vec!["clicks", "mean", "std"]);
    let clicks: Vec<usize> = summary.records().map(|r| r.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(clicks, (0..=20).collect::<Vec<_>>());

    // The checkpoint's variant must match an explicit --variant.
    let code = run(&["eval", "--config", s(&cfg), "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&a), "--variant", "no_uel"]);
    assert_eq!(code, EXIT_FAILURE);
}

#[test]
fn passthrough_eval_runs_on_detector_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = dir.path().join("data");
    assert_eq!(run(&["gen-data", "--config", s(&cfg), "--out", s(&data)]), EXIT_OK);
    let ckpt = dir.path().join("det.json");
    untrained_checkpoint(&data, &ckpt, "detector_only");
    let out = dir.path().join("eval");
    let code = run(&["eval", "--config", s(&cfg), "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&out), "--variant", "passthrough", "--sessions", "1", "--max-clicks", "3"]);
    assert_eq!(code, EXIT_OK);
    let rows = csv::Reader::from_path(out.join("passthrough_summary.csv")).unwrap().records().count();
    assert_eq!(rows, 4);
    let echoed: Value = serde_json::from_slice(&fs::read(out.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(echoed["eval"]["sessions"], 1);
    assert_eq!(echoed["eval"]["max_clicks"], 3);
}

#[test]
fn train_then_ablate_reuses_matching_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = dir.path().join("data");
    assert_eq!(run(&["gen-data", "--config", s(&cfg), "--out", s(&data)]), EXIT_OK);

    let train_out = dir.path().join("train");
    assert_eq!(run(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&train_out), "--variant", "detector_only"]), EXIT_OK);
    assert!(train_out.join("final.json").exists());
    assert!(train_out.join("loss_log.csv").exists());

    let out = dir.path().join("ablate");
    let args = ["ablate", "--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--variants", "detector_only,passthrough", "--sessions", "1", "--max-clicks", "2"];
    assert_eq!(run(&args), EXIT_OK);
    let ckpt = out.join("checkpoints/detector_only/final.json");
    let stamp = fs::metadata(&ckpt).unwrap().modified().unwrap();
    let summary = fs::read_to_string(out.join("matrix_summary.csv")).unwrap();
    assert!(summary.contains("detector_only") && summary.contains("passthrough"), "{summary}");

    // Same configuration: the checkpoint is reused, not retrained.
    assert_eq!(run(&args), EXIT_OK);
    assert_eq!(fs::metadata(&ckpt).unwrap().modified().unwrap(), stamp);
    // Unknown method names are a failure before any training.
    let bad = ["ablate", "--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--variants", "full,magic"];
    assert_eq!(run(&bad), EXIT_FAILURE);
}

#[test]
fn gradcheck_subcommand_passes() {
    assert_eq!(run(&["gradcheck", "--seed", "3"]), EXIT_OK);
    assert_eq!(run(&["gradcheck", "--tolerance", "0"]), EXIT_FAILURE);
}

#[test]
fn import_dota_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = dir.path().join("data");
    assert_eq!(run(&["gen-data", "--config", s(&cfg), "--out", s(&data)]), EXIT_OK);
    let labels = dir.path().join("dota");
    fs::create_dir_all(&labels).unwrap();
    let meta = read_meta(&data).unwrap();
    let class = &meta.classes.names()[0];
    fs::write(labels.join("train_00000.txt"), format!("1 1 9 1 9 9 1 9 {class} 0\n")).unwrap();
    assert_eq!(run(&["import-dota", "--data", s(&labels), "--out", s(&data), "--split", "train"]), EXIT_OK);
    assert_eq!(run(&["import-dota", "--data", s(&labels), "--out", s(&data), "--split", "holdout"]), EXIT_USAGE);
}

fn json_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![any::<i32>().prop_map(Value::from), "[a-c]{0,2}".prop_map(Value::from), Just(Value::Null)];
    leaf.prop_recursive(3, 16, 3, |inner| prop::collection::btree_map("[a-d]", inner, 0..4).prop_map(|m| Value::Object(m.into_iter().collect())))
}

proptest! {
    #[test]
    fn merge_with_empty_is_identity(v in json_value()) {
        // An empty object patch leaves objects untouched (a non-object
        // value would be replaced, which is why it is wrapped).
        let v = json!({ "root": v });
        let mut merged = v.clone();
        deep_merge(&mut merged, json!({}));
        prop_assert_eq!(merged, v);
    }

    #[test]
    fn merged_leaves_come_from_patch(base in json_value(), patch in json_value()) {
        let mut merged = base.clone();
        deep_merge(&mut merged, patch.clone());
        // Every leaf of the patch is present at the same path after merging.
        fn check(merged: &Value, patch: &Value) -> bool {
            match patch {
                Value::Object(p) if merged.is_object() => p.iter().all(|(k, v)| merged.get(k).is_some_and(|m| check(m, v))),
                other => merged == other,
            }
        }
        prop_assert!(check(&merged, &patch));
    }
}
