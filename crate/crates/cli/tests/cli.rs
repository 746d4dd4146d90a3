use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aggronet::model::{build, load_checkpoint, HybridSpec, Model};

const BIN: &str = env!("CARGO_BIN_EXE_aggronet");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("AGGRONET_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) {
    fs::write(dir.join("c.toml"), text).unwrap();
}

const SMALL: &str = r#"
seed = 3
[synth]
per_class = 8
classes = 3
size = 16
[model]
input_size = [16, 16]
[train]
epochs = 2
batch_size = 8
[split.counts]
train = 16
val = 4
test = 4
"#;

fn count_files(root: &Path) -> usize {
    fs::read_dir(root)
        .unwrap()
        .map(|e| fs::read_dir(e.unwrap().path()).unwrap().count())
        .sum()
}

#[test]
fn missing_data_source_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("data:"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[synth]\n[train]\nepoch = 3\n");
    let o = run(dir.path(), &["train", "--config", "c.toml"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("epoch"));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    let o = Command::new(BIN)
        .args(["train", "--config", "c.toml"])
        .current_dir(dir.path())
        .env("AGGRONET_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn synth_writes_the_tree_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[synth]\nper_class = 100\nclasses = 8\nsize = 16\n");
    for out in ["a", "b"] {
        assert_eq!(
            code(&run(dir.path(), &["synth", "--config", "c.toml", "--out", out])),
            0
        );
    }
    let a = dir.path().join("a");
    assert_eq!(fs::read_dir(&a).unwrap().count(), 8);
    assert_eq!(count_files(&a), 800);
    for class in fs::read_dir(&a).unwrap() {
        let class = class.unwrap().path();
        for f in fs::read_dir(&class).unwrap() {
            let f = f.unwrap().path();
            let twin = dir.path().join("b").join(f.strip_prefix(&a).unwrap());
            assert_eq!(fs::read(&f).unwrap(), fs::read(twin).unwrap());
        }
    }
}

#[test]
fn synth_at_corpus_scale() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[synth]\nper_class = 565\nclasses = 8\nsize = 8\n");
    assert_eq!(
        code(&run(dir.path(), &["synth", "--config", "c.toml", "--out", "d"])),
        0
    );
    assert_eq!(count_files(&dir.path().join("d")), 4520);
}

#[test]
fn zero_epochs_writes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    let o = run(dir.path(), &["train", "--config", "c.toml", "--epochs", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let loaded: Model = load_checkpoint(dir.path().join("run/checkpoint")).unwrap();
    let spec = HybridSpec {
        input_size: [16, 16],
        ..HybridSpec::desk(3)
    };
    let mut fresh = build(&spec, 3).unwrap();
    fresh
        .set_class_names(vec!["class_0".into(), "class_1".into(), "class_2".into()])
        .unwrap();
    assert_eq!(loaded, fresh);
    let history = fs::read_to_string(dir.path().join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1);
}

#[test]
fn train_writes_history_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    let o = run(
        dir.path(),
        &["train", "--config", "c.toml", "--epochs", "3", "--out", "r"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = dir.path().join("r");
    let csv = fs::read_to_string(r.join("history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for line in csv.lines().skip(1) {
        let val_acc: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!(val_acc.is_finite());
    }
    let history: serde_json::Value = serde_json::from_slice(&fs::read(r.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["val_accuracy"].as_array().unwrap().len(), 3);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(r.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["train"]["epochs"], 3);
    assert_eq!(manifest["split"], serde_json::json!([16, 4, 4]));
    assert_eq!(manifest["input_hash"].as_str().unwrap().len(), 64);

    let report = run(dir.path(), &["report", "--out", "r"]);
    assert_eq!(code(&report), 0);
    assert!(fs::read_to_string(r.join("curves.svg")).unwrap().starts_with("<svg"));
    assert!(stdout(&report).contains("epochs: 3"));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    let o = run(
        dir.path(),
        &["train", "--config", "c.toml", "--base-lr", "1e30", "--epochs", "20"],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn eval_on_memorized_training_set_prints_full_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"
seed = 1
[synth]
per_class = 6
classes = 2
size = 16
[model]
input_size = [16, 16]
dropout_rate = 0.0
[train]
epochs = 40
batch_size = 10
base_lr = 0.003
[train.augment]
p_hflip = 0.0
max_rotation_deg = 0.0
max_zoom = 0.0
[split.counts]
train = 10
val = 2
test = 0
"#,
    );
    assert_eq!(code(&run(dir.path(), &["train", "--config", "c.toml"])), 0);
    let o = run(dir.path(), &["eval", "--config", "c.toml", "--partition", "train"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let acc = stdout(&o)
        .lines()
        .find(|l| l.trim_start().starts_with("accuracy"))
        .unwrap()
        .to_string();
    assert_eq!(acc.split_whitespace().collect::<Vec<_>>(), ["accuracy", "100%", "10"]);
    let empty = run(dir.path(), &["eval", "--config", "c.toml", "--partition", "test"]);
    assert_eq!(code(&empty), 2);
}

#[test]
fn eval_is_repeatable_and_checks_class_count() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    assert_eq!(code(&run(dir.path(), &["train", "--config", "c.toml"])), 0);
    let reports = dir.path().join("run/eval/test");
    assert_eq!(code(&run(dir.path(), &["eval", "--config", "c.toml"])), 0);
    let mut first: Vec<(String, Vec<u8>)> = fs::read_dir(&reports)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    first.sort();
    assert!(first.iter().any(|(n, _)| n == "report.json"));
    assert_eq!(code(&run(dir.path(), &["eval", "--config", "c.toml"])), 0);
    for (name, bytes) in &first {
        assert_eq!(&fs::read(reports.join(name)).unwrap(), bytes, "{name}");
    }

    write_config(
        dir.path(),
        &SMALL
            .replace("classes = 3", "classes = 4")
            .replace("per_class = 8", "per_class = 6"),
    );
    let o = run(
        dir.path(),
        &["eval", "--config", "c.toml", "--checkpoint", "run/checkpoint"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("4 classes"), "{}", stderr(&o));
}

#[test]
fn predict_prints_a_distribution_and_resizes() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    assert_eq!(
        code(&run(dir.path(), &["train", "--config", "c.toml", "--epochs", "1"])),
        0
    );
    write_config(dir.path(), &SMALL.replace("size = 16", "size = 24"));
    assert_eq!(
        code(&run(dir.path(), &["synth", "--config", "c.toml", "--out", "imgs"])),
        0
    );
    let o = run(
        dir.path(),
        &[
            "predict",
            "--checkpoint",
            "run/checkpoint",
            "imgs/class_1/class_1_00000.ppm",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("prediction: class_"));
    let total: f64 = out
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() <= 1e-4 * 3.0, "{out}");

    fs::write(dir.path().join("bad.ppm"), b"P6\n4 4\n255\nxx").unwrap();
    let o = run(dir.path(), &["predict", "--checkpoint", "run/checkpoint", "bad.ppm"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn trained_model_predicts_the_right_synthetic_class() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"
seed = 5
[synth]
per_class = 30
classes = 8
size = 16
[model]
input_size = [16, 16]
[train]
epochs = 10
batch_size = 16
base_lr = 0.003
"#,
    );
    let o = run(dir.path(), &["train", "--config", "c.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        code(&run(
            dir.path(),
            &["synth", "--config", "c.toml", "--seed", "99", "--out", "fresh"]
        )),
        0
    );
    let o = run(dir.path(), &["predict", "fresh/class_3/class_3_00000.ppm"]);
    assert!(stdout(&o).starts_with("prediction: class_3 "), "{}", stdout(&o));
}
