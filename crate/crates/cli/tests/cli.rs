//! End-to-end behavior of the `advtag` binary and command functions: exit
//! codes, file outputs, and round-trips between commands.

use std::fs;
use std::path::Path;
use std::process::Command;

use advtag_cli::{cmd_generate, cmd_tag, cmd_train, Format, TrainOptions};
use advtag::config::FileConfig;
use advtag::data::parse_conllu;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_advtag"))
}

fn tiny_config() -> FileConfig {
    FileConfig::parse(
        r#"
arch = "custom"
word_dim = 8
char_dim = 4
char_hidden = 4
word_hidden = 8
max_epochs = 30
patience = 30
dropout = 0.1
"#,
    )
    .unwrap()
}

fn generate_data(dir: &Path) {
    cmd_generate(dir, 4, 60, 260, 8, 5, Some((200, 30, 30))).unwrap();
}

#[test]
fn missing_config_exits_with_usage_code() {
    let out = binary()
        .args(["train", "--train", "x.conllu", "--dev", "y.conllu", "--out", "/tmp/nowhere"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--config"), "stderr: {}", stderr);
}

#[test]
fn unreadable_config_exits_with_usage_code() {
    let out = binary()
        .args([
            "train",
            "--config",
            "/definitely/not/here.toml",
            "--train",
            "x",
            "--dev",
            "y",
            "--out",
            "/tmp/nowhere",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_exits_with_usage_code() {
    let out = binary().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_checkpoint_log_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    generate_data(tmp.path());
    let mut config = tiny_config();
    config.max_epochs = 2;
    let opts = TrainOptions::new(
        config,
        tmp.path().join("train.conllu"),
        tmp.path().join("dev.conllu"),
        tmp.path().join("run"),
    );
    let manifest = cmd_train(&opts).unwrap();
    assert!(tmp.path().join("run/checkpoint.json").exists());
    assert!(tmp.path().join("run/epochs.jsonl").exists());
    assert!(tmp.path().join("run/manifest.json").exists());
    assert_eq!(manifest.epochs_run, 2);
    assert!(!manifest.config.adversarial_enabled);

    // every log line carries the full schema
    let log = fs::read_to_string(tmp.path().join("run/epochs.jsonl")).unwrap();
    for line in log.lines() {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "lr", "train_loss", "dev_loss", "dev_accuracy"] {
            assert!(value.get(key).is_some());
        }
    }
}

#[test]
fn adversarial_flag_switches_training_path() {
    let tmp = tempfile::tempdir().unwrap();
    generate_data(tmp.path());
    let mut config = tiny_config();
    config.max_epochs = 2;
    config.adversarial_enabled = true;
    config.alpha = 0.05;
    let opts = TrainOptions::new(
        config.clone(),
        tmp.path().join("train.conllu"),
        tmp.path().join("dev.conllu"),
        tmp.path().join("adv"),
    );
    let manifest = cmd_train(&opts).unwrap();
    assert!(manifest.config.adversarial_enabled);

    let mut baseline_cfg = config;
    baseline_cfg.adversarial_enabled = false;
    let opts = TrainOptions::new(
        baseline_cfg,
        tmp.path().join("train.conllu"),
        tmp.path().join("dev.conllu"),
        tmp.path().join("base"),
    );
    cmd_train(&opts).unwrap();
    // a real perturbation changes the trajectory
    let adv = fs::read_to_string(tmp.path().join("adv/checkpoint.json")).unwrap();
    let base = fs::read_to_string(tmp.path().join("base/checkpoint.json")).unwrap();
    assert_ne!(adv, base);
}

#[test]
fn tagging_the_overfit_training_file_matches_gold() {
    let tmp = tempfile::tempdir().unwrap();
    cmd_generate(tmp.path(), 3, 30, 40, 6, 9, Some((30, 5, 5))).unwrap();
    let opts = TrainOptions::new(
        tiny_config(),
        tmp.path().join("train.conllu"),
        tmp.path().join("train.conllu"),
        tmp.path().join("run"),
    );
    let manifest = cmd_train(&opts).unwrap();
    assert_eq!(manifest.best_dev_accuracy, 1.0, "failed to overfit: {:?}", manifest);

    let tagged = tmp.path().join("tagged.conllu");
    cmd_tag(
        &tmp.path().join("run/checkpoint.json"),
        &tmp.path().join("train.conllu"),
        &tagged,
        Format::Conllu,
        0,
        1,
    )
    .unwrap();
    let gold = parse_conllu(&fs::read_to_string(tmp.path().join("train.conllu")).unwrap(), "gold")
        .unwrap();
    let predicted = parse_conllu(&fs::read_to_string(&tagged).unwrap(), "pred").unwrap();
    assert_eq!(gold, predicted);
}

#[test]
fn tagging_an_empty_input_yields_an_empty_output() {
    let tmp = tempfile::tempdir().unwrap();
    generate_data(tmp.path());
    let mut config = tiny_config();
    config.max_epochs = 1;
    let opts = TrainOptions::new(
        config,
        tmp.path().join("train.conllu"),
        tmp.path().join("dev.conllu"),
        tmp.path().join("run"),
    );
    cmd_train(&opts).unwrap();

    let empty = tmp.path().join("empty.conllu");
    fs::write(&empty, "").unwrap();
    let out_path = tmp.path().join("out.conllu");
    let status = binary()
        .args([
            "tag",
            "--checkpoint",
            tmp.path().join("run/checkpoint.json").to_str().unwrap(),
            "--input",
            empty.to_str().unwrap(),
            "--output",
            out_path.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(fs::read_to_string(&out_path).unwrap(), "");
}

#[test]
fn eval_prints_two_decimal_accuracy_and_bucket_table() {
    let tmp = tempfile::tempdir().unwrap();
    generate_data(tmp.path());
    let mut config = tiny_config();
    config.max_epochs = 3;
    let opts = TrainOptions::new(
        config,
        tmp.path().join("train.conllu"),
        tmp.path().join("dev.conllu"),
        tmp.path().join("run"),
    );
    cmd_train(&opts).unwrap();

    let out = binary()
        .args([
            "eval",
            "--checkpoint",
            tmp.path().join("run/checkpoint.json").to_str().unwrap(),
            "--gold",
            tmp.path().join("test.conllu").to_str().unwrap(),
            "--report",
            tmp.path().join("report.jsonl").to_str().unwrap(),
            "--buckets",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let accuracy_line =
        stdout.lines().find(|l| l.starts_with("Token accuracy:")).expect("summary line");
    let value = accuracy_line.split_whitespace().last().unwrap();
    let (_, decimals) = value.split_once('.').expect("decimal point");
    assert_eq!(decimals.len(), 2, "accuracy {:?} not 2-decimal", value);
    for label in ["Word Frequency", "0", "1-10", "10-100", "100-", "Total"] {
        assert!(stdout.contains(label), "missing {:?} in:\n{}", label, stdout);
    }
}

#[test]
fn tightness_requires_gold_tags() {
    let tmp = tempfile::tempdir().unwrap();
    generate_data(tmp.path());
    let mut config = tiny_config();
    config.max_epochs = 1;
    let opts = TrainOptions::new(
        config,
        tmp.path().join("train.conllu"),
        tmp.path().join("dev.conllu"),
        tmp.path().join("run"),
    );
    cmd_train(&opts).unwrap();

    // CoNLL-U with placeholder tags only
    let untagged = tmp.path().join("untagged.conllu");
    fs::write(&untagged, "1\tword\t_\t_\t_\t_\t_\t_\t_\t_\n").unwrap();
    let out = binary()
        .args([
            "eval",
            "--checkpoint",
            tmp.path().join("run/checkpoint.json").to_str().unwrap(),
            "--gold",
            untagged.to_str().unwrap(),
            "--report",
            tmp.path().join("report.jsonl").to_str().unwrap(),
            "--tightness",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("gold tags"), "stderr: {}", stderr);
}

#[test]
fn generate_splits_are_readable() {
    let tmp = tempfile::tempdir().unwrap();
    let status = binary()
        .args([
            "generate",
            "--out",
            tmp.path().to_str().unwrap(),
            "--tags",
            "4",
            "--lexicon",
            "50",
            "--sentences",
            "120",
            "--splits",
            "100,10,10",
            "--seed",
            "2",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    for (name, expected) in [("train.conllu", 100), ("dev.conllu", 10), ("test.conllu", 10)] {
        let corpus =
            parse_conllu(&fs::read_to_string(tmp.path().join(name)).unwrap(), name).unwrap();
        assert_eq!(corpus.len(), expected);
    }
}
