use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
batch_size = 32
score_batch_size = 32
synthetic_train_size = 120
synthetic_val_size = 40
initial_blocks = 2
initial_channels = 4
head_channels = 2
hidden_units = 8
"#;

fn secnn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_secnn"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_smoke_writes_checkpoints_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = secnn(
        &["train", "--config", &cfg, "--dataset", "synthetic:separable-blobs", "--epochs", "5", "--out", "run"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let run = tmp.path().join("run");
    let checkpoints = ["best", "final"].iter().filter(|d| run.join(d).join("manifest.json").exists()).count();
    assert!(checkpoints >= 1);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Parameters at Highest Accuracy"));
    assert_eq!(stderr(&out).lines().filter(|l| l.starts_with("epoch")).count(), 5);
}

#[test]
fn same_seed_gives_byte_identical_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "dataset = \"synthetic:striped-patterns\"\nepochs = 4\ntau = 1.0001\ncooldown_epochs = 1\n");
    for out in ["a", "b"] {
        let o = secnn(&["train", "--config", &cfg, "--seed", "1", "--out", out], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(tmp.path().join("a/metrics.jsonl")).unwrap();
    let b = fs::read(tmp.path().join("b/metrics.jsonl")).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8_lossy(&a).contains("\"applied\":true"));
    let o = secnn(&["train", "--config", &cfg, "--seed", "2", "--out", "c"], tmp.path());
    assert!(o.status.success());
    assert_ne!(fs::read(tmp.path().join("c/metrics.jsonl")).unwrap(), a);
}

#[test]
fn missing_dataset_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = secnn(&["train", "--dataset", "/definitely/not/here", "--epochs", "1", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/definitely/not/here"), "{}", stderr(&o));

    let o = secnn(&["train", "--epochs", "1", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_configuration_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "not_a_key = 3\n");
    let o = secnn(&["train", "--config", &cfg, "--dataset", "synthetic:separable-blobs"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not_a_key"), "{}", stderr(&o));

    let o = secnn(&["train", "--dataset", "synthetic:separable-blobs", "--set", "tau=0.5"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_and_evaluate_read_a_finished_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "dataset = \"synthetic:separable-blobs\"\n");
    let o = secnn(&["train", "--config", &cfg, "--epochs", "2", "--out", "run"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let o = secnn(&["report", "run"], tmp.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for label in [
        "Val Accuracy (at 70%)",
        "Val Accuracy (at 80%)",
        "Highest Val Accuracy (%)",
        "Parameters at Highest Accuracy",
    ] {
        assert!(text.contains(label), "{text}");
    }
    assert!(text.contains("2 epochs"));

    let o = secnn(&["evaluate", "--checkpoint", "run/final", "--config", &cfg], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("val_accuracy"));

    let o = secnn(&["report", "nowhere"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}
