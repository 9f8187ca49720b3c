use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn segattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segattn")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec![
        "train", "--size", "16", "--train-count", "3", "--test-count", "2", "--epochs", "2", "--base-channels", "2", "--out", out,
    ];
    args.extend_from_slice(extra);
    segattn(&args)
}

#[test]
fn train_writes_checkpoint_manifest_and_losses() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("gan");
    let o = train(&run, &["--disc", "d6", "--lambda-adv", "0.2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(run.join("model.manifest")).unwrap();
    assert!(manifest.contains("name=GAN + D-6\n"));
    assert!(manifest.contains("status=complete\n"));
    assert!(manifest.contains("# lambda_adv=0.2\n"));
    assert!(!manifest.lines().any(|l| l.starts_with("# out=")));
    let losses = fs::read_to_string(run.join("loss.csv")).unwrap();
    let rows: Vec<&str> = losses.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1].split(',').count(), 5);
    assert!(rows[1].split(',').all(|f| !f.is_empty()));
    assert!(run.join("model.ckpt").is_file());
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\nepochs = 1\nname = from-file\narch = attention_unet\n").unwrap();
    let run = dir.path().join("r");
    let o = train(&run, &["--config", cfg.to_str().unwrap(), "--name", "from-flag"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(run.join("model.manifest")).unwrap();
    // The explicit --epochs 2 flag wins over the file.
    assert!(manifest.contains("epochs_completed=2\n"));
    assert!(manifest.contains("name=from-flag\n"));
    assert!(manifest.contains("arch=attention_unet\n"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    for extra in [
        vec!["--arch", "resnet"],
        vec!["--size", "20"],
        vec!["--lr", "-1"],
        vec!["--batch-size", "0"],
        vec!["--disc", "d9"],
        vec!["--shuffle", "maybe"],
    ] {
        let o = train(&out, &extra);
        assert_eq!(code(&o), 1, "{extra:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs=1\nlearning_rate=0.1\n").unwrap();
    let o = segattn(&["train", "--config", cfg.to_str().unwrap(), "--out", "x"]);
    assert_eq!(code(&o), 1);
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("bad.cfg:2") && msg.contains("learning_rate"), "{msg}");
    assert_eq!(code(&segattn(&["gradcheck", "--components", "nope"])), 1);
    assert_eq!(code(&segattn(&["frobnicate"])), 1);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    let o = segattn(&["evaluate", "--checkpoints", missing.to_str().unwrap(), "--out", "x"]);
    assert_eq!(code(&o), 2);
    let o = train(&dir.path().join("m"), &["--data", dir.path().join("nope.tsv").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn compare_rejects_mixed_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&train(&a, &[])), 0);
    assert_eq!(code(&train(&b, &["--data-seed", "9", "--arch", "attention_unet"])), 0);
    let list = format!("{},{}", a.join("model.ckpt").display(), b.join("model.ckpt").display());
    let o = segattn(&["compare", "--checkpoints", &list, "--out", dir.path().join("c").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("data_seed"));
    let o = segattn(&["compare", "--checkpoints", &format!("{},{}", a.join("model.ckpt").display(), a.join("model.ckpt").display()), "--out", "c"]);
    assert_eq!(code(&o), 1, "duplicate names");
}

#[test]
fn evaluate_dumps_predictions_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("u");
    assert_eq!(code(&train(&run, &[])), 0);
    let out = dir.path().join("eval");
    let o = segattn(&[
        "evaluate", "--checkpoints", run.join("model.ckpt").to_str().unwrap(), "--dump", "true", "--best-k", "9",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.contains("# best_k=9"));
    assert!(report.contains("U-net,best2,"), "best-k clamps to the 2 test images");
    assert_eq!(fs::read_dir(out.join("pred/u_net")).unwrap().count(), 2);
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    assert!(table.lines().last().unwrap().starts_with("U-net,"));
}

#[test]
fn synth_dataset_trains_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = segattn(&["synth", "--style", "blobs", "--size", "16x32", "--train-count", "2", "--test-count", "1", "--out", data.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let manifest = data.join("manifest.tsv");
    assert!(manifest.is_file());
    assert_eq!(fs::read_dir(&data).unwrap().count(), 7);
    let run = dir.path().join("m");
    let o = segattn(&[
        "train", "--data", manifest.to_str().unwrap(), "--size", "16x32", "--epochs", "1", "--base-channels", "2",
        "--out", run.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = segattn(&["evaluate", "--checkpoints", run.join("model.ckpt").to_str().unwrap(), "--out", dir.path().join("e").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradcheck_subset_passes() {
    let o = segattn(&["gradcheck", "--seeds", "2", "--components", "relu,sigmoid"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 3, "{text}");
}
