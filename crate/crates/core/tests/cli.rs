mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wbcnet::cli::{
    cmd_augment, cmd_eval, cmd_predict, cmd_train, EvalConfig, Precision, RunConfig, CHECKPOINT_FILE, CONFUSION_FILE,
    EPOCHS_FILE, MANIFEST_FILE, REPORT_FILE,
};
use wbcnet::data::{read_manifest, Split};
use wbcnet::Error;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wbcnet"))
}

fn quick_config(data: &Path, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(data, out);
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.threads = 1;
    cfg
}

#[test]
fn train_writes_all_artifacts_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::write_tree(&data, 4, 100, "bmp", 1);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let summary = cmd_train(&quick_config(&data, &a)).unwrap();
    assert_eq!(summary.best_epoch, 1);
    for f in [CHECKPOINT_FILE, EPOCHS_FILE, MANIFEST_FILE] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let epochs = fs::read_to_string(a.join(EPOCHS_FILE)).unwrap();
    assert_eq!(epochs.lines().count(), 2);
    assert!(epochs.starts_with("epoch,train_loss,train_acc,val_loss,val_acc,seconds\n"));

    cmd_train(&quick_config(&data, &b)).unwrap();
    assert_eq!(epochs, fs::read_to_string(b.join(EPOCHS_FILE)).unwrap());
    assert_eq!(
        fs::read(a.join(CHECKPOINT_FILE)).unwrap(),
        fs::read(b.join(CHECKPOINT_FILE)).unwrap()
    );
}

#[test]
fn eval_reads_only_the_requested_subset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::write_tree(&data, 10, 100, "bmp", 2);
    let out = dir.path().join("run");
    cmd_train(&quick_config(&data, &out)).unwrap();

    // Removing every train and validation image must not affect test scoring.
    let rows = read_manifest(&out.join(MANIFEST_FILE)).unwrap();
    for row in rows.iter().filter(|r| r.split != Split::Test) {
        fs::remove_file(&row.path).unwrap();
    }
    let eval = cmd_eval(&EvalConfig::with_manifest(
        out.join(CHECKPOINT_FILE),
        out.join(MANIFEST_FILE),
        &out,
    ))
    .unwrap();
    assert_eq!(eval.matrix.total(), 4);
    for class in 0..4 {
        let expected = rows
            .iter()
            .filter(|r| r.split == Split::Test && r.class == common::CLASSES[class])
            .count() as u64;
        assert_eq!(eval.matrix.row_sum(class), expected);
    }
    let confusion = fs::read_to_string(out.join(CONFUSION_FILE)).unwrap();
    assert_eq!(confusion.lines().count(), 5);
    let report = fs::read_to_string(out.join(REPORT_FILE)).unwrap();
    assert!(report.starts_with("class,precision,recall,f_measure,ovr_accuracy\n"));
    assert!(report.contains("overall_accuracy,"));
    assert!(eval.text.contains("overall accuracy (trace/total)"));

    // The training subset is gone, so asking for it is a data error.
    let mut cfg = EvalConfig::with_manifest(out.join(CHECKPOINT_FILE), out.join(MANIFEST_FILE), &out);
    cfg.subset = Split::Train;
    assert!(cmd_eval(&cfg).is_err());
}

#[test]
fn predict_resizes_and_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::write_tree(&data, 4, 100, "bmp", 3);
    let out = dir.path().join("run");
    cmd_train(&quick_config(&data, &out)).unwrap();

    let image = dir.path().join("cell.jpg");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    common::blob_image(2, 320, 240, &mut rng).save(&image).unwrap();
    let ckpt = out.join(CHECKPOINT_FILE);
    let first = cmd_predict(&ckpt, &image, Precision::F32).unwrap();
    let second = cmd_predict(&ckpt, &image, Precision::F32).unwrap();
    assert_eq!(first.text, second.text);
    assert_eq!(first.probabilities.len(), 4);
    let printed: f64 = first
        .text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(' ').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((printed - 1.0).abs() <= 1e-4, "{printed}");
    assert!(common::CLASSES.contains(&first.class_name.as_str()));

    let garbage = dir.path().join("broken.jpg");
    fs::write(&garbage, b"not an image").unwrap();
    assert!(cmd_predict(&ckpt, &garbage, Precision::F32).is_err());
}

#[test]
fn augment_quadruples_and_refuses_collisions() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("in");
    common::write_tree(&src, 3, 12, "bmp", 4);
    let out = dir.path().join("out");
    assert_eq!(cmd_augment(&src, &out).unwrap(), 48);
    let files = common::files_under(&out);
    assert_eq!(files.len(), 48);
    let eos = out.join("EOSINOPHIL");
    for name in ["img_000.bmp", "img_000_r90.bmp", "img_000_r180.bmp", "img_000_r270.bmp"] {
        assert!(eos.join(name).is_file(), "{name}");
    }
    assert!(matches!(cmd_augment(&src, &out), Err(Error::Input(_))));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(cmd_augment(&empty, &dir.path().join("empty_out")).unwrap(), 0);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let status = |args: &[&str]| bin().args(args).output().unwrap().status.code();
    assert_eq!(status(&["--help"]), Some(0));
    assert_eq!(status(&["--version"]), Some(0));
    assert_eq!(status(&["train", "--data-root", "x"]), Some(1));
    assert_eq!(
        status(&["train", "--data-root", "x", "--out", "y", "--split", "0.5,0.5,0.5"]),
        Some(1)
    );

    let missing = dir.path().join("missing").display().to_string();
    let out = dir.path().join("out").display().to_string();
    assert_eq!(status(&["train", "--data-root", &missing, "--out", &out]), Some(2));

    let garbage = dir.path().join("x.bmp");
    fs::write(&garbage, b"BMgarbage").unwrap();
    let g = garbage.display().to_string();
    assert_eq!(status(&["predict", "--checkpoint", &g, &g]), Some(2));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let e = empty.display().to_string();
    let eo = dir.path().join("empty_out").display().to_string();
    assert_eq!(status(&["augment", "--data-root", &e, "--out", &eo]), Some(0));
}

#[test]
fn binary_train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::write_tree(&data, 10, 100, "jpg", 5);
    let out = dir.path().join("run");
    let (d, o) = (data.display().to_string(), out.display().to_string());
    let run = |args: &[&str]| {
        let output = bin().args(args).env("RUST_LOG", "warn").output().unwrap();
        assert!(
            output.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        String::from_utf8(output.stdout).unwrap()
    };
    run(&[
        "train",
        "--data-root",
        &d,
        "--out",
        &o,
        "--epochs",
        "1",
        "--batch-size",
        "8",
        "--workers",
        "1",
    ]);
    let ckpt = out.join(CHECKPOINT_FILE).display().to_string();
    let manifest = out.join(MANIFEST_FILE).display().to_string();
    let text = run(&[
        "eval",
        "--checkpoint",
        &ckpt,
        "--manifest",
        &manifest,
        "--out",
        &o,
        "--compare",
        "kaggle=0.9957",
    ]);
    assert!(text.contains("reference kaggle: 0.9957"), "{text}");
    let image = data.join("MONOCYTE").join("img_000.jpg").display().to_string();
    let text = run(&["predict", "--checkpoint", &ckpt, &image]);
    assert_eq!(text.lines().count(), 5);
}
