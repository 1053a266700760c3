//! End-to-end runs of the `dlsvm` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use dlsvm::cli::{EXIT_CONFIG, EXIT_FORMAT, EXIT_INPUT, EXIT_NUMERIC};

fn dlsvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlsvm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn dlsvm")
}

fn ok(args: &[&str]) -> String {
    let out = dlsvm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    dlsvm(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Four families of 8×8 textures, `per_class` images each.
fn image_tree(root: &Path, per_class: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (label, family) in ["Alpha.A", "Beta.B", "Gamma.C", "Delta.D"].iter().enumerate() {
        let dir = root.join(family);
        fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            let img = GrayImage::from_fn(8, 8, |x, y| {
                let on = match label {
                    0 => y % 4 < 2,
                    1 => x % 4 < 2,
                    2 => (x + y) % 4 < 2,
                    _ => x < 4,
                };
                let base: i32 = if on { 200 } else { 50 };
                image::Luma([(base + rng.random_range(-30..=30)) as u8])
            });
            img.save(dir.join(format!("{i:04}.png"))).unwrap();
        }
    }
}

struct Trained {
    dir: TempDir,
    ds: PathBuf,
    ckpt: PathBuf,
}

/// Image tree → dataset → small MLP, shared by the eval/predict tests.
fn trained_toy() -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("tree");
    image_tree(&tree, 128);
    let ds = dir.path().join("toy.ds");
    let ckpt = dir.path().join("toy.ckpt");
    ok(&[
        "preprocess",
        "--data",
        s(&tree),
        "--out",
        s(&ds),
        "--side",
        "8",
        "--ratio",
        "0.5",
        "--batch",
        "64",
    ]);
    ok(&[
        "train",
        "--model",
        "mlp-svm",
        "--dataset",
        s(&ds),
        "--out",
        s(&ckpt),
        "--epochs",
        "15",
        "--batch",
        "64",
        "--hidden",
        "32,16",
        "--no-timing",
    ]);
    Trained { dir, ds, ckpt }
}

#[test]
fn convert_fixed_width_auto_width_and_empty_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bins");
    fs::create_dir_all(input.join("fam")).unwrap();
    fs::write(input.join("fam/one_kib.bin"), vec![7u8; 1024]).unwrap();
    fs::write(input.join("fam/twenty_kib.bin"), vec![1u8; 20 * 1024]).unwrap();
    fs::write(input.join("fam/empty.bin"), b"").unwrap();
    let out = dir.path().join("imgs");

    let stdout = ok(&["convert", "--input", s(&input), "--output", s(&out), "--width", "32"]);
    assert!(stdout.contains("converted 2 of 3"), "{stdout}");
    let img = image::open(out.join("fam/one_kib.bin.png")).unwrap().into_luma8();
    assert_eq!(img.dimensions(), (32, 32));
    assert!(!out.join("fam/empty.bin.png").exists());

    let auto = dir.path().join("auto");
    ok(&["convert", "--input", s(&input), "--output", s(&auto)]);
    let manifest = fs::read_to_string(auto.join("manifest.csv")).unwrap();
    assert_eq!(
        manifest,
        "source,width,height\nfam/one_kib.bin,32,32\nfam/twenty_kib.bin,64,320\n"
    );
}

#[test]
fn convert_with_nothing_usable_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.bin");
    fs::write(&empty, b"").unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        code(&["convert", "--input", s(&empty), "--output", s(&out)]),
        i32::from(EXIT_INPUT)
    );
}

#[test]
fn preprocess_splits_512_samples_in_half_and_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("tree");
    image_tree(&tree, 128);
    let a = dir.path().join("a.ds");
    let b = dir.path().join("b.ds");
    let summary = ok(&[
        "preprocess",
        "--data",
        s(&tree),
        "--out",
        s(&a),
        "--ratio",
        "0.5",
        "--seed",
        "3",
    ]);
    assert!(summary.contains("families: 4"), "{summary}");
    assert!(summary.contains("  Alpha.A: 128"), "{summary}");
    assert!(summary.contains("samples: 512"), "{summary}");
    assert!(summary.contains("split: train 256 test 256 unused 0"), "{summary}");
    assert!(summary.contains("standardization checksum: "), "{summary}");
    ok(&[
        "preprocess",
        "--data",
        s(&tree),
        "--out",
        s(&b),
        "--ratio",
        "0.5",
        "--seed",
        "3",
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn train_uses_mlp_preset_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("toy.ds");
    ok(&[
        "synth",
        "--kind",
        "toy",
        "--samples",
        "512",
        "--out",
        s(&ds),
        "--ratio",
        "0.5",
    ]);
    let ckpt = dir.path().join("m.ckpt");
    let stdout = ok(&["train", "--model", "mlp-svm", "--dataset", s(&ds), "--out", s(&ckpt)]);
    assert!(stdout.contains("steps: 100 (total 100)"), "{stdout}");
    let bytes = fs::read(&ckpt).unwrap();
    let header = String::from_utf8_lossy(&bytes[..400]);
    for line in [
        "lr = 0.001\n",
        "c = 0.5\n",
        "batch = 256\n",
        "epochs = 100\n",
        "keep_prob = none\n",
        "hidden = 512 256 128\n",
    ] {
        assert!(header.contains(line), "missing {line:?}");
    }
}

#[test]
fn one_epoch_on_6400_training_samples_logs_25_steps() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("big.ds");
    let summary = ok(&[
        "synth",
        "--kind",
        "toy",
        "--samples",
        "9339",
        "--ratio",
        "0.7",
        "--out",
        s(&ds),
    ]);
    assert!(summary.contains("split: train 6400 test 2560 unused 379"), "{summary}");
    let log = dir.path().join("log.csv");
    ok(&[
        "train",
        "--model",
        "mlp-svm",
        "--dataset",
        s(&ds),
        "--out",
        s(&dir.path().join("c")),
        "--log",
        s(&log),
        "--epochs",
        "1",
        "--hidden",
        "8",
    ]);
    let text = fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,epoch,loss,batch_accuracy,wall_ms");
    assert_eq!(lines.len(), 26);
    assert!(lines[25].starts_with("25,0,"));
}

#[test]
fn blob_training_accuracy_reaches_095() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("blobs.ds");
    ok(&["synth", "--kind", "blobs", "--out", s(&ds)]);
    let stdout = ok(&[
        "train",
        "--model",
        "mlp-svm",
        "--dataset",
        s(&ds),
        "--out",
        s(&dir.path().join("c")),
        "--epochs",
        "20",
    ]);
    let acc: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("training accuracy (final epoch): "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(acc >= 0.95, "{stdout}");
}

#[test]
fn eval_writes_report_confusion_and_heatmap() {
    let t = trained_toy();
    let report = t.dir.path().join("report.csv");
    let confusion = t.dir.path().join("confusion.csv");
    let heatmap = t.dir.path().join("heatmap.svg");
    let stdout = ok(&[
        "eval",
        "--checkpoint",
        s(&t.ckpt),
        "--dataset",
        s(&t.ds),
        "--subset",
        "train",
        "--report",
        s(&report),
        "--confusion",
        s(&confusion),
        "--heatmap",
        s(&heatmap),
    ]);
    let acc: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("accuracy: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(acc >= 0.99, "{stdout}");
    assert!(stdout.contains("macro avg: precision"));

    let report = fs::read_to_string(report).unwrap();
    assert_eq!(report.lines().count(), 4 + 2 + 1);
    assert!(report.lines().last().unwrap().starts_with("weighted avg,"));

    // identity-dominant: each row's largest count sits on the diagonal
    let confusion = fs::read_to_string(confusion).unwrap();
    for (i, line) in confusion.lines().skip(1).enumerate() {
        let counts: Vec<u64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        let max = *counts.iter().max().unwrap();
        assert_eq!(counts[i], max, "{confusion}");
    }
    let svg = fs::read_to_string(heatmap).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

#[test]
fn eval_rejects_a_dataset_with_other_classes() {
    let t = trained_toy();
    let other = t.dir.path().join("other.ds");
    ok(&[
        "synth",
        "--kind",
        "toy",
        "--samples",
        "256",
        "--batch",
        "64",
        "--out",
        s(&other),
    ]);
    assert_eq!(
        code(&["eval", "--checkpoint", s(&t.ckpt), "--dataset", s(&other)]),
        i32::from(EXIT_CONFIG)
    );
}

#[test]
fn predict_returns_training_label_with_sorted_scores() {
    let t = trained_toy();
    let image = t.dir.path().join("tree/Gamma.C/0003.png");
    let first = ok(&["predict", "--checkpoint", s(&t.ckpt), "--input", s(&image)]);
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 1 + 4);
    assert_eq!(lines[0], "predicted: Gamma.C");
    assert!(lines[1].starts_with("Gamma.C\t"));
    let scores: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{first}");
    assert_eq!(
        first,
        ok(&["predict", "--checkpoint", s(&t.ckpt), "--input", s(&image)])
    );
}

#[test]
fn predict_reads_raw_binaries() {
    let t = trained_toy();
    let bin = t.dir.path().join("sample.exe");
    fs::write(&bin, (0..4096u32).map(|i| (i % 251) as u8).collect::<Vec<_>>()).unwrap();
    let out = ok(&[
        "predict",
        "--checkpoint",
        s(&t.ckpt),
        "--input",
        s(&bin),
        "--as",
        "binary",
    ]);
    assert_eq!(out.lines().count(), 5);
    assert_eq!(out, ok(&["predict", "--checkpoint", s(&t.ckpt), "--input", s(&bin)]));
}

#[test]
fn gradcheck_passes_each_mini_model() {
    for model in ["mlp-svm", "gru-svm", "cnn-svm"] {
        let out = ok(&["gradcheck", "--model", model, "--scale", "mini"]);
        assert!(out.contains("all gradients within"), "{out}");
        assert!(!out.contains("FAIL"));
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("toy.ds");
    let cfg = dir.path().join("run.conf");
    fs::write(
        &cfg,
        format!(
            "# toy run\nkind = toy\nsamples = 256\nbatch = 64\nout = {}\nseed = 5 # overridden below\n",
            ds.display()
        ),
    )
    .unwrap();
    let summary = ok(&["--config", s(&cfg), "synth", "--seed", "9"]);
    assert!(summary.contains("samples: 256"), "{summary}");
    let direct = dir.path().join("direct.ds");
    ok(&[
        "synth",
        "--kind",
        "toy",
        "--samples",
        "256",
        "--batch",
        "64",
        "--seed",
        "9",
        "--out",
        s(&direct),
    ]);
    assert_eq!(fs::read(&ds).unwrap(), fs::read(&direct).unwrap());

    // the settings echo goes to the info log, which RUST_LOG would override
    let out = Command::new(env!("CARGO_BIN_EXE_dlsvm"))
        .args(["--config", s(&cfg), "synth", "--seed", "9"])
        .env_remove("RUST_LOG")
        .output()
        .unwrap();
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains("seed = 9 (flag)"), "{log}");
    assert!(log.contains("samples = 256 (config)"), "{log}");
    assert!(log.contains("fit-on = train (default)"), "{log}");

    fs::write(&cfg, "samples = lots\n").unwrap();
    assert_eq!(
        code(&["--config", s(&cfg), "synth", "--out", s(&ds)]),
        i32::from(EXIT_CONFIG)
    );
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("toy.ds");
    ok(&[
        "synth",
        "--kind",
        "toy",
        "--samples",
        "256",
        "--batch",
        "64",
        "--out",
        s(&ds),
    ]);
    let ckpt = dir.path().join("c.ckpt");

    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"DLSVM1\nversion = 9\nend\n").unwrap();
    assert_eq!(
        code(&["eval", "--checkpoint", s(&bad), "--dataset", s(&ds)]),
        i32::from(EXIT_FORMAT)
    );
    assert_eq!(
        code(&["preprocess", "--data", s(&dir.path().join("nope")), "--out", s(&ckpt)]),
        i32::from(EXIT_INPUT)
    );
    assert_eq!(
        code(&["train", "--model", "svm-svm", "--dataset", s(&ds), "--out", s(&ckpt)]),
        i32::from(EXIT_CONFIG)
    );
    assert_eq!(
        code(&[
            "train",
            "--model",
            "mlp-svm",
            "--dataset",
            s(&ds),
            "--out",
            s(&ckpt),
            "--lr",
            "1e38",
            "--batch",
            "64",
            "--hidden",
            "4"
        ]),
        i32::from(EXIT_NUMERIC)
    );
    assert!(!ckpt.exists());
    assert_eq!(code(&["train", "--no-such-flag"]), 2);
}

#[test]
fn resume_continues_to_the_same_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("toy.ds");
    ok(&[
        "synth",
        "--kind",
        "toy",
        "--samples",
        "256",
        "--batch",
        "64",
        "--out",
        s(&ds),
    ]);
    let common = ["--model", "gru-svm", "--hidden", "6", "--batch", "64", "--no-timing"];
    let full = dir.path().join("full.ckpt");
    let half = dir.path().join("half.ckpt");
    let resumed = dir.path().join("resumed.ckpt");
    let mut args = vec!["train", "--dataset", s(&ds), "--out", s(&full), "--epochs", "4"];
    args.extend(common);
    ok(&args);
    let mut args = vec!["train", "--dataset", s(&ds), "--out", s(&half), "--epochs", "2"];
    args.extend(common);
    ok(&args);
    ok(&[
        "train",
        "--dataset",
        s(&ds),
        "--resume",
        s(&half),
        "--out",
        s(&resumed),
        "--epochs",
        "4",
    ]);
    assert_eq!(fs::read(full).unwrap(), fs::read(resumed).unwrap());
}
