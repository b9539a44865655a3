use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcnet"))
        .args(args)
        .env_remove("DCNET_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn train_small(out_dir: &Path, extra: &[&str]) -> Output {
    let out = out_dir.to_str().unwrap();
    let mut args = vec!["train", "--synth", "xor_blobs", "--n", "40", "--attrs", "4", "--quiet", "--no-timing", "--out", out];
    args.extend_from_slice(extra);
    dcnet(&args)
}

#[test]
fn train_writes_nine_epochs_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), &["--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).starts_with("test_top1 "));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.contains(",test_top1,") && r.ends_with(",0")));
    assert!(dir.path().join("model.dcn").exists() && dir.path().join("norm_stats.csv").exists());
    // Synthetic labels are already indices, so there is no label vocabulary to keep.
    assert!(!dir.path().join("classes.txt").exists());
}

#[test]
fn eval_reads_the_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_small(dir.path(), &["--epochs", "1", "--decay-every", "1"])), 0);
    let model = dir.path().join("model.dcn");
    let out = dcnet(&["eval", "--model", model.to_str().unwrap(), "--synth", "xor_blobs", "--n", "30", "--attrs", "4"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).starts_with("top1 ") && stdout(&out).contains("(n=30)"));
}

#[test]
fn csv_training_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let out = dcnet(&["synth", "--kind", "two-rings", "--n", "60", "--attrs", "3", "--out", data.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().count(), 61);

    let run_dir = dir.path().join("run");
    let args = ["train", "--train-csv", data.to_str().unwrap(), "--header", "--classes", "2", "--epochs", "1"];
    let out = dcnet(&[&args[..], &["--decay-every", "1", "--quiet", "--out", run_dir.to_str().unwrap()]].concat());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(run_dir.join("classes.txt")).unwrap().lines().count(), 2);

    let missing = dir.path().join("nope.csv");
    let out = dcnet(&["train", "--train-csv", missing.to_str().unwrap(), "--classes", "2", "--out", run_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nope.csv"), "{}", stderr(&out));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2,0\n1,oops,1\n").unwrap();
    let out = dcnet(&["train", "--train-csv", bad.to_str().unwrap(), "--classes", "2", "--out", run_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("row 2"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    for args in [
        vec!["train", "--synth", "spirals", "--out", out_dir],
        vec!["train", "--synth", "xor_blobs", "--deconv", "7", "--out", out_dir],
        vec!["train", "--synth", "xor_blobs", "--batch", "0", "--out", out_dir],
        vec!["train", "--synth", "xor_blobs", "--momentum", "1.5", "--out", out_dir],
        vec!["train", "--synth", "xor_blobs", "--regression", "--out", out_dir],
        vec!["train", "--out", out_dir],
        vec!["gradcheck", "--scope", "pooling"],
        vec!["frobnicate"],
    ] {
        let out = dcnet(&args);
        assert_eq!(code(&out), 2, "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcnet(&[
        "train", "--synth", "sine_regression", "--n", "40", "--attrs", "4", "--lr", "1e6", "--batch", "8", "--quiet", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("epoch"));
}

#[test]
fn gradcheck_exit_codes_and_scoping() {
    let out = dcnet(&["gradcheck", "--scope", "deconv2d"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let rows: Vec<String> = stdout(&out).lines().skip(1).map(str::to_owned).collect();
    let tensor_rows = &rows[..rows.len() - 1];
    assert!(!tensor_rows.is_empty());
    assert!(tensor_rows.iter().all(|r| r.starts_with("deconv2d") && r.ends_with("PASS")));

    let strict = dcnet(&["gradcheck", "--scope", "conv2d", "--tolerance", "1e-12"]);
    assert_eq!(code(&strict), 4);
    assert!(stdout(&strict).contains("FAIL"));
}

#[test]
fn export_features_shapes_and_layers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcnet(&[
        "train", "--synth", "xor_blobs", "--n", "20", "--attrs", "28", "--epochs", "1", "--decay-every", "1", "--quiet",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let model = dir.path().join("model.dcn");
    let export = |layer: Option<&str>, file: &str| {
        let dest = dir.path().join(file);
        let mut args = vec!["export-features", "--model", model.to_str().unwrap(), "--synth", "xor_blobs", "--n", "100"];
        args.extend(["--attrs", "28", "--out", dest.to_str().unwrap()]);
        if let Some(l) = layer {
            args.extend(["--layer", l]);
        }
        (dcnet(&args), dest)
    };
    for (layer, width) in [(None, 1024), (Some("L11"), 1024), (Some("input"), 28), (Some("L20"), 2048)] {
        let (out, dest) = export(layer, "f.csv");
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let text = fs::read_to_string(dest).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 101);
        assert!(lines[0].starts_with("sample_id,label,f0,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 2 + width), "{layer:?}");
    }
    let (out, _) = export(Some("L42"), "x.csv");
    assert_eq!(code(&out), 2);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&train_small(&a, &["--epochs", "2", "--decay-every", "1", "--threads", "1"])), 0);
    assert_eq!(code(&train_small(&b, &["--epochs", "2", "--decay-every", "1", "--threads", "3"])), 0);
    for f in ["metrics.csv", "model.dcn"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
