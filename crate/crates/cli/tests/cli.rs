use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gduq(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_gduq"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("GDUQ_OUTPUT_ROOT")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "gduq {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, name: &str, method: &str) -> PathBuf {
    let path = dir.join(format!("{name}.conf"));
    let text = format!(
        "[dataset]\nn_graphs = 80\nbasis_max = 12\n[split]\nkind = size\n[model]\nhidden = 8\n\
         [train]\nepochs = 3\nanchor_extra_epochs = 1\nbatch_size = 16\n[method]\n{method}\n\
         [run]\nseeds = 0,1\noutput = {}\n",
        dir.join("runs").join(name).display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_data_writes_dataset_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), "gen", "name = vanilla");
    let data = dir.path().join("graphs.json");
    gduq(&["generate-data", "--spec", arg(&conf), "--out", arg(&data)]);
    assert!(data.is_file());
    let split: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("graphs.json.split.json")).unwrap()).unwrap();
    for key in ["train", "val", "test_id", "test_ood"] {
        assert!(split.get(key).is_some(), "split lacks {key}");
    }
}

#[test]
fn train_then_evaluate_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let vanilla = write_config(dir.path(), "vanilla", "name = vanilla");
    let readout = write_config(dir.path(), "readout", "name = gduq_readout\nk = 3");
    gduq(&["train", "--config", arg(&vanilla)]);
    gduq(&["train", "--config", arg(&readout)]);

    let run = dir.path().join("runs/readout");
    for file in ["runs.csv", "aggregate.json", "timings.json", "seed-0/records.csv"] {
        assert!(run.join(file).is_file(), "missing {file}");
    }

    let seed = run.join("seed-0");
    let out = gduq(&[
        "evaluate",
        "--checkpoint",
        arg(&seed.join("checkpoint.json")),
        "--anchors",
        arg(&seed.join("anchors.json")),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.is_object());

    let data = dir.path().join("graphs.json");
    gduq(&["generate-data", "--spec", arg(&readout), "--out", arg(&data)]);
    let records = dir.path().join("external.csv");
    let out = gduq(&[
        "evaluate",
        "--checkpoint",
        arg(&seed.join("checkpoint.json")),
        "--anchors",
        arg(&seed.join("anchors.json")),
        "--data",
        arg(&data),
        "--out",
        arg(&records),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("on 80 graphs"));
    let rows = std::fs::read_to_string(&records).unwrap().lines().count();
    assert_eq!(rows, 81);

    let runs = dir.path().join("runs");
    let out = gduq(&["compare", "--runs", arg(&runs)]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("vanilla") && table.contains("readout"), "{table}");
    assert!(runs.join("comparison.csv").is_file());
    assert!(runs.join("comparison.txt").is_file());
}

#[test]
fn anchored_checkpoint_without_anchors_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), "anchored", "name = gduq_readout\nk = 3");
    gduq(&["train", "--config", arg(&conf)]);
    let ckpt = dir.path().join("runs/anchored/seed-0/checkpoint.json");
    let out = Command::new(env!("CARGO_BIN_EXE_gduq"))
        .args(["evaluate", "--checkpoint", arg(&ckpt)])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "[model]\nwidth = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gduq"))
        .args(["train", "--config", arg(&conf)])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
