use std::path::Path;
use std::process::Command;

use ts3dcnn::cli::run_cli;
use ts3dcnn::data::{CohortIndex, Label, NoduleStudy};

fn cli(args: &[&str]) -> i32 {
    run_cli(std::iter::once("ts3dcnn").chain(args.iter().copied()))
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ts3dcnn")).args(args).output().unwrap()
}

fn write(path: &Path, text: &str) -> String {
    std::fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = "[model]\npreset = \"tiny\"\n\n[train]\nepochs = 4\npatience = 2\nbatch_size = 4\nlr = 0.001\n\n[data]\nkfolds = 3\npatch_size = 16\n";

#[test]
fn synth_train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let cohort = d("cohort");
    assert_eq!(cli(&["synth", "--out", &cohort, "--seed", "7", "--n-studies", "16", "--n-malignant", "8"]), 0);
    let index = CohortIndex::read(&dir.path().join("cohort/cohort.json")).unwrap();
    assert_eq!(index.manifests.len(), 16);

    let config = write(&dir.path().join("run.toml"), SMALL);
    let ckpt = d("model.nckp");
    let history = d("history.csv");
    let args = ["train", "--config", &config, "--data", &cohort, "--mode", "t1t2", "--out-ckpt", &ckpt, "--history-out", &history];
    assert_eq!(cli(&args), 0);
    assert!(std::fs::read_to_string(&history).unwrap().starts_with("epoch,train_loss,val_loss,val_f1\n"));

    let roc = d("roc.csv");
    let report = d("report.json");
    assert_eq!(cli(&["eval", "--ckpt", &ckpt, "--data", &cohort, "--split", "test", "--roc-out", &roc, "--report-out", &report]), 0);
    let roc_text = std::fs::read_to_string(&roc).unwrap();
    assert!(roc_text.starts_with("threshold,fpr,tpr\n"));
    assert!(roc_text.lines().count() > 2);
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let counts: u64 = ["tp", "fp", "tn", "fn"].iter().map(|k| metrics[k].as_u64().unwrap()).sum();
    // 8 + 8 studies at 0.7 keep round(5.6) = 6 per class for training.
    assert_eq!(counts, 4);

    let study = dir.path().join("cohort").join(&index.manifests[0]);
    let out = bin(&["predict", "--ckpt", &ckpt, "--study", study.to_str().unwrap()]);
    assert!(out.status.success());
    let line = String::from_utf8(out.stdout).unwrap();
    let (p, label) = line.trim().split_once('\t').unwrap();
    assert!((0.0..=1.0).contains(&p.parse::<f64>().unwrap()));
    assert!(label == "malignant" || label == "benign");

    let out = bin(&["inspect-ckpt", &ckpt]);
    assert!(out.status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(manifest["kind"], "model");
    assert_eq!(manifest["config"]["train"]["epochs"], 4);

    assert_eq!(cli(&["crossval", "--config", &config, "--data", &cohort, "--folds", "2"]), 0);
}

#[test]
fn overfit_probe_model_recognises_a_training_study() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    let c = cohort.to_str().unwrap();
    assert_eq!(cli(&["synth", "--out", c, "--seed", "3", "--n-studies", "8", "--n-malignant", "4"]), 0);
    let config = write(
        &dir.path().join("probe.toml"),
        "[model]\npreset = \"tiny\"\n\n[train]\nepochs = 200\npatience = 199\nbatch_size = 8\nlr = 0.001\noverfit_probe = true\n\n[data]\nsplit_fraction = 0.75\nkfolds = 2\npatch_size = 16\n",
    );
    let ckpt = dir.path().join("probe.nckp");
    let history = dir.path().join("h.csv");
    let args = ["train", "--config", &config, "--data", c, "--out-ckpt", ckpt.to_str().unwrap(), "--history-out", history.to_str().unwrap()];
    assert_eq!(cli(&args), 0);

    let index = CohortIndex::read(&cohort.join("cohort.json")).unwrap();
    let plan = ts3dcnn::data::stratified_split(
        &(0..8).map(ts3dcnn::data::synth::study_id).collect::<Vec<_>>(),
        &[1, 1, 1, 1, 0, 0, 0, 0],
        0.75,
        0,
    )
    .unwrap();
    let manifest = index
        .manifests
        .iter()
        .map(|m| cohort.join(m))
        .find(|p| {
            let s = NoduleStudy::read(p).unwrap();
            s.label == Label::Malignant && plan.train_ids.contains(&s.study_id)
        })
        .unwrap();
    let out = bin(&["predict", "--ckpt", ckpt.to_str().unwrap(), "--study", manifest.to_str().unwrap()]);
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.trim().ends_with("\tmalignant"), "{line}");
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [&["frobnicate"][..], &["train", "--bogus"], &["eval"], &[]] {
        let out = bin(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
        assert!(out.stdout.is_empty());
    }
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_and_runtime_failures_are_told_apart() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write(&dir.path().join("typo.toml"), "[train]\nlerning_rate = 0.1\n");
    let out = bin(&["crossval", "--config", &typo, "--data", "nowhere"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.lerning_rate"));

    assert_eq!(bin(&["train", "--out-ckpt", "x.nckp"]).status.code(), Some(1));

    let missing = dir.path().join("missing.nckp");
    assert_eq!(bin(&["inspect-ckpt", missing.to_str().unwrap()]).status.code(), Some(2));
    let junk = write(&dir.path().join("junk.nckp"), "definitely not a checkpoint");
    let out = bin(&["inspect-ckpt", &junk]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));
}
