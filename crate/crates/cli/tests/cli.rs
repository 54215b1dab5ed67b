use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
train_size = 600
val_size = 100
test_size = 100
phase1_epochs = 1
phase2_epochs = 1
accuracy_samples = 10
sweep_sources = 20
levels = 4
";

fn devae(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_devae"))
        .arg("--config")
        .arg(root.join("small.toml"))
        .arg("--out")
        .arg(root)
        .args(args)
        .env_remove("DEVAE_OUT")
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn synth_is_deterministic() {
    let root = setup();
    let r = root.path();
    ok(&devae(r, &["synth", "--dir", r.join("a").to_str().unwrap()]));
    ok(&devae(r, &["synth", "--dir", r.join("b").to_str().unwrap()]));
    for name in ["train.jsonl", "val.jsonl", "test.jsonl", "vocab.tsv", "hashes.json"] {
        assert_eq!(fs::read(r.join("a").join(name)).unwrap(), fs::read(r.join("b").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn zero_epochs_trains_nothing() {
    let root = setup();
    let r = root.path();
    ok(&devae(r, &["synth"]));
    let out = devae(r, &["train", "--schedule", "none", "--epochs", "0", "--dir", r.join("m").to_str().unwrap()]);
    ok(&out);
    assert_eq!(fs::read_to_string(r.join("m/metrics.jsonl")).unwrap().trim(), "");
    assert!(r.join("m/model.json").is_file());
}

#[test]
fn usage_errors_exit_one() {
    let root = setup();
    let r = root.path();
    assert_eq!(devae(r, &["bogus"]).status.code(), Some(1));
    assert_eq!(devae(r, &["train", "--schedule", "sometimes"]).status.code(), Some(1));
    assert_eq!(devae(r, &["generate", "--model", "x"]).status.code(), Some(1));
    fs::write(r.join("small.toml"), "no_such_key = 1\n").unwrap();
    assert_eq!(devae(r, &["synth"]).status.code(), Some(1));
}

#[test]
fn missing_checkpoint_names_the_path() {
    let root = setup();
    let r = root.path();
    let missing = r.join("nowhere");
    let out = devae(r, &["evaluate", "--model", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere"), "{}", stderr(&out));
}

#[test]
fn changed_config_is_refused_for_an_existing_run() {
    let root = setup();
    let r = root.path();
    ok(&devae(r, &["synth"]));
    let dir = r.join("m");
    let d = dir.to_str().unwrap();
    ok(&devae(r, &["train", "--schedule", "none", "--epochs", "0", "--dir", d]));
    let again = devae(r, &["train", "--schedule", "none", "--epochs", "0", "--dir", d]);
    ok(&again);
    fs::write(r.join("small.toml"), format!("{SMALL}lr = 0.001\n")).unwrap();
    let out = devae(r, &["train", "--schedule", "none", "--epochs", "0", "--dir", d]);
    assert_eq!(out.status.code(), Some(2));
    let out = devae(r, &["evaluate", "--model", d]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn end_to_end_writes_tables_and_plots() {
    let root = setup();
    let r = root.path();
    ok(&devae(r, &["synth"]));
    let m = r.join("model");
    let d = m.to_str().unwrap();
    ok(&devae(r, &["train", "--seed", "1", "--dir", d]));
    ok(&devae(r, &["evaluate", "--model", d]));

    let sweep = fs::read_to_string(m.join("sweep.csv")).unwrap();
    let header = sweep.lines().next().unwrap();
    for col in ["level", "mean_score_pos_source", "mean_score_neg_source", "mean_jaccard_pos", "mean_jaccard_neg"] {
        assert!(header.split(',').any(|h| h == col), "{header}");
    }
    assert_eq!(sweep.lines().count(), 1 + 4);
    for name in ["accuracy.csv", "probe.csv", "generations.jsonl", "metrics.csv"] {
        assert!(m.join(name).is_file(), "{name}");
    }

    let out = devae(r, &["generate", "--model", d, "--level", "0.5", "-n", "3"]);
    ok(&out);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);

    ok(&devae(r, &["report", r.to_str().unwrap()]));
    for svg in ["sweep_score.svg", "sweep_jaccard.svg", "probe.svg", "val_kl.svg", "val_mi.svg"] {
        let text = fs::read_to_string(m.join("plots").join(svg)).unwrap();
        assert!(text.starts_with("<svg"), "{svg}");
    }
    assert!(fs::read_to_string(r.join("summary.md")).unwrap().contains("Sentiment sweep"));
}
