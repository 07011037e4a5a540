use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::io::Write;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_contgcn"));
    c.env("CONTGCN_THREADS", "2");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const FAST: &[&str] = &[
    "--dim", "16", "--batch-size", "32", "--epochs", "8", "--lr-encoder", "1e-3", "--lr-gcn", "1e-3",
    "--lr-post-pretrain", "1e-2",
];

/// Writes a vocabulary and split synthetic corpus into a fresh directory.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().to_path_buf();
    ok(&p, &["synth", "--vocab-out", "v.txt", "--data-out", "all.tsv", "--docs", "300"]);
    let text = std::fs::read_to_string(p.join("all.tsv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    std::fs::write(p.join("train.tsv"), lines[..240].join("\n") + "\n").unwrap();
    std::fs::write(p.join("test.tsv"), lines[240..].join("\n") + "\n").unwrap();
    (dir, p)
}

fn train(p: &Path) -> String {
    let mut args = vec![
        "train", "--vocab", "v.txt", "--train", "train.tsv", "--test", "test.tsv", "--out", "m.ck", "--omm-out",
        "m.omm", "--metrics", "metrics.csv", "--seed", "3",
    ];
    args.extend_from_slice(FAST);
    ok(p, &args)
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn train_eval_classify_update() {
    let (_d, p) = workspace();
    let out = train(&p);
    let test_acc = field(&out, "test_acc");
    assert!(test_acc > 0.9, "{out}");
    let metrics = std::fs::read_to_string(p.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("stage,session,epoch,loss_cls,loss_aic,val_acc,test_acc,seconds"));

    let eval = ok(&p, &["eval", "--vocab", "v.txt", "--omm", "m.omm", "--model", "m.ck", "--data", "test.tsv"]);
    assert!((field(&eval, "accuracy") - test_acc).abs() < 1e-9);

    // the training-set accuracy is at least the last epoch's, minus slack
    let train_eval = ok(&p, &["eval", "--vocab", "v.txt", "--omm", "m.omm", "--model", "m.ck", "--data", "train.tsv"]);
    let val_acc = field(&out, "val_acc");
    assert!(field(&train_eval, "accuracy") >= val_acc - 0.05);

    let omm_before = std::fs::read(p.join("m.omm")).unwrap();
    let model_before = std::fs::read(p.join("m.ck")).unwrap();
    let mut child = bin()
        .current_dir(&p)
        .args(["classify", "--vocab", "v.txt", "--omm", "m.omm", "--model", "m.ck"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"alpha3 alpha7 common2 alpha9 beta1\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let line = String::from_utf8(out.stdout).unwrap();
    let cols: Vec<&str> = line.trim().split('\t').collect();
    assert_eq!(cols.len(), 4, "{line}");
    assert_eq!(cols[0], "0");
    let sum: f64 = cols[2..].iter().map(|c| c.parse::<f64>().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-5);
    assert_eq!(std::fs::read(p.join("m.omm")).unwrap(), omm_before);
    assert_eq!(std::fs::read(p.join("m.ck")).unwrap(), model_before);

    let stats = ok(&p, &["omm", "stats", "--omm", "m.omm"]);
    assert_eq!(field(&stats, "documents"), 240.0);
    ok(
        &p,
        &["update", "--vocab", "v.txt", "--omm", "m.omm", "--model", "m.ck", "--data", "test.tsv", "--dim", "16"],
    );
    let stats = ok(&p, &["omm", "stats", "--omm", "m.omm"]);
    assert_eq!(field(&stats, "documents"), 300.0);
    assert_ne!(std::fs::read(p.join("m.ck")).unwrap(), model_before);
}

#[test]
fn training_is_deterministic_under_seed() {
    let (_d, p) = workspace();
    train(&p);
    let first = std::fs::read(p.join("m.ck")).unwrap();
    train(&p);
    assert_eq!(std::fs::read(p.join("m.ck")).unwrap(), first);
}

#[test]
fn omm_init_and_update_from_files() {
    let (_d, p) = workspace();
    std::fs::write(p.join("corpus.txt"), "alpha1 alpha2. beta3\ncommon1 common2\n").unwrap();
    ok(&p, &["omm", "init", "--vocab", "v.txt", "--corpus", "corpus.txt", "--out", "c.omm"]);
    let stats = ok(&p, &["omm", "stats", "--omm", "c.omm"]);
    assert_eq!(field(&stats, "documents"), 2.0);
    assert_eq!(field(&stats, "pairs"), 2.0);
    ok(&p, &["omm", "update", "--vocab", "v.txt", "--omm", "c.omm", "--data", "test.tsv"]);
    let stats = ok(&p, &["omm", "stats", "--omm", "c.omm"]);
    assert_eq!(field(&stats, "documents"), 62.0);
    assert_eq!(field(&stats, "version"), 2.0);
}

#[test]
fn sweep_emits_relative_table() {
    let (_d, p) = workspace();
    let mut args = vec!["sweep-lambda", "--vocab", "v.txt", "--train", "train.tsv", "--test", "test.tsv", "--lambdas", "0,0.03"];
    args.extend_from_slice(FAST);
    let out = ok(&p, &args);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("0\t"));
    assert!(rows[0].ends_with("+0.0000"));
}

#[test]
fn online_prints_one_row_per_session() {
    let (_d, p) = workspace();
    let mut args = vec!["online", "--vocab", "v.txt", "--data", "all.tsv", "--sessions", "3", "--update-epochs", "1"];
    args.extend_from_slice(FAST);
    let out = ok(&p, &args);
    assert_eq!(out.lines().count(), 1 + 4);
    let bad = run(&p, &["online", "--vocab", "v.txt", "--data", "all.tsv", "--ratios", "0.5,0.5,0.5"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let (_d, p) = workspace();
    assert_eq!(run(&p, &["--help"]).status.code(), Some(0));
    assert_eq!(run(&p, &["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&p, &["omm", "stats"]).status.code(), Some(1));
    std::fs::write(p.join("bad.tsv"), "a\tb\n").unwrap();
    let out = run(&p, &["train", "--vocab", "v.txt", "--train", "bad.tsv", "--out", "x.ck"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&p, &["omm", "stats", "--omm", "missing.omm"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&p, &["train", "--vocab", "v.txt", "--train", "train.tsv", "--out", "x.ck", "--encoder", "bert"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn adjacency_dump_lists_coordinates() {
    let (_d, p) = workspace();
    let mut args = vec![
        "train", "--vocab", "v.txt", "--train", "train.tsv", "--out", "m.ck", "--dump-adjacency", "adj.txt", "--epochs",
        "1",
    ];
    args.extend_from_slice(&FAST[..4]);
    ok(&p, &args);
    let dump = std::fs::read_to_string(p.join("adj.txt")).unwrap();
    let first: Vec<&str> = dump.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(first.len(), 3);
    assert!(first[2].parse::<f64>().unwrap() > 0.0);
}
