use std::path::Path;
use std::process::{Command, Output};

fn ape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ape")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ape(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--set", "model.d=16",
    "--set", "model.filter=32",
    "--set", "model.enc_layers=1",
    "--set", "model.dec_layers=1",
    "--set", "model.pred_layers=1",
    "--set", "train.batch_tokens=120",
    "--set", "train.warmup=60",
];

#[test]
fn label_emits_the_copy_labels_of_the_example() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    std::fs::write(
        &corpus,
        "I ate a cake yesterday\tIch esse einen Hamburger\tIch hatte gestern einen Kuchen gegessen\n",
    )
    .unwrap();
    let out = ok(&["label", "--in", p(&corpus)]);
    assert_eq!(out.trim_end().split('\t').nth(3), Some("1 0 1 0"));
    let labelled = dir.path().join("l.tsv");
    ok(&["label", "--in", p(&corpus), "--out", p(&labelled), "--mode", "union"]);
    assert!(std::fs::read_to_string(&labelled).unwrap().ends_with("1 0 1 0\n"));
}

#[test]
fn eval_of_identical_files_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("h.txt");
    std::fs::write(&f, "a b c d e\nf g h i\n").unwrap();
    let json = dir.path().join("r.json");
    let out = ok(&["eval", "--hyp", p(&f), "--ref", p(&f), "--mt", p(&f), "--out", p(&json)]);
    assert!(out.contains("TER"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["ter"], 0.0);
    assert_eq!(report["bleu"], 100.0);
    assert_eq!(report["copying_accuracy"], 100.0);
}

#[test]
fn usage_errors_fail_with_a_message() {
    let out = ape(&["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ape(&["label", "--in", "/nonexistent/corpus.tsv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/corpus.tsv"));

    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    ok(&["synth", "--out", p(&corpus), "--n", "5"]);
    let ck = dir.path().join("m.ckpt");
    let out = ape(&[
        "train", "--in", p(&corpus), "--out", p(&ck),
        "--set", "model.predictor=false", "--set", "model.joint_training=true",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("predictor"));
    let out = ape(&["train", "--in", p(&corpus), "--out", p(&ck), "--set", "model.width=3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identity_corpus_trains_decodes_and_scores_zero_ter() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    ok(&["synth", "--out", p(&corpus), "--n", "40", "--vocab-size", "8", "--sub-rate", "0", "--seed", "3"]);
    let ck = dir.path().join("m.ckpt");
    let log = dir.path().join("m.log");
    let mut args = vec!["train", "--in", p(&corpus), "--out", p(&ck), "--log", p(&log), "--set", "train.steps=300", "--set", "train.log_every=100"];
    args.extend_from_slice(SMALL);
    ok(&args);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 3);
    let hyp = dir.path().join("h.txt");
    let trace = dir.path().join("t.jsonl");
    let scores = dir.path().join("s.txt");
    ok(&[
        "decode", "--model", p(&ck), "--in", p(&corpus), "--out", p(&hyp),
        "--trace", p(&trace), "--scores", p(&scores), "--threads", "2",
    ]);
    let json = dir.path().join("r.json");
    ok(&["eval", "--hyp", p(&hyp), "--corpus", p(&corpus), "--scores", p(&scores), "--out", p(&json)]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["ter"], 0.0, "{report}");
    assert_eq!(report["prediction_accuracy"], 100.0);
    let first: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&trace).unwrap().lines().next().unwrap()).unwrap();
    let steps = first["hyp"].as_array().unwrap().len() + 1;
    assert_eq!(first["gamma"].as_array().unwrap().len(), steps);

    // the logged configuration reproduces the checkpoint
    let again = dir.path().join("again.ckpt");
    let cfg = format!("{}.config", p(&ck));
    ok(&["train", "--in", p(&corpus), "--out", p(&again), "--config", &cfg]);
    assert_eq!(std::fs::read(&ck).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    ok(&["synth", "--out", p(&corpus), "--n", "20", "--vocab-size", "8"]);
    let full = dir.path().join("full.ckpt");
    let half = dir.path().join("half.ckpt");
    let mut a = vec!["train", "--in", p(&corpus), "--out", p(&full), "--set", "train.steps=8"];
    a.extend_from_slice(SMALL);
    ok(&a);
    let mut b = vec!["train", "--in", p(&corpus), "--out", p(&half), "--set", "train.steps=4"];
    b.extend_from_slice(SMALL);
    ok(&b);
    // raise the budget stored in the checkpoint, then continue
    let mut bytes = std::fs::read(&half).unwrap();
    let key = b"config train.steps 4\n";
    let at = bytes.windows(key.len()).position(|w| w == key).unwrap() + key.len() - 2;
    bytes[at] = b'8';
    std::fs::write(&half, &bytes).unwrap();
    let resumed = dir.path().join("resumed.ckpt");
    std::fs::copy(&half, &resumed).unwrap();
    ok(&["train", "--in", p(&corpus), "--out", p(&resumed), "--resume", p(&half)]);
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&resumed).unwrap());
}

#[test]
fn ablate_prints_the_seven_rows_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    ok(&["synth", "--out", p(&corpus), "--n", "12", "--vocab-size", "6"]);
    let mut args = vec!["ablate", "--in", p(&corpus), "--set", "train.steps=2", "--set", "decode.max_len=6"];
    args.extend_from_slice(SMALL);
    let first = ok(&args);
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 8);
    assert!(lines[0].contains("Interactive\tPredictor\tCopyNet\tJoint Training\tTER\tBLEU"));
    let marks: Vec<String> = lines[1..].iter().map(|l| l.split('\t').skip(1).take(4).collect::<Vec<_>>().join("")).collect();
    assert_eq!(marks, ["✓×××", "××✓×", "×✓✓✓", "✓×✓×", "✓✓××", "✓✓✓×", "✓✓✓✓"]);
    assert_eq!(ok(&args), first);
    args.extend_from_slice(&["--rows", "8"]);
    assert!(!ape(&args).status.success());
}

#[test]
fn import_and_heatmap_write_plot_ready_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("src"), "a b c\nd e\n").unwrap();
    std::fs::write(d.join("mt"), "x y z\nu v\n").unwrap();
    std::fs::write(d.join("pe"), "x z\nu w v\n").unwrap();
    let corpus = d.join("c.tsv");
    ok(&["import", "--src", p(&d.join("src")), "--mt", p(&d.join("mt")), "--pe", p(&d.join("pe")), "--out", p(&corpus)]);
    assert_eq!(std::fs::read_to_string(&corpus).unwrap(), "a b c\tx y z\tx z\nd e\tu v\tu w v\n");
    let seg = d.join("seg.tsv");
    let merges = d.join("bpe.txt");
    ok(&["import", "--src", p(&d.join("src")), "--mt", p(&d.join("mt")), "--pe", p(&d.join("pe")), "--out", p(&seg), "--bpe", "3", "--bpe-out", p(&merges)]);
    assert_eq!(std::fs::read_to_string(&merges).unwrap().lines().count(), 3);

    let ck = d.join("m.ckpt");
    let mut args = vec!["train", "--in", p(&corpus), "--out", p(&ck), "--set", "train.steps=1"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--set", "model.dec_layers=2"]);
    ok(&args);
    let out = d.join("maps");
    ok(&["heatmap", "--model", p(&ck), "--in", p(&corpus), "--line", "1", "--out", p(&out), "--per-head"]);
    let m = std::fs::read_to_string(out.join("attention.layer1.tsv")).unwrap();
    let rows: Vec<&str> = m.lines().collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0], "pe\\mt\tu\tv");
    assert!(rows[1].starts_with("u\t"));
    assert!(rows.iter().skip(1).all(|r| r.split('\t').count() == 3));
    assert!(out.join("attention.layer1.head1.tsv").exists());
    assert_eq!(std::fs::read_to_string(out.join("scores.tsv")).unwrap().lines().count(), 3);
    let bad = ape(&["heatmap", "--model", p(&ck), "--in", p(&corpus), "--layer", "2", "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(2));
}
