//! The `hjcl` binary driven as a subprocess.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hjcl_core::eval::MetricsReport;
use hjcl_core::fixtures::FIG1_TAXONOMY_TSV;
use tempfile::TempDir;

fn hjcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjcl")).args(args).env_remove("HJCL_SEED").output().unwrap()
}

fn hjcl_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjcl")).args(args).env(key, value).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = hjcl(args);
    assert_eq!(code(&o), 0, "hjcl {args:?}: {}", stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(path: &Path) -> MetricsReport {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A small corpus where every document's tokens name its labels.
struct Data {
    _dir: TempDir,
    root: PathBuf,
}

impl Data {
    fn separable() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&[
            "synth",
            "--out",
            s(&root.join("data")),
            "--depth",
            "2",
            "--branching",
            "2",
            "--train-docs",
            "200",
            "--doc-length",
            "12",
            "--noise-ratio",
            "0",
            "--noise-vocab",
            "10",
        ]);
        Data { _dir: dir, root }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    fn train_args<'a>(&'a self, out: &'a str) -> Vec<String> {
        vec![
            "train".into(),
            "--taxonomy".into(),
            s(&self.file("taxonomy.tsv")).into(),
            "--train".into(),
            s(&self.file("train.jsonl")).into(),
            "--val".into(),
            s(&self.file("val.jsonl")).into(),
            "--out".into(),
            out.into(),
            "--dim".into(),
            "16".into(),
            "--heads".into(),
            "2".into(),
            "--batch-size".into(),
            "20".into(),
        ]
    }
}

fn run_train(data: &Data, out: &Path, extra: &[&str]) -> Output {
    let mut args = data.train_args(s(out));
    args.extend(extra.iter().map(|x| x.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    hjcl(&refs)
}

#[test]
fn help_exits_zero() {
    for args in [&["--help"][..], &["train", "--help"], &["gradcheck", "--help"], &["--version"]] {
        assert_eq!(code(&hjcl(args)), 0, "{args:?}");
    }
    let help = stdout(&hjcl(&["--help"]));
    for cmd in ["synth", "train", "eval", "gradcheck", "metrics"] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn unknown_flags_and_commands_are_usage_errors() {
    assert_eq!(code(&hjcl(&["bogus"])), 2);
    assert_eq!(code(&hjcl(&["train", "--no-such-flag", "1"])), 2);
    assert_eq!(code(&hjcl(&[])), 2);
}

#[test]
fn invalid_settings_are_all_listed() {
    let o = hjcl(&[
        "train",
        "--lr",
        "fast",
        "--batch-size",
        "1",
        "--mode",
        "triplet",
        "--dim",
        "30",
        "--taxonomy",
        "nope.tsv",
    ]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    for needle in ["nope.tsv", "`train`", "`val`", "lr", "batch_size", "triplet", "divisible"] {
        assert!(err.contains(needle), "{needle} missing from:\n{err}");
    }
}

#[test]
fn missing_taxonomy_is_reported() {
    let data = Data::separable();
    let o = hjcl(&[
        "train",
        "--taxonomy",
        "/no/such/taxonomy.tsv",
        "--train",
        s(&data.file("train.jsonl")),
        "--val",
        s(&data.file("val.jsonl")),
    ]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("/no/such/taxonomy.tsv"), "{}", stderr(&o));
}

#[test]
fn config_file_keys_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "learning_rate = 0.1\nlr\n").unwrap();
    let o = hjcl(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("learning_rate") && err.contains("line 2"), "{err}");
}

#[test]
fn synth_writes_four_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let manifest = stdout(&ok(&["synth", "--out", s(&a), "--depth", "2", "--train-docs", "100", "--seed", "7"]));
    ok(&["synth", "--out", s(&b), "--depth", "2", "--train-docs", "100", "--seed", "7"]);
    let o = hjcl_env(&["synth", "--out", s(&c), "--depth", "2", "--train-docs", "100"], "HJCL_SEED", "7");
    assert_eq!(code(&o), 0);
    for f in ["taxonomy.tsv", "train.jsonl", "val.jsonl", "test.jsonl"] {
        assert!(manifest.contains(f), "{f} missing from manifest");
        let bytes = std::fs::read(a.join(f)).unwrap();
        assert_eq!(bytes, std::fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(bytes, std::fs::read(c.join(f)).unwrap(), "{f} with the seed from the environment");
    }
    assert_eq!(std::fs::read_dir(&a).unwrap().count(), 4);
}

#[test]
fn synth_rejects_zero_depth() {
    let dir = tempfile::tempdir().unwrap();
    let o = hjcl(&["synth", "--out", s(&dir.path().join("x")), "--depth", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("depth"));
}

#[test]
fn zero_weights_log_zero_contrastive_terms() {
    let data = Data::separable();
    let out = data.root.join("run");
    let o = run_train(&data, &out, &["--lambda1", "0", "--lambda2", "0", "--max-epochs", "3", "--lr", "1e-2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let l = &v["losses"];
        assert_eq!(l["instance"].as_f64(), Some(0.0));
        assert_eq!(l["hilecon"].as_f64(), Some(0.0));
        assert_eq!(l["total"], l["zlpr"]);
    }
    for f in ["checkpoint.hjcl", "val_metrics.json", "val_metrics.txt", "run.cfg"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(stdout(&o).contains("Macro-F1"));
}

#[test]
fn saved_run_config_reproduces_the_run() {
    let data = Data::separable();
    let first = data.root.join("first");
    let o = run_train(&data, &first, &["--max-epochs", "2", "--lr", "1e-2", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let second = data.root.join("second");
    ok(&["train", "--config", s(&first.join("run.cfg")), "--out", s(&second)]);
    for f in ["train_log.jsonl", "checkpoint.hjcl", "val_metrics.json"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eval_on_training_data_of_separable_corpus() {
    let data = Data::separable();
    let out = data.root.join("run");
    let o = run_train(&data, &out, &["--lr", "1e-2", "--max-epochs", "30"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck = out.join("checkpoint.hjcl");
    let (json, dump) = (data.root.join("train_metrics.json"), data.root.join("pred.jsonl"));
    let tax = data.file("taxonomy.tsv");
    let corpus = data.file("train.jsonl");
    let o = ok(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--taxonomy",
        s(&tax),
        "--corpus",
        s(&corpus),
        "--json",
        s(&json),
        "--dump-predictions",
        s(&dump),
    ]);
    let r = report(&json);
    println!("train-set Macro-F1 {:.4}", r.macro_f1);
    assert!(r.macro_f1 >= 0.95, "{}", stdout(&o));
    let lines = std::fs::read_to_string(&dump).unwrap().lines().count();
    assert_eq!(lines, std::fs::read_to_string(&corpus).unwrap().lines().count());
    assert_eq!(lines, r.documents);

    // scoring the dumped predictions offline gives the same numbers
    let offline = data.root.join("offline.json");
    ok(&["metrics", "--taxonomy", s(&tax), "--gold", s(&corpus), "--predictions", s(&dump), "--json", s(&offline)]);
    assert_eq!(report(&offline), r);

    // a flipped byte is caught before any parameter is used
    let mut bytes = std::fs::read(&ck).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let bad = data.root.join("bad.hjcl");
    std::fs::write(&bad, bytes).unwrap();
    let o = hjcl(&["eval", "--checkpoint", s(&bad), "--taxonomy", s(&tax), "--corpus", s(&corpus)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("integrity"), "{}", stderr(&o));

    // a different taxonomy is refused
    let other = data.root.join("other.tsv");
    let mut text = std::fs::read_to_string(&tax).unwrap();
    text.push_str("extra\tROOT\n");
    std::fs::write(&other, text).unwrap();
    let o = hjcl(&["eval", "--checkpoint", s(&ck), "--taxonomy", s(&other), "--corpus", s(&corpus)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("taxonomy"), "{}", stderr(&o));
}

#[test]
fn diverging_training_exits_with_numeric_failure() {
    let data = Data::separable();
    let out = data.root.join("run");
    let o = run_train(&data, &out, &["--lr", "1e300", "--max-epochs", "2"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn gradcheck_components_and_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("g.json");
    let o = ok(&["gradcheck", "--component", "zlpr", "--json", s(&json)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let comps = v["components"].as_array().unwrap();
    assert_eq!(comps.len(), 1);
    assert_eq!(comps[0]["component"], "zlpr");
    assert!(stdout(&o).contains("PASS"));

    let o = hjcl(&["gradcheck", "--tol", "1e-12", "--component", "zlpr,total"]);
    assert_eq!(code(&o), 4);
    assert!(stdout(&o).contains("FAIL"));

    assert_eq!(code(&hjcl(&["gradcheck", "--component", "triplet"])), 2);
}

/// Gold and predictions for the five-document fixture on the news taxonomy.
const FIXTURE: [(&[&str], &[&str]); 5] = [
    (&["News", "Sports", "Features", "Travel"], &["News", "Sports", "Features"]),
    (&["News", "World", "Countries", "France"], &["News", "World", "Countries", "France"]),
    (&["News", "U.S.", "Washington"], &["News", "U.S.", "Opinion"]),
    (
        &["Features", "Travel", "Guides", "Destinations", "Opinion", "Op-Ed"],
        &["Travel", "Guides", "Destinations", "Op-Ed"],
    ),
    (&["Classifields", "Job Market"], &[]),
];

fn write_jsonl(path: &Path, rows: impl Iterator<Item = serde_json::Value>) {
    let text: String = rows.map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

struct MetricsFixture {
    dir: TempDir,
}

impl MetricsFixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("taxonomy.tsv"), FIG1_TAXONOMY_TSV).unwrap();
        write_jsonl(
            &dir.path().join("gold.jsonl"),
            FIXTURE
                .iter()
                .enumerate()
                .map(|(i, (g, _))| serde_json::json!({"id": format!("d{i}"), "text": "some words", "labels": g})),
        );
        MetricsFixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn score(&self, preds: &[&[&str]]) -> MetricsReport {
        let p = self.path("pred.jsonl");
        write_jsonl(&p, preds.iter().enumerate().map(|(i, l)| serde_json::json!({"id": format!("d{i}"), "labels": l})));
        let json = self.path("m.json");
        ok(&[
            "metrics",
            "--taxonomy",
            s(&self.path("taxonomy.tsv")),
            "--gold",
            s(&self.path("gold.jsonl")),
            "--predictions",
            s(&p),
            "--json",
            s(&json),
        ]);
        report(&json)
    }
}

#[test]
fn metrics_on_gold_predictions_are_perfect() {
    let fx = MetricsFixture::new();
    let golds: Vec<&[&str]> = FIXTURE.iter().map(|(g, _)| *g).collect();
    let r = fx.score(&golds);
    // United Kingdom never occurs, and an absent label scores zero
    assert_eq!(r.micro_f1, 1.0);
    assert_eq!(r.macro_f1, 15.0 / 16.0);
    assert_eq!((r.path_accuracy, r.depth_accuracy), (1.0, 1.0));
}

#[test]
fn metrics_on_empty_predictions_are_zero() {
    let fx = MetricsFixture::new();
    let none: &[&str] = &[];
    let r = fx.score(&[none; 5]);
    assert_eq!((r.micro_f1, r.macro_f1, r.depth_accuracy), (0.0, 0.0, 0.0));
    // no document keeps its path count, since every gold set is non-empty
    assert_eq!(r.path_accuracy, 0.0);
}

#[test]
fn metrics_match_hand_counts_on_fixture() {
    let fx = MetricsFixture::new();
    let preds: Vec<&[&str]> = FIXTURE.iter().map(|(_, p)| *p).collect();
    let r = fx.score(&preds);
    // tp 13, fp 1, fn 6 over the five documents
    assert!((r.micro_f1 - 26.0 / 33.0).abs() < 1e-15);
    // eleven labels score 1, Features and Travel score 2/3, the rest 0
    assert!((r.macro_f1 - 31.0 / 48.0).abs() < 1e-15);
    assert_eq!(r.path_accuracy, 0.6);
    assert_eq!(r.depth_accuracy, 3.0 / 8.0);
    assert_eq!(r.documents, 5);
}

#[test]
fn metrics_id_mismatch_is_a_data_error() {
    let fx = MetricsFixture::new();
    let p = fx.path("short.jsonl");
    write_jsonl(
        &p,
        (0..4)
            .map(|i| serde_json::json!({"id": format!("d{i}"), "labels": []}))
            .chain([serde_json::json!({"id": "stranger", "labels": []})]),
    );
    let o = hjcl(&[
        "metrics",
        "--taxonomy",
        s(&fx.path("taxonomy.tsv")),
        "--gold",
        s(&fx.path("gold.jsonl")),
        "--predictions",
        s(&p),
    ]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("`d4`") && err.contains("`stranger`"), "{err}");
}
