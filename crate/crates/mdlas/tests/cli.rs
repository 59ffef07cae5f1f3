use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mdlas::cli::{EvalReportFile, TrainReportFile, EVAL_CSV, EVAL_REPORT_JSON, TRAIN_REPORT_JSON};
use mdlas::io::{load_checkpoint, MODEL_BIN, MODEL_JSON};
use mdlas_core::eval::MismatchMatrix;
use mdlas_core::synth::{SplitSizes, SyntheticSpec};

fn mdlas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdlas")).args(args).output().unwrap()
}

fn mdlas_ok(args: &[&str]) -> Output {
    let out = mdlas(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    root: tempfile::TempDir,
}

impl Fixture {
    /// Small corpus plus a config with tiny layers.
    fn new() -> Self {
        let root = tempfile::tempdir().unwrap();
        let mut spec = SyntheticSpec::default_with_seed(0);
        for sz in &mut spec.utterances_per_dialect {
            *sz = SplitSizes { train: 8, dev: 4, test: 4 };
        }
        fs::write(root.path().join("spec.json"), serde_json::to_string(&spec).unwrap()).unwrap();
        let cfg = serde_json::json!({
            "corpus": "corpus",
            "model": {"encoder_layers": [6], "decoder_layers": [6], "attention_dim": 5, "embedding_dim": 4, "cat_hidden": 3},
            "train": {"max_epochs": 1, "batch_size": 4, "eval_every_n_steps": 3, "learning_rate": 0.1},
            "finetune": {"max_epochs": 1, "batch_size": 4, "eval_every_n_steps": 2, "learning_rate": 0.05}
        });
        fs::write(root.path().join("train.json"), cfg.to_string()).unwrap();
        let f = Fixture { root };
        mdlas_ok(&["gen-data", "--config", s(&f.path("spec.json")), "--out", s(&f.path("corpus"))]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }

    fn train(&self, system: &str, out: &str) -> PathBuf {
        let dir = self.path(out);
        mdlas_ok(&["train", "--config", s(&self.path("train.json")), "--system", system, "--seed", "3", "--out", s(&dir)]);
        dir
    }
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_is_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    let c = root.path().join("c");
    mdlas_ok(&["gen-data", "--seed", "4", "--out", s(&a)]);
    mdlas_ok(&["gen-data", "--seed", "4", "--out", s(&b)]);
    mdlas_ok(&["gen-data", "--seed", "5", "--out", s(&c)]);
    let ta = tree_bytes(&a);
    assert_eq!(ta.len(), 7);
    assert_eq!(ta, tree_bytes(&b));
    assert_ne!(ta, tree_bytes(&c));
}

#[test]
fn malformed_spec_exits_2_naming_the_field() {
    let root = tempfile::tempdir().unwrap();
    let path = root.path().join("spec.json");
    let mut v = serde_json::to_value(SyntheticSpec::default_with_seed(0)).unwrap();
    v["feature_dim"] = serde_json::json!(-3);
    fs::write(&path, v.to_string()).unwrap();
    let out = mdlas(&["gen-data", "--config", s(&path), "--out", s(&root.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("feature_dim"));
}

#[test]
fn usage_errors_exit_2() {
    let out = mdlas(&["train", "--frobnicate", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mdlas(&["eval"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mdlas(&["train", "--out", "/nonexistent-dir-for-test"]);
    assert_eq!(out.status.code(), Some(2), "no corpus given");
    let out = mdlas(&["train", "--system", "S11", "--corpus", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("system"));
}

#[test]
fn help_lists_the_flags() {
    let expect: &[(&str, &[&str])] = &[
        ("gen-data", &["--config", "--seed", "--out"]),
        ("train", &["--config", "--seed", "--out", "--system", "--corpus", "--max-steps"]),
        ("finetune", &["--checkpoint", "--dialect", "--max-steps"]),
        ("eval", &["--checkpoint", "--split", "--dialect-feed", "--beam"]),
        ("mismatch", &["--checkpoint", "--site"]),
        ("lexical", &["--checkpoint", "--split"]),
    ];
    for (cmd, flags) in expect {
        let out = mdlas_ok(&[cmd, "--help"]);
        let text = String::from_utf8_lossy(&out.stdout);
        for f in *flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn invalid_thread_count_exits_2() {
    let f = Fixture::new();
    let out = Command::new(env!("CARGO_BIN_EXE_mdlas"))
        .env("MDLAS_THREADS", "many")
        .args(["train", "--config", s(&f.path("train.json")), "--out", s(&f.path("m"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MDLAS_THREADS"));
}

#[test]
fn train_writes_presets_and_reports() {
    let f = Fixture::new();
    for (system, tokens, enc, dec) in [("S1", false, false, false), ("S4", true, false, false), ("S9", true, true, true)] {
        let dir = f.train(system, system);
        let (ck, meta) = load_checkpoint(&dir).unwrap();
        assert_eq!(meta.system.as_deref(), Some(system));
        let c = ck.model.config().conditioning;
        assert_eq!(ck.model.vocab().has_dialect_tokens(), tokens, "{system}");
        assert_eq!(c.input_vector.encoder_layers, enc, "{system}");
        assert_eq!(c.input_vector.decoder_layers, dec, "{system}");
        let report: TrainReportFile = serde_json::from_slice(&fs::read(dir.join(TRAIN_REPORT_JSON)).unwrap()).unwrap();
        assert_eq!(report.system, system);
        assert_eq!(report.num_parameters, ck.model.num_parameters());
        assert_eq!(report.report.steps, 6);
        assert!(!report.report.records.is_empty());
    }
}

#[test]
fn finetune_with_no_steps_copies_the_input() {
    let f = Fixture::new();
    let base = f.train("S1", "base");
    let out = f.path("ft0");
    mdlas_ok(&[
        "finetune", "--config", s(&f.path("train.json")), "--checkpoint", s(&base), "--dialect", "en-au",
        "--max-steps", "0", "--out", s(&out),
    ]);
    for name in [MODEL_JSON, MODEL_BIN] {
        assert_eq!(fs::read(base.join(name)).unwrap(), fs::read(out.join(name)).unwrap(), "{name}");
    }
    let out = mdlas(&[
        "finetune", "--config", s(&f.path("train.json")), "--checkpoint", s(&base), "--dialect", "en-nz",
        "--out", s(&f.path("ftx")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_groups_finetuned_checkpoints() {
    let f = Fixture::new();
    let cfg = f.path("train.json");
    let base = f.train("S1", "base");
    let mut args = vec!["eval".to_string(), "--config".into(), s(&cfg).into(), "--checkpoint".into(), s(&base).into()];
    for code in ["en-us", "en-gb", "en-au"] {
        let out = f.path(&format!("ft-{code}"));
        mdlas_ok(&["finetune", "--config", s(&cfg), "--checkpoint", s(&base), "--dialect", code, "--out", s(&out)]);
        let (_, meta) = load_checkpoint(&out).unwrap();
        assert_eq!(meta.system.as_deref(), Some("S2"));
        assert_eq!(meta.finetuned_dialect.as_deref(), Some(code));
        args.extend(["--checkpoint".into(), s(&out).into()]);
    }
    let eval_dir = f.path("eval");
    args.extend(["--out".into(), s(&eval_dir).into()]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    mdlas_ok(&args);
    let report: EvalReportFile = serde_json::from_slice(&fs::read(eval_dir.join(EVAL_REPORT_JSON)).unwrap()).unwrap();
    assert_eq!(report.systems.len(), 2);
    assert_eq!(report.checkpoints.len(), 4);
    let s2 = &report.systems[1];
    assert_eq!(s2.system, "S2");
    for (d, score) in s2.per_dialect.iter().enumerate() {
        assert_eq!(score.utterances, 4);
        let own = &report.checkpoints[1 + d].report;
        assert_eq!(own.overall.utterances, 4);
        assert_eq!(score.wer, own.per_dialect[d].wer);
    }
    assert_eq!(s2.overall.utterances, 12);
    let csv = fs::read_to_string(eval_dir.join(EVAL_CSV)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "system,en-us,en-gb,en-au,overall,mean");
    assert!(lines[1].starts_with("S1,") && lines[2].starts_with("S2,"));
}

#[test]
fn analysis_commands_write_their_tables() {
    let f = Fixture::new();
    let cfg = f.path("train.json");
    let s7 = f.train("S7", "s7");
    let out = f.path("mm");
    mdlas_ok(&["mismatch", "--config", s(&cfg), "--checkpoint", s(&s7), "--out", s(&out)]);
    let all: Vec<MismatchMatrix> = serde_json::from_slice(&fs::read(out.join("mismatch.json")).unwrap()).unwrap();
    assert_eq!(all.len(), 3);
    for m in &all {
        for (i, row) in m.values.iter().enumerate() {
            assert_eq!(row[i], 0.0);
        }
    }
    for name in ["mismatch.csv", "mismatch_decoder.csv", "mismatch_both.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let lex = f.path("lex");
    mdlas_ok(&["lexical", "--config", s(&cfg), "--checkpoint", s(&s7), "--split", "dev", "--out", s(&lex)]);
    let csv = fs::read_to_string(lex.join("lexical.csv")).unwrap();
    let pairs = SyntheticSpec::default_with_seed(0).minimal_pairs().len();
    assert_eq!(csv.lines().count(), pairs + 1);

    let s1 = f.train("S1", "s1");
    let out = mdlas(&["mismatch", "--config", s(&cfg), "--checkpoint", s(&s1), "--out", s(&f.path("mm1"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_is_reproducible() {
    let f = Fixture::new();
    let a = f.train("S7", "a");
    let b = f.train("S7", "b");
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
}
