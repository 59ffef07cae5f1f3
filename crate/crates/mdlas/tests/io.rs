use std::fs;

use mdlas::config::{ExperimentConfig, ModelSizes};
use mdlas::io::{
    checkpoint_files, lexical_csv, load_checkpoint, mismatch_csv, read_corpus, read_spec, save_checkpoint, write_corpus,
    CheckpointMeta, Manifest, ModelFile, FEATURES_BIN, MANIFEST_JSON, MODEL_BIN, MODEL_JSON,
};
use mdlas::Error;
use mdlas_core::eval::{
    evaluate, evaluate_with, lexical_switch_analysis, mismatch_matrix, FeedPolicy, InjectionSite, Sequential,
};
use mdlas_core::model::LasModel;
use mdlas_core::synth::{generate_corpus, SplitSizes, SyntheticSpec};
use mdlas_core::train::Checkpoint;

fn small_spec(seed: u64) -> SyntheticSpec {
    let mut spec = SyntheticSpec::default_with_seed(seed);
    for s in &mut spec.utterances_per_dialect {
        *s = SplitSizes { train: 6, dev: 3, test: 4 };
    }
    spec
}

fn tiny_model(spec: &SyntheticSpec, system: &str, seed: u64) -> LasModel {
    let cfg = ExperimentConfig {
        system: system.into(),
        model: ModelSizes {
            encoder_layers: vec![6],
            decoder_layers: vec![6],
            attention_dim: 5,
            embedding_dim: 4,
            cat_hidden: 3,
            ..ModelSizes::default()
        },
        ..ExperimentConfig::default()
    };
    LasModel::new(cfg.model_config(spec).unwrap(), seed).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let spec = small_spec(1);
    for system in ["S1", "S4", "S5(emb)", "S7", "S8(emb)", "S9"] {
        let dir = tempfile::tempdir().unwrap();
        let mut ck = Checkpoint::fresh(tiny_model(&spec, system, 3), 0.25);
        ck.state.step = 17;
        ck.state.dev_wer_history = vec![100.0, 87.5, 1.0 / 3.0];
        let meta = CheckpointMeta {
            system: Some(system.into()),
            finetuned_dialect: None,
        };
        save_checkpoint(dir.path(), &ck, &meta).unwrap();
        let (loaded, meta2) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(loaded.state, ck.state);
        assert_eq!(loaded.model.config(), ck.model.config());
        for ((n1, a), (n2, b)) in ck.model.params().iter().zip(loaded.model.params().iter()) {
            assert_eq!(n1, n2);
            let rounded: Vec<f64> = a.values().iter().map(|&v| v as f32 as f64).collect();
            assert_eq!(rounded, b.values(), "{system} {n1}");
        }
        let first = (fs::read(dir.path().join(MODEL_JSON)).unwrap(), fs::read(dir.path().join(MODEL_BIN)).unwrap());
        let (json, bin) = checkpoint_files(&loaded, &meta2);
        assert_eq!(json.as_bytes(), first.0.as_slice());
        assert_eq!(bin, first.1);
        assert_eq!(bin.len(), 4 * ck.model.num_parameters());
    }
}

#[test]
fn manifest_offsets_are_contiguous() {
    let spec = small_spec(2);
    let dir = tempfile::tempdir().unwrap();
    let ck = Checkpoint::fresh(tiny_model(&spec, "S7", 1), 0.1);
    save_checkpoint(dir.path(), &ck, &CheckpointMeta::default()).unwrap();
    let file: ModelFile = serde_json::from_slice(&fs::read(dir.path().join(MODEL_JSON)).unwrap()).unwrap();
    let mut next = 0;
    for p in &file.params {
        assert_eq!(p.offset, next);
        next += 4 * p.shape.iter().product::<usize>() as u64;
    }
    assert_eq!(next as usize, fs::read(dir.path().join(MODEL_BIN)).unwrap().len());
    assert_eq!(file.format, "f32le");
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let spec = small_spec(2);
    let dir = tempfile::tempdir().unwrap();
    let ck = Checkpoint::fresh(tiny_model(&spec, "S1", 1), 0.1);
    save_checkpoint(dir.path(), &ck, &CheckpointMeta::default()).unwrap();
    let bin = dir.path().join(MODEL_BIN);
    let mut bytes = fs::read(&bin).unwrap();
    bytes.truncate(bytes.len() - 4);
    fs::write(&bin, &bytes).unwrap();
    let err = load_checkpoint(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
    assert_eq!(err.exit_code(), 1);
    bytes.extend_from_slice(&[0; 8]);
    fs::write(&bin, &bytes).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Format { .. })));
}

#[test]
fn corpus_round_trip_equals_generated_corpus() {
    let spec = small_spec(5);
    let corpus = generate_corpus(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &spec, &corpus).unwrap();
    let (spec2, corpus2) = read_corpus(dir.path()).unwrap();
    assert_eq!(spec2, spec);
    assert_eq!(corpus2, corpus);
    let manifest: Manifest =
        serde_json::from_slice(&fs::read(dir.path().join("test").join(MANIFEST_JSON)).unwrap()).unwrap();
    assert_eq!(manifest.split, "test");
    assert_eq!(manifest.utterances.len(), 12);
    let e = &manifest.utterances[1];
    assert_eq!(e.offset, 4 * (manifest.utterances[0].frames * 8) as u64);
    assert_eq!(e.dim, 8);
    assert_eq!(e.dialect, "en-us");
    let bin = fs::read(dir.path().join("test").join(FEATURES_BIN)).unwrap();
    let frames: usize = manifest.utterances.iter().map(|u| u.frames).sum();
    assert_eq!(bin.len(), 4 * 8 * frames);
}

#[test]
fn corpus_with_unknown_dialect_is_rejected() {
    let spec = small_spec(5);
    let corpus = generate_corpus(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &spec, &corpus).unwrap();
    let path = dir.path().join("dev").join(MANIFEST_JSON);
    let text = fs::read_to_string(&path).unwrap().replacen("\"en-gb\"", "\"en-nz\"", 1);
    fs::write(&path, text).unwrap();
    let err = read_corpus(dir.path()).unwrap_err();
    assert!(err.to_string().contains("en-nz"), "{err}");
}

#[test]
fn malformed_spec_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spec.json");
    let mut v = serde_json::to_value(small_spec(0)).unwrap();
    v["noise_sigma"] = serde_json::json!("loud");
    fs::write(&path, v.to_string()).unwrap();
    let err = read_spec(&path).unwrap_err();
    assert!(matches!(&err, Error::Config { field, .. } if field == "noise_sigma"), "{err}");
    assert_eq!(err.exit_code(), 2);

    v["noise_sigma"] = serde_json::json!(-1.0);
    fs::write(&path, v.to_string()).unwrap();
    let err = read_spec(&path).unwrap_err();
    assert!(err.to_string().contains("noise_sigma"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.json");
    fs::write(&path, r#"{"system": "S7", "train": {"learning_rat": 0.1}}"#).unwrap();
    let err = ExperimentConfig::load(&path).unwrap_err();
    assert!(err.to_string().contains("learning_rat"), "{err}");
    fs::write(&path, r#"{"system": "S10"}"#).unwrap();
    let err = ExperimentConfig::load(&path).unwrap_err();
    assert!(err.to_string().contains("system"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn relative_paths_resolve_against_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.json");
    fs::write(&path, r#"{"corpus": "data", "system": "S9"}"#).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.corpus.unwrap(), dir.path().join("data"));
}

#[test]
fn system_presets_expand_through_the_config() {
    let spec = small_spec(0);
    let m = tiny_model(&spec, "S9", 0);
    let c = m.config().conditioning;
    assert!(c.input_vector.encoder_layers && c.input_vector.decoder_layers);
    assert!(m.vocab().has_dialect_tokens());
    let m = tiny_model(&spec, "S1", 0);
    assert!(!m.config().conditioning.uses_dialect_input());
    assert!(!m.vocab().has_dialect_tokens());
}

#[test]
fn parallel_runner_matches_sequential() {
    let spec = small_spec(8);
    let corpus = generate_corpus(&spec).unwrap();
    let m = tiny_model(&spec, "S9", 4);
    let seq = evaluate(&m, &corpus.test, FeedPolicy::Oracle).unwrap();
    for threads in [1, 2, 5] {
        let par = evaluate_with(&mdlas::runner::Parallel::new(threads), &m, &corpus.test, FeedPolicy::Oracle, 1).unwrap();
        assert_eq!(par, seq);
    }
    let seq2 = evaluate_with(&Sequential, &m, &corpus.test, FeedPolicy::Oracle, 2).unwrap();
    let par2 = evaluate_with(&mdlas::runner::Parallel::new(3), &m, &corpus.test, FeedPolicy::Oracle, 2).unwrap();
    assert_eq!(par2, seq2);
}

#[test]
fn csv_tables() {
    let spec = small_spec(3);
    let corpus = generate_corpus(&spec).unwrap();
    let m = tiny_model(&spec, "S7", 2);
    let mm = mismatch_matrix(&m, &corpus.test, InjectionSite::Encoder).unwrap();
    let csv = mismatch_csv(&mm);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "fed\\test,en-us,en-gb,en-au");
    assert_eq!(lines.len(), 4);
    for (r, line) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], spec.dialects.code(r));
        assert_eq!(cells[r + 1], "0");
    }
    let rows = lexical_switch_analysis(&m, &spec.minimal_pairs(), &corpus.test).unwrap();
    let csv = lexical_csv(&rows, &spec.dialects);
    assert!(csv.starts_with("dialect_a,spelling_a,dialect_b,spelling_b,occurrences,switched,rate\n"));
    assert_eq!(csv.lines().count(), rows.len() + 1);
}
