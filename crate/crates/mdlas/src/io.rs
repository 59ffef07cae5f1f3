//! On-disk formats: checkpoints, corpora, reports and CSV tables.
//!
//! A checkpoint directory holds `model.json` (configuration, training state
//! and a manifest of parameter names, shapes and byte offsets) and
//! `model.bin` (little-endian `f32` arrays in manifest order). A corpus
//! directory holds `spec.json` and, per split, `manifest.json` plus
//! `features.bin` (little-endian `f32` frames).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mdlas_core::data::{Corpus, Split, Utterance};
use mdlas_core::dialect::DialectInventory;
use mdlas_core::eval::{MismatchMatrix, PairSwitch};
use mdlas_core::model::{LasModel, ModelConfig};
use mdlas_core::synth::SyntheticSpec;
use mdlas_core::train::{Checkpoint, TrainState};
use mdlas_core::Tensor;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_JSON: &str = "model.json";
pub const MODEL_BIN: &str = "model.bin";
pub const SPEC_JSON: &str = "spec.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const FEATURES_BIN: &str = "features.bin";

const F32_LE: &str = "f32le";

/// Parses a user-supplied JSON file. Errors name the offending field.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::Config {
            path: path.to_path_buf(),
            field: if field == "." { "document".into() } else { field },
            reason: e.into_inner().to_string(),
        }
    })
}

/// Parses a JSON file written by this crate.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, to_json(value).as_bytes())
}

/// Writes a file, creating its parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn push_f32(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn f32_values(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect()
}

/// Labels stored next to a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// System tag such as `S7` or `S5(emb)`.
    pub system: Option<String>,
    /// Dialect code the model was fine-tuned on.
    pub finetuned_dialect: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `model.bin`.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    #[serde(flatten)]
    pub meta: CheckpointMeta,
    pub config: ModelConfig,
    pub state: TrainState,
    pub params: Vec<ParamEntry>,
}

/// `model.json` and `model.bin` contents. Parameters are rounded to `f32`.
pub fn checkpoint_files(ck: &Checkpoint, meta: &CheckpointMeta) -> (String, Vec<u8>) {
    let mut bin = Vec::with_capacity(4 * ck.model.num_parameters());
    let mut params = Vec::new();
    for (name, t) in ck.model.params().iter() {
        params.push(ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: bin.len() as u64,
        });
        push_f32(&mut bin, t.values());
    }
    let file = ModelFile {
        format: F32_LE.into(),
        meta: meta.clone(),
        config: ck.model.config().clone(),
        state: ck.state.clone(),
        params,
    };
    (to_json(&file), bin)
}

pub fn save_checkpoint(dir: &Path, ck: &Checkpoint, meta: &CheckpointMeta) -> Result<()> {
    let (json, bin) = checkpoint_files(ck, meta);
    write_bytes(&dir.join(MODEL_BIN), &bin)?;
    write_bytes(&dir.join(MODEL_JSON), json.as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Checkpoint, CheckpointMeta)> {
    let json_path = dir.join(MODEL_JSON);
    let bin_path = dir.join(MODEL_BIN);
    let file: ModelFile = read_json(&json_path)?;
    if file.format != F32_LE {
        return Err(Error::format(&json_path, format!("unsupported format {:?}", file.format)));
    }
    let bin = read_bytes(&bin_path)?;
    let mut tensors = Vec::with_capacity(file.params.len());
    let mut expected = 0u64;
    for p in &file.params {
        let n: usize = p.shape.iter().product();
        if p.offset != expected {
            return Err(Error::format(&json_path, format!("parameter {} is not contiguous", p.name)));
        }
        let start = p.offset as usize;
        let end = start + 4 * n;
        if end > bin.len() {
            return Err(Error::format(&bin_path, format!("parameter {} runs past the end of the file", p.name)));
        }
        let t = Tensor::new(p.shape.clone(), f32_values(&bin[start..end])).map_err(Error::Core)?;
        tensors.push((p.name.clone(), t));
        expected = end as u64;
    }
    if expected as usize != bin.len() {
        return Err(Error::format(&bin_path, "trailing bytes after the last parameter"));
    }
    let model = LasModel::from_params(file.config, tensors)?;
    Ok((
        Checkpoint {
            model,
            state: file.state,
        },
        file.meta,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Byte offset into the split's feature file.
    pub offset: u64,
    pub frames: usize,
    pub dim: usize,
    pub transcript: String,
    /// Dialect code.
    pub dialect: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub split: String,
    /// Feature file, relative to the manifest.
    pub features: String,
    pub utterances: Vec<ManifestEntry>,
}

/// Reads and validates a synthetic corpus spec.
pub fn read_spec(path: &Path) -> Result<SyntheticSpec> {
    let spec: SyntheticSpec = read_config(path)?;
    spec.validate()?;
    Ok(spec)
}

pub fn write_corpus(dir: &Path, spec: &SyntheticSpec, corpus: &Corpus) -> Result<()> {
    write_json(&dir.join(SPEC_JSON), spec)?;
    for split in Split::ALL {
        let sub = dir.join(split.name());
        let mut bin = Vec::new();
        let mut utterances = Vec::new();
        for u in corpus.split(split) {
            utterances.push(ManifestEntry {
                id: u.id.clone(),
                offset: bin.len() as u64,
                frames: u.features.rows(),
                dim: u.features.cols(),
                transcript: u.transcript.clone(),
                dialect: spec.dialects.code(u.dialect).to_string(),
            });
            push_f32(&mut bin, u.features.values());
        }
        write_bytes(&sub.join(FEATURES_BIN), &bin)?;
        let manifest = Manifest {
            split: split.name().into(),
            features: FEATURES_BIN.into(),
            utterances,
        };
        write_json(&sub.join(MANIFEST_JSON), &manifest)?;
    }
    Ok(())
}

/// Reads one split's utterances.
pub fn read_split(dir: &Path, split: Split, dialects: &DialectInventory) -> Result<Vec<Utterance>> {
    let sub = dir.join(split.name());
    let manifest_path = sub.join(MANIFEST_JSON);
    let manifest: Manifest = read_json(&manifest_path)?;
    let bin_path = sub.join(&manifest.features);
    let bin = read_bytes(&bin_path)?;
    let mut out = Vec::with_capacity(manifest.utterances.len());
    for e in manifest.utterances {
        let dialect = dialects
            .by_code(&e.dialect)
            .ok_or_else(|| Error::format(&manifest_path, format!("utterance {} has unknown dialect {:?}", e.id, e.dialect)))?;
        let start = e.offset as usize;
        let end = start + 4 * e.frames * e.dim;
        if e.frames == 0 || e.dim == 0 || end > bin.len() {
            return Err(Error::format(&bin_path, format!("utterance {} has an invalid feature range", e.id)));
        }
        let features = Tensor::matrix(e.frames, e.dim, f32_values(&bin[start..end]))?;
        out.push(Utterance {
            id: e.id,
            dialect,
            transcript: e.transcript,
            features,
        });
    }
    Ok(out)
}

/// Reads a corpus directory written by [`write_corpus`].
pub fn read_corpus(dir: &Path) -> Result<(SyntheticSpec, Corpus)> {
    let spec = read_spec(&dir.join(SPEC_JSON))?;
    let mut corpus = Corpus::default();
    let mut ids = BTreeSet::new();
    for split in Split::ALL {
        let utts = read_split(dir, split, &spec.dialects)?;
        for u in &utts {
            if !ids.insert(u.id.clone()) {
                return Err(Error::format(dir, format!("duplicate utterance id {}", u.id)));
            }
            if u.features.cols() != spec.feature_dim {
                return Err(Error::format(dir, format!("utterance {} does not have feature_dim columns", u.id)));
            }
        }
        *corpus.split_mut(split) = utts;
    }
    Ok((spec, corpus))
}

/// D x D table with a header row and a leading column of dialect codes.
/// Rows are the fed dialect, columns the test dialect.
pub fn mismatch_csv(m: &MismatchMatrix) -> String {
    let mut s = String::from("fed\\test");
    for c in &m.dialects {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for (code, row) in m.dialects.iter().zip(&m.values) {
        s.push_str(code);
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// One row per minimal pair; the rate is empty when the pair is not
/// measurable on the test set.
pub fn lexical_csv(rows: &[PairSwitch], dialects: &DialectInventory) -> String {
    let mut s = String::from("dialect_a,spelling_a,dialect_b,spelling_b,occurrences,switched,rate\n");
    for r in rows {
        let rate = r.rate.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            dialects.code(r.pair.dialect_a),
            r.pair.spelling_a,
            dialects.code(r.pair.dialect_b),
            r.pair.spelling_b,
            r.occurrences,
            r.switched,
            rate
        );
    }
    s
}
