//! Experiment configuration files.

use std::path::{Path, PathBuf};

use mdlas_core::data::Split;
use mdlas_core::dialect::{DialectInventory, SystemTag, VectorKind};
use mdlas_core::eval::{FeedPolicy, InjectionSite};
use mdlas_core::model::ModelConfig;
use mdlas_core::synth::SyntheticSpec;
use mdlas_core::train::TrainConfig;
use mdlas_core::Precision;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_config;

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::Core(mdlas_core::Error::Validation {
        field: field.into(),
        reason: reason.into(),
    })
}

/// Layer sizes; the vocabulary and dialects come from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSizes {
    pub encoder_layers: Vec<usize>,
    pub decoder_layers: Vec<usize>,
    pub attention_dim: usize,
    pub embedding_dim: usize,
    /// Learned dialect-vector width for the `emb` variants. Defaults to the
    /// 1-hot width.
    pub dialect_embedding_dim: Option<usize>,
    pub cat_hidden: usize,
    pub precision: Precision,
}

impl Default for ModelSizes {
    /// Desk scale: one 64-cell encoder layer, two 64-cell decoder layers.
    fn default() -> Self {
        ModelSizes {
            encoder_layers: vec![64],
            decoder_layers: vec![64, 64],
            attention_dim: 64,
            embedding_dim: 16,
            dialect_embedding_dim: None,
            cat_hidden: 32,
            precision: Precision::Float64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// `train`, `dev` or `test`.
    pub split: String,
    pub beam: usize,
    /// `oracle` or a dialect code.
    pub dialect_feed: String,
    /// `encoder`, `decoder` or `both`; inferred from the model when unset.
    pub site: Option<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            split: "test".into(),
            beam: 1,
            dialect_feed: "oracle".into(),
            site: None,
        }
    }
}

/// Contents of `train.json`. Relative paths resolve against the file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Corpus directory written by `gen-data`.
    pub corpus: Option<PathBuf>,
    /// Input checkpoint directory for fine-tuning and evaluation.
    pub checkpoint: Option<PathBuf>,
    /// System tag, `S1` to `S9`.
    pub system: String,
    pub model: ModelSizes,
    pub train: TrainConfig,
    /// Fine-tuning schedule; `train` is used when unset.
    pub finetune: Option<TrainConfig>,
    pub eval: EvalSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: None,
            checkpoint: None,
            system: "S1".into(),
            model: ModelSizes::default(),
            train: desk_train_config(),
            finetune: None,
            eval: EvalSettings::default(),
        }
    }
}

/// Training schedule tuned for the default synthetic corpus.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1.0,
        lr_decay: 0.9,
        max_epochs: 30,
        eval_every_n_steps: 282,
        dev_per_dialect: Some(100),
        ..TrainConfig::default()
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = read_config(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.corpus, &mut cfg.checkpoint].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system_tag()?;
        self.train.validate()?;
        if let Some(ft) = &self.finetune {
            ft.validate()?;
        }
        parse_split(&self.eval.split)?;
        if self.eval.beam == 0 {
            return Err(invalid("eval.beam", "must be positive"));
        }
        if let Some(site) = &self.eval.site {
            parse_site(site)?;
        }
        Ok(())
    }

    pub fn system_tag(&self) -> Result<SystemTag> {
        self.system.parse().map_err(|e: mdlas_core::Error| invalid("system", e.to_string()))
    }

    pub fn finetune_config(&self) -> &TrainConfig {
        self.finetune.as_ref().unwrap_or(&self.train)
    }

    /// Model configuration for the corpus described by `spec`.
    pub fn model_config(&self, spec: &SyntheticSpec) -> Result<ModelConfig> {
        let m = &self.model;
        let mut cfg = ModelConfig::for_system(
            4 * spec.feature_dim,
            &spec.grapheme_set(),
            spec.dialects.clone(),
            self.system_tag()?,
        )?;
        if let (Some(dim), VectorKind::Embedding { .. }) = (m.dialect_embedding_dim, cfg.conditioning.vector_kind) {
            cfg.conditioning.vector_kind = VectorKind::Embedding { dim };
        }
        if let Some(cat) = &mut cfg.cat {
            cat.cluster_hidden = m.cat_hidden;
        }
        cfg.precision = m.precision;
        Ok(cfg.with_sizes(&m.encoder_layers, &m.decoder_layers, m.attention_dim, m.embedding_dim)?)
    }
}

pub fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|sp| sp.name() == s)
        .ok_or_else(|| invalid("split", format!("expected train, dev or test, got {s:?}")))
}

pub fn parse_site(s: &str) -> Result<InjectionSite> {
    match s {
        "encoder" => Ok(InjectionSite::Encoder),
        "decoder" => Ok(InjectionSite::Decoder),
        "both" => Ok(InjectionSite::Both),
        _ => Err(invalid("site", format!("expected encoder, decoder or both, got {s:?}"))),
    }
}

/// `oracle` or a dialect code.
pub fn parse_feed(s: &str, dialects: &DialectInventory) -> Result<FeedPolicy> {
    if s == "oracle" {
        return Ok(FeedPolicy::Oracle);
    }
    dialects
        .by_code(s)
        .map(FeedPolicy::Fixed)
        .ok_or_else(|| invalid("dialect_feed", format!("expected oracle or a dialect code, got {s:?}")))
}

pub fn dialect_id(code: &str, dialects: &DialectInventory) -> Result<usize> {
    dialects
        .by_code(code)
        .ok_or_else(|| invalid("dialect", format!("unknown dialect code {code:?}")))
}
