//! Listen-attend-spell model with dialect conditioning.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialect::{
    augment_targets, dialect_vector, onehot_width, ConditioningMode, DialectInventory, GraphemeVocab, OutputToken,
    SystemTag, VectorKind,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{
    attend_with_keys, embed, lstm_cell_step, lstm_layer_forward, AttentionParams, EmbeddingParams, LinearParams,
    LstmParams, LstmState,
};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Precision, Tensor};

/// Cluster adaptive training branch: `C` cluster LSTMs read the outputs of
/// encoder layer `source_layer`; their projected outputs, weighted by the
/// dialect's interpolation vector, are added to the outputs of encoder layer
/// `target_layer`. Layers are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatConfig {
    pub num_clusters: usize,
    pub cluster_hidden: usize,
    pub source_layer: usize,
    pub target_layer: usize,
}

impl CatConfig {
    /// One cluster per dialect, reading layer 1 and adding to layer 4 (or the
    /// top layer of shallower encoders).
    pub fn for_encoder(num_dialects: usize, encoder_layers: usize, cluster_hidden: usize) -> Self {
        CatConfig {
            num_clusters: num_dialects,
            cluster_hidden,
            source_layer: 1,
            target_layer: encoder_layers.min(4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of the stacked acoustic frames fed to the encoder.
    pub input_dim: usize,
    pub encoder_layers: Vec<usize>,
    pub decoder_layers: Vec<usize>,
    pub attention_dim: usize,
    pub embedding_dim: usize,
    /// Output symbols in id order.
    pub vocab: Vec<String>,
    pub dialects: DialectInventory,
    pub conditioning: ConditioningMode,
    #[serde(default)]
    pub cat: Option<CatConfig>,
    #[serde(default)]
    pub precision: Precision,
}

impl ModelConfig {
    /// Small default configuration for `system`: encoder 3 x 64, decoder
    /// 2 x 64, attention 64, grapheme embeddings 32.
    pub fn for_system(input_dim: usize, graphemes: &[char], dialects: DialectInventory, system: SystemTag) -> Result<Self> {
        let conditioning = system.conditioning(dialects.vector_dim);
        let vocab = GraphemeVocab::new(graphemes, &dialects, conditioning.output_token != OutputToken::None)?;
        let encoder_layers = vec![64; 3];
        let cat = conditioning
            .cat_encoder
            .then(|| CatConfig::for_encoder(dialects.len(), encoder_layers.len(), 64));
        let cfg = ModelConfig {
            input_dim,
            encoder_layers,
            decoder_layers: vec![64; 2],
            attention_dim: 64,
            embedding_dim: 32,
            vocab: vocab.symbols().to_vec(),
            dialects,
            conditioning,
            cat,
            precision: Precision::Float64,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the layer widths, keeping the CAT target layer in range.
    pub fn with_sizes(mut self, encoder: &[usize], decoder: &[usize], attention: usize, embedding: usize) -> Result<Self> {
        self.encoder_layers = encoder.to_vec();
        self.decoder_layers = decoder.to_vec();
        self.attention_dim = attention;
        self.embedding_dim = embedding;
        if let Some(cat) = &mut self.cat {
            cat.target_layer = cat.target_layer.min(encoder.len()).max(cat.source_layer);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn grapheme_vocab(&self) -> Result<GraphemeVocab> {
        GraphemeVocab::from_symbols(self.vocab.clone(), &self.dialects)
    }

    pub fn validate(&self) -> Result<()> {
        self.dialects.validate()?;
        let vocab = self.grapheme_vocab()?;
        let positive = |field: &'static str, v: usize| {
            if v == 0 {
                Err(Error::validation(field, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive("input_dim", self.input_dim)?;
        positive("attention_dim", self.attention_dim)?;
        positive("embedding_dim", self.embedding_dim)?;
        if self.encoder_layers.is_empty() || self.encoder_layers.contains(&0) {
            return Err(Error::validation("encoder_layers", "need at least one layer of positive width"));
        }
        if self.decoder_layers.is_empty() || self.decoder_layers.contains(&0) {
            return Err(Error::validation("decoder_layers", "need at least one layer of positive width"));
        }
        let c = &self.conditioning;
        if vocab.has_dialect_tokens() != (c.output_token != OutputToken::None) {
            return Err(Error::validation(
                "vocab",
                "dialect tokens must be in the vocabulary exactly when an output token is used",
            ));
        }
        if let VectorKind::Embedding { dim } = c.vector_kind {
            positive("vector_kind.dim", dim)?;
        }
        match (&self.cat, c.cat_encoder) {
            (None, false) => {}
            (Some(_), false) => return Err(Error::validation("cat", "given without cat_encoder conditioning")),
            (None, true) => return Err(Error::validation("cat", "cat_encoder conditioning needs a cat config")),
            (Some(cat), true) => {
                positive("cat.num_clusters", cat.num_clusters)?;
                positive("cat.cluster_hidden", cat.cluster_hidden)?;
                let l = self.encoder_layers.len();
                if cat.source_layer == 0 || cat.source_layer > cat.target_layer || cat.target_layer > l {
                    return Err(Error::validation(
                        "cat",
                        format!("need 1 <= source_layer <= target_layer <= {l}"),
                    ));
                }
                if c.vector_kind == VectorKind::Onehot && cat.num_clusters < self.dialects.len() {
                    return Err(Error::validation("cat.num_clusters", "1-hot weights need a cluster per dialect"));
                }
            }
        }
        Ok(())
    }

    /// Width of the dialect vector appended to layer inputs (0 if none).
    fn vector_width(&self) -> usize {
        match self.conditioning.vector_kind {
            VectorKind::Onehot => self.dialects.vector_dim,
            VectorKind::Embedding { dim } => dim,
        }
    }

    fn encoder_extra(&self) -> usize {
        if self.conditioning.input_vector.encoder_layers {
            self.vector_width()
        } else {
            0
        }
    }

    fn decoder_extra(&self) -> usize {
        if self.conditioning.input_vector.decoder_layers {
            self.vector_width()
        } else {
            0
        }
    }
}

/// Closed-form parameter count of the model described by `cfg`.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    let v = cfg.vocab.len();
    let (ve, vd) = (cfg.encoder_extra(), cfg.decoder_extra());
    let mut n = 0;
    let mut width = cfg.input_dim;
    for &h in &cfg.encoder_layers {
        n += LstmParams::num_params(width + ve, h);
        width = h;
    }
    let enc_top = width;
    if let VectorKind::Embedding { dim } = cfg.conditioning.vector_kind {
        if cfg.conditioning.input_vector.any() {
            n += cfg.dialects.len() * dim;
        }
    }
    if let Some(cat) = &cfg.cat {
        let src = cfg.encoder_layers[cat.source_layer - 1];
        let tgt = cfg.encoder_layers[cat.target_layer - 1];
        n += cat.num_clusters * (LstmParams::num_params(src, cat.cluster_hidden) + cat.cluster_hidden * tgt);
        if matches!(cfg.conditioning.vector_kind, VectorKind::Embedding { .. }) {
            n += cfg.dialects.len() * cat.num_clusters;
        }
    }
    n += AttentionParams::num_params(enc_top, cfg.decoder_layers[0], cfg.attention_dim);
    n += v * cfg.embedding_dim;
    let mut width = cfg.embedding_dim + enc_top;
    for &h in &cfg.decoder_layers {
        n += LstmParams::num_params(width + vd, h);
        width = h;
    }
    n += (width + vd) * v + v;
    n
}

#[derive(Debug, Clone, PartialEq)]
struct CatCluster {
    lstm: LstmParams,
    proj: LinearParams,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    encoder: Vec<LstmParams>,
    dialect_table: Option<ParamId>,
    cat: Vec<CatCluster>,
    cat_table: Option<ParamId>,
    attention: AttentionParams,
    embedding: EmbeddingParams,
    decoder: Vec<LstmParams>,
    output: LinearParams,
}

impl Layout {
    fn build(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (ve, vd) = (cfg.encoder_extra(), cfg.decoder_extra());
        let mut encoder = Vec::new();
        let mut width = cfg.input_dim;
        for (i, &h) in cfg.encoder_layers.iter().enumerate() {
            encoder.push(LstmParams::init(store, &format!("encoder.{i}"), width + ve, h, rng)?);
            width = h;
        }
        let enc_top = width;
        let mut dialect_table = None;
        if let VectorKind::Embedding { dim } = cfg.conditioning.vector_kind {
            if cfg.conditioning.input_vector.any() {
                dialect_table = Some(store.insert_uniform("dialect.embedding", &[cfg.dialects.len(), dim], 1.0, rng)?);
            }
        }
        let mut cat = Vec::new();
        let mut cat_table = None;
        if let Some(c) = &cfg.cat {
            let src = cfg.encoder_layers[c.source_layer - 1];
            let tgt = cfg.encoder_layers[c.target_layer - 1];
            for k in 0..c.num_clusters {
                let lstm = LstmParams::init(store, &format!("cat.{k}.lstm"), src, c.cluster_hidden, rng)?;
                let proj = LinearParams::init(store, &format!("cat.{k}.proj"), c.cluster_hidden, tgt, false, rng)?;
                cat.push(CatCluster { lstm, proj });
            }
            if matches!(cfg.conditioning.vector_kind, VectorKind::Embedding { .. }) {
                let n = c.num_clusters;
                cat_table = Some(store.insert_uniform("cat.embedding", &[cfg.dialects.len(), n], 1.0, rng)?);
            }
        }
        let attention =
            AttentionParams::init(store, "attention", enc_top, cfg.decoder_layers[0], cfg.attention_dim, rng)?;
        let embedding = EmbeddingParams::init(store, "decoder.embedding", cfg.vocab.len(), cfg.embedding_dim, rng)?;
        let mut decoder = Vec::new();
        let mut width = cfg.embedding_dim + enc_top;
        for (j, &h) in cfg.decoder_layers.iter().enumerate() {
            decoder.push(LstmParams::init(store, &format!("decoder.{j}"), width + vd, h, rng)?);
            width = h;
        }
        let output = LinearParams::init(store, "output", width + vd, cfg.vocab.len(), true, rng)?;
        Ok(Layout {
            encoder,
            dialect_table,
            cat,
            cat_table,
            attention,
            embedding,
            decoder,
            output,
        })
    }
}

/// Encoder output for one utterance.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[U x H]`
    pub enc: Var,
    /// Attention keys `enc W_enc^T`, `[U x A]`.
    pub keys: Var,
    pub valid: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct DecoderState {
    pub layers: Vec<LstmState>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Var,
    pub alpha: Var,
    pub state: DecoderState,
}

/// Dialect ids fed to the encoder-side (layer vectors and CAT weights) and
/// decoder-side conditioning. They differ only in mismatch experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DialectFeed {
    pub encoder: Option<usize>,
    pub decoder: Option<usize>,
}

impl DialectFeed {
    pub fn same(dialect: usize) -> Self {
        DialectFeed {
            encoder: Some(dialect),
            decoder: Some(dialect),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LasModel {
    config: ModelConfig,
    vocab: GraphemeVocab,
    params: ParamStore,
    layout: Layout,
}

impl LasModel {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = config.grapheme_vocab()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layout = Layout::build(&config, &mut params, &mut rng)?;
        Ok(LasModel {
            config,
            vocab,
            params,
            layout,
        })
    }

    /// Model from saved parameters. Every expected tensor must be present
    /// with the right shape and no extra tensors are allowed.
    pub fn from_params(config: ModelConfig, params: impl IntoIterator<Item = (String, Tensor)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let mut seen = 0;
        for (name, t) in params {
            let slot = model
                .params
                .by_name_mut(&name)
                .ok_or_else(|| Error::Data(format!("unexpected parameter {name}")))?;
            if slot.shape() != t.shape() {
                return Err(Error::Data(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            slot.values_mut().copy_from_slice(t.values());
            seen += 1;
        }
        if seen != model.params.len() {
            return Err(Error::Data(format!(
                "expected {} parameters, found {seen}",
                model.params.len()
            )));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &GraphemeVocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::with_precision(self.config.precision)
    }

    pub fn inference_graph(&self) -> Graph<'_> {
        Graph::inference_with_precision(self.config.precision)
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> Bound {
        self.params.bind(g)
    }

    fn kind(&self) -> VectorKind {
        self.config.conditioning.vector_kind
    }

    /// Dialect vector for layer inputs on the given side.
    fn layer_vector(&self, g: &mut Graph<'_>, bound: &Bound, dialect: Option<usize>, side: &str) -> Result<Var> {
        let d = dialect.ok_or_else(|| Error::contract(format!("{side} conditioning requires a dialect")))?;
        let table = self.layout.dialect_table.map(|t| bound.var(t));
        dialect_vector(g, d, self.kind(), &self.config.dialects, table)
    }

    /// Cluster interpolation weights for the CAT branch, `[C]`.
    pub fn cat_weights(&self, g: &mut Graph<'_>, bound: &Bound, dialect: Option<usize>) -> Result<Var> {
        let cat = self
            .config
            .cat
            .ok_or_else(|| Error::contract("model has no cat branch"))?;
        let d = dialect.ok_or_else(|| Error::contract("cat conditioning requires a dialect"))?;
        match self.kind() {
            VectorKind::Onehot => {
                let w = onehot_width(&self.config.dialects, d, cat.num_clusters)?;
                g.constant(&[w.len()], w)
            }
            VectorKind::Embedding { .. } => {
                self.config.dialects.check_id(d)?;
                let table = self.layout.cat_table.expect("embedding cat weights have a table");
                g.gather(bound.var(table), d)
            }
        }
    }

    /// Runs the encoder over `features: [U x input_dim]`. `valid` marks real
    /// (unpadded) frames.
    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        bound: &Bound,
        features: Var,
        dialect: Option<usize>,
        valid: Option<&[bool]>,
    ) -> Result<Encoded> {
        let shape = g.shape(features).to_vec();
        if shape.len() != 2 || shape[1] != self.config.input_dim {
            return Err(Error::shape("encode", &[0, self.config.input_dim], &shape));
        }
        if let Some(m) = valid {
            if m.len() != shape[0] {
                return Err(Error::shape("encode mask", &shape, &[m.len()]));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::contract("utterance with every frame masked"));
            }
        }
        let c = self.config.conditioning;
        let append = if c.input_vector.encoder_layers {
            Some(self.layer_vector(g, bound, dialect, "encoder")?)
        } else {
            None
        };
        let cat = match &self.config.cat {
            Some(cat) => Some((cat, self.cat_weights(g, bound, dialect)?)),
            None => None,
        };
        let mut rows: Vec<Var> = (0..shape[0]).map(|t| g.row(features, t)).collect::<Result<_>>()?;
        let mut source = Vec::new();
        for (i, p) in self.layout.encoder.iter().enumerate() {
            rows = lstm_layer_forward(g, bound, p, &rows, append, valid)?;
            if let Some((cat, weights)) = cat {
                if i + 1 == cat.source_layer {
                    source = rows.clone();
                }
                if i + 1 == cat.target_layer {
                    rows = self.cat_combine(g, bound, &source, &rows, weights, valid)?;
                }
            }
        }
        let enc = g.stack_rows(&rows)?;
        let keys = self.layout.attention.keys(g, bound, enc)?;
        Ok(Encoded {
            enc,
            keys,
            valid: valid.map(<[bool]>::to_vec),
        })
    }

    /// `o_target + Σ_c w_c · P_c LSTM_c(o_source)`. Clusters whose weight is
    /// a constant zero are skipped.
    pub fn cat_combine(
        &self,
        g: &mut Graph<'_>,
        bound: &Bound,
        source: &[Var],
        target: &[Var],
        weights: Var,
        valid: Option<&[bool]>,
    ) -> Result<Vec<Var>> {
        if source.len() != target.len() {
            return Err(Error::shape("cat_combine", &[source.len()], &[target.len()]));
        }
        if g.shape(weights) != [self.layout.cat.len()] {
            return Err(Error::shape("cat_combine weights", &[self.layout.cat.len()], g.shape(weights)));
        }
        let mut out = target.to_vec();
        for (k, cluster) in self.layout.cat.iter().enumerate() {
            if !g.requires_grad(weights) && g.value(weights)[k] == 0.0 {
                continue;
            }
            let w = g.pick(weights, k)?;
            let h = lstm_layer_forward(g, bound, &cluster.lstm, source, None, valid)?;
            for (t, &ht) in h.iter().enumerate() {
                if valid.is_some_and(|m| !m[t]) {
                    continue;
                }
                let p = cluster.proj.forward(g, bound, ht)?;
                let wp = g.mul(w, p)?;
                out[t] = g.add(out[t], wp)?;
            }
        }
        Ok(out)
    }

    pub fn initial_state(&self, g: &mut Graph<'_>) -> DecoderState {
        DecoderState {
            layers: self.layout.decoder.iter().map(|p| p.zero_state(g)).collect(),
        }
    }

    /// Decoder-side dialect vector, computed once per utterance.
    pub fn decoder_vector(&self, g: &mut Graph<'_>, bound: &Bound, dialect: Option<usize>) -> Result<Option<Var>> {
        if self.config.conditioning.input_vector.decoder_layers {
            Ok(Some(self.layer_vector(g, bound, dialect, "decoder")?))
        } else {
            Ok(None)
        }
    }

    /// One decoder step: attend with the previous bottom-layer state, feed
    /// `[embed(prev); context (; d)]` through the decoder stack and project
    /// `[h_top (; d)]` to logits.
    pub fn decode_step(
        &self,
        g: &mut Graph<'_>,
        bound: &Bound,
        enc: &Encoded,
        dvec: Option<Var>,
        prev: usize,
        state: &DecoderState,
    ) -> Result<StepOutput> {
        if state.layers.len() != self.layout.decoder.len() {
            return Err(Error::contract("decoder state has the wrong number of layers"));
        }
        if self.config.conditioning.input_vector.decoder_layers != dvec.is_some() {
            return Err(Error::contract("decoder dialect vector does not match the conditioning mode"));
        }
        let att = attend_with_keys(
            g,
            bound,
            &self.layout.attention,
            state.layers[0].h,
            enc.enc,
            enc.keys,
            enc.valid.as_deref(),
        )?;
        let e = embed(g, bound, &self.layout.embedding, prev)?;
        let mut x = match dvec {
            Some(d) => g.concat(&[e, att.context, d])?,
            None => g.concat(&[e, att.context])?,
        };
        let mut layers = Vec::with_capacity(state.layers.len());
        for (j, p) in self.layout.decoder.iter().enumerate() {
            if j > 0 {
                let h = layers.last().map(|s: &LstmState| s.h).expect("previous layer");
                x = match dvec {
                    Some(d) => g.concat(&[h, d])?,
                    None => h,
                };
            }
            layers.push(lstm_cell_step(g, bound, p, x, state.layers[j])?);
        }
        let top = layers.last().expect("at least one decoder layer").h;
        let out_in = match dvec {
            Some(d) => g.concat(&[top, d])?,
            None => top,
        };
        let logits = self.layout.output.forward(g, bound, out_in)?;
        Ok(StepOutput {
            logits,
            alpha: att.alpha,
            state: DecoderState { layers },
        })
    }

    /// Target ids for a transcript of dialect `dialect`.
    pub fn targets(&self, text: &str, dialect: usize) -> Result<Vec<usize>> {
        self.config.dialects.check_id(dialect)?;
        augment_targets(&self.vocab, text, Some(dialect), self.config.conditioning.output_token)
    }

    /// Mean per-step cross entropy of `targets[1..]` given `targets[..n-1]`.
    pub fn teacher_forced_loss(
        &self,
        g: &mut Graph<'_>,
        bound: &Bound,
        enc: &Encoded,
        dvec: Option<Var>,
        targets: &[usize],
    ) -> Result<Var> {
        if targets.len() < 2 {
            return Err(Error::Data("target sequence shorter than <sos> <eos>".into()));
        }
        let mut state = self.initial_state(g);
        let mut logits = Vec::with_capacity(targets.len() - 1);
        for &prev in &targets[..targets.len() - 1] {
            let out = self.decode_step(g, bound, enc, dvec, prev, &state)?;
            logits.push(out.logits);
            state = out.state;
        }
        let stacked = g.stack_rows(&logits)?;
        let valid = vec![true; targets.len() - 1];
        g.cross_entropy(stacked, &targets[1..], &valid)
    }

    /// Loss of one utterance: `features` are stacked encoder inputs, the
    /// dialect is both the conditioning input and the target token label.
    pub fn utterance_loss(
        &self,
        g: &mut Graph<'_>,
        bound: &Bound,
        features: Var,
        valid: Option<&[bool]>,
        targets: &[usize],
        dialect: usize,
    ) -> Result<Var> {
        let enc = self.encode(g, bound, features, Some(dialect), valid)?;
        let dvec = self.decoder_vector(g, bound, Some(dialect))?;
        self.teacher_forced_loss(g, bound, &enc, dvec, targets)
    }

    /// Sum of per-utterance losses over a padded batch. Padded frames are
    /// masked in the encoder and attention; padded target steps are not run.
    pub fn batch_loss(&self, g: &mut Graph<'_>, bound: &Bound, batch: &crate::data::PaddedBatch) -> Result<Var> {
        let mut total: Option<Var> = None;
        for b in 0..batch.len() {
            let x = g.input(batch.features[b].clone());
            let n = batch.target_valid[b].iter().take_while(|&&v| v).count();
            let loss = self.utterance_loss(
                g,
                bound,
                x,
                Some(&batch.frame_valid[b]),
                &batch.targets[b][..n],
                batch.dialects[b],
            )?;
            total = Some(match total {
                Some(t) => g.add(t, loss)?,
                None => loss,
            });
        }
        total.ok_or_else(|| Error::Data("empty batch".into()))
    }

    /// Mean batch loss and its gradient for every parameter, in store order.
    pub fn loss_and_grads(&self, batch: &crate::data::PaddedBatch) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = self.graph();
        let bound = self.bind(&mut g);
        let sum = self.batch_loss(&mut g, &bound, batch)?;
        let loss = g.scale(sum, 1.0 / batch.len() as f64);
        let value = g.value(loss)[0];
        g.backward(loss)?;
        Ok((value, self.params.collect_grads(&g, &bound)))
    }

    /// Parameter names and shapes, in store order.
    pub fn param_manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect()
    }
}
