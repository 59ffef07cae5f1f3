//! Utterances, corpora and padded training batches.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dialect::{augment_targets, GraphemeVocab, OutputToken};
use crate::error::{Error, Result};
use crate::frontend::stack_and_downsample;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub dialect: usize,
    pub transcript: String,
    /// Acoustic frames `[T x F]` before stacking.
    pub features: Tensor,
}

impl Utterance {
    /// Stacked and downsampled encoder input.
    pub fn model_input(&self) -> Result<Tensor> {
        stack_and_downsample(&self.features)
    }

    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Corpus {
    pub fn split(&self, s: Split) -> &[Utterance] {
        match s {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, s: Split) -> &mut Vec<Utterance> {
        match s {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }
}

/// Utterances of one dialect.
pub fn filter_dialect(utts: &[Utterance], dialect: usize) -> Vec<Utterance> {
    utts.iter().filter(|u| u.dialect == dialect).cloned().collect()
}

/// Groups utterance indices into batches of `batch_size` (the last may be
/// smaller). The order is a deterministic shuffle under `seed`; with
/// `sort_by_length` batches hold utterances of similar length and the batch
/// order is shuffled instead.
pub fn make_batches(lengths: &[usize], batch_size: usize, sort_by_length: bool, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::validation("batch_size", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    if sort_by_length {
        order.sort_by_key(|&i| lengths[i]);
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if sort_by_length {
        batches.shuffle(&mut rng);
    }
    Ok(batches)
}

/// Per-epoch shuffling seed.
pub fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// A batch padded to its longest utterance. `true` in a mask marks a real
/// frame or target step; padded frames are zero and padded targets `<eos>`.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub ids: Vec<String>,
    /// `[T_max x input_dim]` per utterance.
    pub features: Vec<Tensor>,
    pub frame_valid: Vec<Vec<bool>>,
    pub targets: Vec<Vec<usize>>,
    pub target_valid: Vec<Vec<bool>>,
    pub dialects: Vec<usize>,
}

impl PaddedBatch {
    /// Builds a batch from stacked encoder inputs and transcripts.
    pub fn from_parts(
        inputs: &[&Tensor],
        texts: &[&str],
        dialects: &[usize],
        ids: &[String],
        vocab: &GraphemeVocab,
        output_token: OutputToken,
    ) -> Result<Self> {
        let n = inputs.len();
        if texts.len() != n || dialects.len() != n || ids.len() != n || n == 0 {
            return Err(Error::contract("batch parts have different lengths or are empty"));
        }
        let width = inputs[0].cols();
        let t_max = inputs.iter().map(|x| x.rows()).max().unwrap_or(0);
        let mut targets: Vec<Vec<usize>> = Vec::with_capacity(n);
        for (t, &d) in texts.iter().zip(dialects) {
            let d = (output_token != OutputToken::None).then_some(d);
            targets.push(augment_targets(vocab, t, d, output_token)?);
        }
        let l_max = targets.iter().map(Vec::len).max().unwrap_or(0);
        let mut features = Vec::with_capacity(n);
        let mut frame_valid = Vec::with_capacity(n);
        let mut target_valid = Vec::with_capacity(n);
        for (x, t) in inputs.iter().zip(targets.iter_mut()) {
            if x.cols() != width {
                return Err(Error::shape("batch features", &[t_max, width], x.shape()));
            }
            let mut v = x.values().to_vec();
            v.resize(t_max * width, 0.0);
            features.push(Tensor::matrix(t_max, width, v)?);
            let mut m = vec![true; x.rows()];
            m.resize(t_max, false);
            frame_valid.push(m);
            let mut m = vec![true; t.len()];
            m.resize(l_max, false);
            target_valid.push(m);
            t.resize(l_max, vocab.eos());
        }
        Ok(PaddedBatch {
            ids: ids.to_vec(),
            features,
            frame_valid,
            targets,
            target_valid,
            dialects: dialects.to_vec(),
        })
    }

    /// Batch of `indices` into `utts`, whose stacked inputs are `inputs`.
    pub fn gather(
        utts: &[Utterance],
        inputs: &[Tensor],
        indices: &[usize],
        vocab: &GraphemeVocab,
        output_token: OutputToken,
    ) -> Result<Self> {
        let xs: Vec<&Tensor> = indices.iter().map(|&i| &inputs[i]).collect();
        let texts: Vec<&str> = indices.iter().map(|&i| utts[i].transcript.as_str()).collect();
        let dialects: Vec<usize> = indices.iter().map(|&i| utts[i].dialect).collect();
        let ids: Vec<String> = indices.iter().map(|&i| utts[i].id.clone()).collect();
        Self::from_parts(&xs, &texts, &dialects, &ids, vocab, output_token)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}
