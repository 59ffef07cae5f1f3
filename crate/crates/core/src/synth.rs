//! Synthetic multi-dialect corpus.
//!
//! Each word has one phone sequence shared by all dialects and a spelling per
//! dialect; a handful of words are spelled differently across dialects
//! (color/colour). A frame is the phone's prototype plus the dialect's offset
//! plus Gaussian noise, repeated for a random duration. Dialects also differ
//! in word frequencies. Feature values are rounded to `f32` so a corpus read
//! back from disk equals the generated one.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use libm::exp;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Split, Utterance};
use crate::dialect::DialectInventory;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    /// Phone ids, identical for every dialect.
    pub phones: Vec<usize>,
    /// Orthography per dialect id.
    pub spellings: Vec<String>,
    /// Unnormalized unigram weight per dialect id.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dialects: DialectInventory,
    pub feature_dim: usize,
    /// `[P x feature_dim]`
    pub phone_prototypes: Vec<Vec<f64>>,
    /// Phone inserted between words (and at both ends).
    pub silence_phone: usize,
    /// `[D x feature_dim]`
    pub dialect_offsets: Vec<Vec<f64>>,
    pub lexicon: Vec<LexiconEntry>,
    /// Inclusive frame-count range per phone.
    pub dur_range: (usize, usize),
    /// Inclusive word-count range per utterance.
    pub words_per_utterance: (usize, usize),
    pub noise_sigma: f64,
    pub utterances_per_dialect: Vec<SplitSizes>,
    pub seed: u64,
}

/// A word whose spelling differs between two dialects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimalPair {
    pub dialect_a: usize,
    pub spelling_a: String,
    pub dialect_b: usize,
    pub spelling_b: String,
}

const COMMON_WORDS: &[&str] = &[
    "the", "a", "and", "is", "it", "was", "for", "on", "with", "they", "we", "you", "see", "saw", "big", "small", "red",
    "blue", "green", "old", "new", "car", "house", "dog", "cat", "road", "park", "city", "day", "night", "time", "man",
    "woman", "child", "book", "door", "table", "water", "light", "went", "to", "go", "near", "far",
];

/// (American spelling, British spelling).
const SPELLING_PAIRS: &[(&str, &str)] = &[
    ("color", "colour"),
    ("center", "centre"),
    ("favor", "favour"),
    ("gray", "grey"),
    ("labor", "labour"),
    ("theater", "theatre"),
    ("neighbor", "neighbour"),
    ("honor", "honour"),
    ("meter", "metre"),
    ("fiber", "fibre"),
    ("flavor", "flavour"),
    ("harbor", "harbour"),
];

/// Output graphemes of the synthetic corpus.
pub fn graphemes() -> Vec<char> {
    let mut g: Vec<char> = ('a'..='z').collect();
    g.push(' ');
    g
}

/// Phone ids of a spelling: one phone per letter with doubled letters
/// merged.
fn phones_of(word: &str) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut last = None;
    for c in word.chars() {
        if Some(c) != last {
            out.push(c as usize - 'a' as usize);
        }
        last = Some(c);
    }
    out
}

impl SyntheticSpec {
    /// Three dialects (`en-us`, `en-gb`, `en-au`) with 2000/2000/500
    /// training utterances and 200 dev/test utterances each. `en-gb` and
    /// `en-au` share British spellings.
    pub fn default_with_seed(seed: u64) -> Self {
        let codes = ["en-us", "en-gb", "en-au"];
        let dialects = DialectInventory::new(&codes).expect("valid default inventory");
        let feature_dim = 8;
        let num_phones = 27;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_5EC);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let phone_prototypes: Vec<Vec<f64>> = (0..num_phones)
            .map(|_| (0..feature_dim).map(|_| unit.sample(&mut rng)).collect())
            .collect();
        let dialect_offsets: Vec<Vec<f64>> = (0..codes.len())
            .map(|_| (0..feature_dim).map(|_| 0.2 * unit.sample(&mut rng)).collect())
            .collect();
        let mut lexicon = Vec::new();
        for (rank, w) in COMMON_WORDS.iter().enumerate() {
            let base = 1.0 / (rank as f64 + 3.0);
            lexicon.push(LexiconEntry {
                phones: phones_of(w),
                spellings: vec![w.to_string(); codes.len()],
                weights: (0..codes.len()).map(|_| base * exp(0.5 * unit.sample(&mut rng))).collect(),
            });
        }
        for (us, gb) in SPELLING_PAIRS {
            lexicon.push(LexiconEntry {
                phones: phones_of(us),
                spellings: vec![us.to_string(), gb.to_string(), gb.to_string()],
                weights: (0..codes.len()).map(|_| 0.06 * exp(0.3 * unit.sample(&mut rng))).collect(),
            });
        }
        SyntheticSpec {
            dialects,
            feature_dim,
            phone_prototypes,
            silence_phone: 26,
            dialect_offsets,
            lexicon,
            dur_range: (2, 4),
            words_per_utterance: (1, 5),
            noise_sigma: 0.4,
            utterances_per_dialect: vec![
                SplitSizes { train: 2000, dev: 200, test: 200 },
                SplitSizes { train: 2000, dev: 200, test: 200 },
                SplitSizes { train: 500, dev: 200, test: 200 },
            ],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dialects.validate()?;
        let d = self.dialects.len();
        let p = self.phone_prototypes.len();
        if self.feature_dim == 0 {
            return Err(Error::validation("feature_dim", "must be positive"));
        }
        if p == 0 || self.phone_prototypes.iter().any(|r| r.len() != self.feature_dim) {
            return Err(Error::validation("phone_prototypes", "need at least one row of width feature_dim"));
        }
        if self.phone_prototypes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("phone_prototypes", "values must be finite"));
        }
        if self.silence_phone >= p {
            return Err(Error::validation("silence_phone", "not a phone id"));
        }
        if self.dialect_offsets.len() != d || self.dialect_offsets.iter().any(|r| r.len() != self.feature_dim) {
            return Err(Error::validation("dialect_offsets", "need one row of width feature_dim per dialect"));
        }
        if self.dialect_offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("dialect_offsets", "values must be finite"));
        }
        if self.lexicon.is_empty() {
            return Err(Error::validation("lexicon", "must not be empty"));
        }
        for (i, w) in self.lexicon.iter().enumerate() {
            if w.phones.is_empty() || w.phones.iter().any(|&ph| ph >= p) {
                return Err(Error::validation("lexicon", format!("word {i} has an empty or unknown phone sequence")));
            }
            if w.spellings.len() != d || w.weights.len() != d {
                return Err(Error::validation("lexicon", format!("word {i} needs a spelling and weight per dialect")));
            }
            if w.spellings.iter().any(|s| s.is_empty() || s.contains(' ')) {
                return Err(Error::validation("lexicon", format!("word {i} has an empty or multi-word spelling")));
            }
            if w.weights.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::validation("lexicon", format!("word {i} has a negative weight")));
            }
        }
        for k in 0..d {
            if self.lexicon.iter().all(|w| w.weights[k] == 0.0) {
                return Err(Error::validation("lexicon", format!("dialect {k} has no word with positive weight")));
            }
        }
        let (lo, hi) = self.dur_range;
        if lo == 0 || lo > hi {
            return Err(Error::validation("dur_range", "need 1 <= min <= max"));
        }
        let (lo, hi) = self.words_per_utterance;
        if lo == 0 || lo > hi {
            return Err(Error::validation("words_per_utterance", "need 1 <= min <= max"));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::validation("noise_sigma", "must be finite and non-negative"));
        }
        if self.utterances_per_dialect.len() != d {
            return Err(Error::validation("utterances_per_dialect", "need one entry per dialect"));
        }
        let sep = self.separability();
        if sep < 0.9 {
            return Err(Error::validation(
                "phone_prototypes",
                format!("nearest-prototype accuracy on noiseless frames is {sep:.3}, below 0.9"),
            ));
        }
        Ok(())
    }

    /// Fraction of (phone, dialect) noiseless frames whose nearest prototype
    /// is their own phone.
    pub fn separability(&self) -> f64 {
        let mut correct = 0usize;
        let mut total = 0usize;
        for (ph, proto) in self.phone_prototypes.iter().enumerate() {
            for off in &self.dialect_offsets {
                let frame: Vec<f64> = proto.iter().zip(off).map(|(a, b)| a + b).collect();
                let nearest = self
                    .phone_prototypes
                    .iter()
                    .map(|q| q.iter().zip(&frame).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(i, _)| i);
                correct += usize::from(nearest == Some(ph));
                total += 1;
            }
        }
        correct as f64 / total.max(1) as f64
    }

    /// Words spelled differently between pairs of dialects, one entry per
    /// ordered dialect pair and word.
    pub fn minimal_pairs(&self) -> Vec<MinimalPair> {
        let mut out = Vec::new();
        for w in &self.lexicon {
            for a in 0..self.dialects.len() {
                for b in 0..self.dialects.len() {
                    if a != b && w.spellings[a] != w.spellings[b] {
                        out.push(MinimalPair {
                            dialect_a: a,
                            spelling_a: w.spellings[a].clone(),
                            dialect_b: b,
                            spelling_b: w.spellings[b].clone(),
                        });
                    }
                }
            }
        }
        out
    }

    /// All graphemes used in spellings, sorted, plus space.
    pub fn grapheme_set(&self) -> Vec<char> {
        let mut s: BTreeSet<char> = self.lexicon.iter().flat_map(|w| w.spellings.iter().flat_map(|x| x.chars())).collect();
        s.insert(' ');
        s.into_iter().collect()
    }
}

/// Split owning a word sequence. Content decides the split, so no sentence
/// appears in two splits, in any dialect.
fn split_of(seed: u64, words: &[usize]) -> Split {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for &w in words {
        for b in (w as u64).to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    match (h >> 11) % 100 {
        0..70 => Split::Train,
        70..85 => Split::Dev,
        _ => Split::Test,
    }
}

fn stream_seed(seed: u64, dialect: usize, split: Split) -> u64 {
    let tag = (dialect as u64) << 8 | split as u64;
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

const MAX_ATTEMPTS: usize = 100_000;

/// Generates the corpus described by `spec`. Deterministic in the spec
/// (including its seed).
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|_| Error::validation("noise_sigma", "invalid"))?;
    let mut corpus = Corpus::default();
    for d in 0..spec.dialects.len() {
        let weights: Vec<f64> = spec.lexicon.iter().map(|w| w.weights[d]).collect();
        let pick = WeightedIndex::new(&weights).map_err(|_| Error::validation("lexicon", "bad weights"))?;
        for split in Split::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, d, split));
            for i in 0..spec.utterances_per_dialect[d].get(split) {
                let words = sample_sentence(spec, &pick, split, &mut rng)?;
                let transcript = words
                    .iter()
                    .map(|&w| spec.lexicon[w].spellings[d].as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                let features = render(spec, d, &words, &noise, &mut rng)?;
                corpus.split_mut(split).push(Utterance {
                    id: format!("{}-{}-{i:05}", spec.dialects.code(d), split.name()),
                    dialect: d,
                    transcript,
                    features,
                });
            }
        }
    }
    Ok(corpus)
}

fn sample_sentence(spec: &SyntheticSpec, pick: &WeightedIndex<f64>, split: Split, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let (lo, hi) = spec.words_per_utterance;
    for _ in 0..MAX_ATTEMPTS {
        let k = rng.random_range(lo..=hi);
        let words: Vec<usize> = (0..k).map(|_| pick.sample(rng)).collect();
        if split_of(spec.seed, &words) == split {
            return Ok(words);
        }
    }
    Err(Error::Data(format!("could not sample a {} sentence", split.name())))
}

fn render(spec: &SyntheticSpec, d: usize, words: &[usize], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let mut phones = vec![spec.silence_phone];
    for &w in words {
        phones.extend_from_slice(&spec.lexicon[w].phones);
        phones.push(spec.silence_phone);
    }
    let f = spec.feature_dim;
    let mut values = Vec::new();
    let mut frames = 0;
    for ph in phones {
        let dur = rng.random_range(spec.dur_range.0..=spec.dur_range.1);
        for _ in 0..dur {
            for k in 0..f {
                let v = spec.phone_prototypes[ph][k] + spec.dialect_offsets[d][k] + noise.sample(rng);
                // features are stored as float32 on disk
                values.push(v as f32 as f64);
            }
            frames += 1;
        }
    }
    Tensor::matrix(frames, f, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        let mut s = SyntheticSpec::default_with_seed(seed);
        for sz in &mut s.utterances_per_dialect {
            *sz = SplitSizes { train: 40, dev: 10, test: 10 };
        }
        s
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&small(3)).unwrap();
        let b = generate_corpus(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&small(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sizes_and_ids() {
        let c = generate_corpus(&small(1)).unwrap();
        assert_eq!(c.train.len(), 120);
        assert_eq!(c.dev.len(), 30);
        assert_eq!(c.test[0].id, "en-us-test-00000");
        for u in &c.train {
            assert_eq!(u.features.cols(), 8);
            assert!(u.frames() >= 2 * 3);
        }
    }

    #[test]
    fn splits_are_disjoint_by_content() {
        let spec = small(2);
        let c = generate_corpus(&spec).unwrap();
        // map each transcript back to its canonical (dialect 0) spelling
        let canon = |u: &Utterance| -> String {
            u.transcript
                .split(' ')
                .map(|w| {
                    let e = spec.lexicon.iter().find(|e| e.spellings[u.dialect] == w).unwrap();
                    e.spellings[0].clone()
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        let train: BTreeSet<String> = c.train.iter().map(canon).collect();
        let dev: BTreeSet<String> = c.dev.iter().map(canon).collect();
        let test: BTreeSet<String> = c.test.iter().map(canon).collect();
        assert!(train.is_disjoint(&dev) && train.is_disjoint(&test) && dev.is_disjoint(&test));
    }

    #[test]
    fn spellings_follow_the_dialect() {
        let c = generate_corpus(&small(5)).unwrap();
        let words = |d: usize| -> BTreeSet<String> {
            c.train
                .iter()
                .filter(|u| u.dialect == d)
                .flat_map(|u| u.transcript.split(' ').map(String::from).collect::<Vec<_>>())
                .collect()
        };
        let (us, gb) = (words(0), words(1));
        assert!(!us.iter().any(|w| w.ends_with("our") || w.ends_with("tre")));
        assert!(!gb.iter().any(|w| ["color", "center", "favor", "labor"].contains(&w.as_str())));
    }

    #[test]
    fn default_spec_is_separable() {
        for seed in 0..5 {
            let s = SyntheticSpec::default_with_seed(seed);
            assert!(s.separability() >= 0.9, "seed {seed}: {}", s.separability());
            s.validate().unwrap();
        }
    }

    #[test]
    fn noiseless_frames_equal_prototype_plus_offset() {
        let mut s = small(0);
        s.noise_sigma = 0.0;
        s.dur_range = (1, 1);
        let c = generate_corpus(&s).unwrap();
        let u = &c.train[0];
        let expect: Vec<f64> = s.phone_prototypes[s.silence_phone]
            .iter()
            .zip(&s.dialect_offsets[u.dialect])
            .map(|(a, b)| (a + b) as f32 as f64)
            .collect();
        assert_eq!(u.features.row(0), expect.as_slice());
    }

    #[test]
    fn validation_names_the_field() {
        let mut s = small(0);
        s.dur_range = (3, 2);
        assert!(matches!(s.validate(), Err(Error::Validation { ref field, .. }) if field == "dur_range"));
        let mut s = small(0);
        s.noise_sigma = -1.0;
        assert!(matches!(s.validate(), Err(Error::Validation { ref field, .. }) if field == "noise_sigma"));
        let mut s = small(0);
        s.dialect_offsets.pop();
        assert!(matches!(s.validate(), Err(Error::Validation { ref field, .. }) if field == "dialect_offsets"));
        let mut s = small(0);
        for p in &mut s.phone_prototypes {
            p.fill(0.0);
        }
        assert!(matches!(s.validate(), Err(Error::Validation { ref field, .. }) if field == "phone_prototypes"));
    }

    #[test]
    fn minimal_pairs_cover_both_directions() {
        let s = small(0);
        let pairs = s.minimal_pairs();
        assert!(pairs.contains(&MinimalPair {
            dialect_a: 1,
            spelling_a: "colour".into(),
            dialect_b: 0,
            spelling_b: "color".into()
        }));
        assert!(pairs.iter().all(|p| !(p.dialect_a == 1 && p.dialect_b == 2)));
        assert_eq!(pairs.len(), 12 * 4);
    }

    #[test]
    fn phones_merge_double_letters() {
        assert_eq!(phones_of("book"), vec![1, 14, 10]);
        assert_eq!(phones_of("a"), vec![0]);
    }
}
