//! Word error rate scoring, per-dialect reports, mismatched-vector matrices
//! and the spelling-variant switch analysis.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::decode::decode_utterance;
use crate::dialect::strip_dialect_tokens;
use crate::error::{Error, Result};
use crate::model::{DialectFeed, LasModel};
use crate::synth::MinimalPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditOp {
    Match,
    Substitution,
    Insertion,
    Deletion,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ops: Vec<EditOp>,
}

impl Alignment {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Levenshtein alignment with unit costs. The backtrace prefers
/// substitution (or match) over insertion over deletion.
pub fn edit_distance_alignment<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Alignment {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = d[i * w + j - 1] + 1;
            let del = d[(i - 1) * w + j] + 1;
            d[i * w + j] = sub.min(ins).min(del);
        }
    }
    let mut a = Alignment::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                if same {
                    a.ops.push(EditOp::Match);
                } else {
                    a.ops.push(EditOp::Substitution);
                    a.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && here == d[i * w + j - 1] + 1 {
            a.ops.push(EditOp::Insertion);
            a.insertions += 1;
            j -= 1;
        } else {
            a.ops.push(EditOp::Deletion);
            a.deletions += 1;
            i -= 1;
        }
    }
    a.ops.reverse();
    a
}

pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Which dialect ids the model is fed during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedPolicy {
    /// Each utterance's own dialect.
    Oracle,
    /// The same dialect for every utterance.
    Fixed(usize),
}

/// Where a wrong dialect vector is fed in a mismatch experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InjectionSite {
    Encoder,
    Decoder,
    Both,
}

/// Scored decode of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UttResult {
    pub id: String,
    pub dialect: usize,
    pub hypothesis: String,
    pub ref_words: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Dialect token found in the hypothesis, when the model emits them.
    pub predicted_dialect: Option<usize>,
    pub truncated: bool,
}

/// Decoding request: an utterance and the dialect ids to feed.
#[derive(Debug, Clone, Copy)]
pub struct Job<'a> {
    pub utt: &'a Utterance,
    pub feed: DialectFeed,
}

/// Runs decoding jobs; results come back in job order.
pub trait Runner {
    fn run(&self, model: &LasModel, jobs: &[Job<'_>], beam: usize) -> Result<Vec<UttResult>>;
}

/// Decodes jobs one after another.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Runner for Sequential {
    fn run(&self, model: &LasModel, jobs: &[Job<'_>], beam: usize) -> Result<Vec<UttResult>> {
        jobs.iter().map(|j| decode_and_score(model, j, beam)).collect()
    }
}

pub fn decode_and_score(model: &LasModel, job: &Job<'_>, beam: usize) -> Result<UttResult> {
    let input = job.utt.model_input()?;
    let hyp = decode_utterance(model, &input, job.feed, beam)?;
    let (text, predicted) = strip_dialect_tokens(model.vocab(), &hyp.tokens);
    let r = words(&job.utt.transcript);
    let a = edit_distance_alignment(&r, &words(&text));
    Ok(UttResult {
        id: job.utt.id.clone(),
        dialect: job.utt.dialect,
        hypothesis: text,
        ref_words: r.len(),
        substitutions: a.substitutions,
        deletions: a.deletions,
        insertions: a.insertions,
        predicted_dialect: predicted,
        truncated: hyp.truncated,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Score {
    pub utterances: usize,
    pub ref_words: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Word error rate in percent.
    pub wer: f64,
    /// Utterances whose hypothesis lacks the right dialect token; only for
    /// models that emit dialect tokens.
    pub dialect_errors: Option<usize>,
}

impl Score {
    fn add(&mut self, r: &UttResult, token_model: bool) {
        self.utterances += 1;
        self.ref_words += r.ref_words;
        self.substitutions += r.substitutions;
        self.deletions += r.deletions;
        self.insertions += r.insertions;
        if token_model {
            *self.dialect_errors.get_or_insert(0) += usize::from(r.predicted_dialect != Some(r.dialect));
        }
    }

    fn finish(&mut self) {
        let errors = self.substitutions + self.deletions + self.insertions;
        self.wer = if self.ref_words == 0 {
            0.0
        } else {
            100.0 * errors as f64 / self.ref_words as f64
        };
    }

    /// Adds the counts of `other` and recomputes the WER.
    pub fn merge(&mut self, other: &Score) {
        self.utterances += other.utterances;
        self.ref_words += other.ref_words;
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        if let Some(e) = other.dialect_errors {
            *self.dialect_errors.get_or_insert(0) += e;
        }
        self.finish();
    }

    /// Dialect-token error rate in percent.
    pub fn dialect_error_rate(&self) -> Option<f64> {
        self.dialect_errors
            .map(|e| 100.0 * e as f64 / self.utterances.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: FeedPolicy,
    /// Indexed by dialect id; codes in `dialects`.
    pub dialects: Vec<String>,
    pub per_dialect: Vec<Score>,
    /// Reference-word weighted aggregate.
    pub overall: Score,
    pub truncated: usize,
}

impl EvalReport {
    pub fn from_results(model: &LasModel, policy: FeedPolicy, results: &[UttResult]) -> Self {
        let inv = &model.config().dialects;
        let token_model = model.vocab().has_dialect_tokens();
        let mut per_dialect = vec![Score::default(); inv.len()];
        let mut overall = Score::default();
        let mut truncated = 0;
        for r in results {
            per_dialect[r.dialect].add(r, token_model);
            overall.add(r, token_model);
            truncated += usize::from(r.truncated);
        }
        per_dialect.iter_mut().for_each(Score::finish);
        overall.finish();
        EvalReport {
            policy,
            dialects: inv.dialects.iter().map(|d| d.code.clone()).collect(),
            per_dialect,
            overall,
            truncated,
        }
    }

    /// Unweighted mean of the WERs of dialects present in the evaluation set.
    pub fn mean_dialect_wer(&self) -> f64 {
        let present: Vec<f64> = self.per_dialect.iter().filter(|s| s.utterances > 0).map(|s| s.wer).collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

fn check_fixed(model: &LasModel, id: usize) -> Result<()> {
    if !model.config().conditioning.uses_dialect_input() {
        return Err(Error::contract("fixed dialect feed on a model without vector conditioning"));
    }
    model.config().dialects.check_id(id)
}

pub fn evaluate(model: &LasModel, utts: &[Utterance], policy: FeedPolicy) -> Result<EvalReport> {
    evaluate_with(&Sequential, model, utts, policy, 1)
}

/// Decodes every utterance (greedy when `beam == 1`) and scores it.
pub fn evaluate_with<R: Runner + ?Sized>(
    runner: &R,
    model: &LasModel,
    utts: &[Utterance],
    policy: FeedPolicy,
    beam: usize,
) -> Result<EvalReport> {
    if let FeedPolicy::Fixed(id) = policy {
        check_fixed(model, id)?;
    }
    let jobs: Vec<Job<'_>> = utts
        .iter()
        .map(|u| Job {
            utt: u,
            feed: DialectFeed::same(match policy {
                FeedPolicy::Oracle => u.dialect,
                FeedPolicy::Fixed(id) => id,
            }),
        })
        .collect();
    let results = runner.run(model, &jobs, beam)?;
    Ok(EvalReport::from_results(model, policy, &results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchMatrix {
    pub site: InjectionSite,
    pub dialects: Vec<String>,
    /// `values[r][c]`: relative WER change on test dialect `c` when fed
    /// dialect `r` instead of `c`.
    pub values: Vec<Vec<f64>>,
    /// `wer[r][c]`: WER (percent) on test dialect `c` when fed dialect `r`.
    pub wer: Vec<Vec<f64>>,
}

impl MismatchMatrix {
    pub fn mean_off_diagonal(&self) -> f64 {
        let d = self.values.len();
        if d < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for r in 0..d {
            for c in 0..d {
                if r != c {
                    s += self.values[r][c];
                }
            }
        }
        s / (d * (d - 1)) as f64
    }
}

fn site_feed(site: InjectionSite, fed: usize, truth: usize) -> DialectFeed {
    match site {
        InjectionSite::Encoder => DialectFeed { encoder: Some(fed), decoder: Some(truth) },
        InjectionSite::Decoder => DialectFeed { encoder: Some(truth), decoder: Some(fed) },
        InjectionSite::Both => DialectFeed::same(fed),
    }
}

pub fn mismatch_matrix(model: &LasModel, utts: &[Utterance], site: InjectionSite) -> Result<MismatchMatrix> {
    mismatch_matrix_with(&Sequential, model, utts, site)
}

/// Relative WER changes from feeding each dialect's vector to each test
/// dialect at `site`. A zero matched WER is floored at one error over the
/// test set's reference words.
pub fn mismatch_matrix_with<R: Runner + ?Sized>(
    runner: &R,
    model: &LasModel,
    utts: &[Utterance],
    site: InjectionSite,
) -> Result<MismatchMatrix> {
    let c = model.config().conditioning;
    let enc = c.input_vector.encoder_layers || c.cat_encoder;
    let dec = c.input_vector.decoder_layers;
    let ok = match site {
        InjectionSite::Encoder => enc,
        InjectionSite::Decoder => dec,
        InjectionSite::Both => enc && dec,
    };
    if !ok {
        return Err(Error::contract(format!("model has no {site:?} dialect vector conditioning")));
    }
    let d = model.config().dialects.len();
    let mut jobs = Vec::new();
    let mut index = Vec::new();
    for r in 0..d {
        for u in utts {
            jobs.push(Job { utt: u, feed: site_feed(site, r, u.dialect) });
            index.push(r);
        }
    }
    let results = runner.run(model, &jobs, 1)?;
    let mut scores = vec![vec![Score::default(); d]; d];
    for (res, &r) in results.iter().zip(&index) {
        scores[r][res.dialect].add(res, false);
    }
    let mut wer = vec![vec![0.0; d]; d];
    for r in 0..d {
        for col in 0..d {
            scores[r][col].finish();
            wer[r][col] = scores[r][col].wer;
        }
    }
    let mut values = vec![vec![0.0; d]; d];
    for col in 0..d {
        let n = scores[col][col].ref_words;
        if n == 0 {
            continue;
        }
        let base = wer[col][col].max(100.0 / n as f64);
        for r in 0..d {
            if r != col {
                values[r][col] = (wer[r][col] - wer[col][col]) / base;
            }
        }
    }
    Ok(MismatchMatrix {
        site,
        dialects: model.config().dialects.dialects.iter().map(|x| x.code.clone()).collect(),
        values,
        wer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSwitch {
    pub pair: MinimalPair,
    /// Occurrences of `spelling_a` in correct-vector hypotheses.
    pub occurrences: usize,
    /// Of those, occurrences replaced by `spelling_b` under the swapped
    /// decoder vector.
    pub switched: usize,
    /// `None` when nothing was measurable.
    pub rate: Option<f64>,
}

pub fn lexical_switch_analysis(model: &LasModel, pairs: &[MinimalPair], utts: &[Utterance]) -> Result<Vec<PairSwitch>> {
    lexical_switch_analysis_with(&Sequential, model, pairs, utts)
}

/// Decodes dialect-`a` test utterances whose reference contains
/// `spelling_a`, with the correct decoder vector and with dialect
/// `b`'s. Per utterance, `switched = min(#a in first, increase of #b)`.
pub fn lexical_switch_analysis_with<R: Runner + ?Sized>(
    runner: &R,
    model: &LasModel,
    pairs: &[MinimalPair],
    utts: &[Utterance],
) -> Result<Vec<PairSwitch>> {
    if !model.config().conditioning.input_vector.decoder_layers {
        return Err(Error::contract("lexical switch analysis needs decoder-site dialect vectors"));
    }
    let inv = &model.config().dialects;
    for p in pairs {
        inv.check_id(p.dialect_a)?;
        inv.check_id(p.dialect_b)?;
    }
    // (utterance index, decoder dialect) -> job slot
    let mut slots: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut jobs = Vec::new();
    let mut wanted: Vec<Vec<usize>> = vec![Vec::new(); pairs.len()];
    for (k, p) in pairs.iter().enumerate() {
        for (i, u) in utts.iter().enumerate() {
            if u.dialect != p.dialect_a || !words(&u.transcript).contains(&p.spelling_a.as_str()) {
                continue;
            }
            wanted[k].push(i);
            for fed in [p.dialect_a, p.dialect_b] {
                slots.entry((i, fed)).or_insert_with(|| {
                    jobs.push(Job {
                        utt: u,
                        feed: DialectFeed { encoder: Some(u.dialect), decoder: Some(fed) },
                    });
                    jobs.len() - 1
                });
            }
        }
    }
    let results = runner.run(model, &jobs, 1)?;
    let count = |slot: usize, w: &str| words(&results[slot].hypothesis).iter().filter(|x| **x == w).count();
    let mut out = Vec::with_capacity(pairs.len());
    for (p, idx) in pairs.iter().zip(&wanted) {
        let (mut occurrences, mut switched) = (0, 0);
        for &i in idx {
            let own = slots[&(i, p.dialect_a)];
            let swapped = slots[&(i, p.dialect_b)];
            let a1 = count(own, &p.spelling_a);
            let gained = count(swapped, &p.spelling_b).saturating_sub(count(own, &p.spelling_b));
            occurrences += a1;
            switched += a1.min(gained);
        }
        out.push(PairSwitch {
            pair: p.clone(),
            occurrences,
            switched,
            rate: (occurrences > 0).then(|| switched as f64 / occurrences as f64),
        });
    }
    Ok(out)
}

/// Mean of the measurable switch rates.
pub fn mean_switch_rate(rows: &[PairSwitch]) -> Option<f64> {
    let rates: Vec<f64> = rows.iter().filter_map(|r| r.rate).collect();
    (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}
