//! Greedy and beam-search decoding.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::log_sum_exp;
use crate::model::{DecoderState, DialectFeed, Encoded, LasModel};
use crate::params::Bound;
use crate::tensor::Tensor;

/// Autoregressive scorer: given a state and the previous token, returns
/// next-token logits and the successor state.
pub trait StepModel {
    type State: Clone;

    fn sos(&self) -> usize;
    fn eos(&self) -> usize;
    fn initial(&mut self) -> Result<Self::State>;
    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens, excluding `<sos>` and `<eos>`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// `log_prob / length`, where the length counts `<eos>` when emitted.
    pub score: f64,
    /// True when `max_len` steps passed without `<eos>`.
    pub truncated: bool,
}

/// Default step budget for an utterance with `frames` encoder frames.
pub fn default_max_len(frames: usize) -> usize {
    2 * frames + 10
}

fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decoder logits"));
    }
    let z = log_sum_exp(logits, None);
    Ok(logits.iter().map(|v| v - z).collect())
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_decode<M: StepModel>(m: &mut M, max_len: usize) -> Result<Hypothesis> {
    let mut state = m.initial()?;
    let mut prev = m.sos();
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let (logits, next) = m.step(&state, prev)?;
        let lp = log_softmax(&logits)?;
        let t = argmax(&lp);
        log_prob += lp[t];
        if t == m.eos() {
            let len = tokens.len() + 1;
            return Ok(Hypothesis {
                tokens,
                log_prob,
                score: log_prob / len as f64,
                truncated: false,
            });
        }
        tokens.push(t);
        state = next;
        prev = t;
    }
    let len = tokens.len().max(1);
    Ok(Hypothesis {
        tokens,
        log_prob,
        score: log_prob / len as f64,
        truncated: true,
    })
}

/// Beam search with per-step pruning to `beam` partial hypotheses. A
/// hypothesis that emits `<eos>` is retired; the rest are retired as
/// truncated after `max_len` steps. Results are sorted by length-normalized
/// score, best first, and cut to `beam` entries.
pub fn beam_decode<M: StepModel>(m: &mut M, beam: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
    if beam == 0 {
        return Err(Error::validation("beam", "must be positive"));
    }
    struct Live<S> {
        tokens: Vec<usize>,
        log_prob: f64,
        state: S,
    }
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: m.initial()?,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        // (total log prob, live index, token, successor state index)
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        let mut succ = Vec::with_capacity(live.len());
        for (h, l) in live.iter().enumerate() {
            let prev = l.tokens.last().copied().unwrap_or(m.sos());
            let (logits, next) = m.step(&l.state, prev)?;
            let lp = log_softmax(&logits)?;
            cands.extend(lp.iter().enumerate().map(|(t, &p)| (l.log_prob + p, h, t)));
            succ.push(next);
        }
        // stable: ties keep hypothesis order, then token order
        cands.sort_by(|a, b| b.0.total_cmp(&a.0));
        cands.truncate(beam);
        let mut next_live = Vec::new();
        for (lp, h, t) in cands {
            let mut tokens = live[h].tokens.clone();
            if t == m.eos() {
                let len = tokens.len() + 1;
                done.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    score: lp / len as f64,
                    truncated: false,
                });
            } else {
                tokens.push(t);
                next_live.push(Live {
                    tokens,
                    log_prob: lp,
                    state: succ[h].clone(),
                });
            }
        }
        live = next_live;
    }
    for l in live {
        let len = l.tokens.len().max(1);
        done.push(Hypothesis {
            score: l.log_prob / len as f64,
            tokens: l.tokens,
            log_prob: l.log_prob,
            truncated: true,
        });
    }
    done.sort_by(|a, b| b.score.total_cmp(&a.score));
    done.truncate(beam);
    Ok(done)
}

/// [`StepModel`] over a trained [`LasModel`] for one utterance.
pub struct LasStepper<'m> {
    model: &'m LasModel,
    g: Graph<'m>,
    bound: Bound,
    enc: Encoded,
    dvec: Option<Var>,
    frames: usize,
}

impl<'m> LasStepper<'m> {
    /// Encodes `input` (stacked features) with the given dialect feed.
    pub fn new(model: &'m LasModel, input: &Tensor, feed: DialectFeed) -> Result<Self> {
        let mut g = model.inference_graph();
        let bound = model.bind(&mut g);
        let x = g.input(input.clone());
        let enc = model.encode(&mut g, &bound, x, feed.encoder, None)?;
        let dvec = model.decoder_vector(&mut g, &bound, feed.decoder)?;
        Ok(LasStepper {
            model,
            g,
            bound,
            enc,
            dvec,
            frames: input.rows(),
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
}

impl StepModel for LasStepper<'_> {
    type State = DecoderState;

    fn sos(&self) -> usize {
        self.model.vocab().sos()
    }

    fn eos(&self) -> usize {
        self.model.vocab().eos()
    }

    fn initial(&mut self) -> Result<DecoderState> {
        Ok(self.model.initial_state(&mut self.g))
    }

    fn step(&mut self, state: &DecoderState, prev: usize) -> Result<(Vec<f64>, DecoderState)> {
        let out = self
            .model
            .decode_step(&mut self.g, &self.bound, &self.enc, self.dvec, prev, state)?;
        Ok((self.g.value(out.logits).to_vec(), out.state))
    }
}

/// Decodes one utterance. `beam = 1` is greedy search.
pub fn decode_utterance(model: &LasModel, input: &Tensor, feed: DialectFeed, beam: usize) -> Result<Hypothesis> {
    let mut s = LasStepper::new(model, input, feed)?;
    let max_len = default_max_len(s.frames());
    if beam <= 1 {
        greedy_decode(&mut s, max_len)
    } else {
        let mut hyps = beam_decode(&mut s, beam, max_len)?;
        Ok(hyps.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Three-token model (`0 = <sos>`, `1 = <eos>`, `2 = a`) whose logits
    /// are a pseudo-random function of the prefix.
    struct Toy {
        seed: u64,
        calls: usize,
    }

    impl StepModel for Toy {
        type State = Vec<usize>;
        fn sos(&self) -> usize {
            0
        }
        fn eos(&self) -> usize {
            1
        }
        fn initial(&mut self) -> Result<Vec<usize>> {
            Ok(Vec::new())
        }
        fn step(&mut self, state: &Vec<usize>, prev: usize) -> Result<(Vec<f64>, Vec<usize>)> {
            self.calls += 1;
            let mut next = state.clone();
            next.push(prev);
            Ok((toy_logits(self.seed, &next), next))
        }
    }

    fn toy_logits(seed: u64, prefix: &[usize]) -> Vec<f64> {
        let mut h = seed;
        for &t in prefix {
            h = h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn toy_log_prob(seed: u64, seq: &[usize]) -> f64 {
        let mut prefix = vec![0];
        let mut total = 0.0;
        for &t in seq {
            let lp = log_softmax(&toy_logits(seed, &prefix)).unwrap();
            total += lp[t];
            prefix.push(t);
        }
        total
    }

    /// Best length-normalized sequence by enumeration: every token string of
    /// length `max_len` cut at its first `<eos>`.
    fn brute_force(seed: u64, max_len: u32) -> (Vec<usize>, f64) {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for code in 0..3usize.pow(max_len) {
            let mut seq = Vec::new();
            let mut c = code;
            for _ in 0..max_len {
                seq.push(c % 3);
                c /= 3;
            }
            if let Some(p) = seq.iter().position(|&t| t == 1) {
                seq.truncate(p + 1);
            }
            let score = toy_log_prob(seed, &seq) / seq.len() as f64;
            if best.as_ref().is_none_or(|b| score > b.1 + 1e-12) {
                let mut toks = seq.clone();
                if toks.last() == Some(&1) {
                    toks.pop();
                }
                best = Some((toks, score));
            }
        }
        best.unwrap()
    }

    #[test]
    fn exhaustive_beam_finds_the_best_sequence() {
        for seed in 0..40 {
            let (toks, score) = brute_force(seed, 3);
            let hyps = beam_decode(&mut Toy { seed, calls: 0 }, 27, 3).unwrap();
            assert_eq!(hyps[0].tokens, toks, "seed {seed}");
            assert!((hyps[0].score - score).abs() < 1e-12);
        }
    }

    #[test]
    fn log_probs_are_consistent() {
        let hyps = beam_decode(&mut Toy { seed: 5, calls: 0 }, 4, 4).unwrap();
        for h in &hyps {
            let mut seq = h.tokens.clone();
            if !h.truncated {
                seq.push(1);
            }
            assert!((toy_log_prob(5, &seq) - h.log_prob).abs() < 1e-12);
        }
        assert!(hyps.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn greedy_truncates_without_eos() {
        struct NoEos;
        impl StepModel for NoEos {
            type State = ();
            fn sos(&self) -> usize {
                0
            }
            fn eos(&self) -> usize {
                1
            }
            fn initial(&mut self) -> Result<()> {
                Ok(())
            }
            fn step(&mut self, _: &(), _: usize) -> Result<(Vec<f64>, ())> {
                Ok((vec![0.0, -5.0, 1.0], ()))
            }
        }
        let h = greedy_decode(&mut NoEos, 7).unwrap();
        assert!(h.truncated);
        assert_eq!(h.tokens, vec![2; 7]);
    }

    #[test]
    fn ties_go_to_the_lowest_id() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn non_finite_logits_are_reported() {
        assert_eq!(log_softmax(&[0.0, f64::NAN]), Err(Error::NonFinite("decoder logits")));
    }

    proptest! {
        #[test]
        fn beam_one_is_greedy(seed in any::<u64>(), max_len in 1usize..8) {
            let g = greedy_decode(&mut Toy { seed, calls: 0 }, max_len).unwrap();
            let b = beam_decode(&mut Toy { seed, calls: 0 }, 1, max_len).unwrap();
            prop_assert_eq!(b.len(), 1);
            prop_assert_eq!(&b[0], &g);
        }
    }
}
