//! Minibatch SGD with gradient clipping, per-epoch learning-rate decay,
//! periodic dev evaluation, early stopping and fine-tuning.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::sqrt;
use serde::{Deserialize, Serialize};

use crate::data::{epoch_seed, filter_dialect, make_batches, PaddedBatch, Utterance};
use crate::error::{Error, Result};
use crate::eval::{evaluate_with, FeedPolicy, Runner};
use crate::model::LasModel;
use crate::params::ParamStore;
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    /// Dev WER changes smaller than this many percentage points count as flat.
    pub wer_delta_threshold: f64,
    /// Consecutive flat evaluations that stop training.
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub max_steps: Option<u64>,
    pub eval_every_n_steps: u64,
    pub early_stop: EarlyStop,
    pub grad_clip_norm: f64,
    pub sort_by_length: bool,
    /// Dev utterances per dialect used for checkpoint selection (all when
    /// unset).
    pub dev_per_dialect: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            lr_decay: 0.98,
            batch_size: 16,
            max_epochs: 20,
            max_steps: None,
            eval_every_n_steps: 500,
            early_stop: EarlyStop {
                wer_delta_threshold: 0.1,
                patience: 3,
            },
            grad_clip_norm: 5.0,
            sort_by_length: true,
            dev_per_dialect: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::validation("learning_rate", "must be finite and non-negative"));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(Error::validation("lr_decay", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if self.eval_every_n_steps == 0 {
            return Err(Error::validation("eval_every_n_steps", "must be positive"));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::validation("grad_clip_norm", "must be positive"));
        }
        if self.early_stop.patience == 0 {
            return Err(Error::validation("early_stop.patience", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub epoch: u64,
    pub learning_rate: f64,
    /// Mean training loss since the previous record (`None` for a record
    /// taken before any update).
    pub train_loss: Option<f64>,
    /// Unweighted mean of per-dialect dev WERs (percent); drives checkpoint
    /// selection.
    pub dev_wer: f64,
    pub dev_wer_per_dialect: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EvalRecord>,
    pub best_step: u64,
    pub best_dev_wer: f64,
    pub steps: u64,
    pub stop_reason: StopReason,
}

/// Optimizer bookkeeping stored with a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    pub learning_rate: f64,
    /// Dev WER (percent) at every evaluation so far.
    pub dev_wer_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: LasModel,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn fresh(model: LasModel, learning_rate: f64) -> Self {
        Checkpoint {
            model,
            state: TrainState {
                step: 0,
                epoch: 0,
                learning_rate,
                dev_wer_history: Vec::new(),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest dev WER seen.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub report: TrainReport,
}

/// `θ ← θ − lr · s · g` with `s = min(1, clip / ‖g‖)` over the global
/// gradient norm. Returns the norm before clipping.
pub fn sgd_update(params: &mut ParamStore, grads: &[Vec<f64>], lr: f64, clip: f64, precision: Precision) -> Result<f64> {
    if grads.len() != params.len() {
        return Err(Error::shape("sgd_update", &[params.len()], &[grads.len()]));
    }
    let mut sq = 0.0;
    for (t, g) in params.tensors().iter().zip(grads) {
        if g.len() != t.len() {
            return Err(Error::shape("sgd_update", t.shape(), &[g.len()]));
        }
        sq += g.iter().map(|v| v * v).sum::<f64>();
    }
    let norm = sqrt(sq);
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm"));
    }
    let scale = if norm > clip { clip / norm } else { 1.0 };
    let step = lr * scale;
    for (t, g) in params.tensors_mut().iter_mut().zip(grads) {
        for (p, d) in t.values_mut().iter_mut().zip(g) {
            *p = precision.round(*p - step * d);
        }
    }
    Ok(norm)
}

/// At most `n` utterances per dialect, keeping corpus order.
fn dev_subset(dev: &[Utterance], n: Option<usize>) -> Vec<Utterance> {
    match n {
        None => dev.to_vec(),
        Some(n) => {
            let mut seen: Vec<usize> = Vec::new();
            dev.iter()
                .filter(|u| {
                    if seen.len() <= u.dialect {
                        seen.resize(u.dialect + 1, 0);
                    }
                    seen[u.dialect] += 1;
                    seen[u.dialect] <= n
                })
                .cloned()
                .collect()
        }
    }
}

struct Session<'a, R: Runner + ?Sized> {
    cfg: &'a TrainConfig,
    runner: &'a R,
    dev: Vec<Utterance>,
    records: Vec<EvalRecord>,
    best: Option<(f64, Checkpoint)>,
    flat: usize,
}

impl<R: Runner + ?Sized> Session<'_, R> {
    /// Evaluates `ck` on dev, records it and reports whether training
    /// should stop early.
    fn evaluate(&mut self, ck: &mut Checkpoint, train_loss: Option<f64>, observe: &mut dyn FnMut(&EvalRecord)) -> Result<bool> {
        let report = evaluate_with(self.runner, &ck.model, &self.dev, FeedPolicy::Oracle, 1)?;
        let wer = report.mean_dialect_wer();
        let prev = self.records.last().map(|r| r.dev_wer);
        let rec = EvalRecord {
            step: ck.state.step,
            epoch: ck.state.epoch,
            learning_rate: ck.state.learning_rate,
            train_loss,
            dev_wer: wer,
            dev_wer_per_dialect: report.per_dialect.iter().map(|s| s.wer).collect(),
        };
        observe(&rec);
        self.records.push(rec);
        ck.state.dev_wer_history.push(wer);
        if self.best.as_ref().is_none_or(|(b, _)| wer < *b) {
            self.best = Some((wer, ck.clone()));
        }
        if let Some(p) = prev {
            if (wer - p).abs() < self.cfg.early_stop.wer_delta_threshold {
                self.flat += 1;
            } else {
                self.flat = 0;
            }
        }
        Ok(self.flat >= self.cfg.early_stop.patience)
    }
}

/// Trains from `start` on `train`, selecting the checkpoint with the lowest
/// mean per-dialect dev WER. With `eval_at_start` the starting model is
/// evaluated before the first update.
pub fn train_from<R: Runner + ?Sized>(
    start: Checkpoint,
    train: &[Utterance],
    dev: &[Utterance],
    cfg: &TrainConfig,
    runner: &R,
    eval_at_start: bool,
    observe: &mut dyn FnMut(&EvalRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training utterances".into()));
    }
    if dev.is_empty() {
        return Err(Error::Data("no dev utterances".into()));
    }
    let inputs: Vec<Tensor> = train.iter().map(Utterance::model_input).collect::<Result<_>>()?;
    let lengths: Vec<usize> = inputs.iter().map(Tensor::rows).collect();
    let mut ck = start;
    let mut s = Session {
        cfg,
        runner,
        dev: dev_subset(dev, cfg.dev_per_dialect),
        records: Vec::new(),
        best: None,
        flat: 0,
    };
    let first_step = ck.state.step;
    let budget_end = cfg.max_steps.map(|m| first_step + m);
    let output_token = ck.model.config().conditioning.output_token;
    let precision = ck.model.config().precision;
    let vocab = ck.model.vocab().clone();
    let mut stop = StopReason::MaxEpochs;
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    let mut evaluated_here = false;
    if eval_at_start {
        if s.evaluate(&mut ck, None, observe)? {
            stop = StopReason::EarlyStopped;
        }
        evaluated_here = true;
    }
    'epochs: while stop != StopReason::EarlyStopped && (ck.state.epoch as usize) < cfg.max_epochs {
        let batches = make_batches(&lengths, cfg.batch_size, cfg.sort_by_length, epoch_seed(cfg.seed, ck.state.epoch))?;
        for idx in batches {
            if budget_end.is_some_and(|e| ck.state.step >= e) {
                stop = StopReason::MaxSteps;
                break 'epochs;
            }
            let batch = PaddedBatch::gather(train, &inputs, &idx, &vocab, output_token)?;
            let diverged = |step| Error::Diverged {
                step,
                batch_ids: batch.ids.clone(),
            };
            let (loss, grads) = match ck.model.loss_and_grads(&batch) {
                Err(Error::NonFinite(_)) => return Err(diverged(ck.state.step)),
                r => r?,
            };
            let finite = loss.is_finite() && grads.iter().flatten().all(|g| g.is_finite());
            if !finite {
                return Err(diverged(ck.state.step));
            }
            sgd_update(ck.model.params_mut(), &grads, ck.state.learning_rate, cfg.grad_clip_norm, precision)?;
            ck.state.step += 1;
            loss_sum += loss;
            loss_n += 1;
            evaluated_here = false;
            if ck.state.step % cfg.eval_every_n_steps == 0 {
                let mean = loss_sum / loss_n as f64;
                loss_sum = 0.0;
                loss_n = 0;
                evaluated_here = true;
                if s.evaluate(&mut ck, Some(mean), observe)? {
                    stop = StopReason::EarlyStopped;
                    break 'epochs;
                }
            }
        }
        ck.state.epoch += 1;
        ck.state.learning_rate *= cfg.lr_decay;
    }
    if stop == StopReason::MaxEpochs && budget_end.is_some_and(|e| ck.state.step >= e) {
        stop = StopReason::MaxSteps;
    }
    if !evaluated_here {
        let mean = (loss_n > 0).then(|| loss_sum / loss_n as f64);
        s.evaluate(&mut ck, mean, observe)?;
    }
    let (best_wer, best) = s.best.take().expect("at least one evaluation");
    let report = TrainReport {
        best_step: best.state.step,
        best_dev_wer: best_wer,
        steps: ck.state.step - first_step,
        stop_reason: stop,
        records: s.records,
    };
    Ok(TrainOutcome { best, last: ck, report })
}

/// Trains a freshly initialized model.
pub fn train<R: Runner + ?Sized>(
    model: LasModel,
    train: &[Utterance],
    dev: &[Utterance],
    cfg: &TrainConfig,
    runner: &R,
    observe: &mut dyn FnMut(&EvalRecord),
) -> Result<TrainOutcome> {
    let start = Checkpoint::fresh(model, cfg.learning_rate);
    train_from(start, train, dev, cfg, runner, false, observe)
}

/// Continues training `base` on one dialect's data, updating every
/// parameter. The dev history restarts from the base model's WER on that
/// dialect. A zero step budget returns `base` unchanged.
pub fn fine_tune<R: Runner + ?Sized>(
    base: &Checkpoint,
    dialect: usize,
    train: &[Utterance],
    dev: &[Utterance],
    cfg: &TrainConfig,
    runner: &R,
    observe: &mut dyn FnMut(&EvalRecord),
) -> Result<TrainOutcome> {
    base.model.config().dialects.check_id(dialect)?;
    let own_train = filter_dialect(train, dialect);
    let own_dev = filter_dialect(dev, dialect);
    if own_train.is_empty() || own_dev.is_empty() {
        return Err(Error::Data(format!(
            "no training or dev utterances for dialect {}",
            base.model.config().dialects.code(dialect)
        )));
    }
    if cfg.max_steps == Some(0) {
        return Ok(TrainOutcome {
            best: base.clone(),
            last: base.clone(),
            report: TrainReport {
                records: Vec::new(),
                best_step: base.state.step,
                best_dev_wer: base.state.dev_wer_history.last().copied().unwrap_or(f64::NAN),
                steps: 0,
                stop_reason: StopReason::MaxSteps,
            },
        });
    }
    let mut start = base.clone();
    start.state.dev_wer_history.clear();
    start.state.learning_rate = cfg.learning_rate;
    start.state.epoch = 0;
    train_from(start, &own_train, &own_dev, cfg, runner, true, observe)
}

/// Batch ids as a single string, for diagnostics.
pub fn describe_batch(ids: &[String]) -> String {
    ids.join(",")
}
