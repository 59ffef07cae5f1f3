//! The `mdlas` command line.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdlas_core::data::{filter_dialect, Corpus, Utterance};
use mdlas_core::eval::{
    evaluate_with, lexical_switch_analysis_with, mismatch_matrix_with, EvalReport, InjectionSite, Score,
};
use mdlas_core::model::LasModel;
use mdlas_core::synth::{generate_corpus, SyntheticSpec};
use mdlas_core::train::{fine_tune, train, EvalRecord, TrainReport};
use serde::{Deserialize, Serialize};

use crate::config::{dialect_id, parse_feed, parse_site, parse_split, ExperimentConfig};
use crate::error::{Error, Result};
use crate::io::{
    lexical_csv, load_checkpoint, mismatch_csv, read_corpus, read_spec, save_checkpoint, write_bytes, write_corpus,
    write_json, CheckpointMeta,
};
use crate::runner::Parallel;

#[derive(Debug, Parser)]
#[command(name = "mdlas", version, about = "Multi-dialect listen-attend-spell experiments on synthetic speech")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-dialect corpus.
    GenData(GenDataArgs),
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Fine-tune a checkpoint on one dialect.
    Finetune(FinetuneArgs),
    /// Decode a split and report WER per dialect.
    Eval(EvalArgs),
    /// Relative WER changes when feeding mismatched dialect vectors.
    Mismatch(MismatchArgs),
    /// Spelling switches when swapping the decoder dialect vector.
    Lexical(LexicalArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file (`train.json`; a corpus spec for gen-data).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice. Evaluation commands are deterministic
    /// and ignore it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// System tag S1..S9, e.g. `S7` or `S5(emb)`.
    #[arg(long)]
    pub system: Option<String>,
    /// Corpus directory written by gen-data.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Stop after this many updates.
    #[arg(long)]
    pub max_steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint directory to start from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dialect code to fine-tune on.
    #[arg(long)]
    pub dialect: String,
    /// Corpus directory written by gen-data.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Stop after this many updates; 0 copies the input checkpoint.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Label stored in the output checkpoint (default S2).
    #[arg(long)]
    pub system: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint directory; repeat to compare systems. Fine-tuned
    /// checkpoints with the same system label form one row, each scored on
    /// its own dialect.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// train, dev or test.
    #[arg(long)]
    pub split: Option<String>,
    /// `oracle` or a dialect code fed to every utterance.
    #[arg(long)]
    pub dialect_feed: Option<String>,
    #[arg(long)]
    pub beam: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MismatchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// encoder, decoder or both (default: every site the model conditions).
    #[arg(long)]
    pub site: Option<String>,
}

#[derive(Debug, Args)]
pub struct LexicalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
}

/// Parses `args` (program name first), runs the command and maps errors to
/// exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Finetune(a) => cmd_finetune(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Mismatch(a) => cmd_mismatch(&a),
        Command::Lexical(a) => cmd_lexical(&a),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    match &common.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn corpus_dir(flag: &Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.corpus.clone())
        .ok_or_else(|| Error::Usage("no corpus: pass --corpus or set `corpus` in the config".into()))
}

fn checkpoint_dir(flag: &Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.checkpoint.clone())
        .ok_or_else(|| Error::Usage("no checkpoint: pass --checkpoint or set `checkpoint` in the config".into()))
}

fn progress(label: &str) -> impl FnMut(&EvalRecord) + '_ {
    move |r: &EvalRecord| {
        let loss = r.train_loss.map_or_else(|| "-".to_string(), |l| format!("{l:.4}"));
        eprintln!(
            "{label} step {} epoch {} lr {:.4} loss {loss} dev WER {:.2}",
            r.step, r.epoch, r.learning_rate, r.dev_wer
        );
    }
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let mut spec = match &a.common.config {
        Some(p) => read_spec(p)?,
        None => SyntheticSpec::default_with_seed(a.common.seed.unwrap_or(0)),
    };
    if let Some(seed) = a.common.seed {
        spec.seed = seed;
    }
    let corpus = generate_corpus(&spec)?;
    write_corpus(&a.common.out, &spec, &corpus)
}

/// `train_report.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReportFile {
    pub system: String,
    pub finetuned_dialect: Option<String>,
    pub num_parameters: usize,
    #[serde(flatten)]
    pub report: TrainReport,
}

pub const TRAIN_JSON: &str = "train.json";
pub const TRAIN_REPORT_JSON: &str = "train_report.json";
pub const EVAL_REPORT_JSON: &str = "eval_report.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const MISMATCH_CSV: &str = "mismatch.csv";
pub const MISMATCH_JSON: &str = "mismatch.json";
pub const LEXICAL_CSV: &str = "lexical.csv";
pub const LEXICAL_JSON: &str = "lexical.json";

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(s) = &a.system {
        cfg.system = s.clone();
    }
    if let Some(seed) = a.common.seed {
        cfg.train.seed = seed;
    }
    if let Some(n) = a.max_steps {
        cfg.train.max_steps = Some(n);
    }
    cfg.corpus = Some(corpus_dir(&a.corpus, &cfg)?);
    cfg.validate()?;
    let tag = cfg.system_tag()?;
    let (spec, corpus) = read_corpus(cfg.corpus.as_deref().expect("corpus set"))?;
    let model = LasModel::new(cfg.model_config(&spec)?, cfg.train.seed)?;
    let runner = Parallel::from_env()?;
    let label = tag.to_string();
    let outcome = train(model, &corpus.train, &corpus.dev, &cfg.train, &runner, &mut progress(&label))?;
    let meta = CheckpointMeta {
        system: Some(label.clone()),
        finetuned_dialect: None,
    };
    let out = &a.common.out;
    save_checkpoint(out, &outcome.best, &meta)?;
    write_json(&out.join(TRAIN_JSON), &cfg)?;
    write_json(
        &out.join(TRAIN_REPORT_JSON),
        &TrainReportFile {
            system: label,
            finetuned_dialect: None,
            num_parameters: outcome.best.model.num_parameters(),
            report: outcome.report,
        },
    )
}

pub fn cmd_finetune(a: &FinetuneArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    let mut ft = cfg.finetune_config().clone();
    if let Some(seed) = a.common.seed {
        ft.seed = seed;
    }
    if let Some(n) = a.max_steps {
        ft.max_steps = Some(n);
    }
    ft.validate()?;
    cfg.finetune = Some(ft.clone());
    cfg.corpus = Some(corpus_dir(&a.corpus, &cfg)?);
    cfg.checkpoint = Some(checkpoint_dir(&a.checkpoint, &cfg)?);
    let (base, base_meta) = load_checkpoint(cfg.checkpoint.as_deref().expect("checkpoint set"))?;
    let d = dialect_id(&a.dialect, &base.model.config().dialects)?;
    let (_, corpus) = read_corpus(cfg.corpus.as_deref().expect("corpus set"))?;
    let runner = Parallel::from_env()?;
    let label = a.system.clone().unwrap_or_else(|| "S2".into());
    let outcome = fine_tune(&base, d, &corpus.train, &corpus.dev, &ft, &runner, &mut progress(&label))?;
    let meta = if ft.max_steps == Some(0) {
        base_meta
    } else {
        CheckpointMeta {
            system: Some(label),
            finetuned_dialect: Some(a.dialect.clone()),
        }
    };
    let out = &a.common.out;
    save_checkpoint(out, &outcome.best, &meta)?;
    write_json(&out.join(TRAIN_JSON), &cfg)?;
    write_json(
        &out.join(TRAIN_REPORT_JSON),
        &TrainReportFile {
            system: meta.system.clone().unwrap_or_default(),
            finetuned_dialect: meta.finetuned_dialect.clone(),
            num_parameters: outcome.best.model.num_parameters(),
            report: outcome.report,
        },
    )
}

fn split_utterances(corpus: Corpus, split: &str) -> Result<Vec<Utterance>> {
    let s = parse_split(split)?;
    let mut corpus = corpus;
    Ok(std::mem::take(corpus.split_mut(s)))
}

/// Per-checkpoint entry of `eval_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub checkpoint: String,
    pub system: String,
    pub finetuned_dialect: Option<String>,
    pub report: EvalReport,
}

/// One row of the comparison table: scores per dialect, merged over the
/// checkpoints sharing a system label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRow {
    pub system: String,
    pub per_dialect: Vec<Score>,
    pub overall: Score,
    /// Unweighted mean of the per-dialect WERs.
    pub mean_dialect_wer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReportFile {
    pub split: String,
    pub beam: usize,
    pub dialect_feed: String,
    pub dialects: Vec<String>,
    pub systems: Vec<SystemRow>,
    pub checkpoints: Vec<CheckpointEval>,
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(s) = &a.split {
        cfg.eval.split = s.clone();
    }
    if let Some(f) = &a.dialect_feed {
        cfg.eval.dialect_feed = f.clone();
    }
    if let Some(b) = a.beam {
        cfg.eval.beam = b;
    }
    cfg.validate()?;
    let dirs = if a.checkpoint.is_empty() {
        vec![checkpoint_dir(&None, &cfg)?]
    } else {
        a.checkpoint.clone()
    };
    let (spec, corpus) = read_corpus(&corpus_dir(&a.corpus, &cfg)?)?;
    let utts = split_utterances(corpus, &cfg.eval.split)?;
    let runner = Parallel::from_env()?;
    let codes: Vec<String> = spec.dialects.dialects.iter().map(|d| d.code.clone()).collect();
    let mut checkpoints = Vec::new();
    let mut rows: BTreeMap<String, Vec<Score>> = BTreeMap::new();
    let mut order = Vec::new();
    for dir in &dirs {
        let (ck, meta) = load_checkpoint(dir)?;
        let model = &ck.model;
        if model.config().dialects != spec.dialects {
            return Err(Error::format(dir, "checkpoint dialects differ from the corpus"));
        }
        let policy = parse_feed(&cfg.eval.dialect_feed, &spec.dialects)?;
        let subset = match &meta.finetuned_dialect {
            Some(code) => filter_dialect(&utts, dialect_id(code, &spec.dialects)?),
            None => utts.clone(),
        };
        let report = evaluate_with(&runner, model, &subset, policy, cfg.eval.beam)?;
        let system = meta
            .system
            .clone()
            .unwrap_or_else(|| dir.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()));
        let row = rows.entry(system.clone()).or_insert_with(|| {
            order.push(system.clone());
            vec![Score::default(); codes.len()]
        });
        for (acc, s) in row.iter_mut().zip(&report.per_dialect) {
            acc.merge(s);
        }
        checkpoints.push(CheckpointEval {
            checkpoint: dir.display().to_string(),
            system,
            finetuned_dialect: meta.finetuned_dialect,
            report,
        });
    }
    let systems: Vec<SystemRow> = order
        .iter()
        .map(|name| {
            let per_dialect = rows[name].clone();
            let mut overall = Score::default();
            for s in &per_dialect {
                overall.merge(s);
            }
            let present: Vec<f64> = per_dialect.iter().filter(|s| s.utterances > 0).map(|s| s.wer).collect();
            let mean = if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            };
            SystemRow {
                system: name.clone(),
                per_dialect,
                overall,
                mean_dialect_wer: mean,
            }
        })
        .collect();
    let mut csv = format!("system,{},overall,mean\n", codes.join(","));
    for r in &systems {
        let cells: Vec<String> = r.per_dialect.iter().map(|s| s.wer.to_string()).collect();
        csv.push_str(&format!("{},{},{},{}\n", r.system, cells.join(","), r.overall.wer, r.mean_dialect_wer));
    }
    let file = EvalReportFile {
        split: cfg.eval.split.clone(),
        beam: cfg.eval.beam,
        dialect_feed: cfg.eval.dialect_feed.clone(),
        dialects: codes,
        systems,
        checkpoints,
    };
    let out = &a.common.out;
    write_json(&out.join(EVAL_REPORT_JSON), &file)?;
    write_bytes(&out.join(EVAL_CSV), csv.as_bytes())
}

fn default_sites(model: &LasModel) -> Vec<InjectionSite> {
    let c = model.config().conditioning;
    let enc = c.input_vector.encoder_layers || c.cat_encoder;
    let dec = c.input_vector.decoder_layers;
    match (enc, dec) {
        (true, true) => vec![InjectionSite::Encoder, InjectionSite::Decoder, InjectionSite::Both],
        (true, false) => vec![InjectionSite::Encoder],
        (false, true) => vec![InjectionSite::Decoder],
        (false, false) => Vec::new(),
    }
}

fn site_name(site: InjectionSite) -> &'static str {
    match site {
        InjectionSite::Encoder => "encoder",
        InjectionSite::Decoder => "decoder",
        InjectionSite::Both => "both",
    }
}

fn load_eval_inputs(
    common: &Common,
    checkpoint: &Option<PathBuf>,
    corpus: &Option<PathBuf>,
    split: &Option<String>,
) -> Result<(ExperimentConfig, LasModel, SyntheticSpec, Vec<Utterance>)> {
    let mut cfg = load_config(common)?;
    if let Some(s) = split {
        cfg.eval.split = s.clone();
    }
    cfg.validate()?;
    let dir = checkpoint_dir(checkpoint, &cfg)?;
    let (ck, _) = load_checkpoint(&dir)?;
    let (spec, corpus) = read_corpus(&corpus_dir(corpus, &cfg)?)?;
    if ck.model.config().dialects != spec.dialects {
        return Err(Error::format(&dir, "checkpoint dialects differ from the corpus"));
    }
    let utts = split_utterances(corpus, &cfg.eval.split)?;
    Ok((cfg, ck.model, spec, utts))
}

pub fn cmd_mismatch(a: &MismatchArgs) -> Result<()> {
    let (cfg, model, _, utts) = load_eval_inputs(&a.common, &a.checkpoint, &a.corpus, &a.split)?;
    let sites = match a.site.as_ref().or(cfg.eval.site.as_ref()) {
        Some(s) => vec![parse_site(s)?],
        None => default_sites(&model),
    };
    if sites.is_empty() {
        return Err(mdlas_core::Error::Contract("model has no dialect vector conditioning".into()).into());
    }
    let runner = Parallel::from_env()?;
    let out = &a.common.out;
    let mut all = Vec::new();
    for (i, &site) in sites.iter().enumerate() {
        let m = mismatch_matrix_with(&runner, &model, &utts, site)?;
        // the first site also goes to mismatch.csv
        let name = if i == 0 {
            MISMATCH_CSV.to_string()
        } else {
            format!("mismatch_{}.csv", site_name(site))
        };
        write_bytes(&out.join(name), mismatch_csv(&m).as_bytes())?;
        all.push(m);
    }
    write_json(&out.join(MISMATCH_JSON), &all)
}

pub fn cmd_lexical(a: &LexicalArgs) -> Result<()> {
    let (_, model, spec, utts) = load_eval_inputs(&a.common, &a.checkpoint, &a.corpus, &a.split)?;
    let runner = Parallel::from_env()?;
    let rows = lexical_switch_analysis_with(&runner, &model, &spec.minimal_pairs(), &utts)?;
    let out = &a.common.out;
    write_bytes(&out.join(LEXICAL_CSV), lexical_csv(&rows, &spec.dialects).as_bytes())?;
    write_json(&out.join(LEXICAL_JSON), &rows)
}
