use std::path::{Path, PathBuf};

use anyhow::anyhow;
use delins_core::dp::{Domain, DpEngine};
use delins_core::objective::LossMode;
use delins_core::process::LogLinear;
use delins_core::scorer::{
    self, Checkpoint, LrSchedule, OptimizerKind, ScorerParams, ScorerShape, TrainConfig, DEFAULT_TIME_BUCKETS,
};
use delins_core::seq::{load_corpus, Corpus, TokenizeMode, Vocab};
use serde::Serialize;
use serde_json::json;

use crate::config::{parse_or, require, Globals, TrainSettings};
use crate::output::JsonLines;
use crate::Failure;

/// Every training setting after layering, as echoed into the metrics stream.
#[derive(Debug, Serialize)]
struct Resolved {
    command: &'static str,
    corpus: PathBuf,
    out: Option<PathBuf>,
    mode: String,
    tokenizer: String,
    max_len: Option<usize>,
    steps: u64,
    epochs: u64,
    batch: usize,
    lr: f64,
    lr_schedule: String,
    optimizer: String,
    t_min: f64,
    time_buckets: usize,
    len_buckets: usize,
    k: usize,
    domain: String,
    parallel: bool,
    resume: Option<PathBuf>,
    halt_at: Option<u64>,
    metrics: Option<PathBuf>,
    schedule: &'static str,
    seed: u64,
    seed_drawn: bool,
    threads: Option<usize>,
    dry_run: bool,
}

pub fn vocab_path(checkpoint: &Path) -> PathBuf {
    let mut p = checkpoint.as_os_str().to_owned();
    p.push(".vocab");
    PathBuf::from(p)
}

fn check_same(name: &str, flag: Option<usize>, stored: usize) -> Result<(), Failure> {
    match flag {
        Some(v) if v != stored => Err(Failure::Usage(anyhow!(
            "{name} = {v} does not match the resumed checkpoint ({stored})"
        ))),
        _ => Ok(()),
    }
}

/// Fresh parameters sized for the corpus.
fn fresh(s: &TrainSettings, mode: LossMode, corpus: &Corpus) -> Result<Checkpoint, Failure> {
    let v = corpus.vocab.len();
    let shape = match mode {
        LossMode::Dise => {
            let longest = corpus.sequences.iter().map(|q| q.body_len()).max().unwrap_or(0);
            ScorerShape {
                time_buckets: s.time_buckets.unwrap_or(DEFAULT_TIME_BUCKETS),
                len_buckets: s.len_buckets.unwrap_or(longest + 1),
                ..ScorerShape::dise(v)
            }
        }
        LossMode::Dice => {
            let k = corpus
                .sequences
                .first()
                .map(|q| q.body_len())
                .ok_or_else(|| Failure::Usage(anyhow!("corpus is empty")))?;
            ScorerShape::dice(v, k)
        }
    };
    Ok(Checkpoint::new(ScorerParams::init(shape)?))
}

pub fn run(s: TrainSettings, globals: Globals) -> Result<(), Failure> {
    let corpus_path = require("corpus", s.corpus.clone())?;
    let out = if s.dry_run { s.out.clone() } else { Some(require("out", s.out.clone())?) };
    let tokenizer: TokenizeMode = parse_or("tokenizer", s.tokenizer.as_deref(), TokenizeMode::Char)?;
    let lr_schedule: LrSchedule = parse_or("lr_schedule", s.lr_schedule.as_deref(), LrSchedule::Cosine)?;
    let optimizer: OptimizerKind = parse_or("optimizer", s.optimizer.as_deref(), OptimizerKind::Adam)?;
    let domain: Domain = parse_or("domain", s.domain.as_deref(), Domain::Auto)?;
    let requested_mode: Option<LossMode> = s
        .mode
        .as_deref()
        .map(|m| m.parse().map_err(|e: String| Failure::Usage(anyhow!("mode: {e}"))))
        .transpose()?;

    let (corpus, checkpoint) = match &s.resume {
        Some(ckpt) => {
            let vocab = Vocab::load(vocab_path(ckpt))?;
            let corpus = load_corpus(&corpus_path, tokenizer, s.max_len, Some(vocab))?;
            let checkpoint = scorer::load_for_vocab(ckpt, corpus.vocab.len())?;
            let shape = checkpoint.params.shape;
            if let Some(m) = requested_mode {
                if m != shape.mode {
                    return Err(Failure::Usage(anyhow!("mode {m} does not match the resumed checkpoint ({})", shape.mode)));
                }
            }
            if shape.mode == LossMode::Dise {
                check_same("time_buckets", s.time_buckets, shape.time_buckets)?;
                check_same("len_buckets", s.len_buckets, shape.len_buckets)?;
            }
            (corpus, checkpoint)
        }
        None => {
            let corpus = load_corpus(&corpus_path, tokenizer, s.max_len, None)?;
            let checkpoint = fresh(&s, requested_mode.unwrap_or_default(), &corpus)?;
            (corpus, checkpoint)
        }
    };
    let shape = checkpoint.params.shape;

    let config = TrainConfig {
        steps: s.steps,
        epochs: s.epochs.unwrap_or(1),
        batch: s.batch.unwrap_or(16),
        lr: s.lr.unwrap_or(0.05),
        lr_schedule,
        optimizer,
        seed: globals.seed,
        t_min: s.t_min.unwrap_or(delins_core::objective::T_MIN),
        halt_at: s.halt_at,
        parallel: s.parallel.unwrap_or(true),
    };
    scorer::validate(&checkpoint, &corpus, &config)?;

    let resolved = Resolved {
        command: "train",
        corpus: corpus_path,
        out: out.clone(),
        mode: shape.mode.to_string(),
        tokenizer: tokenizer.to_string(),
        max_len: s.max_len,
        steps: config.total_steps(corpus.len()),
        epochs: config.epochs,
        batch: config.batch,
        lr: config.lr,
        lr_schedule: lr_schedule.to_string(),
        optimizer: optimizer.to_string(),
        t_min: config.t_min,
        time_buckets: shape.time_buckets,
        len_buckets: shape.len_buckets,
        k: shape.k,
        domain: domain.to_string(),
        parallel: config.parallel,
        resume: s.resume.clone(),
        halt_at: s.halt_at,
        metrics: s.metrics.clone(),
        schedule: "loglinear",
        seed: globals.seed,
        seed_drawn: globals.seed_drawn,
        threads: globals.threads,
        dry_run: s.dry_run,
    };

    if s.dry_run {
        let mut stdout = JsonLines::open(None)?;
        stdout.emit(&json!({ "config": resolved }))?;
        stdout.emit(&json!({ "dry_run": {
            "sequences": corpus.len(),
            "vocab_size": corpus.vocab.len(),
            "param_count": shape.param_count(),
            "start_step": checkpoint.steps,
        }}))?;
        return stdout.finish().map_err(Into::into);
    }
    let out = out.expect("out is required outside dry runs");

    let mut metrics = JsonLines::open(s.metrics.as_deref())?;
    metrics.emit(&json!({ "config": resolved }))?;
    let engine = DpEngine::new(shape.vocab_size).with_domain(domain);
    let mut write_err = None;
    let trained = scorer::train(checkpoint, &corpus, &config, &LogLinear, &engine, |m| {
        if write_err.is_none() {
            write_err = metrics
                .emit(&json!({ "step": m.step, "loss": m.loss, "wall_ms": m.wall_ms }))
                .err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    scorer::save(&trained, &out)?;
    corpus.vocab.save(vocab_path(&out))?;
    metrics.emit(&json!({ "done": { "steps": trained.steps, "checkpoint": out } }))?;
    metrics.finish().map_err(Into::into)
}
