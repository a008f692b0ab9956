use std::path::PathBuf;

use anyhow::anyhow;
use delins_core::objective::LossMode;
use delins_core::process::LogLinear;
use delins_core::sampler::{batch_generate, GridKind, LengthMode, LengthSummary, SamplerConfig};
use delins_core::scorer;
use delins_core::seq::{detokenize, tokenize, TokenizeMode, Vocab};
use serde::Serialize;
use serde_json::json;

use super::train::vocab_path;
use crate::config::{parse_or, require, Globals, SampleSettings};
use crate::output::JsonLines;
use crate::Failure;

#[derive(Debug, Serialize)]
struct Resolved {
    command: &'static str,
    checkpoint: PathBuf,
    vocab: PathBuf,
    tokenizer: String,
    steps: usize,
    grid: String,
    top_p: f64,
    count: usize,
    prompt: Option<String>,
    out: Option<PathBuf>,
    trace: Option<PathBuf>,
    parallel: bool,
    mode: String,
    k: usize,
    seed: u64,
    seed_drawn: bool,
    threads: Option<usize>,
}

#[derive(Serialize)]
struct Record<'a> {
    index: u64,
    text: &'a str,
    length: usize,
    steps: usize,
    seed: u64,
}

#[derive(Serialize)]
struct Summary {
    count: usize,
    mean_length: f64,
    /// `(length, fraction of samples at most that long)`.
    cdf: Vec<(usize, f64)>,
    clamp_rate: f64,
}

impl From<LengthSummary> for Summary {
    fn from(s: LengthSummary) -> Self {
        Summary {
            count: s.count,
            mean_length: s.mean_length,
            cdf: s.cdf,
            clamp_rate: s.clamp_rate,
        }
    }
}

pub fn run(s: SampleSettings, globals: Globals) -> Result<(), Failure> {
    let checkpoint = require("checkpoint", s.checkpoint.clone())?;
    let vocab_file = s.vocab.clone().unwrap_or_else(|| vocab_path(&checkpoint));
    let tokenizer: TokenizeMode = parse_or("tokenizer", s.tokenizer.as_deref(), TokenizeMode::Char)?;
    let grid: GridKind = parse_or("grid", s.grid.as_deref(), GridKind::Cosine)?;
    let vocab = Vocab::load(&vocab_file).map_err(|e| Failure::Runtime(anyhow!("{}: {e}", vocab_file.display())))?;
    let ckpt = scorer::load_for_vocab(&checkpoint, vocab.len())?;
    let shape = ckpt.params.shape;
    let mode = match shape.mode {
        LossMode::Dice => LengthMode::Fixed(shape.k),
        LossMode::Dise => LengthMode::Variable,
    };
    let prompt = s.prompt.as_deref().map(|p| tokenize(p, &vocab, tokenizer)).transpose()?;
    let config = SamplerConfig {
        steps: s.steps.unwrap_or(128),
        grid,
        top_p: s.top_p.unwrap_or(1.0),
        mode,
        seed: globals.seed,
        keep_snapshots: s.trace.is_some(),
    };
    config.validate().map_err(|e| Failure::from(delins_core::Error::from(e)))?;
    let count = s.count.unwrap_or(16);
    let parallel = s.parallel.unwrap_or(true);

    let resolved = Resolved {
        command: "sample",
        checkpoint,
        vocab: vocab_file,
        tokenizer: tokenizer.to_string(),
        steps: config.steps,
        grid: grid.to_string(),
        top_p: config.top_p,
        count,
        prompt: s.prompt.clone(),
        out: s.out.clone(),
        trace: s.trace.clone(),
        parallel,
        mode: shape.mode.to_string(),
        k: shape.k,
        seed: globals.seed,
        seed_drawn: globals.seed_drawn,
        threads: globals.threads,
    };
    eprintln!("{}", json!({ "config": resolved }));

    let mut out = JsonLines::open(s.out.as_deref())?;
    if count == 0 {
        let empty = Summary {
            count: 0,
            mean_length: 0.0,
            cdf: Vec::new(),
            clamp_rate: 0.0,
        };
        out.emit(&json!({ "summary": empty }))?;
        return out.finish().map_err(Into::into);
    }
    let (traces, summary) = batch_generate(&ckpt.params, &LogLinear, &config, prompt.as_ref(), count, parallel)?;
    for tr in &traces {
        let text = detokenize(&tr.final_seq, &vocab, tokenizer);
        out.emit(&Record {
            index: tr.index,
            text: &text,
            length: tr.final_seq.body_len(),
            steps: config.steps,
            seed: tr.seed,
        })?;
    }
    out.emit(&json!({ "summary": Summary::from(summary) }))?;
    out.finish()?;

    if let Some(path) = &s.trace {
        let mut trace = JsonLines::open(Some(path))?;
        for tr in &traces {
            let states: Vec<_> = tr
                .snapshots
                .iter()
                .map(|(t, q)| json!({ "t": t, "text": detokenize(q, &vocab, tokenizer), "length": q.body_len() }))
                .collect();
            trace.emit(&json!({ "index": tr.index, "states": states }))?;
        }
        trace.finish()?;
    }
    Ok(())
}
