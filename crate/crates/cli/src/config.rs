//! Settings are layered: command-line flag, then the command's section of the
//! config file, then the documented default.
//!
//! ```toml
//! seed = 7
//! threads = 4
//!
//! [train]
//! corpus = "data/lines.txt"
//! out = "model.ckpt"
//! steps = 5000
//!
//! [sample]
//! steps = 256
//! count = 100
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Fills unset fields of `self` from `other`.
macro_rules! layered {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl $ty {
            #[allow(clippy::needless_update)]
            pub fn or(self, other: $ty) -> $ty {
                $ty {
                    $($field: self.$field.or(other.$field),)*
                    ..self
                }
            }
        }
    };
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub count: CountSettings,
    pub train: TrainSettings,
    pub sample: SampleSettings,
    pub verify: VerifySettings,
    pub bench: BenchSettings,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Usage)?;
        toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(Failure::Usage)
    }
}

/// Parses an optional string setting, falling back to `default`.
pub fn parse_or<T: FromStr<Err = String>>(name: &str, value: Option<&str>, default: T) -> Result<T, Failure> {
    match value {
        None => Ok(default),
        Some(v) => v.parse().map_err(|e: String| Failure::Usage(anyhow!("{name}: {e}"))),
    }
}

pub fn require<T>(name: &str, value: Option<T>) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::Usage(anyhow!("missing setting `{name}` (flag --{} or config file)", name.replace('_', "-"))))
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountSettings {
    /// Tokenizer: char or whitespace [default: char]
    #[arg(long)]
    pub tokenizer: Option<String>,
    /// Arithmetic: auto, exact, log or log32 [default: auto]
    #[arg(long)]
    pub domain: Option<String>,
    /// Also print the insertion-count grid [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub grid: Option<bool>,
    /// Output format: text or json [default: text]
    #[arg(long)]
    pub format: Option<String>,
}

layered!(CountSettings { tokenizer, domain, grid, format });

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    /// Corpus file, one sequence per line
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Checkpoint to write; the vocabulary goes to the same path plus `.vocab`
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Objective: dise (variable length) or dice (fixed length) [default: dise]
    #[arg(long)]
    pub mode: Option<String>,
    /// Tokenizer: char or whitespace [default: char]
    #[arg(long)]
    pub tokenizer: Option<String>,
    /// Truncate sequences to this many tokens, begin marker included [default: none]
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Total optimizer steps, counted from an untrained model [default: from epochs]
    #[arg(long)]
    pub steps: Option<u64>,
    /// Passes over the corpus when steps is unset [default: 1]
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Sequences per step [default: 16]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Peak learning rate [default: 0.05]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning-rate schedule: cosine or constant [default: cosine]
    #[arg(long)]
    pub lr_schedule: Option<String>,
    /// Optimizer: adam or sgd [default: adam]
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Lower end of the sampled time range [default: 0.001]
    #[arg(long)]
    pub t_min: Option<f64>,
    /// Time buckets of the variable-length scorer [default: 16]
    #[arg(long)]
    pub time_buckets: Option<usize>,
    /// Length buckets of the variable-length scorer [default: longest corpus sequence + 1]
    #[arg(long)]
    pub len_buckets: Option<usize>,
    /// DP arithmetic: auto, exact, log or log32 [default: auto]
    #[arg(long)]
    pub domain: Option<String>,
    /// Spread each batch across threads; results do not depend on it [default: true]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub parallel: Option<bool>,
    /// Continue from this checkpoint (its `.vocab` file is reused)
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this global step, keeping the schedule of the full run
    #[arg(long)]
    pub halt_at: Option<u64>,
    /// Metrics file (JSON lines) [default: stdout]
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Validate the configuration and corpus, write nothing
    #[arg(long)]
    #[serde(skip)]
    pub dry_run: bool,
}

layered!(TrainSettings {
    corpus,
    out,
    mode,
    tokenizer,
    max_len,
    steps,
    epochs,
    batch,
    lr,
    lr_schedule,
    optimizer,
    t_min,
    time_buckets,
    len_buckets,
    domain,
    parallel,
    resume,
    halt_at,
    metrics,
});

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSettings {
    /// Checkpoint to sample from
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Vocabulary file [default: checkpoint path plus `.vocab`]
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Tokenizer used for the prompt and the output text: char or whitespace [default: char]
    #[arg(long)]
    pub tokenizer: Option<String>,
    /// Denoising steps [default: 128]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Time grid: cosine or uniform [default: cosine]
    #[arg(long)]
    pub grid: Option<String>,
    /// Nucleus mass per gap, in (0, 1] [default: 1.0]
    #[arg(long)]
    pub top_p: Option<f64>,
    /// Number of samples [default: 16]
    #[arg(long)]
    pub count: Option<usize>,
    /// Text every sample starts with
    #[arg(long)]
    pub prompt: Option<String>,
    /// Sample file (JSON lines) [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write every intermediate state to this file (JSON lines)
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Generate samples on several threads; output does not depend on it [default: true]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub parallel: Option<bool>,
}

layered!(SampleSettings {
    checkpoint,
    vocab,
    tokenizer,
    steps,
    grid,
    top_p,
    count,
    prompt,
    out,
    trace,
    parallel,
});

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySettings {
    /// quick or full [default: quick]
    pub level: Option<String>,
    /// Output format: text or json [default: text]
    #[arg(long)]
    pub format: Option<String>,
    /// Run the suite against a DP engine with a deliberate bias
    #[arg(long, hide = true)]
    #[serde(skip)]
    pub inject_fault: bool,
}

layered!(VerifySettings { level, format });

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    /// Lengths of x_0, comma separated, at least two [default: 256,512,1024,2048]
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    /// DP invocations per repetition [default: 4]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Timed repetitions per length [default: 5]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Insertable tokens in the random sequences [default: 20]
    #[arg(long)]
    pub tokens: Option<usize>,
    /// Fraction of x_0 kept in x_t [default: 0.5]
    #[arg(long)]
    pub keep: Option<f64>,
    /// DP arithmetic: log, log32, exact or auto [default: log]
    #[arg(long)]
    pub domain: Option<String>,
    /// Split table columns across threads [default: true]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub parallel: Option<bool>,
}

layered!(BenchSettings {
    lengths,
    batch,
    reps,
    tokens,
    keep,
    domain,
    parallel,
});

/// Seed and thread count shared by every command.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Globals {
    pub seed: u64,
    /// Whether the seed came from entropy rather than a flag or file.
    pub seed_drawn: bool,
    pub threads: Option<usize>,
}

impl Globals {
    pub fn resolve(seed: Option<u64>, threads: Option<usize>, file: &FileConfig) -> Self {
        let (seed, seed_drawn) = match seed.or(file.seed) {
            Some(s) => (s, false),
            None => (rand::random::<u64>(), true),
        };
        if seed_drawn {
            eprintln!("seed: {seed} (drawn from entropy)");
        }
        Globals {
            seed,
            seed_drawn,
            threads: threads.or(file.threads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let file: FileConfig = toml::from_str(
            r#"
            seed = 3
            [train]
            lr = 0.5
            batch = 4
            "#,
        )
        .unwrap();
        let cli = TrainSettings {
            lr: Some(0.1),
            ..TrainSettings::default()
        };
        let g = Globals::resolve(None, None, &file);
        assert_eq!((g.seed, g.seed_drawn), (3, false));
        assert_eq!(Globals::resolve(Some(9), None, &file).seed, 9);
        let merged = cli.or(file.train);
        assert_eq!(merged.lr, Some(0.1));
        assert_eq!(merged.batch, Some(4));
        assert_eq!(merged.steps, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[train]\nlearning_rate = 1").is_err());
        assert!(toml::from_str::<FileConfig>("[nonsense]").is_err());
    }

    #[test]
    fn bad_enum_values_are_usage_errors() {
        let r: Result<delins_core::dp::Domain, _> = parse_or("domain", Some("fast"), Default::default());
        assert!(matches!(r, Err(Failure::Usage(_))));
        assert_eq!(parse_or("domain", None, delins_core::dp::Domain::Log).unwrap(), delins_core::dp::Domain::Log);
    }
}
