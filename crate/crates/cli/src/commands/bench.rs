use std::time::Instant;

use anyhow::anyhow;
use delins_core::dp::semiring::LogCount;
use delins_core::dp::tables::insertion_counts;
use delins_core::dp::{Domain, DpError};
use delins_core::seq::Sequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{parse_or, BenchSettings, Globals};
use crate::output::JsonLines;
use crate::Failure;

#[derive(Debug, Serialize)]
struct Resolved {
    command: &'static str,
    lengths: Vec<usize>,
    batch: usize,
    reps: usize,
    tokens: usize,
    keep: f64,
    domain: String,
    parallel: bool,
    seed: u64,
    seed_drawn: bool,
    threads: Option<usize>,
    rayon_threads: usize,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Timing {
    pub length: usize,
    /// Mean wall-clock per DP invocation over the repetitions.
    pub mean_ms: f64,
    /// Sample variance of the per-repetition means.
    pub var_ms2: f64,
    pub std_ms: f64,
    pub reps: usize,
    pub batch: usize,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct PowerLaw {
    /// `a` in `T = c * S^a`.
    pub exponent: f64,
    /// `ln c`.
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `ln T` on `ln S`.
pub fn fit_power_law(points: &[(usize, f64)]) -> Option<PowerLaw> {
    if points.len() < 2 {
        return None;
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|&(s, t)| ((s as f64).ln(), t.ln())).collect();
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = xy.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let a = sxy / sxx;
    Some(PowerLaw {
        exponent: a,
        intercept: my - a * mx,
        r_squared: if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) },
    })
}

/// Random `x_0` of `len` tokens and a random subsequence keeping each token with probability `keep`.
fn random_pair(rng: &mut ChaCha8Rng, len: usize, tokens: usize, keep: f64) -> (Sequence, Sequence) {
    let body: Vec<u32> = (0..len).map(|_| rng.random_range(1..=tokens as u32)).collect();
    let x_0 = Sequence::from_body(&body).expect("ids are in range");
    let kept: Vec<usize> = std::iter::once(0)
        .chain((1..=len).filter(|_| rng.random_bool(keep)))
        .collect();
    (x_0.select(&kept), x_0)
}

fn invoke(x_t: &Sequence, x_0: &Sequence, vocab_size: usize, domain: Domain, parallel: bool) -> Result<(), DpError> {
    let (t, o) = (x_t.tokens(), x_0.tokens());
    match domain {
        Domain::Exact => insertion_counts::<u64>(t, o, vocab_size, parallel).map(drop),
        Domain::LogF32 => insertion_counts::<LogCount<f32>>(t, o, vocab_size, parallel).map(drop),
        Domain::Log => insertion_counts::<LogCount<f64>>(t, o, vocab_size, parallel).map(drop),
        Domain::Auto => match insertion_counts::<u64>(t, o, vocab_size, parallel) {
            Err(DpError::Overflow) => invoke(x_t, x_0, vocab_size, Domain::Log, parallel),
            r => r.map(drop),
        },
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

pub fn run(s: BenchSettings, globals: Globals) -> Result<(), Failure> {
    let lengths = s.lengths.clone().unwrap_or_else(|| vec![256, 512, 1024, 2048]);
    let mut distinct = lengths.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Failure::Usage(anyhow!(
            "lengths: a power-law fit needs at least 2 distinct lengths, got {lengths:?}"
        )));
    }
    if distinct[0] == 0 {
        return Err(Failure::Usage(anyhow!("lengths must be positive")));
    }
    let batch = s.batch.unwrap_or(4);
    let reps = s.reps.unwrap_or(5);
    let tokens = s.tokens.unwrap_or(20);
    let keep = s.keep.unwrap_or(0.5);
    if batch == 0 || reps == 0 || tokens == 0 {
        return Err(Failure::Usage(anyhow!("batch, reps and tokens must be at least 1")));
    }
    if !(0.0..=1.0).contains(&keep) {
        return Err(Failure::Usage(anyhow!("keep must lie in [0, 1], got {keep}")));
    }
    let domain: Domain = parse_or("domain", s.domain.as_deref(), Domain::Log)?;
    let parallel = s.parallel.unwrap_or(true);

    let mut out = JsonLines::open(None)?;
    out.emit(&json!({ "config": Resolved {
        command: "bench",
        lengths: lengths.clone(),
        batch,
        reps,
        tokens,
        keep,
        domain: domain.to_string(),
        parallel,
        seed: globals.seed,
        seed_drawn: globals.seed_drawn,
        threads: globals.threads,
        rayon_threads: rayon::current_num_threads(),
    }}))?;

    let mut rng = ChaCha8Rng::seed_from_u64(globals.seed);
    let vocab_size = tokens + 1;
    let mut points = Vec::new();
    for &len in &lengths {
        let pairs: Vec<_> = (0..batch).map(|_| random_pair(&mut rng, len, tokens, keep)).collect();
        let run_batch = || -> Result<f64, DpError> {
            let began = Instant::now();
            for (x_t, x_0) in &pairs {
                invoke(x_t, x_0, vocab_size, domain, parallel)?;
            }
            Ok(began.elapsed().as_secs_f64() * 1e3 / batch as f64)
        };
        let fail = |e: DpError| Failure::Runtime(anyhow!("length {len}: {e}"));
        run_batch().map_err(fail)?;
        let per_rep = (0..reps).map(|_| run_batch()).collect::<Result<Vec<_>, _>>().map_err(fail)?;
        let (mean_ms, var_ms2) = mean_var(&per_rep);
        let row = Timing {
            length: len,
            mean_ms,
            var_ms2,
            std_ms: var_ms2.sqrt(),
            reps,
            batch,
        };
        eprintln!("length {len:>6}  {mean_ms:>10.3} ms  (sd {:.3})", row.std_ms);
        out.emit(&row)?;
        points.push((len, mean_ms));
    }
    let fit = fit_power_law(&points).ok_or_else(|| Failure::Runtime(anyhow!("degenerate timings")))?;
    eprintln!("fitted exponent a = {:.3} (r^2 {:.4})", fit.exponent, fit.r_squared);
    out.emit(&json!({ "fit": fit }))?;
    out.finish().map_err(Into::into)
}
