use anyhow::anyhow;
use delins_core::dp::semiring::{CountValue, LogCount};
use delins_core::dp::tables::{insertion_counts, prefix_table, total_count};
use delins_core::dp::{Domain, DpError};
use delins_core::seq::{tokenize_scan, Sequence, TokenizeMode, Vocab};
use delins_core::GapMatrix;
use serde_json::json;

use crate::config::{parse_or, CountSettings, Globals};
use crate::Failure;

/// `N(sub, seq)` in whichever domain answered.
#[derive(Clone, Debug, PartialEq)]
pub enum CountResult {
    Exact(u64),
    /// Natural log of the count.
    Log(f64),
}

impl CountResult {
    fn display(&self) -> String {
        match *self {
            CountResult::Exact(n) => n.to_string(),
            CountResult::Log(l) if l <= -1e5 => "0".into(),
            CountResult::Log(l) => format!("{:.6e} (ln {l:.12})", l.exp()),
        }
    }

    fn json(&self) -> serde_json::Value {
        match *self {
            CountResult::Exact(n) => json!({ "count": n, "domain": "exact" }),
            CountResult::Log(l) => json!({ "count": if l <= -1e5 { 0.0 } else { l.exp() }, "ln_count": l, "domain": "log" }),
        }
    }
}

fn exact(sub: &Sequence, seq: &Sequence) -> Result<u64, DpError> {
    Ok(total_count(&prefix_table::<u64>(sub.tokens(), seq.tokens(), false)?))
}

fn log(sub: &Sequence, seq: &Sequence, domain: Domain) -> Result<f64, DpError> {
    Ok(match domain {
        Domain::LogF32 => total_count(&prefix_table::<LogCount<f32>>(sub.tokens(), seq.tokens(), false)?).ln(),
        _ => total_count(&prefix_table::<LogCount<f64>>(sub.tokens(), seq.tokens(), false)?).ln(),
    })
}

pub fn count(sub: &Sequence, seq: &Sequence, domain: Domain) -> Result<CountResult, DpError> {
    match domain {
        Domain::Exact => exact(sub, seq).map(CountResult::Exact),
        Domain::Auto => match exact(sub, seq) {
            Err(DpError::Overflow) => log(sub, seq, Domain::Log).map(CountResult::Log),
            r => r.map(CountResult::Exact),
        },
        d => log(sub, seq, d).map(CountResult::Log),
    }
}

/// Insertion-count grid as reals: entry `(i, v)` counts `Ins(sub, i, v)` in `seq`.
fn grid(sub: &Sequence, seq: &Sequence, vocab_size: usize, result: &CountResult) -> Result<GapMatrix<f64>, DpError> {
    let (a, b) = (sub.tokens(), seq.tokens());
    match result {
        CountResult::Exact(_) => match insertion_counts::<u64>(a, b, vocab_size, false) {
            Ok((g, _)) => Ok(g.map(|&c| c as f64)),
            Err(DpError::Overflow) => grid(sub, seq, vocab_size, &CountResult::Log(0.0)),
            Err(e) => Err(e),
        },
        CountResult::Log(_) => {
            let (g, _) = insertion_counts::<LogCount<f64>>(a, b, vocab_size, false)?;
            Ok(g.map(|c| if c.ln() <= -1e5 { 0.0 } else { c.ln().exp() }))
        }
    }
}

fn fmt_cell(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.0}")
    } else {
        format!("{x:.4e}")
    }
}

pub fn run(sub: &str, seq: &str, s: CountSettings, globals: Globals) -> Result<(), Failure> {
    let mode: TokenizeMode = parse_or("tokenizer", s.tokenizer.as_deref(), TokenizeMode::Char)?;
    let domain: Domain = parse_or("domain", s.domain.as_deref(), Domain::Auto)?;
    let format = s.format.as_deref().unwrap_or("text");
    if format != "text" && format != "json" {
        return Err(Failure::Usage(anyhow!("format: expected text or json, got {format:?}")));
    }
    let mut vocab = Vocab::default();
    let seq_t = tokenize_scan(seq, &mut vocab, mode)?;
    let sub_t = tokenize_scan(sub, &mut vocab, mode)?;
    let result = count(&sub_t, &seq_t, domain).map_err(|e| Failure::Runtime(e.into()))?;
    let grid = if s.grid.unwrap_or(false) {
        Some(grid(&sub_t, &seq_t, vocab.len(), &result).map_err(|e| Failure::Runtime(e.into()))?)
    } else {
        None
    };
    let columns = &vocab.symbols()[1..];
    if format == "json" {
        let mut out = result.json();
        out["seed"] = json!(globals.seed);
        if let Some(g) = &grid {
            let rows: Vec<&[f64]> = (0..g.rows()).map(|i| g.row(i)).collect();
            out["grid"] = json!({ "columns": columns, "rows": rows });
        }
        println!("{out}");
        return Ok(());
    }
    println!("{}", result.display());
    if let Some(g) = grid {
        let cells: Vec<Vec<String>> = (0..g.rows()).map(|i| g.row(i).iter().map(|&x| fmt_cell(x)).collect()).collect();
        let width = cells
            .iter()
            .flatten()
            .map(String::len)
            .chain(columns.iter().map(|c| c.chars().count()))
            .max()
            .unwrap_or(1);
        let mut header = format!("{:<8}", "gap");
        for c in columns {
            header.push_str(&format!(" {c:>width$}"));
        }
        println!("{header}");
        for (i, row) in cells.iter().enumerate() {
            let mut line = format!("{i:<8}");
            for c in row {
                line.push_str(&format!(" {c:>width$}"));
            }
            println!("{line}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(sub: &str, seq: &str) -> (Sequence, Sequence, usize) {
        let mut v = Vocab::default();
        let b = tokenize_scan(seq, &mut v, TokenizeMode::Char).unwrap();
        let a = tokenize_scan(sub, &mut v, TokenizeMode::Char).unwrap();
        (a, b, v.len())
    }

    #[test]
    fn documented_examples() {
        let (a, b, _) = pair("bag", "babgbag");
        assert_eq!(count(&a, &b, Domain::Auto).unwrap(), CountResult::Exact(5));
        let (a, b, _) = pair("", "babgbag");
        assert_eq!(count(&a, &b, Domain::Auto).unwrap(), CountResult::Exact(1));
        let (a, b, _) = pair("bagbagbag", "bag");
        assert_eq!(count(&a, &b, Domain::Auto).unwrap(), CountResult::Exact(0));
        assert_eq!(count(&a, &b, Domain::Log).unwrap().display(), "0");
    }

    #[test]
    fn log_domain_agrees() {
        let (a, b, _) = pair("bag", "babgbag");
        let CountResult::Log(l) = count(&a, &b, Domain::Log).unwrap() else { panic!() };
        assert!((l.exp() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn auto_falls_back_on_overflow() {
        let seq = "a".repeat(200);
        let (a, b, _) = pair(&"a".repeat(100), &seq);
        assert!(matches!(count(&a, &b, Domain::Auto).unwrap(), CountResult::Log(_)));
        assert!(count(&a, &b, Domain::Exact).is_err());
    }

    #[test]
    fn grid_rows_sum_to_deleted_times_count() {
        let (a, b, v) = pair("bag", "babgbag");
        let g = grid(&a, &b, v, &CountResult::Exact(5)).unwrap();
        assert_eq!(g.sum(), 5.0 * 4.0);
        let gl = grid(&a, &b, v, &CountResult::Log(5f64.ln())).unwrap();
        assert!((gl.sum() - 20.0).abs() < 1e-9);
    }
}
