use delins_core::dp::{Domain, DpEngine, RatioSource};
use delins_core::oracle::verify::{self, FaultyDp, VerifyLevel};
use serde_json::json;

use crate::config::{parse_or, Globals, VerifySettings};
use crate::Failure;

/// Relative bias of the deliberately broken engine behind `--inject-fault`.
const FAULT_BIAS: f64 = 1e-3;

pub fn run(s: VerifySettings, globals: Globals) -> Result<(), Failure> {
    let level: VerifyLevel = parse_or("level", s.level.as_deref(), VerifyLevel::Quick)?;
    let json = match s.format.as_deref().unwrap_or("text") {
        "text" => false,
        "json" => true,
        other => return Err(Failure::Usage(anyhow::anyhow!("format: expected text or json, got {other:?}"))),
    };
    let inject = s.inject_fault;
    let factory = move |v: usize| -> Box<dyn RatioSource> {
        let engine = DpEngine::new(v).with_domain(Domain::Exact);
        if inject {
            Box::new(FaultyDp {
                inner: engine,
                bias: FAULT_BIAS,
            })
        } else {
            Box::new(engine)
        }
    };
    let report = verify::run_with(level, globals.seed, &factory, |c| {
        if json {
            println!(
                "{}",
                json!({ "check": c.name, "passed": c.passed, "detail": c.detail, "elapsed_ms": c.elapsed_ms })
            );
        } else {
            println!("{} {:<34} {:>9.1} ms  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.elapsed_ms, c.detail);
        }
    });
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if json {
        println!(
            "{}",
            json!({ "summary": { "level": level.to_string(), "seed": globals.seed, "checks": report.checks.len(), "failed": failed } })
        );
    } else {
        println!("{} checks, {} failed (level {level}, seed {})", report.checks.len(), failed.len(), globals.seed);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verify(failed.join(", ")))
    }
}
