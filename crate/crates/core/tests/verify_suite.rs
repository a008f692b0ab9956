use delins_core::dp::{Domain, DpEngine, RatioSource};
use delins_core::oracle::verify::{run, run_with, FaultyDp, VerifyLevel};

#[test]
fn quick_suite_passes() {
    let report = run(VerifyLevel::Quick, 7);
    println!("{report}");
    assert!(report.passed());
}

#[test]
fn full_suite_passes() {
    let report = run(VerifyLevel::Full, 11);
    println!("{report}");
    assert!(report.passed());
}

#[test]
fn faulty_engine_is_caught() {
    let faulty = |v: usize| -> Box<dyn RatioSource> {
        Box::new(FaultyDp {
            inner: DpEngine::new(v).with_domain(Domain::Exact),
            bias: 1e-3,
        })
    };
    let report = run_with(VerifyLevel::Quick, 7, &faulty, |_| {});
    assert!(!report.passed());
    assert!(!report.get("ratio-grand-sum").unwrap().passed);
    assert!(report.get("fixed-length-time-independence").unwrap().passed);
}
