use std::collections::HashMap;

use delins_core::oracle::{ExactScorer, TinyDistribution};
use delins_core::process::LogLinear;
use delins_core::sampler::{batch_generate, CachedScorer, LengthMode, SamplerConfig};
use delins_core::Sequence;

fn seq(body: &[u32]) -> Sequence {
    Sequence::from_body(body).unwrap()
}

fn tv(dist: &TinyDistribution, finals: &[Sequence]) -> f64 {
    let mut freq: HashMap<&Sequence, f64> = HashMap::new();
    for s in finals {
        *freq.entry(s).or_insert(0.0) += 1.0 / finals.len() as f64;
    }
    let mut d: f64 = dist.support().iter().map(|(x, p)| (p - freq.get(x).copied().unwrap_or(0.0)).abs()).sum();
    d += freq.iter().filter(|(x, _)| dist.prob(x) == 0.0).map(|(_, q)| q).sum::<f64>();
    d / 2.0
}

#[test]
fn oracle_scores_reproduce_the_data() {
    let dist = TinyDistribution::uniform(vec![seq(&[1, 2]), seq(&[2, 1])], 3).unwrap();
    let exact = ExactScorer {
        dist: &dist,
        schedule: &LogLinear,
    };
    let cached = CachedScorer::new(&exact);
    let run = |steps, mode| {
        let cfg = SamplerConfig {
            steps,
            mode,
            seed: 5,
            keep_snapshots: false,
            ..SamplerConfig::default()
        };
        let (traces, _) = batch_generate(&cached, &LogLinear, &cfg, None, 20_000, true).unwrap();
        tv(&dist, &traces.into_iter().map(|t| t.final_seq).collect::<Vec<_>>())
    };
    let (coarse, fine) = (run(32, LengthMode::Variable), run(512, LengthMode::Variable));
    assert!(fine <= 0.05, "tv {fine}");
    assert!(fine < coarse, "tv {coarse} -> {fine}");
    assert!(run(64, LengthMode::Fixed(2)) <= 0.05);
}
