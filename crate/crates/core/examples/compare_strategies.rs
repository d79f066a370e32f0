//! Oracle simulation of several query strategies on one synthetic corpus,
//! with per-iteration mean F1 ± SEM and the token cost of reaching fixed F1
//! levels.
//!
//! cargo run --release --example compare_strategies -- [n_sentences] [seeds] [strategies] [spec.json] [al.json]
//! e.g. `-- 1500 5 RS,tTE,tpTE,nTE,dpTE`; the optional JSON file overrides
//! fields of the synthetic corpus spec, the second those of the AL config.

use std::sync::Arc;
use std::time::Instant;

use alner::al::{run_experiment, AlConfig, CostAxis, StopCriterion};
use alner::scoring::Strategy;
use alner::synthetic::SyntheticSpec;

fn main() -> alner::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_sentences = args.next().and_then(|s| s.parse().ok()).unwrap_or(1500);
    let n_repeats = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let strategies: Vec<Strategy> = args
        .next()
        .unwrap_or_else(|| "RS,tTE,tpTE,nTE,dpTE".into())
        .split(',')
        .map(str::parse)
        .collect::<alner::Result<_>>()?;

    let mut spec = match args.next() {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| alner::Error::InvalidArgument(format!("{path}: {e}")))?;
            serde_json::from_str(&text)?
        }
        None => SyntheticSpec::default(),
    };
    spec.n_sentences = n_sentences;
    let base: AlConfig = match args.next() {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| alner::Error::InvalidArgument(format!("{path}: {e}")))?;
            serde_json::from_str(&text)?
        }
        None => AlConfig {
            m: 3,
            max_iterations: 8,
            stop: vec![StopCriterion::PoolExhausted],
            ..Default::default()
        },
    };
    let dataset = Arc::new(spec.generate(11)?.into_dataset(11, 0.2)?);
    println!("{dataset:?}");

    let levels = [0.5, 0.6, 0.7, 0.8];
    println!("{:<6} {:>8}  tokens to reach F1 {:?}   (sentences)", "", "secs", levels);
    for strategy in strategies {
        let config = AlConfig {
            strategy,
            n_repeats,
            ..base.clone()
        };
        let t0 = Instant::now();
        let out = run_experiment(&dataset, &config, None)?;
        let s = &out.summary;
        let fmt = |axis| {
            levels
                .iter()
                .map(|&l| s.mean_reach(l, axis).map_or("  n/r".to_string(), |v| format!("{v:>6.0}")))
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!(
            "{:<6} {:>8.1}  {}   ({})",
            strategy.to_string(),
            t0.elapsed().as_secs_f64(),
            fmt(CostAxis::Tokens),
            fmt(CostAxis::Sentences)
        );
        let curve: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.3}±{:.3}@{:.0}", p.f1, p.f1_sem.unwrap_or(0.0), p.tokens))
            .collect();
        println!("       {}", curve.join(" "));
    }
    Ok(())
}
