//! One oracle active-learning session on a synthetic corpus, persisted to
//! disk. Prints the batch schedule, both cost ledgers and the learning
//! curve, then reopens the session from its directory.
//!
//! cargo run --release --example al_simulation -- [strategy] [out_dir]

use std::sync::Arc;

use alner::al::{AlConfig, AnnotationMode, Session};
use alner::scoring::Strategy;
use alner::synthetic::SyntheticSpec;

fn main() -> alner::Result<()> {
    let mut args = std::env::args().skip(1);
    let strategy: Strategy = args.next().as_deref().unwrap_or("tTE").parse()?;
    let dir = args
        .next()
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("alner_al_simulation"));
    let _ = std::fs::remove_dir_all(&dir);

    let dataset = Arc::new(
        SyntheticSpec {
            n_sentences: 600,
            ..Default::default()
        }
        .generate(1)?
        .into_dataset(1, 0.25)?,
    );
    let config = AlConfig {
        strategy,
        m: 3,
        max_iterations: 6,
        ..Default::default()
    };
    let mut session = Session::create(
        Arc::clone(&dataset),
        config,
        0,
        AnnotationMode::Oracle,
        "demo",
        Some(&dir),
    )?;
    session.run()?;
    println!("{strategy} stopped: {:?}", session.state().stopped);

    println!("{:>4} {:>6} {:>9} {:>9} {:>7}", "iter", "batch", "sentences", "tokens", "F1");
    let ledger = &session.state().ledger;
    for (p, d) in session.curve().points.iter().zip(&ledger.deltas) {
        println!(
            "{:>4} {:>6} {:>9} {:>9} {:>7.3}",
            p.iteration, d.sentences, p.sentences, p.tokens, p.f1
        );
    }

    let reopened = Session::open(dataset, &dir)?;
    println!(
        "reopened from {}: {} labeled, {} in pool, curve identical = {}",
        dir.display(),
        reopened.state().labeled.len(),
        reopened.state().pool.len(),
        reopened.curve() == session.curve()
    );
    Ok(())
}
