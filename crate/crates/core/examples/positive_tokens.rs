//! Predicted-positive token set on a synthetic corpus.
//!
//! Runs reduction, clustering and outlier selection unsupervised and again
//! with the first 16 sentences' labels fed in, then prints the positive-set
//! precision/recall against gold and writes the per-token diagnostic CSV.
//!
//! cargo run --release --example positive_tokens -- [n_sentences] [out.csv]

use std::time::Instant;

use alner::positive::{supervision_class, PositiveIdParams, PositivePipeline};
use alner::synthetic::SyntheticSpec;

fn main() -> alner::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_sentences = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let csv_out = args.next();

    let spec = SyntheticSpec { n_sentences, ..Default::default() };
    let data = spec.generate(7)?;
    let emb = data.embeddings(7)?;
    let corpus = &data.corpus;
    println!("{} sentences, {} tokens", corpus.n_sentences(), corpus.n_tokens());

    let t0 = Instant::now();
    let pipeline = PositivePipeline::new(&emb, (0..corpus.n_tokens()).collect(), PositiveIdParams::default())?;
    println!("knn graph: {:.1}s", t0.elapsed().as_secs_f64());

    let gold: Vec<_> = corpus.tokens().map(|t| t.gold).collect();
    let scheme = corpus.label_scheme();
    let labeled: Vec<bool> = corpus
        .sentences()
        .iter()
        .enumerate()
        .flat_map(|(i, s)| std::iter::repeat_n(i < 16, s.n_tokens()))
        .collect();

    let unsup = |_t: usize| None;
    let sup = |t: usize| labeled[t].then(|| supervision_class(scheme, gold[t]));
    for (name, labels) in [("unsupervised", &unsup as &dyn Fn(usize) -> Option<i32>), ("16 labeled", &sup)] {
        let t0 = Instant::now();
        let run = pipeline.run(labels, 0)?;
        let m = run.metrics(corpus);
        println!(
            "{name:>13}: {:.1}s  clusters={:?} noise={}  |P'|={}  precision_pos={:.3} recall_pos={:.3} precision_neg={:.3}",
            t0.elapsed().as_secs_f64(),
            run.clusters.sizes,
            run.clusters.n_noise,
            run.positive.len(),
            m.precision_pos,
            m.recall_pos,
            m.precision_neg,
        );
        if let Some(path) = &csv_out {
            run.save_csv(path)?;
        }
    }
    Ok(())
}
