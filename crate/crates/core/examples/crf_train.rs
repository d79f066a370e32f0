//! Train a CRF on gold labels, evaluate entity-level F1 on held-out
//! sentences, save the model and check the reloaded copy decodes the same.
//!
//! cargo run --release --example crf_train -- [n_train]

use alner::crf::{evaluate, load_model, save_model, FeatureCache, TrainConfig};
use alner::synthetic::SyntheticSpec;

fn main() -> alner::Result<()> {
    let n_train: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);

    let data = SyntheticSpec {
        n_sentences: n_train + 300,
        ..Default::default()
    }
    .generate(5)?;
    let emb = data.embeddings(5)?;
    let corpus = &data.corpus;
    let ids: Vec<_> = corpus.ids().collect();
    let (train, test) = ids.split_at(n_train);

    let cache = FeatureCache::build(corpus, &emb)?;
    println!("{} attributes registered", cache.registry().len());
    let (model, report) = cache.train_gold(corpus, train, &emb, &TrainConfig::default())?;
    println!(
        "trained on {} sentences: {:?} after {} iterations ({} evaluations), objective {:.4}",
        report.n_sentences,
        report.termination,
        report.iterations,
        report.evaluations,
        report.history.last().copied().unwrap_or(f64::NAN)
    );

    let prf = evaluate(&model, &cache, corpus, test, &emb)?;
    println!("test: P {:.3} R {:.3} F1 {:.3}", prf.precision, prf.recall, prf.f1);

    let path = std::env::temp_dir().join("alner_crf_train.acrf");
    save_model(&model, &path)?;
    let reloaded = load_model(&path, cache.registry())?;
    let same = cache.predict(&model, test, &emb)? == cache.predict(&reloaded, test, &emb)?;
    println!("reloaded from {}: identical predictions = {same}", path.display());
    Ok(())
}
