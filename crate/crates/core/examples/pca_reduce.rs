//! PCA on token embeddings: keep the fewest components explaining a target
//! share of the variance, then project.
//!
//! cargo run --release --example pca_reduce -- [dim] [variance_fraction]

use alner::embedding::{fit_pca, transform, PcaTarget};
use alner::synthetic::SyntheticSpec;

fn main() -> alner::Result<()> {
    let mut args = std::env::args().skip(1);
    let dim = args.next().and_then(|s| s.parse().ok()).unwrap_or(64);
    let fraction = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.825);

    let spec = SyntheticSpec {
        n_sentences: 500,
        dim,
        ..Default::default()
    };
    let data = spec.generate(3)?;
    let emb = data.embeddings(3)?;
    println!("{} tokens x {} dims", emb.n_rows(), emb.dim());

    let pca = fit_pca(&emb, PcaTarget::VarianceFraction(fraction))?;
    let cum = pca.cumulative_ratio_all();
    println!("kept k = {} of {} (target {fraction})", pca.k(), pca.dim());
    for (i, c) in cum.iter().enumerate() {
        if i >= 5 && i + 3 < pca.k() || i > pca.k() + 1 {
            continue;
        }
        let ev = pca.eigenvalues().get(i).map_or("-".to_string(), |v| format!("{v:.4}"));
        let mark = if i + 1 == pca.k() { " <" } else { "" };
        println!("  {:>3}  eigenvalue {ev:>8}  cumulative {c:.4}{mark}", i + 1);
    }

    let reduced = transform(&pca, &emb)?;
    println!("reduced: {} tokens x {} dims", reduced.n_rows(), reduced.dim());
    Ok(())
}
