//! Sentence query scores on the worked example "Angioedema due to ACE
//! inhibitors: common and inadequately diagnosed", with fixed token
//! uncertainties and predicted positives {x1, x4, x5}.
//!
//! cargo run --example uncertainty_scores

use std::collections::BTreeSet;

use alner::corpus::{Corpus, LabelScheme, RawToken};
use alner::scoring::{aggregate, baseline_score, tau, AggregationStrategy, TokenCountDensity, UncertaintyMeasure};

fn main() -> alner::Result<()> {
    let words = ["Angioedema", "due", "to", "ACE", "inhibitors:", "common", "and", "inadequately", "diagnosed"];
    let scheme = LabelScheme::new(["Chemical", "Disease"])?;
    let raw = words
        .iter()
        .map(|w| RawToken {
            surface: w.to_string(),
            pos: None,
            tag: 0,
        })
        .collect();
    let corpus = Corpus::from_tagged(scheme, false, vec![raw])?;
    let sentence = &corpus.sentences()[0];

    let taus = [0.62, 0.05, 0.03, 0.48, 0.51, 0.12, 0.02, 0.20, 0.09];
    let positive: BTreeSet<usize> = [0, 3, 4].into();
    let flags: Vec<bool> = (0..words.len()).map(|i| positive.contains(&i)).collect();
    let density = TokenCountDensity::fit(&[4, 6, 7, 9, 9, 10, 12, 14, 18, 25])?;
    let w = density.pdf(9.0).sqrt();
    println!("p_L(9) = {:.6}, sqrt = {w:.6}", density.pdf(9.0));

    let mut rng = rand::rng();
    let lss = baseline_score(AggregationStrategy::Lss, sentence, None, None, &mut rng)?.phi;
    let pas = baseline_score(AggregationStrategy::Pas, sentence, Some(&positive), Some(&density), &mut rng)?.phi;
    println!("LSS      = {lss}");
    println!("PAS      = {pas:.6}   (3 * sqrt(p_L(9)) = {:.6})", 3.0 * w);

    use AggregationStrategy::*;
    for (name, agg) in [("single", Single), ("norm", Normalized), ("total", Total), ("tp", TotalPos), ("dp", DnormPos)] {
        let phi = aggregate(agg, &taus, Some(&flags), Some(&density))?;
        println!("phi_{name:<6} = {phi:.6}");
    }
    println!("tau(x1)+tau(x4)+tau(x5) = {:.6}", taus[0] + taus[3] + taus[4]);

    println!("\ntoken measures for p = [0.5, 0.3, 0.2], Viterbi tag marginal 0.3:");
    for m in UncertaintyMeasure::ALL {
        println!("  {m}: {:.6}  (max {:.6})", tau(m, &[0.5, 0.3, 0.2], 0.3)?, m.upper_bound(3));
    }
    Ok(())
}
