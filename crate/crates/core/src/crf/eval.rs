use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::model::CrfModel;
use super::train::FeatureCache;
use crate::corpus::{extract_spans, Corpus, LabelScheme, SentenceId, TagId};
use crate::embedding::EmbeddingMatrix;
use crate::error::Result;

/// Micro-averaged exact-match span scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    /// With no predictions precision is 1 if there is also no gold span,
    /// else 0; with no gold spans recall is 1.
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted > 0 {
            true_positives as f64 / predicted as f64
        } else if gold == 0 {
            1.0
        } else {
            0.0
        };
        let recall = if gold > 0 {
            true_positives as f64 / gold as f64
        } else {
            1.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            true_positives,
            predicted,
            gold,
        }
    }
}

/// A predicted span is correct iff class, start and end all match a gold span.
pub fn span_prf<'a>(
    scheme: &LabelScheme,
    pairs: impl IntoIterator<Item = (&'a [TagId], &'a [TagId])>,
) -> Prf {
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (gold, pred) in pairs {
        let g: HashSet<_> = extract_spans(scheme, gold).into_iter().collect();
        let p = extract_spans(scheme, pred);
        tp += p.iter().filter(|s| g.contains(s)).count();
        np += p.len();
        ng += g.len();
    }
    Prf::from_counts(tp, np, ng)
}

/// Entity-level scores of Viterbi predictions on `ids` against gold tags.
pub fn evaluate(
    model: &CrfModel,
    cache: &FeatureCache,
    corpus: &Corpus,
    ids: &[SentenceId],
    emb: &EmbeddingMatrix,
) -> Result<Prf> {
    let pred = cache.predict(model, ids, emb)?;
    let gold: Vec<Vec<TagId>> = ids.iter().map(|&id| corpus.sentence(id).gold_tags()).collect();
    Ok(span_prf(
        model.label_scheme(),
        gold.iter().zip(&pred).map(|(g, p)| (&g[..], &p[..])),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme() -> LabelScheme {
        LabelScheme::new(["X", "Y"]).unwrap()
    }

    #[test]
    fn identical_is_perfect() {
        let t = vec![1, 2, 0, 3];
        let r = span_prf(&scheme(), [(&t[..], &t[..])]);
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn all_outside_has_zero_recall() {
        let g = vec![1, 2, 0, 3];
        let p = vec![0; 4];
        let r = span_prf(&scheme(), [(&g[..], &p[..])]);
        assert_eq!((r.recall, r.f1), (0.0, 0.0));
    }

    #[test]
    fn boundary_mismatch_scores_nothing() {
        let g = vec![1, 2];
        let p = vec![1, 0];
        let r = span_prf(&scheme(), [(&g[..], &p[..])]);
        assert_eq!((r.precision, r.recall), (0.0, 0.0));
    }

    #[test]
    fn class_mismatch_scores_nothing() {
        let g = vec![1];
        let p = vec![3];
        assert_eq!(span_prf(&scheme(), [(&g[..], &p[..])]).true_positives, 0);
    }
}
