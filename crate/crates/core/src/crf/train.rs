use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{FeatureRegistry, Featurizer, SentenceFeatures, NO_TOKEN};
use super::model::CrfModel;
use super::objective::{log_likelihood, LabeledRef};
use crate::corpus::{Corpus, LabelScheme, SentenceId};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::optim::{minimize, LbfgsParams, Termination};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_iterations: usize,
    pub epsilon: f64,
    pub period: usize,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_linesearch: usize,
    pub memory: usize,
    /// Give every (attribute, tag) and (tag, tag) pair a weight, not only
    /// the pairs observed in the training labels.
    pub allow_negative_features: bool,
    /// When false the L1 term is dropped (`c1` forced to 0) and plain
    /// L-BFGS is used.
    pub orthant_wise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            epsilon: 1e-5,
            period: 10,
            delta: 1e-5,
            c1: 0.1,
            c2: 0.1,
            max_linesearch: 20,
            memory: 6,
            allow_negative_features: true,
            orthant_wise: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_iterations", self.max_iterations as f64),
            ("epsilon", self.epsilon),
            ("delta", self.delta),
            ("max_linesearch", self.max_linesearch as f64),
            ("memory", self.memory as f64),
        ];
        for (k, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(k, "must be positive"));
            }
        }
        for (k, v) in [("c1", self.c1), ("c2", self.c2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// The L1 coefficient actually applied.
    pub fn effective_c1(&self) -> f64 {
        if self.orthant_wise {
            self.c1
        } else {
            0.0
        }
    }

    fn lbfgs_params(&self) -> LbfgsParams {
        LbfgsParams {
            memory: self.memory,
            epsilon: self.epsilon,
            past: self.period,
            delta: self.delta,
            max_iterations: self.max_iterations,
            max_linesearch: self.max_linesearch,
            l1: self.effective_c1(),
            ..LbfgsParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub termination: Termination,
    pub iterations: usize,
    pub evaluations: usize,
    /// Regularized negative log-likelihood after each accepted iterate.
    pub history: Vec<f64>,
    pub effective_c1: f64,
    pub n_sentences: usize,
    pub n_attributes: usize,
}

impl TrainReport {
    /// True if the optimizer stopped on its iteration cap instead of a
    /// convergence test.
    pub fn hit_iteration_cap(&self) -> bool {
        self.termination == Termination::MaxIterations
    }
}

/// Fits a CRF on `batch` from zero weights. Only attributes occurring in the
/// batch get weights.
pub fn train(
    scheme: &LabelScheme,
    registry: &FeatureRegistry,
    batch: &[LabeledRef<'_>],
    emb: &EmbeddingMatrix,
    config: &TrainConfig,
) -> Result<(CrfModel, TrainReport)> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("no labeled sentences".into()));
    }
    if scheme.num_tags() < 2 {
        return Err(Error::InvalidArgument(
            "label scheme needs at least one entity class".into(),
        ));
    }
    let m = scheme.num_tags();
    for s in batch {
        if s.tags.len() != s.features.len() {
            return Err(Error::DimensionMismatch {
                expected: s.features.len(),
                found: s.tags.len(),
            });
        }
        if let Some(&t) = s.tags.iter().find(|&&t| t >= m) {
            return Err(Error::InvalidArgument(format!("tag index {t} out of range")));
        }
    }

    let attrs: BTreeSet<u32> = batch
        .iter()
        .flat_map(|s| s.features.sparse.iter().flatten().map(|&(a, _)| a))
        .collect();
    let attrs: Vec<u32> = attrs.into_iter().collect();
    let mut model = CrfModel::new(scheme.clone(), emb.dim(), registry, &attrs);
    let mask = (!config.allow_negative_features).then(|| observed_mask(&model, batch, emb));

    let c2 = config.c2;
    let mut smooth = |w: &[f64], g: &mut [f64]| -> Result<f64> {
        let (ll, grad) = log_likelihood(&model, w, batch, emb)?;
        let mut f = -ll;
        for i in 0..w.len() {
            f += c2 * w[i] * w[i];
            g[i] = -grad[i] + 2.0 * c2 * w[i];
        }
        if let Some(mask) = &mask {
            for (gi, &keep) in g.iter_mut().zip(mask) {
                if !keep {
                    *gi = 0.0;
                }
            }
        }
        Ok(f)
    };
    let x0 = vec![0.0; model.weights().len()];
    let min = minimize(&mut smooth, x0, &config.lbfgs_params())?;
    if min.termination.is_warning() {
        tracing::warn!(termination = ?min.termination, "CRF training line search failed");
    }
    model.set_weights(min.x)?;
    let report = TrainReport {
        termination: min.termination,
        iterations: min.iterations,
        evaluations: min.evaluations,
        history: min.history,
        effective_c1: config.effective_c1(),
        n_sentences: batch.len(),
        n_attributes: model.attributes().len(),
    };
    Ok((model, report))
}

/// Weights touched by the gold labels: (attribute, tag) pairs where the
/// attribute fires on a token with that tag, and observed tag bigrams.
fn observed_mask(model: &CrfModel, batch: &[LabeledRef<'_>], emb: &EmbeddingMatrix) -> Vec<bool> {
    let m = model.num_tags();
    let dim = model.dim();
    let attr_off = model.attr_offset();
    let trans_off = model.trans_offset();
    let mut mask = vec![false; model.weights().len()];
    for s in batch {
        for (i, &y) in s.tags.iter().enumerate() {
            for (slot, &tok) in s.features.context[i].iter().enumerate() {
                if tok == NO_TOKEN {
                    continue;
                }
                for (d, &x) in emb.row(tok as usize).iter().enumerate() {
                    if x != 0.0 {
                        mask[slot * dim * m + d * m + y] = true;
                    }
                }
            }
            for &(a, _) in &s.features.sparse[i] {
                if let Some(r) = model.row_of(a) {
                    mask[attr_off + r * m + y] = true;
                }
            }
            if i > 0 {
                mask[trans_off + s.tags[i - 1] * m + y] = true;
            }
        }
    }
    mask
}

/// Features for every sentence of a corpus, encoded once against a shared
/// registry.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    featurizer: Featurizer,
    sentences: Vec<SentenceFeatures>,
}

impl FeatureCache {
    pub fn build(corpus: &Corpus, emb: &EmbeddingMatrix) -> Result<Self> {
        emb.validate_against(corpus)?;
        let mut featurizer = Featurizer::new(corpus.has_pos(), emb.dim());
        let sentences = corpus
            .sentences()
            .iter()
            .map(|s| featurizer.encode(s, emb))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            featurizer,
            sentences,
        })
    }

    pub fn registry(&self) -> &FeatureRegistry {
        self.featurizer.registry()
    }

    pub fn get(&self, id: SentenceId) -> &SentenceFeatures {
        &self.sentences[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Trains on the given sentences with their gold tags.
    pub fn train_gold(
        &self,
        corpus: &Corpus,
        ids: &[SentenceId],
        emb: &EmbeddingMatrix,
        config: &TrainConfig,
    ) -> Result<(CrfModel, TrainReport)> {
        let tags: Vec<Vec<usize>> = ids.iter().map(|&id| corpus.sentence(id).gold_tags()).collect();
        let batch: Vec<LabeledRef<'_>> = ids
            .iter()
            .zip(&tags)
            .map(|(&id, t)| LabeledRef {
                features: self.get(id),
                tags: t,
            })
            .collect();
        train(corpus.label_scheme(), self.registry(), &batch, emb, config)
    }

    /// Viterbi paths for the given sentences, in order.
    pub fn predict(
        &self,
        model: &CrfModel,
        ids: &[SentenceId],
        emb: &EmbeddingMatrix,
    ) -> Result<Vec<Vec<usize>>> {
        ids.par_iter()
            .map(|&id| Ok(super::inference::viterbi(model, self.get(id), emb)?.tags))
            .collect()
    }
}
