use std::sync::{Arc, Mutex};

use crate::corpus::{Corpus, SentenceId};
use crate::crf::FeatureCache;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::positive::{PositiveIdParams, PositivePipeline};
use crate::scoring::TokenCountDensity;

/// Everything fixed for an experiment: corpus, embeddings, the train/test
/// split and derived data shared by all sessions (features, length
/// density, kNN graph).
pub struct Dataset {
    corpus: Corpus,
    emb: EmbeddingMatrix,
    train: Vec<SentenceId>,
    test: Vec<SentenceId>,
    features: FeatureCache,
    density: TokenCountDensity,
    pipelines: Mutex<Vec<(PositiveIdParams, Arc<PositivePipeline>)>>,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("sentences", &self.corpus.n_sentences())
            .field("train", &self.train.len())
            .field("test", &self.test.len())
            .field("dim", &self.emb.dim())
            .finish()
    }
}

impl Dataset {
    /// `train` is the pool the sessions draw from; `test` is only scored.
    pub fn new(
        corpus: Corpus,
        emb: EmbeddingMatrix,
        mut train: Vec<SentenceId>,
        mut test: Vec<SentenceId>,
    ) -> Result<Self> {
        emb.validate_against(&corpus)?;
        train.sort_unstable();
        test.sort_unstable();
        if train.is_empty() {
            return Err(Error::InvalidSplit("empty training split".into()));
        }
        for w in [&train, &test] {
            if w.windows(2).any(|p| p[0] == p[1]) {
                return Err(Error::InvalidSplit("duplicate sentence id".into()));
            }
            if let Some(bad) = w.iter().find(|id| corpus.get(**id).is_none()) {
                return Err(Error::InvalidSplit(format!("unknown sentence {bad}")));
            }
        }
        if train.iter().any(|id| test.binary_search(id).is_ok()) {
            return Err(Error::InvalidSplit("train and test overlap".into()));
        }
        let features = FeatureCache::build(&corpus, &emb)?;
        let lengths: Vec<usize> = train.iter().map(|&id| corpus.sentence(id).n_tokens()).collect();
        let density = TokenCountDensity::fit(&lengths)?;
        Ok(Self {
            corpus,
            emb,
            train,
            test,
            features,
            density,
            pipelines: Mutex::new(Vec::new()),
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.emb
    }

    pub fn train_ids(&self) -> &[SentenceId] {
        &self.train
    }

    pub fn test_ids(&self) -> &[SentenceId] {
        &self.test
    }

    pub fn features(&self) -> &FeatureCache {
        &self.features
    }

    /// Length density of the training split.
    pub fn density(&self) -> &TokenCountDensity {
        &self.density
    }

    /// Corpus-global indices of every training token, in sentence order.
    pub fn train_tokens(&self) -> Vec<usize> {
        self.train
            .iter()
            .flat_map(|&id| self.corpus.sentence(id).tokens.iter().map(|t| t.global_index))
            .collect()
    }

    /// Positive-id pipeline over the training tokens, built once per
    /// parameter set.
    pub fn pipeline(&self, params: &PositiveIdParams) -> Result<Arc<PositivePipeline>> {
        let mut cache = self.pipelines.lock().expect("pipeline cache poisoned");
        if let Some((_, p)) = cache.iter().find(|(k, _)| k == params) {
            return Ok(Arc::clone(p));
        }
        let p = Arc::new(PositivePipeline::new(&self.emb, self.train_tokens(), params.clone())?);
        cache.push((params.clone(), Arc::clone(&p)));
        Ok(p)
    }
}
