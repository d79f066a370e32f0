//! Synthetic NER corpora with planted entity structure.
//!
//! Sentences have normally distributed lengths; entities of a few classes
//! are sprinkled in at a configurable rate. Surfaces carry noisy lexical cues
//! (capitalization, class-specific vocabulary shared in part with `O`), and
//! embeddings are isotropic Gaussian clouds: entities far from `O`, entity
//! classes close to each other.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::al::Dataset;
use crate::corpus::{Corpus, LabelScheme, RawToken, SentenceId, OUTSIDE};
use crate::embedding::{synth_embeddings, EmbeddingMatrix, GeneratorSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_sentences: usize,
    pub classes: Vec<String>,
    pub length_mean: f64,
    pub length_sd: f64,
    pub max_length: usize,
    /// Probability that an entity starts at a free position.
    pub entity_rate: f64,
    pub max_entity_length: usize,
    /// Probability that a sentence contains no entity at all.
    pub empty_sentence_rate: f64,
    /// Chance an entity token is capitalized; `O` tokens use `outside_title_rate`.
    pub entity_title_rate: f64,
    pub outside_title_rate: f64,
    /// Chance a token draws its surface from the shared ambiguous vocabulary.
    pub ambiguous_rate: f64,
    pub vocab_per_class: usize,
    pub dim: usize,
    /// Distance of entity class means from the `O` mean, in noise units.
    pub entity_separation: f64,
    /// Distance between entity class means, in noise units.
    pub class_separation: f64,
    pub noise: f64,
    pub with_pos: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_sentences: 2000,
            classes: vec!["PER".into(), "LOC".into()],
            length_mean: 12.0,
            length_sd: 5.0,
            max_length: 60,
            entity_rate: 0.06,
            max_entity_length: 3,
            empty_sentence_rate: 0.3,
            entity_title_rate: 0.7,
            outside_title_rate: 0.1,
            ambiguous_rate: 0.3,
            vocab_per_class: 40,
            dim: 16,
            entity_separation: 10.0,
            class_separation: 2.5,
            noise: 1.0,
            with_pos: false,
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn word(prefix: &str, i: usize) -> String {
    const SYL: [&str; 12] = ["ka", "lo", "mi", "ven", "dor", "sa", "tu", "rin", "bel", "qo", "zan", "fe"];
    let mut s = String::from(prefix);
    let mut x = i + 7;
    for _ in 0..2 {
        s.push_str(SYL[x % SYL.len()]);
        x /= SYL.len();
    }
    s
}

/// A generated corpus and its embedding generator.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub generator: GeneratorSpec,
}

impl SyntheticData {
    pub fn embeddings(&self, seed: u64) -> Result<EmbeddingMatrix> {
        synth_embeddings(&self.corpus, &self.generator, seed)
    }

    /// Embeds the corpus and holds out a seeded random `test_fraction` of
    /// the sentences for evaluation; the rest is the pool.
    pub fn into_dataset(self, seed: u64, test_fraction: f64) -> Result<Dataset> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config("test_fraction", "must lie in [0, 1)"));
        }
        let emb = self.embeddings(seed)?;
        let mut ids: Vec<SentenceId> = self.corpus.ids().collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7e57));
        let n_test = (ids.len() as f64 * test_fraction).round() as usize;
        let test = ids.split_off(ids.len() - n_test);
        Dataset::new(self.corpus, emb, ids, test)
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_sentences == 0 {
            return Err(Error::config("n_sentences", "must be positive"));
        }
        if self.classes.is_empty() {
            return Err(Error::config("classes", "need at least one entity class"));
        }
        if self.dim < 2 {
            return Err(Error::config("dim", "must be at least 2"));
        }
        for (k, v) in [
            ("entity_rate", self.entity_rate),
            ("empty_sentence_rate", self.empty_sentence_rate),
            ("entity_title_rate", self.entity_title_rate),
            ("outside_title_rate", self.outside_title_rate),
            ("ambiguous_rate", self.ambiguous_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(k, "must lie in [0, 1]"));
            }
        }
        if self.max_entity_length == 0 || self.max_length == 0 || self.vocab_per_class == 0 {
            return Err(Error::config("max_entity_length", "lengths must be positive"));
        }
        Ok(())
    }

    /// Class means: `O` at the origin, entity classes on a small simplex
    /// offset `entity_separation` along the first axis.
    pub fn generator(&self, seed: u64) -> GeneratorSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let dim = self.dim;
        let mut means = Vec::new();
        // Random unit directions orthogonal to axis 0, scaled so pairwise
        // distances are close to `class_separation`.
        for _ in &self.classes {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            v[0] = 0.0;
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let r = self.class_separation / std::f64::consts::SQRT_2;
            let mut m: Vec<f64> = v.iter().map(|x| x / norm * r * self.noise).collect();
            m[0] = self.entity_separation * self.noise;
            means.push(m);
        }
        GeneratorSpec {
            outside_mean: vec![0.0; dim],
            class_means: means,
            noise: self.noise,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<SyntheticData> {
        self.validate()?;
        let scheme = LabelScheme::new(self.classes.iter().cloned())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lengths = Normal::new(self.length_mean, self.length_sd.max(0.0))
            .map_err(|e| Error::config("length_sd", e.to_string()))?;
        let nv = self.vocab_per_class;
        let outside_vocab: Vec<String> = (0..4 * nv).map(|i| word("", i)).collect();
        let shared_vocab: Vec<String> = (0..nv).map(|i| word("am", i)).collect();
        let class_vocab: Vec<Vec<String>> = (0..self.classes.len())
            .map(|c| (0..nv).map(|i| word(&format!("{}", (b'b' + c as u8) as char), i)).collect())
            .collect();

        let mut sentences = Vec::with_capacity(self.n_sentences);
        for _ in 0..self.n_sentences {
            let len = (lengths.sample(&mut rng).round() as i64).clamp(1, self.max_length as i64) as usize;
            let empty = rng.random::<f64>() < self.empty_sentence_rate;
            let mut tags = vec![OUTSIDE; len];
            let mut i = 0;
            while i < len {
                if !empty && rng.random::<f64>() < self.entity_rate {
                    let c = rng.random_range(0..self.classes.len());
                    let el = rng.random_range(1..=self.max_entity_length).min(len - i);
                    tags[i] = scheme.begin(c);
                    for t in tags.iter_mut().skip(i + 1).take(el - 1) {
                        *t = scheme.inside(c);
                    }
                    i += el + 1;
                } else {
                    i += 1;
                }
            }
            let tokens = tags
                .iter()
                .map(|&tag| {
                    let class = scheme.class_of(tag);
                    let base = if rng.random::<f64>() < self.ambiguous_rate {
                        shared_vocab[rng.random_range(0..nv)].clone()
                    } else {
                        match class {
                            Some(c) => class_vocab[c][rng.random_range(0..nv)].clone(),
                            None => outside_vocab[rng.random_range(0..4 * nv)].clone(),
                        }
                    };
                    let p_title = if class.is_some() {
                        self.entity_title_rate
                    } else {
                        self.outside_title_rate
                    };
                    let surface = if rng.random::<f64>() < p_title {
                        capitalize(&base)
                    } else {
                        base
                    };
                    let pos = self.with_pos.then(|| if class.is_some() { "NNP" } else { "NN" }.to_string());
                    RawToken { surface, pos, tag }
                })
                .collect();
            sentences.push(tokens);
        }
        let corpus = Corpus::from_tagged(scheme, self.with_pos, sentences)?;
        Ok(SyntheticData {
            corpus,
            generator: self.generator(seed),
        })
    }
}
