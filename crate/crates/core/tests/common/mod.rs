#![allow(dead_code)]

use std::sync::Arc;

use alner::al::Dataset;
use alner::corpus::{Corpus, LabelScheme, RawToken, TagId};
use alner::crf::{objective_and_gradient, ChainPotentials, CrfModel, Featurizer, LabeledRef, SentenceFeatures};
use alner::embedding::EmbeddingMatrix;
use alner::synthetic::SyntheticSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Everything exhaustive enumeration knows about one chain.
pub struct Enumerated {
    pub log_z: f64,
    /// `n x m`.
    pub unary: Vec<f64>,
    /// `(n - 1) x m x m`.
    pub pairwise: Vec<f64>,
    pub best: Vec<TagId>,
    pub best_score: f64,
}

fn sequences(n: usize, m: usize) -> impl Iterator<Item = Vec<TagId>> {
    (0..m.pow(n as u32)).map(move |mut code| {
        let mut y = vec![0; n];
        for slot in y.iter_mut().rev() {
            *slot = code % m;
            code /= m;
        }
        y
    })
}

fn score(state: &[f64], trans: &[f64], m: usize, y: &[TagId]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        s += state[i * m + y[i]];
        if i > 0 {
            s += trans[y[i - 1] * m + y[i]];
        }
    }
    s
}

/// Sums over all `m^n` tag sequences. Ties in the best path go to the
/// lexicographically smallest sequence.
pub fn enumerate(n: usize, m: usize, state: &[f64], trans: &[f64]) -> Enumerated {
    let scores: Vec<(Vec<TagId>, f64)> = sequences(n, m).map(|y| {
        let s = score(state, trans, m, &y);
        (y, s)
    }).collect();
    let max = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|(_, s)| (s - max).exp()).sum();
    let log_z = max + z.ln();
    let mut unary = vec![0.0; n * m];
    let mut pairwise = vec![0.0; n.saturating_sub(1) * m * m];
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for (y, s) in &scores {
        let p = (s - log_z).exp();
        for i in 0..n {
            unary[i * m + y[i]] += p;
            if i > 0 {
                pairwise[((i - 1) * m + y[i - 1]) * m + y[i]] += p;
            }
        }
        if *s > best.1 {
            best = (y.clone(), *s);
        }
    }
    Enumerated {
        log_z,
        unary,
        pairwise,
        best: best.0,
        best_score: best.1,
    }
}

pub fn potentials<'a>(n: usize, m: usize, state: &'a [f64], trans: &'a [f64]) -> ChainPotentials<'a> {
    ChainPotentials { n, m, state, trans }
}

/// Random corpus of short sentences with the given classes; tokens are drawn
/// from a small vocabulary so attributes repeat.
pub fn random_corpus(rng: &mut ChaCha8Rng, n_sentences: usize, max_len: usize, classes: &[&str], has_pos: bool) -> Corpus {
    let scheme = LabelScheme::new(classes.iter().copied()).expect("scheme");
    let vocab = ["the", "Cat", "sat", "on", "Paris", "42", "mat", "IBM", "and", "Anna"];
    let pos = ["DT", "NN", "VB", "NNP"];
    let sentences = (0..n_sentences)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            (0..len)
                .map(|_| RawToken {
                    surface: vocab[rng.random_range(0..vocab.len())].to_string(),
                    pos: Some(pos[rng.random_range(0..pos.len())].to_string()),
                    tag: rng.random_range(0..scheme.num_tags()),
                })
                .collect()
        })
        .collect();
    Corpus::from_tagged(scheme, has_pos, sentences).expect("corpus")
}

pub fn random_embeddings(rng: &mut ChaCha8Rng, corpus: &Corpus, dim: usize) -> EmbeddingMatrix {
    let data = (0..corpus.n_tokens() * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    EmbeddingMatrix::new(dim, data, *corpus.manifest_hash()).expect("embeddings")
}

/// Encodes every sentence and builds a model over all registered attributes
/// with weights drawn from `U(-scale, scale)`.
pub fn random_model(
    rng: &mut ChaCha8Rng,
    corpus: &Corpus,
    emb: &EmbeddingMatrix,
    scale: f64,
) -> (Featurizer, Vec<SentenceFeatures>, CrfModel) {
    let mut f = Featurizer::new(corpus.has_pos(), emb.dim());
    let feats: Vec<SentenceFeatures> = corpus
        .sentences()
        .iter()
        .map(|s| f.encode(s, emb).expect("encode"))
        .collect();
    let ids: Vec<u32> = (0..f.registry().len() as u32).collect();
    let mut model = CrfModel::new(corpus.label_scheme().clone(), emb.dim(), f.registry(), &ids);
    let w = (0..model.weights().len()).map(|_| rng.random_range(-scale..scale)).collect();
    model.set_weights(w).expect("weights");
    (f, feats, model)
}

/// State scores recomputed from the fully expanded feature vectors and the
/// documented weight layout `[emb 3 x dim x M][attr R x M][trans M x M]`.
pub fn oracle_state_scores(f: &mut Featurizer, corpus: &Corpus, sid: usize, emb: &EmbeddingMatrix, model: &CrfModel) -> Vec<f64> {
    let m = model.num_tags();
    let dim = model.dim();
    let full = f.featurize(&corpus.sentences()[sid], emb).expect("featurize");
    let w = model.weights();
    let attr_off = 3 * dim * m;
    let mut out = vec![0.0; full.len() * m];
    for (i, fv) in full.iter().enumerate() {
        for &(id, v) in fv {
            let name = f.registry().name(id).to_string();
            let (prefix, rest) = name.split_once(':').expect("prefixed attribute");
            let base = match rest.strip_prefix('e').and_then(|d| d.parse::<usize>().ok()) {
                Some(d) => {
                    let slot = ["-1", "0", "+1"].iter().position(|p| *p == prefix).expect("slot");
                    (slot * dim + d) * m
                }
                None => match model.attributes().iter().position(|a| *a == name) {
                    Some(r) => attr_off + r * m,
                    None => continue,
                },
            };
            for y in 0..m {
                out[i * m + y] += v * w[base + y];
            }
        }
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small easy synthetic dataset for loop-level tests.
pub fn small_dataset(n_sentences: usize, seed: u64) -> Arc<Dataset> {
    let spec = SyntheticSpec {
        n_sentences,
        ..Default::default()
    };
    Arc::new(spec.generate(seed).expect("generate").into_dataset(seed, 0.25).expect("dataset"))
}

/// Two-sided relative error with an absolute floor.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of the objective at c1 = 0. Returns the worst
/// relative error over all weights.
pub fn gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n_sent = r.random_range(1..=4);
    let classes: &[&str] = if r.random_bool(0.5) { &["A"] } else { &["A", "B"] };
    let has_pos = r.random_bool(0.5);
    let dim = r.random_range(1..=3);
    let corpus = random_corpus(&mut r, n_sent, 5, classes, has_pos);
    let emb = random_embeddings(&mut r, &corpus, dim);
    let (_, feats, model) = random_model(&mut r, &corpus, &emb, 0.5);
    let c2 = r.random_range(0.0..0.2);
    let tags: Vec<Vec<usize>> = corpus.sentences().iter().map(|s| s.gold_tags()).collect();
    let batch: Vec<LabeledRef<'_>> = feats
        .iter()
        .zip(&tags)
        .map(|(features, t)| LabeledRef { features, tags: t })
        .collect();
    let (_, grad) = objective_and_gradient(&model, &batch, &emb, 0.0, c2).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let w0 = model.weights().to_vec();
    let mut probe = model.clone();
    for k in 0..w0.len() {
        let mut w = w0.clone();
        w[k] = w0[k] + h;
        probe.set_weights(w.clone()).unwrap();
        let (fp, _) = objective_and_gradient(&probe, &batch, &emb, 0.0, c2).unwrap();
        w[k] = w0[k] - h;
        probe.set_weights(w).unwrap();
        let (fm, _) = objective_and_gradient(&probe, &batch, &emb, 0.0, c2).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max(rel_err(grad[k], fd));
    }
    worst
}
