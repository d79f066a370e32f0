//! Likely-positive token detection.
//!
//! Tokens are reduced to 2-D with label-aware UMAP, clustered with HDBSCAN,
//! and everything outside the largest cluster is predicted positive. The
//! tokens with the highest GLOSH outlier scores are added on top:
//! `P' = P ∪ T`.

pub mod hdbscan;
pub mod umap;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TagId, OUTSIDE};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scoring::TokenSet;

pub use hdbscan::{hdbscan, ClusterAssignment, CondensedEdge, HdbscanParams, HdbscanResult};
pub use umap::{find_ab_params, knn_graph, umap_embed, KnnGraph, Points, UmapParams, UNLABELED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierScope {
    /// Top outliers over all tokens.
    Overall,
    /// Top outliers among members of the largest cluster only.
    LargestCluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositiveIdParams {
    pub umap: UmapParams,
    /// `None` uses `max(15, 0.002 n)`.
    pub min_cluster_size: Option<usize>,
    /// `None` uses the minimum cluster size.
    pub min_samples: Option<usize>,
    pub outlier_fraction: f64,
    pub outlier_scope: OutlierScope,
    /// Count HDBSCAN noise points as predicted positives.
    pub noise_is_positive: bool,
    /// Feed labels of annotated tokens into the reduction.
    pub supervised: bool,
    /// Recompute the reduction every iteration; when false the first
    /// (unsupervised) result is reused.
    pub recompute_each_iteration: bool,
}

impl Default for PositiveIdParams {
    fn default() -> Self {
        Self {
            umap: UmapParams::default(),
            min_cluster_size: None,
            min_samples: None,
            outlier_fraction: 0.01,
            outlier_scope: OutlierScope::Overall,
            noise_is_positive: false,
            supervised: true,
            recompute_each_iteration: true,
        }
    }
}

impl PositiveIdParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(Error::config("outlier_fraction", "must lie in [0, 1]"));
        }
        if self.umap.n_neighbors < 2 {
            return Err(Error::config("n_neighbors", "must be at least 2"));
        }
        Ok(())
    }

    pub fn hdbscan_params(&self, n: usize) -> HdbscanParams {
        let mcs = self
            .min_cluster_size
            .unwrap_or_else(|| 15.max((0.002 * n as f64).round() as usize));
        HdbscanParams {
            min_cluster_size: mcs,
            min_samples: self.min_samples.unwrap_or(mcs),
        }
    }
}

/// `P`, `T` and `P' = P ∪ T` over pipeline-local token positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveSet {
    /// Corpus-global index of each pipeline position.
    tokens: Vec<usize>,
    /// Sorted pipeline positions.
    p: Vec<usize>,
    t: Vec<usize>,
    p_prime: Vec<usize>,
    /// Membership in `P'` by corpus-global token index.
    mask: Vec<bool>,
    pub largest_cluster: Option<usize>,
    /// No cluster was found, so `P' = T`.
    pub no_clusters: bool,
    /// Several clusters shared the largest size.
    pub largest_tied: bool,
}

impl PositiveSet {
    pub fn p(&self) -> &[usize] {
        &self.p
    }

    pub fn t(&self) -> &[usize] {
        &self.t
    }

    /// Pipeline positions in `P'`.
    pub fn p_prime(&self) -> &[usize] {
        &self.p_prime
    }

    pub fn len(&self) -> usize {
        self.p_prime.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_prime.is_empty()
    }

    /// Corpus-global indices in `P'`, ascending.
    pub fn global_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.p_prime.iter().map(|&i| self.tokens[i]).collect();
        v.sort_unstable();
        v
    }

    /// Membership by pipeline position.
    pub fn contains_position(&self, i: usize) -> bool {
        self.mask[self.tokens[i]]
    }
}

impl TokenSet for PositiveSet {
    fn contains_token(&self, global_index: usize) -> bool {
        self.mask.get(global_index).copied().unwrap_or(false)
    }
}

/// Applies the largest-cluster-negative rule and adds the top outliers.
/// `tokens` maps pipeline positions to corpus-global indices.
pub fn build_positive_set(
    assignment: &ClusterAssignment,
    outlier_scores: &[f64],
    tokens: &[usize],
    outlier_fraction: f64,
    scope: OutlierScope,
    noise_is_positive: bool,
) -> Result<PositiveSet> {
    let n = assignment.labels.len();
    if outlier_scores.len() != n || tokens.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: outlier_scores.len().min(tokens.len()),
        });
    }
    let largest = assignment.largest();
    let largest_tied = assignment.largest_is_tied();
    if largest_tied {
        tracing::info!(cluster = ?largest, "largest cluster size tied; lower label taken as negative");
    }
    let p: Vec<usize> = (0..n)
        .filter(|&i| match assignment.labels[i] {
            Some(c) => Some(c) != largest,
            None => noise_is_positive,
        })
        .collect();
    let t_size = (outlier_fraction * n as f64).ceil() as usize;
    let mut pool: Vec<usize> = match scope {
        OutlierScope::Overall => (0..n).collect(),
        OutlierScope::LargestCluster => (0..n)
            .filter(|&i| largest.is_some() && assignment.labels[i] == largest)
            .collect(),
    };
    pool.sort_by(|&a, &b| outlier_scores[b].total_cmp(&outlier_scores[a]).then(a.cmp(&b)));
    pool.truncate(t_size);
    let mut t = pool;
    t.sort_unstable();
    let mut p_prime: Vec<usize> = p.iter().chain(&t).copied().collect();
    p_prime.sort_unstable();
    p_prime.dedup();
    let n_global = tokens.iter().max().map_or(0, |m| m + 1);
    let mut mask = vec![false; n_global];
    for &i in &p_prime {
        mask[tokens[i]] = true;
    }
    Ok(PositiveSet {
        tokens: tokens.to_vec(),
        p,
        t,
        p_prime,
        mask,
        largest_cluster: largest,
        no_clusters: assignment.n_clusters() == 0,
        largest_tied,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveSetMetrics {
    /// Fraction of predicted-negative tokens that are gold `O`.
    pub precision_neg: f64,
    pub recall_pos: f64,
    pub precision_pos: f64,
    pub f1: f64,
}

/// Scores `P'` against gold tags given per pipeline position. Empty
/// denominators count as perfect when there is nothing to find and as zero
/// otherwise.
pub fn positive_set_metrics(in_p_prime: &[bool], gold: &[TagId]) -> PositiveSetMetrics {
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&pred, &g) in in_p_prime.iter().zip(gold) {
        match (pred, g != OUTSIDE) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |num: usize, den: usize, empty: f64| {
        if den == 0 {
            empty
        } else {
            num as f64 / den as f64
        }
    };
    let n_gold_pos = tp + fneg;
    let recall_pos = ratio(tp, n_gold_pos, 1.0);
    let precision_pos = ratio(tp, tp + fp, if n_gold_pos == 0 { 1.0 } else { 0.0 });
    let precision_neg = ratio(tn, tn + fneg, if tn + fp == 0 { 1.0 } else { 0.0 });
    let f1 = if precision_pos + recall_pos > 0.0 {
        2.0 * precision_pos * recall_pos / (precision_pos + recall_pos)
    } else {
        0.0
    };
    PositiveSetMetrics {
        precision_neg,
        recall_pos,
        precision_pos,
        f1,
    }
}

/// Everything one pipeline run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveIdRun {
    pub seed: u64,
    pub coords: Vec<[f64; 2]>,
    pub clusters: ClusterAssignment,
    pub outlier_scores: Vec<f64>,
    pub positive: PositiveSet,
    pub n_labeled: usize,
}

impl PositiveIdRun {
    /// Per-token diagnostic CSV:
    /// `token,x,y,cluster,outlier_score,in_p_prime` with an empty cluster
    /// for noise.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["token", "x", "y", "cluster", "outlier_score", "in_p_prime"])?;
        for (i, c) in self.coords.iter().enumerate() {
            w.write_record([
                self.positive.tokens[i].to_string(),
                c[0].to_string(),
                c[1].to_string(),
                self.clusters.labels[i].map_or(String::new(), |l| l.to_string()),
                self.outlier_scores[i].to_string(),
                (self.positive.contains_position(i) as u8).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn metrics(&self, corpus: &Corpus) -> PositiveSetMetrics {
        let gold: Vec<TagId> = corpus.tokens().map(|t| t.gold).collect();
        let g: Vec<TagId> = self.positive.tokens.iter().map(|&i| gold[i]).collect();
        let pred: Vec<bool> = (0..g.len()).map(|i| self.positive.contains_position(i)).collect();
        positive_set_metrics(&pred, &g)
    }
}

/// Reduction inputs fixed for an experiment: the participating tokens, their
/// embedding rows and the kNN graph, computed once.
#[derive(Debug, Clone)]
pub struct PositivePipeline {
    tokens: Vec<usize>,
    data: Vec<f32>,
    dim: usize,
    knn: KnnGraph,
    params: PositiveIdParams,
}

impl PositivePipeline {
    /// `tokens` are corpus-global indices (typically every token of the
    /// training split).
    pub fn new(emb: &EmbeddingMatrix, tokens: Vec<usize>, params: PositiveIdParams) -> Result<Self> {
        params.validate()?;
        let dim = emb.dim();
        let mut data = Vec::with_capacity(tokens.len() * dim);
        for &t in &tokens {
            data.extend_from_slice(emb.get(t).ok_or(Error::MissingEmbedding(t))?);
        }
        let knn = knn_graph(Points { data: &data, dim }, params.umap.n_neighbors)?;
        Ok(Self {
            tokens,
            data,
            dim,
            knn,
            params,
        })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn params(&self) -> &PositiveIdParams {
        &self.params
    }

    /// Runs reduction, clustering and selection. `labels` maps a
    /// corpus-global token index to its supervision class, if annotated.
    pub fn run(&self, labels: &dyn Fn(usize) -> Option<i32>, seed: u64) -> Result<PositiveIdRun> {
        let sup: Vec<i32> = self
            .tokens
            .iter()
            .map(|&t| if self.params.supervised { labels(t).unwrap_or(UNLABELED) } else { UNLABELED })
            .collect();
        let n_labeled = sup.iter().filter(|&&l| l != UNLABELED).count();
        let coords = umap_embed(
            Points { data: &self.data, dim: self.dim },
            &self.knn,
            Some(&sup),
            &self.params.umap,
            seed,
        )?;
        let hp = self.params.hdbscan_params(coords.len());
        let clustered = hdbscan(&coords, &hp)?;
        let positive = build_positive_set(
            &clustered.assignment,
            &clustered.outlier_scores,
            &self.tokens,
            self.params.outlier_fraction,
            self.params.outlier_scope,
            self.params.noise_is_positive,
        )?;
        if positive.no_clusters {
            tracing::warn!("no clusters found; positive set holds outliers only");
        }
        Ok(PositiveIdRun {
            seed,
            coords,
            clusters: clustered.assignment,
            outlier_scores: clustered.outlier_scores,
            positive,
            n_labeled,
        })
    }
}

/// Supervision class of a tag: 0 for `O`, `c + 1` for entity class `c`.
pub fn supervision_class(scheme: &crate::corpus::LabelScheme, tag: TagId) -> i32 {
    scheme.class_of(tag).map_or(0, |c| c as i32 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assignment(sizes: &[usize]) -> ClusterAssignment {
        let mut labels = Vec::new();
        for (c, &s) in sizes.iter().enumerate() {
            labels.extend(std::iter::repeat_n(Some(c), s));
        }
        ClusterAssignment {
            labels,
            sizes: sizes.to_vec(),
            n_noise: 0,
            n_candidate_clusters: sizes.len(),
            degenerate: false,
        }
    }

    #[test]
    fn set_arithmetic() {
        let a = assignment(&[900, 50, 50]);
        // Outliers only inside the big cluster, so no overlap with P.
        let scores: Vec<f64> = (0..1000).map(|i| if i < 900 { i as f64 / 900.0 } else { 0.0 }).collect();
        let tokens: Vec<usize> = (0..1000).collect();
        let s = build_positive_set(&a, &scores, &tokens, 0.01, OutlierScope::Overall, false).unwrap();
        assert_eq!(s.p().len(), 100);
        assert_eq!(s.t().len(), 10);
        assert_eq!(s.len(), 110);
        assert_eq!(s.largest_cluster, Some(0));
    }

    #[test]
    fn single_cluster_gives_outliers_only() {
        let a = assignment(&[200]);
        let scores: Vec<f64> = (0..200).map(|i| (i % 7) as f64 / 7.0).collect();
        let tokens: Vec<usize> = (0..200).collect();
        let s = build_positive_set(&a, &scores, &tokens, 0.01, OutlierScope::Overall, false).unwrap();
        assert!(s.p().is_empty());
        assert_eq!(s.p_prime(), s.t());
        assert_eq!(s.t().len(), 2);
        // Ties on the top score go to the lowest indices.
        assert_eq!(s.t(), &[6, 13]);
    }

    #[test]
    fn outlier_fraction_growth_never_shrinks() {
        let a = assignment(&[80, 20]);
        let scores: Vec<f64> = (0..100).map(|i| ((i * 31) % 100) as f64 / 100.0).collect();
        let tokens: Vec<usize> = (0..100).collect();
        let mut prev = 0;
        for f in [0.0, 0.01, 0.05, 0.2, 1.0] {
            let s = build_positive_set(&a, &scores, &tokens, f, OutlierScope::Overall, false).unwrap();
            assert!(s.len() >= prev);
            prev = s.len();
        }
        assert_eq!(prev, 100);
    }

    #[test]
    fn metrics_edge_cases() {
        let gold = [0, 1, 2, 0];
        let exact = positive_set_metrics(&[false, true, true, false], &gold);
        assert_eq!((exact.precision_neg, exact.recall_pos, exact.precision_pos, exact.f1), (1.0, 1.0, 1.0, 1.0));
        let none = positive_set_metrics(&[false; 4], &gold);
        assert_eq!(none.recall_pos, 0.0);
        assert_eq!(none.precision_neg, 0.5);
    }

    #[test]
    fn global_mask_uses_token_map() {
        let a = assignment(&[3, 1]);
        let tokens = vec![10, 11, 12, 40];
        let s = build_positive_set(&a, &[0.0; 4], &tokens, 0.0, OutlierScope::Overall, false).unwrap();
        assert!(s.contains_token(40));
        assert!(!s.contains_token(10));
        assert!(!s.contains_token(1000));
        assert_eq!(s.global_indices(), vec![40]);
    }
}
