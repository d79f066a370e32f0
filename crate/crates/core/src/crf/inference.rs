//! Exact inference on a linear chain, in log space.

use serde::{Deserialize, Serialize};

use super::features::SentenceFeatures;
use super::model::CrfModel;
use crate::corpus::TagId;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Log potentials of one sentence: `state` is `n x m`, `trans` is `m x m`
/// indexed `[from * m + to]`.
#[derive(Debug, Clone, Copy)]
pub struct ChainPotentials<'a> {
    pub n: usize,
    pub m: usize,
    pub state: &'a [f64],
    pub trans: &'a [f64],
}

impl ChainPotentials<'_> {
    /// Unnormalized log score of a tag sequence.
    pub fn score(&self, tags: &[TagId]) -> f64 {
        let m = self.m;
        let mut s = 0.0;
        for (i, &y) in tags.iter().enumerate() {
            s += self.state[i * m + y];
            if i > 0 {
                s += self.trans[tags[i - 1] * m + y];
            }
        }
        s
    }
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) struct Lattice {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub log_z: f64,
}

pub(crate) fn lattice(p: &ChainPotentials<'_>) -> Result<Lattice> {
    let (n, m) = (p.n, p.m);
    let mut alpha = vec![0.0; n * m];
    let mut beta = vec![0.0; n * m];
    alpha[..m].copy_from_slice(&p.state[..m]);
    for i in 1..n {
        for y in 0..m {
            let prev = &alpha[(i - 1) * m..i * m];
            let lse = log_sum_exp((0..m).map(|yp| prev[yp] + p.trans[yp * m + y]));
            alpha[i * m + y] = p.state[i * m + y] + lse;
        }
    }
    for i in (0..n.saturating_sub(1)).rev() {
        for yp in 0..m {
            let lse = log_sum_exp(
                (0..m).map(|y| p.trans[yp * m + y] + p.state[(i + 1) * m + y] + beta[(i + 1) * m + y]),
            );
            beta[i * m + yp] = lse;
        }
    }
    let log_z = log_sum_exp(alpha[(n - 1) * m..].iter().copied());
    if !log_z.is_finite() {
        return Err(Error::Numerical("forward-backward".into()));
    }
    Ok(Lattice { alpha, beta, log_z })
}

/// Per-position and pairwise tag marginals of one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable {
    n: usize,
    m: usize,
    unary: Vec<f64>,
    /// `(n - 1) x m x m`; entry `[i - 1][a][b]` is `P(y_{i-1} = a, y_i = b | x)`.
    pairwise: Vec<f64>,
    log_z: f64,
}

impl MarginalTable {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_tags(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.unary[i * self.m..(i + 1) * self.m]
    }

    /// `P(y_{i-1} = a, y_i = b | x)` for `i >= 1`.
    pub fn pairwise(&self, i: usize, a: TagId, b: TagId) -> f64 {
        self.pairwise[((i - 1) * self.m + a) * self.m + b]
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// Builds a table from per-position distributions only (no pairwise
    /// information), e.g. for scoring tests.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let m = rows.first().map_or(0, Vec::len);
        Self {
            n: rows.len(),
            m,
            unary: rows.iter().flatten().copied().collect(),
            pairwise: Vec::new(),
            log_z: 0.0,
        }
    }
}

pub fn marginals_from_potentials(p: &ChainPotentials<'_>) -> Result<MarginalTable> {
    let lat = lattice(p)?;
    let (n, m) = (p.n, p.m);
    let mut unary = vec![0.0; n * m];
    for (i, u) in unary.iter_mut().enumerate() {
        *u = (lat.alpha[i] + lat.beta[i] - lat.log_z).exp();
    }
    let mut pairwise = vec![0.0; n.saturating_sub(1) * m * m];
    for i in 1..n {
        for a in 0..m {
            for b in 0..m {
                let lp = lat.alpha[(i - 1) * m + a]
                    + p.trans[a * m + b]
                    + p.state[i * m + b]
                    + lat.beta[i * m + b]
                    - lat.log_z;
                pairwise[((i - 1) * m + a) * m + b] = lp.exp();
            }
        }
    }
    Ok(MarginalTable {
        n,
        m,
        unary,
        pairwise,
        log_z: lat.log_z,
    })
}

/// Highest-scoring tag sequence and its unnormalized score. Ties go to the
/// lowest tag index.
pub fn best_path(p: &ChainPotentials<'_>) -> (Vec<TagId>, f64) {
    let (n, m) = (p.n, p.m);
    let mut delta = p.state[..m].to_vec();
    let mut back = vec![0usize; n * m];
    let mut next = vec![0.0; m];
    for i in 1..n {
        for y in 0..m {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for yp in 0..m {
                let v = delta[yp] + p.trans[yp * m + y];
                if v > best {
                    best = v;
                    arg = yp;
                }
            }
            next[y] = best + p.state[i * m + y];
            back[i * m + y] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    for y in 1..m {
        if delta[y] > delta[last] {
            last = y;
        }
    }
    let score = delta[last];
    let mut tags = vec![0; n];
    tags[n - 1] = last;
    for i in (1..n).rev() {
        tags[i - 1] = back[i * m + tags[i]];
    }
    (tags, score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViterbiResult {
    pub tags: Vec<TagId>,
    /// `log p(tags | x)`.
    pub log_prob: f64,
    /// `P(y_i = tags[i] | x)` per position.
    pub assigned_marginals: Vec<f64>,
}

pub fn viterbi_from_potentials(
    p: &ChainPotentials<'_>,
    marginals: &MarginalTable,
) -> ViterbiResult {
    let (tags, score) = best_path(p);
    let assigned_marginals = tags
        .iter()
        .enumerate()
        .map(|(i, &y)| marginals.row(i)[y])
        .collect();
    ViterbiResult {
        log_prob: (score - marginals.log_z()).min(0.0),
        tags,
        assigned_marginals,
    }
}

fn check_len(feats: &SentenceFeatures) -> Result<()> {
    if feats.is_empty() {
        return Err(Error::InvalidArgument("empty sentence".into()));
    }
    Ok(())
}

pub fn forward_backward(
    model: &CrfModel,
    feats: &SentenceFeatures,
    emb: &EmbeddingMatrix,
) -> Result<MarginalTable> {
    check_len(feats)?;
    let state = model.state_scores(feats, emb);
    marginals_from_potentials(&ChainPotentials {
        n: feats.len(),
        m: model.num_tags(),
        state: &state,
        trans: model.transitions(),
    })
}

pub fn viterbi(
    model: &CrfModel,
    feats: &SentenceFeatures,
    emb: &EmbeddingMatrix,
) -> Result<ViterbiResult> {
    Ok(decode(model, feats, emb)?.1)
}

/// Marginals and the Viterbi path from a single pass over the potentials.
pub fn decode(
    model: &CrfModel,
    feats: &SentenceFeatures,
    emb: &EmbeddingMatrix,
) -> Result<(MarginalTable, ViterbiResult)> {
    check_len(feats)?;
    let state = model.state_scores(feats, emb);
    let p = ChainPotentials {
        n: feats.len(),
        m: model.num_tags(),
        state: &state,
        trans: model.transitions(),
    };
    let marg = marginals_from_potentials(&p)?;
    let vit = viterbi_from_potentials(&p, &marg);
    Ok((marg, vit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_potentials_are_uniform() {
        let (n, m) = (4, 3);
        let state = vec![0.0; n * m];
        let trans = vec![0.0; m * m];
        let p = ChainPotentials { n, m, state: &state, trans: &trans };
        let t = marginals_from_potentials(&p).unwrap();
        for i in 0..n {
            for &v in t.row(i) {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
        let v = viterbi_from_potentials(&p, &t);
        assert_eq!(v.tags, vec![0; n]);
        assert!((v.log_prob - (-(n as f64) * (m as f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn single_position_is_softmax() {
        let state = [1.0, 2.0, -0.5];
        let trans = [0.3; 9];
        let p = ChainPotentials { n: 1, m: 3, state: &state, trans: &trans };
        let t = marginals_from_potentials(&p).unwrap();
        let z: f64 = state.iter().map(|s| s.exp()).sum();
        for (j, s) in state.iter().enumerate() {
            assert!((t.row(0)[j] - s.exp() / z).abs() < 1e-14);
        }
    }

    #[test]
    fn peaked_unaries_decode_per_position() {
        let state = [10.0, 0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0, 10.0];
        let trans = [0.0; 9];
        let p = ChainPotentials { n: 3, m: 3, state: &state, trans: &trans };
        assert_eq!(best_path(&p).0, vec![0, 1, 2]);
    }

    #[test]
    fn pairwise_sums_to_unary() {
        let state: Vec<f64> = (0..15).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect();
        let trans: Vec<f64> = (0..9).map(|i| ((i * 3) % 4) as f64 * 0.2 - 0.3).collect();
        let p = ChainPotentials { n: 5, m: 3, state: &state, trans: &trans };
        let t = marginals_from_potentials(&p).unwrap();
        for i in 1..5 {
            for b in 0..3 {
                let s: f64 = (0..3).map(|a| t.pairwise(i, a, b)).sum();
                assert!((s - t.row(i)[b]).abs() < 1e-12);
            }
        }
    }
}
