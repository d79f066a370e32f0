//! Regularized conditional log-likelihood and its gradient.

use rayon::prelude::*;

use super::features::{SentenceFeatures, NO_TOKEN};
use super::inference::{lattice, ChainPotentials};
use super::model::{state_scores_with, CrfModel};
use crate::corpus::TagId;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// A featurized sentence with its (gold or acquired) tags.
#[derive(Debug, Clone, Copy)]
pub struct LabeledRef<'a> {
    pub features: &'a SentenceFeatures,
    pub tags: &'a [TagId],
}

/// Fixed block count so the reduction order, and therefore every bit of the
/// result, does not depend on the thread pool.
const BLOCKS: usize = 32;

/// `sum log p(y|x)` and its gradient (empirical minus expected feature
/// counts) under weights `w`. Masked-out weights get a zero gradient.
pub(crate) fn log_likelihood(
    model: &CrfModel,
    w: &[f64],
    batch: &[LabeledRef<'_>],
    emb: &EmbeddingMatrix,
) -> Result<(f64, Vec<f64>)> {
    let k = w.len();
    let block_len = batch.len().div_ceil(BLOCKS).max(1);
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(block_len)
        .map(|chunk| {
            let mut grad = vec![0.0; k];
            let mut ll = 0.0;
            for s in chunk {
                ll += accumulate_sentence(model, w, s, emb, &mut grad)?;
            }
            Ok((ll, grad))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; k];
    for p in parts {
        let (ll, g) = p?;
        total += ll;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    if !total.is_finite() {
        return Err(Error::Numerical("log-likelihood".into()));
    }
    Ok((total, grad))
}

fn accumulate_sentence(
    model: &CrfModel,
    w: &[f64],
    s: &LabeledRef<'_>,
    emb: &EmbeddingMatrix,
    grad: &mut [f64],
) -> Result<f64> {
    let m = model.num_tags();
    let n = s.features.len();
    if s.tags.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: s.tags.len(),
        });
    }
    let state = state_scores_with(model, w, s.features, emb);
    let trans = &w[model.trans_offset()..];
    let p = ChainPotentials {
        n,
        m,
        state: &state,
        trans,
    };
    let lat = lattice(&p)?;
    let ll = p.score(s.tags) - lat.log_z;

    let dim = model.dim;
    let attr_off = model.attr_offset();
    let trans_off = model.trans_offset();
    let mut resid = vec![0.0; m];
    for i in 0..n {
        for (y, r) in resid.iter_mut().enumerate() {
            *r = -(lat.alpha[i * m + y] + lat.beta[i * m + y] - lat.log_z).exp();
        }
        resid[s.tags[i]] += 1.0;

        for (slot, &tok) in s.features.context[i].iter().enumerate() {
            if tok == NO_TOKEN {
                continue;
            }
            let base = slot * dim * m;
            for (d, &x) in emb.row(tok as usize).iter().enumerate() {
                let x = x as f64;
                if x == 0.0 {
                    continue;
                }
                let g = &mut grad[base + d * m..base + (d + 1) * m];
                for (gy, r) in g.iter_mut().zip(&resid) {
                    *gy += x * r;
                }
            }
        }
        for &(attr, v) in &s.features.sparse[i] {
            if let Some(row) = model.row_of(attr) {
                let g = &mut grad[attr_off + row * m..attr_off + (row + 1) * m];
                for (gy, r) in g.iter_mut().zip(&resid) {
                    *gy += v as f64 * r;
                }
            }
        }
        if i > 0 {
            for a in 0..m {
                for b in 0..m {
                    let lp = lat.alpha[(i - 1) * m + a]
                        + trans[a * m + b]
                        + state[i * m + b]
                        + lat.beta[i * m + b]
                        - lat.log_z;
                    grad[trans_off + a * m + b] -= lp.exp();
                }
            }
            grad[trans_off + s.tags[i - 1] * m + s.tags[i]] += 1.0;
        }
    }
    Ok(ll)
}

/// `sum log p(y|x) - c1 |w|_1 - c2 |w|_2^2` and its (sub)gradient at the
/// model's current weights. The L1 subgradient uses `sign(0) = 0`.
pub fn objective_and_gradient(
    model: &CrfModel,
    batch: &[LabeledRef<'_>],
    emb: &EmbeddingMatrix,
    c1: f64,
    c2: f64,
) -> Result<(f64, Vec<f64>)> {
    let w = model.weights();
    let (ll, mut grad) = log_likelihood(model, w, batch, emb)?;
    let mut value = ll;
    for (g, &x) in grad.iter_mut().zip(w) {
        value -= c1 * x.abs() + c2 * x * x;
        *g -= c1 * x.signum() * (x != 0.0) as u8 as f64 + 2.0 * c2 * x;
    }
    Ok((value, grad))
}
