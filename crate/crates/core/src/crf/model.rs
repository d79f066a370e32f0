use serde::{Deserialize, Serialize};

use super::features::{AttrId, FeatureRegistry, SentenceFeatures, NO_TOKEN};
use crate::corpus::LabelScheme;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

pub(crate) const NO_ROW: u32 = u32::MAX;

/// Linear-chain CRF weights.
///
/// The flat weight vector is laid out as
/// `[embedding state weights: 3 x dim x M][attribute state weights: R x M][transitions: M x M]`,
/// where `R` is the number of registered attributes and transitions are
/// indexed `[from][to]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfModel {
    pub(crate) scheme: LabelScheme,
    pub(crate) dim: usize,
    pub(crate) attributes: Vec<String>,
    #[serde(skip)]
    pub(crate) attr_rows: Vec<u32>,
    pub(crate) weights: Vec<f64>,
}

impl CrfModel {
    /// Zero-weight model over the given registered attributes.
    pub fn new(
        scheme: LabelScheme,
        dim: usize,
        registry: &FeatureRegistry,
        registered: &[AttrId],
    ) -> Self {
        let m = scheme.num_tags();
        let mut attr_rows = vec![NO_ROW; registry.len()];
        let mut attributes = Vec::with_capacity(registered.len());
        for &a in registered {
            if attr_rows[a as usize] == NO_ROW {
                attr_rows[a as usize] = attributes.len() as u32;
                attributes.push(registry.name(a).to_string());
            }
        }
        let n_weights = 3 * dim * m + attributes.len() * m + m * m;
        Self {
            scheme,
            dim,
            attributes,
            attr_rows,
            weights: vec![0.0; n_weights],
        }
    }

    /// Re-resolves attribute rows against a (possibly different) registry,
    /// e.g. after loading a model from disk.
    pub fn bind(&mut self, registry: &FeatureRegistry) {
        let mut rows = vec![NO_ROW; registry.len()];
        for (row, name) in self.attributes.iter().enumerate() {
            if let Some(id) = registry.lookup(name) {
                rows[id as usize] = row as u32;
            }
        }
        self.attr_rows = rows;
    }

    pub fn label_scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn num_tags(&self) -> usize {
        self.scheme.num_tags()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, w: Vec<f64>) -> Result<()> {
        if w.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("model weights".into()));
        }
        self.weights = w;
        Ok(())
    }

    pub(crate) fn attr_offset(&self) -> usize {
        3 * self.dim * self.num_tags()
    }

    pub(crate) fn trans_offset(&self) -> usize {
        self.attr_offset() + self.attributes.len() * self.num_tags()
    }

    pub fn transitions(&self) -> &[f64] {
        &self.weights[self.trans_offset()..]
    }

    pub(crate) fn row_of(&self, attr: AttrId) -> Option<usize> {
        match self.attr_rows.get(attr as usize) {
            Some(&r) if r != NO_ROW => Some(r as usize),
            _ => None,
        }
    }

    /// Per-position unnormalized log potentials, `n x M` row-major.
    pub fn state_scores(&self, feats: &SentenceFeatures, emb: &EmbeddingMatrix) -> Vec<f64> {
        state_scores_with(self, &self.weights, feats, emb)
    }
}

/// State scores under an arbitrary weight vector with the model's layout.
pub(crate) fn state_scores_with(
    model: &CrfModel,
    w: &[f64],
    feats: &SentenceFeatures,
    emb: &EmbeddingMatrix,
) -> Vec<f64> {
    let m = model.num_tags();
    let dim = model.dim;
    let n = feats.len();
    let attr_off = model.attr_offset();
    let mut scores = vec![0.0; n * m];
    for i in 0..n {
        let out = &mut scores[i * m..(i + 1) * m];
        for (slot, &tok) in feats.context[i].iter().enumerate() {
            if tok == NO_TOKEN {
                continue;
            }
            let row = emb.row(tok as usize);
            let base = slot * dim * m;
            for (d, &x) in row.iter().enumerate() {
                let x = x as f64;
                if x == 0.0 {
                    continue;
                }
                let ws = &w[base + d * m..base + (d + 1) * m];
                for (o, wy) in out.iter_mut().zip(ws) {
                    *o += x * wy;
                }
            }
        }
        for &(attr, v) in &feats.sparse[i] {
            if let Some(r) = model.row_of(attr) {
                let ws = &w[attr_off + r * m..attr_off + (r + 1) * m];
                for (o, wy) in out.iter_mut().zip(ws) {
                    *o += v as f64 * wy;
                }
            }
        }
    }
    scores
}
