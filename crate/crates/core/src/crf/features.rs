//! Token featurization.
//!
//! Every position gets the same attribute template for the previous, current
//! and next token: the embedding components as real values, the POS tag (when
//! the corpus has one), the lower-cased surface, the last three and last two
//! characters, and title/digit/lower flags. Missing neighbours at sentence
//! edges fill their categorical slots with `__BOS__`/`__EOS__` sentinels and
//! their numeric slots with zeros, so the attribute count never changes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Token};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

pub type AttrId = u32;

/// `(attribute id, value)` pairs for one token position.
pub type FeatureVector = Vec<(AttrId, f64)>;

pub const NO_TOKEN: u32 = u32::MAX;

const OFFSETS: [(i32, &str); 3] = [(-1, "-1"), (0, "0"), (1, "+1")];

/// Session-global interner for attribute names.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct FeatureRegistry {
    names: Vec<String>,
    index: HashMap<String, AttrId>,
}

impl FeatureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> AttrId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as AttrId;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn lookup(&self, name: &str) -> Option<AttrId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: AttrId) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl From<Vec<String>> for FeatureRegistry {
    fn from(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as AttrId))
            .collect();
        Self { names, index }
    }
}

impl From<FeatureRegistry> for Vec<String> {
    fn from(r: FeatureRegistry) -> Self {
        r.names
    }
}

/// Compact features of one sentence: non-zero sparse attributes per position
/// plus the global token index of each context slot, whose embedding rows
/// supply the dense part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceFeatures {
    pub sparse: Vec<Vec<(AttrId, f32)>>,
    /// `[prev, current, next]` global token indices, [`NO_TOKEN`] at edges.
    pub context: Vec<[u32; 3]>,
}

impl SentenceFeatures {
    pub fn len(&self) -> usize {
        self.context.len()
    }

    pub fn is_empty(&self) -> bool {
        self.context.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Featurizer {
    registry: FeatureRegistry,
    has_pos: bool,
    dim: usize,
}

impl Featurizer {
    pub fn new(has_pos: bool, dim: usize) -> Self {
        Self {
            registry: FeatureRegistry::new(),
            has_pos,
            dim,
        }
    }

    pub fn registry(&self) -> &FeatureRegistry {
        &self.registry
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_pos(&self) -> bool {
        self.has_pos
    }

    /// Attribute values per position, `(dim + 7) * 3` with POS and
    /// `(dim + 6) * 3` without.
    pub fn values_per_position(&self) -> usize {
        (self.dim + if self.has_pos { 7 } else { 6 }) * 3
    }

    pub fn encode(
        &mut self,
        sentence: &Sentence,
        embeddings: &EmbeddingMatrix,
    ) -> Result<SentenceFeatures> {
        self.check_embeddings(sentence, embeddings)?;
        let n = sentence.n_tokens();
        let mut sparse = Vec::with_capacity(n);
        let mut context = Vec::with_capacity(n);
        for i in 0..n {
            let mut attrs = Vec::with_capacity(18);
            let mut ctx = [NO_TOKEN; 3];
            for (slot, (offset, prefix)) in OFFSETS.iter().enumerate() {
                let j = i as i64 + *offset as i64;
                let tok = (0..n as i64).contains(&j).then(|| &sentence.tokens[j as usize]);
                if let Some(t) = tok {
                    ctx[slot] = t.global_index as u32;
                }
                for (name, value) in lexical_attributes(tok, *offset, prefix, self.has_pos) {
                    if value != 0.0 {
                        attrs.push((self.registry.intern(&name), value as f32));
                    }
                }
            }
            sparse.push(attrs);
            context.push(ctx);
        }
        Ok(SentenceFeatures { sparse, context })
    }

    /// Fully expanded feature vectors, embedding components included, each
    /// with exactly [`Self::values_per_position`] entries.
    pub fn featurize(
        &mut self,
        sentence: &Sentence,
        embeddings: &EmbeddingMatrix,
    ) -> Result<Vec<FeatureVector>> {
        self.check_embeddings(sentence, embeddings)?;
        let n = sentence.n_tokens();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut fv = Vec::with_capacity(self.values_per_position());
            for (offset, prefix) in OFFSETS {
                let j = i as i64 + offset as i64;
                let tok = (0..n as i64).contains(&j).then(|| &sentence.tokens[j as usize]);
                for d in 0..self.dim {
                    let id = self.registry.intern(&format!("{prefix}:e{d}"));
                    let v = tok.map_or(0.0, |t| embeddings.row(t.global_index)[d] as f64);
                    fv.push((id, v));
                }
                for (name, value) in lexical_attributes(tok, offset, prefix, self.has_pos) {
                    fv.push((self.registry.intern(&name), value));
                }
            }
            out.push(fv);
        }
        Ok(out)
    }

    fn check_embeddings(&self, sentence: &Sentence, embeddings: &EmbeddingMatrix) -> Result<()> {
        if embeddings.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: embeddings.dim(),
            });
        }
        if let Some(t) = sentence
            .tokens
            .iter()
            .find(|t| t.global_index >= embeddings.n_rows())
        {
            return Err(Error::MissingEmbedding(t.global_index));
        }
        Ok(())
    }
}

fn lexical_attributes(
    tok: Option<&Token>,
    offset: i32,
    prefix: &str,
    has_pos: bool,
) -> Vec<(String, f64)> {
    let mut out = Vec::with_capacity(7);
    match tok {
        Some(t) => {
            if has_pos {
                let pos = t.pos.as_deref().unwrap_or("_");
                out.push((format!("{prefix}:pos={pos}"), 1.0));
            }
            let lower = t.surface.to_lowercase();
            out.push((format!("{prefix}:lower={lower}"), 1.0));
            out.push((format!("{prefix}:suf3={}", suffix(&t.surface, 3)), 1.0));
            out.push((format!("{prefix}:suf2={}", suffix(&t.surface, 2)), 1.0));
            out.push((format!("{prefix}:title"), flag(is_title(&t.surface))));
            out.push((format!("{prefix}:digit"), flag(is_digit(&t.surface))));
            out.push((format!("{prefix}:islower"), flag(is_lower(&t.surface))));
        }
        None => {
            let sentinel = if offset < 0 { "__BOS__" } else { "__EOS__" };
            if has_pos {
                out.push((format!("{prefix}:pos={sentinel}"), 1.0));
            }
            out.push((format!("{prefix}:lower={sentinel}"), 1.0));
            out.push((format!("{prefix}:suf3={sentinel}"), 1.0));
            out.push((format!("{prefix}:suf2={sentinel}"), 1.0));
            out.push((format!("{prefix}:title"), 0.0));
            out.push((format!("{prefix}:digit"), 0.0));
            out.push((format!("{prefix}:islower"), 0.0));
        }
    }
    out
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn suffix(s: &str, k: usize) -> &str {
    match s.char_indices().rev().nth(k.saturating_sub(1)) {
        Some((i, _)) => &s[i..],
        None => s,
    }
}

/// Uppercase letters only after uncased characters, lowercase only after
/// cased ones, and at least one cased character.
pub fn is_title(s: &str) -> bool {
    let mut cased = false;
    let mut prev_cased = false;
    for c in s.chars() {
        if c.is_uppercase() {
            if prev_cased {
                return false;
            }
            prev_cased = true;
            cased = true;
        } else if c.is_lowercase() {
            if !prev_cased {
                return false;
            }
            prev_cased = true;
            cased = true;
        } else {
            prev_cased = false;
        }
    }
    cased
}

pub fn is_digit(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_digit())
}

pub fn is_lower(s: &str) -> bool {
    let mut cased = false;
    for c in s.chars() {
        if c.is_uppercase() {
            return false;
        }
        if c.is_lowercase() {
            cased = true;
        }
    }
    cased
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, LabelScheme, RawToken, OUTSIDE};

    fn corpus(has_pos: bool) -> Corpus {
        let scheme = LabelScheme::new(["X"]).unwrap();
        let words = ["The", "Cat", "sat", "42"];
        let toks = words
            .iter()
            .map(|w| RawToken {
                surface: w.to_string(),
                pos: Some("NN".into()),
                tag: OUTSIDE,
            })
            .collect();
        Corpus::from_tagged(scheme, has_pos, vec![toks]).unwrap()
    }

    fn emb(c: &Corpus, dim: usize) -> EmbeddingMatrix {
        let data = (0..c.n_tokens() * dim).map(|i| i as f32 + 1.0).collect();
        EmbeddingMatrix::new(dim, data, *c.manifest_hash()).unwrap()
    }

    #[test]
    fn value_counts_with_and_without_pos() {
        for (has_pos, expected) in [(true, 33), (false, 30)] {
            let c = corpus(has_pos);
            let e = emb(&c, 4);
            let mut f = Featurizer::new(has_pos, 4);
            let fv = f.featurize(&c.sentences()[0], &e).unwrap();
            assert_eq!(f.values_per_position(), expected);
            for pos in &fv {
                assert_eq!(pos.len(), expected);
                let mut ids: Vec<_> = pos.iter().map(|(id, _)| *id).collect();
                ids.sort();
                ids.dedup();
                assert_eq!(ids.len(), expected, "feature ids must be unique");
            }
        }
    }

    #[test]
    fn first_token_has_bos_sentinels() {
        let c = corpus(true);
        let e = emb(&c, 4);
        let mut f = Featurizer::new(true, 4);
        let fv = f.featurize(&c.sentences()[0], &e).unwrap();
        let names: Vec<&str> = fv[0].iter().map(|(id, _)| f.registry().name(*id)).collect();
        assert!(names.contains(&"-1:lower=__BOS__"));
        assert!(names.contains(&"-1:pos=__BOS__"));
        let last: Vec<&str> = fv[3].iter().map(|(id, _)| f.registry().name(*id)).collect();
        assert!(last.contains(&"+1:suf3=__EOS__"));
        let prev_emb = fv[0].iter().find(|(id, _)| f.registry().name(*id) == "-1:e0").unwrap();
        assert_eq!(prev_emb.1, 0.0);
    }

    #[test]
    fn compact_encoding_matches_expansion() {
        let c = corpus(true);
        let e = emb(&c, 2);
        let mut f = Featurizer::new(true, 2);
        let enc = f.encode(&c.sentences()[0], &e).unwrap();
        assert_eq!(enc.context[0], [NO_TOKEN, 0, 1]);
        assert_eq!(enc.context[3], [2, 3, NO_TOKEN]);
        let full = f.featurize(&c.sentences()[0], &e).unwrap();
        for (i, pos) in full.iter().enumerate() {
            let lexical: Vec<(AttrId, f32)> = pos
                .iter()
                .filter(|(id, v)| !f.registry().name(*id).contains(":e") && *v != 0.0)
                .map(|(id, v)| (*id, *v as f32))
                .collect();
            assert_eq!(lexical, enc.sparse[i]);
        }
    }

    #[test]
    fn missing_rows_are_reported() {
        let c = corpus(false);
        let e = EmbeddingMatrix::new(2, vec![0.0; 4], [0; 32]).unwrap();
        let mut f = Featurizer::new(false, 2);
        assert!(matches!(
            f.encode(&c.sentences()[0], &e),
            Err(Error::MissingEmbedding(2))
        ));
    }

    #[test]
    fn string_predicates() {
        assert!(is_title("Cat") && is_title("Jean-Luc") && !is_title("CAT") && !is_title("42"));
        assert!(is_digit("2024") && !is_digit("3.5") && !is_digit(""));
        assert!(is_lower("cat") && is_lower("e-mail") && !is_lower("Cat") && !is_lower("42"));
        assert_eq!(suffix("inhibitors:", 3), "rs:");
        assert_eq!(suffix("a", 3), "a");
        assert_eq!(suffix("naïve", 2), "ve");
    }
}
