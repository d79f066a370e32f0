use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::al::{AlConfig, Dataset};
use crate::corpus::{load_conll_files, split_by_fractions, split_from_files, ColumnLayout, Corpus, Split};
use crate::embedding::{fit_pca, load_embeddings, transform, EmbeddingMatrix, PcaTarget};
use crate::error::{Error, Result};
use crate::scoring::Strategy;
use crate::synthetic::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// Column files, concatenated in order.
    Conll {
        files: Vec<PathBuf>,
        #[serde(default = "default_layout")]
        layout: ColumnLayout,
    },
    /// Generated corpus; embeddings are generated with it.
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
        #[serde(default)]
        seed: u64,
    },
}

fn default_layout() -> ColumnLayout {
    ColumnLayout::CONLL03
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSource {
    pub path: PathBuf,
    /// Reduce with PCA fitted on the whole matrix before use.
    #[serde(default)]
    pub pca: Option<PcaTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitSpec {
    Fractions {
        train: f64,
        validation: f64,
        test: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Files of newline-separated sentence ids.
    Files {
        train: PathBuf,
        #[serde(default)]
        validation: Option<PathBuf>,
        test: PathBuf,
    },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
            seed: 0,
        }
    }
}

/// An experiment file: where the data comes from, how it is split, how the
/// sessions run, and where results go. Relative paths resolve against the
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset name, used as the registration id by the HTTP service.
    #[serde(default = "default_name")]
    pub name: String,
    pub corpus: CorpusSource,
    #[serde(default)]
    pub embeddings: Option<EmbeddingSource>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub al: AlConfig,
    /// Strategies to run, each into its own subdirectory. Empty means the
    /// single `al.strategy`.
    #[serde(default)]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_name() -> String {
    "default".into()
}

impl ExperimentConfig {
    /// Parses and validates; errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let key = if path == "." {
                unknown_field(&inner.to_string()).unwrap_or(path)
            } else {
                path
            };
            Error::config(key, inner.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.al.validate()?;
        match &self.corpus {
            CorpusSource::Conll { files, .. } => {
                if files.is_empty() {
                    return Err(Error::config("corpus.files", "no corpus files given"));
                }
                if self.embeddings.is_none() {
                    return Err(Error::config("embeddings", "required for column-file corpora"));
                }
            }
            CorpusSource::Synthetic { spec, .. } => spec.validate()?,
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let CorpusSource::Conll { files, .. } = &mut self.corpus {
            files.iter_mut().for_each(fix);
        }
        if let Some(e) = &mut self.embeddings {
            fix(&mut e.path);
        }
        if let SplitSpec::Files { train, validation, test } = &mut self.split {
            fix(train);
            fix(test);
            if let Some(v) = validation {
                fix(v);
            }
        }
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        if self.strategies.is_empty() {
            vec![self.al.strategy]
        } else {
            self.strategies.clone()
        }
    }

    /// Corpus and embeddings, before splitting.
    pub fn load_data(&self) -> Result<(Corpus, EmbeddingMatrix)> {
        let (corpus, emb) = match &self.corpus {
            CorpusSource::Conll { files, layout } => {
                let corpus = load_conll_files(files, *layout, None)?;
                let src = self.embeddings.as_ref().expect("validated");
                let emb = load_embeddings(&src.path, &corpus)?;
                (corpus, emb)
            }
            CorpusSource::Synthetic { spec, seed } => {
                let data = spec.generate(*seed)?;
                let emb = data.embeddings(*seed)?;
                (data.corpus, emb)
            }
        };
        let emb = match self.embeddings.as_ref().and_then(|e| e.pca) {
            Some(target) => transform(&fit_pca(&emb, target)?, &emb)?,
            None => emb,
        };
        Ok((corpus, emb))
    }

    pub fn split(&self, corpus: &Corpus) -> Result<Split> {
        match &self.split {
            SplitSpec::Fractions {
                train,
                validation,
                test,
                seed,
            } => split_by_fractions(corpus, [*train, *validation, *test], *seed),
            SplitSpec::Files { train, validation, test } => {
                split_from_files(corpus, train, validation.as_deref(), test)
            }
        }
    }

    /// Loads, splits and indexes the data. The validation part is unused by
    /// the loop.
    pub fn dataset(&self) -> Result<Arc<Dataset>> {
        let (corpus, emb) = self.load_data()?;
        let split = self.split(&corpus)?;
        Ok(Arc::new(Dataset::new(corpus, emb, split.train, split.test)?))
    }
}

/// Pulls the field name out of serde's "unknown field `x`" message.
fn unknown_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(text: &str) -> String {
        match ExperimentConfig::from_json(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_synthetic_config() {
        let c = ExperimentConfig::from_json(r#"{"corpus": {"kind": "synthetic"}}"#).unwrap();
        assert_eq!(c.al.m, 4);
        assert_eq!(c.strategies().len(), 1);
    }

    #[test]
    fn negative_m_names_the_key() {
        let k = key_of(r#"{"corpus": {"kind": "synthetic"}, "al": {"m": -1}}"#);
        assert!(k.ends_with('m'), "{k}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert_eq!(key_of(r#"{"corpus": {"kind": "synthetic"}, "colour": 1}"#), "colour");
        let k = key_of(r#"{"corpus": {"kind": "synthetic"}, "al": {"n_repeat": 2}}"#);
        assert!(k.contains("n_repeat"), "{k}");
    }

    #[test]
    fn conll_needs_embeddings() {
        let k = key_of(r#"{"corpus": {"kind": "conll", "files": ["a.txt"]}}"#);
        assert_eq!(k, "embeddings");
    }
}
