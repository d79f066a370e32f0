//! Tokenized corpora with gold BIO2 labels.
//!
//! A [`Corpus`] is immutable once built: token global indices are the
//! flattening of sentences in order, and the manifest hash is a SHA-256
//! digest over everything the embedding store needs to match against.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Index into [`LabelScheme::tags`]. `0` is always the outside tag.
pub type TagId = usize;

pub const OUTSIDE: TagId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SentenceId(pub u32);

impl fmt::Display for SentenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Entity classes and the BIO2 tag set derived from them.
///
/// Tag layout is `O, B-c0, I-c0, B-c1, I-c1, ...`, so tag indices depend only
/// on the class order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelScheme {
    classes: Vec<String>,
    tags: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TagId>,
}

impl LabelScheme {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for c in &classes {
            if c.is_empty() || c == "O" || c.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("bad entity class name `{c}`")));
            }
            if !seen.insert(c.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate entity class `{c}`")));
            }
        }
        let mut tags = Vec::with_capacity(2 * classes.len() + 1);
        tags.push("O".to_string());
        for c in &classes {
            tags.push(format!("B-{c}"));
            tags.push(format!("I-{c}"));
        }
        let index = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self {
            classes,
            tags,
            index,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Total tag count `2m + 1`.
    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn tag_index(&self, tag: &str) -> Option<TagId> {
        self.index.get(tag).copied()
    }

    pub fn tag_name(&self, tag: TagId) -> &str {
        &self.tags[tag]
    }

    pub fn class_name(&self, class: usize) -> &str {
        &self.classes[class]
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Entity class of a tag, `None` for `O`.
    pub fn class_of(&self, tag: TagId) -> Option<usize> {
        (tag != OUTSIDE).then(|| (tag - 1) / 2)
    }

    pub fn is_begin(&self, tag: TagId) -> bool {
        tag != OUTSIDE && (tag - 1) % 2 == 0
    }

    pub fn is_inside(&self, tag: TagId) -> bool {
        tag != OUTSIDE && (tag - 1) % 2 == 1
    }

    pub fn begin(&self, class: usize) -> TagId {
        1 + 2 * class
    }

    pub fn inside(&self, class: usize) -> TagId {
        2 + 2 * class
    }
}

impl TryFrom<Vec<String>> for LabelScheme {
    type Error = Error;
    fn try_from(classes: Vec<String>) -> Result<Self> {
        LabelScheme::new(classes)
    }
}

impl From<LabelScheme> for Vec<String> {
    fn from(s: LabelScheme) -> Self {
        s.classes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub pos: Option<String>,
    pub gold: TagId,
    pub global_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: SentenceId,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn gold_tags(&self) -> Vec<TagId> {
        self.tokens.iter().map(|t| t.gold).collect()
    }

    pub fn n_positive(&self) -> usize {
        self.tokens.iter().filter(|t| t.gold != OUTSIDE).count()
    }
}

/// Token as handed to [`Corpus::from_tagged`], before global indexing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawToken {
    pub surface: String,
    pub pos: Option<String>,
    pub tag: TagId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    label_scheme: LabelScheme,
    has_pos: bool,
    manifest_hash: [u8; 32],
    n_tokens: usize,
}

impl Corpus {
    /// Builds a corpus from already tag-indexed sentences. Tags are BIO2
    /// normalized; sentence ids are assigned in order.
    pub fn from_tagged(
        label_scheme: LabelScheme,
        has_pos: bool,
        sentences: Vec<Vec<RawToken>>,
    ) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut out = Vec::with_capacity(sentences.len());
        let mut global = 0usize;
        for (i, raw) in sentences.into_iter().enumerate() {
            if raw.is_empty() {
                return Err(Error::InvalidArgument(format!("sentence {i} is empty")));
            }
            let mut tags: Vec<TagId> = raw.iter().map(|t| t.tag).collect();
            if let Some(&bad) = tags.iter().find(|&&t| t >= label_scheme.num_tags()) {
                return Err(Error::UnknownTag(format!("#{bad}")));
            }
            normalize_bio2(&label_scheme, &mut tags);
            let tokens = raw
                .into_iter()
                .zip(tags)
                .map(|(t, gold)| {
                    let tok = Token {
                        surface: t.surface,
                        pos: if has_pos { t.pos } else { None },
                        gold,
                        global_index: global,
                    };
                    global += 1;
                    tok
                })
                .collect();
            out.push(Sentence {
                id: SentenceId(i as u32),
                tokens,
            });
        }
        let manifest_hash = manifest_digest(&label_scheme, &out);
        Ok(Self {
            sentences: out,
            label_scheme,
            has_pos,
            manifest_hash,
            n_tokens: global,
        })
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn sentence(&self, id: SentenceId) -> &Sentence {
        &self.sentences[id.0 as usize]
    }

    pub fn get(&self, id: SentenceId) -> Option<&Sentence> {
        self.sentences.get(id.0 as usize)
    }

    pub fn label_scheme(&self) -> &LabelScheme {
        &self.label_scheme
    }

    pub fn has_pos(&self) -> bool {
        self.has_pos
    }

    pub fn manifest_hash(&self) -> &[u8; 32] {
        &self.manifest_hash
    }

    pub fn n_sentences(&self) -> usize {
        self.sentences.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn ids(&self) -> impl Iterator<Item = SentenceId> + '_ {
        self.sentences.iter().map(|s| s.id)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> + '_ {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }
}

fn manifest_digest(scheme: &LabelScheme, sentences: &[Sentence]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"alner-corpus-v1\n");
    for t in scheme.tags() {
        h.update(t.as_bytes());
        h.update([0x1f]);
    }
    h.update([0x1d]);
    for s in sentences {
        for t in &s.tokens {
            h.update(t.surface.as_bytes());
            h.update([0x1f]);
            if let Some(p) = &t.pos {
                h.update(p.as_bytes());
            }
            h.update([0x1f]);
            h.update(scheme.tag_name(t.gold).as_bytes());
            h.update([0x1e]);
        }
        h.update([0x1d]);
    }
    h.finalize().into()
}

/// Repairs a tag sequence in place so that every `I-c` follows `B-c` or `I-c`.
/// Returns how many tags were rewritten.
pub fn normalize_bio2(scheme: &LabelScheme, tags: &mut [TagId]) -> usize {
    let mut repaired = 0;
    let mut prev_class: Option<usize> = None;
    for tag in tags.iter_mut() {
        let class = scheme.class_of(*tag);
        if scheme.is_inside(*tag) && prev_class != class {
            *tag = scheme.begin(class.unwrap());
            repaired += 1;
        }
        prev_class = class;
    }
    repaired
}

/// Which whitespace-separated columns hold the token, optional POS tag, and
/// NER tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnLayout {
    pub token: usize,
    #[serde(default)]
    pub pos: Option<usize>,
    pub tag: usize,
}

impl ColumnLayout {
    /// `token POS chunk NER`, as distributed for CoNLL-2003.
    pub const CONLL03: ColumnLayout = ColumnLayout {
        token: 0,
        pos: Some(1),
        tag: 3,
    };

    /// `token NER`, as used by the biomedical corpora.
    pub const TWO_COLUMN: ColumnLayout = ColumnLayout {
        token: 0,
        pos: None,
        tag: 1,
    };

    fn min_columns(&self) -> usize {
        1 + self.token.max(self.tag).max(self.pos.unwrap_or(0))
    }
}

pub fn load_conll(path: impl AsRef<Path>, layout: ColumnLayout) -> Result<Corpus> {
    load_conll_files(&[path.as_ref()], layout, None)
}

/// Loads and concatenates CoNLL column files. When `scheme` is `None`, entity
/// classes are inferred from the files and sorted by name.
pub fn load_conll_files<P: AsRef<Path>>(
    paths: &[P],
    layout: ColumnLayout,
    scheme: Option<&LabelScheme>,
) -> Result<Corpus> {
    // (surface, pos, raw tag string)
    let mut raw: Vec<Vec<(String, Option<String>, String)>> = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut current = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                if !current.is_empty() {
                    raw.push(std::mem::take(&mut current));
                }
                continue;
            }
            if trimmed.starts_with("-DOCSTART-") {
                continue;
            }
            let cols: Vec<&str> = trimmed.split_whitespace().collect();
            if cols.len() < layout.min_columns() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!(
                        "expected at least {} columns, found {}",
                        layout.min_columns(),
                        cols.len()
                    ),
                });
            }
            current.push((
                cols[layout.token].to_string(),
                layout.pos.map(|p| cols[p].to_string()),
                cols[layout.tag].to_string(),
            ));
        }
        if !current.is_empty() {
            raw.push(current);
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let scheme = match scheme {
        Some(s) => s.clone(),
        None => {
            let mut classes = BTreeSet::new();
            for (_, _, tag) in raw.iter().flatten() {
                if let Some((_, class)) = split_tag(tag)? {
                    classes.insert(class.to_string());
                }
            }
            LabelScheme::new(classes)?
        }
    };

    let mut sentences = Vec::with_capacity(raw.len());
    for sent in raw {
        let mut toks = Vec::with_capacity(sent.len());
        for (surface, pos, tag) in sent {
            let id = match split_tag(&tag)? {
                None => OUTSIDE,
                Some((prefix, class)) => {
                    let c = scheme
                        .class_index(class)
                        .ok_or_else(|| Error::UnknownTag(tag.clone()))?;
                    if prefix == 'B' {
                        scheme.begin(c)
                    } else {
                        scheme.inside(c)
                    }
                }
            };
            toks.push(RawToken {
                surface,
                pos,
                tag: id,
            });
        }
        sentences.push(toks);
    }
    Corpus::from_tagged(scheme, layout.pos.is_some(), sentences)
}

fn split_tag(tag: &str) -> Result<Option<(char, &str)>> {
    if tag == "O" {
        return Ok(None);
    }
    match tag.split_once('-') {
        Some((p @ ("B" | "I"), class)) if !class.is_empty() => {
            Ok(Some((p.chars().next().unwrap(), class)))
        }
        _ => Err(Error::UnknownTag(tag.to_string())),
    }
}

/// Writes `token [POS] tag` lines with blank-line sentence separators.
pub fn write_conll(corpus: &Corpus, out: impl Write) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    for (i, s) in corpus.sentences().iter().enumerate() {
        if i > 0 {
            writeln!(w)?;
        }
        for t in &s.tokens {
            let tag = corpus.label_scheme().tag_name(t.gold);
            match &t.pos {
                Some(p) => writeln!(w, "{} {} {}", t.surface, p, tag)?,
                None => writeln!(w, "{} {}", t.surface, tag)?,
            }
        }
    }
    w.flush()
}

/// Layout matching what [`write_conll`] emits for this corpus.
pub fn written_layout(corpus: &Corpus) -> ColumnLayout {
    if corpus.has_pos() {
        ColumnLayout {
            token: 0,
            pos: Some(1),
            tag: 2,
        }
    } else {
        ColumnLayout::TWO_COLUMN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub class: usize,
    /// Inclusive token positions within the sentence.
    pub start: usize,
    pub end: usize,
}

/// Maximal spans of a BIO2 tag sequence: `B-c` opens a span and contiguous
/// `I-c` tokens extend it.
pub fn extract_spans(scheme: &LabelScheme, tags: &[TagId]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, &tag) in tags.iter().enumerate() {
        let class = scheme.class_of(tag);
        let continues = scheme.is_inside(tag) && open.is_some_and(|s| Some(s.class) == class);
        if continues {
            open.as_mut().unwrap().end = i;
            continue;
        }
        if let Some(s) = open.take() {
            spans.push(s);
        }
        // A stray I-c is treated as B-c so predictions need not be normalized.
        if let Some(c) = class {
            open = Some(EntitySpan {
                class: c,
                start: i,
                end: i,
            });
        }
    }
    spans.extend(open);
    spans
}

pub fn spans_to_tags(scheme: &LabelScheme, spans: &[EntitySpan], len: usize) -> Vec<TagId> {
    let mut tags = vec![OUTSIDE; len];
    for s in spans {
        tags[s.start] = scheme.begin(s.class);
        for t in &mut tags[s.start + 1..=s.end] {
            *t = scheme.inside(s.class);
        }
    }
    tags
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<SentenceId>,
    pub validation: Vec<SentenceId>,
    pub test: Vec<SentenceId>,
}

/// Seeded random partition. Train and validation sizes are rounded; test
/// receives the remainder.
pub fn split_by_fractions(corpus: &Corpus, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::InvalidSplit(format!(
            "fractions must be positive, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!("fractions sum to {total}, not 1")));
    }
    let n = corpus.n_sentences();
    let mut ids: Vec<SentenceId> = corpus.ids().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * fractions[0]).round() as usize;
    let n_val = (((n as f64) * fractions[1]).round() as usize).min(n - n_train);
    let mut split = Split {
        train: ids[..n_train].to_vec(),
        validation: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
    };
    split.train.sort();
    split.validation.sort();
    split.test.sort();
    Ok(split)
}

/// Reads newline-separated sentence ids for each part. Parts must be disjoint.
pub fn split_from_files(
    corpus: &Corpus,
    train: &Path,
    validation: Option<&Path>,
    test: &Path,
) -> Result<Split> {
    let read = |p: &Path| -> Result<Vec<SentenceId>> {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let mut ids = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let id: u32 = line.parse().map_err(|_| Error::Parse {
                path: p.to_path_buf(),
                line: i + 1,
                message: format!("`{line}` is not a sentence id"),
            })?;
            if id as usize >= corpus.n_sentences() {
                return Err(Error::InvalidSplit(format!(
                    "{}: sentence id {id} out of range",
                    p.display()
                )));
            }
            ids.push(SentenceId(id));
        }
        Ok(ids)
    };
    let split = Split {
        train: read(train)?,
        validation: validation.map(read).transpose()?.unwrap_or_default(),
        test: read(test)?,
    };
    let mut seen = HashSet::new();
    for id in split.train.iter().chain(&split.validation).chain(&split.test) {
        if !seen.insert(*id) {
            return Err(Error::InvalidSplit(format!("sentence {id} listed twice")));
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_sentences: usize,
    pub n_tokens: usize,
    pub mean_tokens_per_sentence: f64,
    pub mean_positive_per_sentence: f64,
    pub positive_fraction: f64,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let n_sentences = corpus.n_sentences();
    let n_tokens = corpus.n_tokens();
    let n_pos: usize = corpus.sentences().iter().map(Sentence::n_positive).sum();
    CorpusStats {
        n_sentences,
        n_tokens,
        mean_tokens_per_sentence: n_tokens as f64 / n_sentences as f64,
        mean_positive_per_sentence: n_pos as f64 / n_sentences as f64,
        positive_fraction: n_pos as f64 / n_tokens as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const ANGIOEDEMA: &str = "Angioedema B-Disease\ndue O\nto O\nACE B-Chemical\ninhibitors: I-Chemical\n\
                           common O\nand O\ninadequately O\ndiagnosed O\n";

    #[test]
    fn loads_single_negative_sentence() {
        let f = write_tmp("A O\nB O\n");
        let c = load_conll(f.path(), ColumnLayout::TWO_COLUMN).unwrap();
        assert_eq!(c.n_sentences(), 1);
        assert_eq!(c.n_tokens(), 2);
        assert_eq!(c.sentences()[0].n_positive(), 0);
    }

    #[test]
    fn angioedema_sentence() {
        let f = write_tmp(ANGIOEDEMA);
        let c = load_conll(f.path(), ColumnLayout::TWO_COLUMN).unwrap();
        let s = &c.sentences()[0];
        assert_eq!(s.n_tokens(), 9);
        let pos: Vec<usize> = s
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.gold != OUTSIDE)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(pos, vec![0, 3, 4]);

        let scheme = c.label_scheme();
        let spans: Vec<(&str, usize, usize)> = extract_spans(scheme, &s.gold_tags())
            .iter()
            .map(|sp| (scheme.class_name(sp.class), sp.start, sp.end))
            .collect();
        assert_eq!(spans, vec![("Disease", 0, 0), ("Chemical", 3, 4)]);
    }

    #[test]
    fn spans_split_on_repeated_begin() {
        let scheme = LabelScheme::new(["X"]).unwrap();
        let b = scheme.begin(0);
        let i = scheme.inside(0);
        let spans = extract_spans(&scheme, &[b, i, b]);
        assert_eq!(
            spans,
            vec![
                EntitySpan { class: 0, start: 0, end: 1 },
                EntitySpan { class: 0, start: 2, end: 2 },
            ]
        );
        assert!(extract_spans(&scheme, &[OUTSIDE, OUTSIDE]).is_empty());
    }

    #[test]
    fn iob1_inside_tags_are_repaired() {
        let f = write_tmp("EU I-ORG\nrejects O\nGerman I-MISC\ncall O\n");
        let c = load_conll(f.path(), ColumnLayout::TWO_COLUMN).unwrap();
        let scheme = c.label_scheme();
        let names: Vec<&str> = c.sentences()[0]
            .tokens
            .iter()
            .map(|t| scheme.tag_name(t.gold))
            .collect();
        assert_eq!(names, ["B-ORG", "O", "B-MISC", "O"]);
    }

    #[test]
    fn docstart_lines_are_skipped() {
        let f = write_tmp("-DOCSTART- -X- -X- O\n\nEU NNP B-NP B-ORG\nrejects VBZ B-VP O\n\nPeter NNP B-NP B-PER\n");
        let c = load_conll(f.path(), ColumnLayout::CONLL03).unwrap();
        assert_eq!(c.n_sentences(), 2);
        assert!(c.has_pos());
        assert_eq!(c.sentences()[0].tokens[0].pos.as_deref(), Some("NNP"));
    }

    #[test]
    fn unknown_tags_are_rejected() {
        let f = write_tmp("a S-PER\n");
        assert!(matches!(
            load_conll(f.path(), ColumnLayout::TWO_COLUMN),
            Err(Error::UnknownTag(t)) if t == "S-PER"
        ));
        let f = write_tmp("a B-LOC\n");
        let scheme = LabelScheme::new(["PER"]).unwrap();
        assert!(matches!(
            load_conll_files(&[f.path()], ColumnLayout::TWO_COLUMN, Some(&scheme)),
            Err(Error::UnknownTag(_))
        ));
    }

    #[test]
    fn empty_and_missing_files_fail() {
        let f = write_tmp("\n\n");
        assert!(matches!(
            load_conll(f.path(), ColumnLayout::TWO_COLUMN),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            load_conll("/nonexistent/file.conll", ColumnLayout::TWO_COLUMN),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn round_trip_through_writer() {
        let f = write_tmp(ANGIOEDEMA);
        let c = load_conll(f.path(), ColumnLayout::TWO_COLUMN).unwrap();
        let mut buf = Vec::new();
        write_conll(&c, &mut buf).unwrap();
        let g = write_tmp(std::str::from_utf8(&buf).unwrap());
        let d = load_conll(g.path(), written_layout(&c)).unwrap();
        assert_eq!(c.sentences(), d.sentences());
        assert_eq!(c.manifest_hash(), d.manifest_hash());
    }

    fn corpus_of(n: usize) -> Corpus {
        let scheme = LabelScheme::new(["X"]).unwrap();
        let sents = (0..n)
            .map(|i| {
                vec![RawToken {
                    surface: format!("w{i}"),
                    pos: None,
                    tag: OUTSIDE,
                }]
            })
            .collect();
        Corpus::from_tagged(scheme, false, sents).unwrap()
    }

    #[test]
    fn fraction_split_sizes_and_determinism() {
        let c = corpus_of(100);
        let a = split_by_fractions(&c, [0.68, 0.16, 0.16], 7).unwrap();
        assert_eq!(
            (a.train.len(), a.validation.len(), a.test.len()),
            (68, 16, 16)
        );
        let b = split_by_fractions(&c, [0.68, 0.16, 0.16], 7).unwrap();
        assert_eq!(a, b);
        let all: BTreeSet<_> = a.train.iter().chain(&a.validation).chain(&a.test).collect();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn fraction_split_rejects_bad_sums() {
        let c = corpus_of(10);
        assert!(split_by_fractions(&c, [0.5, 0.3, 0.3], 1).is_err());
        assert!(split_by_fractions(&c, [1.0, 0.0, 0.0], 1).is_err());
    }

    #[test]
    fn split_files_are_used_verbatim() {
        let c = corpus_of(6);
        let tr = write_tmp("0\n2\n4\n");
        let te = write_tmp("5\n1\n");
        let s = split_from_files(&c, tr.path(), None, te.path()).unwrap();
        assert_eq!(s.train, vec![SentenceId(0), SentenceId(2), SentenceId(4)]);
        assert_eq!(s.test, vec![SentenceId(5), SentenceId(1)]);
        let dup = write_tmp("0\n");
        assert!(split_from_files(&c, tr.path(), None, dup.path()).is_err());
    }

    #[test]
    fn stats_of_singleton() {
        let scheme = LabelScheme::new(["X"]).unwrap();
        let toks = (0..4)
            .map(|i| RawToken {
                surface: format!("t{i}"),
                pos: None,
                tag: if i == 1 { scheme.begin(0) } else { OUTSIDE },
            })
            .collect();
        let c = Corpus::from_tagged(scheme, false, vec![toks]).unwrap();
        let s = corpus_stats(&c);
        assert_eq!(s.mean_tokens_per_sentence, 4.0);
        assert_eq!(s.positive_fraction, 0.25);
    }

    #[test]
    fn tag_layout() {
        let s = LabelScheme::new(["PER", "LOC"]).unwrap();
        assert_eq!(s.num_tags(), 5);
        assert_eq!(s.tags(), ["O", "B-PER", "I-PER", "B-LOC", "I-LOC"]);
        assert_eq!(s.class_of(4), Some(1));
        assert!(s.is_begin(3) && s.is_inside(4));
        assert!(LabelScheme::new(["PER", "PER"]).is_err());
    }
}
