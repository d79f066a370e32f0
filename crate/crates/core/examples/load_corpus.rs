//! Load a CoNLL column file, print its statistics, entity spans of the
//! first sentences, and a seeded 70/10/20 split.
//!
//! cargo run --example load_corpus -- [file] [two|conll03]
//! Without a file, a small built-in two-column sample is used.

use alner::corpus::{corpus_stats, extract_spans, load_conll, split_by_fractions, ColumnLayout};

const SAMPLE: &str = "\
Angioedema B-Disease
due O
to O
ACE B-Chemical
inhibitors: I-Chemical
common O
and O
inadequately O
diagnosed O

Captopril B-Chemical
induced O
renal B-Disease
failure I-Disease
. O

No O
entities O
here O
. O
";

fn main() -> alner::Result<()> {
    let mut args = std::env::args().skip(1);
    let (path, _tmp) = match args.next() {
        Some(p) => (std::path::PathBuf::from(p), None),
        None => {
            let dir = std::env::temp_dir().join("alner_load_corpus");
            std::fs::create_dir_all(&dir).map_err(|e| alner::Error::io(&dir, e))?;
            let p = dir.join("sample.conll");
            std::fs::write(&p, SAMPLE).map_err(|e| alner::Error::io(&p, e))?;
            (p, Some(dir))
        }
    };
    let layout = match args.next().as_deref() {
        Some("conll03") => ColumnLayout::CONLL03,
        _ => ColumnLayout::TWO_COLUMN,
    };

    let corpus = load_conll(&path, layout)?;
    let scheme = corpus.label_scheme();
    println!("tags: {:?}", scheme.tags());
    println!("{:#?}", corpus_stats(&corpus));

    for s in corpus.sentences().iter().take(3) {
        let words: Vec<&str> = s.tokens.iter().map(|t| t.surface.as_str()).collect();
        println!("#{} {}", s.id, words.join(" "));
        for span in extract_spans(scheme, &s.gold_tags()) {
            println!(
                "    {:<10} {}",
                scheme.class_name(span.class),
                words[span.start..=span.end].join(" ")
            );
        }
    }

    if corpus.n_sentences() >= 3 {
        let split = split_by_fractions(&corpus, [0.7, 0.1, 0.2], 0)?;
        println!(
            "split: {} train, {} validation, {} test",
            split.train.len(),
            split.validation.len(),
            split.test.len()
        );
    }
    Ok(())
}
