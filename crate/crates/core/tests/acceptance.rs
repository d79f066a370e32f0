//! One PASS/FAIL line per headline criterion. Run with
//! `cargo test --release --test acceptance -- --nocapture`.
//! The CoNLL-03 check needs `ALNER_CONLL03` pointing at a directory with the
//! English train and dev files.

mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use alner::al::{
    run_experiment, AlConfig, AnnotationMode, CostAxis, RunSummary, Session, StopCriterion, StopReason,
};
use alner::corpus::{corpus_stats, load_conll_files, ColumnLayout, Corpus, LabelScheme, RawToken, OUTSIDE};
use alner::crf::{best_path, decode, marginals_from_potentials};
use alner::positive::{supervision_class, PositiveIdParams, PositivePipeline};
use alner::scoring::{
    aggregate, baseline_score, silverman_bandwidth, tau, AggregationStrategy, Strategy, TokenCountDensity,
    UncertaintyMeasure,
};
use alner::synthetic::SyntheticSpec;
use common::{enumerate, gradient_error, potentials, random_corpus, random_embeddings, random_model, rng, small_dataset};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn crf_exactness() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(1001);
    let mut worst = 0.0f64;
    let mut wrong_paths = 0;
    // Chain routines on raw potentials, every M from 1 to 4.
    for _ in 0..200 {
        let n = r.random_range(1..=6);
        let m = r.random_range(1..=4);
        let state: Vec<f64> = (0..n * m).map(|_| r.random_range(-3.0..3.0)).collect();
        let trans: Vec<f64> = (0..m * m).map(|_| r.random_range(-3.0..3.0)).collect();
        let p = potentials(n, m, &state, &trans);
        let o = enumerate(n, m, &state, &trans);
        let t = marginals_from_potentials(&p).unwrap();
        worst = worst.max((t.log_z() - o.log_z).abs());
        for i in 0..n {
            for y in 0..m {
                worst = worst.max((t.row(i)[y] - o.unary[i * m + y]).abs());
            }
        }
        let (path, score) = best_path(&p);
        worst = worst.max((score - o.best_score).abs());
        wrong_paths += usize::from(path != o.best);
    }
    // Whole-model decoding of 200 sentences, M = 3.
    let corpus = random_corpus(&mut r, 200, 6, &["X"], false);
    let emb = random_embeddings(&mut r, &corpus, 3);
    let (_, feats, model) = random_model(&mut r, &corpus, &emb, 1.0);
    let m = model.num_tags();
    for fe in &feats {
        let state = model.state_scores(fe, &emb);
        let o = enumerate(fe.len(), m, &state, model.transitions());
        let (t, v) = decode(&model, fe, &emb).unwrap();
        worst = worst.max((t.log_z() - o.log_z).abs());
        for i in 0..fe.len() {
            for y in 0..m {
                worst = worst.max((t.row(i)[y] - o.unary[i * m + y]).abs());
            }
        }
        wrong_paths += usize::from(v.tags != o.best);
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst < 1e-8 && wrong_paths == 0 && secs < 60.0,
        format!("max abs error {worst:.2e}, {wrong_paths} wrong Viterbi paths, {secs:.1}s"),
    )
}

fn gradient_check() -> Outcome {
    let t0 = Instant::now();
    let worst = (0..100).map(|s| gradient_error(5000 + s)).fold(0.0, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 60.0,
        format!("worst relative error {worst:.2e} over 100 configurations, {secs:.1}s"),
    )
}

fn uncertainty_bounds() -> Outcome {
    let mut r = rng(1002);
    let mut violations = 0;
    for _ in 0..10_000 {
        let m = r.random_range(2..=9);
        let raw: Vec<f64> = (0..m).map(|_| (-r.random::<f64>().ln()).powf(r.random_range(0.2..6.0))).collect();
        let sum: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / sum).collect();
        let assigned = p[r.random_range(0..m)];
        for measure in UncertaintyMeasure::ALL {
            let t = tau(measure, &p, assigned).unwrap();
            let hi = match measure {
                UncertaintyMeasure::TE => (m as f64).ln(),
                UncertaintyMeasure::TP => 1.0 - 1.0 / m as f64,
                _ => 1.0,
            };
            violations += usize::from(!(0.0..=hi).contains(&t));
        }
        let n = r.random_range(1..=30);
        let taus: Vec<f64> = (0..n).map(|_| tau(UncertaintyMeasure::TE, &p, assigned).unwrap() * r.random::<f64>()).collect();
        let flags: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
        let s = aggregate(AggregationStrategy::Single, &taus, None, None).unwrap();
        let nm = aggregate(AggregationStrategy::Normalized, &taus, None, None).unwrap();
        let t = aggregate(AggregationStrategy::Total, &taus, None, None).unwrap();
        let tp = aggregate(AggregationStrategy::TotalPos, &taus, Some(&flags), None).unwrap();
        violations += usize::from(nm != t / n as f64);
        violations += usize::from(!(nm <= s && s <= t));
        violations += usize::from(tp > t);
    }
    outcome(violations == 0, format!("{violations} violations over 10000 distributions"))
}

fn angioedema() -> Outcome {
    let words = ["Angioedema", "due", "to", "ACE", "inhibitors:", "common", "and", "inadequately", "diagnosed"];
    let raw = words
        .iter()
        .map(|w| RawToken {
            surface: w.to_string(),
            pos: None,
            tag: OUTSIDE,
        })
        .collect();
    let corpus = Corpus::from_tagged(LabelScheme::new(["Chemical", "Disease"]).unwrap(), false, vec![raw]).unwrap();
    let sentence = &corpus.sentences()[0];
    let lengths = [3, 5, 6, 8, 9, 9, 10, 11, 13, 17, 22, 30];
    let density = TokenCountDensity::fit(&lengths).unwrap();
    // Independent density at 9: Gaussian kernels renormalized on [0, inf).
    let sample: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    let mean = sample.iter().sum::<f64>() / 12.0;
    let sd = (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 11.0).sqrt();
    // Quartiles by linear interpolation: 7.5 and 14.
    let h = 0.9 * sd.min((14.0 - 7.5) / 1.34) * 12f64.powf(-0.2);
    let h_lib = silverman_bandwidth(&sample).unwrap();
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let raw_pdf: f64 = sample.iter().map(|&l| phi((9.0 - l) / h)).sum::<f64>() / (12.0 * h);
    let mass: f64 = sample
        .iter()
        .map(|&l| 0.5 * libm::erfc(-l / (h * std::f64::consts::SQRT_2)))
        .sum::<f64>()
        / 12.0;
    let p9 = raw_pdf / mass;

    let taus = [0.61, 0.04, 0.02, 0.47, 0.55, 0.11, 0.01, 0.23, 0.08];
    let positive: BTreeSet<usize> = [0, 3, 4].into();
    let flags: Vec<bool> = (0..9).map(|i| positive.contains(&i)).collect();
    let mut r = rng(0);
    let lss = baseline_score(AggregationStrategy::Lss, sentence, None, None, &mut r).unwrap().phi;
    let pas = baseline_score(AggregationStrategy::Pas, sentence, Some(&positive), Some(&density), &mut r)
        .unwrap()
        .phi;
    let tp = aggregate(AggregationStrategy::TotalPos, &taus, Some(&flags), Some(&density)).unwrap();
    let dp = aggregate(AggregationStrategy::DnormPos, &taus, Some(&flags), Some(&density)).unwrap();
    let want_tp = taus[0] + taus[3] + taus[4];
    let errs = [
        (h_lib - h).abs(),
        (density.pdf(9.0) - p9).abs(),
        (lss - 9.0).abs(),
        (pas - 3.0 * p9.sqrt()).abs(),
        (tp - want_tp).abs(),
        (dp - p9.sqrt() * want_tp).abs(),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    outcome(
        worst <= 1e-12,
        format!("LSS={lss}, PAS={pas:.6}, tp={tp:.4}, dp={dp:.6}, max error {worst:.1e}"),
    )
}

fn kde_normalization() -> Outcome {
    let mut r = rng(1003);
    let mut sets: Vec<Vec<usize>> = vec![vec![3, 5, 6, 8, 9, 9, 10, 11, 13, 17, 22, 30], vec![1, 1, 2], vec![9; 20]];
    for _ in 0..30 {
        let n = r.random_range(2..500);
        sets.push((0..n).map(|_| r.random_range(1..90)).collect());
    }
    for seed in 0..3 {
        let spec = SyntheticSpec { n_sentences: 600, ..Default::default() };
        let c = spec.generate(seed).unwrap().corpus;
        sets.push(c.sentences().iter().map(|s| s.n_tokens()).collect());
    }
    let mut worst = 0.0f64;
    for lengths in &sets {
        let d = TokenCountDensity::fit(lengths).unwrap();
        let hi = d.max_length() + 15.0 * d.bandwidth();
        let steps = 200_000;
        let dx = hi / steps as f64;
        let mut area = 0.5 * (d.pdf(0.0) + d.pdf(hi));
        for i in 1..steps {
            area += d.pdf(i as f64 * dx);
        }
        worst = worst.max((area * dx - 1.0).abs());
    }
    outcome(worst <= 1e-3, format!("worst |integral - 1| = {worst:.2e} over {} corpora", sets.len()))
}

fn positive_recovery() -> Outcome {
    let t0 = Instant::now();
    let spec = SyntheticSpec {
        n_sentences: 2000,
        entity_rate: 0.085,
        entity_separation: 10.0,
        class_separation: 10.0,
        ..Default::default()
    };
    let data = spec.generate(2024).unwrap();
    let emb = data.embeddings(2024).unwrap();
    let corpus = &data.corpus;
    let stats = corpus_stats(corpus);
    let gold: Vec<_> = corpus.tokens().map(|t| t.gold).collect();
    let scheme = corpus.label_scheme();
    let params = PositiveIdParams::default();
    let pipeline = PositivePipeline::new(&emb, (0..corpus.n_tokens()).collect(), params).unwrap();
    let mut good_seeds = 0;
    let mut recalls = Vec::new();
    for seed in 0..10u64 {
        // Labels of 16 random sentences, as after the first batch with m = 4.
        let mut r = rng(seed);
        let labeled: BTreeSet<usize> = rand::seq::index::sample(&mut r, corpus.n_sentences(), 16).into_iter().collect();
        let mut sup = vec![None; corpus.n_tokens()];
        for &sid in &labeled {
            for tok in &corpus.sentences()[sid].tokens {
                sup[tok.global_index] = Some(supervision_class(scheme, tok.gold));
            }
        }
        let run = pipeline.run(&|t| sup[t], seed).unwrap();
        let c = &run.clusters;
        if let Some(big) = (0..c.sizes.len()).max_by_key(|&k| (c.sizes[k], std::cmp::Reverse(k))) {
            let members: Vec<usize> = (0..c.labels.len()).filter(|&i| c.labels[i] == Some(big)).collect();
            let neg = members.iter().filter(|&&i| gold[pipeline.tokens()[i]] == OUTSIDE).count();
            good_seeds += usize::from(2 * neg > members.len());
        }
        recalls.push(run.metrics(corpus).recall_pos);
    }
    let recall = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        good_seeds >= 9 && recall >= 0.85 && secs < 300.0,
        format!(
            "largest cluster negative in {good_seeds}/10 seeds, mean recall_pos {recall:.3}, {:.1}% positive tokens, {secs:.0}s",
            100.0 * stats.positive_fraction
        ),
    )
}

/// Mean cost to reach `level`, infinite when some seed never gets there.
fn reach(s: &RunSummary, level: f64, axis: CostAxis) -> f64 {
    s.mean_reach(level, axis).unwrap_or(f64::INFINITY)
}

/// Corpus size of the directional benchmark. Chosen so that five seeds of
/// five strategies fit the time budget on one core.
const BENCH_SENTENCES: usize = 1250;

fn al_benchmark() -> Outcome {
    let t0 = Instant::now();
    let spec: SyntheticSpec = serde_json::from_value(serde_json::json!({
        "n_sentences": BENCH_SENTENCES,
        "classes": ["PER", "LOC", "ORG"],
        "length_mean": 8, "length_sd": 4,
        "entity_separation": 7.0, "class_separation": 2.5,
        "ambiguous_rate": 0.4, "entity_title_rate": 0.6, "outside_title_rate": 0.15,
        "entity_rate": 0.1
    }))
    .unwrap();
    let ds = Arc::new(spec.generate(11).unwrap().into_dataset(11, 0.2).unwrap());
    let mut results = Vec::new();
    for name in ["RS", "tTE", "tpTE", "nTE", "dpTE"] {
        let config = AlConfig {
            m: 3,
            max_iterations: 8,
            n_repeats: 5,
            strategy: name.parse().unwrap(),
            stop: vec![StopCriterion::PoolExhausted],
            ..Default::default()
        };
        let out = run_experiment(&ds, &config, None).unwrap();
        results.push((name, out.summary));
    }
    let get = |n: &str| &results.iter().find(|(k, _)| *k == n).unwrap().1;
    let tokens = |n: &str| reach(get(n), 0.8, CostAxis::Tokens);
    let sentences = |n: &str| reach(get(n), 0.7, CostAxis::Sentences);
    let a = tokens("tpTE") <= 1.02 * tokens("tTE");
    let b = tokens("dpTE") <= 1.02 * tokens("nTE");
    let c = ["tTE", "tpTE", "nTE", "dpTE"].iter().all(|n| sentences(n) <= sentences("RS"));
    let secs = t0.elapsed().as_secs_f64();
    let mut detail = format!(
        "(a) {} tpTE {:.0} vs tTE {:.0} tokens; (b) {} dpTE {:.0} vs nTE {:.0} tokens; (c) {} sentences to F1 0.7:",
        if a { "ok" } else { "no" },
        tokens("tpTE"),
        tokens("tTE"),
        if b { "ok" } else { "no" },
        tokens("dpTE"),
        tokens("nTE"),
        if c { "ok" } else { "no" },
    );
    for (n, _) in &results {
        detail.push_str(&format!(" {n} {:.0}", sentences(n)));
    }
    detail.push_str(&format!("; {BENCH_SENTENCES} sentences, {secs:.0}s"));
    outcome(a && b && c && secs < 1200.0, detail)
}

fn determinism_and_resume() -> Outcome {
    let ds = small_dataset(300, 77);
    let tmp = tempfile::tempdir().unwrap();
    let config = AlConfig {
        m: 3,
        max_iterations: 5,
        n_repeats: 1,
        ..Default::default()
    };
    let run = |dir: &Path| {
        let mut s = Session::create(ds.clone(), config.clone(), 3, AnnotationMode::Oracle, "d", Some(dir)).unwrap();
        s.run().unwrap();
        std::fs::read(dir.join("curve.csv")).unwrap()
    };
    let a = run(&tmp.path().join("a"));
    let b = run(&tmp.path().join("b"));
    let cut = tmp.path().join("cut");
    {
        let mut s = Session::create(ds.clone(), config.clone(), 3, AnnotationMode::Oracle, "d", Some(&cut)).unwrap();
        s.step().unwrap();
        s.query().unwrap();
    }
    let mut resumed = Session::open(ds.clone(), &cut).unwrap();
    resumed.run().unwrap();
    let c = std::fs::read(cut.join("curve.csv")).unwrap();
    outcome(
        a == b && a == c,
        format!("repeat identical: {}, resumed identical: {}", a == b, a == c),
    )
}

fn schedule_and_ledger() -> Outcome {
    let ds = small_dataset(200, 78);
    let config = AlConfig {
        m: 3,
        max_iterations: 50,
        n_repeats: 1,
        strategy: Strategy::uncertainty(AggregationStrategy::Total, UncertaintyMeasure::TE),
        ..Default::default()
    };
    let n_train = ds.train_ids().len();
    let mut s = Session::create(ds.clone(), config, 1, AnnotationMode::Oracle, "l", None).unwrap();
    let mut bad = 0;
    loop {
        let st = s.state();
        let tokens: usize = st.labeled.iter().map(|l| ds.corpus().sentence(l.id).n_tokens()).sum();
        bad += usize::from(st.ledger.tokens != tokens);
        bad += usize::from(st.labeled.len() + st.pool.len() != n_train);
        if s.step().unwrap().is_none() {
            break;
        }
    }
    let sizes: Vec<usize> = s.state().ledger.deltas.iter().map(|d| d.sentences).collect();
    let mut left = n_train;
    let want: Vec<usize> = (0..sizes.len())
        .map(|j| {
            let k = (1usize << (j + 3)).min(left);
            left -= k;
            k
        })
        .collect();
    let ok = bad == 0 && sizes == want && s.state().stopped == Some(StopReason::PoolExhausted);
    outcome(ok, format!("batches {sizes:?} of {n_train}, {bad} ledger mismatches"))
}

fn conll_files(dir: &Path) -> Option<Vec<PathBuf>> {
    [["eng.train", "eng.testa"], ["train.txt", "valid.txt"], ["train.txt", "dev.txt"]]
        .iter()
        .map(|names| names.iter().map(|n| dir.join(n)).collect::<Vec<_>>())
        .find(|files| files.iter().all(|f| f.is_file()))
}

fn conll03_stats() -> Option<Outcome> {
    let dir = std::env::var_os("ALNER_CONLL03")?;
    let Some(files) = conll_files(Path::new(&dir)) else {
        return Some(outcome(false, format!("no train/dev files under {}", Path::new(&dir).display())));
    };
    let corpus = match load_conll_files(&files, ColumnLayout::CONLL03, None) {
        Ok(c) => c,
        Err(e) => return Some(outcome(false, e.to_string())),
    };
    let s = corpus_stats(&corpus);
    let mean = (s.mean_tokens_per_sentence * 100.0).round() / 100.0;
    Some(outcome(
        s.n_sentences == 17_291 && s.n_tokens == 254_983 && mean == 14.75,
        format!("{} sentences, {} tokens, {:.2} per sentence", s.n_sentences, s.n_tokens, s.mean_tokens_per_sentence),
    ))
}

#[test]
fn acceptance() {
    let checks: Vec<(&str, fn() -> Outcome)> = vec![
        ("CRF exactness", crf_exactness),
        ("gradient check", gradient_check),
        ("uncertainty bounds and identities", uncertainty_bounds),
        ("angioedema worked example", angioedema),
        ("KDE normalization", kde_normalization),
        ("positive-token recovery", positive_recovery),
        ("AL directional benchmark", al_benchmark),
        ("determinism and resume", determinism_and_resume),
        ("schedule and ledger", schedule_and_ledger),
    ];
    let mut failed = Vec::new();
    for (name, check) in checks {
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(name);
        }
    }
    match conll03_stats() {
        Some(o) => {
            println!("{} CoNLL-03 statistics: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            if !o.pass {
                failed.push("CoNLL-03 statistics");
            }
        }
        None => println!("SKIP CoNLL-03 statistics: ALNER_CONLL03 not set, corpus absent"),
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
