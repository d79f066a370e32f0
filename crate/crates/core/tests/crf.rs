mod common;

use alner::crf::{
    best_path, decode, marginals_from_potentials, objective_and_gradient, viterbi_from_potentials, LabeledRef,
    TrainConfig,
};
use common::{enumerate, gradient_error, oracle_state_scores, potentials, random_corpus, random_embeddings, random_model, rng};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn chain_inference_matches_enumeration() {
    let mut r = rng(1);
    for case in 0..300 {
        let n = r.random_range(1..=6);
        let m = r.random_range(1..=4);
        let state: Vec<f64> = (0..n * m).map(|_| r.random_range(-3.0..3.0)).collect();
        let trans: Vec<f64> = (0..m * m).map(|_| r.random_range(-3.0..3.0)).collect();
        let p = potentials(n, m, &state, &trans);
        let oracle = enumerate(n, m, &state, &trans);
        let table = marginals_from_potentials(&p).unwrap();
        assert!((table.log_z() - oracle.log_z).abs() < 1e-8, "case {case}");
        for i in 0..n {
            for y in 0..m {
                assert!((table.row(i)[y] - oracle.unary[i * m + y]).abs() < 1e-8, "case {case}");
            }
        }
        for i in 1..n {
            for a in 0..m {
                for b in 0..m {
                    let want = oracle.pairwise[((i - 1) * m + a) * m + b];
                    assert!((table.pairwise(i, a, b) - want).abs() < 1e-8, "case {case}");
                }
            }
        }
        let (path, score) = best_path(&p);
        assert!((score - oracle.best_score).abs() < 1e-8, "case {case}");
        assert!((p.score(&path) - oracle.best_score).abs() < 1e-8, "case {case}");
        let v = viterbi_from_potentials(&p, &table);
        assert!((v.log_prob - (oracle.best_score - oracle.log_z)).abs() < 1e-8);
    }
}

#[test]
fn viterbi_ties_go_to_lowest_tags() {
    let state = vec![0.0; 3 * 2];
    let trans = vec![0.0; 4];
    let (path, _) = best_path(&potentials(3, 2, &state, &trans));
    assert_eq!(path, vec![0, 0, 0]);
}

#[test]
fn model_state_scores_match_expanded_features() {
    let mut r = rng(2);
    for has_pos in [false, true] {
        let corpus = random_corpus(&mut r, 20, 6, &["PER", "LOC"], has_pos);
        let emb = random_embeddings(&mut r, &corpus, 3);
        let (mut f, feats, model) = random_model(&mut r, &corpus, &emb, 0.5);
        for (sid, fe) in feats.iter().enumerate() {
            let got = model.state_scores(fe, &emb);
            let want = oracle_state_scores(&mut f, &corpus, sid, &emb, &model);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9, "{g} vs {w}");
            }
        }
    }
}

#[test]
fn decode_on_random_models_matches_enumeration() {
    let mut r = rng(3);
    let corpus = random_corpus(&mut r, 60, 6, &["X"], false);
    let emb = random_embeddings(&mut r, &corpus, 2);
    let (_, feats, model) = random_model(&mut r, &corpus, &emb, 1.0);
    let m = model.num_tags();
    for fe in &feats {
        let state = model.state_scores(fe, &emb);
        let oracle = enumerate(fe.len(), m, &state, model.transitions());
        let (table, v) = decode(&model, fe, &emb).unwrap();
        assert!((table.log_z() - oracle.log_z).abs() < 1e-8);
        assert_eq!(v.tags, oracle.best);
        for (i, &y) in v.tags.iter().enumerate() {
            assert!((v.assigned_marginals[i] - oracle.unary[i * m + y]).abs() < 1e-8);
        }
    }
}

#[test]
fn objective_value_matches_enumeration() {
    let mut r = rng(4);
    let corpus = random_corpus(&mut r, 8, 5, &["A"], true);
    let emb = random_embeddings(&mut r, &corpus, 2);
    let (_, feats, model) = random_model(&mut r, &corpus, &emb, 0.7);
    let tags: Vec<Vec<usize>> = corpus.sentences().iter().map(|s| s.gold_tags()).collect();
    let batch: Vec<LabeledRef<'_>> = feats
        .iter()
        .zip(&tags)
        .map(|(features, t)| LabeledRef { features, tags: t })
        .collect();
    let (c1, c2) = (0.3, 0.05);
    let m = model.num_tags();
    let mut want = 0.0;
    for (fe, y) in feats.iter().zip(&tags) {
        let state = model.state_scores(fe, &emb);
        let o = enumerate(fe.len(), m, &state, model.transitions());
        want += potentials(fe.len(), m, &state, model.transitions()).score(y) - o.log_z;
    }
    for w in model.weights() {
        want -= c1 * w.abs() + c2 * w * w;
    }
    let (got, _) = objective_and_gradient(&model, &batch, &emb, c1, c2).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..25 {
        let e = gradient_error(100 + seed);
        assert!(e < 1e-4, "seed {seed}: relative error {e}");
    }
}

#[test]
fn train_config_rejects_nonsense() {
    let bad = TrainConfig {
        c1: -1.0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        memory: 0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

proptest! {
    #[test]
    fn marginals_are_distributions(
        n in 1usize..8,
        m in 1usize..5,
        seed in any::<u64>(),
        scale in 0.1f64..20.0,
    ) {
        let mut r = rng(seed);
        let state: Vec<f64> = (0..n * m).map(|_| r.random_range(-scale..scale)).collect();
        let trans: Vec<f64> = (0..m * m).map(|_| r.random_range(-scale..scale)).collect();
        let t = marginals_from_potentials(&potentials(n, m, &state, &trans)).unwrap();
        for i in 0..n {
            let s: f64 = t.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(t.row(i).iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p)));
        }
        for i in 1..n {
            for b in 0..m {
                let col: f64 = (0..m).map(|a| t.pairwise(i, a, b)).sum();
                prop_assert!((col - t.row(i)[b]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn viterbi_path_scores_at_least_any_other(
        n in 1usize..6,
        m in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let state: Vec<f64> = (0..n * m).map(|_| r.random_range(-2.0..2.0)).collect();
        let trans: Vec<f64> = (0..m * m).map(|_| r.random_range(-2.0..2.0)).collect();
        let p = potentials(n, m, &state, &trans);
        let (path, score) = best_path(&p);
        let other: Vec<usize> = (0..n).map(|_| r.random_range(0..m)).collect();
        prop_assert!(p.score(&other) <= score + 1e-12);
        prop_assert!((p.score(&path) - score).abs() < 1e-12);
    }
}
