use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{batch_size, AlConfig, CostLedger, CurvePoint, Dataset, LearningCurve, StopCriterion, StopReason};
use crate::corpus::{normalize_bio2, SentenceId, TagId};
use crate::crf::{self, decode, evaluate, CrfModel, LabeledRef, TrainReport};
use crate::error::{Error, Result};
use crate::positive::{supervision_class, PositiveSetMetrics};
use crate::scoring::{baseline_score, rank_select, score_sentence, SentenceScore, TokenSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationMode {
    /// Labels are copied from gold.
    Oracle,
    /// Labels arrive through [`Session::submit`].
    Interactive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub id: SentenceId,
    pub tags: Vec<TagId>,
}

/// A queried batch waiting for labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingBatch {
    pub iteration: usize,
    pub ids: Vec<SentenceId>,
    /// Labels received so far, aligned with `ids`.
    pub received: Vec<Option<Vec<TagId>>>,
}

impl PendingBatch {
    fn new(iteration: usize, ids: Vec<SentenceId>) -> Self {
        let received = vec![None; ids.len()];
        Self {
            iteration,
            ids,
            received,
        }
    }

    pub fn remaining(&self) -> usize {
        self.received.iter().filter(|r| r.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.remaining() == 0
    }
}

/// The predicted positive set used for one query, with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveSnapshot {
    pub iteration: usize,
    pub seed: u64,
    pub n_labeled_tokens: usize,
    /// Corpus-global token indices in `P'`, ascending.
    pub p_prime: Vec<usize>,
    pub n_p: usize,
    pub n_t: usize,
    pub cluster_sizes: Vec<usize>,
    pub n_noise: usize,
    pub largest_cluster: Option<usize>,
    pub no_clusters: bool,
    pub largest_tied: bool,
    /// Against gold; for diagnostics only, never used for querying.
    pub metrics: PositiveSetMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SessionStatus {
    /// A batch is out for annotation.
    AwaitingAnnotation,
    /// The batch is complete and the model is being retrained.
    Training,
    /// The next query has not been computed yet.
    Ready,
    Completed { reason: StopReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub sentence: SentenceId,
    pub remaining: usize,
    pub batch_complete: bool,
    /// The idempotency key had been seen; nothing changed.
    pub duplicate: bool,
}

/// Everything needed to continue a session, written after every mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub seed: u64,
    pub mode: AnnotationMode,
    /// Last iteration whose model has been trained.
    pub iteration: Option<usize>,
    /// Labeled set in acquisition order.
    pub labeled: Vec<LabeledSentence>,
    /// Unlabeled pool, ascending.
    pub pool: Vec<SentenceId>,
    pub ledger: CostLedger,
    pub curve: LearningCurve,
    pub pending: Option<PendingBatch>,
    pub positive: Option<PositiveSnapshot>,
    pub rng: ChaCha8Rng,
    pub stopped: Option<StopReason>,
    pub model_file: Option<String>,
    pub last_train: Option<TrainReport>,
    pub last_failure: Option<String>,
    pub idempotency: BTreeMap<String, SubmitOutcome>,
    pub elapsed_seconds: f64,
}

impl SessionState {
    pub fn status(&self) -> SessionStatus {
        match (&self.stopped, &self.pending) {
            (Some(reason), _) => SessionStatus::Completed { reason: *reason },
            (None, Some(p)) if p.is_complete() => SessionStatus::Training,
            (None, Some(_)) => SessionStatus::AwaitingAnnotation,
            (None, None) => SessionStatus::Ready,
        }
    }
}

const CONFIG_FILE: &str = "config.json";
const STATE_FILE: &str = "state.json";
const CURVE_FILE: &str = "curve.csv";

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// One active-learning run over a [`Dataset`].
pub struct Session {
    dataset: Arc<Dataset>,
    config: AlConfig,
    state: SessionState,
    model: Option<CrfModel>,
    dir: Option<PathBuf>,
}

impl Session {
    /// Samples the `2^m` initial sentences. The sample depends only on the
    /// seed and the split, so every strategy starts from the same set. In
    /// oracle mode the initial model is trained before returning.
    pub fn create(
        dataset: Arc<Dataset>,
        config: AlConfig,
        seed: u64,
        mode: AnnotationMode,
        session_id: impl Into<String>,
        dir: Option<&Path>,
    ) -> Result<Self> {
        config.validate()?;
        let n = dataset.train_ids().len();
        let k = batch_size(0, config.m, usize::MAX);
        if k > n {
            return Err(Error::config(
                "m",
                format!("initial batch 2^{} = {k} exceeds the {n} training sentences", config.m),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
        picked.sort_unstable();
        let chosen: HashSet<usize> = picked.iter().copied().collect();
        let initial: Vec<SentenceId> = picked.iter().map(|&i| dataset.train_ids()[i]).collect();
        let pool: Vec<SentenceId> = (0..n)
            .filter(|i| !chosen.contains(i))
            .map(|i| dataset.train_ids()[i])
            .collect();

        let state = SessionState {
            session_id: session_id.into(),
            seed,
            mode,
            iteration: None,
            labeled: Vec::new(),
            pool,
            ledger: CostLedger::default(),
            curve: LearningCurve::default(),
            pending: Some(PendingBatch::new(0, initial)),
            positive: None,
            rng,
            stopped: None,
            model_file: None,
            last_train: None,
            last_failure: None,
            idempotency: BTreeMap::new(),
            elapsed_seconds: 0.0,
        };
        let dir = dir.map(Path::to_path_buf);
        if let Some(d) = &dir {
            std::fs::create_dir_all(d.join("checkpoints")).map_err(|e| Error::io(d, e))?;
            write_atomic(&d.join(CONFIG_FILE), &serde_json::to_vec_pretty(&config)?)?;
        }
        let mut session = Self {
            dataset,
            config,
            state,
            model: None,
            dir,
        };
        session.persist()?;
        if mode == AnnotationMode::Oracle {
            session.step()?;
        }
        Ok(session)
    }

    /// Reloads a persisted session. The dataset must be the one it was
    /// created with.
    pub fn open(dataset: Arc<Dataset>, dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<u8>> {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let config: AlConfig = serde_json::from_slice(&read(CONFIG_FILE)?)?;
        config.validate()?;
        let state: SessionState = serde_json::from_slice(&read(STATE_FILE)?)?;
        let model = match &state.model_file {
            Some(f) => Some(crf::load_model(dir.join(f), dataset.features().registry())?),
            None => None,
        };
        let n_train = dataset.train_ids().len();
        // Pending ids stay in the pool until their batch is finished.
        let pending_in_pool = state
            .pending
            .as_ref()
            .is_none_or(|p| p.ids.iter().all(|id| state.pool.binary_search(id).is_ok()));
        if state.labeled.len() + state.pool.len() != n_train || !pending_in_pool {
            return Err(Error::Session(format!(
                "session at {} does not match the dataset split",
                dir.display()
            )));
        }
        Ok(Self {
            dataset,
            config,
            state,
            model,
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn config(&self) -> &AlConfig {
        &self.config
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn model(&self) -> Option<&CrfModel> {
        self.model.as_ref()
    }

    pub fn curve(&self) -> &LearningCurve {
        &self.state.curve
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn is_finished(&self) -> bool {
        self.state.stopped.is_some()
    }

    fn persist(&self) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let mut csv = Vec::new();
        self.state.curve.write_csv(&mut csv)?;
        write_atomic(&dir.join(CURVE_FILE), &csv)?;
        write_atomic(&dir.join(STATE_FILE), &serde_json::to_vec(&self.state)?)
    }

    /// The batch awaiting labels, computing the next query if needed.
    /// `None` once the session has stopped.
    pub fn query(&mut self) -> Result<Option<&PendingBatch>> {
        if self.state.stopped.is_some() {
            return Ok(None);
        }
        if self.state.pending.is_none() {
            let t0 = Instant::now();
            let batch = self.next_batch()?;
            self.state.elapsed_seconds += t0.elapsed().as_secs_f64();
            self.state.pending = Some(batch);
            self.persist()?;
        }
        Ok(self.state.pending.as_ref())
    }

    /// Recomputes `P'` when the strategy needs it.
    fn refresh_positive(&mut self, iteration: usize) -> Result<()> {
        let params = &self.config.positive;
        if !params.recompute_each_iteration && self.state.positive.is_some() {
            return Ok(());
        }
        let corpus = self.dataset.corpus();
        let scheme = corpus.label_scheme();
        let mut labels: HashMap<usize, i32> = HashMap::new();
        if params.recompute_each_iteration {
            for ls in &self.state.labeled {
                for (tok, &tag) in corpus.sentence(ls.id).tokens.iter().zip(&ls.tags) {
                    labels.insert(tok.global_index, supervision_class(scheme, tag));
                }
            }
        }
        let pipeline = self.dataset.pipeline(params)?;
        let seed = self
            .state
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(iteration as u64);
        let run = pipeline.run(&|t| labels.get(&t).copied(), seed)?;
        let metrics = run.metrics(corpus);
        let ps = &run.positive;
        self.state.positive = Some(PositiveSnapshot {
            iteration,
            seed,
            n_labeled_tokens: run.n_labeled,
            p_prime: ps.global_indices(),
            n_p: ps.p().len(),
            n_t: ps.t().len(),
            cluster_sizes: run.clusters.sizes.clone(),
            n_noise: run.clusters.n_noise,
            largest_cluster: ps.largest_cluster,
            no_clusters: ps.no_clusters,
            largest_tied: ps.largest_tied,
            metrics,
        });
        Ok(())
    }

    /// Steps (a) to (c): positive set, pool scoring, top-k selection.
    fn next_batch(&mut self) -> Result<PendingBatch> {
        let j = self.state.iteration.map_or(0, |i| i + 1);
        if self.model.is_none() {
            return Err(Error::Session("no trained model".into()));
        }
        let k = batch_size(j as u32, self.config.m, self.state.pool.len());
        let strategy = self.config.strategy;
        if strategy.aggregation.needs_positive_set() {
            self.refresh_positive(j)?;
        }
        let model = self.model.as_ref().expect("checked above");
        let ds = Arc::clone(&self.dataset);
        let corpus = ds.corpus();
        let density = Some(ds.density());
        let mask: Option<Vec<bool>> = self.state.positive.as_ref().map(|p| {
            let mut m = vec![false; corpus.n_tokens()];
            for &i in &p.p_prime {
                m[i] = true;
            }
            m
        });
        let positive: Option<&dyn TokenSet> = match (&mask, strategy.aggregation.needs_positive_set()) {
            (Some(m), true) => Some(m),
            _ => None,
        };
        let scores: Vec<SentenceScore> = if strategy.is_uncertainty() {
            self.state
                .pool
                .par_iter()
                .map(|&id| {
                    let sentence = corpus.sentence(id);
                    let (marg, vit) = decode(model, ds.features().get(id), ds.embeddings())?;
                    score_sentence(strategy, sentence, &marg, &vit, positive, density)
                })
                .collect::<Result<_>>()?
        } else {
            let rng = &mut self.state.rng;
            self.state
                .pool
                .iter()
                .map(|&id| baseline_score(strategy.aggregation, corpus.sentence(id), positive, density, rng))
                .collect::<Result<_>>()?
        };
        let selection = rank_select(&scores, k);
        Ok(PendingBatch::new(j, selection.ids))
    }

    /// Records labels for one sentence of the pending batch. A repeated
    /// idempotency key returns the first outcome and changes nothing.
    pub fn submit(&mut self, id: SentenceId, tags: Vec<TagId>, key: Option<&str>) -> Result<SubmitOutcome> {
        if let Some(prev) = key.and_then(|k| self.state.idempotency.get(k)) {
            return Ok(SubmitOutcome {
                duplicate: true,
                ..*prev
            });
        }
        let scheme = self.dataset.corpus().label_scheme();
        let sentence = self
            .dataset
            .corpus()
            .get(id)
            .ok_or_else(|| Error::Session(format!("unknown sentence {id}")))?;
        let pending = self
            .state
            .pending
            .as_mut()
            .ok_or_else(|| Error::Session("no batch is awaiting annotation".into()))?;
        let pos = pending
            .ids
            .iter()
            .position(|&x| x == id)
            .ok_or_else(|| Error::Session(format!("sentence {id} is not in the pending batch")))?;
        if tags.len() != sentence.n_tokens() {
            return Err(Error::DimensionMismatch {
                expected: sentence.n_tokens(),
                found: tags.len(),
            });
        }
        if let Some(&bad) = tags.iter().find(|&&t| t >= scheme.num_tags()) {
            return Err(Error::UnknownTag(bad.to_string()));
        }
        let mut tags = tags;
        normalize_bio2(scheme, &mut tags);
        pending.received[pos] = Some(tags);
        let outcome = SubmitOutcome {
            sentence: id,
            remaining: pending.remaining(),
            batch_complete: pending.is_complete(),
            duplicate: false,
        };
        if let Some(k) = key {
            self.state.idempotency.insert(k.to_string(), outcome);
        }
        self.persist()?;
        Ok(outcome)
    }

    /// Steps (e) to (h) once every sentence of the pending batch is labeled:
    /// move the batch into `L`, charge the ledger, retrain, evaluate, append
    /// the curve point and persist. On failure the pre-step state is kept and
    /// the error recorded.
    pub fn finish_batch(&mut self) -> Result<CurvePoint> {
        let t0 = Instant::now();
        let pending = match &self.state.pending {
            Some(p) if p.is_complete() => p.clone(),
            Some(p) => {
                return Err(Error::Session(format!("{} sentences still unlabeled", p.remaining())));
            }
            None => return Err(Error::Session("no pending batch".into())),
        };
        let ds = Arc::clone(&self.dataset);
        let corpus = ds.corpus();
        let mut next = self.state.clone();
        let j = pending.iteration;
        let batch: HashSet<SentenceId> = pending.ids.iter().copied().collect();
        next.pool.retain(|id| !batch.contains(id));
        next.ledger
            .record(j, pending.ids.iter().map(|&id| corpus.sentence(id).n_tokens()));
        for (id, tags) in pending.ids.iter().zip(pending.received) {
            next.labeled.push(LabeledSentence {
                id: *id,
                tags: tags.expect("complete batch"),
            });
        }
        next.pending = None;

        let trained = {
            let refs: Vec<LabeledRef<'_>> = next
                .labeled
                .iter()
                .map(|ls| LabeledRef {
                    features: ds.features().get(ls.id),
                    tags: &ls.tags,
                })
                .collect();
            crf::train(corpus.label_scheme(), ds.features().registry(), &refs, ds.embeddings(), &self.config.train)
        };
        let (model, report) = match trained {
            Ok(r) => r,
            Err(e) => {
                self.state.last_failure = Some(format!("iteration {j}: {e}"));
                self.persist()?;
                return Err(e);
            }
        };
        let prf = evaluate(&model, ds.features(), corpus, ds.test_ids(), ds.embeddings())?;
        next.elapsed_seconds += t0.elapsed().as_secs_f64();
        let point = CurvePoint {
            iteration: j,
            sentences: next.ledger.sentences,
            tokens: next.ledger.tokens,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            wall_seconds: if self.config.record_wall_time {
                next.elapsed_seconds
            } else {
                0.0
            },
        };
        next.curve.points.push(point);
        next.iteration = Some(j);
        next.last_train = Some(report);
        next.last_failure = None;
        next.stopped = self.stop_reason(&next);

        if let Some(dir) = &self.dir {
            let name = format!("checkpoints/model_{j:04}.acrf");
            let mut bytes = Vec::new();
            crf::write_model_to(&model, &mut bytes).map_err(|e| Error::io(dir.join(&name), e))?;
            write_atomic(&dir.join(&name), &bytes)?;
            next.model_file = Some(name);
            write_atomic(
                &dir.join(format!("checkpoints/state_{j:04}.json")),
                &serde_json::to_vec(&next)?,
            )?;
        }
        self.state = next;
        self.model = Some(model);
        self.persist()?;
        Ok(point)
    }

    fn stop_reason(&self, s: &SessionState) -> Option<StopReason> {
        let last = s.curve.last()?;
        for c in &self.config.stop {
            let hit = match *c {
                StopCriterion::PoolExhausted => s.pool.is_empty(),
                StopCriterion::TokenBudget { tokens } => s.ledger.tokens >= tokens,
                StopCriterion::SentenceBudget { sentences } => s.ledger.sentences >= sentences,
                StopCriterion::TargetF1 { f1 } => last.f1 >= f1,
                StopCriterion::Convergence { min_delta, patience } => {
                    let p = &s.curve.points;
                    p.len() > patience && p.windows(2).rev().take(patience).all(|w| w[1].f1 - w[0].f1 < min_delta)
                }
            };
            if hit {
                return Some(match c {
                    StopCriterion::PoolExhausted => StopReason::PoolExhausted,
                    StopCriterion::TokenBudget { .. } => StopReason::TokenBudget,
                    StopCriterion::SentenceBudget { .. } => StopReason::SentenceBudget,
                    StopCriterion::TargetF1 { .. } => StopReason::TargetF1,
                    StopCriterion::Convergence { .. } => StopReason::Converged,
                });
            }
        }
        if s.pool.is_empty() {
            Some(StopReason::PoolExhausted)
        } else if s.curve.points.len() >= self.config.max_iterations {
            Some(StopReason::MaxIterations)
        } else {
            None
        }
    }

    /// One full oracle iteration: query, copy gold labels, retrain.
    /// Returns `None` when the session has already stopped.
    pub fn step(&mut self) -> Result<Option<CurvePoint>> {
        if self.state.mode != AnnotationMode::Oracle {
            return Err(Error::Session("step() needs oracle mode; submit labels instead".into()));
        }
        let ds = Arc::clone(&self.dataset);
        let Some(batch) = self.query()? else {
            return Ok(None);
        };
        let corpus = ds.corpus();
        let mut batch = batch.clone();
        for (id, slot) in batch.ids.iter().zip(batch.received.iter_mut()) {
            if slot.is_none() {
                *slot = Some(corpus.sentence(*id).gold_tags());
            }
        }
        self.state.pending = Some(batch);
        self.finish_batch().map(Some)
    }

    /// Steps until a stop criterion fires.
    pub fn run(&mut self) -> Result<&LearningCurve> {
        while self.step()?.is_some() {}
        Ok(&self.state.curve)
    }

    /// Current Viterbi tags for the given sentences, for pre-filling the
    /// annotation form. Empty vectors before the first model exists.
    pub fn suggestions(&self, ids: &[SentenceId]) -> Result<Vec<Vec<TagId>>> {
        match &self.model {
            Some(m) => self
                .dataset
                .features()
                .predict(m, ids, self.dataset.embeddings()),
            None => Ok(vec![Vec::new(); ids.len()]),
        }
    }
}
