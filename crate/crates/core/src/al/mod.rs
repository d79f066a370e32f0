//! Pool-based active learning: sessions, cost accounting and multi-seed
//! summaries.

mod dataset;
mod experiment;
mod session;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crf::TrainConfig;
use crate::error::{Error, Result};
use crate::positive::PositiveIdParams;
use crate::scoring::{AggregationStrategy, Strategy, UncertaintyMeasure};

pub use dataset::Dataset;
pub use experiment::{run_experiment, ExperimentOutcome};
pub use session::{
    AnnotationMode, LabeledSentence, PendingBatch, PositiveSnapshot, Session, SessionState,
    SessionStatus, SubmitOutcome,
};

/// When a session stops querying. A session also always stops when the pool
/// runs dry or `max_iterations` models have been trained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StopCriterion {
    PoolExhausted,
    TokenBudget { tokens: usize },
    SentenceBudget { sentences: usize },
    TargetF1 { f1: f64 },
    /// F1 improved by less than `min_delta` in each of the last `patience`
    /// iterations.
    Convergence { min_delta: f64, patience: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PoolExhausted,
    MaxIterations,
    TokenBudget,
    SentenceBudget,
    TargetF1,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlConfig {
    /// The initial labeled set has `2^m` sentences.
    pub m: u32,
    pub strategy: Strategy,
    /// Number of trained models (curve points), the initial one included.
    pub max_iterations: usize,
    pub stop: Vec<StopCriterion>,
    pub n_repeats: usize,
    pub base_seed: u64,
    pub positive: PositiveIdParams,
    pub train: TrainConfig,
    /// Write elapsed seconds into the curve. Off by default so that curves
    /// of identical runs are byte-identical.
    pub record_wall_time: bool,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            m: 4,
            strategy: Strategy::uncertainty(AggregationStrategy::TotalPos, UncertaintyMeasure::TE),
            max_iterations: 10,
            stop: vec![StopCriterion::PoolExhausted],
            n_repeats: 9,
            base_seed: 0,
            positive: PositiveIdParams::default(),
            train: TrainConfig::default(),
            record_wall_time: false,
        }
    }
}

impl AlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m > 40 {
            return Err(Error::config("m", "initial batch 2^m is unreasonably large"));
        }
        if self.n_repeats == 0 {
            return Err(Error::config("n_repeats", "must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be at least 1"));
        }
        if self.stop.is_empty() {
            return Err(Error::config("stop", "need at least one stop criterion"));
        }
        for s in &self.stop {
            match *s {
                StopCriterion::TargetF1 { f1 } if !(0.0..=1.0).contains(&f1) => {
                    return Err(Error::config("stop.f1", "must lie in [0, 1]"));
                }
                StopCriterion::Convergence { min_delta, patience } if !(min_delta >= 0.0) || patience == 0 => {
                    return Err(Error::config("stop.convergence", "needs min_delta >= 0 and patience >= 1"));
                }
                _ => {}
            }
        }
        self.positive.validate()?;
        self.train.validate()
    }

    /// Seeds of the repeated runs.
    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.n_repeats as u64).map(|i| self.base_seed + i)
    }
}

/// `2^(j+m)` capped at the pool size.
pub fn batch_size(j: u32, m: u32, pool: usize) -> usize {
    let e = j.saturating_add(m);
    let k = if e >= usize::BITS - 1 { usize::MAX } else { 1usize << e };
    k.min(pool)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub iteration: usize,
    pub sentences: usize,
    pub tokens: usize,
}

/// Cumulative annotation cost in sentences and tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub sentences: usize,
    pub tokens: usize,
    pub deltas: Vec<LedgerEntry>,
}

impl CostLedger {
    pub fn record(&mut self, iteration: usize, lengths: impl IntoIterator<Item = usize>) {
        let (mut s, mut t) = (0, 0);
        for n in lengths {
            s += 1;
            t += n;
        }
        self.sentences += s;
        self.tokens += t;
        self.deltas.push(LedgerEntry {
            iteration,
            sentences: s,
            tokens: t,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub sentences: usize,
    pub tokens: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let points = r.deserialize().collect::<std::result::Result<Vec<CurvePoint>, _>>()?;
        Ok(Self { points })
    }

    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }
}

/// Cost axis of a learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostAxis {
    Sentences,
    Tokens,
}

/// Cost at which a curve first reaches an F1 level, or why it does not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reach {
    At(f64),
    NotReached,
}

impl Reach {
    pub fn value(self) -> Option<f64> {
        match self {
            Reach::At(v) => Some(v),
            Reach::NotReached => None,
        }
    }
}

/// Cost at the first point with `f1 >= level`, linearly interpolated on the
/// cost axis against the previous point.
pub fn cost_to_reach(curve: &LearningCurve, level: f64, axis: CostAxis) -> Result<Reach> {
    if curve.points.is_empty() {
        return Err(Error::InvalidArgument("empty learning curve".into()));
    }
    let cost = |p: &CurvePoint| match axis {
        CostAxis::Sentences => p.sentences as f64,
        CostAxis::Tokens => p.tokens as f64,
    };
    let Some(i) = curve.points.iter().position(|p| p.f1 >= level) else {
        return Ok(Reach::NotReached);
    };
    let hit = &curve.points[i];
    if i == 0 || hit.f1 == level {
        return Ok(Reach::At(cost(hit)));
    }
    let prev = &curve.points[i - 1];
    let frac = (level - prev.f1) / (hit.f1 - prev.f1);
    Ok(Reach::At(cost(prev) + frac * (cost(hit) - cost(prev))))
}

pub fn tokens_to_reach(curve: &LearningCurve, level: f64) -> Result<Reach> {
    cost_to_reach(curve, level, CostAxis::Tokens)
}

/// Mean and standard error; the error is `None` for a single value.
pub fn mean_sem(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub iteration: usize,
    pub n_runs: usize,
    pub sentences: f64,
    pub tokens: f64,
    pub tokens_sem: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_sem: Option<f64>,
}

/// Learning curves of repeated runs and their per-iteration aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    pub curves: Vec<LearningCurve>,
    /// Seeds whose session failed, with the error.
    pub failures: Vec<(u64, String)>,
    pub points: Vec<SummaryPoint>,
}

impl RunSummary {
    /// Aggregates curves over the iterations present in every one of them.
    pub fn from_curves(strategy: Strategy, seeds: Vec<u64>, curves: Vec<LearningCurve>) -> Self {
        let common = curves.iter().map(|c| c.points.len()).min().unwrap_or(0);
        let points = (0..common)
            .map(|i| {
                let col = |f: fn(&CurvePoint) -> f64| -> Vec<f64> { curves.iter().map(|c| f(&c.points[i])).collect() };
                let (sentences, _) = mean_sem(&col(|p| p.sentences as f64));
                let (tokens, tokens_sem) = mean_sem(&col(|p| p.tokens as f64));
                let (precision, _) = mean_sem(&col(|p| p.precision));
                let (recall, _) = mean_sem(&col(|p| p.recall));
                let (f1, f1_sem) = mean_sem(&col(|p| p.f1));
                SummaryPoint {
                    iteration: curves[0].points[i].iteration,
                    n_runs: curves.len(),
                    sentences,
                    tokens,
                    tokens_sem,
                    precision,
                    recall,
                    f1,
                    f1_sem,
                }
            })
            .collect();
        Self {
            strategy,
            seeds,
            curves,
            failures: Vec::new(),
            points,
        }
    }

    /// Per-seed cost to reach `level`.
    pub fn reach(&self, level: f64, axis: CostAxis) -> Vec<Reach> {
        self.curves
            .iter()
            .map(|c| cost_to_reach(c, level, axis).unwrap_or(Reach::NotReached))
            .collect()
    }

    /// Mean cost over seeds, `None` if any seed never reached `level`.
    pub fn mean_reach(&self, level: f64, axis: CostAxis) -> Option<f64> {
        let r: Option<Vec<f64>> = self.reach(level, axis).into_iter().map(Reach::value).collect();
        r.filter(|v| !v.is_empty()).map(|v| mean_sem(&v).0)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iteration", "n_runs", "sentences", "tokens", "tokens_sem", "precision", "recall", "f1", "f1_sem",
        ])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for p in &self.points {
            w.write_record([
                p.iteration.to_string(),
                p.n_runs.to_string(),
                p.sentences.to_string(),
                p.tokens.to_string(),
                opt(p.tokens_sem),
                p.precision.to_string(),
                p.recall.to_string(),
                p.f1.to_string(),
                opt(p.f1_sem),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
