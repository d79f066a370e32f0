//! Token uncertainty, sentence aggregation, baselines and batch ranking.

mod density;

pub use density::{silverman_bandwidth, TokenCountDensity};

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, SentenceId};
use crate::crf::{MarginalTable, ViterbiResult};
use crate::error::{Error, Result};

/// Tolerance on `sum_j p_j = 1` before a distribution is rejected.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UncertaintyMeasure {
    /// Token entropy, natural log.
    TE,
    /// One minus the top marginal.
    TP,
    /// One minus the marginal of the Viterbi-assigned tag.
    AP,
    /// One minus the margin between the two top marginals.
    TM,
}

impl UncertaintyMeasure {
    pub const ALL: [Self; 4] = [Self::TE, Self::TP, Self::AP, Self::TM];

    /// Largest attainable value with `m` tags.
    pub fn upper_bound(self, m: usize) -> f64 {
        match self {
            Self::TE => (m as f64).ln(),
            Self::TP => 1.0 - 1.0 / m as f64,
            Self::AP | Self::TM => 1.0,
        }
    }
}

impl fmt::Display for UncertaintyMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TE => "TE",
            Self::TP => "TP",
            Self::AP => "AP",
            Self::TM => "TM",
        })
    }
}

/// Uncertainty of one token from its tag distribution `p` and the marginal
/// of its Viterbi tag. Results are clamped to the measure's range.
pub fn tau(measure: UncertaintyMeasure, p: &[f64], assigned: f64) -> Result<f64> {
    let sum: f64 = p.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > NORMALIZATION_TOLERANCE || p.iter().any(|&v| v < 0.0)
    {
        return Err(Error::NotNormalized(sum));
    }
    let m = p.len();
    let v = match measure {
        UncertaintyMeasure::TE => -p
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| v * v.ln())
            .sum::<f64>(),
        UncertaintyMeasure::TP => 1.0 - p.iter().copied().fold(0.0, f64::max),
        UncertaintyMeasure::AP => 1.0 - assigned,
        UncertaintyMeasure::TM => {
            let (mut a, mut b) = (0.0, 0.0);
            for &v in p {
                if v > a {
                    b = a;
                    a = v;
                } else if v > b {
                    b = v;
                }
            }
            1.0 - (a - b)
        }
    };
    Ok(v.clamp(0.0, measure.upper_bound(m)))
}

pub fn token_uncertainty(
    measure: UncertaintyMeasure,
    marginals: &MarginalTable,
    viterbi: &ViterbiResult,
    position: usize,
) -> Result<f64> {
    tau(
        measure,
        marginals.row(position),
        viterbi.assigned_marginals[position],
    )
}

pub fn token_uncertainties(
    measure: UncertaintyMeasure,
    marginals: &MarginalTable,
    viterbi: &ViterbiResult,
) -> Result<Vec<f64>> {
    (0..marginals.len())
        .map(|i| token_uncertainty(measure, marginals, viterbi, i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationStrategy {
    Single,
    Normalized,
    Total,
    TotalPos,
    DnormPos,
    Random,
    Lss,
    Pas,
}

impl AggregationStrategy {
    pub fn is_baseline(self) -> bool {
        matches!(self, Self::Random | Self::Lss | Self::Pas)
    }

    pub fn needs_positive_set(self) -> bool {
        matches!(self, Self::TotalPos | Self::DnormPos | Self::Pas)
    }

    pub fn needs_density(self) -> bool {
        matches!(self, Self::DnormPos | Self::Pas)
    }

    fn prefix(self) -> &'static str {
        match self {
            Self::Single => "s",
            Self::Normalized => "n",
            Self::Total => "t",
            Self::TotalPos => "tp",
            Self::DnormPos => "dp",
            Self::Random => "RS",
            Self::Lss => "LSS",
            Self::Pas => "PAS",
        }
    }
}

/// A query strategy: an aggregation plus, for uncertainty-based ones, a
/// token measure. Written as `tpTE`, `nAP`, `RS`, `LSS`, `PAS`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Strategy {
    pub aggregation: AggregationStrategy,
    pub measure: Option<UncertaintyMeasure>,
}

impl Strategy {
    pub fn uncertainty(aggregation: AggregationStrategy, measure: UncertaintyMeasure) -> Self {
        Self {
            aggregation,
            measure: Some(measure),
        }
    }

    pub fn baseline(aggregation: AggregationStrategy) -> Self {
        Self {
            aggregation,
            measure: None,
        }
    }

    /// The three baselines followed by all twenty uncertainty strategies.
    pub fn all() -> Vec<Self> {
        use AggregationStrategy::*;
        let mut v: Vec<Self> = [Random, Lss, Pas].into_iter().map(Self::baseline).collect();
        for agg in [Single, Normalized, Total, TotalPos, DnormPos] {
            for m in UncertaintyMeasure::ALL {
                v.push(Self::uncertainty(agg, m));
            }
        }
        v
    }

    pub fn is_uncertainty(&self) -> bool {
        self.measure.is_some()
    }

    fn validate(&self) -> Result<()> {
        if self.aggregation.is_baseline() != self.measure.is_none() {
            return Err(Error::InvalidArgument(format!(
                "strategy {:?} with measure {:?}",
                self.aggregation, self.measure
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.aggregation.prefix())?;
        if let Some(m) = self.measure {
            write!(f, "{m}")?;
        }
        Ok(())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::all()
            .into_iter()
            .find(|st| st.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy `{s}`")))
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Membership test over corpus-global token indices.
pub trait TokenSet: Sync {
    fn contains_token(&self, global_index: usize) -> bool;
}

impl TokenSet for HashSet<usize> {
    fn contains_token(&self, i: usize) -> bool {
        self.contains(&i)
    }
}

impl TokenSet for BTreeSet<usize> {
    fn contains_token(&self, i: usize) -> bool {
        self.contains(&i)
    }
}

impl TokenSet for [bool] {
    fn contains_token(&self, i: usize) -> bool {
        self.get(i).copied().unwrap_or(false)
    }
}

impl TokenSet for Vec<bool> {
    fn contains_token(&self, i: usize) -> bool {
        self.as_slice().contains_token(i)
    }
}

/// Sentence-level Φ from per-token τ values. `positive[i]` marks tokens in
/// the predicted positive set; `n_tokens` is the sentence length used for
/// the density weight.
pub fn aggregate(
    aggregation: AggregationStrategy,
    taus: &[f64],
    positive: Option<&[bool]>,
    density: Option<&TokenCountDensity>,
) -> Result<f64> {
    use AggregationStrategy::*;
    let pos_sum = || -> Result<f64> {
        let flags = positive.ok_or_else(|| Error::MissingPositiveSet(format!("{aggregation:?}")))?;
        Ok(taus
            .iter()
            .zip(flags)
            .filter(|(_, &f)| f)
            .map(|(t, _)| t)
            .sum())
    };
    let weight = || -> Result<f64> {
        let d = density.ok_or_else(|| Error::MissingDensity(format!("{aggregation:?}")))?;
        Ok(d.pdf(taus.len() as f64).sqrt())
    };
    match aggregation {
        Single => Ok(taus.iter().copied().fold(0.0, f64::max)),
        Normalized => Ok(taus.iter().sum::<f64>() / taus.len() as f64),
        Total => Ok(taus.iter().sum()),
        TotalPos => pos_sum(),
        DnormPos => Ok(weight()? * pos_sum()?),
        Random | Lss | Pas => Err(Error::InvalidArgument(format!(
            "{aggregation:?} is not an uncertainty aggregation"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub id: SentenceId,
    pub phi: f64,
}

fn positive_flags(sentence: &Sentence, positive: &dyn TokenSet) -> Vec<bool> {
    sentence
        .tokens
        .iter()
        .map(|t| positive.contains_token(t.global_index))
        .collect()
}

/// Φ for an uncertainty strategy from the current model's marginals.
pub fn score_sentence(
    strategy: Strategy,
    sentence: &Sentence,
    marginals: &MarginalTable,
    viterbi: &ViterbiResult,
    positive: Option<&dyn TokenSet>,
    density: Option<&TokenCountDensity>,
) -> Result<SentenceScore> {
    strategy.validate()?;
    let measure = strategy
        .measure
        .ok_or_else(|| Error::InvalidArgument(format!("{strategy} needs no marginals")))?;
    if marginals.len() != sentence.n_tokens() {
        return Err(Error::DimensionMismatch {
            expected: sentence.n_tokens(),
            found: marginals.len(),
        });
    }
    let taus = token_uncertainties(measure, marginals, viterbi)?;
    let flags = positive.map(|p| positive_flags(sentence, p));
    let phi = aggregate(strategy.aggregation, &taus, flags.as_deref(), density)?;
    Ok(SentenceScore {
        id: sentence.id,
        phi,
    })
}

/// Φ for the model-free baselines: a uniform key for RS, the length for LSS
/// and `sqrt(p_L(N)) * |positives|` for PAS.
pub fn baseline_score(
    aggregation: AggregationStrategy,
    sentence: &Sentence,
    positive: Option<&dyn TokenSet>,
    density: Option<&TokenCountDensity>,
    rng: &mut impl Rng,
) -> Result<SentenceScore> {
    let phi = match aggregation {
        AggregationStrategy::Random => rng.random::<f64>(),
        AggregationStrategy::Lss => sentence.n_tokens() as f64,
        AggregationStrategy::Pas => {
            let p = positive.ok_or_else(|| Error::MissingPositiveSet("PAS".into()))?;
            let d = density.ok_or_else(|| Error::MissingDensity("PAS".into()))?;
            let count = positive_flags(sentence, p).iter().filter(|&&f| f).count();
            d.pdf(sentence.n_tokens() as f64).sqrt() * count as f64
        }
        other => {
            return Err(Error::InvalidArgument(format!("{other:?} is not a baseline")));
        }
    };
    Ok(SentenceScore {
        id: sentence.id,
        phi,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub ids: Vec<SentenceId>,
    /// True when fewer than the requested number of sentences were available.
    pub truncated: bool,
}

/// Highest Φ first, ties by ascending sentence id.
pub fn rank_order(a: &SentenceScore, b: &SentenceScore) -> Ordering {
    b.phi.total_cmp(&a.phi).then(a.id.cmp(&b.id))
}

/// The `k` top-ranked sentences.
pub fn rank_select(scores: &[SentenceScore], k: usize) -> Selection {
    let mut sorted = scores.to_vec();
    sorted.sort_by(rank_order);
    let truncated = k > sorted.len();
    sorted.truncate(k);
    Selection {
        ids: sorted.into_iter().map(|s| s.id).collect(),
        truncated,
    }
}
