use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian kernel density over sentence token counts, truncated to
/// `[0, inf)` and renormalized so it integrates to one there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenCountDensity {
    /// Distinct lengths with their multiplicities.
    support: Vec<(f64, f64)>,
    n: f64,
    bandwidth: f64,
    /// Mass of the untruncated mixture on `[0, inf)`.
    mass: f64,
    /// Set when every length was identical and the unit bandwidth fallback
    /// was used.
    degenerate: bool,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule of thumb `0.9 min(sd, IQR / 1.34) n^(-1/5)`. Falls back
/// to `sd` when the IQR is zero; `None` when the sample has no spread.
pub fn silverman_bandwidth(sample: &[f64]) -> Option<f64> {
    let n = sample.len();
    if n < 2 {
        return None;
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return None;
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Some(0.9 * spread * (n as f64).powf(-0.2))
}

impl TokenCountDensity {
    pub fn fit(lengths: &[usize]) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let sample: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
        let (bandwidth, degenerate) = match silverman_bandwidth(&sample) {
            Some(h) => (h, false),
            None => {
                tracing::warn!("all sentence lengths identical; using unit bandwidth");
                (1.0, true)
            }
        };
        let mut counts = std::collections::BTreeMap::new();
        for &l in lengths {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        let support: Vec<(f64, f64)> = counts.into_iter().map(|(l, c)| (l as f64, c as f64)).collect();
        let n = lengths.len() as f64;
        let mass = support
            .iter()
            .map(|&(l, c)| c * 0.5 * libm::erfc(-l / (bandwidth * std::f64::consts::SQRT_2)))
            .sum::<f64>()
            / n;
        Ok(Self {
            support,
            n,
            bandwidth,
            mass,
            degenerate,
        })
    }

    /// Fits on every sentence of the corpus.
    pub fn fit_corpus(corpus: &Corpus) -> Result<Self> {
        let lengths: Vec<usize> = corpus.sentences().iter().map(|s| s.n_tokens()).collect();
        Self::fit(&lengths)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn max_length(&self) -> f64 {
        self.support.last().map_or(0.0, |s| s.0)
    }

    /// `p_L(x)`; zero for negative `x`.
    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let h = self.bandwidth;
        let s: f64 = self
            .support
            .iter()
            .map(|&(l, c)| {
                let z = (x - l) / h;
                c * INV_SQRT_2PI * (-0.5 * z * z).exp()
            })
            .sum();
        s / (self.n * h * self.mass)
    }

    /// `P(L <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let h = self.bandwidth * std::f64::consts::SQRT_2;
        let s: f64 = self
            .support
            .iter()
            .map(|&(l, c)| c * 0.5 * (libm::erfc(-(x - l) / h) - libm::erfc(l / h)))
            .sum();
        s / (self.n * self.mass)
    }
}
