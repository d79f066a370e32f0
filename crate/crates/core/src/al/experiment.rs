use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{AlConfig, AnnotationMode, Dataset, RunSummary, Session};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub seconds: f64,
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub summary: RunSummary,
    pub timings: Vec<SeedTiming>,
}

/// Runs `n_repeats` oracle sessions with seeds `base_seed..`. With `out`,
/// each seed persists to `out/seed_<seed>/` and a seed directory holding a
/// saved state is resumed instead of restarted. Failed seeds are recorded
/// and left out of the summary.
pub fn run_experiment(dataset: &Arc<Dataset>, config: &AlConfig, out: Option<&Path>) -> Result<ExperimentOutcome> {
    config.validate()?;
    let mut curves = Vec::new();
    let mut seeds = Vec::new();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    for seed in config.seeds() {
        let t0 = Instant::now();
        let dir = out.map(|o| o.join(format!("seed_{seed}")));
        let resumable = dir.as_ref().is_some_and(|d| d.join("state.json").exists());
        let result = (|| -> Result<_> {
            let mut s = if resumable {
                Session::open(Arc::clone(dataset), dir.as_deref().expect("dir"))?
            } else {
                Session::create(
                    Arc::clone(dataset),
                    config.clone(),
                    seed,
                    AnnotationMode::Oracle,
                    format!("{}-{seed}", config.strategy),
                    dir.as_deref(),
                )?
            };
            s.run()?;
            Ok(s.curve().clone())
        })();
        match result {
            Ok(c) => {
                curves.push(c);
                seeds.push(seed);
            }
            Err(e) => {
                tracing::warn!(seed, error = %e, "session failed");
                failures.push((seed, e.to_string()));
            }
        }
        timings.push(SeedTiming {
            seed,
            seconds: t0.elapsed().as_secs_f64(),
            resumed: resumable,
        });
    }
    if curves.is_empty() {
        return Err(Error::Session(format!(
            "all {} sessions failed: {}",
            failures.len(),
            failures.first().map_or(String::new(), |f| f.1.clone())
        )));
    }
    if !failures.is_empty() {
        tracing::warn!(failed = failures.len(), "summary covers completed runs only");
    }
    let mut summary = RunSummary::from_curves(config.strategy, seeds, curves);
    summary.failures = failures;
    if let Some(o) = out {
        let mut csv = Vec::new();
        summary.write_csv(&mut csv)?;
        let p = o.join("summary.csv");
        std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
        let p = o.join("summary.json");
        std::fs::write(&p, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(ExperimentOutcome { summary, timings })
}
