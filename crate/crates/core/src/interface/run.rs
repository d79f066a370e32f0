use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::al::{run_experiment, AlConfig, RunSummary};
use crate::corpus::CorpusStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output_dir` of the config.
    pub out: Option<PathBuf>,
    /// Wipe a non-empty output directory first.
    pub force: bool,
    /// Continue the sessions found in the output directory.
    pub resume: bool,
    /// Added to `al.base_seed`.
    pub seed_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTiming {
    pub strategy: String,
    pub seeds: Vec<u64>,
    pub seconds: Vec<f64>,
    pub failures: Vec<(u64, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub git_hash: Option<String>,
    pub started_unix: u64,
    pub total_seconds: f64,
    pub seeds: Vec<u64>,
    pub effective_c1: f64,
    pub orthant_wise: bool,
    pub train_stats: CorpusStats,
    pub n_train: usize,
    pub n_test: usize,
    pub strategies: Vec<StrategyTiming>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out: PathBuf,
    pub summaries: Vec<RunSummary>,
    pub metadata: RunMetadata,
}

fn git_hash() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn is_nonempty_dir(p: &Path) -> bool {
    std::fs::read_dir(p).is_ok_and(|mut d| d.next().is_some())
}

/// Runs every configured strategy into `<out>/<strategy>/` and writes the
/// effective config snapshot (`config.json`) and `metadata.json`.
pub fn cli_run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunArtifacts> {
    let mut config = config.clone();
    config.al.base_seed += opts.seed_offset;
    config.validate()?;
    let out = opts
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::config("output_dir", "no output directory given"))?;
    config.output_dir = Some(out.clone());

    let snapshot = serde_json::to_vec_pretty(&config)?;
    if is_nonempty_dir(&out) {
        if opts.force {
            std::fs::remove_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        } else if opts.resume {
            let prev = std::fs::read(out.join("config.json")).map_err(|e| Error::io(out.join("config.json"), e))?;
            let prev: ExperimentConfig = serde_json::from_slice(&prev)?;
            if prev != config {
                return Err(Error::Session("config differs from the snapshot in the output directory".into()));
            }
        } else {
            return Err(Error::OutputExists(out));
        }
    }
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    std::fs::write(out.join("config.json"), &snapshot).map_err(|e| Error::io(out.join("config.json"), e))?;

    let t0 = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let dataset = config.dataset()?;
    let mut summaries = Vec::new();
    let mut timings = Vec::new();
    for strategy in config.strategies() {
        let al = AlConfig {
            strategy,
            ..config.al.clone()
        };
        let dir = out.join(strategy.to_string());
        tracing::info!(%strategy, dir = %dir.display(), "running");
        let outcome = run_experiment(&dataset, &al, Some(&dir))?;
        timings.push(StrategyTiming {
            strategy: strategy.to_string(),
            seeds: outcome.timings.iter().map(|t| t.seed).collect(),
            seconds: outcome.timings.iter().map(|t| t.seconds).collect(),
            failures: outcome.summary.failures.clone(),
        });
        summaries.push(outcome.summary);
    }

    let train_stats = {
        let c = dataset.corpus();
        let lengths: Vec<usize> = dataset.train_ids().iter().map(|&id| c.sentence(id).n_tokens()).collect();
        let n_pos: usize = dataset.train_ids().iter().map(|&id| c.sentence(id).n_positive()).sum();
        let n_tokens: usize = lengths.iter().sum();
        let n = lengths.len() as f64;
        CorpusStats {
            n_sentences: lengths.len(),
            n_tokens,
            mean_tokens_per_sentence: n_tokens as f64 / n,
            mean_positive_per_sentence: n_pos as f64 / n,
            positive_fraction: n_pos as f64 / n_tokens.max(1) as f64,
        }
    };
    let metadata = RunMetadata {
        version: env!("CARGO_PKG_VERSION").to_string(),
        git_hash: git_hash(),
        started_unix,
        total_seconds: t0.elapsed().as_secs_f64(),
        seeds: config.al.seeds().collect(),
        effective_c1: config.al.train.effective_c1(),
        orthant_wise: config.al.train.orthant_wise,
        train_stats,
        n_train: dataset.train_ids().len(),
        n_test: dataset.test_ids().len(),
        strategies: timings,
    };
    std::fs::write(out.join("metadata.json"), serde_json::to_vec_pretty(&metadata)?)
        .map_err(|e| Error::io(out.join("metadata.json"), e))?;
    Ok(RunArtifacts {
        out,
        summaries,
        metadata,
    })
}
