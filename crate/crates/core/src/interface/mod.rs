//! Config files, batch runs, reports and the HTTP service.

mod config;
mod report;
mod run;
pub mod server;

pub use config::{CorpusSource, EmbeddingSource, ExperimentConfig, SplitSpec};
pub use report::{load_run_dir, MatchedCost, Report, RunGroup};
pub use run::{cli_run, RunArtifacts, RunMetadata, RunOptions, StrategyTiming};
