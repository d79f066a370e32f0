//! Run two strategies into a scratch directory with the batch runner, then
//! build the comparison report: F1 ± SEM per iteration, tokens needed to
//! reach each F1 level, and the fewest-tokens winner per level.
//!
//! cargo run --release --example report -- [out_dir]

use alner::interface::{cli_run, ExperimentConfig, Report, RunOptions};

fn main() -> alner::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("alner_report"));

    let config = ExperimentConfig::from_json(
        r#"{
            "name": "synthetic",
            "corpus": {"kind": "synthetic", "spec": {"n_sentences": 500}, "seed": 2},
            "split": {"kind": "fractions", "train": 0.7, "validation": 0.1, "test": 0.2, "seed": 2},
            "al": {"m": 2, "max_iterations": 5, "n_repeats": 2},
            "strategies": ["RS", "tTE"]
        }"#,
    )?;
    let run = cli_run(
        &config,
        &RunOptions {
            out: Some(out.join("run")),
            force: true,
            ..Default::default()
        },
    )?;
    println!("ran {} strategies in {:.1}s", run.summaries.len(), run.metadata.total_seconds);

    let report = Report::build(&[run.out], &[0.5, 0.6, 0.7, 0.8])?;
    print!("{}", report.to_markdown());
    report.write(&out)?;
    println!("\nwrote {}", out.join("report.md").display());
    Ok(())
}
