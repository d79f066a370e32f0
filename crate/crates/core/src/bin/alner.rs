use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use alner::corpus::{corpus_stats, write_conll};
use alner::embedding::write_embf;
use alner::interface::{cli_run, server, ExperimentConfig, Report, RunOptions};

#[derive(Parser)]
#[command(name = "alner", version, about = "Active learning for NER")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load and validate a config's corpus and embeddings; print statistics.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        /// Also write corpus.conll, embeddings.embf, split id files and stats.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured strategy over all seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Wipe a non-empty output directory.
        #[arg(long)]
        force: bool,
        /// Continue interrupted sessions in the output directory.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Serve interactive sessions over HTTP. Each config registers a dataset
    /// under its `name`.
    Serve {
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Session directory; existing sessions are reopened.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare completed run directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8")]
        levels: Vec<f64>,
    },
}

fn main() -> std::process::ExitCode {
    match run() {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::Ingest { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (corpus, emb) = cfg.load_data()?;
            let split = cfg.split(&corpus)?;
            let stats = corpus_stats(&corpus);
            println!("{}", serde_json::to_string_pretty(&stats)?);
            println!(
                "split: {} train / {} validation / {} test; embeddings dim {}",
                split.train.len(),
                split.validation.len(),
                split.test.len(),
                emb.dim()
            );
            if let Some(out) = out {
                std::fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
                let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("corpus.conll"))?);
                write_conll(&corpus, &mut f)?;
                f.flush()?;
                write_embf(&emb, out.join("embeddings.embf"))?;
                for (name, ids) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
                    let text: String = ids.iter().map(|id| format!("{}\n", id.0)).collect();
                    std::fs::write(out.join(format!("{name}.ids")), text)?;
                }
                std::fs::write(out.join("stats.json"), serde_json::to_vec_pretty(&stats)?)?;
            }
        }
        Cmd::Run {
            config,
            out,
            force,
            resume,
            seed_offset,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let opts = RunOptions {
                out,
                force,
                resume,
                seed_offset,
            };
            let art = cli_run(&cfg, &opts)?;
            for s in &art.summaries {
                let last = s.points.last();
                println!(
                    "{:6} seeds {:2}  final F1 {:.3}  tokens {:.0}",
                    s.strategy.to_string(),
                    s.seeds.len(),
                    last.map_or(0.0, |p| p.f1),
                    last.map_or(0.0, |p| p.tokens)
                );
            }
            println!("results in {}", art.out.display());
        }
        Cmd::Serve { config, bind, out } => {
            let mut datasets = BTreeMap::new();
            for path in &config {
                let cfg = ExperimentConfig::load(path)?;
                let name = cfg.name.clone();
                anyhow::ensure!(!datasets.contains_key(&name), "dataset `{name}` registered twice");
                datasets.insert(name, cfg.dataset()?);
            }
            let state = server::AppState::new(datasets, out)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(&bind, state))?;
        }
        Cmd::Report { dirs, out, levels } => {
            let report = Report::build(&dirs, &levels)?;
            for g in &report.groups {
                for w in &g.warnings {
                    eprintln!("warning: {}: {w}", g.name);
                }
            }
            match out {
                Some(o) => {
                    report.write(&o)?;
                    println!("wrote {}", o.join("report.md").display());
                }
                None => print!("{}", report.to_markdown()),
            }
        }
    }
    Ok(())
}
