use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::al::{mean_sem, CostAxis, Reach, RunSummary};
use crate::error::{Error, Result};

/// Summaries of one run directory (one dataset, several strategies).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunGroup {
    pub name: String,
    pub summaries: Vec<RunSummary>,
    pub warnings: Vec<String>,
}

/// Cost to reach one F1 level, averaged over the seeds of one strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedCost {
    pub mean: f64,
    pub sem: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub levels: Vec<f64>,
    pub groups: Vec<RunGroup>,
}

/// Reads every `<dir>/<strategy>/summary.json`.
pub fn load_run_dir(dir: &Path) -> Result<RunGroup> {
    let mut summaries = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.json").is_file())
        .collect();
    entries.sort();
    for p in entries {
        let f = p.join("summary.json");
        let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
        summaries.push(serde_json::from_slice::<RunSummary>(&bytes)?);
    }
    if summaries.is_empty() {
        return Err(Error::InvalidArgument(format!("{} holds no completed run", dir.display())));
    }
    let name = dir
        .file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    let mut group = RunGroup {
        name,
        summaries,
        warnings: Vec::new(),
    };
    group.check_alignment();
    Ok(group)
}

impl RunGroup {
    fn check_alignment(&mut self) {
        let grids: Vec<Vec<usize>> = self
            .summaries
            .iter()
            .map(|s| s.points.iter().map(|p| p.iteration).collect())
            .collect();
        if grids.windows(2).any(|w| w[0] != w[1]) {
            self.warnings.push(format!(
                "iteration grids differ ({}); tables use the shared iterations",
                self.summaries
                    .iter()
                    .zip(&grids)
                    .map(|(s, g)| format!("{}: {}", s.strategy, g.len()))
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        for s in &self.summaries {
            if s.curves.len() < 2 {
                self.warnings.push(format!("{}: single run, SEM undefined", s.strategy));
            }
        }
    }

    /// Iterations present for every strategy.
    pub fn shared_iterations(&self) -> Vec<usize> {
        let mut sets = self
            .summaries
            .iter()
            .map(|s| s.points.iter().map(|p| p.iteration).collect::<BTreeSet<_>>());
        let first = sets.next().unwrap_or_default();
        sets.fold(first, |a, b| a.intersection(&b).copied().collect())
            .into_iter()
            .collect()
    }

    /// Per-strategy cost to reach `level`; `None` if some seed never did.
    pub fn matched(&self, level: f64, axis: CostAxis) -> Vec<Option<MatchedCost>> {
        self.summaries
            .iter()
            .map(|s| {
                let v: Option<Vec<f64>> = s.reach(level, axis).into_iter().map(Reach::value).collect();
                v.filter(|v| !v.is_empty()).map(|v| {
                    let (mean, sem) = mean_sem(&v);
                    MatchedCost { mean, sem }
                })
            })
            .collect()
    }

    /// Strategies needing the fewest tokens to reach `level` (several on an
    /// exact tie); empty when none reached it.
    pub fn winners(&self, level: f64) -> Vec<String> {
        let m = self.matched(level, CostAxis::Tokens);
        let best = m.iter().flatten().map(|c| c.mean).fold(f64::INFINITY, f64::min);
        self.summaries
            .iter()
            .zip(&m)
            .filter(|(_, c)| c.is_some_and(|c| c.mean == best))
            .map(|(s, _)| s.strategy.to_string())
            .collect()
    }
}

fn fmt_sem(mean: f64, sem: Option<f64>, prec: usize) -> String {
    match sem {
        Some(s) => format!("{mean:.prec$} ± {s:.prec$}"),
        None => format!("{mean:.prec$} ± n/a"),
    }
}

impl Report {
    pub fn build(dirs: &[PathBuf], levels: &[f64]) -> Result<Self> {
        if dirs.is_empty() {
            return Err(Error::InvalidArgument("no run directories given".into()));
        }
        let groups = dirs.iter().map(|d| load_run_dir(d)).collect::<Result<_>>()?;
        Ok(Self {
            levels: levels.to_vec(),
            groups,
        })
    }

    /// Mean F1 ± SEM per iteration and strategy. Sentence counts agree
    /// across strategies; token counts do not and live in the token table.
    pub fn f1_table(&self, g: &RunGroup) -> String {
        let mut s = String::new();
        let _ = write!(s, "| iteration | sentences |");
        for r in &g.summaries {
            let _ = write!(s, " {} |", r.strategy);
        }
        s.push('\n');
        s.push_str(&"|---".repeat(2 + g.summaries.len()));
        s.push_str("|\n");
        for it in g.shared_iterations() {
            let first = g.summaries[0].points.iter().find(|p| p.iteration == it).expect("shared");
            let _ = write!(s, "| {it} | {:.0} |", first.sentences);
            for r in &g.summaries {
                let p = r.points.iter().find(|p| p.iteration == it).expect("shared");
                let _ = write!(s, " {} |", fmt_sem(p.f1, p.f1_sem, 3));
            }
            s.push('\n');
        }
        s
    }

    /// Mean tokens to reach each level, per strategy.
    pub fn token_table(&self, g: &RunGroup) -> String {
        let mut s = String::from("| strategy |");
        for l in &self.levels {
            let _ = write!(s, " F1 {l} |");
        }
        s.push('\n');
        s.push_str(&"|---".repeat(1 + self.levels.len()));
        s.push_str("|\n");
        let cols: Vec<Vec<Option<MatchedCost>>> =
            self.levels.iter().map(|&l| g.matched(l, CostAxis::Tokens)).collect();
        for (i, r) in g.summaries.iter().enumerate() {
            let _ = write!(s, "| {} |", r.strategy);
            for col in &cols {
                match col[i] {
                    Some(c) => {
                        let _ = write!(s, " {} |", fmt_sem(c.mean, c.sem, 0));
                    }
                    None => s.push_str(" not reached |"),
                }
            }
            s.push('\n');
        }
        s
    }

    /// Which strategy reaches each level with the fewest tokens, one row per
    /// run directory.
    pub fn winner_grid(&self) -> String {
        let mut s = String::from("| dataset |");
        for l in &self.levels {
            let _ = write!(s, " {l} |");
        }
        s.push('\n');
        s.push_str(&"|---".repeat(1 + self.levels.len()));
        s.push_str("|\n");
        for g in &self.groups {
            let _ = write!(s, "| {} |", g.name);
            for &l in &self.levels {
                let w = g.winners(l);
                let _ = write!(s, " {} |", if w.is_empty() { "-".into() } else { w.join("/") });
            }
            s.push('\n');
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        for g in &self.groups {
            let _ = writeln!(s, "## {}\n", g.name);
            for w in &g.warnings {
                let _ = writeln!(s, "> {w}");
            }
            if !g.warnings.is_empty() {
                s.push('\n');
            }
            let _ = writeln!(s, "### F1 (mean ± SEM)\n\n{}", self.f1_table(g));
            let _ = writeln!(s, "### Tokens to reach F1\n\n{}", self.token_table(g));
        }
        let _ = writeln!(s, "## Fewest tokens per F1 level\n\n{}", self.winner_grid());
        s
    }

    /// Writes `report.md` and `matched_tokens.csv`.
    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let md = out.join("report.md");
        std::fs::write(&md, self.to_markdown()).map_err(|e| Error::io(&md, e))?;
        let path = out.join("matched_tokens.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["dataset", "strategy", "level", "mean_tokens", "sem_tokens"])?;
        for g in &self.groups {
            for &l in &self.levels {
                for (r, c) in g.summaries.iter().zip(g.matched(l, CostAxis::Tokens)) {
                    w.write_record([
                        g.name.clone(),
                        r.strategy.to_string(),
                        l.to_string(),
                        c.map_or(String::new(), |c| c.mean.to_string()),
                        c.and_then(|c| c.sem).map_or(String::new(), |v| v.to_string()),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}
