//! Experiment matrix: corpus x strategy x format x seed, each cell trained on
//! a shared split and scored on its test part.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::split_indices;
use crate::error::{Error, Result};
use crate::metrics::{full_report, mean, EvalReport, Scope};
use crate::schema::LabelSchema;
use crate::tagcodec::{AnnotatedEntry, Format};
use crate::tagger::{self, flat_view, predict_entry, Strategy, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Gold,
    Noisy,
}

impl fmt::Display for CorpusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusKind::Gold => "gold",
            CorpusKind::Noisy => "noisy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategies: Vec<Strategy>,
    pub formats: Vec<Format>,
    pub seeds: Vec<u64>,
    /// Train, dev and test fractions.
    pub split: [f64; 3],
    pub split_seed: u64,
    pub train: TrainConfig,
    /// Cells trained concurrently; 0 uses every available core.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategies: Strategy::NESTED.to_vec(),
            formats: Format::ALL.to_vec(),
            seeds: (0..5).collect(),
            split: [0.6, 0.2, 0.2],
            split_seed: 0,
            train: TrainConfig::default(),
            jobs: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(doc: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(doc).map_err(|e| Error::parse("experiment config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() || self.formats.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("strategies, formats and seeds must be non-empty".into()));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub corpus: CorpusKind,
    pub strategy: Strategy,
    pub format: Format,
    pub seed: u64,
}

impl Cell {
    /// File-name stem, e.g. `gold_M2_IO_seed0`.
    pub fn stem(&self) -> String {
        format!("{}_{}_{}_seed{}", self.corpus, self.strategy, self.format, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub report: EvalReport,
    pub best_steps: Vec<usize>,
    pub model_sha256: String,
    #[serde(skip)]
    pub model_bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell: Cell,
    pub result: std::result::Result<CellResult, String>,
}

/// Train/dev/test parts of one corpus.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<AnnotatedEntry>,
    pub dev: Vec<AnnotatedEntry>,
    pub test: Vec<AnnotatedEntry>,
}

/// Splits `gold` by seeded shuffle and the noisy corpus by the same ids.
pub fn split_corpora(
    gold: &[AnnotatedEntry],
    noisy: Option<&[AnnotatedEntry]>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Splits, Option<Splits>)> {
    let (a, b, c) = split_indices(gold.len(), (ratios[0], ratios[1], ratios[2]), seed)?;
    let pick = |ix: &[usize]| -> Vec<AnnotatedEntry> { ix.iter().map(|&i| gold[i].clone()).collect() };
    let gold_splits = Splits { train: pick(&a), dev: pick(&b), test: pick(&c) };
    let noisy_splits = match noisy {
        None => None,
        Some(noisy) => {
            let mut part: HashMap<&str, u8> = HashMap::new();
            for (k, ix) in [&a, &b, &c].into_iter().enumerate() {
                for &i in ix.iter() {
                    part.insert(gold[i].source_id.as_str(), k as u8);
                }
            }
            let mut s = Splits { train: Vec::new(), dev: Vec::new(), test: Vec::new() };
            for e in noisy {
                match part.get(e.source_id.as_str()) {
                    Some(0) => s.train.push(e.clone()),
                    Some(1) => s.dev.push(e.clone()),
                    Some(_) => s.test.push(e.clone()),
                    None => {
                        return Err(Error::Misaligned(format!(
                            "noisy entry `{}` has no gold counterpart",
                            e.source_id
                        )))
                    }
                }
            }
            Some(s)
        }
    };
    Ok((gold_splits, noisy_splits))
}

/// Trains and scores one cell.
pub fn run_cell(splits: &Splits, cell: &Cell, schema: &LabelSchema, train_cfg: &TrainConfig) -> Result<CellResult> {
    let cfg = TrainConfig { seed: cell.seed, ..train_cfg.clone() };
    let (model, history) =
        tagger::train_with_history::<f64>(&splits.train, &splits.dev, cell.strategy, cell.format, schema, &cfg)?;
    let pred: Vec<AnnotatedEntry> = splits.test.iter().map(|e| predict_entry(&model, e)).collect();
    let report = if cell.strategy == Strategy::Flat {
        let gold: Vec<AnnotatedEntry> = splits.test.iter().map(|e| flat_view(e, cell.format, schema)).collect();
        full_report(&gold, &pred, schema, cell.format)?
    } else {
        full_report(&splits.test, &pred, schema, cell.format)?
    };
    let model_bytes = model.to_bytes();
    Ok(CellResult {
        report,
        best_steps: history.best_step,
        model_sha256: hex(&Sha256::digest(&model_bytes)),
        model_bytes,
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs every cell; failures are recorded per cell and do not stop the rest.
pub fn run_experiment(
    gold: &[AnnotatedEntry],
    noisy: Option<&[AnnotatedEntry]>,
    schema: &LabelSchema,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (gold_splits, noisy_splits) = split_corpora(gold, noisy, cfg.split, cfg.split_seed)?;
    let mut cells = Vec::new();
    let corpora: Vec<(CorpusKind, &Splits)> = std::iter::once((CorpusKind::Gold, &gold_splits))
        .chain(noisy_splits.as_ref().map(|s| (CorpusKind::Noisy, s)))
        .collect();
    for &(corpus, _) in &corpora {
        for &strategy in &cfg.strategies {
            for &format in &cfg.formats {
                for &seed in &cfg.seeds {
                    cells.push(Cell { corpus, strategy, format, seed });
                }
            }
        }
    }
    cells.sort();
    cells.dedup();
    let splits_of = |k: CorpusKind| corpora.iter().find(|(c, _)| *c == k).map(|(_, s)| *s).expect("corpus present");
    let run = |cell: &Cell| CellOutcome {
        cell: *cell,
        result: run_cell(splits_of(cell.corpus), cell, schema, &cfg.train).map_err(|e| e.to_string()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes = pool.install(|| cells.par_iter().map(run).collect());
    Ok(ExperimentReport { outcomes })
}

/// Results of a matrix run, ordered by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub outcomes: Vec<CellOutcome>,
}

type GroupKey = (CorpusKind, Strategy, Format);

impl ExperimentReport {
    fn groups(&self) -> BTreeMap<GroupKey, Vec<&CellResult>> {
        let mut out: BTreeMap<GroupKey, Vec<&CellResult>> = BTreeMap::new();
        for o in &self.outcomes {
            let slot = out.entry((o.cell.corpus, o.cell.strategy, o.cell.format)).or_default();
            if let Ok(r) = &o.result {
                slot.push(r);
            }
        }
        out
    }

    pub fn failures(&self) -> Vec<(&Cell, &str)> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().err().map(|e| (&o.cell, e.as_str())))
            .collect()
    }

    /// Mean F1 over the successful seeds of a group.
    pub fn mean_f1(&self, corpus: CorpusKind, strategy: Strategy, format: Format, scope: Scope) -> Option<f64> {
        let g = self.groups();
        let rs = g.get(&(corpus, strategy, format)).filter(|v| !v.is_empty())?;
        Some(mean(&rs.iter().map(|r| r.report.f1(scope)).collect::<Vec<_>>()))
    }

    /// Mean per-type F1; seeds where the type never occurs count as zero.
    pub fn mean_type_f1(&self, corpus: CorpusKind, strategy: Strategy, format: Format, etype: &str) -> Option<f64> {
        let g = self.groups();
        let rs = g.get(&(corpus, strategy, format)).filter(|v| !v.is_empty())?;
        Some(mean(
            &rs.iter()
                .map(|r| r.report.per_type.get(etype).map_or(0.0, |p| p.f1))
                .collect::<Vec<_>>(),
        ))
    }

    pub fn total_violations(&self, corpus: CorpusKind, strategy: Strategy) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.cell.corpus == corpus && o.cell.strategy == strategy)
            .filter_map(|o| o.result.as_ref().ok())
            .map(|r| r.report.violations)
            .sum()
    }

    /// One row per cell.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("corpus,strategy,format,seed,status");
        for s in Scope::ALL {
            let _ = write!(out, ",f1_{}", s.name());
        }
        out.push_str(",violations,best_steps,model_sha256\n");
        for o in &self.outcomes {
            let c = &o.cell;
            let _ = write!(out, "{},{},{},{}", c.corpus, c.strategy, c.format, c.seed);
            match &o.result {
                Ok(r) => {
                    out.push_str(",ok");
                    for s in Scope::ALL {
                        let _ = write!(out, ",{:.6}", r.report.f1(s));
                    }
                    let steps: Vec<String> = r.best_steps.iter().map(|s| s.to_string()).collect();
                    let _ = writeln!(out, ",{},{},{}", r.report.violations, steps.join("|"), r.model_sha256);
                }
                Err(e) => {
                    let _ = write!(out, ",failed");
                    for _ in Scope::ALL {
                        out.push(',');
                    }
                    let _ = writeln!(out, ",,,\"{}\"", e.replace('"', "'"));
                }
            }
        }
        out
    }

    /// Mean F1 per scope and mean violations, one row per
    /// (corpus, strategy, format).
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("corpus,strategy,format,runs");
        for s in Scope::ALL {
            let _ = write!(out, ",f1_{}", s.name());
        }
        out.push_str(",violations\n");
        for ((c, st, f), rs) in self.groups() {
            let _ = write!(out, "{c},{st},{f},{}", rs.len());
            for s in Scope::ALL {
                let _ = write!(out, ",{:.6}", mean(&rs.iter().map(|r| r.report.f1(s)).collect::<Vec<_>>()));
            }
            let v = mean(&rs.iter().map(|r| r.report.violations as f64).collect::<Vec<_>>());
            let _ = writeln!(out, ",{v:.6}");
        }
        out
    }

    fn types(&self) -> Vec<String> {
        let mut t: Vec<String> = self
            .outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok())
            .flat_map(|r| r.report.per_type.keys().cloned())
            .collect();
        t.sort();
        t.dedup();
        t
    }

    /// Mean per-type F1, one row per (corpus, strategy, format).
    pub fn per_type_csv(&self) -> String {
        let types = self.types();
        let mut out = String::from("corpus,strategy,format");
        for t in &types {
            let _ = write!(out, ",{t}");
        }
        out.push('\n');
        for ((c, st, f), rs) in self.groups() {
            let _ = write!(out, "{c},{st},{f}");
            for t in &types {
                let v = mean(&rs.iter().map(|r| r.report.per_type.get(t).map_or(0.0, |p| p.f1)).collect::<Vec<_>>());
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text tables (F1 in percent).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<6} {:<5} {:<5}", "corpus", "strat", "fmt");
        for s in Scope::ALL {
            let _ = write!(out, " {:>10}", s.name());
        }
        let _ = writeln!(out, " {:>10}", "violations");
        let groups = self.groups();
        for ((c, st, f), rs) in &groups {
            let _ = write!(out, "{:<6} {:<5} {:<5}", c.to_string(), st.name(), f.name());
            for s in Scope::ALL {
                let _ = write!(out, " {:>10.2}", 100.0 * mean(&rs.iter().map(|r| r.report.f1(s)).collect::<Vec<_>>()));
            }
            let v = mean(&rs.iter().map(|r| r.report.violations as f64).collect::<Vec<_>>());
            let _ = writeln!(out, " {v:>10.2}");
        }
        let types = self.types();
        let _ = write!(out, "\n{:<6} {:<5} {:<5}", "corpus", "strat", "fmt");
        for t in &types {
            let _ = write!(out, " {t:>9}");
        }
        out.push('\n');
        for ((c, st, f), rs) in &groups {
            let _ = write!(out, "{:<6} {:<5} {:<5}", c.to_string(), st.name(), f.name());
            for t in &types {
                let v = mean(&rs.iter().map(|r| r.report.per_type.get(t).map_or(0.0, |p| p.f1)).collect::<Vec<_>>());
                let _ = write!(out, " {:>9.2}", 100.0 * v);
            }
            out.push('\n');
        }
        let failures = self.failures();
        if !failures.is_empty() {
            let _ = writeln!(out, "\nfailed cells: {}", failures.len());
            for (c, e) in failures {
                let _ = writeln!(out, "  {}: {e}", c.stem());
            }
        }
        out
    }

    /// Writes `runs.csv`, `summary.csv`, `per_type.csv`, `summary.txt`,
    /// per-cell confusion matrices and, optionally, model files.
    pub fn write_dir(&self, dir: &Path, save_models: bool) -> Result<()> {
        std::fs::create_dir_all(dir.join("confusion"))?;
        std::fs::write(dir.join("runs.csv"), self.runs_csv())?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv())?;
        std::fs::write(dir.join("per_type.csv"), self.per_type_csv())?;
        std::fs::write(dir.join("summary.txt"), self.to_text())?;
        if save_models {
            std::fs::create_dir_all(dir.join("models"))?;
        }
        for o in &self.outcomes {
            if let Ok(r) = &o.result {
                let stem = o.cell.stem();
                std::fs::write(dir.join("confusion").join(format!("{stem}.csv")), r.report.confusion.to_csv(true))?;
                std::fs::write(dir.join("confusion").join(format!("{stem}.report.csv")), r.report.to_csv())?;
                if save_models {
                    std::fs::write(dir.join("models").join(format!("{stem}.model")), &r.model_bytes)?;
                }
            }
        }
        Ok(())
    }
}

/// Rebuilds summary tables from a `runs.csv` written by
/// [`ExperimentReport::runs_csv`]: mean of every numeric column per
/// (corpus, strategy, format), ordered by key.
pub fn summarize_runs_csv(runs: &str) -> Result<String> {
    let mut lines = runs.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::parse("runs.csv", "empty file"))?.split(',').collect();
    let f1_cols: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.starts_with("f1_")).map(|(i, _)| i).collect();
    let viol = header.iter().position(|h| *h == "violations");
    let mut groups: BTreeMap<(String, String, String), Vec<Vec<f64>>> = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 5 {
            return Err(Error::parse(format!("runs.csv line {}", n + 2), "too few columns"));
        }
        if cols[4] != "ok" {
            continue;
        }
        let mut vals = Vec::new();
        for &i in f1_cols.iter().chain(viol.iter()) {
            let v: f64 = cols
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(format!("runs.csv line {}", n + 2), format!("bad number in column {}", i + 1)))?;
            vals.push(v);
        }
        groups.entry((cols[0].into(), cols[1].into(), cols[2].into())).or_default().push(vals);
    }
    let mut out = String::from("corpus,strategy,format,runs");
    for &i in f1_cols.iter().chain(viol.iter()) {
        let _ = write!(out, ",{}", header[i]);
    }
    out.push('\n');
    for ((c, s, f), rows) in groups {
        let _ = write!(out, "{c},{s},{f},{}", rows.len());
        for k in 0..rows[0].len() {
            let _ = write!(out, ",{:.6}", mean(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()));
        }
        out.push('\n');
    }
    Ok(out)
}
