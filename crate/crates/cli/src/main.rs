//! `nested-tagger` command-line interface.

use std::collections::HashMap;
use std::fs;
use std::panic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use nested_tagger::align::build_noisy_corpus;
use nested_tagger::corpus::{
    extension, noisy_texts, read_jsonl, read_noisy_texts, read_tsv_checked, synth_generate, write_jsonl,
    write_noisy_texts, write_tsv_layout, Corpus, FileKind, NoiseConfig, Provenance, TsvLayout,
};
use nested_tagger::experiment::{run_experiment, summarize_runs_csv, ExperimentConfig};
use nested_tagger::metrics::full_report;
use nested_tagger::tagcodec::io_merge_loss;
use nested_tagger::tagger::{flat_view, predict_entry, train_with_history};
use nested_tagger::{AnnotatedEntry, Error, Format, LabelSchema, Model, Strategy, TrainConfig};

const SEED_VAR: &str = "NESTED_TAGGER_SEED";

#[derive(Parser)]
#[command(name = "nested-tagger", version, about = "Nested named-entity tagging toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Re-encode a corpus between IO and IOB2, or between TSV layouts and JSONL.
    Convert(ConvertArgs),
    /// Transfer gold annotations onto noisy texts.
    Project(ProjectArgs),
    /// Generate a synthetic directory corpus.
    Synth(SynthArgs),
    /// Train a tagger.
    Train(TrainArgs),
    /// Score a model on an annotated corpus.
    Eval(EvalArgs),
    /// Run the strategy x format x seed matrix.
    Experiment(ExperimentArgs),
    /// Summarize a `runs.csv` file.
    Report(ReportArgs),
}

#[derive(Args)]
struct SchemaArg {
    /// Label schema TOML file; defaults to the bundled directory schema.
    #[arg(long)]
    schema: Option<PathBuf>,
}

impl SchemaArg {
    fn load(&self) -> anyhow::Result<LabelSchema> {
        match &self.schema {
            Some(p) => LabelSchema::load(p).with_context(|| format!("loading schema {}", p.display())),
            None => Ok(LabelSchema::paris_directories()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    /// token, L1, L2 columns.
    Levels,
    /// token, joint label column.
    Joint,
    /// token, L1 column.
    L1,
}

impl From<LayoutArg> for TsvLayout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Levels => TsvLayout::Levels,
            LayoutArg::Joint => TsvLayout::Joint,
            LayoutArg::L1 => TsvLayout::L1,
        }
    }
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "IOB2", value_parser = parse_format)]
    from_format: Format,
    #[arg(long, default_value = "IOB2", value_parser = parse_format)]
    to_format: Format,
    /// Tag columns of TSV output.
    #[arg(long, value_enum, default_value = "levels")]
    mode: LayoutArg,
    #[command(flatten)]
    schema: SchemaArg,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    gold: PathBuf,
    /// JSONL lines of `{"source_id", "text"}`.
    #[arg(long)]
    noisy_text: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Projection report JSON; printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "IOB2", value_parser = parse_format)]
    format: Format,
    #[command(flatten)]
    schema: SchemaArg,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write character-noised texts (JSONL) for `project`.
    #[arg(long)]
    noisy_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    noise_rate: f64,
    #[arg(long, default_value = "IOB2", value_parser = parse_format)]
    format: Format,
    #[command(flatten)]
    schema: SchemaArg,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Strategy,
    #[arg(long, default_value = "IOB2", value_parser = parse_format)]
    format: Format,
    /// Training config TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    schema: SchemaArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Report CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the predictions (TSV or JSONL by extension).
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    fail_on_violations: bool,
    #[command(flatten)]
    schema: SchemaArg,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    noisy_corpus: Option<PathBuf>,
    /// Comma-separated, e.g. `M1,M2,M3`.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    strategies: Option<Vec<Strategy>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_format)]
    formats: Option<Vec<Format>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Experiment config TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Concurrent cells; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    save_models: bool,
    #[arg(long)]
    fail_on_violations: bool,
    #[command(flatten)]
    schema: SchemaArg,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Outcome of a subcommand that ran to completion.
enum Done {
    Ok,
    Violations(usize),
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| anyhow!(Error::Config(format!("{SEED_VAR}=`{v}` is not an unsigned integer")))),
        Err(_) => Ok(None),
    }
}

fn load_entries(path: &Path, schema: &LabelSchema, format: Option<Format>) -> anyhow::Result<Vec<AnnotatedEntry>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let entries = match extension(path) {
        FileKind::Tsv => read_tsv_checked(&text, schema, format),
        FileKind::Jsonl => read_jsonl(&text, schema),
    }
    .with_context(|| format!("reading {}", path.display()))?;
    Ok(Corpus::new(entries, schema, Provenance::Gold)?.entries)
}

fn write_entries(path: &Path, entries: &[AnnotatedEntry], format: Format, layout: TsvLayout) -> anyhow::Result<()> {
    let text = match extension(path) {
        FileKind::Tsv => write_tsv_layout(entries, format, layout),
        FileKind::Jsonl => write_jsonl(entries)?,
    };
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn convert(a: ConvertArgs) -> anyhow::Result<Done> {
    let schema = a.schema.load()?;
    let entries = load_entries(&a.input, &schema, Some(a.from_format))?;
    if a.to_format == Format::Io {
        let merged: usize = entries.iter().map(|e| io_merge_loss(&e.entities, e.len())).sum();
        let hit = entries.iter().filter(|e| io_merge_loss(&e.entities, e.len()) > 0).count();
        if merged > 0 {
            eprintln!("IO output merges {merged} adjacent same-type entities in {hit} entries");
        }
    }
    write_entries(&a.out, &entries, a.to_format, a.mode.into())?;
    eprintln!("converted {} entries", entries.len());
    Ok(Done::Ok)
}

fn project(a: ProjectArgs) -> anyhow::Result<Done> {
    let schema = a.schema.load()?;
    let gold = load_entries(&a.gold, &schema, None)?;
    let raw = fs::read_to_string(&a.noisy_text).with_context(|| format!("reading {}", a.noisy_text.display()))?;
    let texts: HashMap<String, String> = read_noisy_texts(&raw)?;
    let (entries, report) = build_noisy_corpus(&gold, &texts, &schema);
    if report.entries_missing > 0 {
        eprintln!("warning: {} gold entries have no noisy text", report.entries_missing);
    }
    write_entries(&a.out, &entries, a.format, TsvLayout::Levels)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &a.report {
        Some(p) => fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{json}"),
    }
    eprintln!("{}", report.summary().trim_end());
    Ok(Done::Ok)
}

fn synth(a: SynthArgs) -> anyhow::Result<Done> {
    let schema = a.schema.load()?;
    let seed = env_seed()?.unwrap_or(a.seed);
    let corpus = synth_generate(a.n, &schema, seed);
    write_entries(&a.out, &corpus.entries, a.format, TsvLayout::Levels)?;
    if let Some(p) = &a.noisy_out {
        let cfg = NoiseConfig::with_rate(a.noise_rate, seed);
        cfg.validate()?;
        let texts = noisy_texts(&corpus.entries, &cfg);
        fs::write(p, write_noisy_texts(&texts)?).with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!("generated {} entries (seed {seed})", corpus.len());
    Ok(Done::Ok)
}

fn train(a: TrainArgs) -> anyhow::Result<Done> {
    let schema = a.schema.load()?;
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    let train = load_entries(&a.train, &schema, Some(a.format))?;
    let dev = load_entries(&a.dev, &schema, Some(a.format))?;
    let (model, history) = train_with_history::<f64>(&train, &dev, a.strategy, a.format, &schema, &cfg)?;
    model.save(&a.out)?;
    for (k, (f1, step)) in history.best_dev_f1.iter().zip(&history.best_step).enumerate() {
        println!("{} {} head {k}: best dev F1 {:.2} at step {step}", a.strategy, a.format, 100.0 * f1);
    }
    Ok(Done::Ok)
}

fn eval(a: EvalArgs) -> anyhow::Result<Done> {
    let schema = a.schema.load()?;
    let model = Model::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    if model.schema_fingerprint != schema.fingerprint() {
        bail!(Error::Model("model was trained with a different schema".into()));
    }
    let gold = load_entries(&a.corpus, &schema, None)?;
    let pred: Vec<AnnotatedEntry> = gold.iter().map(|e| predict_entry(&model, e)).collect();
    let gold = if model.strategy == Strategy::Flat {
        gold.iter().map(|e| flat_view(e, model.format, &schema)).collect()
    } else {
        gold
    };
    let report = full_report(&gold, &pred, &schema, model.format)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.out {
        fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.predictions {
        write_entries(p, &pred, model.format, TsvLayout::Levels)?;
    }
    Ok(if a.fail_on_violations && report.violations > 0 {
        Done::Violations(report.violations)
    } else {
        Done::Ok
    })
}

fn experiment(a: ExperimentArgs) -> anyhow::Result<Done> {
    let schema = a.schema.load()?;
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = a.strategies {
        cfg.strategies = v;
    }
    if let Some(v) = a.formats {
        cfg.formats = v;
    }
    if let Some(v) = a.seeds {
        cfg.seeds = v;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = env_seed()? {
        cfg.split_seed = s;
    }
    cfg.validate()?;
    let gold = load_entries(&a.corpus, &schema, None)?;
    let noisy = match &a.noisy_corpus {
        Some(p) => Some(load_entries(p, &schema, None)?),
        None => None,
    };
    let report = run_experiment(&gold, noisy.as_deref(), &schema, &cfg)?;
    report.write_dir(&a.out_dir, a.save_models)?;
    print!("{}", report.to_text());
    for (cell, err) in report.failures() {
        eprintln!("cell {} failed: {err}", cell.stem());
    }
    let violations: usize = report
        .outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok())
        .map(|r| r.report.violations)
        .sum();
    Ok(if a.fail_on_violations && violations > 0 {
        Done::Violations(violations)
    } else {
        Done::Ok
    })
}

fn report(a: ReportArgs) -> anyhow::Result<Done> {
    let runs = fs::read_to_string(&a.runs).with_context(|| format!("reading {}", a.runs.display()))?;
    let summary = summarize_runs_csv(&runs)?;
    match &a.out {
        Some(p) => fs::write(p, &summary).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{summary}"),
    }
    Ok(Done::Ok)
}

fn run(cli: Cli) -> anyhow::Result<Done> {
    match cli.command {
        Command::Convert(a) => convert(a),
        Command::Project(a) => project(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Experiment(a) => experiment(a),
        Command::Report(a) => report(a),
    }
}

fn is_internal(err: &anyhow::Error) -> bool {
    err.chain()
        .any(|e| matches!(e.downcast_ref::<Error>(), Some(Error::NonFinite | Error::UnknownNode(_))))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match panic::catch_unwind(|| run(cli)) {
        Ok(Ok(Done::Ok)) => ExitCode::SUCCESS,
        Ok(Ok(Done::Violations(n))) => {
            eprintln!("error: {n} hierarchy violations");
            ExitCode::from(2)
        }
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_internal(&e) { 2 } else { 1 })
        }
        Err(_) => ExitCode::from(2),
    }
}
