//! Command-line entry points: ingest, link, fit, run, eval, serve and stats.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tracing::info;

use crag::app::{annotate_dialogues, fit_model, load_corpus, save_model, AppConfig, Engine};
use crag::corpus::{
    build_item_database, dataset_stats, ingest_dialogues, make_eval_records, write_dialogues, DatasetFormat,
    Dialogue, EvalRecord, IngestOptions, ItemId, Split,
};
use crag::entity_link::TitleIndex;
use crag::eval::{
    noise_replace, rank_confusion, recency_split, smoke_check, subset_report, sweep_k, write_plot_csv, write_reports,
    MetricReport, DEFAULT_KS,
};
use crag::llm_gateway::{build_gateway, BackendKind};
use crag::pipeline::{run, PipelineConfig, PipelineTrace, Variant};
use crag::service::{serve, ServiceState};
use crag::{Error, Result};

#[derive(Parser)]
#[command(name = "crag", version, about = "Collaborative retrieval augmented conversational recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw dataset into the normalized dialogue format.
    Ingest(IngestArgs),
    /// Link item mentions in every utterance of a dialogue file.
    Link(LinkArgs),
    /// Fit the item-item similarity model and write it to the model path.
    Fit(FitArgs),
    /// Run the pipeline on one query and print the trace.
    Run(RunArgs),
    /// Evaluate recall over the test split.
    Eval(EvalArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Print test-set statistics.
    Stats(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override the LLM backend.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Override the record/replay transcript path.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<AppConfig> {
        let mut cfg = AppConfig::load(&self.config)?;
        if let Some(b) = self.backend {
            cfg.backend.backend = b;
        }
        if let Some(t) = &self.transcript {
            cfg.backend.transcript = Some(t.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Raw dataset file; defaults to the configured dialogue path.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<DatasetFormat>,
    /// Where to write the normalized dialogues.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LinkArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dialogues to annotate; defaults to the configured dialogue path.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Annotated output file.
    #[arg(long)]
    out: PathBuf,
    /// Annotate only the first N dialogues.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    pop_window_days: Option<u32>,
    /// Override the model output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    allow_mentioned: bool,
}

impl PipelineArgs {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        cfg.allow_mentioned |= self.allow_mentioned;
        cfg.validate().map_err(Error::Config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Use the prefix of this dialogue.
    #[arg(long, conflicts_with_all = ["text", "record"])]
    dialogue: Option<String>,
    /// Number of leading turns of `--dialogue` to use (default: all).
    #[arg(long, requires = "dialogue")]
    turns: Option<usize>,
    /// Link and answer a single user utterance.
    #[arg(long, conflicts_with = "record")]
    text: Option<String>,
    /// Use the prefix of this evaluation record (index into the test records).
    #[arg(long)]
    record: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Variants to evaluate (repeatable); defaults to the three ablations.
    #[arg(long)]
    variant: Vec<Variant>,
    /// Retrieval sizes (repeatable); defaults to 0, 5, ..., 35.
    #[arg(long)]
    k: Vec<usize>,
    /// Also report recall for records before and after this release year.
    #[arg(long)]
    cutoff_year: Option<i32>,
    /// Replace every linked context item with a random item using this seed.
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Evaluate only records whose context has no linked item.
    #[arg(long)]
    cold_start_only: bool,
    /// Evaluate only the first N records.
    #[arg(long)]
    limit: Option<usize>,
    /// Include per-record ranks in the report.
    #[arg(long)]
    detail: bool,
    #[arg(long)]
    allow_mentioned: bool,
    /// Check 10 records against the live endpoint instead of sweeping.
    #[arg(long)]
    live_smoke: bool,
    /// Output directory for report.jsonl, plot.csv and confusion.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override the bind address.
    #[arg(long)]
    bind: Option<String>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Link(a) => cmd_link(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, class) = classify(&e);
            eprintln!("crag: {class} error: {e}");
            ExitCode::from(code)
        }
    }
}

/// Exit code and label per failure class.
fn classify(e: &Error) -> (u8, &'static str) {
    match e {
        Error::Config(_) => (2, "config"),
        Error::Io { .. } | Error::Corpus(_) => (3, "input"),
        Error::Gateway(_) => (4, "backend"),
        Error::Pipeline(p) if p.gateway().is_some() => (4, "backend"),
        Error::Link(crag::entity_link::LinkError::Gateway(_)) => (4, "backend"),
        Error::Eval(crag::eval::EvalError::Pipeline(p)) if p.gateway().is_some() => (4, "backend"),
        Error::Link(_) | Error::Pipeline(_) => (5, "pipeline"),
        Error::Cf(_) => (6, "model"),
        Error::Eval(crag::eval::EvalError::Io(_)) => (3, "output"),
        Error::Eval(_) => (7, "eval"),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value).expect("serializable output");
    writeln!(out).map_err(io_err(Path::new("<stdout>")))
}

fn write_dialogue_file(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    let mut w = create(path)?;
    write_dialogues(&mut w, dialogues).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct IngestSummary {
    dialogues: usize,
    train: usize,
    valid: usize,
    test: usize,
    items: usize,
    catalog: usize,
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let mut opts: IngestOptions = cfg.data.ingest_options();
    if let Some(f) = a.format {
        opts.format = f;
    }
    let input = a.input.as_deref().unwrap_or(&cfg.data.dialogues);
    let dialogues = ingest_dialogues(input, &opts)?;
    let db = build_item_database(&dialogues);
    let count = |s: Split| dialogues.iter().filter(|d| d.split == s).count();
    if let Some(out) = &a.out {
        write_dialogue_file(out, &dialogues)?;
    }
    print_json(&IngestSummary {
        dialogues: dialogues.len(),
        train: count(Split::Train),
        valid: count(Split::Valid),
        test: count(Split::Test),
        items: db.len(),
        catalog: db.catalog_len(),
    })
}

fn cmd_link(a: LinkArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let (_, db) = load_corpus(&cfg)?;
    let index = TitleIndex::build(&db, cfg.matcher);
    let gateway = build_gateway(&cfg.backend)?;
    let input = a.input.as_deref().unwrap_or(&cfg.data.dialogues);
    let mut dialogues = ingest_dialogues(input, &cfg.data.ingest_options())?;
    if let Some(n) = a.limit {
        dialogues.truncate(n);
    }
    let (annotated, stats) = annotate_dialogues(&dialogues, &index, &gateway)?;
    write_dialogue_file(&a.out, &annotated)?;
    print_json(&stats)
}

#[derive(Serialize)]
struct FitSummary {
    model: PathBuf,
    items: usize,
    catalog: usize,
    lambda: f64,
    beta: f64,
    max_constraint_violation: f64,
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(l) = a.lambda {
        cfg.cf.lambda = l;
    }
    if let Some(b) = a.beta {
        cfg.cf.beta = b;
    }
    if let Some(d) = a.pop_window_days {
        cfg.cf.pop_window_days = d;
    }
    if let Some(out) = a.out {
        cfg.data.model = out;
    }
    cfg.validate()?;
    let (dialogues, db) = load_corpus(&cfg)?;
    let model = fit_model(&cfg, &dialogues, &db)?;
    save_model(&cfg, &model)?;
    info!(path = %cfg.data.model.display(), "model written");
    print_json(&FitSummary {
        model: cfg.data.model.clone(),
        items: model.n_items(),
        catalog: model.n_catalog(),
        lambda: model.lambda(),
        beta: model.beta(),
        max_constraint_violation: model.max_constraint_violation(),
    })
}

#[derive(Serialize)]
struct RunOutput {
    variant: Variant,
    k: usize,
    recommendations: Vec<String>,
    trace: PipelineTrace,
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    a.pipeline.apply(&mut cfg.pipeline)?;
    let engine = Engine::open(cfg)?;
    let prefix = if let Some(id) = &a.dialogue {
        let d = engine
            .dialogues
            .iter()
            .find(|d| &d.id == id)
            .ok_or_else(|| Error::Config(format!("no dialogue with id {id:?}")))?;
        d.prefix(a.turns.unwrap_or(d.turns.len()))
    } else if let Some(text) = &a.text {
        engine.single_turn(text)?.0
    } else if let Some(i) = a.record {
        let records = engine.eval_records();
        let n = records.len();
        records
            .into_iter()
            .nth(i)
            .ok_or_else(|| Error::Config(format!("record {i} out of range ({n} records)")))?
            .prefix
    } else {
        return Err(Error::Config("one of --dialogue, --text or --record is required".into()));
    };
    let cfg = &engine.config.pipeline;
    let trace = run(&prefix, cfg, &engine.inputs())?;
    print_json(&RunOutput {
        variant: cfg.variant,
        k: cfg.effective_k(),
        recommendations: trace.final_recs.iter().map(|&c| engine.db.catalog_title(c).to_string()).collect(),
        trace,
    })
}

#[derive(Serialize)]
struct EvalSummary {
    records: usize,
    reports: usize,
    out: PathBuf,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    cfg.pipeline.allow_mentioned |= a.allow_mentioned;
    if a.live_smoke {
        cfg.backend.backend = BackendKind::Live;
        if let Some(v) = a.variant.first() {
            cfg.pipeline.variant = *v;
        }
        if let Some(k) = a.k.first() {
            cfg.pipeline.k = *k;
        }
        let engine = Engine::open(cfg)?;
        let records = engine.eval_records();
        let outcome = smoke_check(&records, &engine.config.pipeline, &engine.inputs(), a.noise_seed)?;
        return print_json(&outcome);
    }
    let engine = Engine::open(cfg)?;
    let mut records: Vec<EvalRecord> = make_eval_records(&engine.split(Split::Test), &engine.db);
    if a.cold_start_only {
        records.retain(|r| r.cold_start);
    }
    if let Some(n) = a.limit {
        records.truncate(n);
    }
    if let Some(seed) = a.noise_seed {
        records = noise_replace(&records, &engine.db, seed);
    }
    if records.is_empty() {
        return Err(Error::Config("no evaluation records selected".into()));
    }
    let variants = if a.variant.is_empty() {
        Variant::ABLATIONS.to_vec()
    } else {
        a.variant.clone()
    };
    let ks = if a.k.is_empty() { DEFAULT_KS.to_vec() } else { a.k.clone() };
    let inputs = engine.inputs();
    let cells = sweep_k(&records, &engine.config.pipeline, &ks, &variants, &inputs, a.detail)?;

    let recency = a.cutoff_year.map(|y| recency_split(&records, &engine.db, y));
    if let Some(split) = &recency {
        info!(before = split.before.len(), after = split.after.len(), excluded = split.excluded, "recency split");
    }
    let mut reports: Vec<MetricReport> = Vec::new();
    for cell in &cells {
        let r = &cell.report;
        reports.push(r.clone());
        if let Some(split) = &recency {
            for (group, members) in [("before", &split.before), ("after", &split.after)] {
                let keys: HashSet<_> = members.iter().map(record_key).collect();
                let keep = |rec: &EvalRecord| keys.contains(&record_key(rec));
                reports.push(subset_report(r.variant, r.k, group, &records, &cell.runs.traces, keep, &engine.db)?);
            }
        }
    }

    std::fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let report_path = a.out.join("report.jsonl");
    write_reports(create(&report_path)?, &reports)?;
    let plot_path = a.out.join("plot.csv");
    write_plot_csv(create(&plot_path)?, &reports)?;

    // Rank confusion for the reranking variant at the configured K when swept.
    let conf_k = engine.config.pipeline.k;
    let cell = cells
        .iter()
        .find(|c| c.report.variant == Variant::Full && c.report.k == conf_k && conf_k > 0)
        .or_else(|| cells.iter().find(|c| c.report.k > 0));
    if let Some(cell) = cell {
        let matrix = rank_confusion(&cell.runs.traces, cell.report.k);
        let path = a.out.join("confusion.csv");
        std::fs::write(&path, matrix.to_csv(true)).map_err(io_err(&path))?;
    }
    print_json(&EvalSummary {
        records: records.len(),
        reports: reports.len(),
        out: a.out.clone(),
    })
}

fn record_key(r: &EvalRecord) -> (&str, usize, ItemId) {
    (&r.dialogue_id, r.target_turn, r.ground_truth_item)
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let bind = a.bind.unwrap_or_else(|| cfg.service.bind.clone());
    let engine = Arc::new(Engine::open(cfg)?);
    let state = Arc::new(ServiceState::new(engine));
    let rt = tokio::runtime::Runtime::new().map_err(io_err(Path::new("<runtime>")))?;
    rt.block_on(serve(state, &bind)).map_err(|source| Error::Io { path: bind, source })
}

fn cmd_stats(a: CommonArgs) -> Result<()> {
    let cfg = a.load()?;
    let (dialogues, db) = load_corpus(&cfg)?;
    let test: Vec<Dialogue> = dialogues.into_iter().filter(|d| d.split == Split::Test).collect();
    let records = make_eval_records(&test, &db);
    print_json(&dataset_stats(&records, &db))
}
