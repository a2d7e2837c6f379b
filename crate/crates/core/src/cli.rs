//! Command-line front end behind the `negrefine` binary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::analytics::{attach_texts, cohen_kappa, pair_id, refinement_stats, sample_validation_set, AnnotationItem};
use crate::config::{Config, ConfigError};
use crate::gateway::synth::{generate_synthetic_corpus, SynthSpec};
use crate::ingest::{read_jsonl, read_provenance, InstanceReader, ProvenanceRecord};
use crate::model::{Action, RefinementMode};
use crate::pipeline::{run, Outputs, PipelineError, RunPlan, RunReport, Settings};
use crate::review::{serve, ExportRow, Session, SessionStore};

#[derive(Debug, Parser)]
#[command(name = "negrefine", version, about = "Relabel and filter hard negatives with an LLM judge")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run both stages and write the refined corpus.
    Refine(RefineArgs),
    /// Extract answer snippets into a Stage 1 dump.
    Stage1(Stage1Args),
    /// Rank Stage 1 snippets into a Stage 2 dump.
    Stage2(Stage2Args),
    /// Apply the refinement rules offline from both dumps.
    ApplyRules(ApplyArgs),
    /// Per-query refinement statistics from provenance.
    Stats(StatsArgs),
    /// Agreement between judge labels and an adjudicated export.
    Kappa(KappaArgs),
    /// Draw the human validation sample.
    Sample(SampleArgs),
    /// Serve the review-session HTTP API.
    ServeReview(ServeArgs),
    /// Write a synthetic corpus and matching oracle plan.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub endpoint_url: Option<String>,
    #[arg(long)]
    pub model_name: Option<String>,
    #[arg(long)]
    pub max_parallel_requests: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Use the oracle backend with this plan file.
    #[arg(long)]
    pub oracle_plan: Option<PathBuf>,
    #[arg(long)]
    pub oracle_delay_ms: Option<u64>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RuleArgs {
    #[arg(long)]
    pub mode: Option<RefinementMode>,
    /// Rank passages instead of snippets.
    #[arg(long)]
    pub prhn: bool,
    #[arg(long)]
    pub filter_above_anchor: bool,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub rules: RuleArgs,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out stem>.provenance.jsonl`.
    #[arg(long)]
    pub provenance: Option<PathBuf>,
    #[arg(long)]
    pub stage1_dump: Option<PathBuf>,
    #[arg(long)]
    pub stage2_dump: Option<PathBuf>,
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct Stage1Args {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct Stage2Args {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub stage1_dump: PathBuf,
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long)]
    pub prhn: bool,
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub rules: RuleArgs,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub stage1_dump: PathBuf,
    #[arg(long)]
    pub stage2_dump: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub provenance: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub provenance: Vec<PathBuf>,
    /// Also write machine-readable records here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KappaArgs {
    /// Export file from a completed review session.
    #[arg(long)]
    pub export: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub provenance: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub provenance: PathBuf,
    /// Corpus the provenance was produced from; supplies the texts.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub state_dir: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Create a session from this annotation item file before serving.
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    pub session_id: String,
    /// Judge model tag recorded in the session.
    #[arg(long, default_value = "")]
    pub judge: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    #[arg(long, default_value_t = 10)]
    pub negatives: usize,
    #[arg(long, default_value_t = 0.3)]
    pub plant_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    pub above_fraction: f64,
    #[arg(long, default_value_t = 60)]
    pub words: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "synthetic")]
    pub dataset: String,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Validation(String),
    #[error("{count} instances could not be completed; rerun with --resume")]
    Incomplete { count: usize },
    #[error("interrupted; output is partial")]
    Interrupted,
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl CliError {
    /// 0 success, 2 validation, 3 backend failure, 4 partial output.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(ConfigError::Backend(_)) => 3,
            Self::Config(_) | Self::Validation(_) => 2,
            Self::Pipeline(PipelineError::Record(_) | PipelineError::MissingDump(_) | PipelineError::NoBackend(_)) => 2,
            Self::Pipeline(PipelineError::Rules { .. }) => 2,
            Self::Incomplete { .. } => 3,
            Self::Pipeline(PipelineError::Io { .. }) | Self::Interrupted | Self::Io { .. } => 4,
        }
    }
}

/// JSON lines, or a single JSON array as returned by the review API.
fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e));
    }
    read_jsonl(path)
}

fn io_err(context: impl std::fmt::Display) -> impl FnOnce(io::Error) -> CliError {
    let context = context.to_string();
    move |source| CliError::Io { context, source }
}

impl ConfigArgs {
    pub fn load(&self) -> Result<Config, CliError> {
        let mut c = Config::load_or_default(self.config.as_deref())?;
        if let Some(v) = &self.endpoint_url {
            c.backend.endpoint_url = Some(v.clone());
        }
        if let Some(v) = &self.model_name {
            c.backend.model_name = v.clone();
        }
        if let Some(v) = self.max_parallel_requests {
            c.backend.max_parallel_requests = v;
        }
        if let Some(v) = &self.cache_dir {
            c.backend.cache_dir = Some(v.clone());
        }
        if let Some(v) = &self.oracle_plan {
            c.backend.kind = crate::config::BackendKind::Oracle;
            c.backend.oracle_plan = Some(v.clone());
        }
        if let Some(v) = self.oracle_delay_ms {
            c.backend.oracle_delay_ms = v;
        }
        if let Some(v) = self.max_seq_len {
            c.refinement.max_seq_len = v;
        }
        if let Some(v) = self.window {
            c.refinement.instance_window = v;
        }
        c.validate()?;
        Ok(c)
    }
}

impl RuleArgs {
    fn apply(&self, c: &mut Config) {
        if let Some(mode) = self.mode {
            c.refinement.mode = mode;
        }
        c.refinement.prhn |= self.prhn;
        c.refinement.filter_above_anchor |= self.filter_above_anchor;
    }
}

fn outputs(out: &Path, provenance: Option<&PathBuf>) -> Outputs {
    let mut o = Outputs::beside(out);
    if let Some(p) = provenance {
        o.provenance = p.clone();
    }
    o
}

/// Runs a pipeline plan, stopping with `Interrupted` on Ctrl-C.
async fn run_plan(plan: RunPlan, config: &Config, need_backend: bool) -> Result<RunReport, CliError> {
    let gateway = if need_backend { Some(config.build_gateway()?) } else { None };
    let settings = Settings::from_config(config);
    let report = tokio::select! {
        r = run(&plan, &settings, gateway.as_ref()) => r?,
        _ = tokio::signal::ctrl_c() => return Err(CliError::Interrupted),
    };
    print_report(&report);
    if report.incomplete() > 0 {
        return Err(CliError::Incomplete {
            count: report.incomplete(),
        });
    }
    Ok(report)
}

fn print_report(r: &RunReport) {
    println!("instances: {}", r.instances);
    if let Some(s) = &r.summary {
        println!("promoted: {}", s.promoted);
        println!("filtered: {}", s.filtered);
        println!("retained: {}", s.retained);
        for (flag, n) in &s.flags {
            println!("flag {flag}: {n}");
        }
    }
    if r.skipped_records > 0 {
        println!("skipped records: {}", r.skipped_records);
    }
    if r.stage1_replayed + r.stage2_replayed > 0 {
        println!("replayed: stage1 {} stage2 {}", r.stage1_replayed, r.stage2_replayed);
    }
    if r.incomplete() > 0 {
        println!("incomplete: stage1 {} stage2 {}", r.stage1_incomplete, r.stage2_incomplete);
    }
    println!("requests: {} (cache hits {})", r.requests_sent, r.cache_hits);
}

pub async fn cmd_refine(args: &RefineArgs) -> Result<RunReport, CliError> {
    let mut config = args.config.load()?;
    args.rules.apply(&mut config);
    let plan = RunPlan::refine(&args.input, outputs(&args.out, args.provenance.as_ref()))
        .with_dumps(args.stage1_dump.clone(), args.stage2_dump.clone())
        .resume(args.resume);
    run_plan(plan, &config, true).await
}

pub async fn cmd_stage1(args: &Stage1Args) -> Result<RunReport, CliError> {
    let config = args.config.load()?;
    let plan = RunPlan::stage1_only(&args.input, &args.dump).resume(args.resume);
    run_plan(plan, &config, true).await
}

pub async fn cmd_stage2(args: &Stage2Args) -> Result<RunReport, CliError> {
    let mut config = args.config.load()?;
    config.refinement.prhn |= args.prhn;
    let plan = RunPlan::stage2_only(&args.input, &args.stage1_dump, &args.dump).resume(args.resume);
    run_plan(plan, &config, true).await
}

pub async fn cmd_apply_rules(args: &ApplyArgs) -> Result<RunReport, CliError> {
    let mut config = args.config.load()?;
    args.rules.apply(&mut config);
    let plan = RunPlan::apply_rules(
        &args.input,
        &args.stage1_dump,
        &args.stage2_dump,
        outputs(&args.out, args.provenance.as_ref()),
    );
    run_plan(plan, &config, false).await
}

fn load_provenance(paths: &[PathBuf]) -> Result<Vec<ProvenanceRecord>, CliError> {
    let mut rows = Vec::new();
    for p in paths {
        let more = read_provenance(p).map_err(|e| match e.kind() {
            io::ErrorKind::InvalidData => CliError::Validation(format!("{}: {e}", p.display())),
            _ => CliError::Io {
                context: p.display().to_string(),
                source: e,
            },
        })?;
        rows.extend(more);
    }
    Ok(rows)
}

/// Renders the stats table, grouped by judge tag. Returns the rendered text.
pub fn cmd_stats(args: &StatsArgs) -> Result<String, CliError> {
    let rows = load_provenance(&args.provenance)?;
    if rows.is_empty() {
        return Err(CliError::Validation("no provenance records".into()));
    }
    let mut by_judge: BTreeMap<&str, Vec<&ProvenanceRecord>> = BTreeMap::new();
    for r in &rows {
        by_judge.entry(r.judge.as_str()).or_default().push(r);
    }
    let mut text = String::new();
    let mut records = Vec::new();
    for (judge, rows) in by_judge {
        let report = refinement_stats(rows.iter().copied());
        text.push_str(&report.render_table(if judge.is_empty() { "-" } else { judge }));
        records.extend(report.records());
    }
    if let Some(path) = &args.json {
        let mut out = BufWriter::new(File::create(path).map_err(io_err(path.display()))?);
        for r in &records {
            serde_json::to_writer(&mut out, r).map_err(|e| io_err(path.display())(e.into()))?;
            out.write_all(b"\n").map_err(io_err(path.display()))?;
        }
        out.flush().map_err(io_err(path.display()))?;
    }
    print!("{text}");
    Ok(text)
}

/// κ per judge tag between `llm_label` (promotion) and the adjudicated label.
pub fn cmd_kappa(args: &KappaArgs) -> Result<BTreeMap<String, (usize, f64)>, CliError> {
    let export: Vec<ExportRow> = read_rows(&args.export)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.export.display())))?;
    let provenance = load_provenance(&args.provenance)?;
    let mut judge_labels: BTreeMap<&str, std::collections::HashMap<String, bool>> = BTreeMap::new();
    for r in &provenance {
        judge_labels
            .entry(r.judge.as_str())
            .or_default()
            .insert(pair_id(&r.instance_id, &r.doc_id), r.action == Action::PromoteToPositive);
    }
    let mut results = BTreeMap::new();
    println!("{:<24}  {:>5}  {:>7}", "Judge", "n", "kappa");
    for (judge, labels) in judge_labels {
        let (llm, human): (Vec<bool>, Vec<bool>) = export
            .iter()
            .filter_map(|row| labels.get(&row.pair_id).map(|&l| (l, row.label)))
            .unzip();
        if llm.len() < export.len() {
            tracing::warn!(judge, missing = export.len() - llm.len(), "export pairs without provenance");
        }
        let Ok(k) = cohen_kappa(&llm, &human) else {
            continue;
        };
        let tag = if judge.is_empty() { "-" } else { judge };
        println!("{tag:<24}  {:>5}  {k:>7.3}", llm.len());
        results.insert(judge.to_string(), (llm.len(), k));
    }
    if results.is_empty() {
        return Err(CliError::Validation("no export pair matches the provenance".into()));
    }
    Ok(results)
}

pub fn cmd_sample(args: &SampleArgs) -> Result<usize, CliError> {
    let provenance = load_provenance(std::slice::from_ref(&args.provenance))?;
    let pairs = sample_validation_set(&provenance, args.size, args.seed)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let config = args.config.load()?;
    let reader = InstanceReader::open(&args.corpus, config.reader_config()).map_err(io_err(args.corpus.display()))?;
    let mut corpus_err = None;
    let corpus = reader.map_while(|r| r.map_err(|e| corpus_err = Some(e)).ok());
    let items = attach_texts(&pairs, corpus).map_err(|e| CliError::Validation(e.to_string()));
    if let Some(e) = corpus_err {
        return Err(CliError::Pipeline(PipelineError::Record(e)));
    }
    let items = items?;
    let mut out = BufWriter::new(File::create(&args.out).map_err(io_err(args.out.display()))?);
    for item in &items {
        serde_json::to_writer(&mut out, item).map_err(|e| io_err(args.out.display())(e.into()))?;
        out.write_all(b"\n").map_err(io_err(args.out.display()))?;
    }
    out.flush().map_err(io_err(args.out.display()))?;
    println!("sampled {} pairs into {}", items.len(), args.out.display());
    Ok(items.len())
}

pub async fn cmd_serve_review(args: &ServeArgs) -> Result<(), CliError> {
    let config = Config::load_or_default(args.config.as_deref())?;
    let state_dir = args.state_dir.clone().unwrap_or(config.review.state_dir.clone());
    let store = SessionStore::open(&state_dir).map_err(|e| CliError::Validation(e.to_string()))?;
    if let Some(path) = &args.items {
        let items: Vec<AnnotationItem> =
            read_rows(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if store.ids().await.contains(&args.session_id) {
            tracing::info!(session = %args.session_id, "session exists, reopening");
        } else {
            let session = Session::new(&args.session_id, &args.judge, items)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            store.create(session).await.map_err(|e| CliError::Validation(e.to_string()))?;
        }
    }
    let addr = SocketAddr::new(args.host, args.port.unwrap_or(config.review.port));
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    serve(
        Arc::new(store),
        addr,
        config.review.cors_origin.as_deref(),
        |bound| {
            println!("listening on http://{bound}");
            let _ = io::stdout().flush();
        },
        shutdown,
    )
    .await
    .map_err(io_err(addr))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        queries: args.queries,
        negatives_per_query: args.negatives,
        plant_rate: args.plant_rate,
        above_anchor_fraction: args.above_fraction,
        words_per_doc: args.words,
        seed: args.seed,
        dataset: args.dataset.clone(),
    };
    let corpus = generate_synthetic_corpus(&spec, &args.corpus, &args.plan).map_err(|e| match e {
        crate::gateway::synth::SynthError::Io(source) => CliError::Io {
            context: args.corpus.display().to_string(),
            source,
        },
        other => CliError::Validation(other.to_string()),
    })?;
    println!(
        "{} queries, gold promote {}, gold filter {}",
        corpus.instances.len(),
        corpus.gold_promote_total(),
        corpus.gold_filter_total()
    );
    Ok(())
}

pub async fn execute(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Refine(a) => cmd_refine(a).await.map(drop),
        Command::Stage1(a) => cmd_stage1(a).await.map(drop),
        Command::Stage2(a) => cmd_stage2(a).await.map(drop),
        Command::ApplyRules(a) => cmd_apply_rules(a).await.map(drop),
        Command::Stats(a) => cmd_stats(a).map(drop),
        Command::Kappa(a) => cmd_kappa(a).map(drop),
        Command::Sample(a) => cmd_sample(a).map(drop),
        Command::ServeReview(a) => cmd_serve_review(a).await,
        Command::Synth(a) => cmd_synth(a),
    }
}
