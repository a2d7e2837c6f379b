//! End-to-end driver: read, extract, rank, decide, write.
//!
//! [`run`] executes any prefix or suffix of the pipeline. `refine` computes
//! both stages; `stage1`/`stage2` compute one stage into a dump; `apply-rules`
//! replays both dumps without a backend. Instances run concurrently within a
//! window and are written in input order; dump groups are appended as each
//! stage finishes, so dump line order follows completion order.

pub mod dump;

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use futures::StreamExt;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::gateway::{Gateway, RankingMode};
use crate::ingest::{InstanceReader, ReaderConfig, RecordError, RefinedWriter, WriteSummary};
use crate::model::{add_flag, Flag, RefinedInstance, RefinementMode, SnippetSet, TrainingInstance};
use crate::rules::{apply_decisions, decide, pass_through, RuleError, RuleOptions};
use crate::stage1::{instance_flags, run_stage1, Normalization};
use crate::stage2::rank_snippets;

pub use dump::{DumpIndex, DumpWriter, Stage1Row, Stage2Row};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("upstream dump {0} does not exist")]
    MissingDump(PathBuf),
    #[error("a backend is required to compute {0}")]
    NoBackend(&'static str),
    #[error("rules failed for instance {instance_id}: {source}")]
    Rules { instance_id: String, source: RuleError },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl PipelineError {
    fn io(context: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.to_string();
        move |source| Self::Io { context, source }
    }
}

/// What to do for one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StagePlan {
    Skip,
    /// Call the backend, optionally recording a dump.
    Compute { dump: Option<PathBuf> },
    /// Read results from a dump written earlier.
    Replay { dump: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outputs {
    pub refined: PathBuf,
    pub provenance: PathBuf,
}

impl Outputs {
    /// `<out>` plus a `<stem>.provenance.jsonl` sidecar next to it.
    pub fn beside(refined: impl Into<PathBuf>) -> Self {
        let refined = refined.into();
        let stem = refined.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let provenance = refined.with_file_name(format!("{stem}.provenance.jsonl"));
        Self { refined, provenance }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub mode: RefinementMode,
    pub options: RuleOptions,
    pub ranking_mode: RankingMode,
    pub normalization: Normalization,
    pub window: usize,
    pub reader: ReaderConfig,
    /// Model tag written into provenance.
    pub judge: String,
}

impl Settings {
    pub fn from_config(config: &Config) -> Self {
        Self {
            mode: config.refinement.mode,
            options: config.rule_options(),
            ranking_mode: config.ranking_mode(),
            normalization: config.normalization(),
            window: config.refinement.instance_window,
            reader: config.reader_config(),
            judge: config.backend.model_name.clone(),
        }
    }
}

impl Default for Settings {
    fn default() -> Self {
        Self::from_config(&Config::default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPlan {
    pub input: PathBuf,
    pub stage1: StagePlan,
    pub stage2: StagePlan,
    pub outputs: Option<Outputs>,
    /// Append to existing Compute dumps and replay what they already hold.
    pub resume: bool,
}

impl RunPlan {
    pub fn refine(input: impl Into<PathBuf>, outputs: Outputs) -> Self {
        Self {
            input: input.into(),
            stage1: StagePlan::Compute { dump: None },
            stage2: StagePlan::Compute { dump: None },
            outputs: Some(outputs),
            resume: false,
        }
    }

    pub fn with_dumps(mut self, stage1: Option<PathBuf>, stage2: Option<PathBuf>) -> Self {
        if let StagePlan::Compute { dump } = &mut self.stage1 {
            *dump = stage1;
        }
        if let StagePlan::Compute { dump } = &mut self.stage2 {
            *dump = stage2;
        }
        self
    }

    pub fn resume(mut self, resume: bool) -> Self {
        self.resume = resume;
        self
    }

    pub fn stage1_only(input: impl Into<PathBuf>, dump: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            stage1: StagePlan::Compute { dump: Some(dump.into()) },
            stage2: StagePlan::Skip,
            outputs: None,
            resume: false,
        }
    }

    pub fn stage2_only(input: impl Into<PathBuf>, stage1_dump: impl Into<PathBuf>, dump: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            stage1: StagePlan::Replay { dump: stage1_dump.into() },
            stage2: StagePlan::Compute { dump: Some(dump.into()) },
            outputs: None,
            resume: false,
        }
    }

    pub fn apply_rules(
        input: impl Into<PathBuf>,
        stage1_dump: impl Into<PathBuf>,
        stage2_dump: impl Into<PathBuf>,
        outputs: Outputs,
    ) -> Self {
        Self {
            input: input.into(),
            stage1: StagePlan::Replay { dump: stage1_dump.into() },
            stage2: StagePlan::Replay { dump: stage2_dump.into() },
            outputs: Some(outputs),
            resume: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub instances: usize,
    pub skipped_records: usize,
    pub stage1_replayed: usize,
    pub stage2_replayed: usize,
    pub stage1_incomplete: usize,
    pub stage2_incomplete: usize,
    pub requests_sent: usize,
    pub cache_hits: usize,
    /// Present when refined output was written.
    pub summary: Option<WriteSummary>,
}

impl RunReport {
    pub fn incomplete(&self) -> usize {
        self.stage1_incomplete + self.stage2_incomplete
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
enum StageState {
    #[default]
    NotRun,
    Replayed,
    Computed,
    Incomplete,
}

#[derive(Default)]
struct Outcome {
    refined: Option<RefinedInstance>,
    snippets: Option<SnippetSet>,
    stage1: StageState,
    stage2: StageState,
}

struct StageCtx {
    compute: bool,
    replay: Option<DumpIndex>,
    writer: Option<Mutex<DumpWriter>>,
}

impl StageCtx {
    fn open(plan: &StagePlan, resume: bool) -> Result<Self, PipelineError> {
        Ok(match plan {
            StagePlan::Skip => Self { compute: false, replay: None, writer: None },
            StagePlan::Replay { dump } => {
                if !dump.exists() {
                    return Err(PipelineError::MissingDump(dump.clone()));
                }
                let index = DumpIndex::open(dump).map_err(PipelineError::io(dump.display()))?;
                Self { compute: false, replay: Some(index), writer: None }
            }
            StagePlan::Compute { dump: None } => Self { compute: true, replay: None, writer: None },
            StagePlan::Compute { dump: Some(path) } if resume => {
                let (writer, index) = DumpWriter::resume(path).map_err(PipelineError::io(path.display()))?;
                Self { compute: true, replay: index, writer: Some(Mutex::new(writer)) }
            }
            StagePlan::Compute { dump: Some(path) } => {
                let writer = DumpWriter::create(path).map_err(PipelineError::io(path.display()))?;
                Self { compute: true, replay: None, writer: Some(Mutex::new(writer)) }
            }
        })
    }

    fn replay_rows<T: serde::de::DeserializeOwned>(&self, instance_id: &str) -> Result<Option<Vec<T>>, PipelineError> {
        match &self.replay {
            Some(index) => index.rows(instance_id).map_err(PipelineError::io(index.path().display())),
            None => Ok(None),
        }
    }

    /// Records a freshly computed group right away, so completed work
    /// survives an interruption regardless of output order.
    fn record<T: Serialize>(&self, rows: &[T], what: &str) -> Result<(), PipelineError> {
        if let Some(w) = &self.writer {
            let mut w = w.lock().unwrap_or_else(|e| e.into_inner());
            w.write_group(rows).map_err(PipelineError::io(what))?;
        }
        Ok(())
    }

    fn finish(self) -> Result<(), PipelineError> {
        match self.writer {
            Some(w) => w
                .into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .finish()
                .map_err(PipelineError::io("stage dump")),
            None => Ok(()),
        }
    }
}

struct Ctx<'a> {
    settings: &'a Settings,
    gateway: Option<&'a Gateway>,
    stage1: StageCtx,
    stage2: StageCtx,
    stage2_enabled: bool,
}

fn incomplete_flags(instance: &TrainingInstance, flag: Flag) -> Vec<Flag> {
    let mut flags = Vec::new();
    if instance.is_multi_positive() {
        add_flag(&mut flags, Flag::MultiPositive);
    }
    add_flag(&mut flags, flag);
    flags
}

impl Ctx<'_> {
    async fn snippets(&self, instance: &TrainingInstance, out: &mut Outcome) -> Result<Option<SnippetSet>, PipelineError> {
        if let Some(rows) = self.stage1.replay_rows::<Stage1Row>(&instance.instance_id)? {
            if let Some(set) = Stage1Row::snippet_set(rows, instance) {
                out.stage1 = StageState::Replayed;
                return Ok(Some(set));
            }
        }
        if !self.stage1.compute {
            out.stage1 = StageState::Incomplete;
            return Ok(None);
        }
        let gateway = self.gateway.ok_or(PipelineError::NoBackend("stage 1"))?;
        match run_stage1(instance, gateway, self.settings.normalization).await {
            Ok(o) => {
                out.stage1 = StageState::Computed;
                self.stage1.record(&Stage1Row::group(&instance.instance_id, &o.snippets), "stage 1 dump")?;
                Ok(Some(o.snippets))
            }
            Err(e) => {
                tracing::warn!(error = %e, "stage 1 failed");
                out.stage1 = StageState::Incomplete;
                Ok(None)
            }
        }
    }

    async fn ranking(
        &self,
        instance: &TrainingInstance,
        snippets: &SnippetSet,
        out: &mut Outcome,
    ) -> Result<Option<Stage2Row>, PipelineError> {
        if let Some(mut rows) = self.stage2.replay_rows::<Stage2Row>(&instance.instance_id)? {
            if let Some(row) = rows.pop().filter(|r| rows.is_empty() && r.fits(snippets.len())) {
                out.stage2 = StageState::Replayed;
                return Ok(Some(row));
            }
        }
        if !self.stage2.compute {
            out.stage2 = StageState::Incomplete;
            return Ok(None);
        }
        let gateway = self.gateway.ok_or(PipelineError::NoBackend("stage 2"))?;
        match rank_snippets(instance, snippets, gateway, self.settings.ranking_mode).await {
            Ok(o) => {
                out.stage2 = StageState::Computed;
                let row = Stage2Row {
                    instance_id: instance.instance_id.clone(),
                    ranking: o.ranking,
                    flags: o.flags,
                };
                self.stage2.record(std::slice::from_ref(&row), "stage 2 dump")?;
                Ok(Some(row))
            }
            Err(e) => {
                tracing::warn!(error = %e, "stage 2 failed");
                out.stage2 = StageState::Incomplete;
                Ok(None)
            }
        }
    }

    async fn process(&self, instance: TrainingInstance) -> Result<Outcome, PipelineError> {
        let mode = self.settings.mode;
        let mut out = Outcome::default();
        let Some(snippets) = self.snippets(&instance, &mut out).await? else {
            out.refined = Some(pass_through(&instance, mode, incomplete_flags(&instance, Flag::Stage1Incomplete)));
            return Ok(out);
        };
        let mut flags = instance_flags(&instance, &snippets);
        if !self.stage2_enabled {
            out.snippets = Some(snippets);
            return Ok(out);
        }
        if snippets.anchor().is_no_answer() {
            out.refined = Some(pass_through(&instance, mode, flags));
            out.snippets = Some(snippets);
            return Ok(out);
        }
        let Some(row) = self.ranking(&instance, &snippets, &mut out).await? else {
            add_flag(&mut flags, Flag::Stage2Incomplete);
            out.refined = Some(pass_through(&instance, mode, flags));
            out.snippets = Some(snippets);
            return Ok(out);
        };
        for f in &row.flags {
            add_flag(&mut flags, *f);
        }
        let refined = if row.ranking.fallback {
            add_flag(&mut flags, Flag::RankingUnparseable);
            pass_through(&instance, mode, flags)
        } else {
            let rules_err = |source| PipelineError::Rules {
                instance_id: instance.instance_id.clone(),
                source,
            };
            let decided = decide(&snippets, &row.ranking, mode, self.settings.options).map_err(rules_err)?;
            for f in decided.flags {
                add_flag(&mut flags, f);
            }
            apply_decisions(&instance, decided.decisions, mode, flags).map_err(rules_err)?
        };
        out.refined = Some(refined);
        out.snippets = Some(snippets);
        Ok(out)
    }
}

/// Runs `plan`. `gateway` may be `None` when no stage is computed.
pub async fn run(plan: &RunPlan, settings: &Settings, gateway: Option<&Gateway>) -> Result<RunReport, PipelineError> {
    let ctx = Ctx {
        settings,
        gateway,
        stage1: StageCtx::open(&plan.stage1, plan.resume)?,
        stage2: StageCtx::open(&plan.stage2, plan.resume)?,
        stage2_enabled: plan.stage2 != StagePlan::Skip,
    };
    if (ctx.stage1.compute || ctx.stage2.compute) && gateway.is_none() {
        return Err(PipelineError::NoBackend(if ctx.stage1.compute { "stage 1" } else { "stage 2" }));
    }
    let mut writer = match &plan.outputs {
        Some(o) => Some(
            RefinedWriter::create(&o.refined, &o.provenance, settings.reader.schema.clone(), settings.judge.clone())
                .map_err(PipelineError::io(o.refined.display()))?,
        ),
        None => None,
    };
    let mut reader = InstanceReader::open(&plan.input, settings.reader.clone())
        .map_err(PipelineError::io(plan.input.display()))?;
    let (requests_before, hits_before) = gateway.map_or((0, 0), |g| (g.requests_sent(), g.cache_hits()));
    let mut report = RunReport::default();

    {
        let ctx = &ctx;
        let stream = futures::stream::iter(&mut reader)
            .map(|record| async move {
                match record {
                    Ok(instance) => ctx.process(instance).await,
                    Err(e) => Err(PipelineError::Record(e)),
                }
            })
            .buffered(settings.window.max(1));
        futures::pin_mut!(stream);
        while let Some(outcome) = stream.next().await {
            let outcome = outcome?;
            report.instances += 1;
            match outcome.stage1 {
                StageState::Replayed => report.stage1_replayed += 1,
                StageState::Incomplete => report.stage1_incomplete += 1,
                StageState::Computed | StageState::NotRun => {}
            }
            match outcome.stage2 {
                StageState::Replayed => report.stage2_replayed += 1,
                StageState::Incomplete => report.stage2_incomplete += 1,
                StageState::Computed | StageState::NotRun => {}
            }
            if let (Some(w), Some(refined)) = (writer.as_mut(), &outcome.refined) {
                w.write(refined, outcome.snippets.as_ref()).map_err(PipelineError::io("refined output"))?;
            }
        }
    }

    report.skipped_records = reader.skipped();
    ctx.stage1.finish()?;
    ctx.stage2.finish()?;
    if let Some(w) = writer {
        report.summary = Some(w.finish().map_err(PipelineError::io("refined output"))?);
    }
    if let Some(g) = gateway {
        report.requests_sent = g.requests_sent() - requests_before;
        report.cache_hits = g.cache_hits() - hits_before;
    }
    Ok(report)
}

/// Convenience wrapper: refine `input` into `out` with a config-built backend.
pub async fn refine_file(
    config: &Config,
    input: impl AsRef<Path>,
    out: impl Into<PathBuf>,
) -> Result<RunReport, Box<dyn std::error::Error + Send + Sync>> {
    let gateway = config.build_gateway()?;
    let plan = RunPlan::refine(input.as_ref(), Outputs::beside(out));
    Ok(run(&plan, &Settings::from_config(config), Some(&gateway)).await?)
}
