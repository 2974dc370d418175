//! Stages 1 and 2: generate a rationale per sample, evaluate it, rewrite
//! on failure up to `max_rewrites` times, and stage each sample into D2 or
//! quarantine. Every step is an event in the run's [`Store`], so a run can
//! be interrupted and resumed without repeating provider calls.

pub mod export;
pub mod report;
pub mod store;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt, TryStreamExt};
use tokio_util::sync::CancellationToken;

use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::generation::{
    generate_rationale, rewrite_rationale, GenerationError, PromptTemplate, ProviderClient,
    ProviderConfig,
};
use crate::model::{advance_stage, CoTSample, Rationale, RawSample, Stage};

pub use export::{export, export_records, ExportFormat};
pub use report::{LanguageCounts, ReviewCounts, RunReport, StageCounts, Stats};
pub use store::{
    Disposition, PipelineEvent, QuarantineReason, RunState, SampleState, StagedTo, Store,
};

pub const DEFAULT_MAX_REWRITES: u32 = 3;

#[derive(Debug, Clone)]
pub struct Templates {
    pub generate: PromptTemplate,
    pub rewrite: PromptTemplate,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            generate: PromptTemplate::default_generate(),
            rewrite: PromptTemplate::default_rewrite(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub eval: EvalConfig,
    pub provider: ProviderConfig,
    pub templates: Templates,
    pub max_rewrites: u32,
    pub workers: usize,
    pub store_path: PathBuf,
    pub run_id: String,
}

impl PipelineConfig {
    /// Defaults everywhere except the store location.
    pub fn new(store_path: impl Into<PathBuf>, run_id: impl Into<String>) -> Self {
        PipelineConfig {
            eval: EvalConfig::default(),
            provider: ProviderConfig::mock(),
            templates: Templates::default(),
            max_rewrites: DEFAULT_MAX_REWRITES,
            workers: 8,
            store_path: store_path.into(),
            run_id: run_id.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers < 1 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.eval.validate()?;
        self.provider.validate().map_err(Error::Config)?;
        if let Some(judge) = &self.eval.judge {
            judge.validate().map_err(Error::Config)?;
        }
        Ok(())
    }
}

/// Provider handles used by a run.
#[derive(Clone)]
pub struct Clients {
    pub generator: ProviderClient,
    pub judge: Option<ProviderClient>,
}

impl Clients {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let generator = ProviderClient::from_config(&cfg.provider)?;
        let judge = cfg
            .eval
            .judge
            .as_ref()
            .map(ProviderClient::from_config)
            .transpose()?;
        Ok(Clients { generator, judge })
    }
}

/// Runs Stages 1 and 2 to completion with providers built from `cfg`.
pub async fn run_stage12(samples: &[RawSample], cfg: &PipelineConfig) -> Result<RunReport> {
    let clients = Clients::from_config(cfg)?;
    run_stage12_with(samples, cfg, &clients, &CancellationToken::new()).await
}

/// As [`run_stage12`] with explicit clients. Once `cancel` fires no new
/// provider call starts; calls already in flight finish and are recorded,
/// and the returned report counts the unfinished samples as in flight.
pub async fn run_stage12_with(
    samples: &[RawSample],
    cfg: &PipelineConfig,
    clients: &Clients,
    cancel: &CancellationToken,
) -> Result<RunReport> {
    cfg.validate()?;
    let store = Store::open(&cfg.store_path, &cfg.run_id)?;
    run_on_store(samples, cfg, clients, cancel, &store).await
}

pub async fn run_on_store(
    samples: &[RawSample],
    cfg: &PipelineConfig,
    clients: &Clients,
    cancel: &CancellationToken,
    store: &Store,
) -> Result<RunReport> {
    let started = Instant::now();
    let mut by_id: HashMap<&str, &RawSample> = HashMap::with_capacity(samples.len());
    for s in samples {
        if by_id.insert(s.id.as_str(), s).is_some() {
            return Err(Error::DuplicateId(s.id.clone()));
        }
    }
    let state = store.snapshot();
    for s in samples {
        if let Some(existing) = state.samples.get(&s.id) {
            if existing.raw != *s {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
    }
    for s in samples {
        if !state.samples.contains_key(&s.id) {
            store.append(PipelineEvent::Ingested { sample: s.clone() })?;
        }
    }

    // Input order first, then anything left pending by an earlier call.
    let mut pending: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let extra: Vec<String> = store.with_state(|st| {
        st.samples
            .keys()
            .filter(|id| !by_id.contains_key(id.as_str()))
            .cloned()
            .collect()
    });
    pending.extend(extra);
    pending.retain(|id| {
        store.with_state(|st| {
            st.samples
                .get(id)
                .is_some_and(|s| s.disposition == Disposition::Pending)
        })
    });
    tracing::info!(run = %cfg.run_id, pending = pending.len(), "starting stage 1/2");

    let worker = Worker {
        cfg,
        clients,
        cancel,
        store,
    };
    stream::iter(pending)
        .map(|id| worker.process(id))
        .buffer_unordered(cfg.workers)
        .try_collect::<Vec<()>>()
        .await?;
    if !cancel.is_cancelled() {
        store.sync()?;
    }
    let mut report = store.with_state(|st| RunReport::from_state(store.run_id(), st));
    report.wall_time = started.elapsed();
    Ok(report)
}

enum Step {
    Generate,
    Evaluate(Rationale),
    Stage(Rationale),
    Rewrite(Rationale),
    Exhausted(u32),
}

fn next_step(s: &SampleState, max_rewrites: u32) -> Step {
    let Some(current) = s.current() else {
        return Step::Generate;
    };
    match s.current_verdict() {
        None => Step::Evaluate(current.clone()),
        Some(v) if v.passed => Step::Stage(current.clone()),
        Some(_) if current.revision() >= max_rewrites => Step::Exhausted(current.revision()),
        Some(_) => Step::Rewrite(current.clone()),
    }
}

struct Worker<'a> {
    cfg: &'a PipelineConfig,
    clients: &'a Clients,
    cancel: &'a CancellationToken,
    store: &'a Store,
}

impl Worker<'_> {
    async fn process(&self, id: String) -> Result<()> {
        loop {
            let Some(state) = self.store.sample(&id) else {
                return Ok(());
            };
            if state.disposition != Disposition::Pending || self.cancel.is_cancelled() {
                return Ok(());
            }
            match next_step(&state, self.cfg.max_rewrites) {
                Step::Generate => {
                    let result = generate_rationale(
                        &state.raw,
                        &self.cfg.templates.generate,
                        &self.clients.generator,
                    )
                    .await;
                    let rationale = match result {
                        Ok(r) => r,
                        // Kept verbatim; the reserved-tag consistency rule
                        // fails it and the rewrite loop takes over.
                        Err(GenerationError::ReservedTagInContent { raw }) => {
                            Rationale::generated(raw)?
                        }
                        Err(e) => return self.provider_failed(&id, e),
                    };
                    self.store.append(PipelineEvent::Generated {
                        id: id.clone(),
                        rationale,
                    })?;
                }
                Step::Evaluate(rationale) => {
                    let verdict = self
                        .cfg
                        .eval
                        .evaluate_with_judge(
                            rationale.text(),
                            &state.raw,
                            self.clients.judge.as_ref(),
                        )
                        .await;
                    self.store.append(PipelineEvent::Evaluated {
                        id: id.clone(),
                        revision: rationale.revision(),
                        verdict,
                    })?;
                }
                Step::Stage(rationale) => {
                    let mut sample = CoTSample::new(state.raw.clone(), rationale);
                    if let Some(v) = state.current_verdict() {
                        sample.push_verdict(v.clone());
                    }
                    advance_stage(&sample, Stage::D2)?;
                    self.store.append(PipelineEvent::Staged {
                        id: id.clone(),
                        to: StagedTo::D2,
                        reason: None,
                    })?;
                }
                Step::Exhausted(attempts) => {
                    self.store.append(PipelineEvent::Staged {
                        id: id.clone(),
                        to: StagedTo::Quarantined,
                        reason: Some(QuarantineReason::RewritesExhausted { attempts }),
                    })?;
                }
                Step::Rewrite(prior) => {
                    let verdict = state
                        .current_verdict()
                        .cloned()
                        .expect("failing verdict present");
                    let result = rewrite_rationale(
                        &state.raw,
                        &prior,
                        &verdict,
                        &self.cfg.templates.rewrite,
                        &self.clients.generator,
                    )
                    .await;
                    match result {
                        Ok(rationale) => self.store.append(PipelineEvent::Rewritten {
                            id: id.clone(),
                            rationale,
                        })?,
                        Err(e) => return self.provider_failed(&id, e),
                    }
                }
            }
        }
    }

    fn provider_failed(&self, id: &str, err: GenerationError) -> Result<()> {
        tracing::warn!(sample = %id, error = %err, "provider failed; quarantining sample");
        let message = err.to_string();
        self.store.append(PipelineEvent::ProviderFailed {
            id: id.to_string(),
            error: message.clone(),
        })?;
        self.store.append(PipelineEvent::Staged {
            id: id.to_string(),
            to: StagedTo::Quarantined,
            reason: Some(QuarantineReason::ProviderFailure { message }),
        })
    }
}

/// Shared handle for embedding a run in a longer-lived process.
pub fn open_store(cfg: &PipelineConfig) -> Result<Arc<Store>> {
    Ok(Arc::new(Store::open(&cfg.store_path, &cfg.run_id)?))
}
