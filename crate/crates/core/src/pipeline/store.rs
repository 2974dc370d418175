//! Append-only per-run event log.
//!
//! A run lives in `<store>/<run_id>/` as two JSON-lines files:
//! `events.jsonl` (pipeline: ingest, generate, evaluate, rewrite, stage) and
//! `review.jsonl` (expert decisions). State is rebuilt by replaying both
//! files in order. Each event is written with a single `write` call so a
//! killed process leaves at most one torn final line, which replay skips.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EvalVerdict, Rationale, RawSample, ReviewDecision};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const REVIEW_FILE: &str = "review.jsonl";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuarantineReason {
    RewritesExhausted { attempts: u32 },
    ProviderFailure { message: String },
    Rejected { reviewer: String, note: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StagedTo {
    D2,
    #[serde(rename = "quarantined")]
    Quarantined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PipelineEvent {
    Ingested {
        sample: RawSample,
    },
    Generated {
        id: String,
        rationale: Rationale,
    },
    Rewritten {
        id: String,
        rationale: Rationale,
    },
    Evaluated {
        id: String,
        revision: u32,
        verdict: EvalVerdict,
    },
    ProviderFailed {
        id: String,
        error: String,
    },
    Staged {
        id: String,
        to: StagedTo,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<QuarantineReason>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewOutcome {
    D3,
    #[serde(rename = "quarantined")]
    Quarantined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ReviewEvent {
    Decided {
        id: String,
        decision: ReviewDecision,
        outcome: ReviewOutcome,
        /// Human-edited rationale and its passing verdict, for edits.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        edited: Option<(Rationale, EvalVerdict)>,
    },
    EditRejected {
        id: String,
        decision: ReviewDecision,
        verdict: EvalVerdict,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<E> {
    v: u32,
    at: DateTime<Utc>,
    #[serde(flatten)]
    event: E,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Disposition {
    Pending,
    D2,
    Quarantined(QuarantineReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewRecord {
    pub decision: ReviewDecision,
    pub outcome: ReviewOutcome,
    pub edited: Option<(Rationale, EvalVerdict)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleState {
    pub raw: RawSample,
    /// Every rationale in revision order.
    pub rationales: Vec<Rationale>,
    /// Every verdict in evaluation order, with the revision it judged.
    pub verdicts: Vec<(u32, EvalVerdict)>,
    pub disposition: Disposition,
    pub provider_failures: usize,
    pub review: Option<ReviewRecord>,
}

impl SampleState {
    fn new(raw: RawSample) -> Self {
        SampleState {
            raw,
            rationales: Vec::new(),
            verdicts: Vec::new(),
            disposition: Disposition::Pending,
            provider_failures: 0,
            review: None,
        }
    }

    pub fn current(&self) -> Option<&Rationale> {
        self.rationales.last()
    }

    /// Verdict for the current rationale, if it has been evaluated.
    pub fn current_verdict(&self) -> Option<&EvalVerdict> {
        let rev = self.current()?.revision();
        self.verdicts
            .last()
            .filter(|(r, _)| *r == rev)
            .map(|(_, v)| v)
    }

    /// The rationale that passed Stage 2.
    pub fn d2_rationale(&self) -> Option<&Rationale> {
        (self.disposition == Disposition::D2)
            .then(|| self.current())
            .flatten()
    }

    pub fn is_d3(&self) -> bool {
        self.review
            .as_ref()
            .is_some_and(|r| r.outcome == ReviewOutcome::D3)
    }

    /// The rationale that entered D3 (human-edited text if edited).
    pub fn d3_rationale(&self) -> Option<&Rationale> {
        let review = self
            .review
            .as_ref()
            .filter(|r| r.outcome == ReviewOutcome::D3)?;
        match &review.edited {
            Some((r, _)) => Some(r),
            None => self.d2_rationale(),
        }
    }
}

/// Replayed view of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunState {
    pub samples: BTreeMap<String, SampleState>,
    /// Ids in the order they entered D2.
    pub d2_order: Vec<String>,
}

impl RunState {
    fn sample_mut(&mut self, id: &str) -> Result<&mut SampleState> {
        self.samples
            .get_mut(id)
            .ok_or_else(|| Error::StoreUnavailable(format!("event for unknown sample `{id}`")))
    }

    fn apply(&mut self, event: &PipelineEvent) -> Result<()> {
        match event {
            PipelineEvent::Ingested { sample } => {
                self.samples
                    .entry(sample.id.clone())
                    .or_insert_with(|| SampleState::new(sample.clone()));
            }
            PipelineEvent::Generated { id, rationale }
            | PipelineEvent::Rewritten { id, rationale } => {
                self.sample_mut(id)?.rationales.push(rationale.clone());
            }
            PipelineEvent::Evaluated {
                id,
                revision,
                verdict,
            } => {
                self.sample_mut(id)?
                    .verdicts
                    .push((*revision, verdict.clone()));
            }
            PipelineEvent::ProviderFailed { id, .. } => {
                self.sample_mut(id)?.provider_failures += 1;
            }
            PipelineEvent::Staged { id, to, reason } => {
                let s = self.sample_mut(id)?;
                s.disposition = match to {
                    StagedTo::D2 => Disposition::D2,
                    StagedTo::Quarantined => Disposition::Quarantined(reason.clone().unwrap_or(
                        QuarantineReason::ProviderFailure {
                            message: "unspecified".into(),
                        },
                    )),
                };
                if *to == StagedTo::D2 {
                    self.d2_order.push(id.clone());
                }
            }
        }
        Ok(())
    }

    fn apply_review(&mut self, event: &ReviewEvent) -> Result<()> {
        if let ReviewEvent::Decided {
            id,
            decision,
            outcome,
            edited,
        } = event
        {
            self.sample_mut(id)?.review = Some(ReviewRecord {
                decision: decision.clone(),
                outcome: *outcome,
                edited: edited.clone(),
            });
        }
        Ok(())
    }
}

struct Inner {
    events: File,
    review: File,
    state: RunState,
}

/// Handle to one run's log. Appends are serialized; each append updates
/// the in-memory state after the line reaches the file.
pub struct Store {
    dir: PathBuf,
    run_id: String,
    inner: Mutex<Inner>,
}

fn open_append(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

/// Replays `path`, returning the byte length of the intact prefix when the
/// file ends in a torn line.
fn replay_file<E, F>(path: &Path, mut apply: F) -> Result<Option<u64>>
where
    E: serde::de::DeserializeOwned,
    F: FnMut(&E) -> Result<()>,
{
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut line_no = 0;
    let mut intact: u64 = 0;
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            intact += n as u64;
            continue;
        }
        match serde_json::from_str::<Envelope<E>>(&line) {
            Ok(env) => {
                apply(&env.event)?;
                intact += n as u64;
            }
            // A torn final line from an interrupted append.
            Err(_) if !complete => {
                tracing::warn!(path = %path.display(), line = line_no, "dropping torn final log line");
                return Ok(Some(intact));
            }
            Err(e) => {
                return Err(Error::StoreUnavailable(format!(
                    "{}:{line_no}: corrupt log entry: {e}",
                    path.display()
                )))
            }
        }
    }
    Ok(None)
}

fn write_line<E: Serialize>(file: &mut File, path: &Path, event: E) -> Result<()> {
    let mut line = serde_json::to_string(&Envelope {
        v: LOG_VERSION,
        at: Utc::now(),
        event,
    })
    .map_err(|e| Error::StoreUnavailable(e.to_string()))?;
    line.push('\n');
    file.write_all(line.as_bytes())
        .map_err(|e| Error::io(path, e))
}

impl Store {
    /// Opens (creating if needed) `<root>/<run_id>/` and replays its logs.
    pub fn open(root: &Path, run_id: &str) -> Result<Self> {
        if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id.starts_with('.') {
            return Err(Error::Config(format!("invalid run id `{run_id}`")));
        }
        let dir = root.join(run_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut state = RunState::default();
        let events_path = dir.join(EVENTS_FILE);
        let review_path = dir.join(REVIEW_FILE);
        let torn_events = replay_file::<PipelineEvent, _>(&events_path, |e| state.apply(e))?;
        let torn_review = replay_file::<ReviewEvent, _>(&review_path, |e| state.apply_review(e))?;
        let events = open_append(&events_path)?;
        let review = open_append(&review_path)?;
        for (file, path, torn) in [
            (&events, &events_path, torn_events),
            (&review, &review_path, torn_review),
        ] {
            if let Some(len) = torn {
                file.set_len(len).map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(Store {
            dir,
            run_id: run_id.to_string(),
            inner: Mutex::new(Inner {
                events,
                review,
                state,
            }),
        })
    }

    /// Opens an existing run without creating anything.
    pub fn open_existing(root: &Path, run_id: &str) -> Result<Self> {
        let dir = root.join(run_id);
        if !dir.join(EVENTS_FILE).is_file() {
            return Err(Error::StoreUnavailable(format!(
                "no run `{run_id}` under {}",
                root.display()
            )));
        }
        Self::open(root, run_id)
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn append(&self, event: PipelineEvent) -> Result<()> {
        let mut inner = self.lock();
        // Refuse before the line becomes durable.
        if let Some(id) = event.sample_id() {
            if !inner.state.samples.contains_key(id) {
                return Err(Error::StoreUnavailable(format!(
                    "event for unknown sample `{id}`"
                )));
            }
        }
        let path = self.dir.join(EVENTS_FILE);
        write_line(&mut inner.events, &path, &event)?;
        inner.state.apply(&event)
    }

    pub fn append_review(&self, event: ReviewEvent) -> Result<()> {
        let mut inner = self.lock();
        let path = self.dir.join(REVIEW_FILE);
        let (ReviewEvent::Decided { id, .. } | ReviewEvent::EditRejected { id, .. }) = &event;
        if !inner.state.samples.contains_key(id) {
            return Err(Error::StoreUnavailable(format!(
                "review for unknown sample `{id}`"
            )));
        }
        write_line(&mut inner.review, &path, &event)?;
        inner.state.apply_review(&event)
    }

    /// Consistent copy of the current state.
    pub fn snapshot(&self) -> RunState {
        self.lock().state.clone()
    }

    pub fn with_state<R>(&self, f: impl FnOnce(&RunState) -> R) -> R {
        f(&self.lock().state)
    }

    pub fn sample(&self, id: &str) -> Option<SampleState> {
        self.lock().state.samples.get(id).cloned()
    }

    /// Flushes both logs to stable storage.
    pub fn sync(&self) -> Result<()> {
        let inner = self.lock();
        inner
            .events
            .sync_all()
            .map_err(|e| Error::io(&self.dir, e))?;
        inner.review.sync_all().map_err(|e| Error::io(&self.dir, e))
    }
}

impl PipelineEvent {
    /// The sample an event refers to, for every event but ingestion.
    pub fn sample_id(&self) -> Option<&str> {
        match self {
            PipelineEvent::Ingested { .. } => None,
            PipelineEvent::Generated { id, .. }
            | PipelineEvent::Rewritten { id, .. }
            | PipelineEvent::Evaluated { id, .. }
            | PipelineEvent::ProviderFailed { id, .. }
            | PipelineEvent::Staged { id, .. } => Some(id),
        }
    }
}
