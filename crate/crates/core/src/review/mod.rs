//! Stage 3 expert review.
//!
//! D2 samples are served FIFO under time-limited leases. Every mutation of
//! an item bumps its version, and a decision only lands if it names the
//! current version (compare-and-set), so of several racing decisions on one
//! item exactly one wins. Decisions are appended to the run's review log
//! before the in-memory queue changes.

pub mod auth;
pub mod http;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::EvalConfig;
use crate::model::{
    advance_stage, CoTSample, EvalVerdict, ModelError, Origin, ReviewAction, ReviewDecision, Stage,
};
use crate::pipeline::store::{ReviewEvent, ReviewOutcome, Store};

pub use auth::{Reviewer, TokenTable};

pub const DEFAULT_LEASE: Duration = Duration::from_secs(15 * 60);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReviewError {
    #[error("missing or unknown bearer token")]
    Unauthorized,
    #[error("item `{id}` is at version {current}, decision named {given}")]
    VersionConflict {
        id: String,
        current: u64,
        given: u64,
    },
    #[error("no review item `{0}`")]
    UnknownItem(String),
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error("review store unavailable: {0}")]
    Store(String),
}

impl ReviewError {
    pub fn name(&self) -> &'static str {
        match self {
            ReviewError::Unauthorized => "Unauthorized",
            ReviewError::VersionConflict { .. } => "VersionConflict",
            ReviewError::UnknownItem(_) => "UnknownItem",
            ReviewError::InvalidDecision(_) => "InvalidDecision",
            ReviewError::Store(_) => "StoreUnavailable",
        }
    }
}

impl From<ModelError> for ReviewError {
    fn from(e: ModelError) -> Self {
        ReviewError::InvalidDecision(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Open,
    D3,
    Quarantined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub id: String,
    pub sample: CoTSample,
    pub version: u64,
    pub status: ItemStatus,
    pub claimed_by: Option<String>,
    pub claimed_until: Option<DateTime<Utc>>,
}

impl QueueItem {
    fn lease_active(&self, now: DateTime<Utc>) -> bool {
        self.claimed_until.is_some_and(|t| t > now)
    }
}

/// What a reviewer submits; the server fills in reviewer and timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub action: ReviewAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_text: Option<String>,
    pub sample_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum DecisionOutcome {
    /// The decision landed; the item left the queue.
    Accepted {
        id: String,
        status: ItemStatus,
        version: u64,
    },
    /// An edit failed re-evaluation; the item stays in D2 with the reviewer.
    Returned {
        id: String,
        version: u64,
        verdict: EvalVerdict,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub open: usize,
    pub leased: usize,
    pub d3: usize,
    pub quarantined: usize,
}

impl Progress {
    pub fn total(&self) -> usize {
        self.open + self.leased + self.d3 + self.quarantined
    }
}

type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

struct QueueState {
    items: BTreeMap<String, QueueItem>,
    /// D2 intake order.
    order: Vec<String>,
}

pub struct ReviewQueue {
    store: Arc<Store>,
    eval: EvalConfig,
    tokens: TokenTable,
    lease: Duration,
    clock: Clock,
    state: Mutex<QueueState>,
}

impl ReviewQueue {
    /// Builds the queue from every D2 sample in `store`; samples with a
    /// recorded decision are loaded as decided.
    pub fn new(store: Arc<Store>, eval: EvalConfig, tokens: TokenTable) -> Self {
        let (items, order) = store.with_state(|st| {
            let mut items = BTreeMap::new();
            for id in &st.d2_order {
                let s = &st.samples[id];
                let Some(rationale) = s.d2_rationale() else {
                    continue;
                };
                let mut sample = CoTSample::new(s.raw.clone(), rationale.clone());
                if let Some(v) = s.current_verdict() {
                    sample.push_verdict(v.clone());
                }
                let mut sample =
                    advance_stage(&sample, Stage::D2).expect("D2 samples carry a passing verdict");
                let mut status = ItemStatus::Open;
                let mut version = 0;
                if let Some(review) = &s.review {
                    sample = sample.with_review(review.decision.clone());
                    if let Some((r, v)) = &review.edited {
                        sample = sample.with_human_edit(r.clone(), v.clone());
                    }
                    status = match review.outcome {
                        ReviewOutcome::D3 => {
                            sample = advance_stage(&sample, Stage::D3).unwrap_or(sample);
                            ItemStatus::D3
                        }
                        ReviewOutcome::Quarantined => ItemStatus::Quarantined,
                    };
                    version = review.decision.sample_version + 1;
                }
                items.insert(
                    id.clone(),
                    QueueItem {
                        id: id.clone(),
                        sample,
                        version,
                        status,
                        claimed_by: None,
                        claimed_until: None,
                    },
                );
            }
            (items, st.d2_order.clone())
        });
        ReviewQueue {
            store,
            eval,
            tokens,
            lease: DEFAULT_LEASE,
            clock: Arc::new(Utc::now),
            state: Mutex::new(QueueState { items, order }),
        }
    }

    pub fn with_lease(mut self, lease: Duration) -> Self {
        self.lease = lease;
        self
    }

    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn eval_config(&self) -> &EvalConfig {
        &self.eval
    }

    pub fn authenticate(&self, bearer: Option<&str>) -> Result<Reviewer, ReviewError> {
        self.tokens.authenticate(bearer)
    }

    fn lock(&self) -> MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Leases the oldest open item to `reviewer`. A reviewer who already
    /// holds a live lease gets that item back with the lease renewed.
    pub fn next_item(&self, reviewer: &Reviewer) -> Option<QueueItem> {
        let now = (self.clock)();
        let until = now + chrono::Duration::from_std(self.lease).unwrap_or(chrono::TimeDelta::MAX);
        let mut st = self.lock();
        let QueueState { items, order } = &mut *st;
        let open = || {
            order
                .iter()
                .filter(|id| items[*id].status == ItemStatus::Open)
        };
        let held = open().find(|id| {
            items[*id].lease_active(now) && items[*id].claimed_by.as_deref() == Some(reviewer.id())
        });
        let chosen = held
            .or_else(|| open().find(|id| !items[*id].lease_active(now)))?
            .clone();
        let item = items.get_mut(&chosen).expect("ordered ids are items");
        item.version += 1;
        item.claimed_by = Some(reviewer.id().to_string());
        item.claimed_until = Some(until);
        Some(item.clone())
    }

    pub fn item(&self, id: &str) -> Result<QueueItem, ReviewError> {
        self.lock()
            .items
            .get(id)
            .cloned()
            .ok_or_else(|| ReviewError::UnknownItem(id.to_string()))
    }

    /// Applies a decision if `request.sample_version` is current.
    pub fn decide(
        &self,
        reviewer: &Reviewer,
        id: &str,
        request: DecisionRequest,
    ) -> Result<DecisionOutcome, ReviewError> {
        let mut st = self.lock();
        let item = st
            .items
            .get_mut(id)
            .ok_or_else(|| ReviewError::UnknownItem(id.to_string()))?;
        // A closed item has no version left to decide against.
        if request.sample_version != item.version || item.status != ItemStatus::Open {
            return Err(ReviewError::VersionConflict {
                id: id.to_string(),
                current: item.version,
                given: request.sample_version,
            });
        }
        let decision = ReviewDecision {
            action: request.action,
            reviewer: reviewer.id().to_string(),
            note: request.note,
            edited_text: request.edited_text,
            decided_at: (self.clock)(),
            sample_version: request.sample_version,
        };
        decision.validate(item.sample.rationale.text())?;
        let persist = |event| {
            self.store
                .append_review(event)
                .map_err(|e| ReviewError::Store(e.to_string()))
        };

        let (sample, status, edited) = match decision.action {
            ReviewAction::Approve => {
                let s = advance_stage(
                    &item.sample.clone().with_review(decision.clone()),
                    Stage::D3,
                )?;
                (s, ItemStatus::D3, None)
            }
            ReviewAction::Reject => (
                item.sample.clone().with_review(decision.clone()),
                ItemStatus::Quarantined,
                None,
            ),
            ReviewAction::Edit => {
                let text = decision.edited_text.clone().expect("validated edit");
                let rationale = item.sample.rationale.revise(text, Origin::HumanEdited)?;
                let verdict = self.eval.evaluate_text_at(
                    rationale.text(),
                    &item.sample.raw,
                    decision.decided_at,
                );
                if !verdict.passed {
                    persist(ReviewEvent::EditRejected {
                        id: id.to_string(),
                        decision,
                        verdict: verdict.clone(),
                    })?;
                    return Ok(DecisionOutcome::Returned {
                        id: id.to_string(),
                        version: item.version,
                        verdict,
                    });
                }
                let s = item
                    .sample
                    .clone()
                    .with_human_edit(rationale.clone(), verdict.clone())
                    .with_review(decision.clone());
                (
                    advance_stage(&s, Stage::D3)?,
                    ItemStatus::D3,
                    Some((rationale, verdict)),
                )
            }
        };
        let outcome = match status {
            ItemStatus::D3 => ReviewOutcome::D3,
            _ => ReviewOutcome::Quarantined,
        };
        persist(ReviewEvent::Decided {
            id: id.to_string(),
            decision,
            outcome,
            edited,
        })?;
        item.sample = sample;
        item.status = status;
        item.version += 1;
        item.claimed_by = None;
        item.claimed_until = None;
        Ok(DecisionOutcome::Accepted {
            id: id.to_string(),
            status,
            version: item.version,
        })
    }

    pub fn progress(&self) -> Progress {
        let now = (self.clock)();
        let st = self.lock();
        let mut p = Progress::default();
        for item in st.items.values() {
            match item.status {
                ItemStatus::Open if item.lease_active(now) => p.leased += 1,
                ItemStatus::Open => p.open += 1,
                ItemStatus::D3 => p.d3 += 1,
                ItemStatus::Quarantined => p.quarantined += 1,
            }
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Rationale, RawSample};
    use crate::pipeline::{PipelineEvent, StagedTo};

    const GOOD: &str = "The letter shapes form \"{a}\" and the word makes sense in context, so \"{a}\" is the reading.";

    pub(crate) fn seeded(dir: &std::path::Path, n: usize) -> Arc<Store> {
        let store = Store::open(dir, "r").unwrap();
        let cfg = EvalConfig::default();
        for i in 0..n {
            let id = format!("s{i}");
            let answer = format!("WORD{i}");
            let raw = RawSample::new(&id, "x.png", &answer).unwrap();
            let r = Rationale::generated(GOOD.replace("{a}", &answer)).unwrap();
            let v = cfg.evaluate_text(r.text(), &raw);
            assert!(v.passed, "{v:?}");
            store
                .append(PipelineEvent::Ingested { sample: raw })
                .unwrap();
            store
                .append(PipelineEvent::Generated {
                    id: id.clone(),
                    rationale: r,
                })
                .unwrap();
            store
                .append(PipelineEvent::Evaluated {
                    id: id.clone(),
                    revision: 0,
                    verdict: v,
                })
                .unwrap();
            store
                .append(PipelineEvent::Staged {
                    id,
                    to: StagedTo::D2,
                    reason: None,
                })
                .unwrap();
        }
        Arc::new(store)
    }

    fn queue(store: Arc<Store>) -> ReviewQueue {
        let tokens = TokenTable::parse("alice:ta,bob:tb").unwrap();
        ReviewQueue::new(store, EvalConfig::default(), tokens)
    }

    fn req(action: ReviewAction, version: u64) -> DecisionRequest {
        DecisionRequest {
            action,
            note: None,
            edited_text: None,
            sample_version: version,
        }
    }

    #[test]
    fn fifo_leasing_and_approve() {
        let dir = tempfile::tempdir().unwrap();
        let q = queue(seeded(dir.path(), 2));
        let alice = q.authenticate(Some("ta")).unwrap();
        let bob = q.authenticate(Some("tb")).unwrap();
        let a = q.next_item(&alice).unwrap();
        assert_eq!((a.id.as_str(), a.version), ("s0", 1));
        let b = q.next_item(&bob).unwrap();
        assert_eq!(b.id, "s1");
        assert!(q.next_item(&bob).is_some_and(|i| i.id == "s1"));
        assert_eq!(
            q.progress(),
            Progress {
                open: 0,
                leased: 2,
                d3: 0,
                quarantined: 0
            }
        );
        let out = q
            .decide(&alice, "s0", req(ReviewAction::Approve, 1))
            .unwrap();
        assert!(matches!(
            out,
            DecisionOutcome::Accepted {
                status: ItemStatus::D3,
                version: 2,
                ..
            }
        ));
        assert_eq!(q.item("s0").unwrap().sample.stage(), Stage::D3);
        let err = q
            .decide(&alice, "s0", req(ReviewAction::Approve, 1))
            .unwrap_err();
        assert_eq!(err.name(), "VersionConflict");
    }

    #[test]
    fn edits_are_re_evaluated() {
        let dir = tempfile::tempdir().unwrap();
        let store = seeded(dir.path(), 1);
        let q = queue(store.clone());
        let alice = q.authenticate(Some("ta")).unwrap();
        let item = q.next_item(&alice).unwrap();
        let long = "shape ".repeat(150);
        let mut r = req(ReviewAction::Edit, item.version);
        r.edited_text = Some(long);
        match q.decide(&alice, "s0", r).unwrap() {
            DecisionOutcome::Returned { verdict, .. } => {
                assert!(verdict
                    .violations
                    .contains(&crate::model::Violation::LengthExceeded))
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(q.item("s0").unwrap().status, ItemStatus::Open);
        let mut r = req(ReviewAction::Edit, item.version);
        r.edited_text = Some(
            "Curved letter shapes spell \"WORD0\"; the meaning fits, so \"WORD0\" stands.".into(),
        );
        assert!(matches!(
            q.decide(&alice, "s0", r).unwrap(),
            DecisionOutcome::Accepted {
                status: ItemStatus::D3,
                ..
            }
        ));
        let s = store.sample("s0").unwrap();
        assert_eq!(s.d3_rationale().unwrap().origin(), Origin::HumanEdited);

        // Reloading from the log restores the decided item.
        let q2 = queue(store);
        assert_eq!(
            q2.progress(),
            Progress {
                open: 0,
                leased: 0,
                d3: 1,
                quarantined: 0
            }
        );
    }

    #[test]
    fn reject_requires_note_and_quarantines() {
        let dir = tempfile::tempdir().unwrap();
        let q = queue(seeded(dir.path(), 1));
        let bob = q.authenticate(Some("tb")).unwrap();
        assert_eq!(
            q.decide(&bob, "s0", req(ReviewAction::Reject, 0))
                .unwrap_err()
                .name(),
            "InvalidDecision"
        );
        let mut r = req(ReviewAction::Reject, 0);
        r.note = Some("blurry".into());
        q.decide(&bob, "s0", r).unwrap();
        assert_eq!(q.progress().quarantined, 1);
        assert_eq!(
            q.decide(&bob, "nope", req(ReviewAction::Approve, 0))
                .unwrap_err()
                .name(),
            "UnknownItem"
        );
    }

    #[test]
    fn leases_expire() {
        let dir = tempfile::tempdir().unwrap();
        let now = Arc::new(Mutex::new(Utc::now()));
        let clock = now.clone();
        let q = queue(seeded(dir.path(), 1))
            .with_lease(Duration::from_secs(60))
            .with_clock(move || *clock.lock().unwrap());
        let alice = q.authenticate(Some("ta")).unwrap();
        let bob = q.authenticate(Some("tb")).unwrap();
        assert!(q.next_item(&alice).is_some());
        assert!(q.next_item(&bob).is_none());
        *now.lock().unwrap() += chrono::Duration::seconds(61);
        assert_eq!(q.progress().open, 1);
        let item = q.next_item(&bob).unwrap();
        assert_eq!((item.claimed_by.as_deref(), item.version), (Some("bob"), 2));
    }
}
