//! Randomized concurrent review sessions checked against the queue's invariants.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex};

use cot_curate::review::{
    DecisionOutcome, DecisionRequest, ItemStatus, ReviewError, ReviewQueue, TokenTable,
};
use cot_curate::{EvalConfig, ReviewAction, Stage};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::{passing_text, seeded_d2};

pub const REVIEWERS: [&str; 4] = ["ana", "ben", "chen", "dev"];

pub fn tokens() -> TokenTable {
    TokenTable::parse("ana:tok-ana,ben:tok-ben,chen:tok-chen,dev:tok-dev").unwrap()
}

pub fn queue(store: Arc<cot_curate::pipeline::Store>) -> ReviewQueue {
    ReviewQueue::new(store, EvalConfig::default(), tokens())
}

fn random_request(rng: &mut StdRng, answer: &str, version: u64) -> DecisionRequest {
    let sample_version = match rng.random_range(0..10) {
        0 => version.saturating_sub(1),
        1 => version + 1,
        _ => version,
    };
    let (action, note, edited_text) = match rng.random_range(0..8) {
        0..=2 => (ReviewAction::Approve, None, None),
        3 => (
            ReviewAction::Reject,
            Some("wrong reading".to_string()),
            None,
        ),
        4 => (ReviewAction::Reject, None, None),
        5 => (ReviewAction::Edit, None, Some(passing_text(answer))),
        6 => (ReviewAction::Edit, None, Some("Looks fine.".to_string())),
        _ => (ReviewAction::Edit, None, None),
    };
    DecisionRequest {
        action,
        note,
        edited_text,
        sample_version,
    }
}

/// One storm over `n` D2 items. Returns a description of the first broken
/// invariant.
pub fn review_storm(seed: u64, dir: &Path, n: usize) -> Result<(), String> {
    let store = seeded_d2(dir, n);
    let q = Arc::new(queue(store.clone()));
    // (id, version given) of every accepted decision.
    let accepted: Arc<Mutex<Vec<(String, u64, String)>>> = Arc::default();
    let errors: Arc<Mutex<Vec<String>>> = Arc::default();

    std::thread::scope(|scope| {
        for (k, name) in REVIEWERS.iter().enumerate() {
            let (q, accepted, errors) = (q.clone(), accepted.clone(), errors.clone());
            scope.spawn(move || {
                let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(k as u64));
                let me = q.authenticate(Some(&format!("tok-{name}"))).unwrap();
                for _ in 0..50 * n {
                    let p = q.progress();
                    if p.total() != n {
                        errors
                            .lock()
                            .unwrap()
                            .push(format!("progress total {} != {n}", p.total()));
                    }
                    // Sometimes race on someone else's item by id.
                    let target = if rng.random_bool(0.2) {
                        let id = format!("s{:05}", rng.random_range(0..n));
                        q.item(&id).ok()
                    } else {
                        q.next_item(&me)
                    };
                    let Some(item) = target else {
                        if q.progress().open + q.progress().leased == 0 {
                            break;
                        }
                        std::thread::yield_now();
                        continue;
                    };
                    let req = random_request(&mut rng, &item.sample.raw.answer, item.version);
                    let given = req.sample_version;
                    let was_current = given == item.version;
                    match q.decide(&me, &item.id, req) {
                        Ok(DecisionOutcome::Accepted { id, version, .. }) => {
                            if version != given + 1 {
                                errors
                                    .lock()
                                    .unwrap()
                                    .push(format!("{id}: accepted v{given} became v{version}"));
                            }
                            accepted.lock().unwrap().push((id, given, name.to_string()));
                        }
                        Ok(DecisionOutcome::Returned { verdict, .. }) => {
                            if verdict.passed {
                                errors
                                    .lock()
                                    .unwrap()
                                    .push(format!("{}: passing edit returned", item.id));
                            }
                        }
                        Err(ReviewError::VersionConflict { .. })
                        | Err(ReviewError::InvalidDecision(_)) => {}
                        Err(e) if !was_current => errors
                            .lock()
                            .unwrap()
                            .push(format!("stale request gave {e}")),
                        Err(e) => errors.lock().unwrap().push(format!("{}: {e}", item.id)),
                    }
                }
            });
        }
    });
    if let Some(e) = errors.lock().unwrap().first() {
        return Err(format!("seed {seed}: {e}"));
    }

    let accepted = accepted.lock().unwrap().clone();
    let mut winners = BTreeSet::new();
    for (id, v, _) in &accepted {
        if !winners.insert((id.clone(), *v)) {
            return Err(format!("seed {seed}: two winners for {id}@{v}"));
        }
    }
    let decided: BTreeSet<&str> = accepted.iter().map(|(id, _, _)| id.as_str()).collect();
    if decided.len() != accepted.len() {
        return Err(format!("seed {seed}: an item was decided twice"));
    }

    let mut by_status: BTreeMap<ItemStatus, BTreeSet<String>> = BTreeMap::new();
    let ids: Vec<String> = (0..n).map(|i| format!("s{i:05}")).collect();
    for id in &ids {
        let item = q.item(id).map_err(|e| e.to_string())?;
        by_status.entry(item.status).or_default().insert(id.clone());
        match item.status {
            ItemStatus::D3 => {
                let ok = item.sample.stage() == Stage::D3
                    && item.sample.review().is_some_and(|r| r.is_human_pass())
                    && item.sample.last_verdict().is_some_and(|v| v.passed);
                if !ok {
                    return Err(format!(
                        "seed {seed}: {id} in D3 without a passing human review"
                    ));
                }
            }
            ItemStatus::Quarantined => {
                if !item
                    .sample
                    .review()
                    .is_some_and(|r| r.action == ReviewAction::Reject && r.note.is_some())
                {
                    return Err(format!(
                        "seed {seed}: {id} quarantined without a noted rejection"
                    ));
                }
            }
            ItemStatus::Open => {
                if decided.contains(id.as_str()) {
                    return Err(format!("seed {seed}: decided item {id} still open"));
                }
            }
        }
    }
    let closed: BTreeSet<String> = by_status
        .iter()
        .filter(|(s, _)| **s != ItemStatus::Open)
        .flat_map(|(_, ids)| ids.iter().cloned())
        .collect();
    if closed != decided.iter().map(|s| s.to_string()).collect() {
        return Err(format!(
            "seed {seed}: closed set differs from accepted decisions"
        ));
    }

    // The log alone rebuilds what memory holds.
    let reloaded = queue(Arc::new(
        cot_curate::pipeline::Store::open(dir, "r").map_err(|e| e.to_string())?,
    ));
    for id in &ids {
        let (a, b) = (q.item(id).unwrap(), reloaded.item(id).unwrap());
        if a.status != b.status {
            return Err(format!(
                "seed {seed}: {id} reloads as {:?}, memory has {:?}",
                b.status, a.status
            ));
        }
        if a.status != ItemStatus::Open && (a.version != b.version || a.sample != b.sample) {
            return Err(format!("seed {seed}: {id} reloads differently"));
        }
    }
    let (pm, pr) = (q.progress(), reloaded.progress());
    if (pm.d3, pm.quarantined) != (pr.d3, pr.quarantined) {
        return Err(format!("seed {seed}: progress {pm:?} reloads as {pr:?}"));
    }
    Ok(())
}
