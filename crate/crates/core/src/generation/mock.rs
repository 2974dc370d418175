//! Script-driven offline provider.
//!
//! A script maps answers to canned completions per purpose, with fallback
//! templates for unscripted answers. The provider records every call so
//! tests can assert call counts and peak concurrency.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::provider::{CompletionRequest, Provider, ProviderError};
use super::templates::Purpose;
use super::GenerationError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    /// Every attempt fails with the given reason.
    Fail {
        fail: String,
    },
    /// The first `tokens` whitespace-separated words of the prior rationale.
    Truncate {
        truncate: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockFallback {
    #[serde(default)]
    pub generate: Option<String>,
    #[serde(default)]
    pub rewrite: Option<String>,
    #[serde(default)]
    pub judge: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    /// answer -> Stage 1 completion.
    #[serde(default)]
    pub generate: BTreeMap<String, MockReply>,
    /// answer -> completions for rewrite 1, 2, …; the last entry repeats.
    #[serde(default)]
    pub rewrite: BTreeMap<String, Vec<MockReply>>,
    /// answer -> judge reply.
    #[serde(default)]
    pub judge: BTreeMap<String, String>,
    /// answer -> number of leading attempts that fail before the script
    /// applies (any purpose).
    #[serde(default)]
    pub flaky: BTreeMap<String, u32>,
    /// Templates for unscripted answers; `{answer}` is substituted.
    #[serde(default)]
    pub fallback: MockFallback,
    /// Artificial latency per call.
    #[serde(default)]
    pub delay_ms: u64,
}

pub const DEFAULT_GENERATE_REPLY: &str = "<answer>{answer}</answer><thinking>The letter shapes and strokes in the image clearly form \"{answer}\", and no lookalike reading fits them better. The word is plausible in the scene context, so \"{answer}\" is the reading.</thinking>";
pub const DEFAULT_REWRITE_REPLY: &str = "<answer>{answer}</answer><thinking>The character shapes spell \"{answer}\" without a closer lookalike, and its meaning fits the context of the scene.</thinking>";
pub const DEFAULT_JUDGE_REPLY: &str = "yes";

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, GenerationError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            GenerationError::Config(format!("cannot read mock script {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            GenerationError::Config(format!("bad mock script {}: {e}", path.display()))
        })
    }

    fn reply_for(&self, req: &CompletionRequest) -> MockReply {
        let answer = req.answer.as_str();
        let scripted = match req.purpose {
            Purpose::Generate => self.generate.get(answer).cloned(),
            Purpose::Rewrite => self.rewrite.get(answer).and_then(|replies| {
                let idx = (req.revision.max(1) - 1) as usize;
                replies.get(idx).or(replies.last()).cloned()
            }),
            Purpose::Judge => self.judge.get(answer).cloned().map(MockReply::Text),
        };
        scripted.unwrap_or_else(|| {
            let template = match req.purpose {
                Purpose::Generate => self
                    .fallback
                    .generate
                    .as_deref()
                    .unwrap_or(DEFAULT_GENERATE_REPLY),
                Purpose::Rewrite => self
                    .fallback
                    .rewrite
                    .as_deref()
                    .unwrap_or(DEFAULT_REWRITE_REPLY),
                Purpose::Judge => self
                    .fallback
                    .judge
                    .as_deref()
                    .unwrap_or(DEFAULT_JUDGE_REPLY),
            };
            MockReply::Text(template.replace("{answer}", answer))
        })
    }
}

type CallHook = Box<dyn Fn(&CompletionRequest, usize) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub purpose: Purpose,
    pub sample_id: String,
    pub revision: u32,
}

#[derive(Default)]
struct Instruments {
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    log: Mutex<Vec<CallRecord>>,
    attempts: Mutex<HashMap<String, u32>>,
}

/// Deterministic provider backed by a [`MockScript`].
#[derive(Clone)]
pub struct MockProvider {
    script: Arc<MockScript>,
    inst: Arc<Instruments>,
    hook: Option<Arc<CallHook>>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        MockProvider {
            script: Arc::new(script),
            inst: Arc::default(),
            hook: None,
        }
    }

    /// Invoked after every call with the running call count.
    pub fn with_hook(
        mut self,
        hook: impl Fn(&CompletionRequest, usize) + Send + Sync + 'static,
    ) -> Self {
        self.hook = Some(Arc::new(Box::new(hook)));
        self
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    pub fn calls(&self) -> usize {
        self.inst.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.inst.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.inst.log.lock().expect("mock log").clone()
    }
}

struct InFlight<'a>(&'a Instruments);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl Provider for MockProvider {
    async fn complete(&self, req: &CompletionRequest) -> Result<String, ProviderError> {
        let now = self.inst.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.inst.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        let _guard = InFlight(&self.inst);
        if self.script.delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.script.delay_ms)).await;
        }
        let count = self.inst.calls.fetch_add(1, Ordering::SeqCst) + 1;
        self.inst.log.lock().expect("mock log").push(CallRecord {
            purpose: req.purpose,
            sample_id: req.sample_id.clone(),
            revision: req.revision,
        });
        let flaky = {
            let mut attempts = self.inst.attempts.lock().expect("mock attempts");
            let seen = attempts.entry(req.answer.clone()).or_default();
            *seen += 1;
            self.script
                .flaky
                .get(&req.answer)
                .is_some_and(|n| *seen <= *n)
        };
        let out = if flaky {
            Err(ProviderError::Scripted("flaky".into()))
        } else {
            match self.script.reply_for(req) {
                MockReply::Text(t) => Ok(t),
                MockReply::Fail { fail } => Err(ProviderError::Scripted(fail)),
                MockReply::Truncate { truncate } => {
                    let prior = req.prior_rationale.as_deref().unwrap_or_default();
                    Ok(prior
                        .split_whitespace()
                        .take(truncate)
                        .collect::<Vec<_>>()
                        .join(" "))
                }
            }
        };
        if let Some(hook) = &self.hook {
            hook(req, count);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(purpose: Purpose, answer: &str, revision: u32) -> CompletionRequest {
        CompletionRequest {
            purpose,
            sample_id: answer.to_string(),
            answer: answer.to_string(),
            revision,
            prior_rationale: Some("one two three four".into()),
            messages: vec![],
        }
    }

    #[test]
    fn script_parses_all_reply_shapes() {
        let s: MockScript = serde_json::from_str(
            r#"{"generate": {"A": "canned", "B": {"fail": "down"}},
                "rewrite": {"A": [{"truncate": 2}, "second"]},
                "flaky": {"C": 1}, "delay_ms": 0}"#,
        )
        .unwrap();
        assert_eq!(s.generate["A"], MockReply::Text("canned".into()));
        assert_eq!(
            s.generate["B"],
            MockReply::Fail {
                fail: "down".into()
            }
        );
        assert_eq!(s.rewrite["A"][0], MockReply::Truncate { truncate: 2 });
    }

    #[tokio::test]
    async fn replies_follow_script_and_fallback() {
        let mut s = MockScript::default();
        s.generate
            .insert("A".into(), MockReply::Text("canned".into()));
        s.rewrite.insert(
            "A".into(),
            vec![
                MockReply::Truncate { truncate: 2 },
                MockReply::Text("r2".into()),
            ],
        );
        s.flaky.insert("F".into(), 2);
        let m = MockProvider::new(s);
        assert_eq!(
            m.complete(&req(Purpose::Generate, "A", 0)).await.unwrap(),
            "canned"
        );
        assert_eq!(
            m.complete(&req(Purpose::Rewrite, "A", 1)).await.unwrap(),
            "one two"
        );
        assert_eq!(
            m.complete(&req(Purpose::Rewrite, "A", 2)).await.unwrap(),
            "r2"
        );
        assert_eq!(
            m.complete(&req(Purpose::Rewrite, "A", 5)).await.unwrap(),
            "r2"
        );
        assert!(m
            .complete(&req(Purpose::Generate, "Z", 0))
            .await
            .unwrap()
            .contains("\"Z\""));
        assert_eq!(
            m.complete(&req(Purpose::Judge, "Z", 0)).await.unwrap(),
            "yes"
        );
        assert!(m.complete(&req(Purpose::Generate, "F", 0)).await.is_err());
        assert!(m.complete(&req(Purpose::Generate, "F", 0)).await.is_err());
        assert!(m.complete(&req(Purpose::Generate, "F", 0)).await.is_ok());
        assert_eq!(m.calls(), 9);
        assert_eq!(m.call_log()[1].revision, 1);
    }
}
