//! Stage 1 rationale generation and the Stage 2 rewriter.

pub mod http;
pub mod mock;
pub mod provider;
pub mod templates;

use std::sync::Arc;

use thiserror::Error;
use tokio::sync::Semaphore;

use crate::model::{EvalVerdict, Origin, Rationale, RawSample, Violation};
use crate::tagged::{self, TaggedError};

pub use mock::{MockFallback, MockProvider, MockReply, MockScript};
pub use provider::{
    ChatMessage, CompletionRequest, Provider, ProviderConfig, ProviderError, RetryPolicy,
};
pub use templates::{PromptTemplate, PromptVars, Purpose};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenerationError {
    #[error("provider unavailable after {attempts} attempt(s): {last}")]
    ProviderUnavailable { attempts: u32, last: ProviderError },
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("completion contains reserved tag literals outside the tagged format")]
    ReservedTagInContent { raw: String },
    #[error("template error: {0}")]
    Template(String),
    #[error("provider configuration error: {0}")]
    Config(String),
}

impl GenerationError {
    pub fn name(&self) -> &'static str {
        match self {
            GenerationError::ProviderUnavailable { .. } => "ProviderUnavailable",
            GenerationError::EmptyCompletion => "EmptyCompletion",
            GenerationError::ReservedTagInContent { .. } => "ReservedTagInContent",
            GenerationError::Template(_) => "TemplateError",
            GenerationError::Config(_) => "ConfigError",
        }
    }
}

/// Shared handle to a provider with bounded concurrency and retry.
///
/// At most `max_parallel` requests are in flight across all clones. A
/// failed attempt releases its permit before backing off.
#[derive(Clone)]
pub struct ProviderClient {
    inner: Arc<dyn Provider>,
    permits: Arc<Semaphore>,
    retry: RetryPolicy,
    timeout: std::time::Duration,
}

impl ProviderClient {
    pub fn new(inner: Arc<dyn Provider>, cfg: &ProviderConfig) -> Self {
        ProviderClient {
            inner,
            permits: Arc::new(Semaphore::new(cfg.max_parallel.max(1))),
            retry: cfg.retry,
            timeout: cfg.timeout,
        }
    }

    /// Builds the backend named by the endpoint scheme: `mock:` uses the
    /// built-in fallback script, `mock:<path>` loads a script file, and
    /// `http(s)://` talks to a chat-completion server.
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, GenerationError> {
        cfg.validate().map_err(GenerationError::Config)?;
        let inner: Arc<dyn Provider> = match cfg.endpoint.scheme() {
            "mock" => {
                let path = cfg.endpoint.path();
                let script = if path.is_empty() {
                    MockScript::default()
                } else {
                    MockScript::load(std::path::Path::new(path))?
                };
                Arc::new(MockProvider::new(script))
            }
            _ => Arc::new(http::HttpProvider::from_config(cfg)?),
        };
        Ok(Self::new(inner, cfg))
    }

    pub async fn complete(&self, request: &CompletionRequest) -> Result<String, GenerationError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self
                    .permits
                    .acquire()
                    .await
                    .expect("semaphore never closed");
                match tokio::time::timeout(self.timeout, self.inner.complete(request)).await {
                    Ok(r) => r,
                    Err(_) => Err(ProviderError::Timeout),
                }
            };
            match result {
                Ok(text) => return Ok(text),
                Err(e) if attempt >= self.retry.max_attempts => {
                    return Err(GenerationError::ProviderUnavailable {
                        attempts: attempt,
                        last: e,
                    })
                }
                Err(e) => {
                    tracing::debug!(sample = %request.sample_id, attempt, error = %e, "provider call failed, retrying");
                    tokio::time::sleep(self.retry.delay_before_retry(attempt)).await;
                }
            }
        }
    }
}

/// Extracts the thinking text from a completion. Replies in the full tagged
/// format are parsed; anything else is bare thinking text.
fn completion_text(raw: &str) -> Result<String, GenerationError> {
    let trimmed = raw.trim();
    let text = if tagged::contains_reserved_tag(trimmed) {
        match tagged::parse(trimmed) {
            Ok(t) => t.thinking.trim().to_string(),
            Err(TaggedError::InvalidUtf8) => unreachable!("input is a str"),
            Err(_) => {
                return Err(GenerationError::ReservedTagInContent {
                    raw: trimmed.to_string(),
                })
            }
        }
    } else {
        trimmed.to_string()
    };
    if text.is_empty() {
        return Err(GenerationError::EmptyCompletion);
    }
    Ok(text)
}

fn messages(template: &PromptTemplate, vars: &PromptVars<'_>) -> Vec<ChatMessage> {
    let mut out = Vec::with_capacity(2);
    if !template.system.is_empty() {
        out.push(ChatMessage::system(template.system.clone()));
    }
    out.push(ChatMessage::user(template.render(vars)));
    out
}

pub async fn generate_rationale(
    sample: &RawSample,
    template: &PromptTemplate,
    provider: &ProviderClient,
) -> Result<Rationale, GenerationError> {
    if template.purpose != Purpose::Generate {
        return Err(GenerationError::Template(format!(
            "template `{}` is not a generation template",
            template.name
        )));
    }
    let vars = PromptVars {
        answer: &sample.answer,
        ..Default::default()
    };
    let request = CompletionRequest {
        purpose: Purpose::Generate,
        sample_id: sample.id.clone(),
        answer: sample.answer.clone(),
        revision: 0,
        prior_rationale: None,
        messages: messages(template, &vars),
    };
    let raw = provider.complete(&request).await?;
    let text = completion_text(&raw)?;
    Ok(Rationale::generated(text).expect("non-empty text at revision 0"))
}

/// Human-readable rendering of a failed verdict, fed to the rewriter.
pub fn render_feedback(verdict: &EvalVerdict) -> String {
    verdict
        .violations
        .iter()
        .map(|v| match v {
            Violation::LengthExceeded => format!(
                "- LengthExceeded: the reasoning is {} tokens long; shorten it.",
                verdict.token_count
            ),
            Violation::MissingVisual => "- MissingVisual: add visual form analysis (letter or character shapes, strokes, lookalike candidates).".to_string(),
            Violation::MissingSemantic => "- MissingSemantic: add semantic context reasoning (meaning, word plausibility in context).".to_string(),
            Violation::LogicalInconsistency => "- LogicalInconsistency: mention the recognized text verbatim, conclude with it, and do not choose a candidate you ruled out.".to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub async fn rewrite_rationale(
    sample: &RawSample,
    prior: &Rationale,
    verdict: &EvalVerdict,
    template: &PromptTemplate,
    provider: &ProviderClient,
) -> Result<Rationale, GenerationError> {
    if template.purpose != Purpose::Rewrite {
        return Err(GenerationError::Template(format!(
            "template `{}` is not a rewrite template",
            template.name
        )));
    }
    if verdict.passed {
        return Err(GenerationError::Template(
            "rewrite requested for a passing verdict".to_string(),
        ));
    }
    let feedback = render_feedback(verdict);
    let vars = PromptVars {
        answer: &sample.answer,
        feedback: &feedback,
        prior_rationale: prior.text(),
    };
    let request = CompletionRequest {
        purpose: Purpose::Rewrite,
        sample_id: sample.id.clone(),
        answer: sample.answer.clone(),
        revision: prior.revision() + 1,
        prior_rationale: Some(prior.text().to_string()),
        messages: messages(template, &vars),
    };
    let raw = provider.complete(&request).await?;
    // A rewrite that still carries stray tags is kept verbatim; the
    // evaluator's reserved-tag rule sends it round again.
    let text = match completion_text(&raw) {
        Ok(t) => t,
        Err(GenerationError::ReservedTagInContent { raw }) => raw,
        Err(e) => return Err(e),
    };
    Ok(prior
        .revise(text, Origin::Rewritten)
        .expect("non-empty rewrite"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;
    use std::time::Duration;

    fn client(script: MockScript) -> (ProviderClient, MockProvider) {
        let mock = MockProvider::new(script);
        let mut cfg = ProviderConfig::mock();
        cfg.retry = RetryPolicy {
            max_attempts: 3,
            base_backoff: Duration::from_millis(1),
        };
        (ProviderClient::new(Arc::new(mock.clone()), &cfg), mock)
    }

    fn failing(violations: Vec<Violation>, tokens: usize) -> EvalVerdict {
        EvalVerdict::from_violations(violations, tokens, Utc::now())
    }

    #[tokio::test]
    async fn canned_reply_becomes_revision_zero() {
        let mut s = MockScript::default();
        s.generate
            .insert("A".into(), MockReply::Text("a canned rationale".into()));
        let (c, _) = client(s);
        let sample = RawSample::new("1", "img", "A").unwrap();
        let r = generate_rationale(&sample, &PromptTemplate::default_generate(), &c)
            .await
            .unwrap();
        assert_eq!(r.text(), "a canned rationale");
        assert_eq!((r.revision(), r.origin()), (0, Origin::Generated));
    }

    #[tokio::test]
    async fn empty_and_reserved_completions() {
        let mut s = MockScript::default();
        s.generate.insert("E".into(), MockReply::Text("  ".into()));
        s.generate.insert(
            "T".into(),
            MockReply::Text("<answer>T</answer><thinking></thinking>".into()),
        );
        s.generate
            .insert("R".into(), MockReply::Text("oops </answer> stray".into()));
        let (c, _) = client(s);
        let t = PromptTemplate::default_generate();
        for (ans, expected) in [
            ("E", "EmptyCompletion"),
            ("T", "EmptyCompletion"),
            ("R", "ReservedTagInContent"),
        ] {
            let sample = RawSample::new(ans, "img", ans).unwrap();
            let err = generate_rationale(&sample, &t, &c).await.unwrap_err();
            assert_eq!(err.name(), expected);
        }
    }

    #[tokio::test]
    async fn provider_unavailable_after_retries() {
        let mut s = MockScript::default();
        s.generate.insert(
            "X".into(),
            MockReply::Fail {
                fail: "down".into(),
            },
        );
        let (c, mock) = client(s);
        let sample = RawSample::new("x", "img", "X").unwrap();
        let err = generate_rationale(&sample, &PromptTemplate::default_generate(), &c)
            .await
            .unwrap_err();
        assert!(matches!(
            err,
            GenerationError::ProviderUnavailable { attempts: 3, .. }
        ));
        assert_eq!(mock.calls(), 3);
    }

    #[tokio::test]
    async fn wrong_template_purpose() {
        let (c, _) = client(MockScript::default());
        let sample = RawSample::new("x", "img", "X").unwrap();
        assert!(
            generate_rationale(&sample, &PromptTemplate::default_rewrite(), &c)
                .await
                .is_err()
        );
    }

    #[tokio::test]
    async fn rewrite_increments_revision_and_embeds_feedback() {
        let mut s = MockScript::default();
        s.rewrite
            .insert("A".into(), vec![MockReply::Text("better".into())]);
        let (c, _) = client(s);
        let sample = RawSample::new("1", "img", "A").unwrap();
        let prior = Rationale::generated("x")
            .unwrap()
            .revise("y", Origin::Rewritten)
            .unwrap()
            .revise("z", Origin::Rewritten)
            .unwrap();
        assert_eq!(prior.revision(), 2);
        let v = failing(
            vec![Violation::LengthExceeded, Violation::MissingVisual],
            150,
        );
        let r = rewrite_rationale(&sample, &prior, &v, &PromptTemplate::default_rewrite(), &c)
            .await
            .unwrap();
        assert_eq!(
            (r.revision(), r.origin(), r.text()),
            (3, Origin::Rewritten, "better")
        );

        let fb = render_feedback(&v);
        assert!(
            fb.contains("LengthExceeded")
                && fb.contains("150 tokens")
                && fb.contains("MissingVisual")
        );
        let rendered = PromptTemplate::default_rewrite().render(&PromptVars {
            answer: "A",
            feedback: &fb,
            prior_rationale: "z",
        });
        assert!(rendered.contains(&fb));
    }

    #[tokio::test]
    async fn rewrite_refuses_passing_verdict() {
        let (c, _) = client(MockScript::default());
        let sample = RawSample::new("1", "img", "A").unwrap();
        let prior = Rationale::generated("x").unwrap();
        let v = failing(vec![], 3);
        assert!(
            rewrite_rationale(&sample, &prior, &v, &PromptTemplate::default_rewrite(), &c)
                .await
                .is_err()
        );
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn in_flight_never_exceeds_bound() {
        let script = MockScript {
            delay_ms: 5,
            ..Default::default()
        };
        let mock = MockProvider::new(script);
        let mut cfg = ProviderConfig::mock();
        cfg.max_parallel = 3;
        let c = ProviderClient::new(Arc::new(mock.clone()), &cfg);
        let t = PromptTemplate::default_generate();
        let tasks: Vec<_> = (0..40)
            .map(|i| {
                let c = c.clone();
                let t = t.clone();
                tokio::spawn(async move {
                    let s = RawSample::new(format!("s{i}"), "img", format!("W{i}")).unwrap();
                    generate_rationale(&s, &t, &c).await.unwrap()
                })
            })
            .collect();
        for t in tasks {
            t.await.unwrap();
        }
        assert_eq!(mock.calls(), 40);
        assert!(mock.peak_in_flight() <= 3, "peak {}", mock.peak_in_flight());
        assert_eq!(mock.peak_in_flight(), 3);
    }

    #[tokio::test(start_paused = true)]
    async fn retry_backoff_schedule() {
        let mut s = MockScript::default();
        s.generate.insert(
            "X".into(),
            MockReply::Fail {
                fail: "down".into(),
            },
        );
        let starts = Arc::new(std::sync::Mutex::new(Vec::new()));
        let log = starts.clone();
        let mock = MockProvider::new(s).with_hook(move |_, _| {
            log.lock().unwrap().push(tokio::time::Instant::now());
        });
        let mut cfg = ProviderConfig::mock();
        cfg.retry = RetryPolicy {
            max_attempts: 4,
            base_backoff: Duration::from_millis(100),
        };
        let c = ProviderClient::new(Arc::new(mock.clone()), &cfg);
        let sample = RawSample::new("x", "img", "X").unwrap();
        let err = generate_rationale(&sample, &PromptTemplate::default_generate(), &c)
            .await
            .unwrap_err();
        assert!(matches!(
            err,
            GenerationError::ProviderUnavailable { attempts: 4, .. }
        ));
        let starts = starts.lock().unwrap();
        let gaps: Vec<u128> = starts
            .windows(2)
            .map(|w| (w[1] - w[0]).as_millis())
            .collect();
        assert_eq!(gaps, vec![100, 200, 400]);
    }
}
