//! Fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod bleu_oracle;
pub mod storm;

use std::path::Path;
use std::sync::Arc;

use cot_curate::generation::{MockProvider, MockReply, MockScript, ProviderClient, ProviderConfig};
use cot_curate::pipeline::{self, Clients, PipelineConfig, RunReport, Store};
use cot_curate::RawSample;
use tokio_util::sync::CancellationToken;

pub const LOVEL_SAMPLE: &str = "<answer>LOVEL</answer><thinking>\"LOVEL\" could be a stylized version of \"LOVE\" or a misspelling of \"NOVEL\". The letters \"L\", \"O\", \"V\", \"E\", and \"L\" are clearly present.  Lookalike words such as \"LEVEL\" or \"LOVELY\" are considered but ruled out due to differences in letter count and semantic context.</thinking>";

pub fn lovel_thinking() -> &'static str {
    LOVEL_SAMPLE
        .strip_prefix("<answer>LOVEL</answer><thinking>")
        .and_then(|s| s.strip_suffix("</thinking>"))
        .unwrap()
}

/// A Stage 1 reply that fails the gate (no visual or semantic analysis).
pub fn weak_reply(answer: &str) -> String {
    format!("<answer>{answer}</answer><thinking>It reads {answer}.</thinking>")
}

/// Rationale text that passes the default gate for `answer`.
pub fn passing_text(answer: &str) -> String {
    format!("The stroke shapes spell \"{answer}\" and the word makes sense in context, so \"{answer}\" stands.")
}

pub fn answer_for(i: usize) -> String {
    if i.is_multiple_of(5) {
        format!("银行{i}")
    } else {
        format!("WORD{i}")
    }
}

pub fn corpus(n: usize) -> Vec<RawSample> {
    (0..n)
        .map(|i| RawSample::new(format!("s{i:05}"), format!("img/{i}.png"), answer_for(i)).unwrap())
        .collect()
}

/// 50 samples; those with `i % 5 == 1` fail Stage 1 and pass after one
/// rewrite, the other 40 pass immediately.
pub fn forty_ten() -> (Vec<RawSample>, MockScript) {
    let samples = corpus(50);
    let mut script = MockScript::default();
    for (i, s) in samples.iter().enumerate() {
        if i % 5 == 1 {
            script
                .generate
                .insert(s.answer.clone(), MockReply::Text(weak_reply(&s.answer)));
        }
    }
    (samples, script)
}

pub fn config(dir: &Path, run_id: &str) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(dir, run_id);
    cfg.provider.retry.base_backoff = std::time::Duration::from_millis(1);
    cfg.provider.retry.max_attempts = 2;
    cfg
}

pub fn clients_for(mock: &MockProvider, cfg: &ProviderConfig) -> Clients {
    Clients {
        generator: ProviderClient::new(Arc::new(mock.clone()), cfg),
        judge: None,
    }
}

pub fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap()
}

/// Runs Stages 1–2 to completion with `script` and returns the report and
/// the provider's call count.
pub fn run(samples: &[RawSample], cfg: &PipelineConfig, script: MockScript) -> (RunReport, usize) {
    let mock = MockProvider::new(script);
    let clients = clients_for(&mock, &cfg.provider);
    let report = runtime()
        .block_on(pipeline::run_stage12_with(
            samples,
            cfg,
            &clients,
            &CancellationToken::new(),
        ))
        .unwrap();
    (report, mock.calls())
}

/// A run directory whose `n` samples all reached D2.
pub fn seeded_d2(dir: &Path, n: usize) -> Arc<Store> {
    let cfg = config(dir, "r");
    let (report, _) = run(&corpus(n), &cfg, MockScript::default());
    assert_eq!(report.counts.d2, n);
    Arc::new(Store::open(dir, "r").unwrap())
}
