//! Automatic quality gate for rationales.
//!
//! A rationale passes when it is shorter than `l_max` tokens, contains
//! visual form analysis, contains semantic context analysis, and is
//! logically consistent with the answer. Every conjunct is evaluated so the
//! violation list is complete feedback for the rewriter.

pub mod consistency;
pub mod lexicon;
pub mod tokens;

use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::{
    CompletionRequest, PromptTemplate, PromptVars, ProviderClient, ProviderConfig, Purpose,
};
use crate::model::{EvalVerdict, Language, Rationale, RawSample, Violation};

pub use consistency::{check_consistency, ConsistencyRule, RuleSpec};
pub use lexicon::{Lexicon, LexiconEntry};
pub use tokens::count_tokens;

pub const DEFAULT_L_MAX: usize = 100;
pub const EVAL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("evaluation config error: {0}")]
    Config(String),
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub l_max: usize,
    pub visual_lexicon: Lexicon,
    pub semantic_lexicon: Lexicon,
    pub consistency_rules: Vec<ConsistencyRule>,
    pub judge: Option<ProviderConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            l_max: DEFAULT_L_MAX,
            visual_lexicon: Lexicon::new(lexicon::DEFAULT_VISUAL).expect("default lexicon"),
            semantic_lexicon: Lexicon::new(lexicon::DEFAULT_SEMANTIC).expect("default lexicon"),
            consistency_rules: consistency::default_rules(),
            judge: None,
        }
    }
}

/// On-disk form of [`EvalConfig`] (TOML). Omitted lexicons or rules fall
/// back to the built-in defaults; `extend_defaults = true` appends the
/// listed terms to the defaults instead of replacing them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfigFile {
    #[serde(default = "schema_v1")]
    pub schema_version: u32,
    #[serde(default)]
    pub l_max: Option<usize>,
    #[serde(default)]
    pub extend_defaults: bool,
    #[serde(default)]
    pub visual: Option<Vec<String>>,
    #[serde(default)]
    pub semantic: Option<Vec<String>>,
    #[serde(default)]
    pub consistency_rules: Option<Vec<RuleSpec>>,
    #[serde(default)]
    pub judge: Option<ProviderConfig>,
}

fn schema_v1() -> u32 {
    EVAL_SCHEMA_VERSION
}

impl EvalConfigFile {
    pub fn into_config(self) -> Result<EvalConfig, EvalError> {
        if self.schema_version != EVAL_SCHEMA_VERSION {
            return Err(EvalError::Config(format!(
                "unsupported eval schema_version {} (expected {EVAL_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut cfg = EvalConfig::default();
        if let Some(l) = self.l_max {
            cfg.l_max = l;
        }
        let merge = |base: &mut Lexicon, terms: Option<Vec<String>>| -> Result<(), EvalError> {
            if let Some(terms) = terms {
                let lex = Lexicon::new(&terms)?;
                if self.extend_defaults {
                    base.extend(lex);
                } else {
                    *base = lex;
                }
            }
            Ok(())
        };
        merge(&mut cfg.visual_lexicon, self.visual.clone())?;
        merge(&mut cfg.semantic_lexicon, self.semantic.clone())?;
        if let Some(rules) = &self.consistency_rules {
            cfg.consistency_rules = rules
                .iter()
                .map(|r| r.compile().map_err(|e| EvalError::Config(e.to_string())))
                .collect::<Result<_, _>>()?;
        }
        cfg.judge = self.judge;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl EvalConfig {
    pub fn with_l_max(mut self, l_max: usize) -> Self {
        self.l_max = l_max;
        self
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.l_max < 1 {
            return Err(EvalError::Config("l_max must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvalError::Config(format!("cannot read {}: {e}", path.display())))?;
        let file: EvalConfigFile = toml::from_str(&text)
            .map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))?;
        file.into_config()
    }

    pub fn to_file(&self) -> EvalConfigFile {
        EvalConfigFile {
            schema_version: EVAL_SCHEMA_VERSION,
            l_max: Some(self.l_max),
            extend_defaults: false,
            visual: Some(
                self.visual_lexicon
                    .entries()
                    .iter()
                    .map(|e| e.source())
                    .collect(),
            ),
            semantic: Some(
                self.semantic_lexicon
                    .entries()
                    .iter()
                    .map(|e| e.source())
                    .collect(),
            ),
            consistency_rules: Some(self.consistency_rules.iter().map(|r| r.spec()).collect()),
            judge: self.judge.clone(),
        }
    }

    pub fn has_visual(&self, text: &str) -> bool {
        self.visual_lexicon.matches(text)
    }

    pub fn has_semantic(&self, text: &str) -> bool {
        self.semantic_lexicon.matches(text)
    }

    pub fn check_consistency(&self, text: &str, answer: &str) -> bool {
        check_consistency(text, answer, &self.consistency_rules)
    }

    /// Token length under the rule for the rationale's own script.
    pub fn token_count(&self, text: &str) -> usize {
        count_tokens(text, Language::detect(text))
    }

    /// Heuristic verdict for `text` as the rationale of `sample`.
    pub fn evaluate_text_at(
        &self,
        text: &str,
        sample: &RawSample,
        at: DateTime<Utc>,
    ) -> EvalVerdict {
        let consistent = self.check_consistency(text, &sample.answer);
        self.verdict(text, consistent, at)
    }

    pub fn evaluate_text(&self, text: &str, sample: &RawSample) -> EvalVerdict {
        self.evaluate_text_at(text, sample, Utc::now())
    }

    fn verdict(&self, text: &str, consistent: bool, at: DateTime<Utc>) -> EvalVerdict {
        let token_count = self.token_count(text);
        let checks = [
            (token_count < self.l_max, Violation::LengthExceeded),
            (self.has_visual(text), Violation::MissingVisual),
            (self.has_semantic(text), Violation::MissingSemantic),
            (consistent, Violation::LogicalInconsistency),
        ];
        let violations = checks
            .iter()
            .filter(|(ok, _)| !ok)
            .map(|(_, v)| *v)
            .collect();
        EvalVerdict::from_violations(violations, token_count, at)
    }

    /// Like [`EvalConfig::evaluate_text`], but asks the judge (when
    /// configured) for the consistency conjunct. A judge failure falls
    /// back to the heuristic and is logged.
    pub async fn evaluate_with_judge(
        &self,
        text: &str,
        sample: &RawSample,
        judge: Option<&ProviderClient>,
    ) -> EvalVerdict {
        let heuristic = self.check_consistency(text, &sample.answer);
        let consistent = match judge {
            None => heuristic,
            Some(client) => match judge_consistency(client, text, sample).await {
                Ok(v) => v,
                Err(e) => {
                    tracing::warn!(sample = %sample.id, error = %e, "judge unavailable, using heuristic consistency");
                    heuristic
                }
            },
        };
        self.verdict(text, consistent, Utc::now())
    }
}

/// Asks the judge a yes/no consistency question.
pub async fn judge_consistency(
    client: &ProviderClient,
    text: &str,
    sample: &RawSample,
) -> Result<bool, EvalError> {
    let template = PromptTemplate::default_judge();
    let body = template.render(&PromptVars {
        answer: &sample.answer,
        prior_rationale: text,
        ..Default::default()
    });
    let request = CompletionRequest {
        purpose: Purpose::Judge,
        sample_id: sample.id.clone(),
        answer: sample.answer.clone(),
        revision: 0,
        prior_rationale: Some(text.to_string()),
        messages: vec![
            crate::generation::ChatMessage::system(template.system.clone()),
            crate::generation::ChatMessage::user(body),
        ],
    };
    let reply = client
        .complete(&request)
        .await
        .map_err(|e| EvalError::JudgeUnavailable(e.to_string()))?;
    let word = reply
        .trim()
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or_default()
        .to_ascii_lowercase();
    match word.as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(EvalError::JudgeUnavailable(format!(
            "unparseable judge reply `{}`",
            reply.trim()
        ))),
    }
}

pub fn eval(rationale: &Rationale, sample: &RawSample, cfg: &EvalConfig) -> EvalVerdict {
    cfg.evaluate_text(rationale.text(), sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::{MockProvider, MockScript};
    use proptest::prelude::*;
    use std::sync::Arc;

    pub(crate) const LOVEL_THINKING: &str = "\"LOVEL\" could be a stylized version of \"LOVE\" or a misspelling of \"NOVEL\". The letters \"L\", \"O\", \"V\", \"E\", and \"L\" are clearly present.  Lookalike words such as \"LEVEL\" or \"LOVELY\" are considered but ruled out due to differences in letter count and semantic context.";

    fn lovel() -> RawSample {
        RawSample::new("lovel", "img/lovel.png", "LOVEL").unwrap()
    }

    #[test]
    fn lovel_rationale_passes_defaults() {
        let cfg = EvalConfig::default();
        assert!(cfg.has_visual(LOVEL_THINKING));
        assert!(cfg.has_semantic(LOVEL_THINKING));
        assert_eq!(
            cfg.visual_lexicon
                .first_match(LOVEL_THINKING)
                .unwrap()
                .source(),
            "letter"
        );
        assert!(cfg.check_consistency(LOVEL_THINKING, "LOVEL"));
        let v = eval(
            &Rationale::generated(LOVEL_THINKING).unwrap(),
            &lovel(),
            &cfg,
        );
        // Hand count: 20 + 26 + 26 tokens over the three sentences.
        assert_eq!(v.token_count, 72);
        assert!(v.passed, "{v:?}");
    }

    #[test]
    fn plain_statement_has_neither_analysis() {
        let cfg = EvalConfig::default();
        assert!(!cfg.has_visual("The answer is LOVE."));
        assert!(!cfg.has_semantic("The answer is LOVE."));
        assert!(!cfg.has_visual(""));
        assert!(!cfg.has_semantic(""));
    }

    #[test]
    fn long_rationale_reports_every_failed_conjunct() {
        let cfg = EvalConfig::default();
        let text = vec!["word"; 150].join(" ");
        let v = cfg.evaluate_text(&text, &lovel());
        assert_eq!(v.token_count, 150);
        assert!(!v.passed);
        assert_eq!(
            v.violations,
            vec![
                Violation::LengthExceeded,
                Violation::MissingVisual,
                Violation::MissingSemantic,
                Violation::LogicalInconsistency
            ]
        );
        let text = format!("{} {LOVEL_THINKING}", vec!["word"; 80].join(" "));
        let v = cfg.evaluate_text(&text, &lovel());
        assert_eq!(v.violations, vec![Violation::LengthExceeded]);
    }

    #[test]
    fn empty_rationale_fails_content_conjuncts() {
        let v = EvalConfig::default().evaluate_text("", &lovel());
        assert_eq!(
            v.violations,
            vec![
                Violation::MissingVisual,
                Violation::MissingSemantic,
                Violation::LogicalInconsistency
            ]
        );
        assert_eq!(v.token_count, 0);
    }

    #[test]
    fn length_boundary_is_strict() {
        let cfg = EvalConfig::default().with_l_max(10);
        let sample = RawSample::new("a", "i", "LOVE").unwrap();
        let base = "LOVE letter context";
        for (extra, expect) in [(6, false), (7, true), (8, true)] {
            let text = format!("{base} {}", vec!["x"; extra].join(" "));
            let v = cfg.evaluate_text(&text, &sample);
            assert_eq!(v.token_count, 3 + extra);
            assert_eq!(
                v.violations.contains(&Violation::LengthExceeded),
                expect,
                "{}",
                v.token_count
            );
        }
    }

    #[test]
    fn config_file_round_trip_and_versioning() {
        let text = r#"
            schema_version = 1
            l_max = 60
            extend_defaults = true
            visual = ["re:\\bserif"]
            [[consistency_rules]]
            kind = "reserved_tag_literal"
        "#;
        let file: EvalConfigFile = toml::from_str(text).unwrap();
        let cfg = file.into_config().unwrap();
        assert_eq!(cfg.l_max, 60);
        assert!(cfg.has_visual("a Serif face"));
        assert!(cfg.has_visual("letter"));
        assert_eq!(cfg.consistency_rules.len(), 1);
        let again = cfg.to_file().into_config().unwrap();
        assert_eq!(
            again.visual_lexicon.entries().len(),
            cfg.visual_lexicon.entries().len()
        );

        let bad: EvalConfigFile = toml::from_str("schema_version = 2").unwrap();
        assert!(bad.into_config().is_err());
        let bad: EvalConfigFile = toml::from_str("l_max = 0").unwrap();
        assert!(bad.into_config().is_err());
        let bad: EvalConfigFile = toml::from_str("visual = []").unwrap();
        assert!(bad.into_config().is_err());
        assert!(toml::from_str::<EvalConfigFile>("unknown = 1").is_err());
    }

    #[tokio::test]
    async fn judge_overrides_and_degrades() {
        let cfg = EvalConfig::default();
        let mut script = MockScript::default();
        script.judge.insert("LOVEL".into(), "No.".into());
        script.judge.insert("NOVEL".into(), "maybe".into());
        let pc = ProviderConfig::mock();
        let judge = ProviderClient::new(Arc::new(MockProvider::new(script)), &pc);
        let v = cfg
            .evaluate_with_judge(LOVEL_THINKING, &lovel(), Some(&judge))
            .await;
        assert_eq!(v.violations, vec![Violation::LogicalInconsistency]);

        let novel = RawSample::new("n", "i", "NOVEL").unwrap();
        let text = "NOVEL: letter shapes and context agree.";
        assert!(judge_consistency(&judge, text, &novel).await.is_err());
        let v = cfg.evaluate_with_judge(text, &novel, Some(&judge)).await;
        assert!(v.passed, "judge failure falls back to heuristic");
    }

    proptest! {
        #[test]
        fn deterministic_and_exact(text in "\\PC{0,120}", answer in "[A-Za-z]{1,8}") {
            let cfg = EvalConfig::default();
            let sample = RawSample::new("p", "i", answer).unwrap();
            let at = Utc::now();
            let a = cfg.evaluate_text_at(&text, &sample, at);
            let b = cfg.evaluate_text_at(&text, &sample, at);
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.passed, a.violations.is_empty());
            prop_assert_eq!(a.violations.contains(&Violation::LengthExceeded), a.token_count >= cfg.l_max);
            prop_assert_eq!(a.violations.contains(&Violation::MissingVisual), !cfg.has_visual(&text));
            prop_assert_eq!(a.violations.contains(&Violation::MissingSemantic), !cfg.has_semantic(&text));
            prop_assert_eq!(
                a.violations.contains(&Violation::LogicalInconsistency),
                !cfg.check_consistency(&text, &sample.answer)
            );
        }

        #[test]
        fn lexicon_growth_is_monotone(text in "\\PC{0,80}", extra in prop::collection::vec("[a-z]{1,6}", 1..5)) {
            let base = EvalConfig::default();
            let mut grown = base.visual_lexicon.clone();
            grown.extend(Lexicon::new(&extra).unwrap());
            if base.visual_lexicon.matches(&text) {
                prop_assert!(grown.matches(&text));
            }
        }
    }
}
