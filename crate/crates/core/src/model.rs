//! Domain types shared across the curation pipeline, and the forward-only
//! stage machine that moves a sample from D1 through D2 into D3.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tagged;

/// Script classification of an answer string. Always derived from the text,
/// never supplied by a corpus author.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Latin,
    Cjk,
    Mixed,
}

impl Language {
    /// `Cjk` when the text holds at least one CJK ideograph and no Latin
    /// letter, `Mixed` when it holds both, `Latin` otherwise.
    pub fn detect(text: &str) -> Language {
        let mut cjk = false;
        let mut latin = false;
        for c in text.chars() {
            cjk |= is_cjk_ideograph(c);
            latin |= is_latin_letter(c);
            if cjk && latin {
                return Language::Mixed;
            }
        }
        if cjk {
            Language::Cjk
        } else {
            Language::Latin
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Language::Latin => "latin",
            Language::Cjk => "cjk",
            Language::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "latin" => Ok(Language::Latin),
            "cjk" => Ok(Language::Cjk),
            "mixed" => Ok(Language::Mixed),
            other => Err(format!("unknown language `{other}`")),
        }
    }
}

/// CJK Unified Ideographs, including extensions A through H.
pub fn is_cjk_ideograph(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF
        | 0x30000..=0x323AF)
}

/// Basic Latin letters plus the Latin-1, Extended-A/B and Extended
/// Additional blocks.
pub fn is_latin_letter(c: char) -> bool {
    c.is_ascii_alphabetic()
        || (c.is_alphabetic()
            && matches!(c as u32, 0x00C0..=0x024F | 0x1E00..=0x1EFF)
            && c != '\u{00D7}'
            && c != '\u{00F7}')
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("sample id must be non-empty")]
    EmptyId,
    #[error("answer for `{0}` is empty after trimming")]
    EmptyAnswer(String),
    #[error("answer for `{0}` contains a reserved tag literal")]
    ReservedTagInAnswer(String),
    #[error("rationale text must be non-empty")]
    EmptyRationale,
    #[error(
        "revision 0 is reserved for generated rationales (got {origin:?} at revision {revision})"
    )]
    RevisionOriginMismatch { revision: u32, origin: Origin },
    #[error("illegal stage transition {from} -> {to}: {reason}")]
    IllegalTransition {
        from: Stage,
        to: Stage,
        reason: &'static str,
    },
    #[error("stage D2 -> D3 requires an approve or edit review decision")]
    MissingReview,
    #[error("invalid review decision: {0}")]
    InvalidDecision(&'static str),
}

/// One annotation unit: an image reference with its ground-truth answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSample {
    pub id: String,
    pub image_ref: String,
    pub answer: String,
    pub language: Language,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl RawSample {
    pub fn new(
        id: impl Into<String>,
        image_ref: impl Into<String>,
        answer: impl Into<String>,
    ) -> Result<Self, ModelError> {
        Self::with_meta(id, image_ref, answer, BTreeMap::new())
    }

    pub fn with_meta(
        id: impl Into<String>,
        image_ref: impl Into<String>,
        answer: impl Into<String>,
        meta: BTreeMap<String, String>,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        let answer = answer.into();
        if id.is_empty() {
            return Err(ModelError::EmptyId);
        }
        if answer.trim().is_empty() {
            return Err(ModelError::EmptyAnswer(id));
        }
        if tagged::contains_reserved_tag(&answer) {
            return Err(ModelError::ReservedTagInAnswer(id));
        }
        let language = Language::detect(&answer);
        Ok(RawSample {
            id,
            image_ref: image_ref.into(),
            answer,
            language,
            meta,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Generated,
    Rewritten,
    HumanEdited,
}

/// A chain-of-thought text together with where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationale {
    text: String,
    revision: u32,
    origin: Origin,
}

impl Rationale {
    pub fn new(text: impl Into<String>, revision: u32, origin: Origin) -> Result<Self, ModelError> {
        let text = text.into();
        if text.is_empty() {
            return Err(ModelError::EmptyRationale);
        }
        if (revision == 0) != (origin == Origin::Generated) {
            return Err(ModelError::RevisionOriginMismatch { revision, origin });
        }
        Ok(Rationale {
            text,
            revision,
            origin,
        })
    }

    pub fn generated(text: impl Into<String>) -> Result<Self, ModelError> {
        Self::new(text, 0, Origin::Generated)
    }

    /// The next revision of `self`, produced by `origin`.
    pub fn revise(&self, text: impl Into<String>, origin: Origin) -> Result<Self, ModelError> {
        Self::new(text, self.revision + 1, origin)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn revision(&self) -> u32 {
        self.revision
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    D1,
    D2,
    D3,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::D1 => "D1",
            Stage::D2 => "D2",
            Stage::D3 => "D3",
        })
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(Stage::D1),
            "d2" => Ok(Stage::D2),
            "d3" => Ok(Stage::D3),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Violation {
    LengthExceeded,
    MissingVisual,
    MissingSemantic,
    LogicalInconsistency,
}

impl Violation {
    pub const ALL: [Violation; 4] = [
        Violation::LengthExceeded,
        Violation::MissingVisual,
        Violation::MissingSemantic,
        Violation::LogicalInconsistency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Violation::LengthExceeded => "LengthExceeded",
            Violation::MissingVisual => "MissingVisual",
            Violation::MissingSemantic => "MissingSemantic",
            Violation::LogicalInconsistency => "LogicalInconsistency",
        }
    }

    pub(crate) fn bit(self) -> u32 {
        match self {
            Violation::LengthExceeded => 1,
            Violation::MissingVisual => 2,
            Violation::MissingSemantic => 4,
            Violation::LogicalInconsistency => 8,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome of the automatic quality gate on one rationale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalVerdict {
    pub passed: bool,
    pub violations: Vec<Violation>,
    pub token_count: usize,
    pub evaluated_at: DateTime<Utc>,
}

impl EvalVerdict {
    /// Builds a verdict whose `passed` flag agrees with `violations`.
    pub fn from_violations(
        mut violations: Vec<Violation>,
        token_count: usize,
        evaluated_at: DateTime<Utc>,
    ) -> Self {
        violations.sort();
        violations.dedup();
        EvalVerdict {
            passed: violations.is_empty(),
            violations,
            token_count,
            evaluated_at,
        }
    }

    /// Bitmask view of the violation set (LengthExceeded = 1, MissingVisual = 2,
    /// MissingSemantic = 4, LogicalInconsistency = 8).
    pub fn violation_bits(&self) -> u32 {
        self.violations.iter().fold(0, |acc, v| acc | v.bit())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewAction {
    Approve,
    Reject,
    Edit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub action: ReviewAction,
    pub reviewer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_text: Option<String>,
    pub decided_at: DateTime<Utc>,
    pub sample_version: u64,
}

impl ReviewDecision {
    /// Checks the per-action field requirements against the rationale text
    /// the reviewer was shown.
    pub fn validate(&self, previous_text: &str) -> Result<(), ModelError> {
        let note_present = self.note.as_deref().is_some_and(|n| !n.trim().is_empty());
        match self.action {
            ReviewAction::Reject if !note_present => Err(ModelError::InvalidDecision(
                "reject requires a non-empty note",
            )),
            ReviewAction::Edit => match self.edited_text.as_deref() {
                None | Some("") => Err(ModelError::InvalidDecision("edit requires edited_text")),
                Some(t) if t == previous_text => Err(ModelError::InvalidDecision(
                    "edited_text must differ from the current rationale",
                )),
                Some(_) => Ok(()),
            },
            _ if self.action != ReviewAction::Edit && self.edited_text.is_some() => Err(
                ModelError::InvalidDecision("edited_text is only allowed with action edit"),
            ),
            _ => Ok(()),
        }
    }

    pub fn is_human_pass(&self) -> bool {
        matches!(self.action, ReviewAction::Approve | ReviewAction::Edit)
    }
}

/// A sample with its current rationale, stage and full audit trail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTSample {
    pub raw: RawSample,
    pub rationale: Rationale,
    stage: Stage,
    verdicts: Vec<EvalVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    review: Option<ReviewDecision>,
}

impl CoTSample {
    /// A freshly generated sample in D1.
    pub fn new(raw: RawSample, rationale: Rationale) -> Self {
        CoTSample {
            raw,
            rationale,
            stage: Stage::D1,
            verdicts: Vec::new(),
            review: None,
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn verdicts(&self) -> &[EvalVerdict] {
        &self.verdicts
    }

    pub fn last_verdict(&self) -> Option<&EvalVerdict> {
        self.verdicts.last()
    }

    pub fn review(&self) -> Option<&ReviewDecision> {
        self.review.as_ref()
    }

    pub fn push_verdict(&mut self, verdict: EvalVerdict) {
        self.verdicts.push(verdict);
    }

    /// Replaces the rationale while still in D1 (rewrite loop).
    pub fn with_rationale(mut self, rationale: Rationale) -> Self {
        self.rationale = rationale;
        self
    }

    /// Records the review decision that will gate D2 -> D3.
    pub fn with_review(mut self, decision: ReviewDecision) -> Self {
        self.review = Some(decision);
        self
    }

    /// Human-edited rationale plus the verdict it earned on re-evaluation.
    pub fn with_human_edit(mut self, rationale: Rationale, verdict: EvalVerdict) -> Self {
        self.rationale = rationale;
        self.verdicts.push(verdict);
        self
    }
}

/// Moves `sample` forward by exactly one stage.
///
/// D1 -> D2 requires the latest verdict to pass. D2 -> D3 requires an
/// approve/edit review and, for edits, that the edited text itself passed
/// re-evaluation.
pub fn advance_stage(sample: &CoTSample, target: Stage) -> Result<CoTSample, ModelError> {
    let from = sample.stage;
    match (from, target) {
        (Stage::D1, Stage::D2) => match sample.last_verdict() {
            Some(v) if v.passed => {}
            Some(_) => {
                return Err(ModelError::IllegalTransition {
                    from,
                    to: target,
                    reason: "latest verdict failed",
                })
            }
            None => {
                return Err(ModelError::IllegalTransition {
                    from,
                    to: target,
                    reason: "sample has not been evaluated",
                })
            }
        },
        (Stage::D2, Stage::D3) => {
            let review = sample.review.as_ref().ok_or(ModelError::MissingReview)?;
            if !review.is_human_pass() {
                return Err(ModelError::MissingReview);
            }
            if !sample.last_verdict().is_some_and(|v| v.passed) {
                return Err(ModelError::IllegalTransition {
                    from,
                    to: target,
                    reason: "current rationale does not pass evaluation",
                });
            }
            if review.action == ReviewAction::Edit
                && review.edited_text.as_deref() != Some(sample.rationale.text())
            {
                return Err(ModelError::IllegalTransition {
                    from,
                    to: target,
                    reason: "edited text has not been applied",
                });
            }
        }
        _ => {
            return Err(ModelError::IllegalTransition {
                from,
                to: target,
                reason: "only D1 -> D2 and D2 -> D3 are permitted",
            })
        }
    }
    let mut next = sample.clone();
    next.stage = target;
    Ok(next)
}
