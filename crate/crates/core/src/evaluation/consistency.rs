//! Heuristic logical-consistency rules.
//!
//! A rationale is consistent when it mentions the answer verbatim
//! (case-insensitive) and none of the configured rules fire.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::tagged;

#[derive(Debug, Clone)]
pub enum ConsistencyRule {
    /// A candidate is both ruled out and later concluded.
    RuledOutThenConcluded,
    /// The rationale concludes a candidate other than the answer
    /// ("the most plausible … is X").
    ConclusionDiffersFromAnswer,
    /// The rationale contains one of the reserved tag literals.
    ReservedTagLiteral,
    /// Any match of the pattern marks the rationale inconsistent.
    ForbiddenPattern(Regex),
}

/// File form of a rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleSpec {
    RuledOutThenConcluded,
    ConclusionDiffersFromAnswer,
    ReservedTagLiteral,
    ForbiddenPattern { pattern: String },
}

impl RuleSpec {
    pub fn compile(&self) -> Result<ConsistencyRule, regex::Error> {
        Ok(match self {
            RuleSpec::RuledOutThenConcluded => ConsistencyRule::RuledOutThenConcluded,
            RuleSpec::ConclusionDiffersFromAnswer => ConsistencyRule::ConclusionDiffersFromAnswer,
            RuleSpec::ReservedTagLiteral => ConsistencyRule::ReservedTagLiteral,
            RuleSpec::ForbiddenPattern { pattern } => {
                ConsistencyRule::ForbiddenPattern(Regex::new(pattern)?)
            }
        })
    }
}

impl ConsistencyRule {
    pub fn name(&self) -> &'static str {
        match self {
            ConsistencyRule::RuledOutThenConcluded => "ruled_out_then_concluded",
            ConsistencyRule::ConclusionDiffersFromAnswer => "conclusion_differs_from_answer",
            ConsistencyRule::ReservedTagLiteral => "reserved_tag_literal",
            ConsistencyRule::ForbiddenPattern(_) => "forbidden_pattern",
        }
    }

    pub fn spec(&self) -> RuleSpec {
        match self {
            ConsistencyRule::RuledOutThenConcluded => RuleSpec::RuledOutThenConcluded,
            ConsistencyRule::ConclusionDiffersFromAnswer => RuleSpec::ConclusionDiffersFromAnswer,
            ConsistencyRule::ReservedTagLiteral => RuleSpec::ReservedTagLiteral,
            ConsistencyRule::ForbiddenPattern(r) => RuleSpec::ForbiddenPattern {
                pattern: r.as_str().to_string(),
            },
        }
    }

    pub fn fires(&self, text: &str, answer: &str) -> bool {
        match self {
            ConsistencyRule::RuledOutThenConcluded => {
                let ruled_out = ruled_out_candidates(text);
                conclusions(text)
                    .iter()
                    .any(|c| ruled_out.contains(&c.normalized()))
            }
            ConsistencyRule::ConclusionDiffersFromAnswer => {
                conclusions(text).iter().any(|c| !c.matches_answer(answer))
            }
            ConsistencyRule::ReservedTagLiteral => tagged::contains_reserved_tag(text),
            ConsistencyRule::ForbiddenPattern(r) => r.is_match(text),
        }
    }
}

pub fn default_rules() -> Vec<ConsistencyRule> {
    vec![
        ConsistencyRule::RuledOutThenConcluded,
        ConsistencyRule::ConclusionDiffersFromAnswer,
        ConsistencyRule::ReservedTagLiteral,
    ]
}

/// Heuristic consistency check: answer mentioned and no rule fires.
pub fn check_consistency(text: &str, answer: &str, rules: &[ConsistencyRule]) -> bool {
    let mentions_answer =
        !answer.trim().is_empty() && text.to_lowercase().contains(&answer.trim().to_lowercase());
    // Evaluate every rule so the check costs the same regardless of order.
    let fired = rules.iter().filter(|r| r.fires(text, answer)).count();
    mentions_answer && fired == 0
}

// A candidate is either a quoted span or a single bare word.
const CANDIDATE: &str =
    r#"(?:"([^"]+)"|“([^”]+)”|'([^']+)'|「([^」]+)」|([^\s.,;:!?。，；：！？"“”'「」…]+))"#;

static CONCLUSION_AFTER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i)\bthe\s+most\s+(?:plausible|likely|probable|reasonable)\b[^.!?。！？\n]*?\b(?:is|would\s+be|remains)\s+{CANDIDATE}"
    ))
    .expect("static regex")
});

static CONCLUSION_BEFORE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i)\b(?:favou?rs|prefers|selects|chooses|concludes?)\s+{CANDIDATE}\s+as\s+the\s+most\s+(?:plausible|likely|probable|reasonable)\b"
    ))
    .expect("static regex")
});

static RULED_OUT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:ruled\s+out|rule\s+out|rules\s+out|ruling\s+out|dismissed|discarded|excluded|rejected)\b")
        .expect("static regex")
});

static QUOTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#""([^"]+)"|“([^”]+)”|「([^」]+)」"#).expect("static regex"));

static NEXT_CANDIDATE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^\s*{CANDIDATE}")).expect("static regex"));

static SENTENCE_END: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[.!?。！？\n]+(?:\s|$)|[。！？\n]").expect("static regex"));

const STOPWORDS: &[&str] = &[
    "due", "because", "by", "for", "on", "as", "in", "since", "given", "owing", "based", "and",
    "or", "the", "a", "an", "here", "there", "it", "this", "that", "them", "these", "those", "too",
    "also", "from", "with", "at", "to",
];

#[derive(Debug, Clone, PartialEq, Eq)]
struct Candidate {
    text: String,
    quoted: bool,
}

impl Candidate {
    fn from_captures(caps: &regex::Captures<'_>) -> Option<Candidate> {
        (1..=5).find_map(|i| {
            caps.get(i).map(|m| Candidate {
                text: m.as_str().trim().to_string(),
                quoted: i < 5,
            })
        })
    }

    fn normalized(&self) -> String {
        self.text.to_lowercase()
    }

    fn matches_answer(&self, answer: &str) -> bool {
        let answer = answer.trim().to_lowercase();
        let cand = self.normalized();
        cand == answer || (!self.quoted && answer.split_whitespace().next() == Some(cand.as_str()))
    }
}

fn conclusions(text: &str) -> Vec<Candidate> {
    CONCLUSION_AFTER
        .captures_iter(text)
        .chain(CONCLUSION_BEFORE.captures_iter(text))
        .filter_map(|c| Candidate::from_captures(&c))
        .collect()
}

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for m in SENTENCE_END.find_iter(text) {
        out.push(&text[start..m.end()]);
        start = m.end();
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

/// Candidates a rationale explicitly rules out: quoted spans preceding the
/// ruling-out phrase within its sentence, plus the candidate right after it.
fn ruled_out_candidates(text: &str) -> HashSet<String> {
    let mut out = HashSet::new();
    for sentence in sentences(text) {
        for kw in RULED_OUT.find_iter(sentence) {
            let before = &sentence[..kw.start()];
            for caps in QUOTED.captures_iter(before) {
                if let Some(m) = caps.get(1).or(caps.get(2)).or(caps.get(3)) {
                    out.insert(m.as_str().trim().to_lowercase());
                }
            }
            if let Some(caps) = NEXT_CANDIDATE.captures(&sentence[kw.end()..]) {
                if let Some(c) = Candidate::from_captures(&caps) {
                    if c.quoted || !STOPWORDS.contains(&c.normalized().as_str()) {
                        out.insert(c.normalized());
                    }
                }
            }
        }
    }
    out
}
