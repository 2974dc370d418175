use regex::Regex;

use super::EvalError;

/// Prefix marking a lexicon entry as a regular expression instead of a
/// plain substring.
pub const REGEX_PREFIX: &str = "re:";

#[derive(Debug, Clone)]
pub enum LexiconEntry {
    /// Stored lowercased; matched against the lowercased text.
    Substring(String),
    /// Compiled case-insensitive.
    Pattern(Regex),
}

impl LexiconEntry {
    pub fn parse(raw: &str) -> Result<Self, EvalError> {
        match raw.strip_prefix(REGEX_PREFIX) {
            Some(pat) => Regex::new(&format!("(?i){pat}"))
                .map(LexiconEntry::Pattern)
                .map_err(|e| EvalError::Config(format!("bad lexicon pattern `{pat}`: {e}"))),
            None if raw.trim().is_empty() => {
                Err(EvalError::Config("empty lexicon entry".to_string()))
            }
            None => Ok(LexiconEntry::Substring(raw.to_lowercase())),
        }
    }

    pub fn source(&self) -> String {
        match self {
            LexiconEntry::Substring(s) => s.clone(),
            LexiconEntry::Pattern(r) => {
                format!("{REGEX_PREFIX}{}", r.as_str().trim_start_matches("(?i)"))
            }
        }
    }
}

/// A non-empty set of terms; a text matches when any entry does.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
}

impl Lexicon {
    pub fn new<I, S>(raw: I) -> Result<Self, EvalError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entries = raw
            .into_iter()
            .map(|s| LexiconEntry::parse(s.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        if entries.is_empty() {
            return Err(EvalError::Config("lexicon must not be empty".to_string()));
        }
        Ok(Lexicon { entries })
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn extend(&mut self, more: Lexicon) {
        self.entries.extend(more.entries);
    }

    pub fn matches(&self, text: &str) -> bool {
        self.first_match(text).is_some()
    }

    pub fn first_match(&self, text: &str) -> Option<&LexiconEntry> {
        if text.is_empty() {
            return None;
        }
        let lower = text.to_lowercase();
        self.entries.iter().find(|e| match e {
            LexiconEntry::Substring(s) => lower.contains(s.as_str()),
            LexiconEntry::Pattern(r) => r.is_match(text),
        })
    }
}

pub const DEFAULT_VISUAL: &[&str] = &[
    "letter",
    "shape",
    "stroke",
    "lookalike",
    "look-alike",
    "look alike",
    "visually similar",
    "visual",
    "glyph",
    "resembl",
    "stylized",
    "stylised",
    "font",
    "curve",
    "character form",
    "字形",
    "笔画",
    "形似",
    "形状",
    "外观",
];

pub const DEFAULT_SEMANTIC: &[&str] = &[
    "meaning",
    "context",
    "plausib",
    "refers to",
    "semantic",
    "coheren",
    "makes sense",
    "denotes",
    "connotation",
    "语义",
    "含义",
    "上下文",
    "意思",
    "语境",
];
