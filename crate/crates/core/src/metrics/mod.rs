//! Offline scoring: BLEU-1..4 and word-level accuracy.
//!
//! BLEU is computed per character for Chinese and per whitespace word,
//! case-insensitively, for Latin text.

pub mod bleu;
pub mod scoring;

use thiserror::Error;

use crate::model::{is_cjk_ideograph, Language};

pub use bleu::{bleu, bleu_tokens, BleuReport, MAX_ORDER};
pub use scoring::{score_files, ScoreReport, ScoreTarget};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch {
        hypotheses: usize,
        references: usize,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
}

impl MetricsError {
    pub fn name(&self) -> &'static str {
        match self {
            MetricsError::LengthMismatch { .. } => "LengthMismatch",
            MetricsError::EmptyCorpus => "EmptyCorpus",
        }
    }
}

/// * Latin: whitespace-separated words, lowercased.
/// * CJK: one token per non-whitespace codepoint.
/// * Mixed: CJK ideographs split out as single tokens; the remaining runs
///   are whitespace-split and lowercased.
pub fn tokenize_for_bleu(text: &str, language: Language) -> Vec<String> {
    match language {
        Language::Latin => text.split_whitespace().map(str::to_lowercase).collect(),
        Language::Cjk => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .flat_map(char::to_lowercase)
            .map(String::from)
            .collect(),
        Language::Mixed => {
            let mut out = Vec::new();
            let mut word = String::new();
            for c in text.chars() {
                if c.is_whitespace() || is_cjk_ideograph(c) {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                    if !c.is_whitespace() {
                        out.push(c.to_string());
                    }
                } else {
                    word.extend(c.to_lowercase());
                }
            }
            if !word.is_empty() {
                out.push(word);
            }
            out
        }
    }
}

pub fn normalize_for_accuracy(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Fraction of pairs equal after lowercasing and whitespace normalization.
pub fn word_accuracy<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
) -> Result<f64, MetricsError> {
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let hits = hypotheses
        .iter()
        .zip(references)
        .filter(|(h, r)| normalize_for_accuracy(h.as_ref()) == normalize_for_accuracy(r.as_ref()))
        .count();
    Ok(hits as f64 / hypotheses.len() as f64)
}
