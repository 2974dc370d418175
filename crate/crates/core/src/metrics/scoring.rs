use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{bleu_tokens, tokenize_for_bleu, word_accuracy, BleuReport};
use crate::error::Result;
use crate::model::Language;
use crate::records::{read_jsonl, DatasetRecord, PredictionRecord};
use crate::tagged;

/// Which side of a reference record predictions are scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScoreTarget {
    Answer,
    Thinking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub target: ScoreTarget,
    pub pairs: usize,
    /// Reference ids with no prediction; scored as empty predictions.
    pub missing_predictions: usize,
    /// Prediction ids absent from the references; ignored.
    pub unknown_predictions: usize,
    pub bleu: BleuReport,
    pub word_accuracy: f64,
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "| BLEU-1 | BLEU-2 | BLEU-3 | BLEU-4 | Accuracy |")?;
        writeln!(f, "|--------|--------|--------|--------|----------|")?;
        writeln!(
            f,
            "| {:.3}  | {:.3}  | {:.3}  | {:.3}  | {:.3}    |",
            self.bleu.bleu[0],
            self.bleu.bleu[1],
            self.bleu.bleu[2],
            self.bleu.bleu[3],
            self.word_accuracy
        )?;
        writeln!(
            f,
            "pairs={} hyp_len={} ref_len={} BP={:.4} missing={} unknown={}",
            self.pairs,
            self.bleu.hyp_len,
            self.bleu.ref_len,
            self.bleu.brevity_penalty,
            self.missing_predictions,
            self.unknown_predictions
        )
    }
}

/// Scores a prediction file against an exported dataset file. Each pair
/// is tokenized by the script of its reference text.
pub fn score_files(pred: &Path, reference: &Path, target: ScoreTarget) -> Result<ScoreReport> {
    let refs: Vec<(usize, DatasetRecord)> = read_jsonl(reference)?;
    let preds: Vec<(usize, PredictionRecord)> = read_jsonl(pred)?;
    let by_id: HashMap<&str, &str> = preds
        .iter()
        .map(|(_, p)| (p.id.as_str(), p.prediction.as_str()))
        .collect();

    let mut hyp_tokens = Vec::with_capacity(refs.len());
    let mut ref_tokens = Vec::with_capacity(refs.len());
    let mut hyp_text = Vec::with_capacity(refs.len());
    let mut ref_text = Vec::with_capacity(refs.len());
    let mut missing = 0;
    for (_, rec) in &refs {
        let (text, language) = match target {
            ScoreTarget::Answer => (rec.answer.clone(), rec.language),
            ScoreTarget::Thinking => {
                let t = tagged::parse(&rec.cot)?.thinking;
                let lang = Language::detect(&t);
                (t, lang)
            }
        };
        let prediction = by_id.get(rec.id.as_str()).copied().unwrap_or_else(|| {
            missing += 1;
            ""
        });
        hyp_tokens.push(tokenize_for_bleu(prediction, language));
        ref_tokens.push(tokenize_for_bleu(&text, language));
        hyp_text.push(prediction.to_string());
        ref_text.push(text);
    }
    let known: std::collections::HashSet<&str> = refs.iter().map(|(_, r)| r.id.as_str()).collect();
    let unknown = preds
        .iter()
        .filter(|(_, p)| !known.contains(p.id.as_str()))
        .count();
    Ok(ScoreReport {
        target,
        pairs: refs.len(),
        missing_predictions: missing,
        unknown_predictions: unknown,
        bleu: bleu_tokens(&hyp_tokens, &ref_tokens)?,
        word_accuracy: word_accuracy(&hyp_text, &ref_text)?,
    })
}
