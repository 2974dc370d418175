use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{tokenize_for_bleu, MetricsError};
use crate::model::Language;

pub const MAX_ORDER: usize = 4;

/// Corpus-level BLEU-1..4 with clipped modified precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// p1..p4 after smoothing.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    /// BLEU-1..BLEU-4.
    pub bleu: [f64; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
    /// Clipped n-gram matches per order, before smoothing.
    pub matches: [usize; MAX_ORDER],
    /// Hypothesis n-gram totals per order.
    pub totals: [usize; MAX_ORDER],
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts
                .entry(w.iter().map(AsRef::as_ref).collect())
                .or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU over pre-tokenized sentence pairs.
///
/// * p_n = matches_n / totals_n. When matches_n = 0 for n ≥ 2, add-one
///   smoothing gives p_n = 1 / (totals_n + 1). An empty hypothesis corpus
///   has p_1 = 1 against an empty reference corpus and 0 otherwise.
/// * BP = min(1, exp(1 − ref_len / hyp_len)); BP = 0 when hyp_len = 0 and
///   ref_len > 0, and 1 when both are 0.
/// * BLEU-n = BP × (p_1 ⋯ p_n)^(1/n).
pub fn bleu_tokens<H, R>(
    hypotheses: &[Vec<H>],
    references: &[Vec<R>],
) -> Result<BleuReport, MetricsError>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut hyp_len = 0;
    let mut ref_len = 0;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            totals[n - 1] += hyp.len().saturating_sub(n - 1);
            matches[n - 1] += h
                .iter()
                .map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if matches[n] > 0 {
            matches[n] as f64 / totals[n] as f64
        } else if n == 0 {
            if hyp_len == 0 && ref_len == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 / (totals[n] as f64 + 1.0)
        };
    }
    let brevity_penalty = match (hyp_len, ref_len) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        (c, r) => (1.0 - r as f64 / c as f64).exp().min(1.0),
    };
    let mut bleu = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        log_sum += precisions[n].ln();
        bleu[n] = if precisions[..=n].contains(&0.0) {
            0.0
        } else {
            (brevity_penalty * (log_sum / (n + 1) as f64).exp()).min(1.0)
        };
    }
    Ok(BleuReport {
        precisions,
        brevity_penalty,
        bleu,
        hyp_len,
        ref_len,
        matches,
        totals,
    })
}

pub fn bleu<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
    language: Language,
) -> Result<BleuReport, MetricsError> {
    let hyp: Vec<Vec<String>> = hypotheses
        .iter()
        .map(|h| tokenize_for_bleu(h.as_ref(), language))
        .collect();
    let refs: Vec<Vec<String>> = references
        .iter()
        .map(|r| tokenize_for_bleu(r.as_ref(), language))
        .collect();
    bleu_tokens(&hyp, &refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_scores_one() {
        let corpus = ["the cat sat", "a", "", "一二三四"];
        for lang in [Language::Latin, Language::Cjk, Language::Mixed] {
            let r = bleu(&corpus, &corpus, lang).unwrap();
            assert_eq!(r.bleu, [1.0; 4]);
            assert_eq!(r.brevity_penalty, 1.0);
        }
        let r = bleu(&[""], &[""], Language::Latin).unwrap();
        assert_eq!(r.bleu, [1.0; 4]);
    }

    #[test]
    fn short_hypothesis_by_hand() {
        // p1 = 3/3, p2 = 2/2, p3 = 1/1, p4 = (0+1)/(0+1); BP = exp(1 - 4/3).
        let r = bleu(&["the cat sat"], &["the cat sat down"], Language::Latin).unwrap();
        let bp = (1.0f64 - 4.0 / 3.0).exp();
        assert_eq!(r.matches, [3, 2, 1, 0]);
        assert_eq!(r.totals, [3, 2, 1, 0]);
        assert!((r.brevity_penalty - bp).abs() < 1e-12);
        for b in r.bleu {
            assert!((b - bp).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_and_smoothing_by_hand() {
        // hyp "the the the the" vs ref "the cat": p1 = min(4,1)/4, bigram "the the" unmatched.
        let r = bleu(&["the the the the"], &["the cat"], Language::Latin).unwrap();
        assert_eq!(r.matches[0], 1);
        assert_eq!(r.precisions[0], 0.25);
        assert_eq!(r.precisions[1], 1.0 / 4.0);
        assert_eq!(r.brevity_penalty, 1.0);
        assert!((r.bleu[1] - (0.25f64 * 0.25).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn no_unigram_overlap_is_zero() {
        let r = bleu(&["x y"], &["a b"], Language::Latin).unwrap();
        assert_eq!(r.bleu, [0.0; 4]);
        let r = bleu(&[""], &["a b"], Language::Latin).unwrap();
        assert_eq!((r.bleu, r.brevity_penalty), ([0.0; 4], 0.0));
    }

    #[test]
    fn errors() {
        assert_eq!(
            bleu::<&str, &str>(&[], &[], Language::Latin),
            Err(MetricsError::EmptyCorpus)
        );
        assert!(matches!(
            bleu(&["a"], &["a", "b"], Language::Latin),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }
}
