use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::store::{Disposition, ReviewOutcome, RunState};
use crate::model::{Language, Violation};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub d1: usize,
    pub d2: usize,
    pub quarantined: usize,
    /// Ingested samples not yet staged. Zero once a run completes.
    pub in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub counts: StageCounts,
    /// Revision of the passing rationale -> number of D2 samples.
    pub rewrite_histogram: BTreeMap<u32, usize>,
    /// Violation -> occurrences across every failing verdict.
    pub violation_histogram: BTreeMap<Violation, usize>,
    pub provider_failures: usize,
    #[serde(with = "secs_f64")]
    pub wall_time: Duration,
}

mod secs_f64 {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

impl RunReport {
    pub fn from_state(run_id: &str, state: &RunState) -> Self {
        let mut counts = StageCounts {
            d1: state.samples.len(),
            ..Default::default()
        };
        let mut rewrite_histogram = BTreeMap::new();
        let mut violation_histogram = BTreeMap::new();
        let mut provider_failures = 0;
        for s in state.samples.values() {
            match &s.disposition {
                Disposition::Pending => counts.in_flight += 1,
                Disposition::D2 => {
                    counts.d2 += 1;
                    let rev = s.current().map_or(0, |r| r.revision());
                    *rewrite_histogram.entry(rev).or_insert(0) += 1;
                }
                Disposition::Quarantined(_) => counts.quarantined += 1,
            }
            for (_, v) in &s.verdicts {
                for violation in &v.violations {
                    *violation_histogram.entry(*violation).or_insert(0) += 1;
                }
            }
            provider_failures += s.provider_failures;
        }
        RunReport {
            run_id: run_id.to_string(),
            counts,
            rewrite_histogram,
            violation_histogram,
            provider_failures,
            wall_time: Duration::ZERO,
        }
    }

    /// The report with timing zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        RunReport {
            wall_time: Duration::ZERO,
            ..self.clone()
        }
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counts;
        writeln!(f, "run {}", self.run_id)?;
        writeln!(
            f,
            "  d1={} d2={} quarantined={} in_flight={}",
            c.d1, c.d2, c.quarantined, c.in_flight
        )?;
        let hist: Vec<String> = self
            .rewrite_histogram
            .iter()
            .map(|(k, v)| format!("{k}:{v}"))
            .collect();
        writeln!(f, "  rewrites {{{}}}", hist.join(", "))?;
        let viol: Vec<String> = self
            .violation_histogram
            .iter()
            .map(|(k, v)| format!("{}:{v}", k.name()))
            .collect();
        writeln!(f, "  violations {{{}}}", viol.join(", "))?;
        writeln!(f, "  provider_failures={}", self.provider_failures)?;
        write!(f, "  wall_time={:.3}s", self.wall_time.as_secs_f64())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewCounts {
    pub d3: usize,
    pub rejected: usize,
    pub undecided: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageCounts {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub quarantined: usize,
}

/// Dataset description numbers: stage counts, histograms, languages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub report: RunReport,
    pub review: ReviewCounts,
    pub languages: BTreeMap<Language, LanguageCounts>,
}

impl Stats {
    pub fn from_state(run_id: &str, state: &RunState) -> Self {
        let report = RunReport::from_state(run_id, state);
        let mut review = ReviewCounts::default();
        let mut languages: BTreeMap<Language, LanguageCounts> = BTreeMap::new();
        for s in state.samples.values() {
            let lang = languages.entry(s.raw.language).or_default();
            lang.d1 += 1;
            match &s.disposition {
                Disposition::D2 => {
                    lang.d2 += 1;
                    match s.review.as_ref().map(|r| r.outcome) {
                        Some(ReviewOutcome::D3) => {
                            review.d3 += 1;
                            lang.d3 += 1;
                        }
                        Some(ReviewOutcome::Quarantined) => {
                            review.rejected += 1;
                            lang.quarantined += 1;
                        }
                        None => review.undecided += 1,
                    }
                }
                Disposition::Quarantined(_) => lang.quarantined += 1,
                Disposition::Pending => {}
            }
        }
        Stats {
            report,
            review,
            languages,
        }
    }
}

impl fmt::Display for Stats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.report)?;
        writeln!(
            f,
            "review d3={} rejected={} undecided={}",
            self.review.d3, self.review.rejected, self.review.undecided
        )?;
        writeln!(f, "| language | D1 | D2 | D3 | quarantined |")?;
        writeln!(f, "|----------|----|----|----|-------------|")?;
        for (lang, c) in &self.languages {
            writeln!(
                f,
                "| {lang} | {} | {} | {} | {} |",
                c.d1, c.d2, c.d3, c.quarantined
            )?;
        }
        Ok(())
    }
}
