use std::path::Path;

use super::store::{Disposition, RunState, Store};
use crate::error::{Error, Result};
use crate::model::{EvalVerdict, Rationale};
use crate::records::{DatasetRecord, ExportStage, SCHEMA_VERSION};
use crate::tagged;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportFormat {
    /// One record per line.
    Jsonl,
    /// A single pretty-printed array.
    Json,
}

fn record(
    state: &crate::pipeline::SampleState,
    run_id: &str,
    stage: ExportStage,
    rationale: &Rationale,
    verdict: Option<&EvalVerdict>,
) -> Option<DatasetRecord> {
    let cot = match tagged::emit(&state.raw.answer, rationale.text()) {
        Ok(c) => c,
        Err(e) => {
            tracing::warn!(sample = %state.raw.id, error = %e, "rationale cannot be encoded; skipped");
            return None;
        }
    };
    Some(DatasetRecord {
        schema_version: SCHEMA_VERSION,
        id: state.raw.id.clone(),
        image_ref: state.raw.image_ref.clone(),
        answer: state.raw.answer.clone(),
        language: state.raw.language,
        cot,
        stage,
        revision: rationale.revision(),
        violations: verdict.map(|v| v.violations.clone()).unwrap_or_default(),
        run_id: run_id.to_string(),
    })
}

/// Records of one stage in id order.
///
/// * D1: the generated (revision 0) rationale of every sample.
/// * D2: every sample that passed evaluation, with its passing rationale.
/// * D3: every expert-approved sample, with the rationale that entered D3.
/// * quarantined: exhausted, provider-failed and expert-rejected samples
///   with their last rationale and its violations.
///
/// Rationales that cannot be encoded (stray reserved tags) are skipped.
pub fn export_records(state: &RunState, run_id: &str, stage: ExportStage) -> Vec<DatasetRecord> {
    state
        .samples
        .values()
        .filter_map(|s| match stage {
            ExportStage::D1 => {
                let r = s.rationales.first()?;
                let v = s.verdicts.iter().find(|(rev, _)| *rev == 0).map(|(_, v)| v);
                record(s, run_id, stage, r, v)
            }
            ExportStage::D2 => record(s, run_id, stage, s.d2_rationale()?, None),
            ExportStage::D3 => record(s, run_id, stage, s.d3_rationale()?, None),
            ExportStage::Quarantined => {
                let rejected = s
                    .review
                    .as_ref()
                    .is_some_and(|r| r.outcome == super::store::ReviewOutcome::Quarantined);
                if !rejected && !matches!(s.disposition, Disposition::Quarantined(_)) {
                    return None;
                }
                let r = s.current()?;
                let v = if rejected { None } else { s.current_verdict() };
                record(s, run_id, stage, r, v)
            }
        })
        .collect()
}

/// Writes one stage to `out` and returns the record count. The output is
/// a pure function of the log, so repeated exports are byte-identical.
pub fn export(
    store: &Store,
    stage: ExportStage,
    format: ExportFormat,
    out: &Path,
) -> Result<usize> {
    let records = store.with_state(|st| export_records(st, store.run_id(), stage));
    if records.is_empty() {
        return Err(Error::EmptyStage(stage.to_string()));
    }
    let mut buf = match format {
        ExportFormat::Jsonl => {
            let mut buf = String::new();
            for r in &records {
                buf.push_str(&serde_json::to_string(r).expect("records serialize"));
                buf.push('\n');
            }
            buf
        }
        ExportFormat::Json => serde_json::to_string_pretty(&records).expect("records serialize"),
    };
    if format == ExportFormat::Json {
        buf.push('\n');
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(out, buf).map_err(|e| Error::io(out, e))?;
    Ok(records.len())
}
