//! Chain-of-thought dataset curation for scene-text recognition.
//!
//! A raw corpus of `(image_ref, answer)` pairs moves through three stages:
//! an LLM writes a rationale for every sample (D1), an automatic gate
//! checks length, visual analysis, semantic analysis and consistency and
//! sends failures back for rewriting (D2), and human experts approve,
//! reject or edit what survived (D3). Samples are exported as
//! `<answer>…</answer><thinking>…</thinking>` records and model outputs are
//! scored with BLEU-1..4 and word accuracy.

pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod generation;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod records;
pub mod review;
pub mod tagged;

pub use error::{Error, Result};
pub use evaluation::{eval, EvalConfig};
pub use model::{
    advance_stage, CoTSample, EvalVerdict, Language, Origin, Rationale, RawSample, ReviewAction,
    ReviewDecision, Stage, Violation,
};
pub use pipeline::{run_stage12, PipelineConfig, RunReport};
pub use records::{ingest, DatasetRecord, ExportStage};
