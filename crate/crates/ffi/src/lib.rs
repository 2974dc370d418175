//! C ABI for the tagged-sample codec, the rationale evaluator and the
//! BLEU / word-accuracy scorer.
//!
//! Conventions:
//! * every fallible function returns a [`CcStatus`]; on failure a message
//!   is available from [`cc_last_error_message`] on the same thread;
//! * strings are NUL-terminated UTF-8; strings returned through `char **`
//!   are owned by the caller and released with [`cc_string_free`];
//! * handles are opaque and released with their `_free` function, which
//!   accepts NULL;
//! * panics never cross the boundary; they surface as `CC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cot_curate::evaluation::{count_tokens, EvalConfig};
use cot_curate::metrics::{bleu_tokens, tokenize_for_bleu, word_accuracy, MetricsError, MAX_ORDER};
use cot_curate::model::{Language, RawSample};
use cot_curate::tagged::{self, TaggedError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ReservedTagInContent = 3,
    MissingTag = 4,
    MalformedNesting = 5,
    TrailingGarbage = 6,
    EmptyCorpus = 7,
    LengthMismatch = 8,
    Io = 9,
    Config = 10,
    InvalidArgument = 11,
    Panic = 12,
}

/// Violation bits in [`CcVerdict::violations`].
pub const CC_VIOLATION_LENGTH_EXCEEDED: u32 = 1;
pub const CC_VIOLATION_MISSING_VISUAL: u32 = 2;
pub const CC_VIOLATION_MISSING_SEMANTIC: u32 = 4;
pub const CC_VIOLATION_LOGICAL_INCONSISTENCY: u32 = 8;

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CcVerdict {
    pub passed: bool,
    /// Bitwise OR of `CC_VIOLATION_*`.
    pub violations: u32,
    pub token_count: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CcBleuReport {
    /// BLEU-1 .. BLEU-4.
    pub bleu: [f64; 4],
    /// Modified n-gram precisions p_1 .. p_4.
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Rationale evaluator with a fixed configuration.
pub struct CcEvaluator {
    config: EvalConfig,
}

/// Accumulates (hypothesis, reference) pairs for corpus-level scoring.
pub struct CcBleuCorpus {
    hypotheses: Vec<String>,
    references: Vec<String>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let mut bytes = message.into().into_bytes();
    bytes.retain(|b| *b != 0);
    let c = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: CcStatus, message: impl Into<String>) -> CcStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> CcStatus) -> CcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == CcStatus::Ok {
                set_error("");
            }
            status
        }
        Err(_) => fail(CcStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, CcStatus> {
    if p.is_null() {
        return Err(fail(CcStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(CcStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn to_c(s: String) -> Result<*mut c_char, CcStatus> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(CcStatus::InvalidArgument, "result contains an interior NUL"))
}

fn tagged_status(e: &TaggedError) -> CcStatus {
    match e {
        TaggedError::ReservedTagInContent => CcStatus::ReservedTagInContent,
        TaggedError::MissingTag(_) => CcStatus::MissingTag,
        TaggedError::MalformedNesting(_) => CcStatus::MalformedNesting,
        TaggedError::TrailingGarbage(_) => CcStatus::TrailingGarbage,
        TaggedError::InvalidUtf8 => CcStatus::InvalidUtf8,
    }
}

fn metrics_status(e: &MetricsError) -> CcStatus {
    match e {
        MetricsError::EmptyCorpus => CcStatus::EmptyCorpus,
        MetricsError::LengthMismatch { .. } => CcStatus::LengthMismatch,
    }
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn cc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn cc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a pointer returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Encodes `<answer>A</answer><thinking>T</thinking>` into `*out`.
///
/// # Safety
/// `answer` and `thinking` must be NUL-terminated strings; `out` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_tagged_emit(
    answer: *const c_char,
    thinking: *const c_char,
    out: *mut *mut c_char,
) -> CcStatus {
    guard(|| {
        if out.is_null() {
            return fail(CcStatus::NullPointer, "out is NULL");
        }
        *out = ptr::null_mut();
        let answer = try_ffi!(read_str(answer, "answer"));
        let thinking = try_ffi!(read_str(thinking, "thinking"));
        let text = try_ffi!(
            tagged::emit(answer, thinking).map_err(|e| fail(tagged_status(&e), e.to_string()))
        );
        *out = try_ffi!(to_c(text));
        CcStatus::Ok
    })
}

/// Decodes a tagged sample into `*answer_out` and `*thinking_out`.
///
/// # Safety
/// `text` must be a NUL-terminated string; both out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cc_tagged_parse(
    text: *const c_char,
    answer_out: *mut *mut c_char,
    thinking_out: *mut *mut c_char,
) -> CcStatus {
    guard(|| {
        if answer_out.is_null() || thinking_out.is_null() {
            return fail(CcStatus::NullPointer, "output pointer is NULL");
        }
        *answer_out = ptr::null_mut();
        *thinking_out = ptr::null_mut();
        if text.is_null() {
            return fail(CcStatus::NullPointer, "text is NULL");
        }
        let parsed = try_ffi!(tagged::parse_bytes(CStr::from_ptr(text).to_bytes())
            .map_err(|e| fail(tagged_status(&e), e.to_string())));
        let answer = try_ffi!(to_c(parsed.answer));
        let thinking = match to_c(parsed.thinking) {
            Ok(t) => t,
            Err(status) => {
                cc_string_free(answer);
                return status;
            }
        };
        *answer_out = answer;
        *thinking_out = thinking;
        CcStatus::Ok
    })
}

/// Token count of `text` under the script detected from the text itself.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cc_count_tokens(text: *const c_char, out: *mut usize) -> CcStatus {
    guard(|| {
        if out.is_null() {
            return fail(CcStatus::NullPointer, "out is NULL");
        }
        let text = try_ffi!(read_str(text, "text"));
        *out = count_tokens(text, Language::detect(text));
        CcStatus::Ok
    })
}

fn new_evaluator(config: EvalConfig, out: *mut *mut CcEvaluator) -> CcStatus {
    // SAFETY: caller checked `out`.
    unsafe { *out = Box::into_raw(Box::new(CcEvaluator { config })) };
    CcStatus::Ok
}

/// Evaluator with the built-in lexicons, rules and `l_max = 100`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_evaluator_new_default(out: *mut *mut CcEvaluator) -> CcStatus {
    guard(|| {
        if out.is_null() {
            return fail(CcStatus::NullPointer, "out is NULL");
        }
        new_evaluator(EvalConfig::default(), out)
    })
}

/// Evaluator from a TOML evaluator config file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cc_evaluator_from_file(
    path: *const c_char,
    out: *mut *mut CcEvaluator,
) -> CcStatus {
    guard(|| {
        if out.is_null() {
            return fail(CcStatus::NullPointer, "out is NULL");
        }
        *out = ptr::null_mut();
        let path = try_ffi!(read_str(path, "path"));
        if !Path::new(path).is_file() {
            return fail(CcStatus::Io, format!("cannot read {path}"));
        }
        let config =
            try_ffi!(EvalConfig::load(Path::new(path))
                .map_err(|e| fail(CcStatus::Config, e.to_string())));
        new_evaluator(config, out)
    })
}

/// Sets the length bound. Zero is rejected.
///
/// # Safety
/// `evaluator` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_evaluator_set_l_max(
    evaluator: *mut CcEvaluator,
    l_max: usize,
) -> CcStatus {
    guard(|| {
        let Some(ev) = evaluator.as_mut() else {
            return fail(CcStatus::NullPointer, "evaluator is NULL");
        };
        if l_max == 0 {
            return fail(CcStatus::InvalidArgument, "l_max must be >= 1");
        }
        ev.config.l_max = l_max;
        CcStatus::Ok
    })
}

/// Evaluates `rationale` as support for `answer`.
///
/// # Safety
/// `evaluator` must be a live handle; strings NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cc_evaluator_eval(
    evaluator: *const CcEvaluator,
    answer: *const c_char,
    rationale: *const c_char,
    out: *mut CcVerdict,
) -> CcStatus {
    guard(|| {
        let Some(ev) = evaluator.as_ref() else {
            return fail(CcStatus::NullPointer, "evaluator is NULL");
        };
        if out.is_null() {
            return fail(CcStatus::NullPointer, "out is NULL");
        }
        let answer = try_ffi!(read_str(answer, "answer"));
        let rationale = try_ffi!(read_str(rationale, "rationale"));
        let sample = try_ffi!(RawSample::new("ffi", "", answer)
            .map_err(|e| fail(CcStatus::InvalidArgument, e.to_string())));
        let v = ev.config.evaluate_text(rationale, &sample);
        *out = CcVerdict {
            passed: v.passed,
            violations: v.violation_bits(),
            token_count: v.token_count,
        };
        CcStatus::Ok
    })
}

/// # Safety
/// `evaluator` must be NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cc_evaluator_free(evaluator: *mut CcEvaluator) {
    if !evaluator.is_null() {
        drop(Box::from_raw(evaluator));
    }
}

/// Empty scoring corpus.
#[no_mangle]
pub extern "C" fn cc_bleu_corpus_new() -> *mut CcBleuCorpus {
    Box::into_raw(Box::new(CcBleuCorpus {
        hypotheses: Vec::new(),
        references: Vec::new(),
    }))
}

/// Adds one pair. Both sides are tokenized by the script of `reference`.
///
/// # Safety
/// `corpus` must be a live handle; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cc_bleu_corpus_push(
    corpus: *mut CcBleuCorpus,
    hypothesis: *const c_char,
    reference: *const c_char,
) -> CcStatus {
    guard(|| {
        let Some(c) = corpus.as_mut() else {
            return fail(CcStatus::NullPointer, "corpus is NULL");
        };
        let h = try_ffi!(read_str(hypothesis, "hypothesis"));
        let r = try_ffi!(read_str(reference, "reference"));
        c.hypotheses.push(h.to_string());
        c.references.push(r.to_string());
        CcStatus::Ok
    })
}

/// Number of pairs pushed so far, or 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_bleu_corpus_len(corpus: *const CcBleuCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.hypotheses.len())
}

/// Corpus BLEU-1..4.
///
/// # Safety
/// `corpus` must be a live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cc_bleu_corpus_score(
    corpus: *const CcBleuCorpus,
    out: *mut CcBleuReport,
) -> CcStatus {
    guard(|| {
        let Some(c) = corpus.as_ref() else {
            return fail(CcStatus::NullPointer, "corpus is NULL");
        };
        if out.is_null() {
            return fail(CcStatus::NullPointer, "out is NULL");
        }
        let mut hyp = Vec::with_capacity(c.hypotheses.len());
        let mut refs = Vec::with_capacity(c.references.len());
        for (h, r) in c.hypotheses.iter().zip(&c.references) {
            let lang = Language::detect(r);
            hyp.push(tokenize_for_bleu(h, lang));
            refs.push(tokenize_for_bleu(r, lang));
        }
        let rep =
            try_ffi!(bleu_tokens(&hyp, &refs).map_err(|e| fail(metrics_status(&e), e.to_string())));
        let mut report = CcBleuReport {
            brevity_penalty: rep.brevity_penalty,
            hyp_len: rep.hyp_len,
            ref_len: rep.ref_len,
            ..Default::default()
        };
        report.bleu[..MAX_ORDER].copy_from_slice(&rep.bleu);
        report.precisions[..MAX_ORDER].copy_from_slice(&rep.precisions);
        *out = report;
        CcStatus::Ok
    })
}

/// Fraction of pairs equal after lowercasing and whitespace normalization.
///
/// # Safety
/// `corpus` must be a live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cc_bleu_corpus_word_accuracy(
    corpus: *const CcBleuCorpus,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        let Some(c) = corpus.as_ref() else {
            return fail(CcStatus::NullPointer, "corpus is NULL");
        };
        if out.is_null() {
            return fail(CcStatus::NullPointer, "out is NULL");
        }
        *out = try_ffi!(word_accuracy(&c.hypotheses, &c.references)
            .map_err(|e| fail(metrics_status(&e), e.to_string())));
        CcStatus::Ok
    })
}

/// # Safety
/// `corpus` must be NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cc_bleu_corpus_free(corpus: *mut CcBleuCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}
