//! Codec for the tagged sample string
//! `<answer>…</answer><thinking>…</thinking>`.
//!
//! Tags are lowercase, attribute-free and must appear exactly once each, in
//! answer-then-thinking order. Payloads may hold any text except the four tag
//! literals; there is no escaping. Whitespace is tolerated before the first
//! tag, between the two pairs and after the last tag.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";
pub const THINKING_OPEN: &str = "<thinking>";
pub const THINKING_CLOSE: &str = "</thinking>";

const TAGS: [&str; 4] = [ANSWER_OPEN, ANSWER_CLOSE, THINKING_OPEN, THINKING_CLOSE];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaggedError {
    #[error("content contains a reserved tag literal")]
    ReservedTagInContent,
    #[error("missing tag {0}")]
    MissingTag(&'static str),
    #[error("malformed nesting: {0}")]
    MalformedNesting(&'static str),
    #[error("unexpected content outside the tag pairs at byte {0}")]
    TrailingGarbage(usize),
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
}

impl TaggedError {
    pub fn name(&self) -> &'static str {
        match self {
            TaggedError::ReservedTagInContent => "ReservedTagInContent",
            TaggedError::MissingTag(_) => "MissingTag",
            TaggedError::MalformedNesting(_) => "MalformedNesting",
            TaggedError::TrailingGarbage(_) => "TrailingGarbage",
            TaggedError::InvalidUtf8 => "InvalidUtf8",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaggedSample {
    pub answer: String,
    pub thinking: String,
}

impl TaggedSample {
    pub fn emit(&self) -> Result<String, TaggedError> {
        emit(&self.answer, &self.thinking)
    }
}

pub fn contains_reserved_tag(text: &str) -> bool {
    // Every tag starts with '<'; checking each '<' keeps this a single pass.
    text.match_indices('<')
        .any(|(i, _)| tag_at(text, i).is_some())
}

fn tag_at(s: &str, i: usize) -> Option<usize> {
    let rest = &s.as_bytes()[i..];
    TAGS.iter().position(|t| rest.starts_with(t.as_bytes()))
}

pub fn emit(answer: &str, thinking: &str) -> Result<String, TaggedError> {
    if contains_reserved_tag(answer) || contains_reserved_tag(thinking) {
        return Err(TaggedError::ReservedTagInContent);
    }
    let mut out = String::with_capacity(
        answer.len() + thinking.len() + TAGS.iter().map(|t| t.len()).sum::<usize>(),
    );
    out.push_str(ANSWER_OPEN);
    out.push_str(answer);
    out.push_str(ANSWER_CLOSE);
    out.push_str(THINKING_OPEN);
    out.push_str(thinking);
    out.push_str(THINKING_CLOSE);
    Ok(out)
}

pub fn parse_bytes(input: &[u8]) -> Result<TaggedSample, TaggedError> {
    let s = std::str::from_utf8(input).map_err(|_| TaggedError::InvalidUtf8)?;
    parse(s)
}

pub fn parse(input: &str) -> Result<TaggedSample, TaggedError> {
    // One scan collecting the first position of each tag kind.
    let mut pos: [Option<usize>; 4] = [None; 4];
    for (i, _) in input.match_indices('<') {
        if let Some(k) = tag_at(input, i) {
            if pos[k].is_some() {
                return Err(TaggedError::MalformedNesting("duplicated tag"));
            }
            pos[k] = Some(i);
        }
    }
    let [ao, ac, to, tc] = pos;
    let (ao, ac) = match (ao, ac) {
        (Some(a), Some(b)) => (a, b),
        (None, _) => return Err(TaggedError::MissingTag(ANSWER_OPEN)),
        (_, None) => return Err(TaggedError::MissingTag(ANSWER_CLOSE)),
    };
    let (to, tc) = match (to, tc) {
        (Some(a), Some(b)) => (a, b),
        (None, _) => return Err(TaggedError::MissingTag(THINKING_OPEN)),
        (_, None) => return Err(TaggedError::MissingTag(THINKING_CLOSE)),
    };
    if !(ao < ac && ac < to && to < tc) {
        return Err(TaggedError::MalformedNesting(
            "tags must appear as <answer></answer><thinking></thinking>",
        ));
    }
    let gap_is_blank = |from: usize, to: usize| -> Result<(), TaggedError> {
        let gap = &input[from..to];
        match gap.find(|c: char| !c.is_whitespace()) {
            Some(off) => Err(TaggedError::TrailingGarbage(from + off)),
            None => Ok(()),
        }
    };
    gap_is_blank(0, ao)?;
    gap_is_blank(ac + ANSWER_CLOSE.len(), to)?;
    gap_is_blank(tc + THINKING_CLOSE.len(), input.len())?;
    Ok(TaggedSample {
        answer: input[ao + ANSWER_OPEN.len()..ac].to_owned(),
        thinking: input[to + THINKING_OPEN.len()..tc].to_owned(),
    })
}

/// Canonical form of a well-formed tagged string: what `emit` would
/// produce for its payloads.
pub fn canonicalize(input: &str) -> Result<String, TaggedError> {
    parse(input)?.emit()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const LOVEL: &str = "<answer>LOVEL</answer><thinking>\"LOVEL\" could be a stylized version of \"LOVE\" or a misspelling of \"NOVEL\". The letters \"L\", \"O\", \"V\", \"E\", and \"L\" are clearly present.  Lookalike words such as \"LEVEL\" or \"LOVELY\" are considered but ruled out due to differences in letter count and semantic context.</thinking>";

    #[test]
    fn emits_lovel_sample() {
        let thinking = LOVEL
            .strip_prefix("<answer>LOVEL</answer><thinking>")
            .and_then(|s| s.strip_suffix("</thinking>"))
            .unwrap();
        assert_eq!(emit("LOVEL", thinking).unwrap(), LOVEL);
    }

    #[test]
    fn parses_lovel_sample() {
        let t = parse(LOVEL).unwrap();
        assert_eq!(t.answer, "LOVEL");
        assert!(t
            .thinking
            .starts_with("\"LOVEL\" could be a stylized version"));
        assert!(t.thinking.ends_with("semantic context."));
    }

    #[test]
    fn empty_payloads() {
        assert_eq!(
            emit("", "").unwrap(),
            "<answer></answer><thinking></thinking>"
        );
        let t = parse("<answer></answer><thinking></thinking>").unwrap();
        assert_eq!((t.answer.as_str(), t.thinking.as_str()), ("", ""));
    }

    #[test]
    fn rejects_reserved_literals_in_content() {
        assert_eq!(
            emit("a</answer>", "x"),
            Err(TaggedError::ReservedTagInContent)
        );
        assert_eq!(
            emit("a", "see <thinking>"),
            Err(TaggedError::ReservedTagInContent)
        );
        // Near misses are ordinary content.
        assert!(emit("<Answer>", "<thinking >").is_ok());
    }

    #[test]
    fn missing_pairs() {
        assert_eq!(
            parse("<answer>x</answer>"),
            Err(TaggedError::MissingTag(THINKING_OPEN))
        );
        assert_eq!(
            parse("<thinking>x</thinking>"),
            Err(TaggedError::MissingTag(ANSWER_OPEN))
        );
        assert_eq!(
            parse("<answer>x<thinking>y</thinking>"),
            Err(TaggedError::MissingTag(ANSWER_CLOSE))
        );
        assert_eq!(parse(""), Err(TaggedError::MissingTag(ANSWER_OPEN)));
    }

    #[test]
    fn malformed_nesting() {
        let cases = [
            "<thinking>y</thinking><answer>x</answer>",
            "<answer>x<thinking>y</answer></thinking>",
            "<answer>x</answer><thinking>y</thinking><answer>z</answer>",
            "</answer>x<answer><thinking>y</thinking>",
        ];
        for c in cases {
            assert!(
                matches!(parse(c), Err(TaggedError::MalformedNesting(_))),
                "{c}"
            );
        }
    }

    #[test]
    fn whitespace_and_garbage() {
        let t = parse("  \n<answer>a</answer>\n<thinking>b</thinking>\n").unwrap();
        assert_eq!((t.answer.as_str(), t.thinking.as_str()), ("a", "b"));
        assert_eq!(
            parse("<answer>a</answer>x<thinking>b</thinking>"),
            Err(TaggedError::TrailingGarbage(18))
        );
        assert!(matches!(
            parse("<answer>a</answer><thinking>b</thinking> ok"),
            Err(TaggedError::TrailingGarbage(_))
        ));
        assert!(matches!(
            parse("x<answer>a</answer><thinking>b</thinking>"),
            Err(TaggedError::TrailingGarbage(0))
        ));
    }

    #[test]
    fn payload_whitespace_is_preserved() {
        let t = parse("<answer> a </answer><thinking>\nline1\nline2\n</thinking>").unwrap();
        assert_eq!(t.answer, " a ");
        assert_eq!(t.thinking, "\nline1\nline2\n");
    }

    #[test]
    fn invalid_utf8() {
        assert_eq!(parse_bytes(&[0xff, 0xfe]), Err(TaggedError::InvalidUtf8));
    }

    fn tag_free() -> impl Strategy<Value = String> {
        any::<String>().prop_filter("tag-free", |s| !contains_reserved_tag(s))
    }

    proptest! {
        #[test]
        fn emit_parse_round_trip(a in tag_free(), t in tag_free()) {
            let s = emit(&a, &t).unwrap();
            let back = parse(&s).unwrap();
            prop_assert_eq!(back.answer, a);
            prop_assert_eq!(back.thinking, t);
        }

        #[test]
        fn parse_emit_is_canonical(a in tag_free(), t in tag_free(),
                                   lead in "[ \t\n]{0,3}", mid in "[ \t\n]{0,3}", tail in "[ \t\n]{0,3}") {
            let s = format!("{lead}<answer>{a}</answer>{mid}<thinking>{t}</thinking>{tail}");
            let canonical = format!("<answer>{a}</answer><thinking>{t}</thinking>");
            prop_assert_eq!(canonicalize(&s).unwrap(), canonical);
        }

        #[test]
        fn parse_is_total(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_bytes(&bytes);
        }

        #[test]
        fn parse_is_total_on_tag_soup(parts in prop::collection::vec(
            prop_oneof![
                Just("<answer>".to_string()), Just("</answer>".to_string()),
                Just("<thinking>".to_string()), Just("</thinking>".to_string()),
                "[a-z< />\n]{0,4}",
            ], 0..12)) {
            let s: String = parts.concat();
            if let Ok(t) = parse(&s) {
                prop_assert!(!contains_reserved_tag(&t.answer));
                prop_assert!(!contains_reserved_tag(&t.thinking));
            }
        }
    }
}
