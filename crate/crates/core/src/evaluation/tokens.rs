use crate::model::{is_cjk_ideograph, Language};

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}'
}

/// Length of a rationale in tokens.
///
/// * Latin: each maximal run of alphanumerics/apostrophes is one token and
///   every other non-whitespace character is one token.
/// * CJK: every non-whitespace codepoint is one token.
/// * Mixed: CJK ideographs count one each and break runs; everything else
///   follows the Latin rule.
pub fn count_tokens(text: &str, language: Language) -> usize {
    let mut count = 0;
    let mut in_run = false;
    for c in text.chars() {
        if c.is_whitespace() {
            in_run = false;
            continue;
        }
        let single = match language {
            Language::Cjk => true,
            Language::Mixed => is_cjk_ideograph(c) || !is_word_char(c),
            Language::Latin => !is_word_char(c),
        };
        if single {
            count += 1;
            in_run = false;
        } else if !in_run {
            count += 1;
            in_run = true;
        }
    }
    count
}
