//! Text normalization and the engine-wide tokenizer.

use unicode_general_category::{get_general_category, GeneralCategory};

/// True for code points in the Unicode punctuation categories (P*).
pub fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Flattens a clinical text field onto one line.
///
/// Whitespace of any kind (newlines and tabs included) collapses to a single
/// space, a run of the same punctuation character collapses to one
/// occurrence, and the result is trimmed. Mixed punctuation runs such as
/// `?!` are kept as written.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut prev: Option<char> = None;
    for c in raw.chars() {
        let c = if c.is_whitespace() { ' ' } else { c };
        if let Some(p) = prev {
            if c == ' ' && p == ' ' {
                continue;
            }
            if c == p && is_punctuation(c) {
                continue;
            }
        }
        out.push(c);
        prev = Some(c);
    }
    out.trim_matches(' ').to_string()
}

/// Lowercases and splits on every non-alphanumeric character, dropping empty
/// tokens. No stemming, no stop-words. Used by BM25, the mock providers and
/// every text metric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Rough token count used for prompt budgeting: one token per four characters.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}
