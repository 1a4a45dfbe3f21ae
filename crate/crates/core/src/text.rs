//! Tokenizer shared by keyword matching, featurization, pronoun counting and
//! category scoring.
//!
//! Rules, applied per whitespace-separated chunk after lowercasing:
//!
//! * `@mention` chunks become [`MENTION_TOKEN`];
//! * `#hashtag` chunks are kept whole (trailing punctuation removed);
//! * everything else is trimmed of leading/trailing non-alphanumeric
//!   characters and split at apostrophes, so `they're` yields `they`, `re`.
//!
//! Chunks that are empty after trimming produce no token.

/// Placeholder emitted for every `@mention`.
pub const MENTION_TOKEN: &str = "@user";

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '\u{2018}' | '\u{02BC}')
}

fn trim_punct(s: &str) -> &str {
    s.trim_matches(|c: char| !c.is_alphanumeric())
}

fn push_chunk(chunk: &str, out: &mut Vec<String>) {
    let lower = chunk.to_lowercase();
    if let Some(rest) = lower.strip_prefix('@') {
        if !trim_punct(rest).is_empty() {
            out.push(MENTION_TOKEN.to_string());
        }
        return;
    }
    if let Some(rest) = lower.strip_prefix('#') {
        let tag = rest.trim_end_matches(|c: char| !c.is_alphanumeric());
        if !tag.is_empty() {
            out.push(format!("#{tag}"));
        }
        return;
    }
    for piece in trim_punct(&lower).split(is_apostrophe) {
        let piece = trim_punct(piece);
        if !piece.is_empty() {
            out.push(piece.to_string());
        }
    }
}

/// Tokenize `text` into lowercase tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        push_chunk(chunk, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contractions_split_at_apostrophe() {
        assert_eq!(tokenize("They're here"), ["they", "re", "here"]);
        assert_eq!(tokenize("I\u{2019}m"), ["i", "m"]);
    }

    #[test]
    fn punctuation_trimmed_but_internal_kept() {
        assert_eq!(
            tokenize("because, a., so-called \"white\"!"),
            ["because", "a", "so-called", "white"]
        );
    }

    #[test]
    fn mentions_and_hashtags() {
        assert_eq!(
            tokenize("@Someone_1: #BlackPeople, @ ok"),
            [MENTION_TOKEN, "#blackpeople", "ok"]
        );
    }

    #[test]
    fn whitespace_runs_and_empty() {
        assert!(tokenize("   \t\n ").is_empty());
        assert_eq!(tokenize("a \t\n  b"), ["a", "b"]);
        assert!(tokenize("... !!").is_empty());
    }
}
