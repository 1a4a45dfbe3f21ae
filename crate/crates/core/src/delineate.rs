//! Targeted vs. self-narration split by first-person pronoun majority.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PronounCounts {
    pub first: usize,
    pub second: usize,
    pub third: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delineation {
    SelfNarration,
    Targeted,
}

impl Delineation {
    pub fn as_str(self) -> &'static str {
        match self {
            Delineation::SelfNarration => "self_narration",
            Delineation::Targeted => "targeted",
        }
    }
}

impl fmt::Display for Delineation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Delineation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "self_narration" => Ok(Delineation::SelfNarration),
            "targeted" => Ok(Delineation::Targeted),
            _ => Err(Error::invalid(format!("unknown delineation {s:?}"))),
        }
    }
}

/// Pronoun lists; overridable through the pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PronounLists {
    pub first: Vec<String>,
    pub second: Vec<String>,
    pub third: Vec<String>,
}

fn owned(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

impl Default for PronounLists {
    fn default() -> Self {
        PronounLists {
            first: owned(&["i", "me", "mine", "my", "we", "us", "our", "ours"]),
            second: owned(&["you", "your", "yours"]),
            third: owned(&[
                "he", "him", "his", "she", "her", "hers", "they", "them", "their", "theirs", "it", "its",
            ]),
        }
    }
}

/// Compiled pronoun matcher.
#[derive(Debug, Clone)]
pub struct Delineator {
    first: HashSet<String>,
    second: HashSet<String>,
    third: HashSet<String>,
}

impl Default for Delineator {
    fn default() -> Self {
        Self::new(&PronounLists::default())
    }
}

impl Delineator {
    pub fn new(lists: &PronounLists) -> Self {
        let set = |v: &[String]| v.iter().map(|w| w.to_lowercase()).collect();
        Delineator {
            first: set(&lists.first),
            second: set(&lists.second),
            third: set(&lists.third),
        }
    }

    pub fn count_tokens(&self, tokens: &[String]) -> PronounCounts {
        let mut c = PronounCounts::default();
        for t in tokens {
            if self.first.contains(t) {
                c.first += 1;
            } else if self.second.contains(t) {
                c.second += 1;
            } else if self.third.contains(t) {
                c.third += 1;
            }
        }
        c
    }

    pub fn count_pronouns(&self, text: &str) -> PronounCounts {
        self.count_tokens(&tokenize(text))
    }

    pub fn delineate(&self, text: &str) -> Delineation {
        rule(self.count_pronouns(text))
    }
}

/// Self-narration iff at least one first-person pronoun and a strict
/// majority over second- plus third-person pronouns.
pub fn rule(c: PronounCounts) -> Delineation {
    if c.first >= 1 && c.first > c.second + c.third {
        Delineation::SelfNarration
    } else {
        Delineation::Targeted
    }
}

/// Counts with the default pronoun lists.
pub fn count_pronouns(text: &str) -> PronounCounts {
    Delineator::default().count_pronouns(text)
}

/// Delineation with the default pronoun lists.
pub fn delineate(text: &str) -> Delineation {
    Delineator::default().delineate(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const QUOTED: &str = "I think so-called white trash turns to white supremacy because, a., they're victimized by minority criminals, and b., they're uppity whites";

    #[test]
    fn quoted_false_positive_is_targeted() {
        assert_eq!(count_pronouns(QUOTED), PronounCounts { first: 1, second: 0, third: 2 });
        assert_eq!(delineate(QUOTED), Delineation::Targeted);
    }

    #[test]
    fn simple_cases() {
        assert_eq!(count_pronouns(""), PronounCounts::default());
        assert_eq!(delineate("my landlord called me a slur"), Delineation::SelfNarration);
        // 2 vs 2 is not an absolute majority
        assert_eq!(delineate("we told them my story and they laughed"), Delineation::Targeted);
        assert_eq!(count_pronouns("I'm here"), PronounCounts { first: 1, second: 0, third: 0 });
        assert_eq!(delineate("no pronouns at all"), Delineation::Targeted);
    }

    #[test]
    fn lists_are_overridable() {
        let mut lists = PronounLists::default();
        lists.third.retain(|w| w != "it" && w != "its");
        let d = Delineator::new(&lists);
        assert_eq!(d.delineate("I hate it"), Delineation::SelfNarration);
        assert_eq!(delineate("I hate it"), Delineation::Targeted);
    }

    use proptest::prelude::*;

    const FIRST: [&str; 8] = ["i", "me", "mine", "my", "we", "us", "our", "ours"];
    const SECOND: [&str; 3] = ["you", "your", "yours"];
    const THIRD: [&str; 12] = ["he", "him", "his", "she", "her", "hers", "they", "them", "their", "theirs", "it", "its"];

    // straightforward scan: no sets, no shared tokenizer
    fn naive(text: &str) -> PronounCounts {
        let mut c = PronounCounts::default();
        for chunk in text.split_whitespace() {
            if chunk.starts_with('@') || chunk.starts_with('#') {
                continue;
            }
            let lower = chunk.to_lowercase();
            let trimmed = lower.trim_matches(|ch: char| !ch.is_alphanumeric());
            for piece in trimmed.split('\'') {
                let w = piece.trim_matches(|ch: char| !ch.is_alphanumeric());
                if FIRST.contains(&w) {
                    c.first += 1;
                } else if SECOND.contains(&w) {
                    c.second += 1;
                } else if THIRD.contains(&w) {
                    c.third += 1;
                }
            }
        }
        c
    }

    fn word() -> impl Strategy<Value = String> {
        let pool: Vec<&'static str> = FIRST
            .iter()
            .chain(SECOND.iter())
            .chain(THIRD.iter())
            .copied()
            .chain([
                "they're", "I'm", "you've", "it's", "we'll", "myself", "mines", "item", "usa", "hey", "the", "slur",
                "@me", "#we", "...", "so-called",
            ])
            .collect();
        (proptest::sample::select(pool), any::<bool>(), 0usize..4).prop_map(|(w, upper, wrap)| {
            let w = if upper { w.to_uppercase() } else { w.to_string() };
            match wrap {
                0 => w,
                1 => format!("{w},"),
                2 => format!("\"{w}\""),
                _ => format!("({w})!"),
            }
        })
    }

    fn soup() -> impl Strategy<Value = String> {
        proptest::collection::vec(word(), 0..25).prop_map(|ws| ws.join(" "))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn counts_match_naive_scan(text in soup()) {
            prop_assert_eq!(count_pronouns(&text), naive(&text));
        }

        #[test]
        fn rule_partitions(text in soup()) {
            let c = count_pronouns(&text);
            let d = delineate(&text);
            let selfish = c.first >= 1 && c.first > c.second + c.third;
            prop_assert_eq!(d == Delineation::SelfNarration, selfish);
            prop_assert_eq!(d == Delineation::Targeted, !selfish);
        }

        #[test]
        fn adding_first_person_never_flips_to_targeted(text in soup(), extra in proptest::sample::select(FIRST.to_vec())) {
            let before = delineate(&text);
            let after = delineate(&format!("{text} {extra}"));
            if before == Delineation::SelfNarration {
                prop_assert_eq!(after, Delineation::SelfNarration);
            }
        }
    }
}
