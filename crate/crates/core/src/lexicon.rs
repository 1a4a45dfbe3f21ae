//! Hate-speech keyword lexicon: loading, filtering and phrase matching.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::PhraseMatcher;
use crate::text::tokenize;

/// Maximum phrase length in tokens.
pub const MAX_PHRASE_TOKENS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    /// Lowercase tokens of the phrase.
    pub phrase: Vec<String>,
    pub sightings: u64,
    pub is_nationality_or_ethnicity: bool,
    pub is_english: bool,
    pub excluded_colloquial: bool,
}

impl LexiconEntry {
    /// Tokenizes `phrase` with the shared tokenizer and checks the 1..=4 token bound.
    pub fn new(
        phrase: &str,
        sightings: u64,
        is_nationality_or_ethnicity: bool,
        is_english: bool,
        excluded_colloquial: bool,
    ) -> Result<Self> {
        let tokens = tokenize(phrase);
        if tokens.is_empty() || tokens.len() > MAX_PHRASE_TOKENS {
            return Err(Error::invalid(format!(
                "phrase {phrase:?} must have 1..={MAX_PHRASE_TOKENS} tokens, has {}",
                tokens.len()
            )));
        }
        Ok(LexiconEntry {
            phrase: tokens,
            sightings,
            is_nationality_or_ethnicity,
            is_english,
            excluded_colloquial,
        })
    }

    pub fn phrase_text(&self) -> String {
        self.phrase.join(" ")
    }
}

#[derive(Debug, Deserialize)]
struct LexiconRow {
    phrase: String,
    sightings: u64,
    nationality_ethnicity: bool,
    english: bool,
    excluded: bool,
}

/// Read lexicon CSV: `phrase,sightings,nationality_ethnicity,english,excluded`.
pub fn read_lexicon<R: Read>(reader: R) -> Result<Vec<LexiconEntry>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in ["phrase", "sightings", "nationality_ethnicity", "english", "excluded"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MissingColumn(col.to_string()));
        }
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<LexiconRow>() {
        let row = row?;
        out.push(LexiconEntry::new(
            &row.phrase,
            row.sightings,
            row.nationality_ethnicity,
            row.english,
            row.excluded,
        )?);
    }
    Ok(out)
}

pub fn load_lexicon(path: &Path) -> Result<Vec<LexiconEntry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_lexicon(file)
}

pub fn write_lexicon<W: std::io::Write>(writer: W, entries: &[LexiconEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["phrase", "sightings", "nationality_ethnicity", "english", "excluded"])?;
    for e in entries {
        w.write_record([
            e.phrase_text(),
            e.sightings.to_string(),
            e.is_nationality_or_ethnicity.to_string(),
            e.is_english.to_string(),
            e.excluded_colloquial.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Keep English, non-colloquial entries with strictly more than
/// `min_sightings` sightings; optionally require the nationality/ethnicity flag.
pub fn filter_lexicon(
    entries: &[LexiconEntry],
    min_sightings: u64,
    require_discrimination: bool,
) -> Vec<LexiconEntry> {
    let kept: Vec<LexiconEntry> = entries
        .iter()
        .filter(|e| {
            e.sightings > min_sightings
                && e.is_english
                && !e.excluded_colloquial
                && (!require_discrimination || e.is_nationality_or_ethnicity)
        })
        .cloned()
        .collect();
    if kept.is_empty() && !entries.is_empty() {
        log::warn!("lexicon filter removed all {} entries", entries.len());
    }
    kept
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeywordMatch {
    pub start: usize,
    pub phrase: String,
}

/// Immutable compiled lexicon used for matching. Duplicate phrases are
/// collapsed so each occurrence is reported once.
#[derive(Debug, Clone)]
pub struct Lexicon {
    phrases: Vec<Vec<String>>,
    matcher: PhraseMatcher,
}

impl Lexicon {
    pub fn new(entries: &[LexiconEntry]) -> Self {
        let unique: BTreeSet<&Vec<String>> = entries.iter().map(|e| &e.phrase).collect();
        let phrases: Vec<Vec<String>> = unique.into_iter().cloned().collect();
        let matcher = PhraseMatcher::new(&phrases);
        Lexicon { phrases, matcher }
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn match_tokens(&self, tokens: &[String]) -> Vec<KeywordMatch> {
        self.matcher
            .find_all(tokens)
            .into_iter()
            .map(|m| KeywordMatch {
                start: m.start,
                phrase: self.phrases[m.pattern].join(" "),
            })
            .collect()
    }

    pub fn contains_any(&self, text: &str) -> bool {
        !self.matcher.find_all(&tokenize(text)).is_empty()
    }
}

/// Every lexicon phrase occurring as a contiguous token run of `text`,
/// ordered by position then phrase length (longest first).
pub fn match_keywords(text: &str, lexicon: &Lexicon) -> Vec<String> {
    lexicon
        .match_tokens(&tokenize(text))
        .into_iter()
        .map(|m| m.phrase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn entry(phrase: &str, sightings: u64) -> LexiconEntry {
        LexiconEntry::new(phrase, sightings, true, true, false).unwrap()
    }

    #[test]
    fn sightings_threshold_is_strict() {
        let kept = filter_lexicon(&[entry("a", 10), entry("b", 11)], 10, true);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].phrase_text(), "b");
    }

    #[test]
    fn colloquial_and_non_english_excluded() {
        let mut oreo = entry("oreo", 5000);
        oreo.excluded_colloquial = true;
        let mut foreign = entry("xyz", 5000);
        foreign.is_english = false;
        let mut other = entry("abc", 5000);
        other.is_nationality_or_ethnicity = false;
        let all = [oreo, foreign, other];
        assert!(filter_lexicon(&all, 10, true).is_empty());
        assert_eq!(filter_lexicon(&all, 10, false).len(), 1);
        assert!(filter_lexicon(&[], 10, true).is_empty());
    }

    #[test]
    fn phrase_token_bounds() {
        assert!(LexiconEntry::new("  ", 1, true, true, false).is_err());
        assert!(LexiconEntry::new("a b c d e", 1, true, true, false).is_err());
    }

    #[test]
    fn case_folding_and_boundaries() {
        let lex = Lexicon::new(&[entry("white trash", 50)]);
        assert_eq!(match_keywords("you are WHITE TRASH", &lex), ["white trash"]);
        assert!(match_keywords("whitetrash", &lex).is_empty());
    }

    #[test]
    fn two_phrases_in_text_order() {
        let lex = Lexicon::new(&[entry("white trash", 50), entry("most racist person", 50)]);
        assert_eq!(
            match_keywords("the most racist person is white trash", &lex),
            ["most racist person", "white trash"]
        );
    }

    #[test]
    fn read_csv_requires_columns() {
        let csv = "phrase,sightings,english,excluded\nfoo,1,true,false\n";
        assert!(matches!(read_lexicon(csv.as_bytes()), Err(Error::MissingColumn(c)) if c == "nationality_ethnicity"));
        let csv = "phrase,sightings,nationality_ethnicity,english,excluded\nWhite Trash,40,true,true,false\n";
        let got = read_lexicon(csv.as_bytes()).unwrap();
        assert_eq!(got[0].phrase, ["white", "trash"]);
    }

    // Brute-force oracle: scan every token window against every phrase.
    fn oracle(text: &str, phrases: &[&str]) -> Vec<(usize, String)> {
        let toks = tokenize(text);
        let mut uniq: Vec<Vec<String>> = phrases.iter().map(|p| tokenize(p)).collect();
        uniq.sort();
        uniq.dedup();
        let mut out = Vec::new();
        for i in 0..toks.len() {
            for p in &uniq {
                if i + p.len() <= toks.len() && toks[i..i + p.len()] == p[..] {
                    out.push((i, p.len(), p.join(" ")));
                }
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        out.into_iter().map(|(i, _, p)| (i, p)).collect()
    }

    const WORDS: [&str; 5] = ["red", "Blue", "green", "tan", "gray"];

    fn words(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0..WORDS.len(), n)
    }

    fn render(ix: &[usize], sep: &str) -> String {
        ix.iter().map(|&i| WORDS[i]).collect::<Vec<_>>().join(sep)
    }

    proptest! {
        #[test]
        fn matches_brute_force(text in words(0..30), phrases in proptest::collection::vec(words(1..4), 1..6)) {
            let phrases: Vec<String> = phrases.iter().map(|p| render(p, " ")).collect();
            let refs: Vec<&str> = phrases.iter().map(String::as_str).collect();
            let lex = Lexicon::new(&refs.iter().map(|p| entry(p, 20)).collect::<Vec<_>>());
            let text = render(&text, " ");
            let got: Vec<(usize, String)> = lex.match_tokens(&tokenize(&text)).into_iter().map(|m| (m.start, m.phrase)).collect();
            let mut want = oracle(&text, &refs);
            // tie order among equal start/len is lexicographic in the lexicon
            want.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.split(' ').count().cmp(&a.1.split(' ').count())).then(a.1.cmp(&b.1)));
            prop_assert_eq!(got, want);
        }

        #[test]
        fn union_is_multiset_max(text in words(0..30),
                                 a in proptest::collection::vec(words(1..3), 1..4),
                                 b in proptest::collection::vec(words(1..3), 1..4)) {
            let text = render(&text, " ");
            let mk = |ps: &[Vec<usize>]| ps.iter().map(|p| entry(&render(p, " "), 20)).collect::<Vec<_>>();
            let (ea, eb) = (mk(&a), mk(&b));
            let both: Vec<LexiconEntry> = ea.iter().chain(eb.iter()).cloned().collect();
            let count = |v: Vec<KeywordMatch>| {
                let mut m: HashMap<KeywordMatch, usize> = HashMap::new();
                for k in v { *m.entry(k).or_default() += 1; }
                m
            };
            let toks = tokenize(&text);
            let ca = count(Lexicon::new(&ea).match_tokens(&toks));
            let cb = count(Lexicon::new(&eb).match_tokens(&toks));
            let cu = count(Lexicon::new(&both).match_tokens(&toks));
            let mut keys: Vec<&KeywordMatch> = ca.keys().chain(cb.keys()).collect();
            keys.sort();
            keys.dedup();
            prop_assert_eq!(keys.len(), cu.len());
            for k in keys {
                let want = ca.get(k).copied().unwrap_or(0).max(cb.get(k).copied().unwrap_or(0));
                prop_assert_eq!(cu.get(k).copied().unwrap_or(0), want);
            }
        }

        #[test]
        fn case_and_whitespace_invariant(text in words(0..20), phrases in proptest::collection::vec(words(1..3), 1..4), upper in any::<bool>()) {
            let lex = Lexicon::new(&phrases.iter().map(|p| entry(&render(p, " "), 20)).collect::<Vec<_>>());
            let plain = render(&text, " ");
            let mut noisy = render(&text, " \t \n ");
            if upper { noisy = noisy.to_uppercase(); }
            prop_assert_eq!(match_keywords(&plain, &lex), match_keywords(&noisy, &lex));
        }

        #[test]
        fn filter_monotone(sightings in proptest::collection::vec(0u64..30, 0..20), lo in 0u64..30, bump in 0u64..10) {
            let entries: Vec<LexiconEntry> = sightings.iter().enumerate().map(|(i, &s)| entry(&format!("w{i}"), s)).collect();
            let a = filter_lexicon(&entries, lo, true);
            let b = filter_lexicon(&entries, lo + bump, true);
            prop_assert!(b.len() <= a.len());
            prop_assert!(b.iter().all(|e| a.contains(e)));
        }
    }
}
