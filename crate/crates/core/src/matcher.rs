//! Token-level Aho-Corasick automaton.
//!
//! Patterns are sequences of tokens rather than bytes, so a pattern can only
//! match on token boundaries. Every occurrence of every pattern is reported,
//! including overlapping ones.

use std::collections::{HashMap, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhraseMatch {
    /// Index of the pattern in the order it was supplied to the builder.
    pub pattern: usize,
    /// Token offset of the first matched token.
    pub start: usize,
    /// Number of tokens in the pattern.
    pub len: usize,
}

#[derive(Debug, Clone, Default)]
struct Node {
    next: HashMap<u32, usize>,
    fail: usize,
    /// Patterns recognised at this state, including those inherited through
    /// the failure chain.
    out: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PhraseMatcher {
    vocab: HashMap<String, u32>,
    nodes: Vec<Node>,
    lens: Vec<usize>,
}

impl PhraseMatcher {
    /// Build an automaton. Empty patterns are accepted but never match.
    pub fn new<I, P, S>(patterns: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[S]>,
        S: AsRef<str>,
    {
        let mut vocab: HashMap<String, u32> = HashMap::new();
        let mut nodes = vec![Node::default()];
        let mut lens = Vec::new();

        for (pid, pattern) in patterns.into_iter().enumerate() {
            let pattern = pattern.as_ref();
            lens.push(pattern.len());
            if pattern.is_empty() {
                continue;
            }
            let mut state = 0;
            for tok in pattern {
                let next_id = vocab.len() as u32;
                let sym = *vocab.entry(tok.as_ref().to_string()).or_insert(next_id);
                state = match nodes[state].next.get(&sym) {
                    Some(&s) => s,
                    None => {
                        nodes.push(Node::default());
                        let s = nodes.len() - 1;
                        nodes[state].next.insert(sym, s);
                        s
                    }
                };
            }
            nodes[state].out.push(pid);
        }

        // Breadth-first failure links.
        let mut queue = VecDeque::new();
        let root_children: Vec<usize> = nodes[0].next.values().copied().collect();
        for child in root_children {
            nodes[child].fail = 0;
            queue.push_back(child);
        }
        while let Some(state) = queue.pop_front() {
            let edges: Vec<(u32, usize)> = nodes[state].next.iter().map(|(&k, &v)| (k, v)).collect();
            for (sym, child) in edges {
                let mut f = nodes[state].fail;
                let fail = loop {
                    if let Some(&t) = nodes[f].next.get(&sym) {
                        if t != child {
                            break t;
                        }
                    }
                    if f == 0 {
                        break 0;
                    }
                    f = nodes[f].fail;
                };
                nodes[child].fail = fail;
                let inherited = nodes[fail].out.clone();
                nodes[child].out.extend(inherited);
                queue.push_back(child);
            }
        }

        PhraseMatcher { vocab, nodes, lens }
    }

    pub fn pattern_count(&self) -> usize {
        self.lens.len()
    }

    /// All occurrences, ordered by start offset, then pattern length
    /// (longest first), then pattern index.
    pub fn find_all<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<PhraseMatch> {
        let mut found = Vec::new();
        let mut state = 0;
        for (i, tok) in tokens.iter().enumerate() {
            let Some(&sym) = self.vocab.get(tok.as_ref()) else {
                state = 0;
                continue;
            };
            loop {
                if let Some(&t) = self.nodes[state].next.get(&sym) {
                    state = t;
                    break;
                }
                if state == 0 {
                    break;
                }
                state = self.nodes[state].fail;
            }
            for &pid in &self.nodes[state].out {
                let len = self.lens[pid];
                found.push(PhraseMatch {
                    pattern: pid,
                    start: i + 1 - len,
                    len,
                });
            }
        }
        found.sort_by(|a, b| {
            a.start
                .cmp(&b.start)
                .then(b.len.cmp(&a.len))
                .then(a.pattern.cmp(&b.pattern))
        });
        found
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
    }

    fn naive(tokens: &[String], patterns: &[Vec<String>]) -> Vec<PhraseMatch> {
        let mut out = Vec::new();
        for start in 0..tokens.len() {
            for (pid, p) in patterns.iter().enumerate() {
                if !p.is_empty() && start + p.len() <= tokens.len() && tokens[start..start + p.len()] == p[..] {
                    out.push(PhraseMatch { pattern: pid, start, len: p.len() });
                }
            }
        }
        out.sort_by(|a, b| a.start.cmp(&b.start).then(b.len.cmp(&a.len)).then(a.pattern.cmp(&b.pattern)));
        out
    }

    #[test]
    fn overlapping_and_nested() {
        let pats = vec![toks("a b"), toks("b"), toks("a b c"), toks("b c")];
        let m = PhraseMatcher::new(&pats);
        let got = m.find_all(&toks("x a b c a b"));
        assert_eq!(got, naive(&toks("x a b c a b"), &pats));
        assert_eq!(got.len(), 6);
    }

    #[test]
    fn failure_link_recovers_suffix() {
        let pats = vec![toks("a a b"), toks("a b")];
        let m = PhraseMatcher::new(&pats);
        let text = toks("a a a b");
        assert_eq!(m.find_all(&text), naive(&text, &pats));
    }

    proptest! {
        #[test]
        fn agrees_with_naive_scan(
            text in proptest::collection::vec(0u8..4, 0..40),
            pats in proptest::collection::vec(proptest::collection::vec(0u8..4, 1..5), 1..8),
        ) {
            let text: Vec<String> = text.iter().map(|t| format!("t{t}")).collect();
            let pats: Vec<Vec<String>> = pats.iter().map(|p| p.iter().map(|t| format!("t{t}")).collect()).collect();
            let m = PhraseMatcher::new(&pats);
            prop_assert_eq!(m.find_all(&text), naive(&text, &pats));
        }
    }
}
