//! Lexicon-category scoring of records with group and user-level aggregation.
//!
//! A record's profile holds, per category, the share of its tokens covered
//! by at least one term of that category. Multi-word terms are matched as
//! phrases with the token automaton, so overlapping hits never push a value
//! above one.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matcher::PhraseMatcher;
use crate::stats;
use crate::text::tokenize;

/// Category names of the affect, socio-economic and culture preset.
pub const PRESET_CATEGORIES: [&str; 9] = [
    "positive_emotion",
    "negative_emotion",
    "disappointment",
    "sadness",
    "aggression",
    "violence",
    "work",
    "money",
    "night",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryLexicon {
    pub name: String,
    pub terms: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct CategorySet {
    categories: Vec<CategoryLexicon>,
    matcher: PhraseMatcher,
    /// Pattern index -> category index.
    owner: Vec<usize>,
}

impl CategorySet {
    pub fn new(categories: Vec<CategoryLexicon>) -> Result<Self> {
        let mut names = HashSet::new();
        let mut patterns = Vec::new();
        let mut owner = Vec::new();
        for (ci, c) in categories.iter().enumerate() {
            if !names.insert(c.name.clone()) {
                return Err(Error::invalid(format!("duplicate category {:?}", c.name)));
            }
            if c.terms.is_empty() || c.terms.iter().any(Vec::is_empty) {
                return Err(Error::invalid(format!("category {:?} has no usable terms", c.name)));
            }
            let mut seen = HashSet::new();
            for t in &c.terms {
                if seen.insert(t) {
                    patterns.push(t.clone());
                    owner.push(ci);
                }
            }
        }
        let matcher = PhraseMatcher::new(&patterns);
        Ok(CategorySet { categories, matcher, owner })
    }

    /// Parse `category:term1,term2,...` lines; blank and `#` lines skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut cats = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, terms) = line
                .split_once(':')
                .ok_or_else(|| Error::invalid(format!("line {}: expected `category:terms`", i + 1)))?;
            let terms: Vec<Vec<String>> = terms.split(',').map(tokenize).filter(|t| !t.is_empty()).collect();
            cats.push(CategoryLexicon { name: name.trim().to_string(), terms });
        }
        Self::new(cats)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }

    /// Restrict to the named categories, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let cats = names
            .iter()
            .map(|n| {
                self.categories
                    .iter()
                    .find(|c| c.name == *n)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("unknown category {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cats)
    }

    pub fn names(&self) -> Vec<&str> {
        self.categories.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn score_tokens(&self, tokens: &[String]) -> CategoryProfile {
        let k = self.categories.len();
        if tokens.is_empty() {
            return CategoryProfile { values: vec![0.0; k] };
        }
        let mut covered = vec![vec![false; tokens.len()]; k];
        for m in self.matcher.find_all(tokens) {
            let c = self.owner[m.pattern];
            covered[c][m.start..m.start + m.len].iter_mut().for_each(|x| *x = true);
        }
        let n = tokens.len() as f64;
        CategoryProfile {
            values: covered.iter().map(|c| c.iter().filter(|&&x| x).count() as f64 / n).collect(),
        }
    }

    pub fn score_record(&self, text: &str) -> CategoryProfile {
        self.score_tokens(&tokenize(text))
    }
}

/// Per-category normalized frequency, aligned with [`CategorySet::names`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryProfile {
    pub values: Vec<f64>,
}

/// Score a record against category lexicons.
pub fn score_record(text: &str, lexicons: &CategorySet) -> CategoryProfile {
    lexicons.score_record(text)
}

/// Mergeable running sum of profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileAccumulator {
    pub sums: Vec<f64>,
    pub count: usize,
}

impl ProfileAccumulator {
    pub fn new(categories: usize) -> Self {
        ProfileAccumulator { sums: vec![0.0; categories], count: 0 }
    }

    pub fn add(&mut self, p: &CategoryProfile) {
        for (s, v) in self.sums.iter_mut().zip(&p.values) {
            *s += v;
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &ProfileAccumulator) {
        for (s, v) in self.sums.iter_mut().zip(&other.sums) {
            *s += v;
        }
        self.count += other.count;
    }

    /// Mean profile; `None` when empty.
    pub fn mean(&self) -> Option<CategoryProfile> {
        (self.count > 0).then(|| CategoryProfile {
            values: self.sums.iter().map(|s| s / self.count as f64).collect(),
        })
    }
}

pub fn mean_profile<S: AsRef<str>>(texts: &[S], set: &CategorySet) -> Option<CategoryProfile> {
    let mut acc = ProfileAccumulator::new(set.len());
    for t in texts {
        acc.add(&set.score_record(t.as_ref()));
    }
    acc.mean()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryRatio {
    pub category: String,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `None` when the second group's mean is zero.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRatio {
    pub categories: Vec<CategoryRatio>,
    /// Mean over defined ratios.
    pub grand_mean: Option<f64>,
}

/// Ratio of mean normalized category frequency in `group_a` to `group_b`.
pub fn group_ratio<S: AsRef<str>>(group_a: &[S], group_b: &[S], set: &CategorySet) -> Result<GroupRatio> {
    let a = mean_profile(group_a, set).ok_or(Error::EmptyGroup("group_a"))?;
    let b = mean_profile(group_b, set).ok_or(Error::EmptyGroup("group_b"))?;
    let categories: Vec<CategoryRatio> = set
        .names()
        .iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(name, (&ma, &mb))| {
            if mb == 0.0 {
                log::debug!("category {name} has zero mean in the reference group");
            }
            CategoryRatio {
                category: name.to_string(),
                mean_a: ma,
                mean_b: mb,
                ratio: (mb > 0.0).then(|| ma / mb),
            }
        })
        .collect();
    let defined: Vec<f64> = categories.iter().filter_map(|c| c.ratio).collect();
    let grand_mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(GroupRatio { categories, grand_mean })
}

/// Upper bounds of user-volume buckets; the last bucket is open-ended.
/// `[1, 21]` yields `1`, `2..=21`, `>21`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VolumeBuckets {
    pub bounds: Vec<usize>,
}

impl Default for VolumeBuckets {
    fn default() -> Self {
        VolumeBuckets { bounds: vec![1, 21] }
    }
}

impl VolumeBuckets {
    pub fn bucket_of(&self, count: usize) -> usize {
        self.bounds.iter().position(|&b| count <= b).unwrap_or(self.bounds.len())
    }

    pub fn label(&self, i: usize) -> String {
        let lo = if i == 0 { 1 } else { self.bounds[i - 1] + 1 };
        match self.bounds.get(i) {
            Some(&hi) if hi == lo => format!("{lo}"),
            Some(&hi) => format!("{lo}-{hi}"),
            None => format!(">{}", self.bounds[i - 1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketProfile {
    pub bucket: String,
    pub users: usize,
    pub records: usize,
    pub mean: CategoryProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketCorrelation {
    pub a: String,
    pub b: String,
    /// `None` when either profile is constant.
    pub rho: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserBucketReport {
    pub buckets: Vec<BucketProfile>,
    pub correlations: Vec<BucketCorrelation>,
}

/// Mean record profile per user-volume bucket and pairwise Spearman
/// correlation between bucket profiles. Empty buckets are omitted.
pub fn user_profiles<S: AsRef<str>>(
    by_user: &BTreeMap<String, Vec<S>>,
    buckets: &VolumeBuckets,
    set: &CategorySet,
) -> UserBucketReport {
    let n_buckets = buckets.bounds.len() + 1;
    let mut accs = vec![ProfileAccumulator::new(set.len()); n_buckets];
    let mut users = vec![0usize; n_buckets];
    for texts in by_user.values() {
        if texts.is_empty() {
            continue;
        }
        let b = buckets.bucket_of(texts.len());
        users[b] += 1;
        for t in texts {
            accs[b].add(&set.score_record(t.as_ref()));
        }
    }
    let mut out = Vec::new();
    for (i, acc) in accs.iter().enumerate() {
        match acc.mean() {
            Some(mean) => out.push(BucketProfile {
                bucket: buckets.label(i),
                users: users[i],
                records: acc.count,
                mean,
            }),
            None => log::warn!("user bucket {} is empty and omitted", buckets.label(i)),
        }
    }
    let mut correlations = Vec::new();
    for i in 0..out.len() {
        for j in i + 1..out.len() {
            let r = stats::spearman(&out[i].mean.values, &out[j].mean.values).ok();
            correlations.push(BucketCorrelation {
                a: out[i].bucket.clone(),
                b: out[j].bucket.clone(),
                rho: r.map(|c| c.coefficient),
                p: r.map(|c| c.p_value),
            });
        }
    }
    UserBucketReport { buckets: out, correlations }
}

/// CSV with a `key` column followed by one column per category.
pub fn write_profiles<W: Write>(writer: W, set: &CategorySet, rows: &[(String, CategoryProfile)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["key".to_string()];
    header.extend(set.names().iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (key, p) in rows {
        let mut row = vec![key.clone()];
        row.extend(p.values.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(spec: &str) -> CategorySet {
        CategorySet::read(spec.as_bytes()).unwrap()
    }

    #[test]
    fn arithmetic() {
        let s = set("violence:kill,attack\nwork:job\n");
        let p = s.score_record("they will kill and attack us in one two three");
        assert_eq!(p.values, vec![0.2, 0.0]);
        assert_eq!(s.score_record("").values, vec![0.0, 0.0]);
    }

    #[test]
    fn phrase_terms_count_covered_tokens() {
        let s = set("night:night out,out\n");
        // "night out" covers 2 tokens, the extra "out" hit overlaps
        assert_eq!(s.score_record("a night out").values, vec![2.0 / 3.0]);
        let s = set("x:a,a a\n");
        assert_eq!(s.score_record("a a").values, vec![1.0]);
    }

    #[test]
    fn file_errors() {
        assert!(CategorySet::read("nocolon\n".as_bytes()).is_err());
        assert!(CategorySet::read("a:x\na:y\n".as_bytes()).is_err());
        assert!(CategorySet::read("a: , \n".as_bytes()).is_err());
    }

    #[test]
    fn identical_groups_have_unit_ratio() {
        let s = set("a:x\nb:y\n");
        let g = ["x y z", "x x w"];
        let r = group_ratio(&g, &g, &s).unwrap();
        assert!(r.categories.iter().all(|c| c.ratio == Some(1.0)));
        assert_eq!(r.grand_mean, Some(1.0));
    }

    #[test]
    fn zero_reference_mean_is_undefined() {
        let s = set("a:x\nb:y\n");
        let r = group_ratio(&["x y"], &["x z"], &s).unwrap();
        assert_eq!(r.categories[1].ratio, None);
        assert_eq!(r.grand_mean, Some(1.0));
        let empty: [&str; 0] = [];
        assert!(matches!(group_ratio(&empty, &["x"], &s), Err(Error::EmptyGroup(_))));
    }

    #[test]
    fn volume_buckets() {
        let b = VolumeBuckets::default();
        assert_eq!((b.bucket_of(1), b.bucket_of(2), b.bucket_of(21), b.bucket_of(22)), (0, 1, 1, 2));
        assert_eq!((b.label(0), b.label(1), b.label(2)), ("1".into(), "2-21".into(), ">21".into()));
    }

    #[test]
    fn identical_users_correlate_perfectly() {
        let s = set("a:x\nb:y\nc:z\n");
        let text = "x y y z z z w";
        let mut by_user: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        by_user.insert("one".into(), vec![text]);
        by_user.insert("few".into(), vec![text; 5]);
        by_user.insert("many".into(), vec![text; 30]);
        let rep = user_profiles(&by_user, &VolumeBuckets::default(), &s);
        assert_eq!(rep.buckets.len(), 3);
        assert_eq!(rep.correlations.len(), 3);
        assert!(rep.correlations.iter().all(|c| c.rho == Some(1.0)));
    }

    #[test]
    fn empty_bucket_omitted() {
        let s = set("a:x\nb:y\n");
        let mut by_user: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        by_user.insert("u".into(), vec!["x y"]);
        let rep = user_profiles(&by_user, &VolumeBuckets::default(), &s);
        assert_eq!(rep.buckets.len(), 1);
        assert!(rep.correlations.is_empty());
    }

    const VOCAB: [&str; 6] = ["x", "y", "z", "w", "v", "u"];

    fn texts() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(
            proptest::collection::vec(0..VOCAB.len(), 0..20).prop_map(|ix| ix.iter().map(|&i| VOCAB[i]).collect::<Vec<_>>().join(" ")),
            1..8,
        )
    }

    proptest! {
        #[test]
        fn doubling_text_preserves_profile(t in proptest::collection::vec(0..VOCAB.len(), 0..20)) {
            let s = set("a:x,y\nb:z\nc:u\n");
            let text = t.iter().map(|&i| VOCAB[i]).collect::<Vec<_>>().join(" ");
            let doubled = format!("{text} {text}");
            let p1 = s.score_record(&text);
            let p2 = s.score_record(&doubled);
            for (a, b) in p1.values.iter().zip(&p2.values) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }

        #[test]
        fn ratio_symmetry(a in texts(), b in texts()) {
            let s = set("a:x\nb:y,z\nc:w v\n");
            let ab = group_ratio(&a, &b, &s).unwrap();
            let ba = group_ratio(&b, &a, &s).unwrap();
            for (x, y) in ab.categories.iter().zip(&ba.categories) {
                if let (Some(r1), Some(r2)) = (x.ratio, y.ratio) {
                    prop_assert!((r1 * r2 - 1.0).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn accumulators_are_linear(a in texts(), b in texts()) {
            let s = set("a:x\nb:y,z\n");
            let mut left = ProfileAccumulator::new(2);
            a.iter().for_each(|t| left.add(&s.score_record(t)));
            let mut right = ProfileAccumulator::new(2);
            b.iter().for_each(|t| right.add(&s.score_record(t)));
            left.merge(&right);
            let all: Vec<String> = a.iter().chain(&b).cloned().collect();
            let direct = mean_profile(&all, &s).unwrap();
            for (x, y) in left.mean().unwrap().values.iter().zip(&direct.values) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
