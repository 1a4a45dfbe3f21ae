use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use chrono::Datelike;
use serde::Serialize;

use super::ClassifiedRecord;
use crate::classifier::{ClassifierModel, FeatureSpec};
use crate::delineate::Delineation;
use crate::error::Result;
use crate::stats::ttest_two_sample;
use crate::text::tokenize;

/// Reverse map from hash bucket to its most frequent n-gram string.
#[derive(Debug, Clone, Default)]
pub struct FeatureVocabulary {
    names: HashMap<u32, String>,
}

impl FeatureVocabulary {
    pub fn build<I, S>(texts: I, spec: &FeatureSpec) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<u32, HashMap<String, usize>> = HashMap::new();
        for t in texts {
            for (gram, bucket) in spec.ngrams(&tokenize(t.as_ref())) {
                *counts.entry(bucket).or_default().entry(gram).or_default() += 1;
            }
        }
        let names = counts
            .into_iter()
            .map(|(b, grams)| {
                let best = grams
                    .into_iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                    .map(|(g, _)| g)
                    .expect("non-empty");
                (b, best)
            })
            .collect();
        FeatureVocabulary { names }
    }

    pub fn name(&self, bucket: u32) -> Option<&str> {
        self.names.get(&bucket).map(String::as_str)
    }

    /// Known name, or `#bucket<id>` with a warning.
    pub fn display(&self, bucket: u32) -> String {
        match self.name(bucket) {
            Some(n) => n.to_string(),
            None => {
                log::warn!("bucket {bucket} has no recorded n-gram");
                format!("#bucket{bucket}")
            }
        }
    }

    pub fn buckets(&self) -> impl Iterator<Item = u32> + '_ {
        self.names.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedFeature {
    pub rank: usize,
    pub bucket: u32,
    pub feature: String,
    pub contribution: f64,
}

fn rank_buckets(model: &ClassifierModel, buckets: impl IntoIterator<Item = u32>) -> Vec<(u32, f64)> {
    let mut scored: Vec<(u32, f64)> = buckets.into_iter().map(|b| (b, model.bucket_contribution(b))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

/// Most predictive features among all buckets in the vocabulary.
pub fn global_top_features(model: &ClassifierModel, vocab: &FeatureVocabulary, k: usize) -> Vec<RankedFeature> {
    rank_buckets(model, vocab.buckets())
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (bucket, contribution))| RankedFeature {
            rank: i + 1,
            bucket,
            feature: vocab.display(bucket),
            contribution,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityFeatureRow {
    pub city_key: String,
    /// `all`, `targeted` or `self_narration`.
    pub group: String,
    pub rank: usize,
    pub bucket: u32,
    pub feature: String,
    pub contribution: f64,
    /// Share of the group's discrimination records containing the feature.
    pub share: f64,
}

fn bucket_sets(model: &ClassifierModel, records: &[&ClassifiedRecord]) -> Vec<BTreeSet<u32>> {
    records
        .iter()
        .map(|r| model.spec().featurize(&r.record.text).ids.into_iter().collect())
        .collect()
}

fn ranked_present(model: &ClassifierModel, sets: &[BTreeSet<u32>], k: usize) -> Vec<(u32, f64, f64)> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for s in sets {
        for &b in s {
            *counts.entry(b).or_default() += 1;
        }
    }
    rank_buckets(model, counts.keys().copied())
        .into_iter()
        .take(k)
        .map(|(b, c)| (b, c, counts[&b] as f64 / sets.len() as f64))
        .collect()
}

/// Per city, the top `k` features occurring in its discrimination records,
/// overall and split by delineation.
pub fn top_features(
    model: &ClassifierModel,
    records: &[ClassifiedRecord],
    vocab: &FeatureVocabulary,
    k: usize,
) -> Vec<CityFeatureRow> {
    let mut by_city: BTreeMap<&str, Vec<&ClassifiedRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.discrimination) {
        by_city.entry(r.city_key.as_str()).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (city, recs) in by_city {
        let groups: [(&str, Vec<&ClassifiedRecord>); 3] = [
            ("all", recs.clone()),
            ("targeted", recs.iter().copied().filter(|r| r.delineation == Some(Delineation::Targeted)).collect()),
            (
                "self_narration",
                recs.iter().copied().filter(|r| r.delineation == Some(Delineation::SelfNarration)).collect(),
            ),
        ];
        for (group, members) in groups {
            if members.is_empty() {
                continue;
            }
            let sets = bucket_sets(model, &members);
            for (i, (bucket, contribution, share)) in ranked_present(model, &sets, k).into_iter().enumerate() {
                rows.push(CityFeatureRow {
                    city_key: city.to_string(),
                    group: group.to_string(),
                    rank: i + 1,
                    bucket,
                    feature: vocab.display(bucket),
                    contribution,
                    share,
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub city_key: String,
    pub year_a: i32,
    pub year_b: i32,
    pub t: Option<f64>,
    pub p: Option<f64>,
    /// Why no test was possible, if it was not.
    pub note: String,
}

/// For each city, compare the shares of its top `k` features between every
/// pair of consecutive calendar years with a two-sample t-test.
pub fn feature_stability(model: &ClassifierModel, records: &[ClassifiedRecord], k: usize) -> Vec<StabilityRow> {
    let mut by_city: BTreeMap<&str, Vec<&ClassifiedRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.discrimination) {
        by_city.entry(r.city_key.as_str()).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (city, recs) in by_city {
        let sets = bucket_sets(model, &recs);
        let top: Vec<u32> = ranked_present(model, &sets, k).into_iter().map(|t| t.0).collect();
        let mut by_year: BTreeMap<i32, Vec<&BTreeSet<u32>>> = BTreeMap::new();
        for (r, s) in recs.iter().zip(&sets) {
            by_year.entry(r.record.timestamp.year()).or_default().push(s);
        }
        let shares = |sets: &[&BTreeSet<u32>]| -> Vec<f64> {
            top.iter().map(|b| sets.iter().filter(|s| s.contains(b)).count() as f64 / sets.len() as f64).collect()
        };
        for (&ya, sa) in &by_year {
            let Some(sb) = by_year.get(&(ya + 1)) else { continue };
            let (t, p, note) = match ttest_two_sample(&shares(sa), &shares(sb)) {
                Ok(r) => (Some(r.t), Some(r.p_value), String::new()),
                Err(e) => (None, None, e.to_string()),
            };
            rows.push(StabilityRow { city_key: city.to_string(), year_a: ya, year_b: ya + 1, t, p, note });
        }
    }
    rows
}

pub fn write_city_features<W: Write>(writer: W, rows: &[CityFeatureRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stability<W: Write>(writer: W, rows: &[StabilityRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["city_key", "year_a", "year_b", "t", "p", "note"])?;
    for r in rows {
        w.write_record([
            r.city_key.clone(),
            r.year_a.to_string(),
            r.year_b.to_string(),
            r.t.map(|v| v.to_string()).unwrap_or_default(),
            r.p.map(|v| v.to_string()).unwrap_or_default(),
            r.note.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
