//! Labeled examples and the spatially balanced training-set builder.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::Datelike;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CityTagged;
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Discrimination,
    NoDiscrimination,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive { Label::Discrimination } else { Label::NoDiscrimination }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Discrimination
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Discrimination => "discrimination",
            Label::NoDiscrimination => "no_discrimination",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "discrimination" | "1" | "true" | "yes" => Ok(Label::Discrimination),
            "no_discrimination" | "0" | "false" | "no" => Ok(Label::NoDiscrimination),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}

/// Where a label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Seed,
    Crowd,
    Adjudicated,
    ActiveLearning { iteration: u32 },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Seed => f.write_str("seed"),
            Provenance::Crowd => f.write_str("crowd"),
            Provenance::Adjudicated => f.write_str("adjudicated"),
            Provenance::ActiveLearning { iteration } => write!(f, "active-learning:{iteration}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "seed" => Ok(Provenance::Seed),
            "crowd" => Ok(Provenance::Crowd),
            "adjudicated" => Ok(Provenance::Adjudicated),
            other => other
                .strip_prefix("active-learning:")
                .and_then(|i| i.parse().ok())
                .map(|iteration| Provenance::ActiveLearning { iteration })
                .ok_or_else(|| Error::invalid(format!("unknown provenance {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub confidence: f64,
    pub provenance: Provenance,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, positive: bool, provenance: Provenance) -> Self {
        LabeledExample {
            id: id.into(),
            text: text.into(),
            label: Label::from_bool(positive),
            confidence: 1.0,
            provenance,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.label.is_positive()
    }
}

#[derive(Debug, Deserialize)]
struct ExampleRow {
    #[serde(alias = "task_id")]
    id: String,
    text: String,
    label: String,
    confidence: Option<f64>,
    provenance: Option<String>,
}

/// Read labeled examples. Accepts both the training format
/// (`id,text,label,confidence,provenance`) and the annotation export
/// (`task_id,...`, extra columns ignored).
pub fn read_examples<R: Read>(reader: R) -> Result<Vec<LabeledExample>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<ExampleRow>() {
        let row = row?;
        out.push(LabeledExample {
            id: row.id,
            text: row.text,
            label: row.label.parse()?,
            confidence: row.confidence.unwrap_or(1.0),
            provenance: match row.provenance.as_deref() {
                Some(p) if !p.is_empty() => p.parse()?,
                _ => Provenance::Seed,
            },
        });
    }
    Ok(out)
}

pub fn write_examples<W: Write>(writer: W, examples: &[LabeledExample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "text", "label", "confidence", "provenance"])?;
    for e in examples {
        w.write_record([
            e.id.as_str(),
            e.text.as_str(),
            e.label.as_str(),
            &e.confidence.to_string(),
            &e.provenance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainsetConfig {
    /// Maximum keyword records kept per (city, year) cell.
    pub per_cell_cap: usize,
    /// Number of keyword-free records appended as negatives.
    pub negatives: usize,
    pub seed: u64,
}

impl Default for TrainsetConfig {
    fn default() -> Self {
        TrainsetConfig { per_cell_cap: 50, negatives: 1000, seed: 7 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainsetCandidates {
    /// Keyword-bearing records to send for labeling.
    pub to_label: Vec<CityTagged>,
    /// Keyword-free records, labeled negative by construction.
    pub negatives: Vec<LabeledExample>,
}

/// Select keyword-bearing records balanced across (city, year) cells and a
/// keyword-free negative sample drawn round-robin across the same cells.
pub fn build_candidates(records: &[CityTagged], lexicon: &Lexicon, config: &TrainsetConfig) -> TrainsetCandidates {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut with_kw: BTreeMap<(String, i32), Vec<&CityTagged>> = BTreeMap::new();
    let mut without: BTreeMap<(String, i32), Vec<&CityTagged>> = BTreeMap::new();
    for r in records {
        let cell = (r.city_key.clone(), r.record.timestamp.year());
        if lexicon.match_tokens(&tokenize(&r.record.text)).is_empty() {
            without.entry(cell).or_default().push(r);
        } else {
            with_kw.entry(cell).or_default().push(r);
        }
    }

    let mut to_label = Vec::new();
    for cell in with_kw.values_mut() {
        cell.shuffle(&mut rng);
        to_label.extend(cell.iter().take(config.per_cell_cap).map(|r| (*r).clone()));
    }

    for cell in without.values_mut() {
        cell.shuffle(&mut rng);
    }
    let mut negatives = Vec::new();
    let mut round = 0;
    while negatives.len() < config.negatives {
        let mut any = false;
        for cell in without.values() {
            if negatives.len() == config.negatives {
                break;
            }
            if let Some(r) = cell.get(round) {
                any = true;
                negatives.push(LabeledExample::new(r.record.id.clone(), r.record.text.clone(), false, Provenance::Seed));
            }
        }
        if !any {
            break;
        }
        round += 1;
    }
    TrainsetCandidates { to_label, negatives }
}
