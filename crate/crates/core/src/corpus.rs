//! Text-record ingestion and the city registry.
//!
//! Records arrive as newline-delimited JSON objects and are assigned to a
//! city by exact match of the normalized `place` label against registry
//! aliases. Parsing is shard-parallel; duplicate detection and counters are
//! merged sequentially so output order always follows input order.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
    #[serde(rename = "created_at")]
    pub timestamp: DateTime<Utc>,
    #[serde(rename = "place")]
    pub place_name: String,
    pub user_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusCovariates {
    pub pct_white: f64,
    pub pct_black: f64,
    pub pct_asian: f64,
    pub pct_hispanic_latino: f64,
    pub pct_foreign_born: f64,
    pub pct_female: f64,
    pub pct_age_18_64: f64,
    pub population_density: f64,
    pub median_income: f64,
}

impl CensusCovariates {
    /// Column names in registry order.
    pub const COLUMNS: [&'static str; 9] = [
        "pct_white",
        "pct_black",
        "pct_asian",
        "pct_hispanic_latino",
        "pct_foreign_born",
        "pct_female",
        "pct_age_18_64",
        "population_density",
        "median_income",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.pct_white,
            self.pct_black,
            self.pct_asian,
            self.pct_hispanic_latino,
            self.pct_foreign_born,
            self.pct_female,
            self.pct_age_18_64,
            self.population_density,
            self.median_income,
        ]
    }

    pub fn from_values(v: [f64; 9]) -> Self {
        CensusCovariates {
            pct_white: v[0],
            pct_black: v[1],
            pct_asian: v[2],
            pct_hispanic_latino: v[3],
            pct_foreign_born: v[4],
            pct_female: v[5],
            pct_age_18_64: v[6],
            population_density: v[7],
            median_income: v[8],
        }
    }

    /// First violated field, if any.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        for (name, v) in Self::COLUMNS.iter().zip(self.values()) {
            if !v.is_finite() {
                return Err((name, format!("{name} is not finite")));
            }
            if name.starts_with("pct_") {
                if !(0.0..=100.0).contains(&v) {
                    return Err((name, format!("{name}={v} outside [0,100]")));
                }
            } else if v <= 0.0 {
                return Err((name, format!("{name}={v} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityRecord {
    pub city_key: String,
    pub aliases: Vec<String>,
    pub hate_crime_count: u64,
    pub census: CensusCovariates,
    /// Optional (lat, lon) used only for map output.
    pub coordinates: Option<(f64, f64)>,
}

/// Trim, case-fold and collapse internal whitespace.
pub fn normalize_alias(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn is_state_qualified(normalized: &str) -> bool {
    match normalized.rsplit_once(',') {
        Some((city, state)) => !city.trim().is_empty() && !state.trim().is_empty(),
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line number in the CSV file (header is line 1).
    pub line: usize,
    pub field: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct CityRegistry {
    cities: Vec<CityRecord>,
    by_key: HashMap<String, usize>,
    by_alias: HashMap<String, usize>,
}

impl CityRegistry {
    /// Build a registry from already-validated records. Ambiguous or
    /// unqualified aliases are dropped and reported.
    pub fn from_records(records: Vec<CityRecord>) -> (Self, Vec<RowError>) {
        let mut errors = Vec::new();
        let rows: Vec<(usize, CityRecord)> = records.into_iter().enumerate().map(|(i, c)| (i + 2, c)).collect();
        let reg = Self::build(rows, &mut errors);
        (reg, errors)
    }

    fn build(rows: Vec<(usize, CityRecord)>, errors: &mut Vec<RowError>) -> Self {
        let mut owners: HashMap<String, Vec<usize>> = HashMap::new();
        let mut accepted: Vec<(usize, CityRecord)> = Vec::new();
        let mut keys = HashSet::new();
        for (line, city) in rows {
            if !keys.insert(city.city_key.clone()) {
                errors.push(RowError {
                    line,
                    field: "city_key".into(),
                    reason: format!("duplicate city_key {}", city.city_key),
                });
                continue;
            }
            let idx = accepted.len();
            for alias in &city.aliases {
                let norm = normalize_alias(alias);
                let owners = owners.entry(norm).or_default();
                if !owners.contains(&idx) {
                    owners.push(idx);
                }
            }
            accepted.push((line, city));
        }

        let mut by_alias = HashMap::new();
        let mut usable = vec![0usize; accepted.len()];
        let mut owner_list: Vec<(&String, &Vec<usize>)> = owners.iter().collect();
        owner_list.sort();
        for (alias, idxs) in owner_list {
            if idxs.len() > 1 {
                for &i in idxs {
                    errors.push(RowError {
                        line: accepted[i].0,
                        field: "aliases".into(),
                        reason: format!("ambiguous alias {alias:?} shared by {} cities", idxs.len()),
                    });
                }
                continue;
            }
            if !is_state_qualified(alias) {
                errors.push(RowError {
                    line: accepted[idxs[0]].0,
                    field: "aliases".into(),
                    reason: format!("alias {alias:?} is not state-qualified"),
                });
                continue;
            }
            by_alias.insert(alias.clone(), idxs[0]);
            usable[idxs[0]] += 1;
        }

        // Cities left without a usable alias cannot receive records.
        let mut cities = Vec::new();
        let mut remap = vec![usize::MAX; accepted.len()];
        for (i, (line, city)) in accepted.into_iter().enumerate() {
            if usable[i] == 0 {
                errors.push(RowError {
                    line,
                    field: "aliases".into(),
                    reason: format!("city {} has no usable alias", city.city_key),
                });
                continue;
            }
            remap[i] = cities.len();
            cities.push(city);
        }
        let by_alias = by_alias
            .into_iter()
            .filter(|(_, i)| remap[*i] != usize::MAX)
            .map(|(a, i)| (a, remap[i]))
            .collect();
        let by_key = cities.iter().enumerate().map(|(i, c)| (c.city_key.clone(), i)).collect();
        errors.sort_by_key(|e| e.line);
        CityRegistry { cities, by_key, by_alias }
    }

    pub fn cities(&self) -> &[CityRecord] {
        &self.cities
    }

    pub fn len(&self) -> usize {
        self.cities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cities.is_empty()
    }

    pub fn get(&self, city_key: &str) -> Option<&CityRecord> {
        self.by_key.get(city_key).map(|&i| &self.cities[i])
    }

    /// City key for a raw place label.
    pub fn match_place(&self, place: &str) -> Option<&str> {
        self.by_alias
            .get(&normalize_alias(place))
            .map(|&i| self.cities[i].city_key.as_str())
    }
}

pub const REGISTRY_COLUMNS: [&str; 12] = [
    "city_key",
    "aliases",
    "hate_crimes",
    "pct_white",
    "pct_black",
    "pct_asian",
    "pct_hispanic_latino",
    "pct_foreign_born",
    "pct_female",
    "pct_age_18_64",
    "population_density",
    "median_income",
];

#[derive(Debug, Clone)]
pub struct RegistryLoad {
    pub registry: CityRegistry,
    pub errors: Vec<RowError>,
}

/// Parse a registry CSV. A missing required column is a hard failure;
/// invalid rows are rejected and listed in [`RegistryLoad::errors`].
pub fn read_city_registry<R: Read>(reader: R) -> Result<RegistryLoad> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 12];
    for (slot, name) in idx.iter_mut().zip(REGISTRY_COLUMNS) {
        *slot = col(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let lat_col = col("lat");
    let lon_col = col("lon");

    let mut errors = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let reject = |errors: &mut Vec<RowError>, f: &str, reason: String| {
            errors.push(RowError { line, field: f.to_string(), reason });
        };

        let city_key = field(idx[0]).to_string();
        if city_key.is_empty() {
            reject(&mut errors, "city_key", "empty city_key".into());
            continue;
        }
        let aliases: Vec<String> = field(idx[1])
            .split('|')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(str::to_string)
            .collect();
        if aliases.is_empty() {
            reject(&mut errors, "aliases", "no aliases".into());
            continue;
        }
        let hate_crime_count = match field(idx[2]).parse::<u64>() {
            Ok(v) => v,
            Err(_) => {
                reject(&mut errors, "hate_crimes", format!("not a non-negative integer: {:?}", field(idx[2])));
                continue;
            }
        };
        let mut vals = [0.0f64; 9];
        let mut bad = None;
        for (k, v) in vals.iter_mut().enumerate() {
            let name = REGISTRY_COLUMNS[k + 3];
            match field(idx[k + 3]).parse::<f64>() {
                Ok(x) => *v = x,
                Err(_) => {
                    bad = Some((name, format!("{name} is not a number: {:?}", field(idx[k + 3]))));
                    break;
                }
            }
        }
        if let Some((name, reason)) = bad {
            reject(&mut errors, name, reason);
            continue;
        }
        let census = CensusCovariates::from_values(vals);
        if let Err((name, reason)) = census.validate() {
            reject(&mut errors, name, reason);
            continue;
        }
        let coordinates = match (lat_col.map(field), lon_col.map(field)) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => match (a.parse(), b.parse()) {
                (Ok(lat), Ok(lon)) => Some((lat, lon)),
                _ => {
                    reject(&mut errors, "lat", format!("bad coordinates {a:?},{b:?}"));
                    continue;
                }
            },
            _ => None,
        };
        rows.push((
            line,
            CityRecord {
                city_key,
                aliases,
                hate_crime_count,
                census,
                coordinates,
            },
        ));
    }
    let registry = CityRegistry::build(rows, &mut errors);
    Ok(RegistryLoad { registry, errors })
}

pub fn load_city_registry(path: &Path) -> Result<RegistryLoad> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_city_registry(file)
}

pub fn write_city_registry<W: Write>(writer: W, cities: &[CityRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let with_coords = cities.iter().any(|c| c.coordinates.is_some());
    let mut header: Vec<&str> = REGISTRY_COLUMNS.to_vec();
    if with_coords {
        header.extend(["lat", "lon"]);
    }
    w.write_record(&header)?;
    for c in cities {
        let mut row = vec![c.city_key.clone(), c.aliases.join("|"), c.hate_crime_count.to_string()];
        row.extend(c.census.values().iter().map(|v| v.to_string()));
        if with_coords {
            match c.coordinates {
                Some((lat, lon)) => row.extend([lat.to_string(), lon.to_string()]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A record assigned to a registry city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityTagged {
    #[serde(flatten)]
    pub record: TextRecord,
    pub city_key: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestConfig {
    /// Inclusive study window; records outside are skipped and counted.
    pub window: Option<(DateTime<Utc>, DateTime<Utc>)>,
    /// Lines per parallel shard.
    pub shard_lines: usize,
}

impl IngestConfig {
    fn shard(&self) -> usize {
        if self.shard_lines == 0 { 8192 } else { self.shard_lines }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line_number: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub total_lines: usize,
    pub matched: usize,
    pub unmatched: usize,
    pub out_of_window: usize,
    pub rejected: usize,
    pub rejects: Vec<Reject>,
}

impl IngestReport {
    /// `matched + unmatched + out_of_window + rejected == total_lines`.
    pub fn is_partition(&self) -> bool {
        self.matched + self.unmatched + self.out_of_window + self.rejected == self.total_lines
            && self.rejects.len() == self.rejected
    }

    pub fn write_rejects<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["line_number", "reason"])?;
        for r in &self.rejects {
            w.write_record([r.line_number.to_string(), r.reason.clone()])?;
        }
        w.flush()?;
        Ok(())
    }
}

enum LineOutcome {
    Parsed(TextRecord),
    Unmatched,
    OutOfWindow,
    Rejected(String),
}

fn parse_line(line: &str, registry: &CityRegistry, config: &IngestConfig) -> (LineOutcome, Option<String>) {
    if line.trim().is_empty() {
        return (LineOutcome::Rejected("blank line".into()), None);
    }
    let rec: TextRecord = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return (LineOutcome::Rejected(format!("malformed record: {e}")), None),
    };
    if rec.id.is_empty() {
        return (LineOutcome::Rejected("empty id".into()), None);
    }
    if rec.text.trim().is_empty() {
        return (LineOutcome::Rejected("empty text".into()), None);
    }
    if let Some((start, end)) = config.window {
        if rec.timestamp < start || rec.timestamp > end {
            return (LineOutcome::OutOfWindow, None);
        }
    }
    match registry.match_place(&rec.place_name) {
        Some(key) => {
            let key = key.to_string();
            (LineOutcome::Parsed(rec), Some(key))
        }
        None => (LineOutcome::Unmatched, None),
    }
}

/// Stream records from `reader`, calling `sink` for every matched record in
/// input order. Never aborts on bad lines; they land in the report.
pub fn ingest_stream<R, F>(
    reader: R,
    registry: &CityRegistry,
    config: &IngestConfig,
    mut sink: F,
) -> Result<IngestReport>
where
    R: BufRead,
    F: FnMut(CityTagged) -> Result<()>,
{
    let mut report = IngestReport::default();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let shard = config.shard();
    let batch_lines = shard * rayon::current_num_threads().max(1);
    let mut lines = reader.lines();
    let mut line_no = 0usize;

    loop {
        let mut batch = Vec::with_capacity(batch_lines);
        for line in lines.by_ref().take(batch_lines) {
            let line = line?;
            line_no += 1;
            batch.push((line_no, line));
        }
        if batch.is_empty() {
            break;
        }
        let parsed: Vec<(usize, LineOutcome, Option<String>)> = batch
            .par_chunks(shard)
            .flat_map_iter(|chunk| {
                chunk.iter().map(|(n, l)| {
                    let (o, k) = parse_line(l, registry, config);
                    (*n, o, k)
                })
            })
            .collect();

        for (n, outcome, key) in parsed {
            report.total_lines += 1;
            match outcome {
                LineOutcome::Parsed(record) => {
                    if !seen_ids.insert(record.id.clone()) {
                        report.rejected += 1;
                        report.rejects.push(Reject {
                            line_number: n,
                            reason: format!("duplicate id {}", record.id),
                        });
                        continue;
                    }
                    report.matched += 1;
                    sink(CityTagged {
                        record,
                        city_key: key.expect("matched record has a city"),
                    })?;
                }
                LineOutcome::Unmatched => report.unmatched += 1,
                LineOutcome::OutOfWindow => report.out_of_window += 1,
                LineOutcome::Rejected(reason) => {
                    report.rejected += 1;
                    report.rejects.push(Reject { line_number: n, reason });
                }
            }
        }
    }
    Ok(report)
}

/// Ingest a whole file into memory.
pub fn ingest_corpus(
    path: &Path,
    registry: &CityRegistry,
    config: &IngestConfig,
) -> Result<(Vec<CityTagged>, IngestReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let report = ingest_stream(std::io::BufReader::new(file), registry, config, |r| {
        out.push(r);
        Ok(())
    })?;
    Ok((out, report))
}

pub fn write_ndjson<W: Write, T: Serialize>(mut writer: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson<T: for<'de> Deserialize<'de>>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
