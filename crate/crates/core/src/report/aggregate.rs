use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::ClassifiedRecord;
use crate::botfilter::CityBotSummary;
use crate::corpus::{CensusCovariates, CityRegistry};
use crate::delineate::Delineation;
use crate::error::{Error, Result};
use crate::stats::DesignMatrix;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityAggregate {
    pub city_key: String,
    pub total_records: usize,
    pub discrimination_records: usize,
    pub targeted: usize,
    pub self_narration: usize,
    pub unique_discrimination_users: usize,
    pub discrimination_rate: f64,
    /// targeted / (targeted + self_narration); 0 without discrimination.
    pub targeted_proportion: f64,
    /// targeted / self_narration; `None` when there is no self-narration.
    pub targeted_ratio: Option<f64>,
    /// `None` when the city has no discrimination records.
    pub tweets_per_user: Option<f64>,
    pub bot_users: usize,
    pub bot_share: f64,
    pub hate_crime_count: u64,
    pub census: CensusCovariates,
}

/// Count every registry city, including those without records.
pub fn aggregate_cities(
    records: &[ClassifiedRecord],
    registry: &CityRegistry,
    bots: &BTreeMap<String, CityBotSummary>,
) -> Result<Vec<CityAggregate>> {
    #[derive(Default)]
    struct Acc<'a> {
        total: usize,
        disc: usize,
        targeted: usize,
        self_narration: usize,
        users: BTreeSet<&'a str>,
    }
    let mut acc: BTreeMap<&str, Acc> = registry.cities().iter().map(|c| (c.city_key.as_str(), Acc::default())).collect();
    for r in records {
        let a = acc
            .get_mut(r.city_key.as_str())
            .ok_or_else(|| Error::Invariant(format!("record {} has unknown city {}", r.record.id, r.city_key)))?;
        a.total += 1;
        if r.discrimination {
            a.disc += 1;
            a.users.insert(r.record.user_id.as_str());
            match r.delineation {
                Some(Delineation::Targeted) => a.targeted += 1,
                Some(Delineation::SelfNarration) => a.self_narration += 1,
                None => {
                    return Err(Error::Invariant(format!(
                        "discrimination record {} was not delineated",
                        r.record.id
                    )))
                }
            }
        }
    }
    let mut out = Vec::with_capacity(acc.len());
    for (key, a) in acc {
        let city = registry.get(key).expect("keys come from the registry");
        let bot = bots.get(key);
        if a.disc == 0 {
            log::debug!("city {key} has no discrimination records");
        }
        out.push(CityAggregate {
            city_key: key.to_string(),
            total_records: a.total,
            discrimination_records: a.disc,
            targeted: a.targeted,
            self_narration: a.self_narration,
            unique_discrimination_users: a.users.len(),
            discrimination_rate: if a.total == 0 { 0.0 } else { a.disc as f64 / a.total as f64 },
            targeted_proportion: if a.disc == 0 { 0.0 } else { a.targeted as f64 / a.disc as f64 },
            targeted_ratio: (a.self_narration > 0).then(|| a.targeted as f64 / a.self_narration as f64),
            tweets_per_user: (a.disc > 0).then(|| a.disc as f64 / a.users.len() as f64),
            bot_users: bot.map_or(0, |b| b.bot_users),
            bot_share: bot.map_or(0.0, |b| b.bot_share),
            hate_crime_count: city.hate_crime_count,
            census: city.census.clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GlobalCounts {
    pub total: usize,
    pub discrimination: usize,
    pub targeted: usize,
    pub self_narration: usize,
}

pub fn global_counts(records: &[ClassifiedRecord]) -> GlobalCounts {
    let mut g = GlobalCounts::default();
    for r in records {
        g.total += 1;
        if r.discrimination {
            g.discrimination += 1;
            match r.delineation {
                Some(Delineation::Targeted) => g.targeted += 1,
                Some(Delineation::SelfNarration) => g.self_narration += 1,
                None => {}
            }
        }
    }
    g
}

/// Per-city identities and the city-to-global partition.
pub fn check_identities(aggregates: &[CityAggregate], global: &GlobalCounts) -> Result<()> {
    let mut sum = GlobalCounts::default();
    for a in aggregates {
        if a.targeted + a.self_narration != a.discrimination_records {
            return Err(Error::Invariant(format!("{}: targeted + self_narration != discrimination", a.city_key)));
        }
        let rates = [a.discrimination_rate, a.targeted_proportion, a.bot_share];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Invariant(format!("{}: rate outside [0,1]", a.city_key)));
        }
        if a.tweets_per_user.is_some_and(|t| t < 1.0) {
            return Err(Error::Invariant(format!("{}: tweets per user below 1", a.city_key)));
        }
        sum.total += a.total_records;
        sum.discrimination += a.discrimination_records;
        sum.targeted += a.targeted;
        sum.self_narration += a.self_narration;
    }
    if &sum != global {
        return Err(Error::Invariant(format!("city counts {sum:?} do not sum to global {global:?}")));
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const AGGREGATE_COLUMNS: [&str; 13] = [
    "city_key",
    "total_records",
    "discrimination_records",
    "targeted",
    "self_narration",
    "unique_discrimination_users",
    "discrimination_rate",
    "targeted_proportion",
    "targeted_ratio",
    "tweets_per_user",
    "bot_users",
    "bot_share",
    "hate_crime_count",
];

pub fn write_aggregates<W: Write>(writer: W, aggregates: &[CityAggregate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = AGGREGATE_COLUMNS.to_vec();
    header.extend(CensusCovariates::COLUMNS);
    w.write_record(&header)?;
    for a in aggregates {
        let mut row = vec![
            a.city_key.clone(),
            a.total_records.to_string(),
            a.discrimination_records.to_string(),
            a.targeted.to_string(),
            a.self_narration.to_string(),
            a.unique_discrimination_users.to_string(),
            a.discrimination_rate.to_string(),
            a.targeted_proportion.to_string(),
            opt(a.targeted_ratio),
            opt(a.tweets_per_user),
            a.bot_users.to_string(),
            a.bot_share.to_string(),
            a.hate_crime_count.to_string(),
        ];
        row.extend(a.census.values().iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads what [`write_aggregates`] wrote; `#` lines are skipped.
pub fn read_aggregates<R: Read>(reader: R) -> Result<Vec<CityAggregate>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let cols: Vec<usize> = AGGREGATE_COLUMNS.iter().map(|c| idx(c)).collect::<Result<_>>()?;
    let census: Vec<usize> = CensusCovariates::COLUMNS.iter().map(|c| idx(c)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |col: &str| Error::invalid(format!("aggregates row {}: bad {col}", line + 1));
        let get = |i: usize| &rec[cols[i]];
        let int = |i: usize| get(i).parse::<usize>().map_err(|_| bad(AGGREGATE_COLUMNS[i]));
        let real = |i: usize| get(i).parse::<f64>().map_err(|_| bad(AGGREGATE_COLUMNS[i]));
        let maybe = |i: usize| -> Result<Option<f64>> {
            if get(i).is_empty() {
                Ok(None)
            } else {
                real(i).map(Some)
            }
        };
        let mut values = [0.0; 9];
        for (v, (&c, name)) in values.iter_mut().zip(census.iter().zip(CensusCovariates::COLUMNS)) {
            *v = rec[c].parse().map_err(|_| bad(name))?;
        }
        out.push(CityAggregate {
            city_key: get(0).to_string(),
            total_records: int(1)?,
            discrimination_records: int(2)?,
            targeted: int(3)?,
            self_narration: int(4)?,
            unique_discrimination_users: int(5)?,
            discrimination_rate: real(6)?,
            targeted_proportion: real(7)?,
            targeted_ratio: maybe(8)?,
            tweets_per_user: maybe(9)?,
            bot_users: int(10)?,
            bot_share: real(11)?,
            hate_crime_count: get(12).parse().map_err(|_| bad(AGGREGATE_COLUMNS[12]))?,
            census: CensusCovariates::from_values(values),
        });
    }
    Ok(out)
}

/// How the targeted/self-narration covariate enters the regression.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SocialCovariate {
    #[default]
    Proportion,
    Ratio,
}

/// Social-media covariate names, in design order, ahead of the census columns.
pub const SOCIAL_COLUMNS: [&str; 3] = ["pct_targeted", "pct_self_narration", "targeted_self_narration"];

/// Regression design: hate-crime counts on the social-media shares and all
/// census covariates, with an intercept. Cities in `exclude` are left out,
/// as are cities whose ratio is undefined when `Ratio` is selected.
pub fn city_design(aggregates: &[CityAggregate], covariate: SocialCovariate, exclude: &[String]) -> Result<DesignMatrix> {
    let mut names: Vec<String> = SOCIAL_COLUMNS.iter().map(|s| s.to_string()).collect();
    names.extend(CensusCovariates::COLUMNS.iter().map(|s| s.to_string()));
    let mut cols = vec![Vec::new(); names.len()];
    let mut y = Vec::new();
    for a in aggregates {
        if exclude.contains(&a.city_key) {
            continue;
        }
        let social = match covariate {
            SocialCovariate::Proportion => a.targeted_proportion,
            SocialCovariate::Ratio => match a.targeted_ratio {
                Some(r) => r,
                None => {
                    log::warn!("{}: targeted ratio undefined, city left out", a.city_key);
                    continue;
                }
            },
        };
        let total = a.total_records.max(1) as f64;
        let mut row = vec![100.0 * a.targeted as f64 / total, 100.0 * a.self_narration as f64 / total, social];
        row.extend(a.census.values());
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
        y.push(a.hate_crime_count);
    }
    DesignMatrix::new(names, cols, y, true)
}
