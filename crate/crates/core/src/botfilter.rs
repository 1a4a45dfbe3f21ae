//! Known-bot flagging from published account lists.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BotList {
    pub source: String,
    pub user_ids: BTreeSet<String>,
    pub period_note: String,
}

/// One id per line; blank lines and `#` comments are skipped.
pub fn read_bot_ids<R: BufRead>(reader: R) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for line in reader.lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() && !id.starts_with('#') {
            ids.insert(id.to_string());
        }
    }
    Ok(ids)
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    source: String,
    path: String,
    #[serde(default)]
    period_note: String,
}

/// Load every list named in a `source,path,period_note` manifest. Relative
/// paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<BotList>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(f);
    let mut lists = Vec::new();
    for row in rdr.deserialize::<ManifestRow>() {
        let row = row?;
        let list_path = base.join(&row.path);
        let lf = std::fs::File::open(&list_path).map_err(|e| Error::io(&list_path, e))?;
        lists.push(BotList {
            source: row.source,
            user_ids: read_bot_ids(BufReader::new(lf))?,
            period_note: row.period_note,
        });
    }
    Ok(lists)
}

/// Deduplicated union of all lists.
#[derive(Debug, Clone, Default)]
pub struct BotRegistry {
    sources: Vec<String>,
    ids: HashSet<String>,
}

impl BotRegistry {
    pub fn new(lists: &[BotList]) -> Self {
        BotRegistry {
            sources: lists.iter().map(|l| l.source.clone()).collect(),
            ids: lists.iter().flat_map(|l| l.user_ids.iter().cloned()).collect(),
        }
    }

    pub fn is_bot(&self, user_id: &str) -> bool {
        self.ids.contains(user_id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityBotSummary {
    pub city_key: String,
    pub discrimination_users: usize,
    pub bot_users: usize,
    /// Bot share of discrimination-posting users; 0 when there are none.
    pub bot_share: f64,
    pub flagged_records: usize,
}

pub fn write_bot_summary<W: std::io::Write>(writer: W, cities: &BTreeMap<String, CityBotSummary>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for c in cities.values() {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads what [`write_bot_summary`] wrote; `#` lines are skipped.
pub fn read_bot_summary<R: std::io::Read>(reader: R) -> Result<BTreeMap<String, CityBotSummary>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let mut out = BTreeMap::new();
    for row in rdr.deserialize::<CityBotSummary>() {
        let row = row?;
        out.insert(row.city_key.clone(), row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BotScan {
    pub flags: Vec<bool>,
    pub cities: BTreeMap<String, CityBotSummary>,
}

/// Flag records whose author is a listed bot. Records are
/// `(city_key, user_id, is_discrimination)`; nothing is dropped.
pub fn flag_bots<'a, I>(records: I, registry: &BotRegistry) -> BotScan
where
    I: IntoIterator<Item = (&'a str, &'a str, bool)>,
{
    let mut flags = Vec::new();
    let mut users: BTreeMap<&str, (BTreeSet<&str>, usize)> = BTreeMap::new();
    for (city, user, discrimination) in records {
        let bot = registry.is_bot(user);
        flags.push(bot);
        let entry = users.entry(city).or_default();
        if discrimination {
            entry.0.insert(user);
        }
        if bot {
            entry.1 += 1;
        }
    }
    let cities = users
        .into_iter()
        .map(|(city, (disc_users, flagged))| {
            let bot_users = disc_users.iter().filter(|u| registry.is_bot(u)).count();
            let n = disc_users.len();
            let summary = CityBotSummary {
                city_key: city.to_string(),
                discrimination_users: n,
                bot_users,
                bot_share: if n == 0 { 0.0 } else { bot_users as f64 / n as f64 },
                flagged_records: flagged,
            };
            (city.to_string(), summary)
        })
        .collect();
    BotScan { flags, cities }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(ids: &[&str]) -> BotList {
        BotList { source: "s".into(), user_ids: ids.iter().map(|s| s.to_string()).collect(), period_note: String::new() }
    }

    #[test]
    fn empty_lists_flag_nothing() {
        let recs = [("c1", "u1", true), ("c1", "u2", false), ("c2", "u3", true)];
        let scan = flag_bots(recs, &BotRegistry::new(&[]));
        assert!(scan.flags.iter().all(|f| !f));
        assert!(scan.cities.values().all(|c| c.bot_share == 0.0));
    }

    #[test]
    fn share_counts_users_not_records() {
        // 6 of 19 discrimination users are bots; bots post many times
        let mut recs = Vec::new();
        let users: Vec<String> = (0..19).map(|i| format!("u{i}")).collect();
        for (i, u) in users.iter().enumerate() {
            for _ in 0..(1 + i % 3) {
                recs.push(("dc", u.as_str(), true));
            }
        }
        let bots: Vec<&str> = users[..6].iter().map(String::as_str).collect();
        let scan = flag_bots(recs.iter().copied(), &BotRegistry::new(&[list(&bots)]));
        let dc = &scan.cities["dc"];
        assert_eq!((dc.discrimination_users, dc.bot_users), (19, 6));
        assert!((dc.bot_share - 6.0 / 19.0).abs() < 1e-15);
        assert_eq!(scan.flags.len(), recs.len());

        let mut buf = b"# header\n".to_vec();
        write_bot_summary(&mut buf, &scan.cities).unwrap();
        assert_eq!(read_bot_summary(buf.as_slice()).unwrap(), scan.cities);
    }

    #[test]
    fn list_file_parsing() {
        let ids = read_bot_ids("# header\n  a1 \n\na2\na1\n".as_bytes()).unwrap();
        assert_eq!(ids.into_iter().collect::<Vec<_>>(), vec!["a1", "a2"]);
    }

    #[test]
    fn manifest_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("one.txt"), "x\ny\n").unwrap();
        std::fs::write(dir.path().join("two.txt"), "y\nz\n").unwrap();
        std::fs::write(
            dir.path().join("manifest.csv"),
            "source,path,period_note\none,one.txt,2016\ntwo,two.txt,2017-2018\n",
        )
        .unwrap();
        let lists = load_manifest(&dir.path().join("manifest.csv")).unwrap();
        let reg = BotRegistry::new(&lists);
        assert_eq!(reg.len(), 3);
        assert_eq!(lists[1].period_note, "2017-2018");
    }

    fn records() -> impl Strategy<Value = Vec<(u8, u8, bool)>> {
        proptest::collection::vec((0u8..4, 0u8..15, any::<bool>()), 0..80)
    }

    proptest! {
        #[test]
        fn share_matches_naive_count(recs in records(), bots in proptest::collection::btree_set(0u8..15, 0..8)) {
            let owned: Vec<(String, String, bool)> = recs.iter().map(|&(c, u, d)| (format!("c{c}"), format!("u{u}"), d)).collect();
            let bot_ids: Vec<String> = bots.iter().map(|u| format!("u{u}")).collect();
            let bot_refs: Vec<&str> = bot_ids.iter().map(String::as_str).collect();
            let reg = BotRegistry::new(&[list(&bot_refs)]);
            let scan = flag_bots(owned.iter().map(|(c, u, d)| (c.as_str(), u.as_str(), *d)), &reg);
            for (city, s) in &scan.cities {
                let mut disc: Vec<&str> = owned.iter().filter(|r| &r.0 == city && r.2).map(|r| r.1.as_str()).collect();
                disc.sort();
                disc.dedup();
                let b = disc.iter().filter(|u| bot_refs.contains(u)).count();
                let expect = if disc.is_empty() { 0.0 } else { b as f64 / disc.len() as f64 };
                prop_assert_eq!(s.bot_share, expect);
                prop_assert!((0.0..=1.0).contains(&s.bot_share));
            }
        }

        #[test]
        fn adding_a_list_never_lowers_share(recs in records(), a in proptest::collection::btree_set(0u8..15, 0..6), b in proptest::collection::btree_set(0u8..15, 0..6)) {
            let owned: Vec<(String, String, bool)> = recs.iter().map(|&(c, u, d)| (format!("c{c}"), format!("u{u}"), d)).collect();
            let la: Vec<String> = a.iter().map(|u| format!("u{u}")).collect();
            let lb: Vec<String> = b.iter().map(|u| format!("u{u}")).collect();
            let la: Vec<&str> = la.iter().map(String::as_str).collect();
            let lb: Vec<&str> = lb.iter().map(String::as_str).collect();
            let one = flag_bots(owned.iter().map(|(c, u, d)| (c.as_str(), u.as_str(), *d)), &BotRegistry::new(&[list(&la)]));
            let two = flag_bots(owned.iter().map(|(c, u, d)| (c.as_str(), u.as_str(), *d)), &BotRegistry::new(&[list(&la), list(&lb)]));
            for (city, s) in &one.cities {
                prop_assert!(two.cities[city].bot_share >= s.bot_share);
            }
            let mut rev = owned.clone();
            rev.reverse();
            let back = flag_bots(rev.iter().map(|(c, u, d)| (c.as_str(), u.as_str(), *d)), &BotRegistry::new(&[list(&la)]));
            prop_assert_eq!(back.cities, one.cities);
        }
    }
}
