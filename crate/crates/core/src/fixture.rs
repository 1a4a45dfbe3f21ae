//! Synthetic 100-city fixture: registry, corpus, training labels, lexicon,
//! bot lists and a ready-to-run pipeline config. Fully determined by the
//! seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde_json::json;

use crate::corpus::{write_city_registry, CensusCovariates, CityRecord};
use crate::error::{Error, Result};
use crate::trainset::{write_examples, LabeledExample, Provenance};

/// Lexicon stand-in shipped with the crate; same schema as a real list.
pub const STANDIN_LEXICON: &str = include_str!("../data/lexicon_standin.csv");

/// (city, state, lat, lon)
const CITIES: [(&str, &str, f64, f64); 100] = [
    ("Phoenix", "AZ", 33.45, -112.07),
    ("Boston", "MA", 42.36, -71.06),
    ("Columbus", "OH", 39.96, -83.00),
    ("Los Angeles", "CA", 34.05, -118.24),
    ("New York", "NY", 40.71, -74.01),
    ("Seattle", "WA", 47.61, -122.33),
    ("Kansas City", "MO", 39.10, -94.58),
    ("Woodbury", "NJ", 39.84, -75.15),
    ("Miami Beach", "FL", 25.79, -80.13),
    ("Chicago", "IL", 41.88, -87.63),
    ("Houston", "TX", 29.76, -95.37),
    ("Philadelphia", "PA", 39.95, -75.17),
    ("San Antonio", "TX", 29.42, -98.49),
    ("San Diego", "CA", 32.72, -117.16),
    ("Dallas", "TX", 32.78, -96.80),
    ("San Jose", "CA", 37.34, -121.89),
    ("Austin", "TX", 30.27, -97.74),
    ("Jacksonville", "FL", 30.33, -81.66),
    ("Fort Worth", "TX", 32.76, -97.33),
    ("Charlotte", "NC", 35.23, -80.84),
    ("San Francisco", "CA", 37.77, -122.42),
    ("Indianapolis", "IN", 39.77, -86.16),
    ("Denver", "CO", 39.74, -104.99),
    ("Washington", "DC", 38.91, -77.04),
    ("El Paso", "TX", 31.76, -106.49),
    ("Nashville", "TN", 36.16, -86.78),
    ("Detroit", "MI", 42.33, -83.05),
    ("Oklahoma City", "OK", 35.47, -97.52),
    ("Portland", "OR", 45.52, -122.68),
    ("Las Vegas", "NV", 36.17, -115.14),
    ("Memphis", "TN", 35.15, -90.05),
    ("Louisville", "KY", 38.25, -85.76),
    ("Baltimore", "MD", 39.29, -76.61),
    ("Milwaukee", "WI", 43.04, -87.91),
    ("Albuquerque", "NM", 35.08, -106.65),
    ("Tucson", "AZ", 32.22, -110.97),
    ("Fresno", "CA", 36.74, -119.79),
    ("Mesa", "AZ", 33.42, -111.83),
    ("Sacramento", "CA", 38.58, -121.49),
    ("Atlanta", "GA", 33.75, -84.39),
    ("Omaha", "NE", 41.26, -95.93),
    ("Colorado Springs", "CO", 38.83, -104.82),
    ("Raleigh", "NC", 35.78, -78.64),
    ("Long Beach", "CA", 33.77, -118.19),
    ("Virginia Beach", "VA", 36.85, -75.98),
    ("Miami", "FL", 25.76, -80.19),
    ("Oakland", "CA", 37.80, -122.27),
    ("Minneapolis", "MN", 44.98, -93.27),
    ("Tulsa", "OK", 36.15, -95.99),
    ("Bakersfield", "CA", 35.37, -119.02),
    ("Wichita", "KS", 37.69, -97.34),
    ("Arlington", "TX", 32.74, -97.11),
    ("Aurora", "CO", 39.73, -104.83),
    ("Tampa", "FL", 27.95, -82.46),
    ("New Orleans", "LA", 29.95, -90.07),
    ("Cleveland", "OH", 41.50, -81.69),
    ("Honolulu", "HI", 21.31, -157.86),
    ("Anaheim", "CA", 33.84, -117.91),
    ("Lexington", "KY", 38.04, -84.50),
    ("Stockton", "CA", 37.96, -121.29),
    ("Henderson", "NV", 36.04, -114.98),
    ("Saint Paul", "MN", 44.95, -93.09),
    ("Cincinnati", "OH", 39.10, -84.51),
    ("Pittsburgh", "PA", 40.44, -79.99),
    ("Greensboro", "NC", 36.07, -79.79),
    ("Anchorage", "AK", 61.22, -149.90),
    ("Plano", "TX", 33.02, -96.70),
    ("Lincoln", "NE", 40.81, -96.70),
    ("Orlando", "FL", 28.54, -81.38),
    ("Irvine", "CA", 33.68, -117.83),
    ("Newark", "NJ", 40.74, -74.17),
    ("Toledo", "OH", 41.65, -83.54),
    ("Durham", "NC", 35.99, -78.90),
    ("Chula Vista", "CA", 32.64, -117.08),
    ("Fort Wayne", "IN", 41.08, -85.14),
    ("Jersey City", "NJ", 40.73, -74.08),
    ("St. Petersburg", "FL", 27.77, -82.64),
    ("Laredo", "TX", 27.51, -99.51),
    ("Madison", "WI", 43.07, -89.40),
    ("Chandler", "AZ", 33.31, -111.84),
    ("Buffalo", "NY", 42.89, -78.88),
    ("Lubbock", "TX", 33.58, -101.86),
    ("Scottsdale", "AZ", 33.49, -111.93),
    ("Reno", "NV", 39.53, -119.81),
    ("Glendale", "AZ", 33.54, -112.19),
    ("Gilbert", "AZ", 33.35, -111.79),
    ("Winston-Salem", "NC", 36.10, -80.24),
    ("North Las Vegas", "NV", 36.20, -115.12),
    ("Norfolk", "VA", 36.85, -76.29),
    ("Chesapeake", "VA", 36.77, -76.29),
    ("Garland", "TX", 32.91, -96.64),
    ("Irving", "TX", 32.81, -96.95),
    ("Hialeah", "FL", 25.86, -80.28),
    ("Fremont", "CA", 37.55, -121.99),
    ("Boise", "ID", 43.62, -116.20),
    ("Richmond", "VA", 37.54, -77.44),
    ("Baton Rouge", "LA", 30.45, -91.19),
    ("Spokane", "WA", 47.66, -117.43),
    ("Des Moines", "IA", 41.59, -93.62),
    ("Neptune", "NJ", 40.20, -74.03),
];

const FILLER: [&str; 40] = [
    "the", "a", "today", "bus", "coffee", "traffic", "weather", "game", "team", "lunch", "friends", "downtown",
    "weekend", "store", "line", "phone", "music", "movie", "class", "school", "street", "park", "train", "dog",
    "morning", "new", "good", "long", "so", "just", "really", "again", "still", "place", "food", "car", "city",
    "news", "show", "time",
];

const KEYWORDS: [&str; 12] = [
    "white trash",
    "go back home",
    "illegal alien",
    "illegals",
    "anchor baby",
    "towelhead",
    "ching chong",
    "wetback",
    "beaner",
    "raghead",
    "speak english",
    "dirty immigrant",
];

/// Terms that co-occur with discrimination in the generated text.
const DISC_CATEGORY_TERMS: [&str; 18] = [
    "hate", "angry", "disgusting", "furious", "kill", "violence", "attack", "threat", "yell", "sad", "hurt",
    "disappointed", "shame", "money", "welfare", "job", "night", "happy",
];

const OTHER_CATEGORY_TERMS: [&str; 18] = [
    "happy", "love", "great", "fun", "work", "job", "boss", "party", "tonight", "dinner", "pay", "rent", "bar",
    "sad", "miss", "angry", "disappointed", "fight",
];

const SELF_TEMPLATES: [&str; 6] = [
    "a guy on the {f} yelled {k} at me and my friend",
    "i got called {k} at my job today",
    "someone told me {k} while i was with my kids",
    "my neighbor keeps calling us {k}",
    "i was just told {k} at the {f} and i am done",
    "we got {k} shouted at us on the {f}",
];

const TARGETED_TEMPLATES: [&str; 6] = [
    "they are all {k} and they should leave",
    "look at these {k} in the {f}",
    "{k} everywhere downtown, send them back",
    "he is such a {k} lol",
    "these people are {k} and it shows",
    "that {k} at the {f} needs to go",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub seed: u64,
    pub cities: usize,
    pub records_per_city: usize,
    pub training_examples: usize,
    pub positive_rate: f64,
    pub buckets: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            seed: 2024,
            cities: 100,
            records_per_city: 240,
            training_examples: 2000,
            positive_rate: 0.12,
            buckets: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSummary {
    pub config: PathBuf,
    pub cities: usize,
    pub corpus_lines: usize,
    pub training_examples: usize,
}

pub fn city_key(name: &str, state: &str) -> String {
    let mut k: String = name
        .to_lowercase()
        .chars()
        .filter_map(|c| match c {
            c if c.is_ascii_alphanumeric() => Some(c),
            ' ' | '-' => Some('-'),
            _ => None,
        })
        .collect();
    k.push('-');
    k.push_str(&state.to_lowercase());
    k
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| *FILLER.choose(rng).expect("non-empty")).collect::<Vec<_>>().join(" ")
}

fn fill(template: &str, rng: &mut ChaCha8Rng) -> String {
    let k = KEYWORDS.choose(rng).expect("non-empty");
    let f = FILLER.choose(rng).expect("non-empty");
    template.replace("{k}", k).replace("{f}", f)
}

/// One generated text; `self_share` is the chance a positive text is
/// first-person narration.
fn text(rng: &mut ChaCha8Rng, positive: bool, self_share: f64) -> String {
    let mut s = if positive {
        let t = if rng.random_bool(self_share) {
            SELF_TEMPLATES.choose(rng)
        } else {
            TARGETED_TEMPLATES.choose(rng)
        }
        .expect("non-empty");
        fill(t, rng)
    } else {
        let n = rng.random_range(4..10);
        let mut s = words(rng, n);
        if rng.random_bool(0.3) {
            s = format!("i {s}");
        }
        s
    };
    let pool: &[&str] = if positive { &DISC_CATEGORY_TERMS } else { &OTHER_CATEGORY_TERMS };
    for _ in 0..rng.random_range(0..3) {
        s.push(' ');
        s.push_str(pool.choose(rng).expect("non-empty"));
    }
    if rng.random_bool(0.4) {
        s.push(' ');
        let n = rng.random_range(1..4);
        s.push_str(&words(rng, n));
    }
    s
}

fn census(rng: &mut ChaCha8Rng) -> CensusCovariates {
    let white: f64 = rng.random_range(30.0..85.0);
    let black = rng.random_range(2.0..(95.0 - white).min(45.0));
    CensusCovariates {
        pct_white: round2(white),
        pct_black: round2(black),
        pct_asian: round2(rng.random_range(1.0..20.0)),
        pct_hispanic_latino: round2(rng.random_range(3.0..60.0)),
        pct_foreign_born: round2(rng.random_range(3.0..40.0)),
        pct_female: round2(rng.random_range(48.0..53.0)),
        pct_age_18_64: round2(rng.random_range(58.0..70.0)),
        population_density: round2(rng.random_range(800.0..12000.0)),
        median_income: (rng.random_range(35000.0..95000.0f64)).round(),
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Write the fixture into `dir` (created if needed).
pub fn generate_fixture(dir: &Path, spec: &FixtureSpec) -> Result<FixtureSummary> {
    if spec.cities == 0 || spec.cities > CITIES.len() {
        return Err(Error::Config(format!("fixture supports 1..={} cities", CITIES.len())));
    }
    std::fs::create_dir_all(dir.join("bots")).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };

    // city-level latent traits drive both the corpus and the crime counts
    struct Latent {
        rate: f64,
        self_share: f64,
    }
    let mut cities = Vec::new();
    let mut latents = Vec::new();
    for &(name, st, lat, lon) in &CITIES[..spec.cities] {
        let c = census(&mut rng);
        let rate = rng.random_range(0.03..0.15);
        let self_share = rng.random_range(0.1..0.7);
        let mu = (1.2
            + 2.0 * (1.0 - self_share)
            + 0.02 * c.pct_black
            + 0.0001 * c.population_density
            + rng.random_range(-0.3..0.3))
        .exp();
        let theta = 4.0;
        let lambda = Gamma::new(theta, mu / theta).expect("valid gamma").sample(&mut rng);
        let count = Poisson::new(lambda.max(1e-3)).expect("valid poisson").sample(&mut rng) as u64;
        cities.push(CityRecord {
            city_key: city_key(name, st),
            aliases: vec![format!("{name}, {st}")],
            hate_crime_count: count,
            census: c,
            coordinates: Some((lat, lon)),
        });
        latents.push(Latent { rate, self_share });
    }
    if let Some(p) = cities.iter_mut().find(|c| c.city_key == "phoenix-az") {
        p.hate_crime_count = 566;
    }
    // make counts distinct so quartile classes are tie-free
    let mut order: Vec<usize> = (0..cities.len()).collect();
    order.sort_by_key(|&i| (cities[i].hate_crime_count, cities[i].city_key.clone()));
    let mut last: Option<u64> = None;
    for i in order {
        let c = &mut cities[i].hate_crime_count;
        if let Some(l) = last {
            if *c <= l {
                *c = l + 1;
            }
        }
        last = Some(*c);
    }
    let mut registry = Vec::new();
    write_city_registry(&mut registry, &cities)?;
    write("cities.csv", &registry)?;

    // corpus
    let start = Utc.with_ymd_and_hms(2012, 1, 1, 0, 0, 0).single().expect("valid date");
    let span_secs = 5 * 365 * 24 * 3600;
    let mut corpus = String::new();
    let mut bot_users = Vec::new();
    let mut heavy_users = Vec::new();
    let mut n_lines = 0usize;
    let mut id = 0usize;
    for (ci, city) in cities.iter().enumerate() {
        let users: Vec<String> = (0..spec.records_per_city / 4).map(|u| format!("u{ci:03}x{u:03}")).collect();
        // a heavy poster per city, and a bot every few cities
        heavy_users.push(users[0].clone());
        if ci % 3 == 0 {
            bot_users.push(users[1].clone());
        }
        for r in 0..spec.records_per_city {
            let heavy = r % 9 == 0;
            let positive = heavy || rng.random_bool(latents[ci].rate);
            let user = if heavy { &users[0] } else { users.choose(&mut rng).expect("non-empty") };
            let t = text(&mut rng, positive, latents[ci].self_share);
            let at = start + Duration::seconds(rng.random_range(0..span_secs));
            let line = json!({
                "id": format!("r{id:07}"),
                "text": t,
                "created_at": at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                "place": city.aliases[0],
                "user_id": user,
            });
            writeln!(corpus, "{line}").expect("string write");
            id += 1;
            n_lines += 1;
        }
    }
    // lines ingest must set aside
    for k in 0..20 {
        let line = json!({
            "id": format!("x{k:04}"),
            "text": words(&mut rng, 5),
            "created_at": "2014-06-01T12:00:00Z",
            "place": "Nowhere, ZZ",
            "user_id": "nobody",
        });
        writeln!(corpus, "{line}").expect("string write");
        n_lines += 1;
    }
    corpus.push_str("{not json\n");
    writeln!(corpus, r#"{{"id":"r0000000","text":"duplicate id","created_at":"2014-01-01T00:00:00Z","place":"{}","user_id":"u"}}"#, cities[0].aliases[0]).expect("string write");
    n_lines += 2;
    write("corpus.ndjson", corpus.as_bytes())?;

    // labeled training data from the same generator, with a little label noise
    let mut examples = Vec::with_capacity(spec.training_examples);
    for i in 0..spec.training_examples {
        let positive = rng.random_bool(spec.positive_rate);
        let share = rng.random_range(0.1..0.7);
        let t = text(&mut rng, positive, share);
        let label = if rng.random_bool(0.01) { !positive } else { positive };
        examples.push(LabeledExample::new(format!("t{i:05}"), t, label, Provenance::Seed));
    }
    let mut buf = Vec::new();
    write_examples(&mut buf, &examples)?;
    write("training.csv", &buf)?;

    write("lexicon.csv", STANDIN_LEXICON.as_bytes())?;

    // two overlapping bot lists
    let half = bot_users.len() / 2;
    let list_a: String = bot_users[..=half.min(bot_users.len().saturating_sub(1))].iter().map(|u| format!("{u}\n")).collect();
    let list_b: String = bot_users[half..].iter().map(|u| format!("{u}\n")).collect();
    write("bots/list_a.txt", format!("# synthetic list a\n{list_a}").as_bytes())?;
    write("bots/list_b.txt", format!("# synthetic list b\n{list_b}").as_bytes())?;
    write(
        "bots/manifest.csv",
        b"source,path,period_note\nlist_a,list_a.txt,2012-2014\nlist_b,list_b.txt,2015-2016\n",
    )?;

    let config = format!(
        r#"# Synthetic fixture configuration
seed = {seed}
output_dir = "out"

[inputs]
corpus = "corpus.ndjson"
cities = "cities.csv"
lexicon = "lexicon.csv"
training = "training.csv"
bot_manifest = "bots/manifest.csv"

[classifier]
buckets = {buckets}
"#,
        seed = spec.seed,
        buckets = spec.buckets,
    );
    write("config.toml", config.as_bytes())?;
    log::info!("fixture: {} cities, {n_lines} corpus lines, {} heavy users", cities.len(), heavy_users.len());
    Ok(FixtureSummary {
        config: dir.join("config.toml"),
        cities: cities.len(),
        corpus_lines: n_lines,
        training_examples: examples.len(),
    })
}
