//! Stage orchestration. Every stage reads its inputs from artifacts in the
//! output directory and writes its own, so any suffix of the stage list can
//! be rerun on its own.
//!
//! Text artifacts start with a line
//! `# discrim-pipeline v<version> config=<hash> stage=<stage>`; JSON
//! artifacts carry the same string in a top-level `header` member. The hash
//! covers the configuration (minus the output directory) and the bytes of
//! every input file, so resuming against changed inputs is refused.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use chrono::{DateTime, Utc};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::botfilter::{self, BotRegistry};
use crate::classifier::{self, ClassifierConfig, ClassifierModel};
use crate::corpus::{self, CityRegistry, CityTagged, IngestConfig};
use crate::delineate::{Delineator, PronounCounts, PronounLists};
use crate::error::{Error, Result};
use crate::lexical::{self, CategorySet, VolumeBuckets, PRESET_CATEGORIES};
use crate::lexicon::{self, Lexicon};
use crate::report::{self, ClassifiedRecord, FeatureVocabulary, SocialCovariate};
use crate::stats::{self, DesignMatrix};
use crate::trainset::{self, LabeledExample};

pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Category lexicons used when the config names no file.
pub const BUNDLED_CATEGORIES: &str = include_str!("../data/categories.txt");

/// Cities left out of the second regression variant by default.
pub const DEFAULT_OUTLIER_CITIES: [&str; 7] = [
    "phoenix-az",
    "boston-ma",
    "columbus-oh",
    "los-angeles-ca",
    "new-york-ny",
    "seattle-wa",
    "kansas-city-mo",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    /// NDJSON records.
    pub corpus: PathBuf,
    /// City registry CSV.
    pub cities: PathBuf,
    /// Keyword lexicon CSV.
    pub lexicon: PathBuf,
    /// Labeled training examples CSV.
    pub training: PathBuf,
    /// `source,path,period_note` manifest of bot lists.
    #[serde(default)]
    pub bot_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub window_start: Option<DateTime<Utc>>,
    pub window_end: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconSection {
    pub min_sightings: u64,
    pub require_discrimination: bool,
}

impl Default for LexiconSection {
    fn default() -> Self {
        LexiconSection { min_sightings: 10, require_discrimination: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub eval_folds: usize,
    /// Only keyword-bearing records may be classified as discrimination.
    pub prefilter: bool,
}

impl Default for ClassifySection {
    fn default() -> Self {
        ClassifySection { eval_folds: 10, prefilter: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexicalSection {
    /// Category file; the bundled preset file when absent.
    pub categories: Option<PathBuf>,
    /// Categories to score, in output order.
    pub preset: Vec<String>,
    /// Upper bounds of the user-volume buckets.
    pub user_buckets: Vec<usize>,
}

impl Default for LexicalSection {
    fn default() -> Self {
        LexicalSection {
            categories: None,
            preset: PRESET_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            user_buckets: VolumeBuckets::default().bounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSection {
    pub exclude_cities: Vec<String>,
    pub social_covariate: SocialCovariate,
}

impl Default for RegressionSection {
    fn default() -> Self {
        RegressionSection {
            exclude_cities: DEFAULT_OUTLIER_CITIES.iter().map(|s| s.to_string()).collect(),
            social_covariate: SocialCovariate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub top_k: usize,
    pub city_top_k: usize,
    /// Cities with the most discrimination records to report on.
    pub top_cities: usize,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection { top_k: 20, city_top_k: 10, top_cities: 21 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveSection {
    /// Share of the pool taken on each side of the threshold.
    pub fraction: f64,
    pub epsilon: f64,
    pub window: usize,
    pub max_iterations: u32,
}

impl Default for ActiveSection {
    fn default() -> Self {
        let d = crate::active::ActiveConfig::default();
        ActiveSection { fraction: d.fraction, epsilon: d.epsilon, window: d.window, max_iterations: d.max_iterations }
    }
}

/// Declarative pipeline configuration, usually read from TOML. Relative
/// paths are relative to the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Overrides `classifier.seed` when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub inputs: Inputs,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default)]
    pub lexicon: LexiconSection,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub classify: ClassifySection,
    #[serde(default)]
    pub pronouns: PronounLists,
    #[serde(default)]
    pub lexical: LexicalSection,
    #[serde(default)]
    pub regression: RegressionSection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub active: ActiveSection,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let (Some(s), Some(e)) = (self.ingest.window_start, self.ingest.window_end) {
            if s > e {
                return bad("ingest window starts after it ends".into());
            }
        }
        if self.classify.eval_folds < 2 {
            return bad("classify.eval_folds must be at least 2".into());
        }
        if self.lexical.preset.is_empty() {
            return bad("lexical.preset names no categories".into());
        }
        if self.lexical.user_buckets.windows(2).any(|w| w[0] >= w[1]) || self.lexical.user_buckets.first() == Some(&0) {
            return bad("lexical.user_buckets must be positive and increasing".into());
        }
        if !(self.active.fraction > 0.0 && self.active.fraction <= 0.5) {
            return bad("active.fraction must be in (0, 0.5]".into());
        }
        self.classifier_config().feature_spec().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Directory relative paths resolve against.
    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: &Path) {
        self.base_dir = dir.to_path_buf();
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        let mut c = self.classifier.clone();
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c
    }

    fn ingest_config(&self) -> IngestConfig {
        let window = match (self.ingest.window_start, self.ingest.window_end) {
            (None, None) => None,
            (s, e) => Some((s.unwrap_or(DateTime::<Utc>::MIN_UTC), e.unwrap_or(DateTime::<Utc>::MAX_UTC))),
        };
        IngestConfig { window, shard_lines: 0 }
    }

    /// Input files in hashing order.
    fn input_files(&self) -> Vec<(&'static str, PathBuf)> {
        let mut v = vec![
            ("corpus", self.resolve(&self.inputs.corpus)),
            ("cities", self.resolve(&self.inputs.cities)),
            ("lexicon", self.resolve(&self.inputs.lexicon)),
            ("training", self.resolve(&self.inputs.training)),
        ];
        if let Some(m) = &self.inputs.bot_manifest {
            v.push(("bot_manifest", self.resolve(m)));
        }
        if let Some(c) = &self.lexical.categories {
            v.push(("categories", self.resolve(c)));
        }
        v
    }

    /// Hex digest of the configuration and all input bytes.
    pub fn config_hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let mut h = Sha256::new();
        h.update(PIPELINE_VERSION.as_bytes());
        h.update(serde_json::to_vec(&serde_json::to_value(&canonical)?)?);
        for (name, path) in self.input_files() {
            h.update(name.as_bytes());
            let mut f = File::open(&path).map_err(|e| Error::Config(format!("{name} input {}: {e}", path.display())))?;
            let mut buf = vec![0u8; 1 << 16];
            loop {
                let n = f.read(&mut buf).map_err(|e| Error::io(&path, e))?;
                if n == 0 {
                    break;
                }
                h.update(&buf[..n]);
            }
        }
        if let Some(m) = &self.inputs.bot_manifest {
            for list in botfilter::load_manifest(&self.resolve(m))? {
                h.update(list.source.as_bytes());
                for id in &list.user_ids {
                    h.update(id.as_bytes());
                    h.update(b"\n");
                }
            }
        }
        Ok(hex::encode(&h.finalize()[..8]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Train,
    Classify,
    Delineate,
    Lexical,
    Botscan,
    Aggregate,
    Regress,
    Map,
    Features,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Train,
        Stage::Classify,
        Stage::Delineate,
        Stage::Lexical,
        Stage::Botscan,
        Stage::Aggregate,
        Stage::Regress,
        Stage::Map,
        Stage::Features,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Classify => "classify",
            Stage::Delineate => "delineate",
            Stage::Lexical => "lexical",
            Stage::Botscan => "botscan",
            Stage::Aggregate => "aggregate",
            Stage::Regress => "regress",
            Stage::Map => "map",
            Stage::Features => "features",
        }
    }

    /// Files the stage writes into the output directory.
    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &["records.ndjson", "ingest_report.json", "rejects.csv"],
            Stage::Train => &["model.bin", "eval.json"],
            Stage::Classify => &["lexicon_filtered.csv", "classified.ndjson"],
            Stage::Delineate => &["delineated.ndjson"],
            Stage::Lexical => &[
                "lexical_ratios.csv",
                "lexical_users.csv",
                "lexical_cities.csv",
                "lexical_summary.json",
            ],
            Stage::Botscan => &["scanned.ndjson", "bot_summary.csv"],
            Stage::Aggregate => &["aggregates.csv", "global_counts.json"],
            Stage::Regress => &[
                "fit_full.csv",
                "fit_stepwise.csv",
                "trace_stepwise.csv",
                "fit_full_excl.csv",
                "fit_stepwise_excl.csv",
                "trace_stepwise_excl.csv",
                "fit_lexical.csv",
                "fit_lexical_stepwise.csv",
                "trace_lexical_stepwise.csv",
            ],
            Stage::Map => &["map.geojson"],
            Stage::Features => &["top_features.csv", "city_features.csv", "feature_stability.csv"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// Which stages to run, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageRange {
    pub from: Stage,
    pub to: Stage,
}

impl Default for StageRange {
    fn default() -> Self {
        StageRange { from: Stage::Ingest, to: Stage::Features }
    }
}

impl StageRange {
    pub fn only(stage: Stage) -> Self {
        StageRange { from: stage, to: stage }
    }

    pub fn starting_at(stage: Stage) -> Self {
        StageRange { from: stage, ..Self::default() }
    }

    pub fn stages(&self) -> impl Iterator<Item = Stage> + '_ {
        Stage::ALL.into_iter().filter(|s| *s >= self.from && *s <= self.to)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub config_hash: String,
    pub stages: Vec<Stage>,
}

/// Output directory plus the header every artifact carries.
pub struct Workspace {
    dir: PathBuf,
    hash: String,
}

const HEADER_PREFIX: &str = "# discrim-pipeline";

impl Workspace {
    pub fn new(dir: PathBuf, hash: String) -> Self {
        Workspace { dir, hash }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn header(&self, stage: Stage) -> String {
        format!("{HEADER_PREFIX} v{PIPELINE_VERSION} config={} stage={stage}", self.hash)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Write `name` via a temporary file, header line first.
    pub fn write_text<F>(&self, stage: Stage, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let header = self.header(stage);
        self.write_raw(name, |w| {
            writeln!(w, "{header}")?;
            body(w)
        })
    }

    /// JSON object with the header as its first member.
    pub fn write_json(&self, stage: Stage, name: &str, value: Value) -> Result<()> {
        let mut obj = serde_json::Map::new();
        obj.insert("header".into(), Value::String(self.header(stage)));
        match value {
            Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("data".into(), other);
            }
        }
        self.write_raw(name, |w| {
            serde_json::to_writer_pretty(&mut *w, &Value::Object(obj))?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    fn write_raw<F>(&self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(f);
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        drop(w);
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Open a text artifact, checking its header belongs to this config.
    pub fn open_text(&self, name: &str) -> Result<BufReader<File>> {
        let path = self.path(name);
        let f = File::open(&path).map_err(|_| {
            Error::Config(format!("artifact {name} is missing; run the stage that produces it first"))
        })?;
        let mut r = BufReader::new(f);
        let mut first = String::new();
        r.read_line(&mut first).map_err(|e| Error::io(&path, e))?;
        self.check_header(name, first.trim_end())?;
        Ok(r)
    }

    fn check_header(&self, name: &str, line: &str) -> Result<()> {
        if !line.starts_with(HEADER_PREFIX) {
            return Err(Error::Config(format!("artifact {name} has no pipeline header")));
        }
        let hash = line.split_whitespace().find_map(|t| t.strip_prefix("config="));
        if hash != Some(self.hash.as_str()) {
            return Err(Error::Config(format!(
                "artifact {name} was produced under config {}; current config is {}",
                hash.unwrap_or("?"),
                self.hash
            )));
        }
        Ok(())
    }

    pub fn read_records<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<Vec<T>> {
        corpus::read_ndjson(self.open_text(name)?)
    }

    pub fn write_records<T: Serialize>(&self, stage: Stage, name: &str, items: &[T]) -> Result<()> {
        self.write_text(stage, name, |w| corpus::write_ndjson(w, items))
    }

    pub fn load_model(&self) -> Result<ClassifierModel> {
        ClassifierModel::read_from(self.open_text("model.bin")?)
    }
}

/// Pipeline inputs shared by several stages, loaded lazily.
struct Loaded<'a> {
    cfg: &'a PipelineConfig,
    registry: Option<CityRegistry>,
}

impl<'a> Loaded<'a> {
    fn registry(&mut self) -> Result<&CityRegistry> {
        if self.registry.is_none() {
            let load = corpus::load_city_registry(&self.cfg.resolve(&self.cfg.inputs.cities))?;
            for e in &load.errors {
                log::warn!("city registry line {}: {} ({})", e.line, e.reason, e.field);
            }
            if load.registry.is_empty() {
                return Err(Error::Config("city registry has no valid rows".into()));
            }
            self.registry = Some(load.registry);
        }
        Ok(self.registry.as_ref().expect("just loaded"))
    }

    fn training(&self) -> Result<Vec<LabeledExample>> {
        let path = self.cfg.resolve(&self.cfg.inputs.training);
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        trainset::read_examples(f)
    }

    fn lexicon(&self) -> Result<Vec<lexicon::LexiconEntry>> {
        let all = lexicon::load_lexicon(&self.cfg.resolve(&self.cfg.inputs.lexicon))?;
        Ok(lexicon::filter_lexicon(&all, self.cfg.lexicon.min_sightings, self.cfg.lexicon.require_discrimination))
    }

    fn categories(&self) -> Result<CategorySet> {
        let set = match &self.cfg.lexical.categories {
            Some(p) => CategorySet::load(&self.cfg.resolve(p))?,
            None => CategorySet::read(BUNDLED_CATEGORIES.as_bytes())?,
        };
        let names: Vec<&str> = self.cfg.lexical.preset.iter().map(String::as_str).collect();
        set.select(&names).map_err(|e| Error::Config(e.to_string()))
    }

    fn bots(&self) -> Result<BotRegistry> {
        match &self.cfg.inputs.bot_manifest {
            Some(m) => Ok(BotRegistry::new(&botfilter::load_manifest(&self.cfg.resolve(m))?)),
            None => {
                log::warn!("no bot manifest configured; no records will be flagged");
                Ok(BotRegistry::default())
            }
        }
    }
}

/// Run the stages in `range`. Earlier stages' artifacts must exist and match
/// the current config hash.
pub fn run_pipeline(cfg: &PipelineConfig, range: StageRange) -> Result<RunSummary> {
    if range.from > range.to {
        return Err(Error::Config(format!("stage {} comes after {}", range.from, range.to)));
    }
    let hash = cfg.config_hash()?;
    let dir = cfg.output_path();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ws = Workspace::new(dir.clone(), hash.clone());
    let mut inputs = Loaded { cfg, registry: None };
    let mut done = Vec::new();
    for stage in range.stages() {
        let t0 = Instant::now();
        log::info!("stage {stage} starting");
        run_stage(stage, &ws, &mut inputs).map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Stage { stage: stage.name().to_string(), source: Box::new(other) },
        })?;
        log::info!("stage {stage} finished in {:.2?}", t0.elapsed());
        done.push(stage);
    }
    Ok(RunSummary { output_dir: dir, config_hash: hash, stages: done })
}

fn run_stage(stage: Stage, ws: &Workspace, inputs: &mut Loaded) -> Result<()> {
    match stage {
        Stage::Ingest => ingest_stage(ws, inputs),
        Stage::Train => train_stage(ws, inputs),
        Stage::Classify => classify_stage(ws, inputs),
        Stage::Delineate => delineate_stage(ws, inputs),
        Stage::Lexical => lexical_stage(ws, inputs),
        Stage::Botscan => botscan_stage(ws, inputs),
        Stage::Aggregate => aggregate_stage(ws, inputs),
        Stage::Regress => regress_stage(ws, inputs),
        Stage::Map => map_stage(ws, inputs),
        Stage::Features => features_stage(ws, inputs),
    }
}

fn ingest_stage(ws: &Workspace, inputs: &mut Loaded) -> Result<()> {
    let cfg = inputs.cfg;
    let corpus_path = cfg.resolve(&cfg.inputs.corpus);
    let (records, report) = corpus::ingest_corpus(&corpus_path, inputs.registry()?, &cfg.ingest_config())?;
    if !report.is_partition() {
        return Err(Error::Invariant("ingest counters do not partition the input".into()));
    }
    log::info!(
        "ingest: {} lines, {} matched, {} unmatched, {} out of window, {} rejected",
        report.total_lines,
        report.matched,
        report.unmatched,
        report.out_of_window,
        report.rejected
    );
    ws.write_records(Stage::Ingest, "records.ndjson", &records)?;
    ws.write_text(Stage::Ingest, "rejects.csv", |w| report.write_rejects(w))?;
    ws.write_json(
        Stage::Ingest,
        "ingest_report.json",
        json!({
            "total_lines": report.total_lines,
            "matched": report.matched,
            "unmatched": report.unmatched,
            "out_of_window": report.out_of_window,
            "rejected": report.rejected,
        }),
    )
}

fn train_stage(ws: &Workspace, inputs: &mut Loaded) -> Result<()> {
    let cfg = inputs.cfg;
    let examples = inputs.training()?;
    let ccfg = cfg.classifier_config();
    let eval = classifier::kfold_evaluate(&examples, cfg.classify.eval_folds, &ccfg)?;
    log::info!("train: {}-fold mean F1 {:.4}, AUC {:.4}", eval.k, eval.mean_f1, eval.mean_auc);
    let model = classifier::train(&examples, &ccfg)?;
    ws.write_text(Stage::Train, "model.bin", |w| model.write_to(w))?;
    ws.write_json(Stage::Train, "eval.json", serde_json::to_value(&eval)?)
}

fn classify_stage(ws: &Workspace, inputs: &mut Loaded) -> Result<()> {
    let cfg = inputs.cfg;
    let entries = inputs.lexicon()?;
    ws.write_text(Stage::Classify, "lexicon_filtered.csv", |w| lexicon::write_lexicon(w, &entries))?;
    let lex = Lexicon::new(&entries);
    let model = ws.load_model()?;
    let records: Vec<CityTagged> = ws.read_records("records.ndjson")?;
    let prefilter = cfg.classify.prefilter;
    let classified: Vec<ClassifiedRecord> = records
        .into_par_iter()
        .map(|r| {
            let keywords = lexicon::match_keywords(&r.record.text, &lex);
            let score = model.predict(&r.record.text);
            let discrimination = score >= model.threshold && (!prefilter || !keywords.is_empty());
            ClassifiedRecord {
                record: r.record,
                city_key: r.city_key,
                score,
                discrimination,
                keywords,
                delineation: None,
                is_bot: None,
            }
        })
        .collect();
    log::info!(
        "classify: {} of {} records classified as discrimination",
        classified.iter().filter(|r| r.discrimination).count(),
        classified.len()
    );
    ws.write_records(Stage::Classify, "classified.ndjson", &classified)
}

fn delineate_stage(ws: &Workspace, inputs: &mut Loaded) -> Result<()> {
    let d = Delineator::new(&inputs.cfg.pronouns);
    let mut records: Vec<ClassifiedRecord> = ws.read_records("classified.ndjson")?;
    records.par_iter_mut().for_each(|r| {
        r.delineation = r.discrimination.then(|| d.delineate(&r.record.text));
    });
    ws.write_records(Stage::Delineate, "delineated.ndjson", &records)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn lexical_stage(ws: &Workspace, inputs: &mut Loaded) -> Result<()> {
    let cfg = inputs.cfg;
    let set = inputs.categories()?;
    let records: Vec<ClassifiedRecord> = ws.read_records("delineated.ndjson")?;
    let disc: Vec<&str> = records.iter().filter(|r| r.discrimination).map(|r| r.record.text.as_str()).collect();
    let other: Vec<&str> = records.iter().filter(|r| !r.discrimination).map(|r| r.record.text.as_str()).collect();

    let ratio = lexical::group_ratio(&disc, &other, &set)?;
    let mut rows = ratio.categories.clone();
    rows.sort_by(|a, b| match (a.ratio, b.ratio) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.category.cmp(&b.category)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.category.cmp(&b.category),
    });
    ws.write_text(Stage::Lexical, "lexical_ratios.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["category", "mean_discrimination", "mean_other", "ratio"])?;
        for r in &rows {
            c.write_record([r.category.clone(), r.mean_a.to_string(), r.mean_b.to_string(), opt_cell(r.ratio)])?;
        }
        c.flush()?;
        Ok(())
    })?;
    let mean_a: Vec<f64> = ratio.categories.iter().map(|c| c.mean_a).collect();
    let mean_b: Vec<f64> = ratio.categories.iter().map(|c| c.mean_b).collect();
    let profile_corr = stats::pearson(&mean_a, &mean_b).ok();

    let mut by_user: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.discrimination) {
        by_user.entry(r.record.user_id.clone()).or_default().push(&r.record.text);
    }
    let buckets = VolumeBuckets { bounds: cfg.lexical.user_buckets.clone() };
    let users = lexical::user_profiles(&by_user, &buckets, &set);
    let user_rows: Vec<(String, lexical::CategoryProfile)> =
        users.buckets.iter().map(|b| (b.bucket.clone(), b.mean.clone())).collect();
    ws.write_text(Stage::Lexical, "lexical_users.csv", |w| lexical::write_profiles(w, &set, &user_rows))?;

    let registry = inputs.registry()?;
    let mut per_city: BTreeMap<&str, lexical::ProfileAccumulator> =
        registry.cities().iter().map(|c| (c.city_key.as_str(), lexical::ProfileAccumulator::new(set.len()))).collect();
    for r in records.iter().filter(|r| r.discrimination) {
        if let Some(acc) = per_city.get_mut(r.city_key.as_str()) {
            acc.add(&set.score_record(&r.record.text));
        }
    }
    let city_rows: Vec<(String, lexical::CategoryProfile)> = per_city
        .into_iter()
        .map(|(k, acc)| {
            let p = acc.mean().unwrap_or(lexical::CategoryProfile { values: vec![0.0; set.len()] });
            (k.to_string(), p)
        })
        .collect();
    ws.write_text(Stage::Lexical, "lexical_cities.csv", |w| lexical::write_profiles(w, &set, &city_rows))?;

    ws.write_json(
        Stage::Lexical,
        "lexical_summary.json",
        json!({
            "categories": set.names(),
            "discrimination_records": disc.len(),
            "other_records": other.len(),
            "grand_mean_ratio": ratio.grand_mean,
            "profile_pearson": profile_corr.map(|c| json!({"r": c.coefficient, "p": c.p_value})),
            "user_buckets": users.buckets.iter().map(|b| json!({"bucket": b.bucket, "users": b.users, "records": b.records})).collect::<Vec<_>>(),
            "bucket_correlations": users.correlations,
        }),
    )
}

fn botscan_stage(ws: &Workspace, inputs: &mut Loaded) -> Result<()> {
    let bots = inputs.bots()?;
    let mut records: Vec<ClassifiedRecord> = ws.read_records("delineated.ndjson")?;
    let scan = botfilter::flag_bots(
        records.iter().map(|r| (r.city_key.as_str(), r.record.user_id.as_str(), r.discrimination)),
        &bots,
    );
    for (r, flag) in records.iter_mut().zip(&scan.flags) {
        r.is_bot = Some(*flag);
    }
    ws.write_records(Stage::Botscan, "scanned.ndjson", &records)?;
    ws.write_text(Stage::Botscan, "bot_summary.csv", |w| botfilter::write_bot_summary(w, &scan.cities))
}

fn aggregate_stage(ws: &Workspace, inputs: &mut Loaded) -> Result<()> {
    let records: Vec<ClassifiedRecord> = ws.read_records("scanned.ndjson")?;
    let bots = botfilter::read_bot_summary(ws.open_text("bot_summary.csv")?)?;
    let aggs = report::aggregate_cities(&records, inputs.registry()?, &bots)?;
    let global = report::global_counts(&records);
    report::check_identities(&aggs, &global)?;
    ws.write_text(Stage::Aggregate, "aggregates.csv", |w| report::write_aggregates(w, &aggs))?;
    ws.write_json(Stage::Aggregate, "global_counts.json", serde_json::to_value(global)?)
}

fn write_stepwise(ws: &Workspace, design: &DesignMatrix, fit_name: &str, trace_name: &str) -> Result<()> {
    match stats::stepwise_backward(design) {
        Ok(res) => {
            ws.write_text(Stage::Regress, fit_name, |w| res.fit.write_table(w))?;
            ws.write_text(Stage::Regress, trace_name, |w| stats::write_trace(w, &res.trace))
        }
        Err(e) => {
            ws.write_text(Stage::Regress, trace_name, |w| stats::write_trace(w, &e.trace))?;
            Err(e.into())
        }
    }
}

/// Design of hate-crime counts on per-city mean category profiles. Columns
/// that are zero in every city are dropped.
fn lexical_design(ws: &Workspace, aggs: &[report::CityAggregate]) -> Result<DesignMatrix> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(ws.open_text("lexical_cities.csv")?);
    let names: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
    let counts: BTreeMap<&str, u64> = aggs.iter().map(|a| (a.city_key.as_str(), a.hate_crime_count)).collect();
    let mut cols = vec![Vec::new(); names.len()];
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let Some(&count) = counts.get(&rec[0]) else {
            return Err(Error::Invariant(format!("lexical profile for unknown city {}", &rec[0])));
        };
        for (c, v) in cols.iter_mut().zip(rec.iter().skip(1)) {
            c.push(v.parse::<f64>().map_err(|_| Error::invalid(format!("bad profile value {v:?}")))?);
        }
        y.push(count);
    }
    let (names, cols): (Vec<String>, Vec<Vec<f64>>) = names
        .into_iter()
        .zip(cols)
        .filter(|(n, c)| {
            let keep = c.iter().any(|v| *v != 0.0);
            if !keep {
                log::warn!("category {n} never occurs in discrimination records; dropped from the regression");
            }
            keep
        })
        .unzip();
    DesignMatrix::new(names, cols, y, true)
}

fn regress_stage(ws: &Workspace, inputs: &mut Loaded) -> Result<()> {
    let cfg = inputs.cfg;
    let aggs = report::read_aggregates(ws.open_text("aggregates.csv")?)?;
    let cov = cfg.regression.social_covariate;

    let full = report::city_design(&aggs, cov, &[])?;
    ws.write_text(Stage::Regress, "fit_full.csv", |w| stats::fit_negbin(&full)?.write_table(w))?;
    write_stepwise(ws, &full, "fit_stepwise.csv", "trace_stepwise.csv")?;

    let excl = report::city_design(&aggs, cov, &cfg.regression.exclude_cities)?;
    ws.write_text(Stage::Regress, "fit_full_excl.csv", |w| stats::fit_negbin(&excl)?.write_table(w))?;
    write_stepwise(ws, &excl, "fit_stepwise_excl.csv", "trace_stepwise_excl.csv")?;

    let lex = lexical_design(ws, &aggs)?;
    ws.write_text(Stage::Regress, "fit_lexical.csv", |w| stats::fit_negbin(&lex)?.write_table(w))?;
    write_stepwise(ws, &lex, "fit_lexical_stepwise.csv", "trace_lexical_stepwise.csv")
}

fn map_stage(ws: &Workspace, inputs: &mut Loaded) -> Result<()> {
    let aggs = report::read_aggregates(ws.open_text("aggregates.csv")?)?;
    let header = ws.header(Stage::Map);
    let value = report::emit_map_data(&aggs, inputs.registry()?, &header);
    ws.write_raw("map.geojson", |w| {
        serde_json::to_writer_pretty(&mut *w, &value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn features_stage(ws: &Workspace, inputs: &mut Loaded) -> Result<()> {
    let cfg = inputs.cfg;
    let model = ws.load_model()?;
    let records: Vec<ClassifiedRecord> = ws.read_records("scanned.ndjson")?;
    let training = inputs.training()?;
    let vocab = FeatureVocabulary::build(
        training.iter().map(|e| e.text.as_str()).chain(records.iter().map(|r| r.record.text.as_str())),
        model.spec(),
    );
    let top = report::global_top_features(&model, &vocab, cfg.features.top_k);
    ws.write_text(Stage::Features, "top_features.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        for r in &top {
            c.serialize(r)?;
        }
        c.flush()?;
        Ok(())
    })?;

    let mut disc_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.discrimination) {
        *disc_counts.entry(r.city_key.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = disc_counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let chosen: std::collections::BTreeSet<&str> =
        ranked.iter().take(cfg.features.top_cities).map(|(k, _)| *k).collect();
    let subset: Vec<ClassifiedRecord> = records.iter().filter(|r| chosen.contains(r.city_key.as_str())).cloned().collect();
    let rows = report::top_features(&model, &subset, &vocab, cfg.features.city_top_k);
    ws.write_text(Stage::Features, "city_features.csv", |w| report::write_city_features(w, &rows))?;
    let stability = report::feature_stability(&model, &subset, cfg.features.city_top_k);
    ws.write_text(Stage::Features, "feature_stability.csv", |w| report::write_stability(w, &stability))
}

/// One row of a delineation audit sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub id: String,
    pub text: String,
    pub counts: PronounCounts,
    pub delineation: String,
}

/// Seeded random sample of delineated discrimination records for manual
/// review.
pub fn audit_sample(records: &[ClassifiedRecord], lists: &PronounLists, n: usize, seed: u64) -> Vec<AuditRow> {
    let d = Delineator::new(lists);
    let disc: Vec<&ClassifiedRecord> = records.iter().filter(|r| r.discrimination).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<&ClassifiedRecord> = disc.choose_multiple(&mut rng, n).copied().collect();
    picked.sort_by(|a, b| a.record.id.cmp(&b.record.id));
    picked
        .into_iter()
        .map(|r| AuditRow {
            id: r.record.id.clone(),
            text: r.record.text.clone(),
            counts: d.count_pronouns(&r.record.text),
            delineation: d.delineate(&r.record.text).to_string(),
        })
        .collect()
}

/// Every file in the output directory with its bytes, sorted by name.
pub fn artifact_tree(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_file() {
            let bytes = std::fs::read(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            out.push((entry.file_name().to_string_lossy().into_owned(), bytes));
        }
    }
    out.sort();
    Ok(out)
}
