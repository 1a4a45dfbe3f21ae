//! Boundary sampling and the retrain-until-plateau loop.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{kfold_evaluate, train, ClassifierConfig, ClassifierModel, EvalReport};
use crate::error::{Error, Result};
use crate::trainset::{read_examples, Label, LabeledExample, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredRecord {
    pub id: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryBatch {
    pub below: Vec<ScoredRecord>,
    pub above: Vec<ScoredRecord>,
    pub iteration: u32,
}

impl BoundaryBatch {
    pub fn len(&self) -> usize {
        self.below.len() + self.above.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = &ScoredRecord> {
        self.below.iter().chain(&self.above)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SamplingMode {
    /// Closest to the threshold on each side.
    #[default]
    Nearest,
    /// Uniform within each side.
    Uniform { seed: u64 },
}

/// Records per side for a pool of `n`: ceil(fraction * n).
pub fn per_side(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize
}

pub fn sample_boundary(pool: &[ScoredRecord], threshold: f64, fraction: f64, iteration: u32) -> Result<BoundaryBatch> {
    sample_boundary_with(pool, threshold, fraction, iteration, SamplingMode::Nearest)
}

pub fn sample_boundary_with(
    pool: &[ScoredRecord],
    threshold: f64,
    fraction: f64,
    iteration: u32,
    mode: SamplingMode,
) -> Result<BoundaryBatch> {
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(Error::invalid(format!("boundary fraction {fraction} outside (0, 0.5)")));
    }
    let want = per_side(pool.len(), fraction);
    let (below, above): (Vec<&ScoredRecord>, Vec<&ScoredRecord>) = pool.iter().partition(|r| r.score < threshold);
    let pick = |mut side: Vec<&ScoredRecord>, name: &str, salt: u64| -> Vec<ScoredRecord> {
        if side.len() < want {
            log::warn!("only {} records {name} the threshold, {want} requested", side.len());
        }
        side.sort_by(|a, b| {
            (a.score - threshold)
                .abs()
                .total_cmp(&(b.score - threshold).abs())
                .then_with(|| a.id.cmp(&b.id))
        });
        let take = want.min(side.len());
        match mode {
            SamplingMode::Nearest => side.into_iter().take(take).cloned().collect(),
            SamplingMode::Uniform { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt ^ u64::from(iteration));
                let mut idx = sample(&mut rng, side.len(), take).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| side[i].clone()).collect()
            }
        }
    };
    Ok(BoundaryBatch {
        below: pick(below, "below", 0x5eed_0001),
        above: pick(above, "above", 0x5eed_0002),
        iteration,
    })
}

/// Supplier of human labels for boundary records.
pub trait LabelSource {
    /// Labels for whichever requested records can be labeled now.
    fn request(&mut self, records: &[ScoredRecord]) -> Result<Vec<(String, Label)>>;
}

/// Fixed answers keyed by record id.
#[derive(Debug, Clone, Default)]
pub struct FixtureLabels {
    pub answers: HashMap<String, Label>,
}

impl FixtureLabels {
    pub fn new(answers: HashMap<String, Label>) -> Self {
        FixtureLabels { answers }
    }
}

impl LabelSource for FixtureLabels {
    fn request(&mut self, records: &[ScoredRecord]) -> Result<Vec<(String, Label)>> {
        Ok(records.iter().filter_map(|r| self.answers.get(&r.id).map(|&l| (r.id.clone(), l))).collect())
    }
}

/// Labels read from a labeled-example CSV (for instance the annotation
/// export), re-read on every request so new exports are picked up.
#[derive(Debug, Clone)]
pub struct CsvLabels {
    pub path: PathBuf,
}

impl LabelSource for CsvLabels {
    fn request(&mut self, records: &[ScoredRecord]) -> Result<Vec<(String, Label)>> {
        let f = std::fs::File::open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let known: HashMap<String, Label> = read_examples(f)?.into_iter().map(|e| (e.id, e.label)).collect();
        FixtureLabels::new(known).request(records)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActiveConfig {
    pub fraction: f64,
    pub epsilon: f64,
    pub window: usize,
    pub max_iterations: u32,
    pub folds: usize,
    pub sampling: SamplingMode,
    pub classifier: ClassifierConfig,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            fraction: 0.05,
            epsilon: 0.002,
            window: 2,
            max_iterations: 10,
            folds: 10,
            sampling: SamplingMode::Nearest,
            classifier: ClassifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopStatus {
    Plateau,
    MaxIterations,
    LabelStarved,
    PoolExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub iteration: u32,
    pub train_size: usize,
    pub positives: usize,
    pub mean_f1: f64,
    pub mean_auc: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    /// Emitted as `# key=value` lines ahead of the table.
    pub metadata: BTreeMap<String, String>,
}

impl History {
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        for (k, v) in &self.metadata {
            writeln!(writer, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "train_size", "positives", "mean_f1", "mean_auc", "threshold"])?;
        for r in &self.rows {
            w.write_record([
                r.iteration.to_string(),
                r.train_size.to_string(),
                r.positives.to_string(),
                r.mean_f1.to_string(),
                r.mean_auc.to_string(),
                r.threshold.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Training-set sizes reported for the replication run. The negative count
/// before active learning and the number of appended negatives disagree in
/// the source figures; both are kept as given.
pub fn replication_metadata() -> BTreeMap<String, String> {
    [
        ("replication.initial_train_size", "16000"),
        ("replication.initial_positives", "1698"),
        ("replication.initial_negatives_stated", "14302"),
        ("replication.appended_negatives_stated", "14012"),
        ("replication.final_train_size", "17000"),
        ("replication.final_positives", "1987"),
        ("replication.final_negatives", "15013"),
        ("replication.initial_f1", "0.85"),
        ("replication.initial_auc", "0.89"),
        ("replication.final_f1", "0.86"),
        ("replication.final_auc", "0.90"),
        ("replication.threshold", "0.623"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub model: ClassifierModel,
    pub training_set: Vec<LabeledExample>,
    pub history: History,
    pub status: LoopStatus,
    pub evaluations: Vec<EvalReport>,
}

impl LoopOutcome {
    pub fn iterations(&self) -> usize {
        self.history.rows.len().saturating_sub(1)
    }
}

fn score_pool(model: &ClassifierModel, pool: &[PoolRecord]) -> Vec<ScoredRecord> {
    pool.par_iter()
        .map(|r| ScoredRecord { id: r.id.clone(), text: r.text.clone(), score: model.predict(&r.text) })
        .collect()
}

/// Whether the last `window` evaluations each improved mean F1 by less than
/// `epsilon`. The baseline counts as an improvement over F1 = 0.
fn plateaued(f1s: &[f64], epsilon: f64, window: usize) -> bool {
    if window == 0 || f1s.len() < window {
        return false;
    }
    let gains: Vec<f64> = std::iter::once(0.0).chain(f1s.iter().copied()).collect::<Vec<_>>().windows(2).map(|w| w[1] - w[0]).collect();
    gains[gains.len() - window..].iter().all(|g| *g < epsilon)
}

pub fn run_active_loop<L: LabelSource>(
    initial_train: &[LabeledExample],
    unlabeled_pool: &[PoolRecord],
    config: &ActiveConfig,
    source: &mut L,
) -> Result<LoopOutcome> {
    let mut training: Vec<LabeledExample> = initial_train.to_vec();
    let mut pool: Vec<PoolRecord> = unlabeled_pool.to_vec();
    let mut history = History::default();
    history.metadata.insert("epsilon".into(), config.epsilon.to_string());
    history.metadata.insert("fraction".into(), config.fraction.to_string());
    history.metadata.insert("folds".into(), config.folds.to_string());

    let mut evaluations: Vec<EvalReport> = Vec::new();
    let fit = |training: &[LabeledExample], iteration: u32| -> Result<(ClassifierModel, HistoryRow, EvalReport)> {
        let model = train(training, &config.classifier)?;
        let eval = kfold_evaluate(training, config.folds, &config.classifier)?;
        let row = HistoryRow {
            iteration,
            train_size: training.len(),
            positives: training.iter().filter(|e| e.is_positive()).count(),
            mean_f1: eval.mean_f1,
            mean_auc: eval.mean_auc,
            threshold: model.threshold,
        };
        Ok((model, row, eval))
    };
    let mut record = |(model, row, eval): (ClassifierModel, HistoryRow, EvalReport), history: &mut History| {
        history.rows.push(row);
        evaluations.push(eval);
        model
    };

    let mut model = record(fit(&training, 0)?, &mut history);
    let mut status = LoopStatus::MaxIterations;
    for iteration in 1..=config.max_iterations {
        let scored = score_pool(&model, &pool);
        let batch = sample_boundary_with(&scored, model.threshold, config.fraction, iteration, config.sampling)?;
        if batch.is_empty() {
            status = LoopStatus::PoolExhausted;
            break;
        }
        let requested: Vec<ScoredRecord> = batch.records().cloned().collect();
        let labels = source.request(&requested)?;
        let texts: HashMap<&str, &str> = requested.iter().map(|r| (r.id.as_str(), r.text.as_str())).collect();
        let labels: Vec<(String, Label)> = labels.into_iter().filter(|(id, _)| texts.contains_key(id.as_str())).collect();
        if labels.is_empty() {
            log::warn!("label source returned nothing for iteration {iteration}");
            status = LoopStatus::LabelStarved;
            break;
        }
        let labeled: std::collections::HashSet<&str> = labels.iter().map(|(id, _)| id.as_str()).collect();
        for (id, label) in &labels {
            training.push(LabeledExample::new(
                id.clone(),
                texts[id.as_str()],
                label.is_positive(),
                Provenance::ActiveLearning { iteration },
            ));
        }
        pool.retain(|r| !labeled.contains(r.id.as_str()));
        model = record(fit(&training, iteration)?, &mut history);
        if plateaued(&history.rows.iter().map(|r| r.mean_f1).collect::<Vec<_>>(), config.epsilon, config.window) {
            status = LoopStatus::Plateau;
            break;
        }
    }
    history.metadata.insert("status".into(), format!("{status:?}"));
    Ok(LoopOutcome { model, training_set: training, history, status, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, score: f64) -> ScoredRecord {
        ScoredRecord { id: id.into(), text: String::new(), score }
    }

    #[test]
    fn five_percent_of_ten_thousand() {
        let pool: Vec<ScoredRecord> = (0..10_000).map(|i| rec(&format!("r{i:05}"), (i as f64 + 0.5) / 10_000.0)).collect();
        let b = sample_boundary(&pool, 0.623, 0.05, 1).unwrap();
        assert_eq!((b.below.len(), b.above.len()), (500, 500));
        assert!(b.below.iter().all(|r| r.score < 0.623));
        assert!(b.above.iter().all(|r| r.score >= 0.623));
    }

    #[test]
    fn per_side_rounds_up() {
        assert_eq!(per_side(10_000, 0.05), 500);
        assert_eq!(per_side(101, 0.05), 6);
        assert_eq!(per_side(20, 0.05), 1);
        assert_eq!(per_side(0, 0.05), 0);
    }

    #[test]
    fn one_sided_pool() {
        let pool: Vec<ScoredRecord> = (0..100).map(|i| rec(&format!("r{i}"), i as f64 / 1000.0)).collect();
        let b = sample_boundary(&pool, 0.5, 0.05, 1).unwrap();
        assert_eq!((b.below.len(), b.above.len()), (5, 0));
        assert_eq!(b.below[0].id, "r99");
    }

    #[test]
    fn fraction_is_validated() {
        assert!(sample_boundary(&[], 0.5, 0.0, 1).is_err());
        assert!(sample_boundary(&[], 0.5, 0.5, 1).is_err());
    }

    #[test]
    fn uniform_mode_stays_on_its_side() {
        let pool: Vec<ScoredRecord> = (0..400).map(|i| rec(&format!("r{i}"), i as f64 / 400.0)).collect();
        let mode = SamplingMode::Uniform { seed: 9 };
        let b = sample_boundary_with(&pool, 0.3, 0.05, 1, mode).unwrap();
        assert_eq!((b.below.len(), b.above.len()), (20, 20));
        assert!(b.below.iter().all(|r| r.score < 0.3));
        assert_eq!(b, sample_boundary_with(&pool, 0.3, 0.05, 1, mode).unwrap());
    }

    #[test]
    fn plateau_rule() {
        assert!(plateaued(&[0.5, 0.5], f64::INFINITY, 2));
        assert!(!plateaued(&[0.5, 0.5], 0.002, 2));
        assert!(plateaued(&[0.5, 0.6, 0.6, 0.601], 0.002, 2));
        assert!(!plateaued(&[0.5, 0.6, 0.6, 0.61], 0.002, 2));
        assert!(!plateaued(&[0.5], f64::INFINITY, 2));
    }

    proptest! {
        #[test]
        fn matches_full_sort_oracle(
            scores in proptest::collection::vec(0u32..1000, 1..300),
            t in 1u32..1000,
            frac in 0.01f64..0.49,
        ) {
            let pool: Vec<ScoredRecord> = scores.iter().enumerate().map(|(i, &s)| rec(&format!("id{i:04}"), s as f64 / 1000.0)).collect();
            let threshold = t as f64 / 1000.0;
            let b = sample_boundary(&pool, threshold, frac, 1).unwrap();
            let want = (frac * pool.len() as f64 - 1e-9).ceil() as usize;
            for (side, got) in [(true, &b.below), (false, &b.above)] {
                let mut all: Vec<&ScoredRecord> = pool.iter().filter(|r| (r.score < threshold) == side).collect();
                all.sort_by(|x, y| {
                    let dx = (x.score - threshold).abs();
                    let dy = (y.score - threshold).abs();
                    dx.partial_cmp(&dy).unwrap().then(x.id.cmp(&y.id))
                });
                let expect: Vec<&str> = all.iter().take(want).map(|r| r.id.as_str()).collect();
                let got: Vec<&str> = got.iter().map(|r| r.id.as_str()).collect();
                prop_assert_eq!(got, expect);
            }
        }
    }
}
