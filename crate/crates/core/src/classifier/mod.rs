//! Shallow bag-of-n-grams discrimination classifier.
//!
//! Hashed word n-grams index an embedding table; embeddings are mean-pooled
//! and fed to one logistic unit. Training is plain per-example SGD on binary
//! cross-entropy with a linearly decaying learning rate, fully determined by
//! the seed.

mod features;
mod metrics;
mod model;

pub use features::{featurize, ngram_hash, FeatureSpec, FeatureVector};
pub use metrics::{auc, f1_score, select_threshold, threshold_grid, Confusion};
pub use model::{ClassifierModel, Gradient, TrainingMetadata};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainset::LabeledExample;

/// Operating point reported for the replication configuration.
pub const REPLICATION_THRESHOLD: f64 = 0.623;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub orders: Vec<u8>,
    pub buckets: usize,
    pub dim: usize,
    pub epochs: u32,
    pub learning_rate: f64,
    pub seed: u64,
    /// Use this threshold instead of selecting one on the training scores.
    pub fixed_threshold: Option<f64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            orders: vec![1, 2, 3],
            buckets: 1 << 21,
            dim: 10,
            epochs: 5,
            learning_rate: 0.1,
            seed: 42,
            fixed_threshold: None,
        }
    }
}

impl ClassifierConfig {
    /// Defaults with the reported operating point pinned.
    pub fn replication() -> Self {
        ClassifierConfig { fixed_threshold: Some(REPLICATION_THRESHOLD), ..Self::default() }
    }

    pub fn feature_spec(&self) -> Result<FeatureSpec> {
        FeatureSpec::new(self.orders.clone(), self.buckets)
    }
}

/// Train a model. The threshold is `fixed_threshold` when set, otherwise the
/// F1-optimal grid point on the training scores.
pub fn train(examples: &[LabeledExample], config: &ClassifierConfig) -> Result<ClassifierModel> {
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    let positives = examples.iter().filter(|e| e.is_positive()).count();
    if positives == 0 || positives == examples.len() {
        return Err(Error::DegenerateLabels);
    }
    if config.dim == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::invalid("dim and learning rate must be positive"));
    }
    if let Some(t) = config.fixed_threshold {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::invalid(format!("threshold {t} outside (0,1)")));
        }
    }
    let spec = config.feature_spec()?;
    let feats: Vec<FeatureVector> = examples.iter().map(|e| spec.featurize(&e.text)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let meta = TrainingMetadata {
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        seed: config.seed,
        orders: spec.orders.clone(),
    };
    let mut model = ClassifierModel::initialize(spec, config.dim, &mut rng, meta);

    let total = (config.epochs as usize * examples.len()) as f64;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let lr = config.learning_rate * (1.0 - step as f64 / total);
            model.sgd_step(&feats[i], examples[i].is_positive(), lr);
            step += 1;
        }
    }
    if !model.is_finite() {
        return Err(Error::Invariant("training produced non-finite parameters".into()));
    }

    model.threshold = match config.fixed_threshold {
        Some(t) => t,
        None => {
            let scored: Vec<(f64, bool)> = feats
                .iter()
                .zip(examples)
                .map(|(f, e)| (model.score_features(f), e.is_positive()))
                .collect();
            select_threshold(&scored).expect("both classes present")
        }
    };
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub size: usize,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub folds: Vec<FoldMetrics>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub mean_auc: f64,
}

impl EvalReport {
    pub fn from_folds(folds: Vec<FoldMetrics>) -> Self {
        let k = folds.len();
        let mean = |f: fn(&FoldMetrics) -> f64| folds.iter().map(f).sum::<f64>() / k as f64;
        EvalReport {
            k,
            mean_precision: mean(|m| m.precision),
            mean_recall: mean(|m| m.recall),
            mean_f1: mean(|m| m.f1),
            mean_auc: mean(|m| m.auc),
            folds,
        }
    }
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin,
/// negatives continuing where positives stopped, so per-class and total fold
/// sizes each differ by at most one.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("k must be at least 2"));
    }
    if labels.len() < k {
        return Err(Error::invalid(format!("{} examples cannot fill {k} folds", labels.len())));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if k > pos.len().min(neg.len()) {
        return Err(Error::invalid(format!(
            "k={k} exceeds the smaller class count {}",
            pos.len().min(neg.len())
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold = vec![0; labels.len()];
    for (slot, &i) in pos.iter().chain(neg.iter()).enumerate() {
        fold[i] = slot % k;
    }
    Ok(fold)
}

/// Stratified k-fold cross-validation; each held-out fold is scored by a
/// model trained on the remaining folds, at that model's threshold.
pub fn kfold_evaluate(examples: &[LabeledExample], k: usize, config: &ClassifierConfig) -> Result<EvalReport> {
    let labels: Vec<bool> = examples.iter().map(|e| e.is_positive()).collect();
    let folds = stratified_folds(&labels, k, config.seed)?;
    let mut out = Vec::with_capacity(k);
    for f in 0..k {
        let train_set: Vec<LabeledExample> =
            examples.iter().zip(&folds).filter(|(_, &g)| g != f).map(|(e, _)| e.clone()).collect();
        let model = train(&train_set, config)?;
        let scored: Vec<(f64, bool)> = examples
            .iter()
            .zip(&folds)
            .filter(|(_, &g)| g == f)
            .map(|(e, _)| (model.predict(&e.text), e.is_positive()))
            .collect();
        let c = Confusion::at_threshold(&scored, model.threshold);
        out.push(FoldMetrics {
            fold: f,
            size: scored.len(),
            threshold: model.threshold,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            auc: auc(&scored).expect("stratified folds hold both classes"),
            confusion: c,
        });
    }
    Ok(EvalReport::from_folds(out))
}
