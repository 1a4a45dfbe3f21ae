//! Mean-pooled embedding classifier with a single logistic output.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureSpec, FeatureVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DSCRMDL\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs: u32,
    pub learning_rate: f64,
    pub seed: u64,
    pub orders: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    spec: FeatureSpec,
    dim: usize,
    embeddings: Vec<f64>,
    output: Vec<f64>,
    bias: f64,
    /// Scores at or above this are classified as discrimination.
    pub threshold: f64,
    pub meta: TrainingMetadata,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradient of the per-example cross-entropy, dense over all parameters.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub embeddings: Vec<f64>,
    pub output: Vec<f64>,
    pub bias: f64,
}

impl ClassifierModel {
    /// Embeddings drawn uniformly from `(-1/dim, 1/dim)`; output layer zero.
    pub fn initialize<R: Rng>(spec: FeatureSpec, dim: usize, rng: &mut R, meta: TrainingMetadata) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let bound = 1.0 / dim as f64;
        let embeddings = (0..spec.buckets * dim).map(|_| rng.random_range(-bound..bound)).collect();
        ClassifierModel {
            spec,
            dim,
            embeddings,
            output: vec![0.0; dim],
            bias: 0.0,
            threshold: 0.5,
            meta,
        }
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn buckets(&self) -> usize {
        self.spec.buckets
    }

    pub fn embedding_row(&self, bucket: u32) -> &[f64] {
        let b = bucket as usize * self.dim;
        &self.embeddings[b..b + self.dim]
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.output
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Mutable views of all parameters: embeddings, output weights, bias.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64], &mut f64) {
        (&mut self.embeddings, &mut self.output, &mut self.bias)
    }

    /// Contribution of a bucket to the logit when it is the only feature.
    pub fn bucket_contribution(&self, bucket: u32) -> f64 {
        self.embedding_row(bucket).iter().zip(&self.output).map(|(e, w)| e * w).sum()
    }

    pub fn hidden(&self, features: &FeatureVector) -> Vec<f64> {
        let mut h = vec![0.0; self.dim];
        if features.is_empty() {
            return h;
        }
        for &id in &features.ids {
            for (acc, e) in h.iter_mut().zip(self.embedding_row(id)) {
                *acc += e;
            }
        }
        let n = features.len() as f64;
        h.iter_mut().for_each(|x| *x /= n);
        h
    }

    pub fn logit(&self, features: &FeatureVector) -> f64 {
        let h = self.hidden(features);
        h.iter().zip(&self.output).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }

    pub fn score_features(&self, features: &FeatureVector) -> f64 {
        sigmoid(self.logit(features))
    }

    /// Probability of the discrimination class.
    pub fn predict(&self, text: &str) -> f64 {
        self.score_features(&self.spec.featurize(text))
    }

    pub fn classify(&self, text: &str) -> bool {
        self.predict(text) >= self.threshold
    }

    /// Binary cross-entropy, computed stably from the logit.
    pub fn loss(&self, features: &FeatureVector, positive: bool) -> f64 {
        let z = self.logit(features);
        let y = if positive { 1.0 } else { 0.0 };
        z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
    }

    /// `(dL/dz, hidden)` for one example.
    pub(crate) fn backward(&self, features: &FeatureVector, positive: bool) -> (f64, Vec<f64>) {
        let h = self.hidden(features);
        let z = h.iter().zip(&self.output).map(|(a, b)| a * b).sum::<f64>() + self.bias;
        let y = if positive { 1.0 } else { 0.0 };
        (sigmoid(z) - y, h)
    }

    pub fn gradient(&self, features: &FeatureVector, positive: bool) -> Gradient {
        let (dz, h) = self.backward(features, positive);
        let mut embeddings = vec![0.0; self.embeddings.len()];
        if !features.is_empty() {
            let scale = dz / features.len() as f64;
            for &id in &features.ids {
                let b = id as usize * self.dim;
                for (g, w) in embeddings[b..b + self.dim].iter_mut().zip(&self.output) {
                    *g += scale * w;
                }
            }
        }
        Gradient {
            embeddings,
            output: h.iter().map(|x| dz * x).collect(),
            bias: dz,
        }
    }

    /// One SGD update; embedding gradients use the pre-update output weights.
    pub(crate) fn sgd_step(&mut self, features: &FeatureVector, positive: bool, lr: f64) {
        let (dz, h) = self.backward(features, positive);
        if !features.is_empty() {
            let scale = lr * dz / features.len() as f64;
            for &id in &features.ids {
                let b = id as usize * self.dim;
                for (e, w) in self.embeddings[b..b + self.dim].iter_mut().zip(&self.output) {
                    *e -= scale * w;
                }
            }
        }
        for (w, x) in self.output.iter_mut().zip(&h) {
            *w -= lr * dz * x;
        }
        self.bias -= lr * dz;
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.iter().chain(&self.output).all(|x| x.is_finite()) && self.bias.is_finite()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.spec.buckets as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&[self.spec.orders.len() as u8])?;
        w.write_all(&self.spec.orders)?;
        w.write_all(&self.threshold.to_le_bytes())?;
        w.write_all(&self.meta.seed.to_le_bytes())?;
        w.write_all(&self.meta.epochs.to_le_bytes())?;
        w.write_all(&self.meta.learning_rate.to_le_bytes())?;
        w.write_all(&self.bias.to_le_bytes())?;
        for x in self.output.iter().chain(&self.embeddings) {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b)?;
            Ok(b)
        }
        let magic: [u8; 8] = take(&mut r)?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let buckets = u64::from_le_bytes(take(&mut r)?) as usize;
        let dim = u32::from_le_bytes(take(&mut r)?) as usize;
        let n_orders = take::<1, _>(&mut r)?[0] as usize;
        let mut orders = vec![0u8; n_orders];
        r.read_exact(&mut orders)?;
        let threshold = f64::from_le_bytes(take(&mut r)?);
        let seed = u64::from_le_bytes(take(&mut r)?);
        let epochs = u32::from_le_bytes(take(&mut r)?);
        let learning_rate = f64::from_le_bytes(take(&mut r)?);
        let bias = f64::from_le_bytes(take(&mut r)?);
        if dim == 0 {
            return Err(Error::ModelFormat("zero embedding dimension".into()));
        }
        let spec = FeatureSpec::new(orders.clone(), buckets).map_err(|e| Error::ModelFormat(e.to_string()))?;
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let output = read_vec(dim)?;
        let embeddings = read_vec(buckets * dim)?;
        let model = ClassifierModel {
            spec,
            dim,
            embeddings,
            output,
            bias,
            threshold,
            meta: TrainingMetadata { epochs, learning_rate, seed, orders },
        };
        if !model.is_finite() || !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::ModelFormat("non-finite parameters or threshold outside (0,1)".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64) -> ClassifierModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = FeatureSpec::new(vec![1, 2], 64).unwrap();
        let meta = TrainingMetadata { epochs: 1, learning_rate: 0.1, seed, orders: vec![1, 2] };
        let mut m = ClassifierModel::initialize(spec, 4, &mut rng, meta);
        let (_, out, bias) = m.params_mut();
        for w in out.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        *bias = rng.random_range(-0.5..0.5);
        m
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let texts = ["a b c a", "x", "a b b c d e f", "the quick brown fox"];
        for seed in 0..8 {
            let base = random_model(seed);
            for (i, text) in texts.iter().enumerate() {
                let f = base.spec().featurize(text);
                let y = (i + seed as usize).is_multiple_of(2);
                let g = base.gradient(&f, y);
                let h = 1e-5;
                let fd = |perturb: &dyn Fn(&mut ClassifierModel, f64)| {
                    let mut p = base.clone();
                    perturb(&mut p, h);
                    let mut m = base.clone();
                    perturb(&mut m, -h);
                    (p.loss(&f, y) - m.loss(&f, y)) / (2.0 * h)
                };
                for &id in &f.ids {
                    for k in 0..4 {
                        let j = id as usize * 4 + k;
                        let num = fd(&|m, d| m.params_mut().0[j] += d);
                        assert!(rel_err(g.embeddings[j], num) <= 1e-4, "emb {j}: {} vs {num}", g.embeddings[j]);
                    }
                }
                for k in 0..4 {
                    let num = fd(&|m, d| m.params_mut().1[k] += d);
                    assert!(rel_err(g.output[k], num) <= 1e-4);
                }
                let num = fd(&|m, d| *m.params_mut().2 += d);
                assert!(rel_err(g.bias, num) <= 1e-4);
            }
        }
    }

    #[test]
    fn empty_text_scores_sigmoid_bias() {
        let m = random_model(3);
        assert_eq!(m.predict(""), sigmoid(m.bias()));
    }

    #[test]
    fn threshold_is_inclusive() {
        let mut m = random_model(1);
        let s = m.predict("a b");
        m.threshold = s;
        assert!(m.classify("a b"));
        m.threshold = 0.623;
        let (_, out, bias) = m.params_mut();
        out.iter_mut().for_each(|w| *w = 0.0);
        // logit(0.623)
        *bias = (0.623f64 / (1.0 - 0.623)).ln();
        let s = m.predict("anything");
        assert!((s - 0.623).abs() < 1e-12);
        assert_eq!(m.classify("anything"), s >= 0.623);
    }

    #[test]
    fn binary_round_trip() {
        let mut m = random_model(9);
        m.threshold = 0.623;
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = ClassifierModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        buf[0] = b'X';
        assert!(ClassifierModel::read_from(buf.as_slice()).is_err());
    }
}
