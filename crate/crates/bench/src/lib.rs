//! Seeded inputs shared by the benches.

use discrim_core::stats::DesignMatrix;
use discrim_core::trainset::{LabeledExample, Provenance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

const WORDS: &[&str] = &[
    "the", "they", "we", "i", "my", "our", "their", "city", "bus", "street", "said", "told", "back", "home",
    "people", "today", "again", "never", "always", "why", "work", "school", "store", "night", "so", "just",
];

pub fn texts(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(5..30);
            (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

/// Texts where roughly one in eight carries the token `marker`, labeled by its presence.
pub fn labeled(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    texts(n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let pos = rng.random_bool(0.125);
            let t = if pos { format!("{t} marker") } else { t };
            LabeledExample::new(format!("b{i:06}"), t, pos, Provenance::Seed)
        })
        .collect()
}

/// Poisson counts on `p` standard normal covariates plus an intercept.
pub fn count_design(n: usize, p: usize, seed: u64) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let y = (0..n)
        .map(|i| {
            let eta = 1.0 + cols.iter().enumerate().map(|(j, c)| c[i] * 0.3 / (j + 1) as f64).sum::<f64>();
            Poisson::new(eta.exp()).unwrap().sample(&mut rng) as u64
        })
        .collect();
    DesignMatrix::new((0..p).map(|j| format!("x{j}")).collect(), cols, y, true).unwrap()
}
