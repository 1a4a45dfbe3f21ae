//! Fixture builders and reference implementations shared by the
//! integration tests. Nothing here calls into the code under test except to
//! build inputs.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use discrim_core::active::PoolRecord;
use discrim_core::trainset::{Label, LabeledExample, Provenance};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- corpora

pub const PLANTED: &str = "zqxkeyword";

fn filler_words(rng: &mut ChaCha8Rng, len: usize) -> Vec<String> {
    (0..len).map(|_| format!("w{}", rng.random_range(0..300))).collect()
}

/// Filler text where positives, and only positives, carry [`PLANTED`].
pub fn planted_corpus(n: usize, positive_rate: f64, seed: u64) -> Vec<LabeledExample> {
    let mut rng = rng(seed);
    let n_pos = (n as f64 * positive_rate).round() as usize;
    let mut labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, pos)| {
            let len = rng.random_range(6..14);
            let mut words = filler_words(&mut rng, len);
            if pos {
                let at = rng.random_range(0..=words.len());
                words.insert(at, PLANTED.to_string());
            }
            LabeledExample::new(format!("p{i:05}"), words.join(" "), pos, Provenance::Seed)
        })
        .collect()
}

pub struct BoundaryNoise {
    pub initial: Vec<LabeledExample>,
    pub pool: Vec<PoolRecord>,
    pub answers: HashMap<String, Label>,
    pub holdout: Vec<LabeledExample>,
}

/// Clear positives ("alpha"), clear negatives, and a band of records whose
/// cue word ("borderpos" true, "borderneg" false) is labeled by coin flip in
/// the initial training set. Pool answers and the holdout are clean.
pub fn boundary_noise(seed: u64) -> BoundaryNoise {
    let mut rng = rng(seed);
    let make = |i: usize, prefix: &str, rng: &mut ChaCha8Rng| -> (String, String, bool) {
        let kind = rng.random_range(0..10);
        let len = rng.random_range(6..12);
        let mut words = filler_words(rng, len);
        let truth = match kind {
            0 => {
                words.insert(rng.random_range(0..=len), "alpha".into());
                true
            }
            1 => {
                words.insert(rng.random_range(0..=len), "borderpos".into());
                true
            }
            2 => {
                words.insert(rng.random_range(0..=len), "borderneg".into());
                false
            }
            _ => false,
        };
        let noisy = kind == 1 || kind == 2;
        let id = format!("{prefix}{i:05}");
        let label = if noisy && prefix == "init" { rng.random_bool(0.5) } else { truth };
        (id, words.join(" "), label)
    };
    let initial = (0..1200)
        .map(|i| {
            let (id, text, label) = make(i, "init", &mut rng);
            LabeledExample::new(id, text, label, Provenance::Seed)
        })
        .collect();
    let mut pool = Vec::new();
    let mut answers = HashMap::new();
    for i in 0..3000 {
        let (id, text, label) = make(i, "pool", &mut rng);
        answers.insert(id.clone(), Label::from_bool(label));
        pool.push(PoolRecord { id, text });
    }
    let holdout = (0..1000)
        .map(|i| {
            let (id, text, label) = make(i, "hold", &mut rng);
            LabeledExample::new(id, text, label, Provenance::Seed)
        })
        .collect();
    BoundaryNoise { initial, pool, answers, holdout }
}

// ---------------------------------------------------------------- counts

/// Covariates drawn standard normal; `beta[0]` is the intercept. Counts are
/// Poisson when `theta` is `None`, otherwise gamma-Poisson with that size.
pub fn simulate_counts(n: usize, beta: &[f64], theta: Option<f64>, seed: u64) -> (Vec<Vec<f64>>, Vec<u64>) {
    let mut rng = rng(seed);
    let p = beta.len() - 1;
    let cols: Vec<Vec<f64>> =
        (0..p).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let y = (0..n)
        .map(|i| {
            let eta = beta[0] + (0..p).map(|j| beta[j + 1] * cols[j][i]).sum::<f64>();
            let mu: f64 = eta.exp();
            let lambda = match theta {
                Some(t) => Gamma::new(t, mu / t).unwrap().sample(&mut rng),
                None => mu,
            };
            if lambda <= 0.0 {
                0
            } else {
                Poisson::new(lambda).unwrap().sample(&mut rng) as u64
            }
        })
        .collect();
    (cols, y)
}

/// Rows of `[1, x_1, ..., x_p]`.
pub fn rows_with_intercept(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = cols[0].len();
    (0..n).map(|i| std::iter::once(1.0).chain(cols.iter().map(|c| c[i])).collect()).collect()
}

/// Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Poisson log-link regression by plain IRLS.
pub fn poisson_irls(rows: &[Vec<f64>], y: &[u64]) -> Vec<f64> {
    let p = rows[0].len();
    let mean = y.iter().sum::<u64>() as f64 / y.len() as f64;
    let mut beta = vec![0.0; p];
    beta[0] = mean.ln();
    for _ in 0..100 {
        let mut xtwx = vec![vec![0.0; p]; p];
        let mut xtwz = vec![0.0; p];
        for (x, &yi) in rows.iter().zip(y) {
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = eta.exp();
            let z = eta + (yi as f64 - mu) / mu;
            for j in 0..p {
                xtwz[j] += x[j] * mu * z;
                for k in 0..p {
                    xtwx[j][k] += x[j] * mu * x[k];
                }
            }
        }
        let next = solve(xtwx, xtwz);
        let change = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = next;
        if change < 1e-13 {
            break;
        }
    }
    beta
}

/// Gradient of the negative binomial log-likelihood in (beta, theta).
pub fn negbin_gradient(rows: &[Vec<f64>], y: &[u64], beta: &[f64], theta: f64) -> Vec<f64> {
    let p = beta.len();
    let mut g = vec![0.0; p + 1];
    for (x, &yi) in rows.iter().zip(y) {
        let yf = yi as f64;
        let mu = x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>().exp();
        let w = (yf - mu) * theta / (theta + mu);
        for j in 0..p {
            g[j] += w * x[j];
        }
        let digamma_diff: f64 = (0..yi).map(|k| 1.0 / (theta + k as f64)).sum();
        g[p] += digamma_diff + theta.ln() + 1.0 - (theta + mu).ln() - (yf + theta) / (theta + mu);
    }
    g
}

// ---------------------------------------------------------------- stats

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

/// 1-based ranks, ties averaged, by counting rather than sorting.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided Student t tail probability.
pub fn t_two_tailed(t: f64, df: f64) -> f64 {
    inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

pub fn correlation_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    t_two_tailed(r * (df / (1.0 - r * r)).sqrt(), df)
}

/// Pooled two-sample t statistic and two-sided p.
pub fn pooled_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let var = |x: &[f64]| {
        let m = mean(x);
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
    };
    let df = na + nb - 2.0;
    let sp2 = ((na - 1.0) * var(a) + (nb - 1.0) * var(b)) / df;
    let t = (mean(a) - mean(b)) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt();
    (t, t_two_tailed(t, df))
}

// ---------------------------------------------------------------- text

/// Brute-force category coverage: every term is tried at every position.
pub fn naive_profile(tokens: &[String], categories: &[Vec<Vec<String>>]) -> Vec<f64> {
    categories
        .iter()
        .map(|terms| {
            if tokens.is_empty() {
                return 0.0;
            }
            let mut covered = vec![false; tokens.len()];
            for start in 0..tokens.len() {
                for t in terms {
                    if start + t.len() <= tokens.len() && tokens[start..start + t.len()] == t[..] {
                        covered[start..start + t.len()].iter_mut().for_each(|c| *c = true);
                    }
                }
            }
            covered.iter().filter(|&&c| c).count() as f64 / tokens.len() as f64
        })
        .collect()
}

/// Text fragments with the pronoun counts (first, second, third) they
/// contribute under the default lists.
pub const PRONOUN_PIECES: &[(&str, [usize; 3])] = &[
    ("I", [1, 0, 0]),
    ("me,", [1, 0, 0]),
    ("My", [1, 0, 0]),
    ("mine!", [1, 0, 0]),
    ("WE", [1, 0, 0]),
    ("us.", [1, 0, 0]),
    ("(our", [1, 0, 0]),
    ("ours?", [1, 0, 0]),
    ("I'm", [1, 0, 0]),
    ("we've", [1, 0, 0]),
    ("you", [0, 1, 0]),
    ("Your", [0, 1, 0]),
    ("yours...", [0, 1, 0]),
    ("you're", [0, 1, 0]),
    ("he", [0, 0, 1]),
    ("Him", [0, 0, 1]),
    ("his", [0, 0, 1]),
    ("she's", [0, 0, 1]),
    ("her", [0, 0, 1]),
    ("hers", [0, 0, 1]),
    ("they", [0, 0, 1]),
    ("them!!", [0, 0, 1]),
    ("\"their", [0, 0, 1]),
    ("theirs", [0, 0, 1]),
    ("it", [0, 0, 1]),
    ("its", [0, 0, 1]),
    ("it's", [0, 0, 1]),
    ("they'll", [0, 0, 1]),
    ("@them", [0, 0, 0]),
    ("@me", [0, 0, 0]),
    ("#we", [0, 0, 0]),
    ("#they", [0, 0, 0]),
    ("myself", [0, 0, 0]),
    ("themselves", [0, 0, 0]),
    ("mean", [0, 0, 0]),
    ("usa", [0, 0, 0]),
    ("the", [0, 0, 0]),
    ("store", [0, 0, 0]),
    ("today,", [0, 0, 0]),
    ("so-called", [0, 0, 0]),
    ("---", [0, 0, 0]),
    ("youth", [0, 0, 0]),
    ("hero", [0, 0, 0]),
    ("items", [0, 0, 0]),
];

/// A random text built from [`PRONOUN_PIECES`] with its known counts.
pub fn pronoun_text(rng: &mut ChaCha8Rng, max_len: usize) -> (String, [usize; 3]) {
    let len = rng.random_range(0..=max_len);
    let mut counts = [0; 3];
    let mut words = Vec::with_capacity(len);
    for _ in 0..len {
        let (w, c) = PRONOUN_PIECES[rng.random_range(0..PRONOUN_PIECES.len())];
        words.push(w);
        for k in 0..3 {
            counts[k] += c[k];
        }
    }
    (words.join(" "), counts)
}
