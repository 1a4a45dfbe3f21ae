mod support;

use std::collections::{HashMap, HashSet};

use discrim_core::active::{run_active_loop, ActiveConfig, CsvLabels, FixtureLabels, LoopStatus, PoolRecord};
use discrim_core::classifier::ClassifierConfig;
use discrim_core::trainset::{write_examples, Label, LabeledExample, Provenance};

struct Fx {
    initial: Vec<LabeledExample>,
    pool: Vec<PoolRecord>,
    answers: HashMap<String, Label>,
}

fn fixture() -> Fx {
    let all = support::planted_corpus(1200, 0.12, 31);
    let (initial, rest) = all.split_at(400);
    Fx {
        initial: initial.to_vec(),
        pool: rest.iter().map(|e| PoolRecord { id: e.id.clone(), text: e.text.clone() }).collect(),
        answers: rest.iter().map(|e| (e.id.clone(), e.label)).collect(),
    }
}

fn config(max_iterations: u32) -> ActiveConfig {
    ActiveConfig {
        max_iterations,
        folds: 5,
        classifier: ClassifierConfig { buckets: 1 << 14, ..ClassifierConfig::default() },
        ..ActiveConfig::default()
    }
}

#[test]
fn infinite_epsilon_stops_after_one_round() {
    let fx = fixture();
    let cfg = ActiveConfig { epsilon: f64::INFINITY, ..config(5) };
    let out = run_active_loop(&fx.initial, &fx.pool, &cfg, &mut FixtureLabels::new(fx.answers)).unwrap();
    assert_eq!(out.iterations(), 1);
    assert_eq!(out.status, LoopStatus::Plateau);
}

#[test]
fn zero_iterations_is_just_the_baseline() {
    let fx = fixture();
    let out = run_active_loop(&fx.initial, &fx.pool, &config(0), &mut FixtureLabels::new(fx.answers)).unwrap();
    assert_eq!(out.history.rows.len(), 1);
    assert_eq!(out.training_set, fx.initial);
}

#[test]
fn starved_source_leaves_training_alone() {
    let fx = fixture();
    let out = run_active_loop(&fx.initial, &fx.pool, &config(4), &mut FixtureLabels::default()).unwrap();
    assert_eq!(out.status, LoopStatus::LabelStarved);
    assert_eq!(out.iterations(), 0);
    assert_eq!(out.training_set.len(), fx.initial.len());
}

#[test]
fn training_grows_with_tagged_provenance() {
    let fx = fixture();
    let cfg = config(4);
    let out = run_active_loop(&fx.initial, &fx.pool, &cfg, &mut FixtureLabels::new(fx.answers.clone())).unwrap();
    assert!(out.iterations() >= 1 && out.iterations() <= 4);

    let sizes: Vec<usize> = out.history.rows.iter().map(|r| r.train_size).collect();
    assert!(sizes.windows(2).all(|w| w[1] > w[0]), "{sizes:?}");
    assert_eq!(*sizes.last().unwrap(), out.training_set.len());
    assert_eq!(&out.training_set[..fx.initial.len()], &fx.initial[..]);

    let mut seen = HashSet::new();
    for e in &out.training_set {
        assert!(seen.insert(e.id.as_str()), "duplicate {}", e.id);
    }
    for e in &out.training_set[fx.initial.len()..] {
        let Provenance::ActiveLearning { iteration } = e.provenance else { panic!("{:?}", e.provenance) };
        assert!(iteration >= 1 && iteration as usize <= out.iterations());
        assert_eq!(fx.answers[&e.id], e.label);
    }
    // each round asks for at most ceil(5%) per side of what is left
    let mut left = fx.pool.len();
    for w in sizes.windows(2) {
        let added = w[1] - w[0];
        assert!(added <= 2 * (5 * left).div_ceil(100), "added {added} from {left}");
        left -= added;
    }
}

#[test]
fn repeated_runs_agree() {
    let fx = fixture();
    let cfg = config(3);
    let a = run_active_loop(&fx.initial, &fx.pool, &cfg, &mut FixtureLabels::new(fx.answers.clone())).unwrap();
    let b = run_active_loop(&fx.initial, &fx.pool, &cfg, &mut FixtureLabels::new(fx.answers)).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.training_set, b.training_set);
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.history.write_csv(&mut ca).unwrap();
    b.history.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn csv_source_only_supplies_what_it_holds() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.csv");
    // only even-numbered pool records have been labeled
    let held: Vec<LabeledExample> = fx
        .pool
        .iter()
        .step_by(2)
        .map(|r| LabeledExample::new(r.id.clone(), r.text.clone(), fx.answers[&r.id].is_positive(), Provenance::Crowd))
        .collect();
    write_examples(std::fs::File::create(&path).unwrap(), &held).unwrap();
    let held_ids: HashSet<&str> = held.iter().map(|e| e.id.as_str()).collect();

    let out = run_active_loop(&fx.initial, &fx.pool, &config(2), &mut CsvLabels { path }).unwrap();
    assert!(out.training_set.len() > fx.initial.len());
    for e in &out.training_set[fx.initial.len()..] {
        assert!(held_ids.contains(e.id.as_str()), "{} was never labeled", e.id);
    }
}
