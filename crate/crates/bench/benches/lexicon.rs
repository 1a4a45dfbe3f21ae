use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use discrim_core::fixture::STANDIN_LEXICON;
use discrim_core::lexicon::{match_keywords, read_lexicon, Lexicon};
use std::hint::black_box;

fn matching(c: &mut Criterion) {
    let lexicon = Lexicon::new(&read_lexicon(STANDIN_LEXICON.as_bytes()).unwrap());
    let texts = discrim_bench::texts(5000, 7);
    let mut g = c.benchmark_group("match_keywords");
    g.throughput(Throughput::Elements(texts.len() as u64));
    g.bench_function("standin_lexicon", |b| {
        b.iter(|| texts.iter().map(|t| match_keywords(black_box(t), &lexicon).len()).sum::<usize>())
    });
    g.finish();
}

criterion_group!(benches, matching);
criterion_main!(benches);
