use std::collections::BTreeSet;

use chronoforge_bench::{docs, dump, wikitext};
use chronoforge_core::assembler::pack_sequences;
use chronoforge_core::dedup::dedup_all;
use chronoforge_core::eval::{train_scorer, zero_context_ppl, DEFAULT_K};
use chronoforge_core::sampler::{compute_weights, sample_to_budget, CutoffSpec, SampleMode};
use chronoforge_core::tokenizer::train_bpe;
use chronoforge_core::wiki::{clean_wikitext, cutoff_instant, stream_dump, DumpOptions};
use chronoforge_core::Tokenizer;
use std::hint::black_box;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

fn wiki(c: &mut Criterion) {
    let text = wikitext();
    let mut g = c.benchmark_group("wiki");
    g.throughput(Throughput::Bytes(text.len() as u64));
    g.bench_function("clean", |b| b.iter(|| clean_wikitext(black_box(&text))));

    let xml = dump(200);
    let cutoff = cutoff_instant(CutoffSpec::year_end(2012).cutoff_date);
    g.throughput(Throughput::Bytes(xml.len() as u64));
    g.bench_function("stream_dump", |b| {
        b.iter(|| stream_dump(xml.as_bytes(), DumpOptions::new(cutoff)).count())
    });
    g.finish();
}

fn dedup(c: &mut Criterion) {
    let pool = docs(10_000);
    c.bench_function("dedup 10k", |b| {
        b.iter_batched(|| pool.clone(), |d| dedup_all(d, "bench"), BatchSize::LargeInput)
    });
}

fn tokenizer(c: &mut Criterion) {
    let pool = docs(300);
    let texts: Vec<&str> = pool.iter().map(|d| d.text.as_str()).collect();
    let mut g = c.benchmark_group("bpe");
    g.sample_size(10);
    g.bench_function("train 512", |b| b.iter(|| train_bpe(texts.iter().copied(), 512).unwrap()));
    let tok = Tokenizer::new(train_bpe(texts.iter().copied(), 512).unwrap()).unwrap();
    g.bench_function("encode", |b| b.iter(|| texts.iter().map(|t| tok.encode(t).len()).sum::<usize>()));
    g.finish();
}

fn sampler(c: &mut Criterion) {
    let n = 100_000;
    let pool: Vec<(String, i64)> = (0..n).map(|i| (format!("d{i}"), (i * 7919 % 1827) as i64)).collect();
    let tokens: Vec<u64> = (0..n).map(|i| 50 + (i * 31 % 700) as u64).collect();
    let spec = CutoffSpec::year_end(2020);
    c.bench_function("weights 100k", |b| b.iter(|| compute_weights(black_box(&pool), &spec).unwrap()));
    let table = compute_weights(&pool, &spec).unwrap();
    let budget = tokens.iter().sum::<u64>() / 4;
    c.bench_function("sample 100k to quarter budget", |b| {
        b.iter(|| sample_to_budget(&table, &tokens, budget, 7, SampleMode::WithoutReplacement).unwrap())
    });
}

fn pack(c: &mut Criterion) {
    let seqs: Vec<(String, Vec<u32>)> = (0..2000)
        .map(|i| (format!("d{i}"), (0..(i * 37 % 3000 + 1) as u32).collect()))
        .collect();
    c.bench_function("pack 2000 docs", |b| {
        b.iter(|| pack_sequences(seqs.iter().map(|(id, t)| (id.as_str(), t.as_slice())), 1024, 256).unwrap())
    });
}

fn scorer(c: &mut Criterion) {
    let pool = docs(2000);
    let tok = std::sync::Arc::new(Tokenizer::whitespace());
    c.bench_function("train scorer 2k docs", |b| {
        b.iter(|| train_scorer("b", pool.iter().map(|d| d.text.as_str()), tok.clone(), DEFAULT_K).unwrap())
    });
    let s = train_scorer("b", pool.iter().map(|d| d.text.as_str()), tok, DEFAULT_K).unwrap();
    let terms: BTreeSet<&str> = pool.iter().flat_map(|d| d.text.split_whitespace()).take(200).collect();
    c.bench_function("zero-context ppl", |b| {
        b.iter(|| terms.iter().map(|t| zero_context_ppl(t, &s).unwrap().ppl).sum::<f64>())
    });
}

criterion_group!(benches, wiki, dedup, tokenizer, sampler, pack, scorer);
criterion_main!(benches);
