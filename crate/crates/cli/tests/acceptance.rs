//! Acceptance suite: every criterion runs, one PASS/FAIL line each, then the
//! test fails if any criterion did.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, NaiveDate, Utc};
use chronoforge_core::assembler::{build_corpus, chinchilla_budget, pack_sequences, Pools, SamplingConfig};
use chronoforge_core::dedup::{content_digest, dedup_all};
use chronoforge_core::eval::{
    cta_scorers, emissions, event_study, train_scorer, train_yearly_scorers, zero_context_ppl, ExternalScorer,
    ExternalScorerFile, DEFAULT_K,
};
use chronoforge_core::news::{ingest_year, DatePolicy, SplitMode};
use chronoforge_core::sampler::{compute_weights, quantize, sample_to_budget, CutoffSpec, SampleMode, WeightTable};
use chronoforge_core::synth::{
    decade_fixture, dump_xml, leaders_fixture, planted_duplicates, synth_pages, write_news_year, DumpParams,
};
use chronoforge_core::wiki::{clean_wikitext, cutoff_instant, stream_dump, DumpOptions, RevisionRecord, SnapshotPage};
use chronoforge_core::{DocRecord, Source, Tokenizer};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---- oracles ----------------------------------------------------------

fn exp_rational(x: &BigRational) -> BigRational {
    let mut sum = BigRational::zero();
    let mut term = BigRational::one();
    for n in 1..=60u32 {
        sum += &term;
        term = term * x / BigRational::from_integer(BigInt::from(n));
    }
    sum
}

fn weight_oracle(ages: &[i64], tau: i64) -> Vec<f64> {
    let d_max = *ages.iter().max().unwrap();
    let w: Vec<BigRational> = ages
        .iter()
        .map(|a| exp_rational(&BigRational::new(BigInt::from(d_max - a), BigInt::from(tau))))
        .collect();
    let total = w.iter().fold(BigRational::zero(), |s, v| s + v);
    w.iter().map(|v| (v / &total).to_f64().unwrap()).collect()
}

fn table(ages: &[i64]) -> WeightTable {
    let pool: Vec<(String, i64)> = ages.iter().enumerate().map(|(i, &a)| (format!("d{i}"), a)).collect();
    compute_weights(&pool, &CutoffSpec::year_end(2020)).unwrap()
}

/// Draw loop replayed with a linear cumulative scan.
fn simulate(weights: &[u64], tokens: &[u64], need: u64, seed: u64) -> (Vec<usize>, u64) {
    let mut w = weights.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut accepted, mut t) = (Vec::new(), 0u64);
    loop {
        let alive: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0).collect();
        if t == need || alive.is_empty() || alive.iter().all(|&i| tokens[i] > need - t) {
            return (accepted, t);
        }
        let mut target = rng.gen_range(0..w.iter().sum::<u64>());
        let mut pick = 0;
        for (i, &wi) in w.iter().enumerate() {
            if target < wi {
                pick = i;
                break;
            }
            target -= wi;
        }
        if tokens[pick] <= need - t {
            t += tokens[pick];
            accepted.push(pick);
        }
        w[pick] = 0;
    }
}

fn brute_force(revs: &[RevisionRecord], cutoff: DateTime<Utc>) -> Option<&RevisionRecord> {
    revs.iter()
        .filter(|r| r.timestamp <= cutoff)
        .max_by(|a, b| (a.timestamp, a.rev_id).cmp(&(b.timestamp, b.rev_id)))
}

fn exact_mean(values: &[f64]) -> f64 {
    let sum = values.iter().fold(BigRational::zero(), |s, v| s + BigRational::from_f64(*v).unwrap());
    (sum / BigInt::from(values.len())).to_f64().unwrap()
}

fn hand_ppl(term: &str, docs: &[String], k: f64, v: usize) -> f64 {
    let words: Vec<&str> = docs.iter().flat_map(|d| d.split_whitespace()).collect();
    let n = words.len() as f64;
    let toks: Vec<&str> = term.split_whitespace().collect();
    let logs: f64 = toks
        .iter()
        .map(|t| ((words.iter().filter(|w| *w == t).count() as f64 + k) / (n + k * v as f64)).ln())
        .sum();
    (-logs / toks.len() as f64).exp()
}

// ---- criteria ---------------------------------------------------------

fn weight_math() -> Result<String, String> {
    let ages = [0, 913, 1826];
    let got = table(&ages).probabilities();
    let want = weight_oracle(&ages, 1826);
    let worst = got.iter().zip(&want).map(|(g, w)| ((g - w) / w).abs()).fold(0.0, f64::max);
    ensure(worst < 1e-12, format!("relative error {worst:e}"))?;
    let ratio = got[0] / got[2];
    ensure((ratio - std::f64::consts::E).abs() < 1e-9, format!("ratio {ratio}"))?;
    Ok(format!("max rel err {worst:.1e}, ratio {ratio:.12}"))
}

fn sampling_distribution() -> Result<String, String> {
    let t = table(&[0, 150, 300, 500, 700, 900, 1100, 1400, 1600, 1826]);
    let p = t.probabilities();
    let n = 100_000u64;
    let mut counts = [0u64; 10];
    for seed in 0..n {
        let s = sample_to_budget(&t, &[1; 10], 1, seed, SampleMode::WithoutReplacement).map_err(|e| e.to_string())?;
        counts[s.accepted_indices[0]] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&p)
        .map(|(&o, &pi)| (o as f64 - pi * n as f64).powi(2) / (pi * n as f64))
        .sum();
    let pval = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
    ensure(pval > 0.001, format!("chi2 {stat:.2}, p {pval:.4}"))?;
    Ok(format!("chi2 {stat:.2}, p {pval:.3}"))
}

fn budget_safety() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240);
    for case in 0..1000 {
        let n = rng.gen_range(1..25);
        let ages: Vec<i64> = (0..n).map(|_| rng.gen_range(0..=1826)).collect();
        let tokens: Vec<u64> = (0..n).map(|_| rng.gen_range(1..60)).collect();
        let need = rng.gen_range(0..400);
        let seed: u64 = rng.gen();
        let t = table(&ages);
        let got = sample_to_budget(&t, &tokens, need, seed, SampleMode::WithoutReplacement).map_err(|e| e.to_string())?;
        ensure(got.t_current <= need, format!("case {case}: over budget"))?;
        let (acc, cur) = simulate(&quantize(&t.probabilities()), &tokens, need, seed);
        ensure(got.accepted_indices == acc && got.t_current == cur, format!("case {case}: differs from reference"))?;
    }
    Ok("1000 triples".into())
}

fn revision_selection() -> Result<String, String> {
    let pages = synth_pages(42, &DumpParams::default());
    ensure(pages.len() == 50, "fixture size")?;
    ensure(pages.iter().any(|p| p.renamed()), "fixture lacks renames")?;
    ensure(pages.iter().any(|p| p.revisions[0].timestamp.format("%Y").to_string() == "2016"), "fixture lacks late pages")?;
    let xml = dump_xml(&pages);
    let years = [2006, 2009, 2012, 2014, 2015];
    for year in years {
        let cutoff = cutoff_instant(NaiveDate::from_ymd_opt(year, 12, 31).unwrap());
        let got: Vec<SnapshotPage> = stream_dump(xml.as_bytes(), DumpOptions::new(cutoff))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let want: Vec<SnapshotPage> = pages
            .iter()
            .filter(|p| p.ns == 0 && !p.redirect)
            .filter_map(|p| brute_force(&p.revisions, cutoff))
            .map(|r| SnapshotPage {
                page_id: r.page_id,
                rev_id: r.rev_id,
                timestamp: r.timestamp,
                title: r.title.clone(),
                clean_text: clean_wikitext(&r.wikitext),
            })
            .collect();
        ensure(got == want, format!("cutoff {year} differs"))?;
    }
    Ok(format!("cutoffs {years:?}"))
}

fn dedup() -> Result<String, String> {
    let (docs, keep) = planted_duplicates(1000, 137, 2024);
    let (kept, _) = dedup_all(docs, "news");
    ensure(kept.len() == 863, format!("{} survivors", kept.len()))?;
    ensure(kept.iter().map(|d| &d.id).eq(keep.iter()), "wrong survivors")?;
    ensure(
        hex::encode(content_digest("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855",
        "empty-string digest",
    )?;
    Ok("863 survivors".into())
}

fn domain_ratio() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut news = Vec::new();
    for year in 2011..=2015 {
        let d = dir.path().join(year.to_string());
        write_news_year(&d, year, 120, 5).map_err(|e| e.to_string())?;
        let (docs, _) = ingest_year(&d, year, SplitMode::BlankLine).map_err(|e| e.to_string())?;
        news.extend(docs.into_iter().map(|n| n.into_record(DatePolicy::MidYear)));
    }
    let pages = synth_pages(5, &DumpParams { pages: 150, first_year: 2008, last_year: 2016, ..DumpParams::default() });
    let cutoff = cutoff_instant(NaiveDate::from_ymd_opt(2015, 12, 31).unwrap());
    let wiki: Vec<DocRecord> = stream_dump(dump_xml(&pages).as_bytes(), DumpOptions::new(cutoff))
        .map(|p| p.map(SnapshotPage::into_record))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let (news, _) = dedup_all(news, "news");
    let tok = Tokenizer::whitespace();
    let max_doc = news.iter().chain(&wiki).map(|d| tok.count_tokens(&d.text)).max().unwrap() as f64;
    let total = 10_000.0;
    let mut shares = Vec::new();
    for seed in [1, 2, 3] {
        let vital = BTreeSet::new();
        let pools = Pools { news: &news, wiki: &wiki, vital_page_ids: &vital, news_dedup: None, wiki_dedup: None };
        let corpus = build_corpus(&SamplingConfig::new(2015, 10_000, seed), pools, &tok).map_err(|e| e.to_string())?;
        let recount: usize = corpus
            .docs
            .iter()
            .filter(|d| d.source == Source::News)
            .map(|d| d.text.split_whitespace().count())
            .sum();
        let share = recount as f64 / total;
        ensure((share - 0.6).abs() <= max_doc / total, format!("seed {seed}: share {share}"))?;
        shares.push(share);
    }
    Ok(format!("news shares {shares:?}, tolerance {:.4}", max_doc / total))
}

fn packing() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let docs: Vec<(String, Vec<u32>)> = (0..200)
        .map(|i| {
            let len = rng.gen_range(1..=3000);
            (format!("d{i}"), (0..len).map(|_| rng.gen_range(0..256)).collect())
        })
        .collect();
    let seqs = pack_sequences(docs.iter().map(|(id, t)| (id.as_str(), t.as_slice())), 1024, 256)
        .map_err(|e| e.to_string())?;
    ensure(seqs.iter().all(|s| s.tokens.len() <= 1024), "sequence over 1024")?;
    let doc_tokens: usize = docs.iter().map(|(_, t)| t.len()).sum();
    let separators: usize = seqs.iter().map(|s| s.members.len().saturating_sub(1)).sum();
    let packed: usize = seqs.iter().map(|s| s.tokens.len()).sum();
    ensure(packed == doc_tokens + separators, format!("{packed} != {doc_tokens} + {separators}"))?;
    Ok(format!("{} sequences, {packed} = {doc_tokens} + {separators}", seqs.len()))
}

fn ppl_identities() -> Result<String, String> {
    let tok = Arc::new(Tokenizer::whitespace());
    for v in [2usize, 10, 1000] {
        let text: Vec<String> = (0..v).map(|i| format!("t{i}")).collect();
        let s = train_scorer("u", text.iter().map(String::as_str), tok.clone(), DEFAULT_K).map_err(|e| e.to_string())?;
        let ppl = zero_context_ppl("t0 t1", &s).map_err(|e| e.to_string())?.ppl;
        ensure((ppl - v as f64).abs() < 1e-9, format!("V={v}: {ppl}"))?;
    }
    let file = ExternalScorerFile {
        id: "certain".into(),
        tokenizer_digest: tok.digest().to_string(),
        probabilities: BTreeMap::from([("a".to_string(), 1.0)]),
        unseen_probability: None,
    };
    let certain = ExternalScorer::new(file, tok).map_err(|e| e.to_string())?;
    let ppl = zero_context_ppl("a", &certain).map_err(|e| e.to_string())?.ppl;
    ensure(ppl == 1.0, format!("p=1 gives {ppl}"))?;
    Ok("uniform PPL = V; p = 1 gives 1".into())
}

fn leakage_shape() -> Result<String, String> {
    let fx = decade_fixture(5, 2011, 7, 2000, 30);
    ensure(fx.emergence_year == 2017 && fx.corpora.len() == 10, "fixture shape")?;
    let yearly = train_yearly_scorers(&fx.corpora, Arc::new(Tokenizer::whitespace()), DEFAULT_K).map_err(|e| e.to_string())?;
    let cta = cta_scorers(&yearly, 2020, 0.4).map_err(|e| e.to_string())?;
    let ppl = |y: i32| zero_context_ppl(&fx.term, &yearly[&y]).unwrap();
    let emerged = ppl(2017).ppl;
    let mut min_drop = f64::INFINITY;
    for y in 2011..2017 {
        let r = ppl(y);
        let ceiling = r.ceiling.unwrap();
        ensure(((r.ppl - ceiling) / ceiling).abs() < 1e-12, format!("{y} below ceiling"))?;
        min_drop = min_drop.min(r.ppl / emerged);
        let leaked = zero_context_ppl(&fx.term, &cta[&y]).unwrap().ppl;
        ensure(leaked < ceiling, format!("{y}: CTA {leaked} not below {ceiling}"))?;
    }
    ensure(min_drop >= 10.0, format!("drop {min_drop:.1}x"))?;
    Ok(format!("drop at emergence {min_drop:.0}x"))
}

fn event_study_means() -> Result<String, String> {
    let fx = leaders_fixture(3, 20, 2000, 2019, 1500);
    let yearly = train_yearly_scorers(&fx.corpora, Arc::new(Tokenizer::whitespace()), DEFAULT_K).map_err(|e| e.to_string())?;
    let v = yearly[&2000].vocab_size();
    let offsets: Vec<i32> = (-5..=5).collect();
    let study = event_study(&fx.events, &yearly, &offsets).map_err(|e| e.to_string())?;
    for o in &study.offsets {
        let hand: Vec<f64> = fx
            .events
            .iter()
            .filter_map(|ev| fx.corpora.get(&(ev.event_year + o.offset)).map(|d| hand_ppl(&ev.term, d, DEFAULT_K, v)))
            .collect();
        ensure(o.count == hand.len(), format!("offset {}: count", o.offset))?;
        for (g, w) in o.values.iter().zip(&hand) {
            ensure(((g.ppl - w) / w).abs() < 1e-12, format!("offset {}: {} vs {w}", o.offset, g.ppl))?;
        }
        let own: Vec<f64> = o.values.iter().map(|x| x.ppl).collect();
        let mean = o.mean_ppl.unwrap();
        ensure(mean == exact_mean(&own), format!("offset {}: mean not exact", o.offset))?;
        ensure(((mean - exact_mean(&hand)) / mean).abs() < 1e-12, format!("offset {}: hand mean", o.offset))?;
    }
    let cta = cta_scorers(&yearly, 2019, 0.4).map_err(|e| e.to_string())?;
    let leaked = event_study(&fx.events, &cta, &offsets).map_err(|e| e.to_string())?;
    let gap = study.mean_at(-2).unwrap() - leaked.mean_at(-2).unwrap();
    ensure(gap > 0.0, format!("gap {gap}"))?;
    Ok(format!("20 leaders, gap at -2 = {gap:.0}"))
}

fn emissions_arithmetic() -> Result<String, String> {
    let r = emissions(Decimal::new(38840, 2), Decimal::new(342, 0)).map_err(|e| e.to_string())?;
    ensure(r.emissions_g == Decimal::new(13_283_280, 2), format!("{}", r.emissions_g))?;
    Ok(format!("{} gCO2eq", r.emissions_g))
}

fn determinism() -> Result<String, String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    for d in [&a, &b] {
        let cfg = common::setup(d.path());
        let loaded = chronoforge_cli::config::load(&cfg).map_err(|e| format!("{e:#}"))?;
        chronoforge_cli::run_pipeline(&loaded).map_err(|e| format!("{e:#}"))?;
    }
    let (oa, ob) = (a.path().join("out"), b.path().join("out"));
    let files = common::list_files(&oa);
    ensure(files == common::list_files(&ob), "different file sets")?;
    for f in &files {
        let same = std::fs::read(oa.join(f)).ok() == std::fs::read(ob.join(f)).ok();
        ensure(same, format!("{} differs", f.display()))?;
    }
    Ok(format!("{} files identical", files.len()))
}

fn chinchilla() -> Result<String, String> {
    let t = chinchilla_budget(117_000_000).map_err(|e| e.to_string())?;
    ensure(t == 2_340_000_000, format!("{t}"))?;
    Ok(format!("{t} tokens"))
}

type Criterion = (&'static str, u64, fn() -> Result<String, String>);

#[test]
fn acceptance() {
    let criteria: [Criterion; 13] = [
        ("weight math", 1, weight_math),
        ("sampling distribution", 10, sampling_distribution),
        ("budget safety and termination", 30, budget_safety),
        ("revision selection", 5, revision_selection),
        ("dedup", 2, dedup),
        ("domain ratio", 10, domain_ratio),
        ("packing", 5, packing),
        ("zero-context PPL identities", 1, ppl_identities),
        ("leakage shape", 30, leakage_shape),
        ("event study", 30, event_study_means),
        ("emissions", 1, emissions_arithmetic),
        ("determinism", 120, determinism),
        ("chinchilla helper", 1, chinchilla),
    ];
    let mut failed = Vec::new();
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > Duration::from_secs(*limit) => {
                Err(format!("{detail}; took {elapsed:.2?}, limit {limit}s"))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(why) => {
                println!("FAIL {:>2} {name}: {why} [{elapsed:.2?}]", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
