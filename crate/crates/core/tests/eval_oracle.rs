use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use chronoforge_core::eval::{
    accurate_mean, count_occurrences, cta_adapt, cta_scorers, event_study, train_scorer, train_yearly_scorers, zero_context_ppl,
    Scorer, DEFAULT_K,
};
use chronoforge_core::synth::{decade_fixture, leaders_fixture, planted_occurrences};
use chronoforge_core::tokenizer::{train_bpe, Tokenizer};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, ToPrimitive, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ws() -> Arc<Tokenizer> {
    Arc::new(Tokenizer::whitespace())
}

fn random_corpus(seed: u64, tokens: usize, types: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..tokens)
        .map(|_| format!("w{}", rng.gen_range(0..types)))
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn probabilities_equal_recounted_ratios() {
    let text = random_corpus(1, 1000, 60);
    let s = train_scorer("y", [text.as_str()], ws(), 0.5).unwrap();
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for w in text.split(' ') {
        *counts.entry(w).or_default() += 1;
    }
    let v = counts.len() as f64;
    for (w, c) in counts {
        let want = (c as f64 + 0.5) / (1000.0 + 0.5 * v);
        assert!((s.probability(w) - want).abs() < 1e-15);
    }
}

#[test]
fn absent_term_sits_at_the_ceiling() {
    // 10,000 tokens over exactly 100 types
    let mut words: Vec<String> = (0..100).map(|i| format!("w{i}")).collect();
    let extra = random_corpus(2, 9900, 100);
    words.push(extra);
    let text = words.join(" ");
    let s = train_scorer("y", [text.as_str()], ws(), DEFAULT_K).unwrap();
    assert_eq!((s.total(), s.vocab_size()), (10_000.0, 100));
    let r = zero_context_ppl("covid", &s).unwrap();
    // (N + kV) / k with k = 1/100, evaluated exactly
    let k = BigRational::new(BigInt::from(1), BigInt::from(100));
    let exact = (BigRational::from_integer(BigInt::from(10_000)) + &k * BigInt::from(100)) / &k;
    let exact = exact.to_f64().unwrap();
    assert_eq!(exact, 1_000_100.0);
    assert!(((r.ppl - exact) / exact).abs() < 1e-12);
    assert!(((r.ceiling.unwrap() - exact) / exact).abs() < 1e-12);
}

#[test]
fn uniform_scorer_gives_vocab_size() {
    for v in [1usize, 2, 7, 100, 5000] {
        let text: Vec<String> = (0..v).map(|i| format!("t{i}")).collect();
        let s = train_scorer("u", text.iter().map(String::as_str), ws(), DEFAULT_K).unwrap();
        for term in ["t0", "t0 t0", &format!("t0 t{}", v - 1)] {
            let ppl = zero_context_ppl(term, &s).unwrap().ppl;
            assert!((ppl - v as f64).abs() < 1e-9, "V={v} ppl={ppl}");
        }
    }
}

#[test]
fn per_token_breakdown_is_reported() {
    let s = train_scorer("y", ["a a b"], ws(), 1.0).unwrap();
    let r = zero_context_ppl("a b", &s).unwrap();
    assert_eq!(r.token_count, 2);
    assert_eq!(r.tokens[0].token, "a");
    assert!((r.tokens[0].log_prob - (0.6f64).ln()).abs() < 1e-15);
    let want = (-(0.6f64.ln() + 0.4f64.ln()) / 2.0).exp();
    assert!((r.ppl - want).abs() < 1e-12);
}

fn corpus_strategy() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-f]{1,3}( [a-f]{1,3}){0,20}", 1..10)
}

proptest! {
    #[test]
    fn scorer_is_normalized(docs in corpus_strategy(), k in 0.001f64..5.0) {
        let s = train_scorer("y", docs.iter().map(String::as_str), ws(), k).unwrap();
        prop_assert!((s.probability_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ppl_within_bounds(docs in corpus_strategy(), term in "[a-g]{1,3}( [a-g]{1,3}){0,4}", k in 0.001f64..5.0) {
        let s = train_scorer("y", docs.iter().map(String::as_str), ws(), k).unwrap();
        let r = zero_context_ppl(&term, &s).unwrap();
        let ceiling = (s.total() + k * s.vocab_size() as f64) / k;
        prop_assert!(r.ppl >= 1.0 - 1e-12);
        prop_assert!(r.ppl <= ceiling * (1.0 + 1e-12));
    }

    #[test]
    fn cta_is_an_exact_mixture(a in corpus_strategy(), b in corpus_strategy(), alpha in 0.01f64..100.0) {
        let yearly = train_yearly_scorers(&BTreeMap::from([(1, a), (2, b)]), ws(), 0.1).unwrap();
        let (base, adapt) = (&yearly[&1], &yearly[&2]);
        let c = cta_adapt(base, adapt, alpha).unwrap();
        let w = 1.0 / (1.0 + alpha);
        let kv = 0.1 * base.vocab_size() as f64;
        let lambda = w * (base.total() + kv) / (w * base.total() + (1.0 - w) * adapt.total() + kv);
        for t in base.seen_tokens().chain(adapt.seen_tokens()) {
            let want = lambda * base.probability(t) + (1.0 - lambda) * adapt.probability(t);
            prop_assert!((c.probability(t) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn cta_keeps_knowledge_the_period_lacks() {
    let base = train_scorer("2020", ["x y term z", "term again"], ws(), DEFAULT_K).unwrap();
    let pit = train_scorer("2015", ["x y z", "again"], ws(), DEFAULT_K).unwrap();
    let cta = cta_adapt(&base, &pit, 0.4).unwrap();
    assert!(cta.probability("term") > pit.probability("term"));
}

fn total_variation(a: &Scorer, b: &Scorer, vocab: &[String]) -> f64 {
    vocab.iter().map(|t| (a.probability(t) - b.probability(t)).abs()).sum::<f64>() / 2.0
}

#[test]
fn cta_converges_to_adaptation_scorer() {
    let fx = decade_fixture(11, 2011, 7, 3000, 40);
    let corpus: Vec<&str> = fx.corpora.values().flatten().map(String::as_str).collect();
    let bpe = Arc::new(Tokenizer::new(train_bpe(corpus, 400).unwrap()).unwrap());
    let yearly = train_yearly_scorers(&fx.corpora, bpe.clone(), DEFAULT_K).unwrap();
    let vocab = bpe.scoring_vocab().unwrap();
    let base = &yearly[&2020];
    for adapt in [&yearly[&2012], &yearly[&2016]] {
        let tv = total_variation(&cta_adapt(base, adapt, 1e6).unwrap(), adapt, &vocab);
        assert!(tv < 1e-6, "tv {tv}");
        let far = total_variation(&cta_adapt(base, adapt, 0.4).unwrap(), adapt, &vocab);
        assert!(far > tv);
    }
}

#[test]
fn decade_leakage_signature() {
    let fx = decade_fixture(5, 2011, 7, 2000, 30);
    assert_eq!(fx.emergence_year, 2017);
    let yearly = train_yearly_scorers(&fx.corpora, ws(), DEFAULT_K).unwrap();
    let cta = cta_scorers(&yearly, 2020, 0.4).unwrap();
    let present_max = (2017..=2020)
        .map(|y| zero_context_ppl(&fx.term, &yearly[&y]).unwrap().ppl)
        .fold(0.0, f64::max);
    for y in 2011..2017 {
        let r = zero_context_ppl(&fx.term, &yearly[&y]).unwrap();
        let ceiling = r.ceiling.unwrap();
        assert!(((r.ppl - ceiling) / ceiling).abs() < 1e-12);
        assert!(r.ppl / present_max >= 10.0);
        let leaked = zero_context_ppl(&fx.term, &cta[&y]).unwrap().ppl;
        assert!(leaked < ceiling, "{y}: {leaked} vs {ceiling}");
    }
}

fn exact_mean(values: &[f64]) -> f64 {
    let sum = values
        .iter()
        .fold(BigRational::zero(), |s, v| s + BigRational::from_f64(*v).unwrap());
    (sum / BigInt::from(values.len())).to_f64().unwrap()
}

/// Direct evaluation of the smoothing formula from raw counts.
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

#[test]
fn leaders_event_study() {
    let fx = leaders_fixture(3, 20, 2000, 2019, 1500);
    let yearly = train_yearly_scorers(&fx.corpora, ws(), DEFAULT_K).unwrap();
    let v = yearly[&2000].vocab_size();
    let offsets: Vec<i32> = (-5..=5).collect();
    let study = event_study(&fx.events, &yearly, &offsets).unwrap();
    for o in &study.offsets {
        let mut hand = Vec::new();
        for ev in &fx.events {
            if let Some(docs) = fx.corpora.get(&(ev.event_year + o.offset)) {
                hand.push(hand_ppl(&ev.term, docs, DEFAULT_K, v));
            }
        }
        assert_eq!(o.count, hand.len());
        for (got, want) in o.values.iter().zip(&hand) {
            assert!(((got.ppl - want) / want).abs() < 1e-12);
        }
        let got: Vec<f64> = o.values.iter().map(|x| x.ppl).collect();
        let mean = o.mean_ppl.unwrap();
        assert!(((mean - exact_mean(&got)) / mean).abs() < 1e-15);
    }
    let cta = cta_scorers(&yearly, 2019, 0.4).unwrap();
    let leaked = event_study(&fx.events, &cta, &offsets).unwrap();
    let gap = study.mean_at(-2).unwrap() - leaked.mean_at(-2).unwrap();
    assert!(gap > 0.0);
}

#[test]
fn event_study_small_means() {
    let a = train_scorer("2010", ["p p q"], ws(), 1.0).unwrap();
    let events = [
        chronoforge_core::eval::Event { term: "p".into(), event_year: 2010 },
        chronoforge_core::eval::Event { term: "q".into(), event_year: 2010 },
    ];
    let st = event_study(&events, &BTreeMap::from([(2010, a)]), &[0]).unwrap();
    let (v1, v2) = (5.0 / 3.0, 5.0 / 2.0);
    assert!((st.mean_at(0).unwrap() - (v1 + v2) / 2.0).abs() < 1e-12);
}

#[test]
fn planted_counts_match_generator() {
    let (docs, truth) = planted_occurrences(9, 100, "qovid", &[2018, 2019, 2020]);
    let got = count_occurrences("qovid", docs.iter().map(|(y, t)| (*y, t.as_str())), true);
    assert_eq!(got, truth);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn accurate_mean_is_correctly_rounded(values in prop::collection::vec(1e-3f64..1e7, 1..40)) {
        prop_assert_eq!(accurate_mean(values.iter().copied()), exact_mean(&values));
    }

    #[test]
    fn accurate_mean_mixed_signs(values in prop::collection::vec(-1e12f64..1e12, 1..40)) {
        prop_assert_eq!(accurate_mean(values.iter().copied()), exact_mean(&values));
    }
}
