use std::collections::BTreeMap;

use chronoforge_core::tokenizer::{pre_split, train_bpe, train_whitespace, Tokenizer, TokenizerSpec};
use proptest::prelude::*;

/// Quadratic trainer: recount every pair of every chunk occurrence each
/// round, merge the most frequent (smallest pair on ties).
fn reference_merges(corpus: &[&str], vocab_size: u32) -> Vec<(u32, u32)> {
    let mut chunks: Vec<Vec<u32>> = corpus
        .iter()
        .flat_map(|t| pre_split(t))
        .map(|c| c.bytes().map(u32::from).collect())
        .collect();
    let mut merges = Vec::new();
    while 257 + (merges.len() as u32) < vocab_size {
        let mut counts: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for c in &chunks {
            for w in c.windows(2) {
                *counts.entry((w[0], w[1])).or_insert(0) += 1;
            }
        }
        let Some(max) = counts.values().copied().max() else { break };
        let best = *counts.iter().find(|(_, &n)| n == max).unwrap().0;
        let id = 257 + merges.len() as u32;
        merges.push(best);
        for c in &mut chunks {
            let mut out = Vec::new();
            let mut i = 0;
            while i < c.len() {
                if i + 1 < c.len() && (c[i], c[i + 1]) == best {
                    out.push(id);
                    i += 2;
                } else {
                    out.push(c[i]);
                    i += 1;
                }
            }
            *c = out;
        }
    }
    merges
}

/// Encode by applying each merge, in rank order, across the whole chunk.
fn reference_encode(merges: &[(u32, u32)], text: &str) -> Vec<u32> {
    let mut out = Vec::new();
    for chunk in pre_split(text) {
        let mut syms: Vec<u32> = chunk.bytes().map(u32::from).collect();
        for (rank, &pair) in merges.iter().enumerate() {
            let id = 257 + rank as u32;
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    next.push(id);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            syms = next;
        }
        out.extend(syms);
    }
    out
}

fn merges_of(spec: &TokenizerSpec) -> Vec<(u32, u32)> {
    match spec {
        TokenizerSpec::Bpe { merges, .. } => merges.clone(),
        _ => unreachable!(),
    }
}

const TEXT: &str = "the cat sat on the mat. the rat sat on the hat; that is that.\n\
    Ünïcödé wörds äre hére tôo, and emoji 🙂🙂 and tabs\tand  double  spaces.";

#[test]
fn trainer_matches_quadratic_reference() {
    let corpus = [TEXT, "aaaa aaaa abab abab", "zzz"];
    for vocab in [257, 260, 280, 330, 600] {
        let spec = train_bpe(corpus, vocab).unwrap();
        assert_eq!(merges_of(&spec), reference_merges(&corpus, vocab), "vocab {vocab}");
    }
}

#[test]
fn encoder_matches_sequential_merges() {
    let spec = train_bpe([TEXT], 320).unwrap();
    let merges = merges_of(&spec);
    let tok = Tokenizer::new(spec).unwrap();
    for text in [TEXT, "the thathat", "", " leading", "trailing ", "🙂 sat"] {
        assert_eq!(tok.encode(text), reference_encode(&merges, text), "{text:?}");
        assert_eq!(tok.count_tokens(text), tok.encode(text).len());
    }
}

#[test]
fn stops_early_when_no_pairs_remain() {
    let spec = train_bpe(["ab"], 1000).unwrap();
    assert_eq!(merges_of(&spec), vec![(97, 98)]);
    if let TokenizerSpec::Bpe { vocab_size, .. } = spec {
        assert_eq!(vocab_size, 258);
    }
}

#[test]
fn scoring_keys_are_distinct() {
    let spec = train_bpe([TEXT, "abc abc ab c a bc <0x80>"], 400).unwrap();
    let tok = Tokenizer::new(spec).unwrap();
    let keys = tok.scoring_vocab().unwrap();
    let unique: std::collections::HashSet<_> = keys.iter().collect();
    assert_eq!(unique.len(), keys.len());
    assert_eq!(keys.len(), tok.scoring_vocab_size().unwrap());
}

#[test]
fn spec_round_trips_through_json() {
    let spec = train_bpe([TEXT], 300).unwrap();
    let back: TokenizerSpec = serde_json::from_str(&spec.to_json()).unwrap();
    assert_eq!(back, spec);
    assert_eq!(back.digest(), spec.digest());
    let ws = train_whitespace(["b a", "c a"]);
    let back: TokenizerSpec = serde_json::from_str(&ws.to_json()).unwrap();
    assert_eq!(back, ws);
}

proptest! {
    #[test]
    fn bpe_round_trip(text in "\\PC{0,200}", extra in "[a-c ]{0,60}") {
        let spec = train_bpe([TEXT, extra.as_str()], 300).unwrap();
        let tok = Tokenizer::new(spec).unwrap();
        prop_assert_eq!(tok.decode(&tok.encode(&text)).unwrap(), text);
    }

    #[test]
    fn pre_split_is_a_partition(text in "\\PC{0,200}") {
        prop_assert_eq!(pre_split(&text).collect::<String>(), text);
    }

    #[test]
    fn whitespace_round_trip_on_normalized_text(words in prop::collection::vec("[a-z]{1,6}", 0..30)) {
        let text = words.join(" ");
        let tok = Tokenizer::new(train_whitespace([text.as_str()])).unwrap();
        prop_assert_eq!(tok.decode(&tok.encode(&text)).unwrap(), text);
    }

    #[test]
    fn trainer_matches_reference_on_random_corpora(
        docs in prop::collection::vec("[abc ]{0,30}", 1..6),
        vocab in 257u32..300,
    ) {
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        prop_assume!(refs.iter().any(|d| !d.is_empty()));
        let spec = train_bpe(refs.iter().copied(), vocab).unwrap();
        prop_assert_eq!(merges_of(&spec), reference_merges(&refs, vocab));
    }
}
