//! Shared inputs for the benchmarks.

use chronoforge_core::synth::{dump_xml, planted_duplicates, rng, sentence, synth_pages, vocabulary, DumpParams};
use chronoforge_core::DocRecord;

pub fn dump(pages: usize) -> String {
    dump_xml(&synth_pages(
        1,
        &DumpParams {
            pages,
            ..DumpParams::default()
        },
    ))
}

pub fn wikitext() -> String {
    let mut r = rng(2);
    let vocab = vocabulary(&mut r, 400);
    let mut out = String::new();
    for i in 0..200 {
        out.push_str(&format!(
            "== Section {i} ==\n'''{}''' {{{{cite web|url=x|title={}}}}} [[Link {i}|{}]] {}<ref>{}</ref>\n\n",
            vocab[i % vocab.len()],
            sentence(&mut r, &vocab, 4),
            vocab[(i * 7) % vocab.len()],
            sentence(&mut r, &vocab, 30),
            sentence(&mut r, &vocab, 6),
        ));
    }
    out
}

/// `n` documents, one in ten a repeat.
pub fn docs(n: usize) -> Vec<DocRecord> {
    planted_duplicates(n, n / 10, 3).0
}
