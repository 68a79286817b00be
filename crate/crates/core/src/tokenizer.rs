//! Tokenizers used for every token count in the pipeline.
//!
//! Byte-level BPE: ids `0..=255` are raw bytes, `256` is the document
//! separator and learned merges take ids from `257` upward, in merge order.
//! Text is pre-split into chunks that each start at a whitespace run
//! following a word (`"a big cat"` → `"a"`, `" big"`, `" cat"`); merges never
//! cross chunk boundaries, and concatenating decoded chunks restores the
//! input exactly.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SEPARATOR: &str = "<|sep|>";
pub const UNKNOWN: &str = "<|unk|>";

const BPE_SEPARATOR_ID: u32 = 256;
const FIRST_MERGE_ID: u32 = 257;

/// Minimum BPE vocabulary: the 256 bytes plus the separator.
pub const MIN_BPE_VOCAB: u32 = 257;
/// Vocabulary size used when none is given.
pub const DEFAULT_BPE_VOCAB: u32 = 4096;

/// Serialized tokenizer definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TokenizerSpec {
    Bpe {
        vocab_size: u32,
        merges: Vec<(u32, u32)>,
        special_tokens: Vec<String>,
    },
    Whitespace {
        /// Known words, in id order after the special tokens. May be empty;
        /// it only matters for [`Tokenizer::encode`].
        vocab: Vec<String>,
        special_tokens: Vec<String>,
    },
}

impl TokenizerSpec {
    pub fn whitespace() -> Self {
        TokenizerSpec::Whitespace {
            vocab: Vec::new(),
            special_tokens: vec![SEPARATOR.into(), UNKNOWN.into()],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tokenizer spec serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("tokenizer spec serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the compact JSON encoding.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Split text into pre-tokenization chunks. Concatenation is the input.
pub fn pre_split(text: &str) -> impl Iterator<Item = &str> {
    let mut start = 0;
    let mut prev_ws = true;
    let mut bounds = Vec::new();
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if ws && !prev_ws && i > start {
            bounds.push((start, i));
            start = i;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        bounds.push((start, text.len()));
    }
    bounds.into_iter().map(move |(a, b)| &text[a..b])
}

/// Learn a byte-level BPE of `vocab_size` ids from `corpus`.
///
/// Each round merges the most frequent adjacent pair, ties going to the
/// numerically smaller `(left, right)` pair. Training stops early when no
/// pair is left, in which case the returned vocabulary is smaller.
pub fn train_bpe<'a>(corpus: impl IntoIterator<Item = &'a str>, vocab_size: u32) -> Result<TokenizerSpec> {
    if vocab_size < MIN_BPE_VOCAB {
        return Err(Error::Tokenizer(format!(
            "vocab_size {vocab_size} is below the minimum of {MIN_BPE_VOCAB}"
        )));
    }
    let mut chunk_freq: HashMap<&[u8], u64> = HashMap::new();
    let mut any_text = false;
    for text in corpus {
        any_text |= !text.is_empty();
        for chunk in pre_split(text) {
            *chunk_freq.entry(chunk.as_bytes()).or_insert(0) += 1;
        }
    }
    if !any_text {
        return Err(Error::Empty("tokenizer training corpus"));
    }
    let mut sorted: Vec<_> = chunk_freq.into_iter().collect();
    sorted.sort_unstable();
    let mut words: Vec<(Vec<u32>, u64)> = sorted
        .into_iter()
        .map(|(bytes, f)| (bytes.iter().map(|&b| u32::from(b)).collect(), f))
        .collect();

    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (idx, (syms, freq)) in words.iter().enumerate() {
        for pair in syms.windows(2) {
            let p = (pair[0], pair[1]);
            *counts.entry(p).or_insert(0) += freq;
            where_.entry(p).or_default().insert(idx);
        }
    }

    let target = (vocab_size - FIRST_MERGE_ID) as usize;
    let mut merges = Vec::with_capacity(target);
    while merges.len() < target {
        let best = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(p, _)| *p);
        let Some(best) = best else { break };
        let new_id = FIRST_MERGE_ID + merges.len() as u32;
        merges.push(best);

        let mut affected: Vec<usize> = where_.remove(&best).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        for idx in affected {
            let (syms, freq) = &mut words[idx];
            let freq = *freq;
            for pair in syms.windows(2) {
                let p = (pair[0], pair[1]);
                if let Some(c) = counts.get_mut(&p) {
                    *c -= freq;
                    if *c == 0 {
                        counts.remove(&p);
                    }
                }
            }
            *syms = merge_pair(syms, best, new_id);
            for pair in syms.windows(2) {
                let p = (pair[0], pair[1]);
                *counts.entry(p).or_insert(0) += freq;
                where_.entry(p).or_default().insert(idx);
            }
        }
        counts.remove(&best);
    }

    Ok(TokenizerSpec::Bpe {
        vocab_size: FIRST_MERGE_ID + merges.len() as u32,
        merges,
        special_tokens: vec![SEPARATOR.into()],
    })
}

/// Replace every left-to-right occurrence of `pair` with `id`.
pub fn merge_pair(syms: &[u32], pair: (u32, u32), id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
            out.push(id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

/// A whitespace tokenizer spec whose vocabulary is every word in `corpus`.
pub fn train_whitespace<'a>(corpus: impl IntoIterator<Item = &'a str>) -> TokenizerSpec {
    let words: BTreeSet<&str> = corpus.into_iter().flat_map(str::split_whitespace).collect();
    TokenizerSpec::Whitespace {
        vocab: words.into_iter().map(str::to_owned).collect(),
        special_tokens: vec![SEPARATOR.into(), UNKNOWN.into()],
    }
}

#[derive(Debug, Clone)]
struct Bpe {
    ranks: HashMap<(u32, u32), u32>,
    pieces: Vec<Vec<u8>>,
    labels: Vec<String>,
}

#[derive(Debug, Clone)]
struct Whitespace {
    ids: HashMap<String, u32>,
    words: Vec<String>,
}

#[derive(Debug, Clone)]
enum Kind {
    Bpe(Bpe),
    Whitespace(Whitespace),
}

/// A validated, immutable tokenizer.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    spec: TokenizerSpec,
    digest: String,
    kind: Kind,
}

fn piece_label(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => bytes.iter().map(|b| format!("<0x{b:02X}>")).collect(),
    }
}

/// One distinct scoring key per id. Different merge paths can spell the
/// same bytes, so repeats get an `<#id>` suffix.
fn unique_labels(pieces: &[Vec<u8>]) -> Vec<String> {
    let mut seen = HashSet::with_capacity(pieces.len());
    pieces
        .iter()
        .enumerate()
        .map(|(id, p)| {
            let mut label = piece_label(p);
            while !seen.insert(label.clone()) {
                label = format!("{label}<#{id}>");
            }
            label
        })
        .collect()
}

impl Tokenizer {
    pub fn new(spec: TokenizerSpec) -> Result<Self> {
        let kind = match &spec {
            TokenizerSpec::Bpe {
                vocab_size,
                merges,
                special_tokens,
            } => {
                if *vocab_size < MIN_BPE_VOCAB {
                    return Err(Error::Tokenizer(format!(
                        "bpe vocab_size {vocab_size} below {MIN_BPE_VOCAB}"
                    )));
                }
                if *vocab_size as usize != FIRST_MERGE_ID as usize + merges.len() {
                    return Err(Error::Tokenizer(format!(
                        "bpe vocab_size {vocab_size} disagrees with {} merges",
                        merges.len()
                    )));
                }
                if special_tokens.first().map(String::as_str) != Some(SEPARATOR) {
                    return Err(Error::Tokenizer(format!(
                        "first special token must be {SEPARATOR}"
                    )));
                }
                let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
                pieces.push(SEPARATOR.as_bytes().to_vec());
                let mut ranks = HashMap::with_capacity(merges.len());
                for (rank, &(a, b)) in merges.iter().enumerate() {
                    let id = FIRST_MERGE_ID + rank as u32;
                    for part in [a, b] {
                        if part >= id || part == BPE_SEPARATOR_ID {
                            return Err(Error::Tokenizer(format!(
                                "merge {rank} references unavailable id {part}"
                            )));
                        }
                    }
                    if ranks.insert((a, b), rank as u32).is_some() {
                        return Err(Error::Tokenizer(format!("duplicate merge ({a}, {b})")));
                    }
                    let mut piece = pieces[a as usize].clone();
                    piece.extend_from_slice(&pieces[b as usize]);
                    pieces.push(piece);
                }
                let labels = unique_labels(&pieces);
                Kind::Bpe(Bpe {
                    ranks,
                    pieces,
                    labels,
                })
            }
            TokenizerSpec::Whitespace { vocab, .. } => {
                let mut ids = HashMap::with_capacity(vocab.len());
                for (i, w) in vocab.iter().enumerate() {
                    if w.is_empty() || w.chars().any(char::is_whitespace) {
                        return Err(Error::Tokenizer(format!("invalid whitespace-vocab entry {w:?}")));
                    }
                    ids.insert(w.clone(), 2 + i as u32);
                }
                Kind::Whitespace(Whitespace {
                    ids,
                    words: vocab.clone(),
                })
            }
        };
        let digest = spec.digest();
        Ok(Self { spec, digest, kind })
    }

    pub fn whitespace() -> Self {
        Self::new(TokenizerSpec::whitespace()).expect("default whitespace spec is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(TokenizerSpec::load(path)?)
    }

    pub fn spec(&self) -> &TokenizerSpec {
        &self.spec
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            Kind::Bpe(_) => "bpe",
            Kind::Whitespace(_) => "whitespace",
        }
    }

    pub fn separator_id(&self) -> u32 {
        match self.kind {
            Kind::Bpe(_) => BPE_SEPARATOR_ID,
            Kind::Whitespace(_) => 0,
        }
    }

    /// Total number of ids, special tokens included.
    pub fn vocab_size(&self) -> usize {
        match &self.kind {
            Kind::Bpe(b) => b.pieces.len(),
            Kind::Whitespace(w) => 2 + w.words.len(),
        }
    }

    /// Size of the closed scoring vocabulary, if there is one. Byte-level
    /// BPE can produce every non-special id; whitespace vocabularies are open.
    pub fn scoring_vocab_size(&self) -> Option<usize> {
        match &self.kind {
            Kind::Bpe(b) => Some(b.pieces.len() - 1),
            Kind::Whitespace(_) => None,
        }
    }

    fn encode_chunk(bpe: &Bpe, chunk: &[u8], out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = chunk.iter().map(|&b| u32::from(b)).collect();
        while syms.len() > 1 {
            let best = syms
                .windows(2)
                .filter_map(|w| bpe.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            syms = merge_pair(&syms, pair, FIRST_MERGE_ID + rank);
        }
        out.extend_from_slice(&syms);
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        match &self.kind {
            Kind::Bpe(bpe) => {
                let mut out = Vec::with_capacity(text.len() / 3 + 1);
                for chunk in pre_split(text) {
                    Self::encode_chunk(bpe, chunk.as_bytes(), &mut out);
                }
                out
            }
            Kind::Whitespace(ws) => text
                .split_whitespace()
                .map(|w| ws.ids.get(w).copied().unwrap_or(1))
                .collect(),
        }
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        match self.kind {
            Kind::Whitespace(_) => text.split_whitespace().count(),
            Kind::Bpe(_) => self.encode(text).len(),
        }
    }

    /// Token strings used as scoring keys: words for whitespace, piece text
    /// for BPE (non-UTF-8 pieces spelled as `<0xNN>` bytes).
    pub fn token_strings(&self, text: &str) -> Vec<String> {
        match &self.kind {
            Kind::Whitespace(_) => text.split_whitespace().map(str::to_owned).collect(),
            Kind::Bpe(bpe) => self
                .encode(text)
                .into_iter()
                .map(|id| bpe.labels[id as usize].clone())
                .collect(),
        }
    }

    /// Every scoring key of the closed vocabulary, if there is one.
    pub fn scoring_vocab(&self) -> Option<Vec<String>> {
        match &self.kind {
            Kind::Bpe(bpe) => Some(
                bpe.labels
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i as u32 != BPE_SEPARATOR_ID)
                    .map(|(_, l)| l.clone())
                    .collect(),
            ),
            Kind::Whitespace(_) => None,
        }
    }

    /// Inverse of [`encode`](Self::encode). Lossless for BPE; whitespace
    /// decoding joins words with single spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        match &self.kind {
            Kind::Bpe(bpe) => {
                let mut bytes = Vec::new();
                for &id in ids {
                    let piece = bpe
                        .pieces
                        .get(id as usize)
                        .ok_or_else(|| Error::Tokenizer(format!("unknown token id {id}")))?;
                    bytes.extend_from_slice(piece);
                }
                String::from_utf8(bytes)
                    .map_err(|_| Error::Tokenizer("decoded bytes are not UTF-8".into()))
            }
            Kind::Whitespace(ws) => {
                let mut words = Vec::with_capacity(ids.len());
                for &id in ids {
                    let word = match id {
                        0 => SEPARATOR,
                        1 => UNKNOWN,
                        n => ws
                            .words
                            .get(n as usize - 2)
                            .map(String::as_str)
                            .ok_or_else(|| Error::Tokenizer(format!("unknown token id {id}")))?,
                    };
                    words.push(word);
                }
                Ok(words.join(" "))
            }
        }
    }
}
