//! Yearly corpus assembly: domain budgets, sampling, shuffling, packing and
//! the manifest that makes a corpus reproducible.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dedup::DedupReport;
use crate::error::{Error, Result};
use crate::news::DatePolicy;
use crate::record::{DocRecord, Source};
use crate::sampler::{
    compute_weights, sample_to_budget, wiki_select, BudgetState, CutoffSpec, SampleMode, StopReason,
};
use crate::tokenizer::Tokenizer;
use crate::wiki::{cutoff_instant, SnapshotPage};

pub const DEFAULT_SEQ_LEN: usize = 1024;
pub const DEFAULT_RATIO_NEWS: f64 = 0.6;
pub const DEFAULT_RATIO_WIKI: f64 = 0.4;
pub const CHINCHILLA_TOKENS_PER_PARAM: u64 = 20;

const RATIO_TOLERANCE: f64 = 1e-9;
const SHORTFALL_WARNING: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub year: i32,
    pub cutoff: CutoffSpec,
    pub ratio_news: f64,
    pub ratio_wiki: f64,
    pub total_tokens: u64,
    pub seed: u64,
    pub date_policy: DatePolicy,
}

impl SamplingConfig {
    pub fn new(year: i32, total_tokens: u64, seed: u64) -> Self {
        Self {
            year,
            cutoff: CutoffSpec::year_end(year),
            ratio_news: DEFAULT_RATIO_NEWS,
            ratio_wiki: DEFAULT_RATIO_WIKI,
            total_tokens,
            seed,
            date_policy: DatePolicy::MidYear,
        }
    }

    /// Every violated invariant, as messages naming the field.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.ratio_news.is_finite() && self.ratio_news > 0.0) {
            out.push(format!("ratio_news must be > 0 (got {})", self.ratio_news));
        }
        if !(self.ratio_wiki.is_finite() && self.ratio_wiki > 0.0) {
            out.push(format!("ratio_wiki must be > 0 (got {})", self.ratio_wiki));
        }
        if (self.ratio_news + self.ratio_wiki - 1.0).abs() > RATIO_TOLERANCE {
            out.push(format!(
                "ratio_news + ratio_wiki must equal 1 (got {})",
                self.ratio_news + self.ratio_wiki
            ));
        }
        if self.total_tokens == 0 {
            out.push("total_tokens must be > 0".into());
        }
        if let Err(e) = self.cutoff.validate() {
            out.push(e.to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().as_slice() {
            [] => Ok(()),
            problems => Err(Error::Config(problems.join("; "))),
        }
    }

    /// `(news, wiki)` token targets; wiki is rounded, news takes the rest.
    pub fn targets(&self) -> (u64, u64) {
        let wiki = (self.ratio_wiki * self.total_tokens as f64).round() as u64;
        let wiki = wiki.min(self.total_tokens);
        (self.total_tokens - wiki, wiki)
    }
}

/// Tokens needed to train `param_count` parameters at 20 tokens each.
pub fn chinchilla_budget(param_count: u64) -> Result<u64> {
    if param_count == 0 {
        return Err(Error::Invalid("parameter count must be positive".into()));
    }
    param_count
        .checked_mul(CHINCHILLA_TOKENS_PER_PARAM)
        .ok_or_else(|| Error::Invalid("token budget overflows u64".into()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainAccount {
    pub target_tokens: u64,
    pub achieved_tokens: u64,
    pub residual_tokens: u64,
    pub pool_docs: u64,
    pub eligible_docs: u64,
    pub eligible_tokens: u64,
    pub doc_count: u64,
    pub draws: u64,
    pub rejected_overshoot: u64,
    pub stop: StopReason,
    pub seed: u64,
    pub dedup: Option<DedupReport>,
    pub accepted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitalAccount {
    pub listed: u64,
    pub present: u64,
    pub accepted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub year: i32,
    pub cutoff_date: String,
    pub window_days: u32,
    pub tau_days: f64,
    pub ratio_news: f64,
    pub ratio_wiki: f64,
    pub total_tokens: u64,
    pub seed: u64,
    pub shuffle_seed: u64,
    pub tokenizer_kind: String,
    pub tokenizer_digest: String,
    pub date_policy: String,
    pub dedup_scope: String,
    pub news: DomainAccount,
    pub wiki: DomainAccount,
    pub vital: VitalAccount,
    pub corpus_docs: u64,
    pub corpus_tokens: u64,
    pub corpus_sha256: String,
    pub flags: Vec<String>,
    pub tool_version: String,
}

impl CorpusManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// A sampled corpus in its final (shuffled) order.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub docs: Vec<DocRecord>,
    pub manifest: CorpusManifest,
}

impl Corpus {
    pub fn to_jsonl(docs: &[DocRecord]) -> Vec<u8> {
        let mut out = Vec::new();
        for d in docs {
            serde_json::to_writer(&mut out, d).expect("record serializes");
            out.push(b'\n');
        }
        out
    }

    /// Write `corpus.jsonl` and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let corpus = dir.join("corpus.jsonl");
        std::fs::write(&corpus, Self::to_jsonl(&self.docs)).map_err(|e| Error::io(&corpus, e))?;
        let manifest = dir.join("manifest.json");
        std::fs::write(&manifest, self.manifest.to_json()).map_err(|e| Error::io(&manifest, e))
    }
}

/// Derive an independent stream seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn token_counts(docs: &[&DocRecord], tokenizer: &Tokenizer) -> Vec<u64> {
    docs.par_iter()
        .map(|d| tokenizer.count_tokens(&d.text) as u64)
        .collect()
}

struct DomainDraw {
    state: BudgetState,
    account: DomainAccount,
}

fn account(
    target: u64,
    pool_docs: usize,
    eligible: &[u64],
    seed: u64,
    dedup: Option<DedupReport>,
    state: &BudgetState,
) -> DomainAccount {
    DomainAccount {
        target_tokens: target,
        achieved_tokens: state.t_current,
        residual_tokens: state.residual(),
        pool_docs: pool_docs as u64,
        eligible_docs: eligible.len() as u64,
        eligible_tokens: eligible.iter().sum(),
        doc_count: state.accepted.len() as u64,
        draws: state.draws,
        rejected_overshoot: state.rejected_overshoot_count,
        stop: state.stop,
        seed,
        dedup,
        accepted: state.accepted.clone(),
    }
}

fn empty_draw(target: u64) -> BudgetState {
    BudgetState {
        t_needed: target,
        t_current: 0,
        accepted: Vec::new(),
        accepted_indices: Vec::new(),
        forced: 0,
        draws: 0,
        rejected_overshoot_count: 0,
        stop: if target == 0 {
            StopReason::BudgetMet
        } else {
            StopReason::PoolExhausted
        },
    }
}

fn draw_news(
    config: &SamplingConfig,
    pool: &[DocRecord],
    target: u64,
    tokenizer: &Tokenizer,
    dedup: Option<DedupReport>,
) -> Result<(DomainDraw, Vec<usize>)> {
    let seed = derive_seed(config.seed, 1);
    let in_window: Vec<(usize, &DocRecord)> = pool
        .iter()
        .enumerate()
        .filter(|(_, d)| d.source == Source::News && config.cutoff.in_window(d.date()))
        .collect();
    let refs: Vec<&DocRecord> = in_window.iter().map(|(_, d)| *d).collect();
    let counts = token_counts(&refs, tokenizer);
    let keep: Vec<usize> = (0..refs.len()).filter(|&i| counts[i] > 0).collect();
    let eligible_tokens: Vec<u64> = keep.iter().map(|&i| counts[i]).collect();
    let origin: Vec<usize> = keep.iter().map(|&i| in_window[i].0).collect();

    let state = if keep.is_empty() {
        empty_draw(target)
    } else {
        let ages: Vec<(String, i64)> = keep
            .iter()
            .map(|&i| (refs[i].id.clone(), config.cutoff.age_days(refs[i].date())))
            .collect();
        let table = compute_weights(&ages, &config.cutoff)?;
        sample_to_budget(&table, &eligible_tokens, target, seed, SampleMode::WithoutReplacement)?
    };
    let account = account(target, pool.len(), &eligible_tokens, seed, dedup, &state);
    Ok((DomainDraw { state, account }, origin))
}

fn draw_wiki(
    config: &SamplingConfig,
    pool: &[DocRecord],
    vital_page_ids: &BTreeSet<u64>,
    target: u64,
    tokenizer: &Tokenizer,
    dedup: Option<DedupReport>,
) -> Result<(DomainDraw, Vec<usize>, VitalAccount)> {
    let seed = derive_seed(config.seed, 2);
    let cutoff = cutoff_instant(config.cutoff.cutoff_date);
    let candidates: Vec<(usize, &DocRecord)> = pool
        .iter()
        .enumerate()
        .filter(|(_, d)| d.source == Source::Wiki && d.timestamp <= cutoff)
        .collect();
    let refs: Vec<&DocRecord> = candidates.iter().map(|(_, d)| *d).collect();
    let counts = token_counts(&refs, tokenizer);
    let keep: Vec<usize> = (0..refs.len()).filter(|&i| counts[i] > 0).collect();
    let ids: Vec<String> = keep.iter().map(|&i| refs[i].id.clone()).collect();
    let eligible_tokens: Vec<u64> = keep.iter().map(|&i| counts[i]).collect();
    let origin: Vec<usize> = keep.iter().map(|&i| candidates[i].0).collect();

    let pool_ids: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let vital: HashSet<String> = vital_page_ids
        .iter()
        .map(|&p| SnapshotPage::doc_id(p))
        .filter(|id| pool_ids.contains(id.as_str()))
        .collect();
    let state = if ids.is_empty() {
        empty_draw(target)
    } else {
        wiki_select(&ids, &vital, target, &eligible_tokens, seed)?
    };
    let vital_account = VitalAccount {
        listed: vital_page_ids.len() as u64,
        present: vital.len() as u64,
        accepted: state.forced,
    };
    let account = account(target, pool.len(), &eligible_tokens, seed, dedup, &state);
    Ok((DomainDraw { state, account }, origin, vital_account))
}

/// Read a vital-article list: one page id per line, `#` starts a comment.
pub fn read_vital_ids(path: &Path) -> Result<BTreeSet<u64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let id = line
            .parse()
            .map_err(|_| Error::Invalid(format!("{}:{}: not a page id: {line:?}", path.display(), n + 1)))?;
        ids.insert(id);
    }
    Ok(ids)
}

/// Inputs to [`build_corpus`] beyond the config.
pub struct Pools<'a> {
    pub news: &'a [DocRecord],
    pub wiki: &'a [DocRecord],
    pub vital_page_ids: &'a BTreeSet<u64>,
    pub news_dedup: Option<DedupReport>,
    pub wiki_dedup: Option<DedupReport>,
}

/// Sample both domains and shuffle them into one corpus.
pub fn build_corpus(config: &SamplingConfig, pools: Pools<'_>, tokenizer: &Tokenizer) -> Result<Corpus> {
    config.validate()?;
    let (news_target, wiki_target) = config.targets();
    let (news, news_origin) = draw_news(config, pools.news, news_target, tokenizer, pools.news_dedup)?;
    let (wiki, wiki_origin, vital) = draw_wiki(
        config,
        pools.wiki,
        pools.vital_page_ids,
        wiki_target,
        tokenizer,
        pools.wiki_dedup,
    )?;

    let mut docs: Vec<DocRecord> = news
        .state
        .accepted_indices
        .iter()
        .map(|&i| pools.news[news_origin[i]].clone())
        .chain(
            wiki.state
                .accepted_indices
                .iter()
                .map(|&i| pools.wiki[wiki_origin[i]].clone()),
        )
        .collect();
    let shuffle_seed = derive_seed(config.seed, 3);
    docs.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));

    let mut flags = Vec::new();
    for (name, acc) in [("news", &news.account), ("wiki", &wiki.account)] {
        if (acc.achieved_tokens as f64) < (1.0 - SHORTFALL_WARNING) * acc.target_tokens as f64 {
            let msg = format!(
                "{name}: pool too small, achieved {} of {} target tokens",
                acc.achieved_tokens, acc.target_tokens
            );
            tracing::warn!(year = config.year, "{msg}");
            flags.push(msg);
        }
    }

    let corpus_sha256 = hex::encode(Sha256::digest(Corpus::to_jsonl(&docs)));
    let manifest = CorpusManifest {
        year: config.year,
        cutoff_date: config.cutoff.cutoff_date.to_string(),
        window_days: config.cutoff.window_days,
        tau_days: config.cutoff.tau_days,
        ratio_news: config.ratio_news,
        ratio_wiki: config.ratio_wiki,
        total_tokens: config.total_tokens,
        seed: config.seed,
        shuffle_seed,
        tokenizer_kind: tokenizer.kind_name().to_string(),
        tokenizer_digest: tokenizer.digest().to_string(),
        date_policy: config.date_policy.tag(),
        dedup_scope: "per-domain pool, before yearly windowing".to_string(),
        corpus_docs: docs.len() as u64,
        corpus_tokens: news.account.achieved_tokens + wiki.account.achieved_tokens,
        news: news.account,
        wiki: wiki.account,
        vital,
        corpus_sha256,
        flags,
        tool_version: crate::TOOL_VERSION.to_string(),
    };
    Ok(Corpus { docs, manifest })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub doc_id: String,
    /// Offset of the member's first token within the sequence.
    pub offset: usize,
    pub len: usize,
    /// Block index for documents split across sequences.
    pub part: usize,
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub tokens: Vec<u32>,
    pub members: Vec<Member>,
}

#[derive(Default)]
struct Packer {
    out: Vec<PackedSequence>,
    current: PackedSequence,
}

impl Packer {
    fn flush(&mut self) {
        if !self.current.tokens.is_empty() || !self.current.members.is_empty() {
            self.out.push(std::mem::replace(
                &mut self.current,
                PackedSequence {
                    tokens: Vec::new(),
                    members: Vec::new(),
                },
            ));
        }
    }

    fn push(&mut self, doc_id: &str, tokens: &[u32], part: usize, sep: u32) {
        if !self.current.members.is_empty() {
            self.current.tokens.push(sep);
        }
        self.current.members.push(Member {
            doc_id: doc_id.to_string(),
            offset: self.current.tokens.len(),
            len: tokens.len(),
            part,
        });
        self.current.tokens.extend_from_slice(tokens);
    }
}

/// Greedy in-order packing into sequences of at most `seq_len` tokens.
///
/// A document joins the open sequence (after one separator) when it fits,
/// otherwise the sequence is closed and the document starts a new one.
/// Documents longer than `seq_len` are cut into `seq_len` blocks, each its
/// own sequence; the final partial block stays open for later documents.
pub fn pack_sequences<'a, I>(docs: I, seq_len: usize, separator: u32) -> Result<Vec<PackedSequence>>
where
    I: IntoIterator<Item = (&'a str, &'a [u32])>,
{
    if seq_len == 0 {
        return Err(Error::Invalid("seq_len must be positive".into()));
    }
    let mut p = Packer::default();
    for (doc_id, tokens) in docs {
        let open = p.current.tokens.len();
        let fits = if p.current.members.is_empty() {
            tokens.len() <= seq_len
        } else {
            open + 1 + tokens.len() <= seq_len
        };
        if fits {
            p.push(doc_id, tokens, 0, separator);
            continue;
        }
        p.flush();
        let mut blocks = tokens.chunks(seq_len).enumerate().peekable();
        while let Some((part, block)) = blocks.next() {
            p.push(doc_id, block, part, separator);
            if blocks.peek().is_some() {
                p.flush();
            }
        }
    }
    p.flush();
    Ok(p.out)
}

/// Write sequences as concatenated little-endian u32 ids, with the
/// sequence lengths (little-endian u32) in `index`.
pub fn write_packed(sequences: &[PackedSequence], bin: &Path, index: &Path) -> Result<()> {
    let mut b = BufWriter::new(File::create(bin).map_err(|e| Error::io(bin, e))?);
    let mut x = BufWriter::new(File::create(index).map_err(|e| Error::io(index, e))?);
    for seq in sequences {
        for &t in &seq.tokens {
            b.write_all(&t.to_le_bytes()).map_err(|e| Error::io(bin, e))?;
        }
        let len = u32::try_from(seq.tokens.len())
            .map_err(|_| Error::Invalid("sequence longer than u32::MAX".into()))?;
        x.write_all(&len.to_le_bytes()).map_err(|e| Error::io(index, e))?;
    }
    b.flush().map_err(|e| Error::io(bin, e))?;
    x.flush().map_err(|e| Error::io(index, e))
}

/// Read back a packed file pair.
pub fn read_packed(bin: &Path, index: &Path) -> Result<Vec<Vec<u32>>> {
    let data = std::fs::read(bin).map_err(|e| Error::io(bin, e))?;
    let idx = std::fs::read(index).map_err(|e| Error::io(index, e))?;
    if data.len() % 4 != 0 || idx.len() % 4 != 0 {
        return Err(Error::Invalid("packed files are not a whole number of u32 words".into()));
    }
    let ids: Vec<u32> = data
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mut out = Vec::new();
    let mut at = 0usize;
    for c in idx.chunks_exact(4) {
        let len = u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize;
        let end = at + len;
        if end > ids.len() {
            return Err(Error::Invalid("index points past the end of the token file".into()));
        }
        out.push(ids[at..end].to_vec());
        at = end;
    }
    if at != ids.len() {
        return Err(Error::Invalid("token file has data beyond the index".into()));
    }
    Ok(out)
}
