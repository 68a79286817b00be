//! Temporal leakage measurements.
//!
//! Yearly unigram scorers with add-k smoothing stand in for yearly language
//! models. Zero-context perplexity of a term is `exp(-mean log p(x_i))` over
//! its tokens, each scored with no preceding context, normalized by the
//! number of tokens. A never-seen token scores `k / (N + kV)`, so every
//! report carries the ceiling `(N + kV) / k` next to its perplexity.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

pub const DEFAULT_K: f64 = 0.01;

/// A model that can score single tokens with an empty prefix.
pub trait ZeroContextModel {
    fn id(&self) -> &str;
    fn tokenizer(&self) -> &Tokenizer;
    /// `p(token | empty prefix)`, or `None` if the model cannot score it.
    fn token_probability(&self, token: &str) -> Option<f64>;
    /// Perplexity of a term made only of never-seen tokens, if defined.
    fn ceiling(&self) -> Option<f64>;
}

impl<T: ZeroContextModel + ?Sized> ZeroContextModel for Box<T> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn tokenizer(&self) -> &Tokenizer {
        (**self).tokenizer()
    }

    fn token_probability(&self, token: &str) -> Option<f64> {
        (**self).token_probability(token)
    }

    fn ceiling(&self) -> Option<f64> {
        (**self).ceiling()
    }
}

/// Unigram counts with add-k smoothing.
#[derive(Debug, Clone)]
pub struct Scorer {
    id: String,
    tokenizer: Arc<Tokenizer>,
    counts: HashMap<String, f64>,
    total: f64,
    k: f64,
    vocab_size: usize,
}

impl Scorer {
    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn count(&self, token: &str) -> f64 {
        self.counts.get(token).copied().unwrap_or(0.0)
    }

    pub fn distinct_tokens(&self) -> usize {
        self.counts.len()
    }

    pub fn seen_tokens(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn tokenizer_arc(&self) -> &Arc<Tokenizer> {
        &self.tokenizer
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Widen an open vocabulary to `vocab_size` types.
    pub fn with_vocab_size(mut self, vocab_size: usize) -> Result<Self> {
        if vocab_size < self.counts.len() {
            return Err(Error::Invalid(format!(
                "vocab size {vocab_size} is smaller than the {} observed token types",
                self.counts.len()
            )));
        }
        if let Some(closed) = self.tokenizer.scoring_vocab_size() {
            if vocab_size != closed {
                return Err(Error::Invalid(format!(
                    "tokenizer vocabulary is fixed at {closed} types"
                )));
            }
        }
        self.vocab_size = vocab_size;
        Ok(self)
    }

    pub fn probability(&self, token: &str) -> f64 {
        (self.count(token) + self.k) / (self.total + self.k * self.vocab_size as f64)
    }

    /// Probability of one never-seen token.
    pub fn unseen_probability(&self) -> f64 {
        self.k / (self.total + self.k * self.vocab_size as f64)
    }

    /// Sum of probabilities over the whole vocabulary.
    pub fn probability_mass(&self) -> f64 {
        let seen = crate::sampler::stable_sum(self.counts.keys().map(|t| self.probability(t)));
        seen + (self.vocab_size - self.counts.len()) as f64 * self.unseen_probability()
    }
}

impl ZeroContextModel for Scorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    fn token_probability(&self, token: &str) -> Option<f64> {
        Some(self.probability(token))
    }

    fn ceiling(&self) -> Option<f64> {
        Some(1.0 / self.unseen_probability())
    }
}

/// Count every token of `corpus`. The vocabulary is the tokenizer's when it
/// is closed (BPE), otherwise the observed token types.
pub fn train_scorer<'a>(
    id: impl Into<String>,
    corpus: impl IntoIterator<Item = &'a str>,
    tokenizer: Arc<Tokenizer>,
    k: f64,
) -> Result<Scorer> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::Invalid(format!("smoothing k must be positive (got {k})")));
    }
    let mut counts: HashMap<String, f64> = HashMap::new();
    let mut total = 0u64;
    for text in corpus {
        for tok in tokenizer.token_strings(text) {
            *counts.entry(tok).or_insert(0.0) += 1.0;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("scorer training corpus"));
    }
    let vocab_size = tokenizer.scoring_vocab_size().unwrap_or(counts.len());
    Ok(Scorer {
        id: id.into(),
        tokenizer,
        counts,
        total: total as f64,
        k,
        vocab_size,
    })
}

/// One scorer per year. Open vocabularies are widened to the union of all
/// years' token types so ceilings are comparable across years.
pub fn train_yearly_scorers<S: AsRef<str>>(
    corpora: &BTreeMap<i32, Vec<S>>,
    tokenizer: Arc<Tokenizer>,
    k: f64,
) -> Result<BTreeMap<i32, Scorer>> {
    let mut out = BTreeMap::new();
    for (year, docs) in corpora {
        let s = train_scorer(year.to_string(), docs.iter().map(AsRef::as_ref), tokenizer.clone(), k)?;
        out.insert(*year, s);
    }
    if tokenizer.scoring_vocab_size().is_none() {
        let union: HashSet<&str> = out.values().flat_map(|s| s.seen_tokens()).collect();
        let v = union.len();
        for s in out.values_mut() {
            s.vocab_size = v;
        }
    }
    Ok(out)
}

/// CTA scorers for every year: the `base_year` scorer adapted on each
/// year's own counts.
pub fn cta_scorers(yearly: &BTreeMap<i32, Scorer>, base_year: i32, alpha: f64) -> Result<BTreeMap<i32, Scorer>> {
    let base = yearly
        .get(&base_year)
        .ok_or_else(|| Error::Invalid(format!("no scorer for base year {base_year}")))?;
    yearly
        .iter()
        .map(|(y, s)| Ok((*y, cta_adapt(base, s, alpha)?.with_id(format!("cta-{base_year}:{y}")))))
        .collect()
}

/// Alpha matching the token mass of a further-training run to the base run.
pub fn default_alpha(adaptation_tokens: u64, base_tokens: u64) -> f64 {
    adaptation_tokens as f64 / base_tokens as f64
}

/// Count-space analog of further pre-training a base model on period data.
///
/// Effective counts are `(c_base + alpha * c_adapt) / (1 + alpha)`; the
/// division keeps the smoothing strength comparable, so adapting on the base
/// corpus itself changes nothing and large `alpha` tends to the adaptation
/// scorer.
pub fn cta_adapt(base: &Scorer, adaptation: &Scorer, alpha: f64) -> Result<Scorer> {
    if base.tokenizer.digest() != adaptation.tokenizer.digest() {
        return Err(Error::TokenizerMismatch {
            expected: base.tokenizer.digest().to_string(),
            found: adaptation.tokenizer.digest().to_string(),
        });
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Invalid(format!("alpha must be positive (got {alpha})")));
    }
    let norm = 1.0 + alpha;
    let mut counts: HashMap<String, f64> = HashMap::with_capacity(base.counts.len());
    for (t, c) in &base.counts {
        counts.insert(t.clone(), c / norm);
    }
    for (t, c) in &adaptation.counts {
        *counts.entry(t.clone()).or_insert(0.0) += alpha * c / norm;
    }
    let union = counts.len();
    Ok(Scorer {
        id: format!("cta({}<-{})", base.id, adaptation.id),
        tokenizer: base.tokenizer.clone(),
        total: (base.total + alpha * adaptation.total) / norm,
        k: base.k,
        vocab_size: base.vocab_size.max(adaptation.vocab_size).max(union),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub term: String,
    pub scorer: String,
    pub tokens: Vec<TokenScore>,
    pub token_count: usize,
    pub ppl: f64,
    pub ceiling: Option<f64>,
}

/// Perplexity of `term` with every token scored on an empty prefix.
pub fn zero_context_ppl(term: &str, model: &dyn ZeroContextModel) -> Result<PerplexityReport> {
    let tokens = model.tokenizer().token_strings(term);
    if tokens.is_empty() {
        return Err(Error::Invalid(format!("term {term:?} has no tokens")));
    }
    let mut scores = Vec::with_capacity(tokens.len());
    for token in tokens {
        let p = model.token_probability(&token).ok_or_else(|| {
            Error::Invalid(format!("scorer {} has no probability for {token:?}", model.id()))
        })?;
        scores.push(TokenScore {
            token,
            log_prob: p.ln(),
        });
    }
    let t = scores.len();
    let mean = scores.iter().map(|s| s.log_prob).sum::<f64>() / t as f64;
    Ok(PerplexityReport {
        term: term.to_string(),
        scorer: model.id().to_string(),
        tokens: scores,
        token_count: t,
        ppl: (-mean).exp(),
        ceiling: model.ceiling(),
    })
}

/// Probability table produced elsewhere, under the zero-context contract:
/// each value is `p(token | empty prefix)` for the declared tokenizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalScorerFile {
    pub id: String,
    pub tokenizer_digest: String,
    pub probabilities: BTreeMap<String, f64>,
    #[serde(default)]
    pub unseen_probability: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExternalScorer {
    file: ExternalScorerFile,
    tokenizer: Arc<Tokenizer>,
}

impl ExternalScorer {
    pub fn new(file: ExternalScorerFile, tokenizer: Arc<Tokenizer>) -> Result<Self> {
        if file.tokenizer_digest != tokenizer.digest() {
            return Err(Error::TokenizerMismatch {
                expected: tokenizer.digest().to_string(),
                found: file.tokenizer_digest,
            });
        }
        let bad = file
            .probabilities
            .iter()
            .find(|(_, p)| !(p.is_finite() && **p > 0.0 && **p <= 1.0));
        if let Some((tok, p)) = bad {
            return Err(Error::Invalid(format!("probability {p} for {tok:?} is not in (0, 1]")));
        }
        if let Some(p) = file.unseen_probability {
            if !(p.is_finite() && p > 0.0 && p <= 1.0) {
                return Err(Error::Invalid(format!("unseen_probability {p} is not in (0, 1]")));
            }
        }
        Ok(Self { file, tokenizer })
    }

    pub fn load(path: &Path, tokenizer: Arc<Tokenizer>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        Self::new(file, tokenizer)
    }
}

impl ZeroContextModel for ExternalScorer {
    fn id(&self) -> &str {
        &self.file.id
    }

    fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    fn token_probability(&self, token: &str) -> Option<f64> {
        self.file
            .probabilities
            .get(token)
            .copied()
            .or(self.file.unseen_probability)
    }

    fn ceiling(&self) -> Option<f64> {
        self.file.unseen_probability.map(|p| 1.0 / p)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub term: String,
    pub event_year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPpl {
    pub term: String,
    pub event_year: i32,
    pub scorer_year: i32,
    pub ppl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetSummary {
    pub offset: i32,
    pub count: usize,
    pub mean_ppl: Option<f64>,
    pub values: Vec<EventPpl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudy {
    pub offsets: Vec<OffsetSummary>,
}

impl EventStudy {
    pub fn mean_at(&self, offset: i32) -> Option<f64> {
        self.offsets
            .iter()
            .find(|o| o.offset == offset)
            .and_then(|o| o.mean_ppl)
    }
}

/// Mean with the sum held as exact partials and the division corrected by
/// its residual, so the result is the correctly rounded mean.
pub fn accurate_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for mut x in values {
        n += 1;
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    if n == 0 {
        return f64::NAN;
    }
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for &p in partials.iter().rev() {
        let s = hi + p;
        lo += p - (s - hi);
        hi = s;
    }
    let n = n as f64;
    let q = hi / n;
    let residual = (-q).mul_add(n, hi) + lo;
    q + residual / n
}

/// Mean zero-context perplexity of event terms at each offset from their
/// event year, skipping years without a scorer.
pub fn event_study<M: ZeroContextModel>(
    events: &[Event],
    scorers_by_year: &BTreeMap<i32, M>,
    offsets: &[i32],
) -> Result<EventStudy> {
    if events.is_empty() {
        return Err(Error::Empty("event list"));
    }
    let mut out = Vec::with_capacity(offsets.len());
    for &offset in offsets {
        let mut values = Vec::new();
        for ev in events {
            let year = ev.event_year + offset;
            if let Some(scorer) = scorers_by_year.get(&year) {
                let report = zero_context_ppl(&ev.term, scorer)?;
                values.push(EventPpl {
                    term: ev.term.clone(),
                    event_year: ev.event_year,
                    scorer_year: year,
                    ppl: report.ppl,
                });
            }
        }
        let mean_ppl = if values.is_empty() {
            None
        } else {
            Some(accurate_mean(values.iter().map(|v| v.ppl)))
        };
        out.push(OffsetSummary {
            offset,
            count: values.len(),
            mean_ppl,
            values,
        });
    }
    if out.iter().all(|o| o.count == 0) {
        return Err(Error::Invalid("no scorer covers any requested offset".into()));
    }
    Ok(EventStudy { offsets: out })
}

/// Non-overlapping occurrences of `term` in each year's documents.
pub fn count_occurrences<'a>(
    term: &str,
    corpus: impl IntoIterator<Item = (i32, &'a str)>,
    case_sensitive: bool,
) -> BTreeMap<i32, u64> {
    let needle = if case_sensitive {
        term.to_string()
    } else {
        term.to_lowercase()
    };
    let mut out = BTreeMap::new();
    for (year, text) in corpus {
        let n = if needle.is_empty() {
            0
        } else if case_sensitive {
            text.matches(needle.as_str()).count()
        } else {
            text.to_lowercase().matches(needle.as_str()).count()
        };
        *out.entry(year).or_insert(0) += n as u64;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmissionsReport {
    #[serde(with = "rust_decimal::serde::str")]
    pub energy_kwh: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub intensity_g_per_kwh: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub emissions_g: Decimal,
}

/// `energy × carbon intensity`, in exact decimal arithmetic.
pub fn emissions(energy_kwh: Decimal, intensity_g_per_kwh: Decimal) -> Result<EmissionsReport> {
    if energy_kwh.is_sign_negative() || intensity_g_per_kwh.is_sign_negative() {
        return Err(Error::Invalid("energy and intensity must be non-negative".into()));
    }
    let emissions_g = energy_kwh
        .checked_mul(intensity_g_per_kwh)
        .ok_or_else(|| Error::Invalid("emissions overflow".into()))?;
    Ok(EmissionsReport {
        energy_kwh,
        intensity_g_per_kwh,
        emissions_g,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplRow {
    pub term: String,
    pub year: i32,
    pub ppl: f64,
    pub ceiling: Option<f64>,
}

pub fn write_ppl_csv(rows: &[PplRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Invalid(format!("{}: {e}", path.display()))
}

/// Read an events CSV with `term,event_year` columns.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

/// Read a terms file, one term per line.
pub fn read_terms(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && seen.insert(l.to_string()))
        .map(str::to_owned)
        .collect())
}
