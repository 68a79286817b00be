//! Experiment configuration and its validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chronoforge_core::assembler::{DEFAULT_RATIO_NEWS, DEFAULT_RATIO_WIKI, DEFAULT_SEQ_LEN};
use chronoforge_core::eval::DEFAULT_K;
use chronoforge_core::news::{DatePolicy, SplitMode};
use chronoforge_core::sampler::DEFAULT_WINDOW_DAYS;
use chronoforge_core::tokenizer::{DEFAULT_BPE_VOCAB, MIN_BPE_VOCAB};
use serde::{Deserialize, Serialize};

/// Years of news preceding the first configured year that feed its window.
pub const NEWS_LOOKBACK_YEARS: i32 = 4;

/// Adaptation-to-base token ratio used when neither `alpha` nor
/// `adaptation_tokens` is given (1B further-training tokens on a 2.5B base).
pub const DEFAULT_ALPHA: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub wiki_dump: PathBuf,
    /// Contains one directory per year, named by the year.
    pub news_root: PathBuf,
    /// Contains `vital_<year>.txt` page-id lists.
    #[serde(default)]
    pub vital_dir: Option<PathBuf>,
    pub output_root: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffOverride {
    #[serde(default)]
    pub window_days: Option<u32>,
    #[serde(default)]
    pub tau_days: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerKind {
    Bpe,
    Whitespace,
}

/// Retrain a tokenizer for each year on that year's pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerTraining {
    pub kind: TokenizerKind,
    #[serde(default = "default_vocab")]
    pub vocab_size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub terms: Option<PathBuf>,
    #[serde(default)]
    pub events: Option<PathBuf>,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Token size of the adaptation corpus; `alpha` defaults to this over
    /// `total_tokens`.
    #[serde(default)]
    pub adaptation_tokens: Option<u64>,
    /// CTA base year; defaults to the last configured year.
    #[serde(default)]
    pub base_year: Option<i32>,
    #[serde(default = "default_offsets")]
    pub offsets: Vec<i32>,
    #[serde(default = "yes")]
    pub case_sensitive: bool,
}

impl EvalConfig {
    pub fn alpha(&self, total_tokens: u64) -> f64 {
        match (self.alpha, self.adaptation_tokens) {
            (Some(a), _) => a,
            (None, Some(t)) => chronoforge_core::eval::default_alpha(t, total_tokens),
            (None, None) => DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub years: Vec<i32>,
    pub total_tokens: u64,
    #[serde(default = "default_ratio_news")]
    pub ratio_news: f64,
    #[serde(default = "default_ratio_wiki")]
    pub ratio_wiki: f64,
    pub seed: u64,
    #[serde(default = "default_window")]
    pub window_days: u32,
    /// Defaults to `window_days`.
    #[serde(default)]
    pub tau_days: Option<f64>,
    #[serde(default)]
    pub cutoff_overrides: BTreeMap<i32, CutoffOverride>,
    #[serde(default = "default_policy")]
    pub date_policy: DatePolicy,
    #[serde(default = "default_split")]
    pub news_split: SplitMode,
    #[serde(default = "default_namespaces")]
    pub namespaces: Vec<i64>,
    /// Packed sequence length; 0 disables packing.
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    /// Shared tokenizer for every year.
    #[serde(default)]
    pub tokenizer: Option<PathBuf>,
    /// Per-year tokenizers instead of a shared one.
    #[serde(default)]
    pub tokenizer_per_year: Option<TokenizerTraining>,
    pub paths: Paths,
    #[serde(default)]
    pub eval: Option<EvalConfig>,
}

fn default_vocab() -> u32 {
    DEFAULT_BPE_VOCAB
}
fn default_k() -> f64 {
    DEFAULT_K
}
fn default_offsets() -> Vec<i32> {
    (-3..=3).collect()
}
fn yes() -> bool {
    true
}
fn default_ratio_news() -> f64 {
    DEFAULT_RATIO_NEWS
}
fn default_ratio_wiki() -> f64 {
    DEFAULT_RATIO_WIKI
}
fn default_window() -> u32 {
    DEFAULT_WINDOW_DAYS
}
fn default_policy() -> DatePolicy {
    DatePolicy::MidYear
}
fn default_split() -> SplitMode {
    SplitMode::BlankLine
}
fn default_namespaces() -> Vec<i64> {
    vec![0]
}
fn default_seq_len() -> usize {
    DEFAULT_SEQ_LEN
}

/// One problem found in a config, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn diag(out: &mut Vec<Diagnostic>, field: impl Into<String>, message: impl Into<String>) {
    out.push(Diagnostic {
        field: field.into(),
        message: message.into(),
    });
}

/// A parsed config with relative paths resolved against its directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_root(&self) -> PathBuf {
        self.resolve(&self.config.paths.output_root)
    }

    pub fn news_dir(&self, year: i32) -> PathBuf {
        self.resolve(&self.config.paths.news_root).join(year.to_string())
    }

    pub fn vital_file(&self, year: i32) -> Option<PathBuf> {
        self.config
            .paths
            .vital_dir
            .as_ref()
            .map(|d| self.resolve(d).join(format!("vital_{year}.txt")))
    }

    /// First year of news needed to fill the earliest window.
    pub fn news_years(&self) -> std::ops::RangeInclusive<i32> {
        let c = &self.config;
        let first = c.years.first().copied().unwrap_or_default();
        let last = c.years.last().copied().unwrap_or_default();
        first - NEWS_LOOKBACK_YEARS..=last
    }
}

/// Read a config file. Fails only when the file cannot be read or is not
/// a config; field problems are reported by [`diagnose`].
pub fn load(path: &Path) -> anyhow::Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig { config, base_dir })
}

/// Every schema and invariant violation, not just the first.
pub fn validate_config(path: &Path) -> anyhow::Result<Vec<Diagnostic>> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    match serde_json::from_str::<ExperimentConfig>(&text) {
        Err(e) => Ok(vec![Diagnostic {
            field: "(schema)".into(),
            message: e.to_string(),
        }]),
        Ok(_) => Ok(diagnose(&load(path)?)),
    }
}

pub fn diagnose(loaded: &LoadedConfig) -> Vec<Diagnostic> {
    let c = &loaded.config;
    let mut out = Vec::new();
    if c.years.is_empty() {
        diag(&mut out, "years", "at least one year is required");
    }
    if c.years.windows(2).any(|w| w[0] >= w[1]) {
        diag(&mut out, "years", "years must be strictly increasing");
    }
    let ratios_positive = c.ratio_news.is_finite() && c.ratio_wiki.is_finite() && c.ratio_news > 0.0 && c.ratio_wiki > 0.0;
    if !(c.ratio_news.is_finite() && c.ratio_news > 0.0) {
        diag(&mut out, "ratio_news", format!("must be > 0 (got {})", c.ratio_news));
    }
    if !(c.ratio_wiki.is_finite() && c.ratio_wiki > 0.0) {
        diag(&mut out, "ratio_wiki", format!("must be > 0 (got {})", c.ratio_wiki));
    }
    if ratios_positive && (c.ratio_news + c.ratio_wiki - 1.0).abs() > 1e-9 {
        diag(
            &mut out,
            "ratio_news+ratio_wiki",
            format!("must sum to 1 (got {})", c.ratio_news + c.ratio_wiki),
        );
    }
    if c.total_tokens == 0 {
        diag(&mut out, "total_tokens", "must be > 0");
    }
    if c.window_days == 0 {
        diag(&mut out, "window_days", "must be > 0");
    }
    if let Some(t) = c.tau_days {
        if !(t.is_finite() && t > 0.0) {
            diag(&mut out, "tau_days", format!("must be > 0 (got {t})"));
        }
    }
    for (year, o) in &c.cutoff_overrides {
        if !c.years.contains(year) {
            diag(&mut out, format!("cutoff_overrides.{year}"), "year is not in `years`");
        }
        if o.window_days == Some(0) {
            diag(&mut out, format!("cutoff_overrides.{year}.window_days"), "must be > 0");
        }
        if let Some(t) = o.tau_days {
            if !(t.is_finite() && t > 0.0) {
                diag(&mut out, format!("cutoff_overrides.{year}.tau_days"), "must be > 0");
            }
        }
    }
    let must_exist = |out: &mut Vec<Diagnostic>, field: &str, p: &Path, dir: bool| {
        let full = loaded.resolve(p);
        let ok = if dir { full.is_dir() } else { full.is_file() };
        if !ok {
            let kind = if dir { "directory" } else { "file" };
            diag(out, field, format!("{kind} {} does not exist", full.display()));
        }
        ok
    };
    match (&c.tokenizer, &c.tokenizer_per_year) {
        (Some(t), None) => {
            must_exist(&mut out, "tokenizer", t, false);
        }
        (None, Some(t)) => {
            if t.kind == TokenizerKind::Bpe && t.vocab_size < MIN_BPE_VOCAB {
                let msg = format!("must be at least {MIN_BPE_VOCAB} (got {})", t.vocab_size);
                diag(&mut out, "tokenizer_per_year.vocab_size", msg);
            }
        }
        _ => diag(&mut out, "tokenizer", "set exactly one of tokenizer and tokenizer_per_year"),
    }
    must_exist(&mut out, "paths.wiki_dump", &c.paths.wiki_dump, false);
    if must_exist(&mut out, "paths.news_root", &c.paths.news_root, true) {
        for year in &c.years {
            if !loaded.news_dir(*year).is_dir() {
                diag(&mut out, "paths.news_root", format!("no news directory for {year}"));
            }
        }
    }
    if let Some(v) = &c.paths.vital_dir {
        if must_exist(&mut out, "paths.vital_dir", v, true) {
            for year in &c.years {
                let f = loaded.vital_file(*year).expect("vital dir set");
                if !f.is_file() {
                    diag(&mut out, "paths.vital_dir", format!("missing {}", f.display()));
                }
            }
        }
    }
    if c.paths.output_root.as_os_str().is_empty() {
        diag(&mut out, "paths.output_root", "must not be empty");
    }
    if c.namespaces.is_empty() {
        diag(&mut out, "namespaces", "at least one namespace is required");
    }
    if let Some(e) = &c.eval {
        if e.terms.is_none() && e.events.is_none() {
            diag(&mut out, "eval", "needs `terms`, `events` or both");
        }
        if let Some(t) = &e.terms {
            must_exist(&mut out, "eval.terms", t, false);
        }
        if let Some(t) = &e.events {
            must_exist(&mut out, "eval.events", t, false);
        }
        if !(e.k.is_finite() && e.k > 0.0) {
            diag(&mut out, "eval.k", format!("must be > 0 (got {})", e.k));
        }
        if let Some(a) = e.alpha {
            if !(a.is_finite() && a > 0.0) {
                diag(&mut out, "eval.alpha", format!("must be > 0 (got {a})"));
            }
        }
        if e.adaptation_tokens == Some(0) {
            diag(&mut out, "eval.adaptation_tokens", "must be > 0");
        }
        if let Some(b) = e.base_year {
            if !c.years.contains(&b) {
                diag(&mut out, "eval.base_year", format!("{b} is not in `years`"));
            }
        }
        if e.offsets.is_empty() {
            diag(&mut out, "eval.offsets", "at least one offset is required");
        }
    }
    out
}
