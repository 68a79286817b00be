//! Subcommands. Exit status: 0 on success, 1 on failure, 2 for usage
//! errors and invalid configs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use chronoforge_core::assembler::{
    build_corpus, pack_sequences, read_vital_ids, write_packed, Pools, SamplingConfig,
};
use chronoforge_core::dedup::dedup_stream;
use chronoforge_core::eval::{
    count_occurrences, cta_scorers, emissions, event_study, read_events, read_terms, train_yearly_scorers,
    write_ppl_csv, zero_context_ppl, ExternalScorer, PplRow, ZeroContextModel, DEFAULT_K,
};
use chronoforge_core::news::{DatePolicy, NewsReader, SplitMode};
use chronoforge_core::record::{read_jsonl, JsonlWriter};
use chronoforge_core::sampler::{
    compute_weights, sample_to_budget, wiki_select, CutoffSpec, SampleMode, DEFAULT_WINDOW_DAYS,
};
use chronoforge_core::tokenizer::{train_bpe, train_whitespace, DEFAULT_BPE_VOCAB};
use chronoforge_core::wiki::{cutoff_instant, stream_dump, DumpOptions, SnapshotPage};
use chronoforge_core::{DocRecord, Source, Tokenizer};
use rust_decimal::Decimal;
use serde::Serialize;

use crate::config::{self, validate_config};
use crate::pipeline::run_with_marker;

#[derive(Debug, Parser)]
#[command(name = "chronoforge", version, about = "Point-in-time corpus construction and leakage auditing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read raw sources into JSONL document records.
    #[command(subcommand)]
    Ingest(Ingest),
    /// Drop exact duplicate documents, keeping the first.
    Dedup(DedupArgs),
    /// Train or apply tokenizers.
    #[command(subcommand)]
    Tokenizer(TokenizerCmd),
    /// Sample a single domain pool to a token budget.
    Sample(SampleArgs),
    /// Build one yearly corpus from prepared pools.
    Assemble(AssembleArgs),
    /// Pack a corpus into fixed-length token sequences.
    Pack(PackArgs),
    /// Leakage measurements.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Run the whole pipeline from an experiment config.
    Run(RunArgs),
    /// Report every problem in an experiment config.
    Validate(ValidateArgs),
}

#[derive(Debug, Subcommand)]
pub enum Ingest {
    /// Snapshot a MediaWiki history dump at a cutoff.
    Wiki(IngestWikiArgs),
    /// Split one year of news files into documents.
    News(IngestNewsArgs),
}

#[derive(Debug, Args)]
pub struct IngestWikiArgs {
    #[arg(long)]
    pub dump: PathBuf,
    /// `YYYY` (meaning 31 December) or `YYYY-MM-DD`; inclusive to 23:59:59 UTC.
    #[arg(long, value_parser = parse_cutoff)]
    pub cutoff: NaiveDate,
    /// Namespaces to keep.
    #[arg(long = "ns", default_values_t = [0i64])]
    pub namespaces: Vec<i64>,
    /// Keep every namespace.
    #[arg(long, conflicts_with = "namespaces")]
    pub all_namespaces: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    BlankLine,
    PerLine,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DatePolicyArg {
    MidYear,
    Uniform,
}

#[derive(Debug, Args)]
pub struct IngestNewsArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long)]
    pub year: i32,
    #[arg(long, value_enum, default_value = "blank-line")]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value = "mid-year")]
    pub date_policy: DatePolicyArg,
    /// Seed for the uniform date policy.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    /// JSONL record files, read in the order given.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TokenizerKind {
    Bpe,
    Whitespace,
}

#[derive(Debug, Subcommand)]
pub enum TokenizerCmd {
    /// Learn a tokenizer from text or JSONL record files.
    Train(TokenizerTrainArgs),
    /// Count tokens in text or JSONL record files.
    Count(TokenizerCountArgs),
}

#[derive(Debug, Args)]
pub struct TokenizerTrainArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "bpe")]
    pub kind: TokenizerKind,
    /// Target BPE vocabulary size (at least 257).
    #[arg(long, default_value_t = DEFAULT_BPE_VOCAB)]
    pub vocab: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TokenizerCountArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DomainArg {
    News,
    Wiki,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// JSONL pool of document records.
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub budget: u64,
    #[arg(long)]
    pub seed: u64,
    /// Vital page-id list (wiki pools).
    #[arg(long)]
    pub vital: Option<PathBuf>,
    /// Defaults to the source of the pool's records.
    #[arg(long, value_enum)]
    pub domain: Option<DomainArg>,
    /// News cutoff, `YYYY` or `YYYY-MM-DD`.
    #[arg(long, value_parser = parse_cutoff)]
    pub cutoff: Option<NaiveDate>,
    #[arg(long, default_value_t = DEFAULT_WINDOW_DAYS)]
    pub window_days: u32,
    /// Defaults to the window length.
    #[arg(long)]
    pub tau_days: Option<f64>,
    /// Draw with replacement (for statistical checks).
    #[arg(long)]
    pub with_replacement: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    /// Sampling config JSON; its optional `tokenizer` key names the
    /// tokenizer spec, relative to the config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's tokenizer.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub news: PathBuf,
    #[arg(long)]
    pub wiki: PathBuf,
    #[arg(long)]
    pub vital: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also pack the corpus into sequences of this length.
    #[arg(long)]
    pub seq_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = chronoforge_core::assembler::DEFAULT_SEQ_LEN)]
    pub seq_len: usize,
    /// Output prefix; writes `<out>.bin`, `<out>.idx` and `<out>.members.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Zero-context perplexity of terms under yearly scorers.
    Ppl(PplArgs),
    /// Mean perplexity of event terms around their event year.
    EventStudy(EventStudyArgs),
    /// Occurrences of terms per year.
    Counts(CountsArgs),
    /// Emissions from energy use and grid carbon intensity.
    Emissions(EmissionsArgs),
}

#[derive(Debug, Clone)]
pub struct YearPath {
    pub year: i32,
    pub path: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScorerArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// `YEAR=corpus.jsonl`, repeatable.
    #[arg(long = "corpus", value_parser = parse_year_path)]
    pub corpora: Vec<YearPath>,
    /// `YEAR=scorer.json` probability tables used instead of trained scorers.
    #[arg(long = "external", value_parser = parse_year_path)]
    pub external: Vec<YearPath>,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: f64,
    /// Also score with CTA scorers built on this year's scorer.
    #[arg(long)]
    pub cta_base: Option<i32>,
    #[arg(long, default_value_t = crate::config::DEFAULT_ALPHA)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct PplArgs {
    #[command(flatten)]
    pub scorers: ScorerArgs,
    /// Terms file, one per line.
    #[arg(long)]
    pub terms: Option<PathBuf>,
    #[arg(long = "term")]
    pub term: Vec<String>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EventStudyArgs {
    #[command(flatten)]
    pub scorers: ScorerArgs,
    /// CSV with `term,event_year` columns.
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-3, -2, -1, 0, 1, 2, 3])]
    pub offsets: Vec<i32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountsArgs {
    #[arg(long = "corpus", required = true, value_parser = parse_year_path)]
    pub corpora: Vec<YearPath>,
    #[arg(long)]
    pub terms: Option<PathBuf>,
    #[arg(long = "term")]
    pub term: Vec<String>,
    #[arg(long)]
    pub case_insensitive: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmissionsArgs {
    #[arg(long)]
    pub energy_kwh: Decimal,
    /// Grid carbon intensity in gCO2eq/kWh.
    #[arg(long)]
    pub intensity: Decimal,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub total_tokens: Option<u64>,
    #[arg(long)]
    pub output_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
}

pub fn parse_cutoff(s: &str) -> Result<NaiveDate, String> {
    if let Ok(year) = s.parse::<i32>() {
        return NaiveDate::from_ymd_opt(year, 12, 31).ok_or_else(|| format!("bad year {s}"));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| format!("expected YYYY or YYYY-MM-DD: {e}"))
}

fn parse_year_path(s: &str) -> Result<YearPath, String> {
    let (y, p) = s.split_once('=').ok_or("expected YEAR=PATH")?;
    Ok(YearPath {
        year: y.parse().map_err(|_| format!("bad year {y:?}"))?,
        path: PathBuf::from(p),
    })
}

fn write_json_to<T: Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Texts of JSONL record files, or whole files for anything else.
fn read_texts(paths: &[PathBuf]) -> anyhow::Result<Vec<String>> {
    let mut out = Vec::new();
    for p in paths {
        if p.extension().is_some_and(|e| e == "jsonl") {
            out.extend(read_jsonl::<DocRecord>(p)?.into_iter().map(|d| d.text));
        } else {
            out.push(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?);
        }
    }
    Ok(out)
}

fn ingest_wiki(a: IngestWikiArgs) -> anyhow::Result<()> {
    let mut opts = DumpOptions::new(cutoff_instant(a.cutoff));
    opts.namespaces = if a.all_namespaces {
        BTreeSet::new()
    } else {
        a.namespaces.iter().copied().collect()
    };
    let file = std::fs::File::open(&a.dump).with_context(|| format!("opening {}", a.dump.display()))?;
    let mut stream = stream_dump(std::io::BufReader::with_capacity(1 << 20, file), opts);
    let mut w = JsonlWriter::create(&a.out)?;
    for page in stream.by_ref() {
        w.write(&page?.into_record())?;
    }
    w.finish()?;
    let stats = stream.stats();
    tracing::info!(stage = "ingest-wiki", emitted = stats.emitted, pages = stats.pages_seen, "snapshot written");
    if let Some(r) = &a.report {
        write_json_to(Some(r), stats)?;
    }
    Ok(())
}

fn ingest_news(a: IngestNewsArgs) -> anyhow::Result<()> {
    let split = match a.split {
        SplitArg::BlankLine => SplitMode::BlankLine,
        SplitArg::PerLine => SplitMode::PerLine,
    };
    let policy = match a.date_policy {
        DatePolicyArg::MidYear => DatePolicy::MidYear,
        DatePolicyArg::Uniform => DatePolicy::Uniform { seed: a.seed },
    };
    let mut reader = NewsReader::open(&a.dir, a.year, split)?;
    let mut w = JsonlWriter::create(&a.out)?;
    for doc in reader.by_ref() {
        w.write(&doc?.into_record(policy))?;
    }
    w.finish()?;
    let report = reader.into_report();
    tracing::info!(stage = "ingest-news", year = a.year, documents = report.documents, "news written");
    if let Some(r) = &a.report {
        write_json_to(Some(r), &report)?;
    }
    Ok(())
}

fn dedup(a: DedupArgs) -> anyhow::Result<()> {
    let mut docs = Vec::new();
    for p in &a.inputs {
        docs.extend(read_jsonl::<DocRecord>(p)?);
    }
    let mut stream = dedup_stream(docs, "files given to dedup");
    let mut w = JsonlWriter::create(&a.out)?;
    for d in stream.by_ref() {
        w.write(&d)?;
    }
    w.finish()?;
    let report = stream.into_report();
    tracing::info!(stage = "dedup", kept = report.kept, dropped = report.dropped, "deduplicated");
    if let Some(r) = &a.report {
        write_json_to(Some(r), &report)?;
    }
    Ok(())
}

fn tokenizer_cmd(cmd: TokenizerCmd) -> anyhow::Result<()> {
    match cmd {
        TokenizerCmd::Train(a) => {
            let texts = read_texts(&a.inputs)?;
            let refs = texts.iter().map(String::as_str);
            let spec = match a.kind {
                TokenizerKind::Bpe => train_bpe(refs, a.vocab)?,
                TokenizerKind::Whitespace => train_whitespace(refs),
            };
            Tokenizer::new(spec.clone())?;
            spec.save(&a.out)?;
            tracing::info!(stage = "tokenizer", digest = spec.digest(), "tokenizer written");
        }
        TokenizerCmd::Count(a) => {
            let tok = Tokenizer::load(&a.spec)?;
            let texts = read_texts(&a.inputs)?;
            let tokens: usize = texts.iter().map(|t| tok.count_tokens(t)).sum();
            write_json_to(
                None,
                &serde_json::json!({ "documents": texts.len(), "tokens": tokens, "tokenizer_digest": tok.digest() }),
            )?;
        }
    }
    Ok(())
}

fn sample(a: SampleArgs) -> anyhow::Result<()> {
    let tok = Tokenizer::load(&a.spec)?;
    let pool: Vec<DocRecord> = read_jsonl(&a.pool)?;
    let domain = match a.domain {
        Some(d) => d,
        None => match pool.first().map(|d| d.source) {
            Some(Source::Wiki) => DomainArg::Wiki,
            _ => DomainArg::News,
        },
    };
    let state = match domain {
        DomainArg::News => {
            let Some(date) = a.cutoff else { bail!("--cutoff is required for news pools") };
            let mut spec = CutoffSpec::with_window(date, a.window_days);
            if let Some(t) = a.tau_days {
                spec.tau_days = t;
            }
            let eligible: Vec<&DocRecord> = pool
                .iter()
                .filter(|d| spec.in_window(d.date()) && tok.count_tokens(&d.text) > 0)
                .collect();
            if eligible.is_empty() {
                bail!("no pool document falls in the window ending {date}");
            }
            let ages: Vec<(String, i64)> = eligible.iter().map(|d| (d.id.clone(), spec.age_days(d.date()))).collect();
            let counts: Vec<u64> = eligible.iter().map(|d| tok.count_tokens(&d.text) as u64).collect();
            let table = compute_weights(&ages, &spec)?;
            let mode = if a.with_replacement {
                SampleMode::WithReplacement
            } else {
                SampleMode::WithoutReplacement
            };
            sample_to_budget(&table, &counts, a.budget, a.seed, mode)?
        }
        DomainArg::Wiki => {
            let eligible: Vec<&DocRecord> = pool.iter().filter(|d| tok.count_tokens(&d.text) > 0).collect();
            let ids: Vec<String> = eligible.iter().map(|d| d.id.clone()).collect();
            let counts: Vec<u64> = eligible.iter().map(|d| tok.count_tokens(&d.text) as u64).collect();
            let in_pool: HashSet<&str> = ids.iter().map(String::as_str).collect();
            let vital: HashSet<String> = match &a.vital {
                Some(p) => read_vital_ids(p)?
                    .into_iter()
                    .map(SnapshotPage::doc_id)
                    .filter(|id| in_pool.contains(id.as_str()))
                    .collect(),
                None => HashSet::new(),
            };
            wiki_select(&ids, &vital, a.budget, &counts, a.seed)?
        }
    };
    tracing::info!(stage = "sample", accepted = state.accepted.len(), tokens = state.t_current, stop = ?state.stop, "sampled");
    write_json_to(Some(&a.out), &state)
}

fn assemble(a: AssembleArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    let named = value
        .as_object_mut()
        .and_then(|m| m.remove("tokenizer"))
        .and_then(|v| v.as_str().map(PathBuf::from))
        .map(|p| a.config.parent().unwrap_or(Path::new(".")).join(p));
    let config: SamplingConfig =
        serde_json::from_value(value).with_context(|| format!("parsing {}", a.config.display()))?;
    let Some(spec) = a.spec.clone().or(named) else {
        bail!("no tokenizer: give --spec or a \"tokenizer\" key in {}", a.config.display());
    };
    let tok = Tokenizer::load(&spec)?;
    let news: Vec<DocRecord> = read_jsonl(&a.news)?;
    let wiki: Vec<DocRecord> = read_jsonl(&a.wiki)?;
    let vital = match &a.vital {
        Some(p) => read_vital_ids(p)?,
        None => BTreeSet::new(),
    };
    let corpus = build_corpus(
        &config,
        Pools {
            news: &news,
            wiki: &wiki,
            vital_page_ids: &vital,
            news_dedup: None,
            wiki_dedup: None,
        },
        &tok,
    )?;
    corpus.write(&a.out_dir)?;
    if let Some(seq_len) = a.seq_len {
        pack_docs(&corpus.docs, &tok, seq_len, &a.out_dir.join("corpus"))?;
    }
    Ok(())
}

fn pack_docs(docs: &[DocRecord], tok: &Tokenizer, seq_len: usize, prefix: &Path) -> anyhow::Result<()> {
    let encoded: Vec<Vec<u32>> = docs.iter().map(|d| tok.encode(&d.text)).collect();
    let seqs = pack_sequences(
        docs.iter().zip(&encoded).map(|(d, t)| (d.id.as_str(), t.as_slice())),
        seq_len,
        tok.separator_id(),
    )?;
    let with = |ext: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    };
    write_packed(&seqs, &with(".bin"), &with(".idx"))?;
    let mut w = JsonlWriter::create(&with(".members.jsonl"))?;
    for s in &seqs {
        w.write(&s.members)?;
    }
    w.finish()?;
    tracing::info!(stage = "pack", sequences = seqs.len(), "packed");
    Ok(())
}

type YearlyModels = BTreeMap<i32, Box<dyn ZeroContextModel>>;

/// Point-in-time models, plus CTA models when a base year is given.
fn load_scorers(a: &ScorerArgs) -> anyhow::Result<(YearlyModels, Option<YearlyModels>)> {
    let tok = Arc::new(Tokenizer::load(&a.spec)?);
    if !a.external.is_empty() {
        if a.cta_base.is_some() {
            bail!("--cta-base needs trained scorers, not --external tables");
        }
        let mut out = YearlyModels::new();
        for yp in &a.external {
            out.insert(yp.year, Box::new(ExternalScorer::load(&yp.path, tok.clone())?));
        }
        return Ok((out, None));
    }
    if a.corpora.is_empty() {
        bail!("give --corpus YEAR=PATH or --external YEAR=PATH");
    }
    let mut corpora: BTreeMap<i32, Vec<String>> = BTreeMap::new();
    for yp in &a.corpora {
        corpora
            .entry(yp.year)
            .or_default()
            .extend(read_texts(std::slice::from_ref(&yp.path))?);
    }
    let scorers = train_yearly_scorers(&corpora, tok, a.k)?;
    let cta = match a.cta_base {
        Some(base) => Some(
            cta_scorers(&scorers, base, a.alpha)?
                .into_iter()
                .map(|(y, s)| (y, Box::new(s) as Box<dyn ZeroContextModel>))
                .collect(),
        ),
        None => None,
    };
    let pit = scorers
        .into_iter()
        .map(|(y, s)| (y, Box::new(s) as Box<dyn ZeroContextModel>))
        .collect();
    Ok((pit, cta))
}

fn collect_terms(file: &Option<PathBuf>, inline: &[String]) -> anyhow::Result<Vec<String>> {
    let mut terms = match file {
        Some(p) => read_terms(p)?,
        None => Vec::new(),
    };
    terms.extend(inline.iter().cloned());
    if terms.is_empty() {
        bail!("give --terms FILE or --term TERM");
    }
    Ok(terms)
}

#[derive(Serialize)]
struct LabeledRow<'a> {
    scorer: &'a str,
    term: String,
    year: i32,
    ppl: f64,
    ceiling: Option<f64>,
}

fn eval_cmd(cmd: EvalCmd) -> anyhow::Result<()> {
    match cmd {
        EvalCmd::Ppl(a) => {
            let terms = collect_terms(&a.terms, &a.term)?;
            let (pit, cta) = load_scorers(&a.scorers)?;
            let mut rows = Vec::new();
            for (label, set) in std::iter::once(("point-in-time", &pit)).chain(cta.as_ref().map(|c| ("cta", c))) {
                for term in &terms {
                    for (year, s) in set {
                        let r = zero_context_ppl(term, s.as_ref())?;
                        rows.push((label, PplRow { term: term.clone(), year: *year, ppl: r.ppl, ceiling: r.ceiling }));
                    }
                }
            }
            if cta.is_none() {
                let plain: Vec<PplRow> = rows.into_iter().map(|(_, r)| r).collect();
                match &a.out {
                    Some(p) => write_ppl_csv(&plain, p)?,
                    None => print_csv(plain.iter())?,
                }
            } else {
                let labeled: Vec<LabeledRow> = rows
                    .into_iter()
                    .map(|(scorer, r)| LabeledRow { scorer, term: r.term, year: r.year, ppl: r.ppl, ceiling: r.ceiling }).collect();
                match &a.out {
                    Some(p) => {
                        let f = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
                        write_csv(f, labeled.iter())?;
                    }
                    None => print_csv(labeled.iter())?,
                }
            }
        }
        EvalCmd::EventStudy(a) => {
            let events = read_events(&a.events)?;
            let (pit, cta) = load_scorers(&a.scorers)?;
            let mut report = serde_json::Map::new();
            report.insert("point_in_time".into(), serde_json::to_value(event_study(&events, &pit, &a.offsets)?)?);
            if let Some(c) = &cta {
                report.insert("cta".into(), serde_json::to_value(event_study(&events, c, &a.offsets)?)?);
            }
            write_json_to(a.out.as_deref(), &report)?;
        }
        EvalCmd::Counts(a) => {
            let terms = collect_terms(&a.terms, &a.term)?;
            let mut docs: Vec<(i32, String)> = Vec::new();
            for yp in &a.corpora {
                for t in read_texts(std::slice::from_ref(&yp.path))? {
                    docs.push((yp.year, t));
                }
            }
            let counts: BTreeMap<&str, BTreeMap<i32, u64>> = terms
                .iter()
                .map(|t| {
                    let it = docs.iter().map(|(y, d)| (*y, d.as_str()));
                    (t.as_str(), count_occurrences(t, it, !a.case_insensitive))
                })
                .collect();
            write_json_to(a.out.as_deref(), &counts)?;
        }
        EvalCmd::Emissions(a) => {
            write_json_to(None, &emissions(a.energy_kwh, a.intensity)?)?;
        }
    }
    Ok(())
}

fn write_csv<W: Write, T: Serialize>(w: W, rows: impl Iterator<Item = T>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn print_csv<T: Serialize>(rows: impl Iterator<Item = T>) -> anyhow::Result<()> {
    write_csv(std::io::stdout().lock(), rows)
}

fn run(a: RunArgs) -> anyhow::Result<ExitCode> {
    let mut loaded = config::load(&a.config)?;
    if let Some(s) = a.seed {
        loaded.config.seed = s;
    }
    if let Some(t) = a.total_tokens {
        loaded.config.total_tokens = t;
    }
    if let Some(o) = a.output_root {
        loaded.config.paths.output_root = o;
    }
    let summary = run_with_marker(&loaded)?;
    write_json_to(
        None,
        &serde_json::json!({ "stages": summary.stages, "skipped": summary.skipped }),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn validate(a: ValidateArgs) -> anyhow::Result<ExitCode> {
    let diagnostics = validate_config(&a.config)?;
    let mut out = std::io::stdout().lock();
    for d in &diagnostics {
        writeln!(out, "{}", serde_json::to_string(d)?)?;
    }
    Ok(if diagnostics.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

pub fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Ingest(Ingest::Wiki(a)) => ingest_wiki(a)?,
        Command::Ingest(Ingest::News(a)) => ingest_news(a)?,
        Command::Dedup(a) => dedup(a)?,
        Command::Tokenizer(c) => tokenizer_cmd(c)?,
        Command::Sample(a) => sample(a)?,
        Command::Assemble(a) => assemble(a)?,
        Command::Pack(a) => {
            let tok = Tokenizer::load(&a.spec)?;
            let docs: Vec<DocRecord> = read_jsonl(&a.input)?;
            pack_docs(&docs, &tok, a.seq_len, &a.out)?;
        }
        Command::Eval(c) => eval_cmd(c)?,
        Command::Run(a) => return run(a),
        Command::Validate(a) => return validate(a),
    }
    Ok(ExitCode::SUCCESS)
}
