//! End-to-end yearly corpus construction.
//!
//! Output layout under `output_root`:
//!
//! ```text
//! news/pool.jsonl            deduplicated news from every needed year
//! news/ingest_report.json
//! news/dedup_report.json
//! <year>/wiki_snapshot.jsonl pages as of the year's cutoff, deduplicated
//! <year>/wiki_report.json
//! <year>/tokenizer.json      when tokenizers are trained per year
//! <year>/corpus.jsonl        final shuffled corpus
//! <year>/manifest.json
//! <year>/corpus.bin|.idx     packed token sequences (when seq_len > 0)
//! eval/...                   leakage reports (when configured)
//! stages/<stage>.json        input/output digests of each stage
//! run_manifest.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use chrono::{Datelike, NaiveDate};
use chronoforge_core::assembler::{build_corpus, pack_sequences, read_vital_ids, write_packed, Pools, SamplingConfig};
use chronoforge_core::dedup::{DedupReport, DigestIndex};
use chronoforge_core::eval::{
    count_occurrences, cta_scorers, event_study, read_events, read_terms, train_scorer, train_yearly_scorers, write_ppl_csv,
    zero_context_ppl, EventStudy, PplRow, Scorer,
};
use chronoforge_core::news::{year_files, NewsIngestReport, NewsReader};
use chronoforge_core::record::{read_jsonl, JsonlWriter};
use chronoforge_core::sampler::CutoffSpec;
use chronoforge_core::tokenizer::{train_bpe, train_whitespace};
use chronoforge_core::wiki::{cutoff_instant, stream_dump, DumpOptions, IngestStats};
use chronoforge_core::{DocRecord, Tokenizer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{diagnose, ExperimentConfig, LoadedConfig, TokenizerKind, TokenizerTraining};
use crate::stage::StageRunner;

pub const FAILED_MARKER: &str = "FAILED";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikiReport {
    pub year: i32,
    pub cutoff: String,
    pub ingest: IngestStats,
    pub dedup: DedupReport,
    /// Snapshot count by year of the chosen revision.
    pub revision_years: BTreeMap<i32, u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest<'a> {
    pub tool_version: &'a str,
    pub years: &'a [i32],
    pub config: &'a ExperimentConfig,
    pub stage_records: &'a [String],
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    /// Stage names in run order.
    pub stages: Vec<String>,
    pub skipped: Vec<String>,
}

pub fn sampling_config(c: &ExperimentConfig, year: i32) -> SamplingConfig {
    let date = NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year");
    let o = c.cutoff_overrides.get(&year);
    let window = o.and_then(|o| o.window_days).unwrap_or(c.window_days);
    let mut cutoff = CutoffSpec::with_window(date, window);
    if let Some(t) = o.and_then(|o| o.tau_days).or(c.tau_days) {
        cutoff.tau_days = t;
    }
    SamplingConfig {
        year,
        cutoff,
        ratio_news: c.ratio_news,
        ratio_wiki: c.ratio_wiki,
        total_tokens: c.total_tokens,
        seed: c.seed,
        date_policy: c.date_policy,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn mkdir(p: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

struct Ctx<'a> {
    loaded: &'a LoadedConfig,
    out: PathBuf,
    /// The shared tokenizer; `None` when each year trains its own.
    shared: Option<(PathBuf, Arc<Tokenizer>)>,
}

impl Ctx<'_> {
    fn tokenizer_path(&self, year: i32) -> PathBuf {
        match &self.shared {
            Some((p, _)) => p.clone(),
            None => self.year_dir(year).join("tokenizer.json"),
        }
    }
    fn tokenizer(&self, year: i32) -> anyhow::Result<Arc<Tokenizer>> {
        match &self.shared {
            Some((_, t)) => Ok(t.clone()),
            None => Ok(Arc::new(Tokenizer::load(&self.tokenizer_path(year))?)),
        }
    }
    fn config(&self) -> &ExperimentConfig {
        &self.loaded.config
    }
    fn year_dir(&self, year: i32) -> PathBuf {
        self.out.join(year.to_string())
    }
    fn news_pool(&self) -> PathBuf {
        self.out.join("news/pool.jsonl")
    }
    fn news_dedup(&self) -> PathBuf {
        self.out.join("news/dedup_report.json")
    }
}

fn news_stage(ctx: &Ctx, runner: &mut StageRunner) -> anyhow::Result<()> {
    let c = ctx.config();
    let mut inputs = Vec::new();
    let mut dirs = Vec::new();
    for year in ctx.loaded.news_years() {
        let dir = ctx.loaded.news_dir(year);
        if dir.is_dir() {
            inputs.extend(year_files(&dir)?);
            dirs.push((year, dir));
        } else {
            tracing::warn!(stage = "news", year, "no news directory; window starts later");
        }
    }
    let params = serde_json::json!({
        "years": dirs.iter().map(|(y, _)| *y).collect::<Vec<_>>(),
        "split": c.news_split,
        "date_policy": c.date_policy,
    });
    runner.run("news", &inputs, params, || {
        let dir = ctx.out.join("news");
        mkdir(&dir)?;
        let pool = ctx.news_pool();
        let mut w = JsonlWriter::create(&pool)?;
        let mut index = DigestIndex::new("news pool, all years");
        let mut reports: Vec<NewsIngestReport> = Vec::new();
        for (year, d) in &dirs {
            let mut reader = NewsReader::open(d, *year, c.news_split)?;
            for doc in reader.by_ref() {
                let rec = doc?.into_record(c.date_policy);
                if index.insert(&rec) {
                    w.write(&rec).with_context(|| format!("writing {}", pool.display()))?;
                }
            }
            let report = reader.into_report();
            tracing::info!(stage = "news", year, documents = report.documents, dropped_invalid_utf8 = report.dropped_invalid_utf8, "ingested");
            reports.push(report);
        }
        w.finish()?;
        let dedup = index.into_report();
        tracing::info!(stage = "news", kept = dedup.kept, dropped = dedup.dropped, "deduplicated");
        let ingest = dir.join("ingest_report.json");
        write_json(&ingest, &reports)?;
        write_json(&ctx.news_dedup(), &dedup)?;
        Ok(vec![pool, ingest, ctx.news_dedup()])
    })
}

fn wiki_stage(ctx: &Ctx, runner: &mut StageRunner, year: i32) -> anyhow::Result<()> {
    let c = ctx.config();
    let dump = ctx.loaded.resolve(&c.paths.wiki_dump);
    let cutoff = cutoff_instant(NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year"));
    let params = serde_json::json!({ "cutoff": cutoff.to_rfc3339(), "namespaces": c.namespaces });
    runner.run(&format!("wiki-{year}"), std::slice::from_ref(&dump), params, || {
        let dir = ctx.year_dir(year);
        mkdir(&dir)?;
        let mut opts = DumpOptions::new(cutoff);
        opts.namespaces = c.namespaces.iter().copied().collect();
        let file = File::open(&dump).with_context(|| format!("opening {}", dump.display()))?;
        let mut stream = stream_dump(BufReader::with_capacity(1 << 20, file), opts);
        let snapshot = dir.join("wiki_snapshot.jsonl");
        let mut w = JsonlWriter::create(&snapshot)?;
        let mut index = DigestIndex::new("wiki snapshot");
        let mut revision_years = BTreeMap::new();
        for page in stream.by_ref() {
            let page = page?;
            *revision_years.entry(page.timestamp.year()).or_insert(0) += 1;
            let rec = page.into_record();
            if index.insert(&rec) {
                w.write(&rec)?;
            }
        }
        w.finish()?;
        let report = WikiReport {
            year,
            cutoff: cutoff.to_rfc3339(),
            ingest: stream.stats().clone(),
            dedup: index.into_report(),
            revision_years,
        };
        tracing::info!(stage = "wiki", year, emitted = report.ingest.emitted, flagged = report.ingest.flagged_pages.len(), "snapshot");
        let report_path = dir.join("wiki_report.json");
        write_json(&report_path, &report)?;
        Ok(vec![snapshot, report_path])
    })
}

fn tokenizer_stage(ctx: &Ctx, runner: &mut StageRunner, year: i32, training: TokenizerTraining) -> anyhow::Result<()> {
    let dir = ctx.year_dir(year);
    let sampling = sampling_config(ctx.config(), year);
    let inputs = [ctx.news_pool(), dir.join("wiki_snapshot.jsonl")];
    let params = serde_json::json!({ "training": training, "cutoff": sampling.cutoff });
    runner.run(&format!("tokenizer-{year}"), &inputs, params, || {
        let news: Vec<DocRecord> = read_jsonl(&ctx.news_pool())?;
        let wiki: Vec<DocRecord> = read_jsonl(&dir.join("wiki_snapshot.jsonl"))?;
        let texts = news
            .iter()
            .filter(|d| sampling.cutoff.in_window(d.date()))
            .chain(&wiki)
            .map(|d| d.text.as_str());
        let spec = match training.kind {
            TokenizerKind::Bpe => train_bpe(texts, training.vocab_size)?,
            TokenizerKind::Whitespace => train_whitespace(texts),
        };
        let path = ctx.tokenizer_path(year);
        spec.save(&path)?;
        tracing::info!(stage = "tokenizer", year, digest = spec.digest(), "tokenizer trained");
        Ok(vec![path])
    })
}

fn assemble_stage(ctx: &Ctx, runner: &mut StageRunner, year: i32) -> anyhow::Result<()> {
    let c = ctx.config();
    let dir = ctx.year_dir(year);
    let sampling = sampling_config(c, year);
    let vital_file = ctx.loaded.vital_file(year);
    let mut inputs = vec![
        ctx.news_pool(),
        ctx.news_dedup(),
        dir.join("wiki_snapshot.jsonl"),
        dir.join("wiki_report.json"),
        ctx.tokenizer_path(year),
    ];
    inputs.extend(vital_file.clone());
    let params = serde_json::json!({ "sampling": sampling, "seq_len": c.seq_len });
    runner.run(&format!("assemble-{year}"), &inputs, params, || {
        let news: Vec<DocRecord> = read_jsonl::<DocRecord>(&ctx.news_pool())?
            .into_iter()
            .filter(|d| sampling.cutoff.in_window(d.date()))
            .collect();
        let wiki: Vec<DocRecord> = read_jsonl(&dir.join("wiki_snapshot.jsonl"))?;
        let news_dedup: DedupReport = read_json(&ctx.news_dedup())?;
        let wiki_report: WikiReport = read_json(&dir.join("wiki_report.json"))?;
        let vital = match &vital_file {
            Some(f) => read_vital_ids(f)?,
            None => BTreeSet::new(),
        };
        let pools = Pools {
            news: &news,
            wiki: &wiki,
            vital_page_ids: &vital,
            news_dedup: Some(news_dedup),
            wiki_dedup: Some(wiki_report.dedup),
        };
        let tokenizer = ctx.tokenizer(year)?;
        let corpus = build_corpus(&sampling, pools, &tokenizer)?;
        for flag in &corpus.manifest.flags {
            tracing::warn!(stage = "assemble", year, "{flag}");
        }
        corpus.write(&dir)?;
        tracing::info!(
            stage = "assemble",
            year,
            docs = corpus.manifest.corpus_docs,
            tokens = corpus.manifest.corpus_tokens,
            news_tokens = corpus.manifest.news.achieved_tokens,
            wiki_tokens = corpus.manifest.wiki.achieved_tokens,
            "corpus written"
        );
        let mut written = vec![dir.join("corpus.jsonl"), dir.join("manifest.json")];
        if c.seq_len > 0 {
            let encoded: Vec<Vec<u32>> = corpus.docs.par_iter().map(|d| tokenizer.encode(&d.text)).collect();
            let seqs = pack_sequences(
                corpus.docs.iter().zip(&encoded).map(|(d, t)| (d.id.as_str(), t.as_slice())),
                c.seq_len,
                tokenizer.separator_id(),
            )?;
            let (bin, idx) = (dir.join("corpus.bin"), dir.join("corpus.idx"));
            write_packed(&seqs, &bin, &idx)?;
            written.extend([bin, idx]);
        }
        Ok(written)
    })
}

#[derive(Debug, Serialize)]
struct EventStudyReport {
    base_year: i32,
    alpha: f64,
    point_in_time: EventStudy,
    cta: EventStudy,
}

fn ppl_rows(terms: &[String], scorers: &BTreeMap<i32, Scorer>) -> anyhow::Result<Vec<PplRow>> {
    let mut rows = Vec::new();
    for term in terms {
        for (year, s) in scorers {
            let r = zero_context_ppl(term, s)?;
            rows.push(PplRow {
                term: term.clone(),
                year: *year,
                ppl: r.ppl,
                ceiling: r.ceiling,
            });
        }
    }
    Ok(rows)
}

fn eval_stage(ctx: &Ctx, runner: &mut StageRunner) -> anyhow::Result<()> {
    let c = ctx.config();
    let Some(e) = &c.eval else { return Ok(()) };
    let base_year = e.base_year.unwrap_or(*c.years.last().expect("validated"));
    let alpha = e.alpha(c.total_tokens);
    let terms_path = e.terms.as_ref().map(|p| ctx.loaded.resolve(p));
    let events_path = e.events.as_ref().map(|p| ctx.loaded.resolve(p));
    let mut inputs: Vec<PathBuf> = c.years.iter().map(|y| ctx.year_dir(*y).join("corpus.jsonl")).collect();
    let tokenizers: BTreeSet<PathBuf> = c.years.iter().map(|y| ctx.tokenizer_path(*y)).collect();
    inputs.extend(tokenizers);
    inputs.extend(terms_path.clone());
    inputs.extend(events_path.clone());
    let params = serde_json::json!({ "eval": e, "alpha": alpha, "base_year": base_year });
    runner.run("eval", &inputs, params, || {
        let dir = ctx.out.join("eval");
        mkdir(&dir)?;
        let mut corpora: BTreeMap<i32, Vec<String>> = BTreeMap::new();
        for year in &c.years {
            let docs: Vec<DocRecord> = read_jsonl(&ctx.year_dir(*year).join("corpus.jsonl"))?;
            corpora.insert(*year, docs.into_iter().map(|d| d.text).collect());
        }
        // CTA adapts the base-year model, so every year is counted with the
        // base-year tokenizer; point-in-time scorers use their own year's.
        let family = train_yearly_scorers(&corpora, ctx.tokenizer(base_year)?, e.k)?;
        let cta = cta_scorers(&family, base_year, alpha)?;
        let scorers = if ctx.shared.is_some() {
            family
        } else {
            let mut own = BTreeMap::new();
            for (year, docs) in &corpora {
                let s = train_scorer(year.to_string(), docs.iter().map(String::as_str), ctx.tokenizer(*year)?, e.k)?;
                own.insert(*year, s);
            }
            own
        };
        let mut written = Vec::new();
        if let Some(t) = &terms_path {
            let terms = read_terms(t)?;
            let pit = dir.join("ppl_point_in_time.csv");
            write_ppl_csv(&ppl_rows(&terms, &scorers)?, &pit)?;
            let leaked = dir.join("ppl_cta.csv");
            write_ppl_csv(&ppl_rows(&terms, &cta)?, &leaked)?;
            let counts: BTreeMap<&str, BTreeMap<i32, u64>> = terms
                .iter()
                .map(|term| {
                    let docs = corpora.iter().flat_map(|(y, ds)| ds.iter().map(move |d| (*y, d.as_str())));
                    (term.as_str(), count_occurrences(term, docs, e.case_sensitive))
                })
                .collect();
            let counts_path = dir.join("counts.json");
            write_json(&counts_path, &counts)?;
            written.extend([pit, leaked, counts_path]);
        }
        if let Some(p) = &events_path {
            let events = read_events(p)?;
            let report = EventStudyReport {
                base_year,
                alpha,
                point_in_time: event_study(&events, &scorers, &e.offsets)?,
                cta: event_study(&events, &cta, &e.offsets)?,
            };
            let path = dir.join("event_study.json");
            write_json(&path, &report)?;
            written.push(path);
        }
        tracing::info!(stage = "eval", years = c.years.len(), base_year, alpha, "leakage reports written");
        Ok(written)
    })
}

/// Run every stage for every configured year, skipping up-to-date stages.
pub fn run_pipeline(loaded: &LoadedConfig) -> anyhow::Result<RunSummary> {
    let problems = diagnose(loaded);
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(ToString::to_string).collect();
        bail!("invalid config:\n  {}", list.join("\n  "));
    }
    let c = &loaded.config;
    let out = loaded.output_root();
    mkdir(&out)?;
    let shared = match &c.tokenizer {
        Some(p) => {
            let path = loaded.resolve(p);
            let tok = Tokenizer::load(&path)?;
            Some((path, Arc::new(tok)))
        }
        None => None,
    };
    let ctx = Ctx {
        loaded,
        out: out.clone(),
        shared,
    };
    let mut runner = StageRunner::new(out.clone(), loaded.base_dir.clone());
    news_stage(&ctx, &mut runner)?;
    for &year in &c.years {
        wiki_stage(&ctx, &mut runner, year)?;
        if let Some(t) = c.tokenizer_per_year {
            tokenizer_stage(&ctx, &mut runner, year, t)?;
        }
        assemble_stage(&ctx, &mut runner, year)?;
    }
    eval_stage(&ctx, &mut runner)?;
    let manifest = RunManifest {
        tool_version: chronoforge_core::TOOL_VERSION,
        years: &c.years,
        config: c,
        stage_records: &runner.records,
    };
    write_json(&out.join("run_manifest.json"), &manifest)?;
    Ok(RunSummary {
        stages: runner.stages.clone(),
        skipped: runner.skipped.clone(),
    })
}

/// [`run_pipeline`] plus the failure marker: written on error, removed on
/// success.
pub fn run_with_marker(loaded: &LoadedConfig) -> anyhow::Result<RunSummary> {
    let marker = loaded.output_root().join(FAILED_MARKER);
    match run_pipeline(loaded) {
        Ok(summary) => {
            if marker.exists() {
                std::fs::remove_file(&marker).with_context(|| format!("removing {}", marker.display()))?;
            }
            Ok(summary)
        }
        Err(e) => {
            if std::fs::create_dir_all(loaded.output_root()).is_ok() {
                let _ = std::fs::write(&marker, format!("{e:#}\n"));
            }
            Err(e)
        }
    }
}
