//! Deterministic synthetic fixtures: revision dumps, news directories and
//! yearly corpora with planted terms. Everything is a function of the seed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use quick_xml::escape::escape;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::Event;
use crate::record::{format_timestamp, DocRecord, Source};
use crate::wiki::RevisionRecord;

// No q, x or z, so planted terms built from those never occur by accident.
const ONSETS: &[&str] = &["b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A pronounceable lowercase word of 1-3 syllables.
pub fn word(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(1..=3);
    (0..n)
        .map(|_| {
            let o = ONSETS[rng.gen_range(0..ONSETS.len())];
            let v = VOWELS[rng.gen_range(0..VOWELS.len())];
            format!("{o}{v}")
        })
        .collect()
}

/// A fixed background vocabulary of `n` distinct words.
pub fn vocabulary(rng: &mut impl Rng, n: usize) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = word(rng);
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub fn sentence(rng: &mut impl Rng, vocab: &[String], words: usize) -> String {
    (0..words)
        .map(|_| vocab[rng.gen_range(0..vocab.len())].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// One page of a synthetic history dump. Consecutive revisions sharing a
/// title are written as one `<page>` element, so a title change yields
/// several consecutive elements with the same page id.
#[derive(Debug, Clone)]
pub struct SynthPage {
    pub page_id: u64,
    pub ns: i64,
    pub redirect: bool,
    pub revisions: Vec<RevisionRecord>,
}

impl SynthPage {
    pub fn renamed(&self) -> bool {
        self.revisions.windows(2).any(|w| w[0].title != w[1].title)
    }
}

#[derive(Debug, Clone)]
pub struct DumpParams {
    pub pages: usize,
    pub max_revisions: usize,
    pub first_year: i32,
    pub last_year: i32,
    /// Fraction of pages whose history starts in `last_year`.
    pub late_fraction: f64,
    pub rename_fraction: f64,
    pub redirect_fraction: f64,
    pub talk_fraction: f64,
    pub words: (usize, usize),
}

impl Default for DumpParams {
    fn default() -> Self {
        Self {
            pages: 50,
            max_revisions: 20,
            first_year: 2005,
            last_year: 2016,
            late_fraction: 0.1,
            rename_fraction: 0.2,
            redirect_fraction: 0.05,
            talk_fraction: 0.05,
            words: (20, 80),
        }
    }
}

fn random_instant(rng: &mut impl Rng, from: DateTime<Utc>, to: DateTime<Utc>) -> DateTime<Utc> {
    let span = (to - from).num_seconds().max(1);
    from + Duration::seconds(rng.gen_range(0..span))
}

fn year_start(year: i32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(year, 1, 1, 0, 0, 0).unwrap()
}

fn wikitext(rng: &mut impl Rng, vocab: &[String], title: &str, rev_id: u64, words: (usize, usize)) -> String {
    let n = rng.gen_range(words.0..=words.1);
    let body = sentence(rng, vocab, n);
    let link = &vocab[rng.gen_range(0..vocab.len())];
    format!(
        "'''{title}''' {body} [[{}|{link}]]{{{{cite|r={rev_id}}}}}<ref>src {rev_id}</ref>.\n\n== Notes ==\nrevision {rev_id}\n[[Category:Synthetic]]",
        capitalize(link)
    )
}

/// Generate page histories. Revision ids are unique and increase with
/// time, except that some revisions share a timestamp so ties are decided
/// by id.
pub fn synth_pages(seed: u64, p: &DumpParams) -> Vec<SynthPage> {
    let mut rng = rng(seed);
    let vocab = vocabulary(&mut rng, 200);
    let start = year_start(p.first_year);
    let end = year_start(p.last_year + 1) - Duration::seconds(1);
    let late = year_start(p.last_year);
    let mut pages = Vec::with_capacity(p.pages);
    let mut events: Vec<(DateTime<Utc>, usize, usize)> = Vec::new();
    for i in 0..p.pages {
        let page_id = 1000 + 7 * i as u64;
        let n = rng.gen_range(1..=p.max_revisions);
        let from = if rng.gen_bool(p.late_fraction) { late } else { start };
        let mut times: Vec<DateTime<Utc>> = (0..n).map(|_| random_instant(&mut rng, from, end)).collect();
        times.sort();
        for j in 1..n {
            if rng.gen_bool(0.1) {
                times[j] = times[j - 1];
            }
        }
        let base = capitalize(&vocab[i % vocab.len()]) + &format!(" {i}");
        let rename_at = if n > 1 && rng.gen_bool(p.rename_fraction) {
            Some(rng.gen_range(1..n))
        } else {
            None
        };
        let redirect = rng.gen_bool(p.redirect_fraction);
        let ns = if rng.gen_bool(p.talk_fraction) { 1 } else { 0 };
        let revisions = times
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let title = match rename_at {
                    Some(r) if j >= r => format!("{base} (moved)"),
                    _ => base.clone(),
                };
                events.push((*t, i, j));
                RevisionRecord {
                    page_id,
                    rev_id: 0,
                    timestamp: *t,
                    title,
                    wikitext: String::new(),
                }
            })
            .collect();
        pages.push(SynthPage {
            page_id,
            ns,
            redirect,
            revisions,
        });
    }
    // Global id order follows time; equal instants get consecutive ids.
    events.sort();
    for (k, (_, i, j)) in events.into_iter().enumerate() {
        let rev_id = 50_000 + 3 * k as u64;
        let page = &mut pages[i];
        let rev = &mut page.revisions[j];
        rev.rev_id = rev_id;
        rev.wikitext = if page.redirect {
            format!("#REDIRECT [[{}]]", capitalize(&vocab[j % vocab.len()]))
        } else {
            wikitext(&mut rng, &vocab, &rev.title, rev_id, p.words)
        };
    }
    pages
}

pub const DUMP_HEADER: &str = "<mediawiki xmlns=\"http://www.mediawiki.org/xml/export-0.10/\" version=\"0.10\" xml:lang=\"en\">\n  <siteinfo>\n    <sitename>Synthetic</sitename>\n  </siteinfo>\n";
pub const DUMP_FOOTER: &str = "</mediawiki>\n";

/// Serialize one page's history as one or more `<page>` elements.
pub fn write_page<W: Write>(w: &mut W, page: &SynthPage) -> std::io::Result<()> {
    let mut k = 0;
    while k < page.revisions.len() {
        let title = &page.revisions[k].title;
        writeln!(w, "  <page>")?;
        writeln!(w, "    <title>{}</title>", escape(title.as_str()))?;
        writeln!(w, "    <ns>{}</ns>", page.ns)?;
        writeln!(w, "    <id>{}</id>", page.page_id)?;
        if page.redirect {
            writeln!(w, "    <redirect title=\"Target\" />")?;
        }
        while k < page.revisions.len() && &page.revisions[k].title == title {
            let r = &page.revisions[k];
            writeln!(w, "    <revision>")?;
            writeln!(w, "      <id>{}</id>", r.rev_id)?;
            writeln!(w, "      <timestamp>{}</timestamp>", format_timestamp(&r.timestamp))?;
            writeln!(w, "      <contributor><username>Bot</username><id>{}</id></contributor>", r.rev_id % 97)?;
            writeln!(
                w,
                "      <text bytes=\"{}\" xml:space=\"preserve\">{}</text>",
                r.wikitext.len(),
                escape(r.wikitext.as_str())
            )?;
            writeln!(w, "    </revision>")?;
            k += 1;
        }
        writeln!(w, "  </page>")?;
    }
    Ok(())
}

pub fn write_dump<'a, W: Write>(w: &mut W, pages: impl IntoIterator<Item = &'a SynthPage>) -> std::io::Result<()> {
    w.write_all(DUMP_HEADER.as_bytes())?;
    for page in pages {
        write_page(w, page)?;
    }
    w.write_all(DUMP_FOOTER.as_bytes())
}

pub fn dump_xml(pages: &[SynthPage]) -> String {
    let mut out = Vec::new();
    write_dump(&mut out, pages).expect("writing to a Vec");
    String::from_utf8(out).expect("generated XML is UTF-8")
}

fn news_doc(rng: &mut impl Rng, vocab: &[String]) -> String {
    let sentences = rng.gen_range(1..=4);
    (0..sentences)
        .map(|_| {
            let n = rng.gen_range(4..=15);
            capitalize(&sentence(rng, vocab, n)) + "."
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Write `docs` documents for one year into `dir` as blank-line separated
/// text files. Returns the document texts in reading order.
pub fn write_news_year(dir: &Path, year: i32, docs: usize, seed: u64) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = rng(seed ^ (year as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let vocab = vocabulary(&mut rng, 150);
    let texts: Vec<String> = (0..docs).map(|_| news_doc(&mut rng, &vocab)).collect();
    for (f, chunk) in texts.chunks(docs.div_ceil(3).max(1)).enumerate() {
        let path = dir.join(format!("part-{f:03}.txt"));
        let body = chunk.join("\n\n") + "\n";
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(texts)
}

/// News records for dedup tests: `total` documents of which `duplicates`
/// repeat an earlier text, some with extra surrounding whitespace. Also
/// returns the ids the first-occurrence rule must keep.
pub fn planted_duplicates(total: usize, duplicates: usize, seed: u64) -> (Vec<DocRecord>, Vec<String>) {
    assert!(duplicates < total);
    let mut rng = rng(seed);
    let vocab = vocabulary(&mut rng, 300);
    let unique = total - duplicates;
    let mut texts: Vec<String> = Vec::with_capacity(total);
    let mut seen = std::collections::HashSet::new();
    while texts.len() < unique {
        let t = news_doc(&mut rng, &vocab);
        if seen.insert(t.clone()) {
            texts.push(t);
        }
    }
    let mut order: Vec<(String, bool)> = texts.iter().map(|t| (t.clone(), true)).collect();
    for _ in 0..duplicates {
        let src = rng.gen_range(0..unique);
        let pos_of_src = order.iter().position(|(t, first)| *first && *t == texts[src]).unwrap();
        let at = rng.gen_range(pos_of_src + 1..=order.len());
        let text = match rng.gen_range(0..3) {
            0 => format!("  {}\n", texts[src]),
            _ => texts[src].clone(),
        };
        order.insert(at, (text, false));
    }
    let mut keep = Vec::new();
    let docs = order
        .into_iter()
        .enumerate()
        .map(|(i, (text, first))| {
            let year = 2010 + (i % 5) as i32;
            let id = format!("news:{year}:planted.txt:{i}");
            if first {
                keep.push(id.clone());
            }
            DocRecord {
                id,
                source: Source::News,
                page_id: None,
                rev_id: None,
                timestamp: Utc.with_ymd_and_hms(year, 7, 2, 0, 0, 0).unwrap(),
                title: None,
                source_file: Some("planted.txt".into()),
                ordinal: Some(i as u64),
                text,
            }
        })
        .collect();
    (docs, keep)
}

/// Yearly corpora where `term` is absent before `emergence_year` and
/// mentioned `mentions` times per year from then on.
#[derive(Debug, Clone)]
pub struct DecadeFixture {
    pub term: String,
    pub emergence_year: i32,
    pub corpora: BTreeMap<i32, Vec<String>>,
}

pub fn decade_fixture(seed: u64, first_year: i32, emergence_index: usize, tokens_per_year: usize, mentions: usize) -> DecadeFixture {
    let mut rng = rng(seed);
    let vocab = vocabulary(&mut rng, 100);
    let term = "qazix".to_string();
    let emergence_year = first_year + emergence_index as i32 - 1;
    let mut corpora = BTreeMap::new();
    for y in 0..10 {
        let year = first_year + y;
        let mut docs: Vec<String> = Vec::new();
        let mut left = tokens_per_year;
        while left > 0 {
            let n = rng.gen_range(5..=40).min(left);
            docs.push(sentence(&mut rng, &vocab, n));
            left -= n;
        }
        if year >= emergence_year {
            for _ in 0..mentions {
                let d = rng.gen_range(0..docs.len());
                docs[d].push(' ');
                docs[d].push_str(&term);
            }
        }
        corpora.insert(year, docs);
    }
    DecadeFixture {
        term,
        emergence_year,
        corpora,
    }
}

/// Synthetic leaders whose names first appear in the year they take office.
#[derive(Debug, Clone)]
pub struct LeadersFixture {
    pub events: Vec<Event>,
    pub corpora: BTreeMap<i32, Vec<String>>,
}

fn leader_name(i: usize) -> String {
    // Tokens contain q/x/z so they never collide with background words.
    let first = ["qa", "qe", "qi", "qo", "qu"][i % 5];
    let last = ["zar", "zen", "zix", "zol", "zum"][(i / 5) % 5];
    format!("{first}x{i} {last}q{i}")
}

pub fn leaders_fixture(seed: u64, leaders: usize, first_year: i32, last_year: i32, tokens_per_year: usize) -> LeadersFixture {
    let mut rng = rng(seed);
    let vocab = vocabulary(&mut rng, 120);
    let events: Vec<Event> = (0..leaders)
        .map(|i| Event {
            term: leader_name(i),
            event_year: rng.gen_range(first_year + 3..=last_year - 3),
        })
        .collect();
    let mut corpora = BTreeMap::new();
    for year in first_year..=last_year {
        let mut docs = Vec::new();
        let mut left = tokens_per_year;
        while left > 0 {
            let n = rng.gen_range(5..=40).min(left);
            docs.push(sentence(&mut rng, &vocab, n));
            left -= n;
        }
        for ev in events.iter().filter(|e| e.event_year <= year) {
            let mentions = rng.gen_range(3..=8);
            for _ in 0..mentions {
                let d = rng.gen_range(0..docs.len());
                docs[d] = format!("{} {}", docs[d], ev.term);
            }
        }
        corpora.insert(year, docs);
    }
    LeadersFixture { events, corpora }
}

/// Documents with a known number of planted `term` occurrences per year.
pub fn planted_occurrences(seed: u64, docs: usize, term: &str, years: &[i32]) -> (Vec<(i32, String)>, BTreeMap<i32, u64>) {
    let mut rng = rng(seed);
    let vocab = vocabulary(&mut rng, 80);
    let mut truth: BTreeMap<i32, u64> = years.iter().map(|y| (*y, 0)).collect();
    let out = (0..docs)
        .map(|_| {
            let year = *years.choose(&mut rng).expect("years non-empty");
            let mut words: Vec<String> = (0..rng.gen_range(5..30))
                .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
                .collect();
            let k = rng.gen_range(0..4);
            for _ in 0..k {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, term.to_string());
            }
            *truth.get_mut(&year).unwrap() += k as u64;
            (year, words.join(" "))
        })
        .collect();
    (out, truth)
}

/// Paths of an on-disk multi-year pipeline fixture.
#[derive(Debug, Clone)]
pub struct PipelineFixture {
    pub root: PathBuf,
    pub wiki_dump: PathBuf,
    pub news_root: PathBuf,
    pub vital_dir: PathBuf,
}

/// Write a dump, yearly news directories (from `years[0] - 4`) and vital
/// lists for `years`. A few news texts repeat across years.
pub fn write_pipeline_fixture(root: &Path, years: &[i32], seed: u64) -> Result<PipelineFixture> {
    let first = *years.first().ok_or(Error::Empty("fixture years"))?;
    let last = *years.last().unwrap();
    let wiki_dir = root.join("wiki");
    let news_root = root.join("news");
    let vital_dir = root.join("vital");
    for d in [&wiki_dir, &news_root, &vital_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d.as_path(), e))?;
    }
    let params = DumpParams {
        pages: 120,
        max_revisions: 6,
        first_year: first - 3,
        last_year: last + 1,
        late_fraction: 0.05,
        rename_fraction: 0.1,
        redirect_fraction: 0.03,
        talk_fraction: 0.03,
        words: (15, 60),
    };
    let pages = synth_pages(seed, &params);
    let wiki_dump = wiki_dir.join("history.xml");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&wiki_dump).map_err(|e| Error::io(&wiki_dump, e))?);
    write_dump(&mut f, &pages).map_err(|e| Error::io(&wiki_dump, e))?;
    f.flush().map_err(|e| Error::io(&wiki_dump, e))?;

    let mut echo: Option<String> = None;
    for year in first - 4..=last {
        let dir = news_root.join(year.to_string());
        let texts = write_news_year(&dir, year, 60, seed)?;
        // Repeat one earlier text verbatim to exercise cross-year dedup.
        if let Some(prev) = echo.take() {
            let path = dir.join("part-999.txt");
            std::fs::write(&path, prev + "\n").map_err(|e| Error::io(&path, e))?;
        }
        echo = texts.first().cloned();
    }

    for &year in years {
        let cutoff = crate::wiki::cutoff_instant(NaiveDate::from_ymd_opt(year, 12, 31).unwrap());
        let vital: Vec<String> = pages
            .iter()
            .filter(|p| p.ns == 0 && !p.redirect && p.revisions[0].timestamp <= cutoff)
            .take(3)
            .map(|p| p.page_id.to_string())
            .collect();
        let path = vital_dir.join(format!("vital_{year}.txt"));
        std::fs::write(&path, vital.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(PipelineFixture {
        root: root.to_path_buf(),
        wiki_dump,
        news_root,
        vital_dir,
    })
}
