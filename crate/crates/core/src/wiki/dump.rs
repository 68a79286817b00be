//! Streaming reader for MediaWiki `pages-meta-history` XML exports.
//!
//! Only the best revision seen so far is retained for each page, so memory
//! is bounded by the largest revision text rather than by the dump size.
//! A page whose revisions are split over several consecutive `<page>`
//! elements sharing one `<id>` (the shape produced by title moves in
//! split exports) is merged back into a single page; the chosen revision
//! carries the title of the element it came from.

use std::collections::BTreeSet;
use std::io::BufRead;

use chrono::{DateTime, Utc};
use quick_xml::events::Event;
use quick_xml::Reader;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::clean::{clean_with_report, CleanReport};
use super::{RevisionRecord, SnapshotPage};
use crate::error::{Error, Result};

/// Default cap on a single `<text>` element, in bytes.
pub const DEFAULT_MAX_TEXT_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct DumpOptions {
    pub cutoff: DateTime<Utc>,
    /// Namespaces to keep; empty keeps all.
    pub namespaces: BTreeSet<i64>,
    pub max_text_bytes: usize,
    pub exclude_redirects: bool,
    /// Pages cleaned together on the rayon pool. 1 cleans inline.
    pub clean_batch: usize,
}

impl DumpOptions {
    pub fn new(cutoff: DateTime<Utc>) -> Self {
        Self {
            cutoff,
            namespaces: BTreeSet::from([0]),
            max_text_bytes: DEFAULT_MAX_TEXT_BYTES,
            exclude_redirects: true,
            clean_batch: 64,
        }
    }
}

/// Counters for one pass over a dump.
#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub pages_seen: u64,
    pub revisions_seen: u64,
    pub emitted: u64,
    pub after_cutoff: u64,
    pub namespace_filtered: u64,
    pub redirects: u64,
    pub malformed_timestamp: u64,
    pub oversized: u64,
    /// Pages whose wikitext contained unbalanced constructs.
    pub flagged_pages: Vec<u64>,
}

/// A page's chosen revision before cleaning.
#[derive(Debug, Clone)]
struct RawPage {
    page_id: u64,
    rev_id: u64,
    timestamp: DateTime<Utc>,
    title: String,
    wikitext: String,
}

#[derive(Debug, Default)]
struct PageBlock {
    title: String,
    ns: Option<i64>,
    id: Option<u64>,
    best: Option<RevisionRecord>,
    malformed: bool,
    oversized: bool,
}

#[derive(Debug, Default)]
struct RevisionBuf {
    id: Option<u64>,
    timestamp: String,
    text: String,
    oversized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Title,
    Ns,
    PageId,
    RevId,
    Timestamp,
    Text,
}

/// Pull parser yielding one raw page per qualifying page.
struct RawPages<R: BufRead> {
    reader: Reader<R>,
    buf: Vec<u8>,
    opts: DumpOptions,
    stack: Vec<Vec<u8>>,
    field: Option<Field>,
    scratch: String,
    page: Option<PageBlock>,
    revision: Option<RevisionBuf>,
    pending: Option<PageBlock>,
    stats: IngestStats,
    done: bool,
}

fn is_newer(a: &RevisionRecord, b: &RevisionRecord) -> bool {
    (a.timestamp, a.rev_id) > (b.timestamp, b.rev_id)
}

/// Parse a MediaWiki timestamp (RFC 3339, normally `YYYY-MM-DDThh:mm:ssZ`).
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

impl<R: BufRead> RawPages<R> {
    fn new(input: R, opts: DumpOptions) -> Self {
        let mut reader = Reader::from_reader(input);
        reader.config_mut().trim_text(false);
        Self {
            reader,
            buf: Vec::new(),
            opts,
            stack: Vec::new(),
            field: None,
            scratch: String::new(),
            page: None,
            revision: None,
            pending: None,
            stats: IngestStats::default(),
            done: false,
        }
    }

    fn offset(&self) -> u64 {
        self.reader.buffer_position()
    }

    fn structure(&self, message: impl Into<String>) -> Error {
        Error::Xml {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn wants_namespace(&self, ns: Option<i64>) -> bool {
        match ns {
            Some(ns) => self.opts.namespaces.is_empty() || self.opts.namespaces.contains(&ns),
            None => true,
        }
    }

    fn field_for(&self, name: &[u8]) -> Option<Field> {
        let parent = self.stack.last().map(Vec::as_slice);
        match (parent, name) {
            (Some(b"page"), b"title") => Some(Field::Title),
            (Some(b"page"), b"ns") => Some(Field::Ns),
            (Some(b"page"), b"id") => Some(Field::PageId),
            (Some(b"revision"), b"id") => Some(Field::RevId),
            (Some(b"revision"), b"timestamp") => Some(Field::Timestamp),
            (Some(b"revision"), b"text") => Some(Field::Text),
            _ => None,
        }
    }

    fn push_text(&mut self, text: &str) {
        match self.field {
            Some(Field::Text) => {
                let cap = self.opts.max_text_bytes;
                let skip_ns = !self.wants_namespace(self.page.as_ref().and_then(|p| p.ns));
                if let Some(rev) = self.revision.as_mut() {
                    if rev.oversized || skip_ns {
                        return;
                    }
                    if rev.text.len() + text.len() > cap {
                        rev.oversized = true;
                        rev.text = String::new();
                    } else {
                        rev.text.push_str(text);
                    }
                }
            }
            Some(_) => self.scratch.push_str(text),
            None => {}
        }
    }

    fn end_field(&mut self, field: Field) -> Result<()> {
        let value = std::mem::take(&mut self.scratch);
        let value = value.trim();
        match field {
            Field::Title => {
                if let Some(p) = self.page.as_mut() {
                    p.title = value.to_string();
                }
            }
            Field::Ns => {
                let ns = value
                    .parse()
                    .map_err(|_| self.structure(format!("invalid <ns> value {value:?}")))?;
                if let Some(p) = self.page.as_mut() {
                    p.ns = Some(ns);
                }
            }
            Field::PageId => {
                let id = value
                    .parse()
                    .map_err(|_| self.structure(format!("invalid page <id> {value:?}")))?;
                if let Some(p) = self.page.as_mut() {
                    p.id = Some(id);
                }
            }
            Field::RevId => {
                let id = value
                    .parse()
                    .map_err(|_| self.structure(format!("invalid revision <id> {value:?}")))?;
                if let Some(r) = self.revision.as_mut() {
                    r.id = Some(id);
                }
            }
            Field::Timestamp => {
                if let Some(r) = self.revision.as_mut() {
                    r.timestamp = value.to_string();
                }
            }
            Field::Text => {}
        }
        Ok(())
    }

    fn end_revision(&mut self) -> Result<()> {
        let rev = self.revision.take().unwrap_or_default();
        self.stats.revisions_seen += 1;
        let rev_id = rev
            .id
            .ok_or_else(|| self.structure("<revision> without <id>"))?;
        let page = self
            .page
            .as_mut()
            .ok_or_else(|| Error::Xml { offset: 0, message: "<revision> outside <page>".into() })?;
        let Some(timestamp) = parse_timestamp(&rev.timestamp) else {
            tracing::warn!(
                page_id = page.id,
                rev_id,
                timestamp = %rev.timestamp,
                "malformed revision timestamp; page skipped"
            );
            page.malformed = true;
            return Ok(());
        };
        if timestamp > self.opts.cutoff {
            return Ok(());
        }
        let candidate = RevisionRecord {
            page_id: page.id.unwrap_or_default(),
            rev_id,
            timestamp,
            title: page.title.clone(),
            wikitext: rev.text,
        };
        let better = page.best.as_ref().is_none_or(|b| is_newer(&candidate, b));
        if better {
            page.oversized = rev.oversized;
            page.best = Some(candidate);
        }
        Ok(())
    }

    /// Fold a finished `<page>` into the pending page, returning a page that
    /// is now complete, if any.
    fn end_page(&mut self) -> Result<Option<PageBlock>> {
        let mut block = self.page.take().unwrap_or_default();
        let id = block
            .id
            .ok_or_else(|| self.structure("<page> without <id>"))?;
        if let Some(best) = block.best.as_mut() {
            best.page_id = id;
        }
        match self.pending.take() {
            Some(mut prev) if prev.id == Some(id) => {
                prev.malformed |= block.malformed;
                let replace = match (&prev.best, &block.best) {
                    (_, None) => false,
                    (None, Some(_)) => true,
                    (Some(a), Some(b)) => is_newer(b, a),
                };
                if replace {
                    prev.best = block.best;
                    prev.oversized = block.oversized;
                    prev.ns = block.ns.or(prev.ns);
                    prev.title = block.title;
                }
                self.pending = Some(prev);
                Ok(None)
            }
            prev => {
                self.pending = Some(block);
                Ok(prev)
            }
        }
    }

    /// Apply the page-level filters, updating counters.
    fn finish(&mut self, block: PageBlock) -> Option<RawPage> {
        self.stats.pages_seen += 1;
        let page_id = block.id.unwrap_or_default();
        if block.malformed {
            self.stats.malformed_timestamp += 1;
            return None;
        }
        if !self.wants_namespace(block.ns) {
            self.stats.namespace_filtered += 1;
            return None;
        }
        let Some(best) = block.best else {
            self.stats.after_cutoff += 1;
            return None;
        };
        if block.oversized {
            tracing::warn!(page_id, "revision text exceeds cap; page skipped");
            self.stats.oversized += 1;
            return None;
        }
        if self.opts.exclude_redirects && is_redirect(&best.wikitext) {
            self.stats.redirects += 1;
            return None;
        }
        Some(RawPage {
            page_id,
            rev_id: best.rev_id,
            timestamp: best.timestamp,
            title: best.title,
            wikitext: best.wikitext,
        })
    }

    fn next_block(&mut self) -> Result<Option<PageBlock>> {
        loop {
            if self.done {
                return Ok(self.pending.take());
            }
            self.buf.clear();
            let event = self
                .reader
                .read_event_into(&mut self.buf)
                .map_err(|e| Error::Xml {
                    offset: self.reader.error_position(),
                    message: e.to_string(),
                })?;
            match event {
                Event::Start(e) => {
                    let name = e.local_name().as_ref().to_vec();
                    self.field = self.field_for(&name);
                    match name.as_slice() {
                        b"page" => self.page = Some(PageBlock::default()),
                        b"revision" => {
                            if self.page.is_none() {
                                return Err(self.structure("<revision> outside <page>"));
                            }
                            self.revision = Some(RevisionBuf::default());
                        }
                        _ => {}
                    }
                    self.stack.push(name);
                }
                Event::Empty(e) => {
                    // <text/> or <text deleted="deleted"/> leaves an empty body
                    let _ = e;
                }
                Event::Text(t) => {
                    if self.field.is_some() {
                        match t.unescape().map(|c| c.into_owned()) {
                            Ok(text) => self.push_text(&text),
                            Err(e) => return Err(self.structure(e.to_string())),
                        }
                    }
                }
                Event::CData(t) => {
                    if self.field.is_some() {
                        let raw = t.into_inner();
                        let text = String::from_utf8_lossy(&raw).into_owned();
                        self.push_text(&text);
                    }
                }
                Event::End(e) => {
                    let name = e.local_name().as_ref().to_vec();
                    self.stack.pop();
                    if let Some(field) = self.field.take() {
                        self.end_field(field)?;
                    }
                    match name.as_slice() {
                        b"revision" => self.end_revision()?,
                        b"page" => {
                            if let Some(done) = self.end_page()? {
                                return Ok(Some(done));
                            }
                        }
                        _ => {}
                    }
                }
                Event::Eof => {
                    if !self.stack.is_empty() {
                        return Err(self.structure("unexpected end of input inside an element"));
                    }
                    self.done = true;
                }
                _ => {}
            }
        }
    }

    fn next_raw(&mut self) -> Option<Result<RawPage>> {
        loop {
            match self.next_block() {
                Err(e) => {
                    self.done = true;
                    self.pending = None;
                    return Some(Err(e));
                }
                Ok(None) => return None,
                Ok(Some(block)) => {
                    if let Some(raw) = self.finish(block) {
                        return Some(Ok(raw));
                    }
                }
            }
        }
    }
}

/// Whether wikitext is a redirect directive.
pub fn is_redirect(wikitext: &str) -> bool {
    let head = wikitext.trim_start();
    head.len() >= 9 && head.as_bytes()[..9].eq_ignore_ascii_case(b"#redirect")
}

/// Pages as they stood at the cutoff, in dump order.
pub struct SnapshotStream<R: BufRead> {
    raw: RawPages<R>,
    ready: std::collections::VecDeque<SnapshotPage>,
    failed: Option<Error>,
}

impl<R: BufRead> SnapshotStream<R> {
    pub fn new(input: R, opts: DumpOptions) -> Self {
        Self {
            raw: RawPages::new(input, opts),
            ready: Default::default(),
            failed: None,
        }
    }

    pub fn stats(&self) -> &IngestStats {
        &self.raw.stats
    }

    fn refill(&mut self) {
        let batch = self.raw.opts.clean_batch.max(1);
        let mut raws = Vec::with_capacity(batch);
        while raws.len() < batch {
            match self.raw.next_raw() {
                Some(Ok(raw)) => raws.push(raw),
                Some(Err(e)) => {
                    self.failed = Some(e);
                    break;
                }
                None => break,
            }
        }
        let cleaned: Vec<(SnapshotPage, CleanReport)> = if raws.len() > 1 {
            raws.into_par_iter().map(clean_raw).collect()
        } else {
            raws.into_iter().map(clean_raw).collect()
        };
        for (page, report) in cleaned {
            if report.is_flagged() {
                self.raw.stats.flagged_pages.push(page.page_id);
            }
            self.raw.stats.emitted += 1;
            self.ready.push_back(page);
        }
    }
}

fn clean_raw(raw: RawPage) -> (SnapshotPage, CleanReport) {
    let (clean_text, report) = clean_with_report(&raw.wikitext);
    (
        SnapshotPage {
            page_id: raw.page_id,
            rev_id: raw.rev_id,
            timestamp: raw.timestamp,
            title: raw.title,
            clean_text,
        },
        report,
    )
}

impl<R: BufRead> Iterator for SnapshotStream<R> {
    type Item = Result<SnapshotPage>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.ready.is_empty() && self.failed.is_none() {
            self.refill();
        }
        if let Some(page) = self.ready.pop_front() {
            return Some(Ok(page));
        }
        self.failed.take().map(Err)
    }
}

/// Stream a dump, yielding one snapshot per page with a qualifying revision.
pub fn stream_dump<R: BufRead>(input: R, opts: DumpOptions) -> SnapshotStream<R> {
    SnapshotStream::new(input, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn cutoff_2020() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 12, 31, 23, 59, 59).unwrap()
    }

    fn collect(xml: &str, opts: DumpOptions) -> (Vec<SnapshotPage>, IngestStats) {
        let mut stream = stream_dump(xml.as_bytes(), opts);
        let pages = stream.by_ref().collect::<Result<Vec<_>>>().unwrap();
        (pages, stream.stats().clone())
    }

    #[test]
    fn empty_body_yields_nothing() {
        let (pages, stats) = collect(
            "<mediawiki xmlns=\"http://www.mediawiki.org/xml/export-0.11/\"></mediawiki>",
            DumpOptions::new(cutoff_2020()),
        );
        assert!(pages.is_empty());
        assert_eq!(stats.pages_seen, 0);
    }

    #[test]
    fn template_namespace_filtered() {
        let xml = r#"<mediawiki><page><title>Template:X</title><ns>10</ns><id>5</id>
            <revision><id>1</id><timestamp>2010-01-01T00:00:00Z</timestamp><text>{{x}}</text></revision>
            </page></mediawiki>"#;
        let (pages, stats) = collect(xml, DumpOptions::new(cutoff_2020()));
        assert!(pages.is_empty());
        assert_eq!(stats.namespace_filtered, 1);
    }

    #[test]
    fn malformed_timestamp_skips_page_only() {
        let xml = r#"<mediawiki>
            <page><title>A</title><ns>0</ns><id>1</id>
              <revision><id>1</id><timestamp>yesterday</timestamp><text>a</text></revision></page>
            <page><title>B</title><ns>0</ns><id>2</id>
              <revision><id>2</id><timestamp>2011-01-01T00:00:00Z</timestamp><text>b</text></revision></page>
            </mediawiki>"#;
        let (pages, stats) = collect(xml, DumpOptions::new(cutoff_2020()));
        assert_eq!(pages.len(), 1);
        assert_eq!(pages[0].page_id, 2);
        assert_eq!(stats.malformed_timestamp, 1);
    }

    #[test]
    fn redirects_excluded() {
        let xml = r#"<mediawiki><page><title>R</title><ns>0</ns><id>3</id>
            <revision><id>9</id><timestamp>2012-01-01T00:00:00Z</timestamp><text>#REDIRECT [[Target]]</text></revision>
            </page></mediawiki>"#;
        let (pages, stats) = collect(xml, DumpOptions::new(cutoff_2020()));
        assert!(pages.is_empty());
        assert_eq!(stats.redirects, 1);
    }

    #[test]
    fn oversized_text_skips_page() {
        let xml = r#"<mediawiki><page><title>Big</title><ns>0</ns><id>4</id>
            <revision><id>1</id><timestamp>2012-01-01T00:00:00Z</timestamp><text>0123456789abcdef</text></revision>
            </page></mediawiki>"#;
        let mut opts = DumpOptions::new(cutoff_2020());
        opts.max_text_bytes = 8;
        let (pages, stats) = collect(xml, opts);
        assert!(pages.is_empty());
        assert_eq!(stats.oversized, 1);
    }

    #[test]
    fn broken_nesting_is_fatal_with_offset() {
        let xml = "<mediawiki><page><title>A</title></revision></mediawiki>";
        let mut stream = stream_dump(xml.as_bytes(), DumpOptions::new(cutoff_2020()));
        match stream.next() {
            Some(Err(Error::Xml { offset, .. })) => assert!(offset > 0),
            other => panic!("expected XML error, got {other:?}"),
        }
        assert!(stream.next().is_none());
    }

    #[test]
    fn truncated_input_is_fatal() {
        let xml = "<mediawiki><page><title>A</title><ns>0</ns><id>1</id>";
        let result: Result<Vec<_>> =
            stream_dump(xml.as_bytes(), DumpOptions::new(cutoff_2020())).collect();
        assert!(matches!(result, Err(Error::Xml { .. })));
    }

    #[test]
    fn entities_are_unescaped_before_cleaning() {
        let xml = r#"<mediawiki><page><title>A &amp; B</title><ns>0</ns><id>1</id>
            <revision><id>1</id><timestamp>2012-01-01T00:00:00Z</timestamp>
            <text>Tom &amp; Jerry &lt;ref&gt;gone&lt;/ref&gt;</text></revision></page></mediawiki>"#;
        let (pages, _) = collect(xml, DumpOptions::new(cutoff_2020()));
        assert_eq!(pages[0].title, "A & B");
        assert_eq!(pages[0].clean_text, "Tom & Jerry");
    }

    #[test]
    fn contributor_id_does_not_clobber_revision_id() {
        let xml = r#"<mediawiki><page><title>A</title><ns>0</ns><id>1</id>
            <revision><id>77</id><timestamp>2012-01-01T00:00:00Z</timestamp>
            <contributor><username>u</username><id>5</id></contributor><text>t</text></revision>
            </page></mediawiki>"#;
        let (pages, _) = collect(xml, DumpOptions::new(cutoff_2020()));
        assert_eq!(pages[0].rev_id, 77);
    }

    #[test]
    fn redirect_detection() {
        assert!(is_redirect("  #redirect [[X]]"));
        assert!(is_redirect("#REDIRECT[[X]]"));
        assert!(!is_redirect("Redirected text"));
    }
}
